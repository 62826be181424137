//! Core library for the `d2t` table-to-text toolkit.
//!
//! The pipeline turns tables of key/value pairs into text while keeping track
//! of which reference words are actually supported by the table:
//!
//! * [`corpus`] — instance types, the canonical on-disk format, validation,
//!   and a CoNLL-U import adapter for externally parsed references.
//! * [`cooccur`] — instance-level word/pair co-occurrence counts gathered
//!   from a training split, with a deterministic file format.
//! * [`labeler`] — word-level alignment scores and binary labels computed
//!   from table membership, co-occurrence statistics, and the dependency
//!   structure of the reference sentence.
//! * [`metrics`] — corpus evaluation: BLEU, PARENT, hallucination rate,
//!   mean length, and a Flesch readability score.
//! * [`mbd`] — a multi-branch encoder-decoder whose branches are blended by
//!   per-step weights, with training, beam-search generation, checkpoints,
//!   and finite-difference gradient checking.
//! * [`synth`] — deterministic synthetic corpora with planted hallucinated
//!   spans, used by integration tests and smoke runs.
//! * [`config`] — `key = value` configuration files shared by the labeler,
//!   the model, and the training schedule.

pub mod config;
pub mod cooccur;
pub mod corpus;
pub mod labeler;
pub mod mbd;
pub mod metrics;
pub mod synth;
pub mod util;
