//! Multi-branch sequence-to-sequence decoder over linearized tables.
//!
//! The encoder is a two-layer bidirectional LSTM over source units (one unit
//! per table value token, embedded as word + key + position). The decoder
//! runs several parallel two-layer LSTM branches whose top hidden states are
//! mixed by per-step weights; branch 0 is trained on in-table ("content")
//! steps, branch 1 on unsupported ("hallucination") steps, and branch 2 on
//! every step ("fluency"). A copy gate mixes the vocabulary softmax with
//! attention mass over source units, extending the output space to
//! out-of-vocabulary source words. At generation time the caller chooses the
//! mixing weights, which steers how much unsupported content the model emits.

mod beam;
mod checkpoint;
mod gradcheck;
mod model;
pub(crate) mod tape;
mod train;

pub use beam::{generate, GenerateOptions, Generation};
pub use checkpoint::{load_model, save_model};
pub use gradcheck::{
    analytic_gradients, check_gradients, numeric_gradient, relative_error, GradCheckReport,
    TensorCheck, DEFAULT_STEP,
};
pub use tape::Gradients;
pub use model::{
    linearize_table, training_weights, BranchWeights, DecoderState, Distribution, EncoderRun,
    ModelConfig, MultiBranchModel, SourceUnit, StepOptions, StepOutput, Vocab, BOS_ID, EOS_ID,
    UNK_ID,
};
pub use train::{train, LabeledExample, TrainOutcome, TrainSchedule};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MbdError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("invalid branch weights: {0}")]
    Weights(String),
    #[error("bad example {id}: {detail}")]
    Example { id: String, detail: String },
    #[error("training produced a non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("no training examples")]
    NoExamples,
    #[error("checkpoint i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    CheckpointFormat(String),
    #[error("checkpoint checksum mismatch")]
    CheckpointChecksum,
}
