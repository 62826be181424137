//! Corpus evaluation: BLEU, PARENT, hallucination rate, mean length, Flesch.

pub mod bleu;
pub mod parent;
pub mod readability;

pub use bleu::{bleu, bleu_with, Smoothing};
pub use parent::{parent, parent_instance, ParentScores, DEFAULT_LAMBDA_MIXING, DEFAULT_SMOOTHING};
pub use readability::{flesch, mean_length, syllables};

use crate::cooccur::CooccurrenceIndex;
use crate::corpus::{EntityTable, Instance, ParsedSentence};
use crate::labeler::{label_instance, LabelerConfig};
use serde::{Deserialize, Serialize};

/// One candidate/reference pair plus the instance's table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalRecord {
    pub id: String,
    pub candidate: Vec<String>,
    pub reference: Vec<String>,
    pub table: EntityTable,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no outputs to evaluate")]
    NoOutputs,
    #[error("no countable words in the outputs")]
    NoWords,
}

/// Fraction of candidate tokens labeled as hallucinated (label 0).
///
/// Candidates must arrive parsed (part of speech + dependencies) by the same
/// external pipeline that parsed the training references; the labeler is run
/// against each candidate's table with the supplied statistics.
pub fn hallucination_rate(
    candidates: &[(EntityTable, ParsedSentence)],
    index: &CooccurrenceIndex,
    cfg: &LabelerConfig,
) -> Result<f64, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::NoOutputs);
    }
    let mut tokens = 0u64;
    let mut hallucinated = 0u64;
    for (i, (table, sentence)) in candidates.iter().enumerate() {
        let inst = Instance {
            id: format!("candidate-{i}"),
            table: table.clone(),
            reference: sentence.clone(),
        };
        let labeled = label_instance(&inst, index, cfg);
        tokens += labeled.annotations.len() as u64;
        hallucinated += labeled.annotations.iter().filter(|a| !a.label).count() as u64;
    }
    if tokens == 0 {
        return Err(MetricsError::NoOutputs);
    }
    Ok(hallucinated as f64 / tokens as f64)
}

/// The full metric battery for one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub parent_precision: f64,
    pub parent_recall: f64,
    pub parent_f: f64,
    pub hallucination_rate: f64,
    pub mean_length: f64,
    pub flesch: f64,
}

impl MetricReport {
    /// Flat `name<TAB>value` rendering, one metric per line.
    pub fn to_tsv(&self) -> String {
        let rows = [
            ("bleu", self.bleu),
            ("parent_precision", self.parent_precision),
            ("parent_recall", self.parent_recall),
            ("parent_f", self.parent_f),
            ("hallucination_rate", self.hallucination_rate),
            ("mean_length", self.mean_length),
            ("flesch", self.flesch),
        ];
        let mut out = String::new();
        for (name, value) in rows {
            out.push_str(&format!("{name}\t{value:.6}\n"));
        }
        out
    }
}

/// Assemble a [`MetricReport`] from evaluation records plus parsed candidates
/// for the hallucination rate.
pub fn evaluate(
    records: &[EvalRecord],
    parsed_candidates: &[(EntityTable, ParsedSentence)],
    index: &CooccurrenceIndex,
    labeler_cfg: &LabelerConfig,
    lambda_mixing: f64,
    smoothing: f64,
) -> Result<MetricReport, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::NoOutputs);
    }
    let outputs: Vec<Vec<String>> = records.iter().map(|r| r.candidate.clone()).collect();
    let parent_scores = parent(records, lambda_mixing, smoothing);
    Ok(MetricReport {
        bleu: bleu(records),
        parent_precision: parent_scores.precision,
        parent_recall: parent_scores.recall,
        parent_f: parent_scores.f_score,
        hallucination_rate: hallucination_rate(parsed_candidates, index, labeler_cfg)?,
        mean_length: mean_length(&outputs)?,
        flesch: flesch(&outputs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{KeyValuePair, Token, Upos};
    use crate::labeler::identity_reparse;

    fn parsed(tokens: &[(&str, Upos)]) -> ParsedSentence {
        let toks: Vec<Token> =
            tokens.iter().map(|(s, p)| Token::new(*s, *p, 0, "root")).collect();
        identity_reparse(&toks)
    }

    #[test]
    fn fully_supported_candidates_have_rate_zero() {
        let table = EntityTable::new(vec![KeyValuePair::new("name", &["odo"])]);
        let candidates =
            vec![(table, parsed(&[("odo", Upos::Propn)]))];
        let idx = CooccurrenceIndex::from_counts([], "t");
        let rate = hallucination_rate(&candidates, &idx, &LabelerConfig::default()).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn fully_unsupported_candidates_have_rate_one() {
        let table = EntityTable::new(vec![KeyValuePair::new("name", &["odo"])]);
        let candidates = vec![(table, parsed(&[("zebra", Upos::Noun), ("dance", Upos::Noun)]))];
        let idx = CooccurrenceIndex::from_counts([], "t");
        let rate = hallucination_rate(&candidates, &idx, &LabelerConfig::default()).unwrap();
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn empty_candidate_set_is_an_error() {
        let idx = CooccurrenceIndex::from_counts([], "t");
        assert!(hallucination_rate(&[], &idx, &LabelerConfig::default()).is_err());
    }

    #[test]
    fn report_tsv_has_one_row_per_metric() {
        let report = MetricReport {
            bleu: 0.5,
            parent_precision: 0.25,
            parent_recall: 0.75,
            parent_f: 0.375,
            hallucination_rate: 0.1,
            mean_length: 14.0,
            flesch: 80.0,
        };
        let tsv = report.to_tsv();
        assert_eq!(tsv.lines().count(), 7);
        assert!(tsv.contains("parent_f\t0.375000"));
        // JSON form round-trips.
        let json = serde_json::to_string(&report).unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }
}
