//! PARENT: precision and recall of n-grams judged against both the reference
//! and the table.
//!
//! The entailment probability of an n-gram is the fraction of its tokens
//! appearing among the table's value tokens (the word-overlap model). An
//! n-gram in the candidate counts toward precision if it occurs in the
//! reference or, failing that, in proportion to its entailment. Recall mixes
//! two parts geometrically: entailment-weighted n-gram recall against the
//! reference, and per-pair mention recall against the table (longest common
//! subsequence between a pair's value and the candidate). Corpus precision
//! and recall are means over instances; the corpus F-score is their harmonic
//! mean.

use super::EvalRecord;
use crate::corpus::EntityTable;
use std::collections::{HashMap, HashSet};

pub const DEFAULT_LAMBDA_MIXING: f64 = 0.5;
pub const DEFAULT_SMOOTHING: f64 = 1e-5;
const MAX_ORDER: usize = 4;

/// Corpus-level PARENT scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParentScores {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts: HashMap<&[String], u64> = HashMap::new();
    if tokens.len() >= n {
        for i in 0..=tokens.len() - n {
            *counts.entry(&tokens[i..i + n]).or_insert(0) += 1;
        }
    }
    counts
}

fn entailment(gram: &[String], lexicon: &HashSet<&str>) -> f64 {
    let hits = gram.iter().filter(|tok| lexicon.contains(tok.as_str())).count();
    hits as f64 / gram.len() as f64
}

/// Length of the longest common subsequence of two token sequences.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            cur[j] = if a[i - 1] == b[j - 1] {
                prev[j - 1] + 1
            } else {
                prev[j].max(cur[j - 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn table_mention_recall(table: &EntityTable, candidate: &[String]) -> f64 {
    if table.pairs.is_empty() {
        return 1.0;
    }
    let total: f64 = table
        .pairs
        .iter()
        .map(|pair| lcs_len(&pair.value, candidate) as f64 / pair.value.len() as f64)
        .sum();
    total / table.pairs.len() as f64
}

/// Instance-level PARENT (precision, recall, F).
pub fn parent_instance(record: &EvalRecord, lambda_mixing: f64, smoothing: f64) -> ParentScores {
    let lexicon: HashSet<&str> = record
        .table
        .pairs
        .iter()
        .flat_map(|p| p.value.iter().map(String::as_str))
        .collect();

    let mut log_prec_sum = 0.0;
    let mut log_rec_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let cand = ngram_counts(&record.candidate, n);
        let reference = ngram_counts(&record.reference, n);

        // Precision: each candidate occurrence is correct with probability
        // (in the reference) + (not in the reference) * entailed.
        let mut num = 0.0;
        let mut den = 0.0;
        for (gram, &count) in &cand {
            let ref_count = reference.get(gram).copied().unwrap_or(0);
            let in_ref = (ref_count as f64 / count as f64).min(1.0);
            num += count as f64 * (in_ref + (1.0 - in_ref) * entailment(gram, &lexicon));
            den += count as f64;
        }
        let precision = if den == 0.0 { 0.0 } else { num / den };

        // Recall against the reference, restricted to its entailed mass; a
        // reference with no entailed n-grams constrains nothing.
        let mut num = 0.0;
        let mut den = 0.0;
        for (gram, &count) in &reference {
            let cand_count = cand.get(gram).copied().unwrap_or(0);
            let in_cand = (cand_count as f64 / count as f64).min(1.0);
            let weight = count as f64 * entailment(gram, &lexicon);
            num += weight * in_cand;
            den += weight;
        }
        let recall = if den == 0.0 { 1.0 } else { num / den };

        log_prec_sum += ((precision + smoothing) / (1.0 + smoothing)).ln();
        log_rec_sum += ((recall + smoothing) / (1.0 + smoothing)).ln();
    }

    let precision = (log_prec_sum / MAX_ORDER as f64).exp();
    let reference_recall = (log_rec_sum / MAX_ORDER as f64).exp();
    let table_recall = table_mention_recall(&record.table, &record.candidate);
    let recall = reference_recall.powf(lambda_mixing) * table_recall.powf(1.0 - lambda_mixing);
    ParentScores { precision, recall, f_score: harmonic_mean(precision, recall) }
}

/// Corpus PARENT: instance precision/recall averaged over records, F as the
/// harmonic mean of the two corpus averages.
pub fn parent(records: &[EvalRecord], lambda_mixing: f64, smoothing: f64) -> ParentScores {
    if records.is_empty() {
        return ParentScores { precision: 0.0, recall: 0.0, f_score: 0.0 };
    }
    let mut precision = 0.0;
    let mut recall = 0.0;
    for record in records {
        let scores = parent_instance(record, lambda_mixing, smoothing);
        precision += scores.precision;
        recall += scores.recall;
    }
    precision /= records.len() as f64;
    recall /= records.len() as f64;
    ParentScores { precision, recall, f_score: harmonic_mean(precision, recall) }
}
