//! Word-level alignment scores and hallucination labels.
//!
//! Every reference token receives a score in `[0, 1]` describing how strongly
//! the table supports it, then a binary label (`1` = supported, `0` =
//! hallucinated). The computation has four stages:
//!
//! 1. **Raw scores** ([`raw_score`]): only *important* tokens (by default
//!    `NUM`, `ADJ`, `NOUN`, `PROPN`) are scored. A token found verbatim in a
//!    pair (key or any value token) scores 1. Otherwise its co-occurrence
//!    count `c` with the pair is mapped through a quadratic ramp that is 0 at
//!    or below the noise floor `m` and 1 at the pair's maximum count `M`:
//!    `a·(c − m)²` with `a = 1/(M − m)²`. The token's raw score is the
//!    maximum over all pairs in the instance's table. Unimportant tokens stay
//!    undefined.
//! 2. **Statement segmentation** ([`segment_statements`]): the sentence root
//!    and every token attached by an *introductory* relation (`nsubj`,
//!    `acl`, `amod`, …) open statements; every token belongs to the statement
//!    of its nearest ancestor-or-self that is a statement root. Statements
//!    partition the sentence.
//! 3. **Normalization** ([`normalize_scores`]): within each statement, the
//!    mean of the defined raw scores is broadcast to every member, so a
//!    clause stands or falls as a unit. A statement with no scored member
//!    gets 0.
//! 4. **Punctuation heuristics** ([`apply_punct_heuristics`]): commas and
//!    coordinating conjunctions next to a low-scoring token acquire that
//!    neighbor's score, and balanced parentheses/quotes acquire the minimum
//!    score of the tokens they enclose, so delimiters sink with the content
//!    they carry.
//!
//! Labels are `score > τ` with a strict inequality (τ = 0.4 by default).

use crate::cooccur::CooccurrenceIndex;
use crate::corpus::{EntityTable, Instance, KeyValuePair, ParsedSentence, Token, Upos};
use std::collections::BTreeSet;

/// Dependency relations that open a new statement, in addition to the root.
pub const INTRODUCTORY_RELATIONS: [&str; 17] = [
    "acl", "advcl", "amod", "appos", "ccomp", "conj", "csubj", "iobj", "list", "nmod", "nsubj",
    "obj", "orphan", "parataxis", "reparandum", "vocative", "xcomp",
];

/// Part-of-speech categories whose tokens carry alignment information.
pub const IMPORTANT_POS: [Upos; 4] = [Upos::Num, Upos::Adj, Upos::Noun, Upos::Propn];

#[derive(Debug, Clone, PartialEq)]
pub struct LabelerConfig {
    /// Label threshold: label = 1 iff score > tau (strict).
    pub tau: f64,
    /// Co-occurrence noise floor; counts at or below `m` score 0.
    pub m: u32,
    pub important_pos: BTreeSet<Upos>,
    pub introductory_relations: BTreeSet<String>,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        LabelerConfig {
            tau: 0.4,
            m: 5,
            important_pos: IMPORTANT_POS.into_iter().collect(),
            introductory_relations: INTRODUCTORY_RELATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelerConfig {
    fn is_important(&self, pos: Upos) -> bool {
        self.important_pos.contains(&pos)
    }

    fn is_introductory(&self, token: &Token) -> bool {
        self.introductory_relations.contains(token.base_deprel())
    }
}

/// Counters for conditions the labeler tolerates but reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Alignment lookups that hit a pair whose maximum count `M` was absent
    /// or ≤ `m`, making the quadratic ramp undefined (a step function is used
    /// instead).
    pub degenerate_alignments: u64,
    /// Parentheses or quotes with no balanced partner; the enclosure
    /// heuristic skipped them.
    pub unbalanced_delimiters: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.degenerate_alignments += other.degenerate_alignments;
        self.unbalanced_delimiters += other.unbalanced_delimiters;
    }
}

/// Alignment of one word against one table pair, in `[0, 1]`.
///
/// Verbatim membership (the word equals the key or a value token) scores 1
/// regardless of statistics. Otherwise the co-occurrence count is pushed
/// through the quadratic ramp described in the module docs. When the ramp is
/// undefined (`M ≤ m`, or the pair was never seen in training), a step
/// function `c > m` decides, and [`Diagnostics::degenerate_alignments`] is
/// bumped.
pub fn align(
    word: &str,
    pair: &KeyValuePair,
    index: &CooccurrenceIndex,
    cfg: &LabelerConfig,
    diag: &mut Diagnostics,
) -> f64 {
    if pair.contains_word(word) {
        return 1.0;
    }
    let c = index.co_count(word, pair);
    let m = cfg.m;
    match index.pair_max(pair) {
        Some(max) if max > m => {
            if c <= m {
                0.0
            } else {
                let a = 1.0 / ((max - m) as f64).powi(2);
                (a * ((c - m) as f64).powi(2)).min(1.0)
            }
        }
        _ => {
            diag.degenerate_alignments += 1;
            if c > m {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Raw score of the token at `index_in_sentence`: the maximum alignment over
/// all table pairs, or `None` for unimportant tokens.
pub fn raw_score(
    index_in_sentence: usize,
    sentence: &ParsedSentence,
    table: &EntityTable,
    index: &CooccurrenceIndex,
    cfg: &LabelerConfig,
    diag: &mut Diagnostics,
) -> Option<f64> {
    let token = &sentence.tokens[index_in_sentence];
    if !cfg.is_important(token.pos) {
        return None;
    }
    let best = table
        .pairs
        .iter()
        .map(|pair| align(&token.surface, pair, index, cfg, diag))
        .fold(0.0, f64::max);
    Some(best)
}

/// A contiguous-by-structure piece of the sentence: one statement root and
/// every token whose nearest statement-root ancestor-or-self it is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Statement {
    /// 0-based index of the statement root token.
    pub root_index: usize,
    /// 0-based member indices, ascending; always includes `root_index`.
    pub members: Vec<usize>,
}

/// Partition the sentence into statements.
///
/// Statement roots are every token with head 0 plus every token attached by
/// an introductory relation (subtyped relations match on their base form).
/// Statements are returned in ascending order of their root index.
pub fn segment_statements(sentence: &ParsedSentence, cfg: &LabelerConfig) -> Vec<Statement> {
    let n = sentence.len();
    let mut is_root = vec![false; n];
    for (i, token) in sentence.tokens.iter().enumerate() {
        if token.head == 0 || cfg.is_introductory(token) {
            is_root[i] = true;
        }
    }

    // Nearest ancestor-or-self that is a statement root. Valid trees always
    // terminate; the hop guard merely keeps malformed input from looping.
    let mut owner = vec![usize::MAX; n];
    for start in 0..n {
        let mut cursor = start;
        let mut hops = 0;
        loop {
            if is_root[cursor] {
                owner[start] = cursor;
                break;
            }
            match sentence.tokens[cursor].head_index() {
                Some(parent) if hops <= n => {
                    cursor = parent;
                    hops += 1;
                }
                _ => {
                    owner[start] = cursor;
                    break;
                }
            }
        }
    }

    let root_indices: Vec<usize> = (0..n).filter(|&i| is_root[i]).collect();
    root_indices
        .into_iter()
        .map(|root_index| Statement {
            root_index,
            members: (0..n).filter(|&i| owner[i] == root_index).collect(),
        })
        .collect()
}

/// Token index → statement index, given the segmentation of a sentence of
/// length `n`.
pub fn statement_assignment(statements: &[Statement], n: usize) -> Vec<usize> {
    let mut out = vec![usize::MAX; n];
    for (sid, st) in statements.iter().enumerate() {
        for &i in &st.members {
            out[i] = sid;
        }
    }
    out
}

/// Broadcast each statement's mean defined raw score to all its members.
/// Statements with no defined member score 0. Output length equals the input
/// length.
pub fn normalize_scores(raw: &[Option<f64>], statements: &[Statement]) -> Vec<f64> {
    let mut out = vec![0.0; raw.len()];
    for st in statements {
        let defined: Vec<f64> = st.members.iter().filter_map(|&i| raw[i]).collect();
        let value = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        for &i in &st.members {
            out[i] = value;
        }
    }
    out
}

fn is_comma_or_cconj(token: &Token) -> bool {
    token.pos == Upos::Cconj || token.surface == ","
}

enum DelimiterRole {
    Open(usize),  // family id
    Close(usize), // family id
    Toggle(usize), // self-paired (ASCII double quote): alternates open/close
}

fn delimiter_role(surface: &str) -> Option<DelimiterRole> {
    match surface {
        "(" | "-lrb-" => Some(DelimiterRole::Open(0)),
        ")" | "-rrb-" => Some(DelimiterRole::Close(0)),
        "[" | "-lsb-" => Some(DelimiterRole::Open(1)),
        "]" | "-rsb-" => Some(DelimiterRole::Close(1)),
        "``" => Some(DelimiterRole::Open(2)),
        "''" => Some(DelimiterRole::Close(2)),
        "\"" => Some(DelimiterRole::Toggle(3)),
        _ => None,
    }
}

/// Post-process normalized scores around punctuation.
///
/// 1. A comma or coordinating conjunction positionally adjacent to a token
///    scoring below τ acquires that neighbor's score (the minimum, when both
///    neighbors qualify). Adjacency is read off the original score vector, so
///    updates do not cascade.
/// 2. Each balanced pair of parentheses/brackets/quotes acquires the minimum
///    score among the tokens strictly between them (processed innermost
///    first). Unbalanced delimiters are skipped and counted in
///    [`Diagnostics::unbalanced_delimiters`].
pub fn apply_punct_heuristics(
    scores: &[f64],
    sentence: &ParsedSentence,
    cfg: &LabelerConfig,
    diag: &mut Diagnostics,
) -> Vec<f64> {
    let n = scores.len();
    let mut out = scores.to_vec();

    for i in 0..n {
        if !is_comma_or_cconj(&sentence.tokens[i]) {
            continue;
        }
        let mut acquired: Option<f64> = None;
        for neighbor in [i.checked_sub(1), (i + 1 < n).then_some(i + 1)].into_iter().flatten() {
            if scores[neighbor] < cfg.tau {
                acquired = Some(match acquired {
                    Some(v) => v.min(scores[neighbor]),
                    None => scores[neighbor],
                });
            }
        }
        if let Some(v) = acquired {
            out[i] = v;
        }
    }

    // Match delimiters per family; a stack yields innermost pairs first.
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut stacks: [Vec<usize>; 4] = Default::default();
    for (i, token) in sentence.tokens.iter().enumerate() {
        match delimiter_role(&token.surface) {
            Some(DelimiterRole::Open(f)) => stacks[f].push(i),
            Some(DelimiterRole::Close(f)) => match stacks[f].pop() {
                Some(open) => pairs.push((open, i)),
                None => diag.unbalanced_delimiters += 1,
            },
            Some(DelimiterRole::Toggle(f)) => {
                if let Some(open) = stacks[f].pop() {
                    pairs.push((open, i));
                } else {
                    stacks[f].push(i);
                }
            }
            None => {}
        }
    }
    for stack in &stacks {
        diag.unbalanced_delimiters += stack.len() as u64;
    }

    for (open, close) in pairs {
        if close > open + 1 {
            let inner = out[open + 1..close].iter().copied().fold(f64::INFINITY, f64::min);
            out[open] = inner;
            out[close] = inner;
        }
    }

    out
}

/// Binary labels from scores: 1 iff the score strictly exceeds `tau`.
pub fn binarize(scores: &[f64], tau: f64) -> Vec<bool> {
    scores.iter().map(|&s| s > tau).collect()
}

/// Final annotation for one reference token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAnnotation {
    /// Normalized, punctuation-adjusted score in `[0, 1]`.
    pub score: f64,
    /// `true` = supported by the table, `false` = hallucinated.
    pub label: bool,
    /// Index into the sentence's statement list.
    pub statement_id: usize,
    /// Whether the token's part of speech participates in raw scoring.
    pub important: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledInstance {
    pub annotations: Vec<TokenAnnotation>,
    pub diagnostics: Diagnostics,
}

/// Run the full labeling pipeline on one instance.
pub fn label_instance(
    inst: &Instance,
    index: &CooccurrenceIndex,
    cfg: &LabelerConfig,
) -> LabeledInstance {
    let sentence = &inst.reference;
    let mut diag = Diagnostics::default();

    let raw: Vec<Option<f64>> = (0..sentence.len())
        .map(|i| raw_score(i, sentence, &inst.table, index, cfg, &mut diag))
        .collect();
    let statements = segment_statements(sentence, cfg);
    let assignment = statement_assignment(&statements, sentence.len());
    let normalized = normalize_scores(&raw, &statements);
    let adjusted = apply_punct_heuristics(&normalized, sentence, cfg, &mut diag);
    let labels = binarize(&adjusted, cfg.tau);

    let annotations = (0..sentence.len())
        .map(|i| TokenAnnotation {
            score: adjusted[i],
            label: labels[i],
            statement_id: assignment[i],
            important: cfg.is_important(sentence.tokens[i].pos),
        })
        .collect();
    LabeledInstance { annotations, diagnostics: diag }
}

/// A reference with its hallucinated tokens removed.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredReference {
    /// Surviving tokens in original order, with their original annotations.
    pub tokens: Vec<Token>,
    /// All tokens were label-0; the surviving sequence is empty.
    pub emptied: bool,
}

/// Drop every label-0 token from the reference, preserving order.
pub fn filter_reference(inst: &Instance, annotations: &[TokenAnnotation]) -> FilteredReference {
    let tokens: Vec<Token> = inst
        .reference
        .tokens
        .iter()
        .zip(annotations)
        .filter(|(_, a)| a.label)
        .map(|(t, _)| t.clone())
        .collect();
    let emptied = tokens.is_empty();
    FilteredReference { tokens, emptied }
}

/// A placeholder parse for token sequences whose real parse is unavailable
/// (filtered references, model generations): the first token is the root and
/// every other token attaches to it with the non-introductory relation `dep`,
/// so the sentence forms a single statement. Parts of speech are preserved.
pub fn identity_reparse(tokens: &[Token]) -> ParsedSentence {
    let tokens = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if i == 0 {
                Token { surface: t.surface.clone(), pos: t.pos, head: 0, deprel: "root".into() }
            } else {
                Token { surface: t.surface.clone(), pos: t.pos, head: 1, deprel: "dep".into() }
            }
        })
        .collect();
    ParsedSentence::new(tokens)
}
