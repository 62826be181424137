//! Corpus types and the canonical on-disk format.
//!
//! An [`Instance`] pairs an entity table (ordered key/value pairs) with one
//! pre-tokenized, pre-parsed reference sentence. Instances are stored one per
//! line as JSON:
//!
//! ```text
//! {"id":"x","table":[["name",["kian","emadi"]]],"reference":[["kian","PROPN",13,"nsubj"], ...]}
//! ```
//!
//! Reference tokens are `[surface, upos, head, deprel]` with 1-based heads
//! and `0` marking the sentence root. All text is lowercased at ingestion;
//! tokenization, tagging, and parsing happen upstream (see [`conllu`] for the
//! import adapter), never here.

pub mod conllu;

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Universal part-of-speech tag set (17 categories).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "ADJ" => Ok(Upos::Adj),
            "ADP" => Ok(Upos::Adp),
            "ADV" => Ok(Upos::Adv),
            "AUX" => Ok(Upos::Aux),
            "CCONJ" => Ok(Upos::Cconj),
            "DET" => Ok(Upos::Det),
            "INTJ" => Ok(Upos::Intj),
            "NOUN" => Ok(Upos::Noun),
            "NUM" => Ok(Upos::Num),
            "PART" => Ok(Upos::Part),
            "PRON" => Ok(Upos::Pron),
            "PROPN" => Ok(Upos::Propn),
            "PUNCT" => Ok(Upos::Punct),
            "SCONJ" => Ok(Upos::Sconj),
            "SYM" => Ok(Upos::Sym),
            "VERB" => Ok(Upos::Verb),
            "X" => Ok(Upos::X),
            other => Err(format!("unknown part-of-speech tag `{other}`")),
        }
    }
}

/// One reference token with its parse attachment.
///
/// `head` is 1-based; `0` marks the sentence root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub pos: Upos,
    pub head: usize,
    pub deprel: String,
}

impl Token {
    pub fn new(surface: impl Into<String>, pos: Upos, head: usize, deprel: impl Into<String>) -> Self {
        Token { surface: surface.into(), pos, head, deprel: deprel.into() }
    }

    /// 0-based index of the governing token, or `None` for the root.
    pub fn head_index(&self) -> Option<usize> {
        if self.head == 0 {
            None
        } else {
            Some(self.head - 1)
        }
    }

    /// Base syntactic relation, with any `:` subtype stripped
    /// (`acl:relcl` → `acl`).
    pub fn base_deprel(&self) -> &str {
        self.deprel.split(':').next().unwrap_or(&self.deprel)
    }
}

/// A dependency-parsed sentence.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedSentence {
    pub tokens: Vec<Token>,
}

impl ParsedSentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        ParsedSentence { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 0-based index of the unique root token, if exactly one exists.
    pub fn root_index(&self) -> Option<usize> {
        let mut roots = self.tokens.iter().enumerate().filter(|(_, t)| t.head == 0);
        match (roots.next(), roots.next()) {
            (Some((i, _)), None) => Some(i),
            _ => None,
        }
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }
}

/// One table entry: a key and its pre-tokenized value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KeyValuePair {
    pub key: String,
    pub value: Vec<String>,
}

impl KeyValuePair {
    pub fn new(key: impl Into<String>, value: &[&str]) -> Self {
        KeyValuePair { key: key.into(), value: value.iter().map(|s| s.to_string()).collect() }
    }

    /// `word` equals the key or one of the value tokens.
    pub fn contains_word(&self, word: &str) -> bool {
        self.key == word || self.value.iter().any(|v| v == word)
    }
}

/// An entity table: ordered, possibly repeating key/value pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EntityTable {
    pub pairs: Vec<KeyValuePair>,
}

impl EntityTable {
    pub fn new(pairs: Vec<KeyValuePair>) -> Self {
        EntityTable { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `word` appears somewhere in the table (any key or value token).
    pub fn contains_word(&self, word: &str) -> bool {
        self.pairs.iter().any(|p| p.contains_word(word))
    }

    /// Total number of value tokens across all pairs.
    pub fn value_token_count(&self) -> usize {
        self.pairs.iter().map(|p| p.value.len()).sum()
    }
}

/// One training/evaluation instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub id: String,
    pub table: EntityTable,
    pub reference: ParsedSentence,
}

/// Which split a corpus was loaded as. Co-occurrence statistics may only be
/// gathered from [`Split::Train`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}` (expected train, valid, or test)")),
        }
    }
}

/// An ordered collection of instances from one split.
///
/// Immutable after construction; instance order is the file order and is
/// preserved by [`write_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    pub instances: Vec<Instance>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("duplicate instance id `{id}` at line {line}")]
    DuplicateId { line: usize, id: String },
    #[error("invalid instance `{id}` at line {line}: {violation}")]
    Invalid { line: usize, id: String, violation: String },
    #[error("malformed CoNLL-U at line {line}: {detail}")]
    Conllu { line: usize, detail: String },
    #[error("{sentences} parsed sentences but {tables} table records")]
    TableMismatch { sentences: usize, tables: usize },
}

// ---------------------------------------------------------------------------
// Canonical format (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct WireInstance {
    id: String,
    table: Vec<(String, Vec<String>)>,
    reference: Vec<(String, String, u32, String)>,
}

fn lower(s: &str) -> String {
    s.to_lowercase()
}

fn instance_from_wire(wire: WireInstance, line: usize) -> Result<Instance, CorpusError> {
    let table = EntityTable::new(
        wire.table
            .into_iter()
            .map(|(k, v)| KeyValuePair { key: lower(&k), value: v.iter().map(|t| lower(t)).collect() })
            .collect(),
    );
    let mut tokens = Vec::with_capacity(wire.reference.len());
    for (surface, pos, head, deprel) in wire.reference {
        let pos = Upos::from_str(&pos)
            .map_err(|detail| CorpusError::Malformed { line, detail })?;
        tokens.push(Token { surface: lower(&surface), pos, head: head as usize, deprel: lower(&deprel) });
    }
    Ok(Instance { id: wire.id, table, reference: ParsedSentence::new(tokens) })
}

fn instance_to_wire(inst: &Instance) -> WireInstance {
    WireInstance {
        id: inst.id.clone(),
        table: inst.table.pairs.iter().map(|p| (p.key.clone(), p.value.clone())).collect(),
        reference: inst
            .reference
            .tokens
            .iter()
            .map(|t| (t.surface.clone(), t.pos.as_str().to_string(), t.head as u32, t.deprel.clone()))
            .collect(),
    }
}

/// Parse one canonical-format line into an instance (lowercasing text fields).
pub fn parse_instance_line(line_text: &str, line: usize) -> Result<Instance, CorpusError> {
    let wire: WireInstance = serde_json::from_str(line_text)
        .map_err(|e| CorpusError::Malformed { line, detail: e.to_string() })?;
    instance_from_wire(wire, line)
}

/// Serialize one instance as a canonical-format line (no trailing newline).
pub fn instance_to_line(inst: &Instance) -> String {
    serde_json::to_string(&instance_to_wire(inst)).expect("instance serialization cannot fail")
}

/// Load a corpus from the canonical one-instance-per-line format.
///
/// Every instance is validated; ids must be unique within the file. Blank
/// lines are rejected so that line numbers in errors stay meaningful.
pub fn load_corpus(path: &Path, split: Split) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })?;
    load_corpus_str(&text, split)
}

/// [`load_corpus`] over an in-memory string.
pub fn load_corpus_str(text: &str, split: Split) -> Result<Corpus, CorpusError> {
    let mut instances = Vec::new();
    let mut seen = HashSet::new();
    for (i, line_text) in text.lines().enumerate() {
        let line = i + 1;
        if line_text.trim().is_empty() {
            return Err(CorpusError::Malformed { line, detail: "empty line".into() });
        }
        let inst = parse_instance_line(line_text, line)?;
        if !seen.insert(inst.id.clone()) {
            return Err(CorpusError::DuplicateId { line, id: inst.id });
        }
        if let Some(violation) = validate_instance(&inst).into_iter().next() {
            return Err(CorpusError::Invalid { line, id: inst.id, violation });
        }
        instances.push(inst);
    }
    Ok(Corpus { split, instances })
}

/// Write a corpus in the canonical format. `load_corpus` of the result gives
/// back an equal corpus, and re-serializing a loaded canonical file is
/// byte-identical.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    std::fs::write(path, corpus_to_string(corpus))
        .map_err(|source| CorpusError::Io { path: path.display().to_string(), source })
}

/// The canonical serialization of a corpus, one line per instance.
pub fn corpus_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for inst in &corpus.instances {
        out.push_str(&instance_to_line(inst));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn check_token_text(what: &str, text: &str, violations: &mut Vec<String>) {
    if text.is_empty() {
        violations.push(format!("empty {what}"));
        return;
    }
    if text.chars().any(char::is_whitespace) {
        violations.push(format!("whitespace in {what} `{text}`"));
    }
    if text.chars().any(char::is_uppercase) {
        violations.push(format!("uppercase characters in {what} `{text}`"));
    }
}

/// Check every structural invariant of an instance. An empty report means the
/// instance is valid; each entry is one human-readable violation.
pub fn validate_instance(inst: &Instance) -> Vec<String> {
    let mut violations = Vec::new();

    if inst.id.is_empty() {
        violations.push("empty instance id".into());
    }
    if inst.table.is_empty() {
        violations.push("T_e ≥ 1 violated (table has no pairs)".into());
    }
    for pair in &inst.table.pairs {
        check_token_text("key", &pair.key, &mut violations);
        if pair.value.is_empty() {
            violations.push(format!("empty value for key `{}`", pair.key));
        }
        for tok in &pair.value {
            check_token_text("value token", tok, &mut violations);
        }
    }

    let n = inst.reference.len();
    if n == 0 {
        violations.push("T_y ≥ 1 violated (reference has no tokens)".into());
        return violations;
    }
    let mut root_count = 0usize;
    for (i, tok) in inst.reference.tokens.iter().enumerate() {
        check_token_text("surface", &tok.surface, &mut violations);
        if tok.deprel.is_empty() {
            violations.push(format!("empty deprel at token {}", i + 1));
        }
        if tok.head > n {
            violations.push(format!("head out of range at token {}", i + 1));
        } else if tok.head == i + 1 {
            violations.push(format!("token {} is its own head", i + 1));
        }
        if tok.head == 0 {
            root_count += 1;
        }
    }
    match root_count {
        0 => violations.push("no root".into()),
        1 => {}
        _ => violations.push("multiple roots".into()),
    }

    // Reject cycles by walking each token toward the root; in a well-formed
    // tree the walk ends within `n` hops.
    if violations.is_empty() {
        for start in 0..n {
            let mut cursor = start;
            let mut hops = 0;
            while let Some(parent) = inst.reference.tokens[cursor].head_index() {
                cursor = parent;
                hops += 1;
                if hops > n {
                    violations.push(format!("cycle detected at token {}", start + 1));
                    break;
                }
            }
        }
    }

    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_instance() -> Instance {
        Instance {
            id: "i1".into(),
            table: EntityTable::new(vec![
                KeyValuePair::new("name", &["ada", "lovelace"]),
                KeyValuePair::new("field", &["mathematics"]),
            ]),
            reference: ParsedSentence::new(vec![
                Token::new("ada", Upos::Propn, 3, "nsubj"),
                Token::new("loved", Upos::Verb, 3, "amod"),
                Token::new("mathematics", Upos::Noun, 0, "root"),
                Token::new(".", Upos::Punct, 3, "punct"),
            ]),
        }
    }

    #[test]
    fn valid_instance_produces_empty_report() {
        assert!(validate_instance(&sample_instance()).is_empty());
    }

    #[test]
    fn empty_table_reports_pair_floor() {
        let mut inst = sample_instance();
        inst.table.pairs.clear();
        let report = validate_instance(&inst);
        assert!(report.iter().any(|v| v.contains("T_e ≥ 1 violated")), "{report:?}");
    }

    #[test]
    fn two_roots_report_multiple_roots() {
        let mut inst = sample_instance();
        inst.reference.tokens[1].head = 0;
        let report = validate_instance(&inst);
        assert!(report.iter().any(|v| v == "multiple roots"), "{report:?}");
    }

    #[test]
    fn self_loop_is_rejected() {
        let mut inst = sample_instance();
        inst.reference.tokens[0].head = 1; // token 1 headed by itself
        let report = validate_instance(&inst);
        assert!(report.iter().any(|v| v.contains("its own head")), "{report:?}");
    }

    #[test]
    fn two_cycle_is_rejected() {
        let mut inst = sample_instance();
        inst.reference.tokens[0].head = 2;
        inst.reference.tokens[1].head = 1;
        let report = validate_instance(&inst);
        assert!(report.iter().any(|v| v.contains("cycle detected")), "{report:?}");
    }

    #[test]
    fn head_out_of_range_is_rejected() {
        let mut inst = sample_instance();
        inst.reference.tokens[3].head = 9;
        let report = validate_instance(&inst);
        assert!(report.iter().any(|v| v.contains("head out of range")), "{report:?}");
    }

    #[test]
    fn load_single_record_file() {
        let line = instance_to_line(&sample_instance());
        let corpus = load_corpus_str(&line, Split::Train).unwrap();
        assert_eq!(corpus.len(), 1);
        assert_eq!(corpus.instances[0].table.len(), 2);
    }

    #[test]
    fn missing_field_reports_line_number() {
        let good = instance_to_line(&sample_instance());
        let bad = r#"{"id":"i2","table":[["k",["v"]]]}"#;
        let err = load_corpus_str(&format!("{good}\n{bad}"), Split::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("malformed record at line 2"), "{msg}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let line = instance_to_line(&sample_instance());
        let err = load_corpus_str(&format!("{line}\n{line}"), Split::Train).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }), "{err}");
    }

    #[test]
    fn ingestion_lowercases_text_fields() {
        let line = r#"{"id":"X","table":[["Name",["Ada"]]],"reference":[["Ada","PROPN",0,"ROOT"]]}"#;
        let corpus = load_corpus_str(line, Split::Test).unwrap();
        let inst = &corpus.instances[0];
        assert_eq!(inst.id, "X"); // ids are opaque and kept verbatim
        assert_eq!(inst.table.pairs[0].key, "name");
        assert_eq!(inst.table.pairs[0].value[0], "ada");
        assert_eq!(inst.reference.tokens[0].surface, "ada");
        assert_eq!(inst.reference.tokens[0].deprel, "root");
    }

    #[test]
    fn write_then_load_is_identity() {
        let corpus = Corpus { split: Split::Train, instances: vec![sample_instance()] };
        let text = corpus_to_string(&corpus);
        let reloaded = load_corpus_str(&text, Split::Train).unwrap();
        assert_eq!(reloaded, corpus);
        // Re-serializing a canonical file is byte-identical.
        assert_eq!(corpus_to_string(&reloaded), text);
    }

    #[test]
    fn base_deprel_strips_subtype() {
        let t = Token::new("x", Upos::Noun, 0, "acl:relcl");
        assert_eq!(t.base_deprel(), "acl");
    }

    #[test]
    fn upos_round_trips_through_strings() {
        for pos in Upos::ALL {
            assert_eq!(Upos::from_str(pos.as_str()).unwrap(), pos);
        }
        assert!(Upos::from_str("NOPE").is_err());
    }
}
