//! Import adapter for 10-column CoNLL-U parses.
//!
//! The toolkit never tokenizes or parses text itself; references arrive as
//! CoNLL-U sentences produced by an external pipeline and are paired, in
//! order, with a table file (one `{"id": ..., "table": [[key, [tokens]]]}`
//! JSON record per line). Only the ID, FORM, UPOS, HEAD, and DEPREL columns
//! are consumed. Multiword-token ranges (`1-2`) and empty nodes (`1.1`) are
//! skipped. PTB bracket escapes such as `-lrb-` are normalized to their
//! plain forms, and each normalization is recorded in the import report.

use super::{
    validate_instance, Corpus, CorpusError, EntityTable, Instance, KeyValuePair, ParsedSentence,
    Split, Token, Upos,
};
use serde::Deserialize;
use std::path::Path;
use std::str::FromStr;

/// One bracket normalization performed during import.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BracketNormalization {
    pub instance_id: String,
    /// 0-based token position within the sentence.
    pub token_index: usize,
    pub original: String,
    pub normalized: String,
}

/// What the adapter did, beyond the corpus itself.
#[derive(Debug, Clone, Default)]
pub struct ImportReport {
    pub sentences: usize,
    pub skipped_multiword_ranges: usize,
    pub skipped_empty_nodes: usize,
    pub bracket_normalizations: Vec<BracketNormalization>,
}

fn normalize_bracket(surface: &str) -> Option<&'static str> {
    match surface {
        "-lrb-" => Some("("),
        "-rrb-" => Some(")"),
        "-lsb-" => Some("["),
        "-rsb-" => Some("]"),
        "-lcb-" => Some("{"),
        "-rcb-" => Some("}"),
        _ => None,
    }
}

#[derive(Deserialize)]
struct WireTableRecord {
    id: String,
    table: Vec<(String, Vec<String>)>,
}

/// Parse the table side of an import: one JSON record per line.
pub fn parse_table_file(text: &str) -> Result<Vec<(String, EntityTable)>, CorpusError> {
    let mut out = Vec::new();
    for (i, line_text) in text.lines().enumerate() {
        let line = i + 1;
        if line_text.trim().is_empty() {
            return Err(CorpusError::Malformed { line, detail: "empty line".into() });
        }
        let wire: WireTableRecord = serde_json::from_str(line_text)
            .map_err(|e| CorpusError::Malformed { line, detail: e.to_string() })?;
        let table = EntityTable::new(
            wire.table
                .into_iter()
                .map(|(k, v)| KeyValuePair {
                    key: k.to_lowercase(),
                    value: v.iter().map(|t| t.to_lowercase()).collect(),
                })
                .collect(),
        );
        out.push((wire.id, table));
    }
    Ok(out)
}

struct RawSentence {
    tokens: Vec<Token>,
    /// bracket fixes as (token index, original surface)
    fixes: Vec<(usize, String)>,
}

fn parse_conllu_sentences(text: &str, report: &mut ImportReport) -> Result<Vec<RawSentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut fixes: Vec<(usize, String)> = Vec::new();

    let mut flush = |tokens: &mut Vec<Token>, fixes: &mut Vec<(usize, String)>| {
        if !tokens.is_empty() {
            sentences.push(RawSentence { tokens: std::mem::take(tokens), fixes: std::mem::take(fixes) });
        }
    };

    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let line_text = raw_line.trim_end_matches('\r');
        if line_text.trim().is_empty() {
            flush(&mut tokens, &mut fixes);
            continue;
        }
        if line_text.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line_text.split('\t').collect();
        if cols.len() != 10 {
            return Err(CorpusError::Conllu {
                line,
                detail: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id_col = cols[0];
        if id_col.contains('-') {
            report.skipped_multiword_ranges += 1;
            continue;
        }
        if id_col.contains('.') {
            report.skipped_empty_nodes += 1;
            continue;
        }
        let expected_id = tokens.len() + 1;
        let id: usize = id_col
            .parse()
            .map_err(|_| CorpusError::Conllu { line, detail: format!("bad token id `{id_col}`") })?;
        if id != expected_id {
            return Err(CorpusError::Conllu {
                line,
                detail: format!("token id `{id}` out of sequence (expected {expected_id})"),
            });
        }
        let mut surface = cols[1].to_lowercase();
        if let Some(plain) = normalize_bracket(&surface) {
            fixes.push((tokens.len(), surface.clone()));
            surface = plain.to_string();
        }
        let pos = Upos::from_str(cols[3]).map_err(|detail| CorpusError::Conllu { line, detail })?;
        let head: usize = cols[6]
            .parse()
            .map_err(|_| CorpusError::Conllu { line, detail: format!("bad head `{}`", cols[6]) })?;
        let deprel = cols[7].to_lowercase();
        if deprel.is_empty() || deprel == "_" {
            return Err(CorpusError::Conllu { line, detail: "missing deprel".into() });
        }
        tokens.push(Token { surface, pos, head, deprel });
    }
    flush(&mut tokens, &mut fixes);
    Ok(sentences)
}

/// Import externally parsed sentences plus their tables as a corpus.
///
/// Sentences and table records are paired by position; a count mismatch is an
/// error. Every imported instance passes the same validation as the canonical
/// loader.
pub fn import_conllu_str(
    conllu: &str,
    tables: &str,
    split: Split,
) -> Result<(Corpus, ImportReport), CorpusError> {
    let mut report = ImportReport::default();
    let sentences = parse_conllu_sentences(conllu, &mut report)?;
    let tables = parse_table_file(tables)?;
    if sentences.len() != tables.len() {
        return Err(CorpusError::TableMismatch { sentences: sentences.len(), tables: tables.len() });
    }
    report.sentences = sentences.len();

    let mut instances = Vec::with_capacity(sentences.len());
    let mut seen = std::collections::HashSet::new();
    for (line, (sentence, (id, table))) in sentences.into_iter().zip(tables).enumerate() {
        let line = line + 1;
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line, id });
        }
        for (token_index, original) in sentence.fixes {
            report.bracket_normalizations.push(BracketNormalization {
                instance_id: id.clone(),
                token_index,
                original,
                normalized: sentence.tokens[token_index].surface.clone(),
            });
        }
        let inst = Instance { id, table, reference: ParsedSentence::new(sentence.tokens) };
        if let Some(violation) = validate_instance(&inst).into_iter().next() {
            return Err(CorpusError::Invalid { line, id: inst.id, violation });
        }
        instances.push(inst);
    }
    Ok((Corpus { split, instances }, report))
}

/// [`import_conllu_str`] reading both inputs from disk.
pub fn import_conllu(
    conllu_path: &Path,
    tables_path: &Path,
    split: Split,
) -> Result<(Corpus, ImportReport), CorpusError> {
    let conllu = std::fs::read_to_string(conllu_path)
        .map_err(|source| CorpusError::Io { path: conllu_path.display().to_string(), source })?;
    let tables = std::fs::read_to_string(tables_path)
        .map_err(|source| CorpusError::Io { path: tables_path.display().to_string(), source })?;
    import_conllu_str(&conllu, &tables, split)
}
