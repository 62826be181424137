//! Instance-level co-occurrence statistics between reference words and table
//! pairs.
//!
//! A word and a pair "co-occur" when the word appears in an instance's
//! reference and the pair appears in the same instance's table. Counting is
//! instance-level: no matter how often a word repeats inside one reference,
//! each instance contributes at most 1 to any (word, pair) cell. Statistics
//! are gathered from the training split only.

use crate::corpus::{Corpus, KeyValuePair, Split};
use crate::util::sha256_hex;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

/// A table pair as a counting key: the key plus the space-joined value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairKey {
    pub key: String,
    pub value: String,
}

impl PairKey {
    pub fn of(pair: &KeyValuePair) -> Self {
        PairKey { key: pair.key.clone(), value: pair.value.join(" ") }
    }
}

/// Co-occurrence counts plus, per pair, the maximum count over the whole
/// vocabulary (the alignment scorer's normalizer).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CooccurrenceIndex {
    counts: HashMap<(String, PairKey), u32>,
    pair_max: HashMap<PairKey, u32>,
    vocab: HashSet<String>,
    /// Checksum of the canonical serialization of the source corpus, or a
    /// caller-supplied provenance string for hand-built indexes.
    pub corpus_checksum: String,
    pub instance_count: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("co-occurrence statistics must come from the train split, got {0}")]
    WrongSplit(Split),
    #[error("unsupported index format header `{0}`")]
    VersionMismatch(String),
    #[error("index checksum mismatch (file truncated or edited)")]
    ChecksumMismatch,
    #[error("malformed index file at line {line}: {detail}")]
    Malformed { line: usize, detail: String },
}

const FORMAT_HEADER: &str = "d2t-cooccur-index v1";

impl CooccurrenceIndex {
    /// Count co-occurrences over a training corpus.
    ///
    /// Within one instance, repeated words and repeated pairs are deduplicated
    /// before counting, so every cell gains at most 1 per instance.
    pub fn build(corpus: &Corpus) -> Result<Self, IndexError> {
        Self::build_with_threads(corpus, 1)
    }

    /// [`CooccurrenceIndex::build`] with the instances partitioned across
    /// `threads` workers. Partial maps are merged in partition order; since
    /// cell increments are commutative integer additions, the result is
    /// bitwise identical to the sequential build.
    pub fn build_with_threads(corpus: &Corpus, threads: usize) -> Result<Self, IndexError> {
        if corpus.split != Split::Train {
            return Err(IndexError::WrongSplit(corpus.split));
        }
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }

        let count_chunk = |instances: &[crate::corpus::Instance]| {
            let mut counts: HashMap<(String, PairKey), u32> = HashMap::new();
            let mut vocab: HashSet<String> = HashSet::new();
            for inst in instances {
                let words: HashSet<&str> =
                    inst.reference.tokens.iter().map(|t| t.surface.as_str()).collect();
                let pairs: HashSet<PairKey> = inst.table.pairs.iter().map(PairKey::of).collect();
                for word in &words {
                    vocab.insert(word.to_string());
                    for pair in &pairs {
                        *counts.entry((word.to_string(), pair.clone())).or_insert(0) += 1;
                    }
                }
            }
            (counts, vocab)
        };

        let threads = threads.clamp(1, corpus.len());
        let (mut counts, mut vocab) = if threads == 1 {
            count_chunk(&corpus.instances)
        } else {
            let chunk_size = corpus.len().div_ceil(threads);
            let partials: Vec<_> = std::thread::scope(|scope| {
                let handles: Vec<_> = corpus
                    .instances
                    .chunks(chunk_size)
                    .map(|chunk| scope.spawn(move || count_chunk(chunk)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("index worker panicked")).collect()
            });
            let mut counts: HashMap<(String, PairKey), u32> = HashMap::new();
            let mut vocab: HashSet<String> = HashSet::new();
            for (partial_counts, partial_vocab) in partials {
                for (cell, n) in partial_counts {
                    *counts.entry(cell).or_insert(0) += n;
                }
                vocab.extend(partial_vocab);
            }
            (counts, vocab)
        };

        counts.shrink_to_fit();
        vocab.shrink_to_fit();
        let mut pair_max: HashMap<PairKey, u32> = HashMap::new();
        for ((_, pair), &n) in &counts {
            let slot = pair_max.entry(pair.clone()).or_insert(0);
            *slot = (*slot).max(n);
        }

        Ok(CooccurrenceIndex {
            counts,
            pair_max,
            vocab,
            corpus_checksum: format!("sha256:{}", sha256_hex(crate::corpus::corpus_to_string(corpus).as_bytes())),
            instance_count: corpus.len() as u64,
        })
    }

    /// Build directly from explicit cells; used for fixtures and tests.
    /// `pair_max` is derived from the supplied counts.
    pub fn from_counts<I>(cells: I, provenance: &str) -> Self
    where
        I: IntoIterator<Item = ((String, PairKey), u32)>,
    {
        let counts: HashMap<(String, PairKey), u32> = cells.into_iter().collect();
        let mut pair_max = HashMap::new();
        let mut vocab = HashSet::new();
        for ((word, pair), &n) in &counts {
            vocab.insert(word.clone());
            let slot = pair_max.entry(pair.clone()).or_insert(0);
            *slot = (*slot).max(n);
        }
        let instance_count = counts.values().copied().max().unwrap_or(0) as u64;
        CooccurrenceIndex {
            counts,
            pair_max,
            vocab,
            corpus_checksum: provenance.to_string(),
            instance_count,
        }
    }

    /// How many training instances contained both `word` (in the reference)
    /// and `pair` (in the table). Unseen combinations count 0.
    pub fn co_count(&self, word: &str, pair: &KeyValuePair) -> u32 {
        self.co_count_key(word, &PairKey::of(pair))
    }

    pub fn co_count_key(&self, word: &str, pair: &PairKey) -> u32 {
        // Borrowed lookup would need a custom key type; clone-free via iteration
        // is slower, so accept one small allocation per call.
        self.counts.get(&(word.to_string(), pair.clone())).copied().unwrap_or(0)
    }

    /// Maximum count over the vocabulary for `pair`, or `None` if the pair
    /// never occurred in the training tables.
    pub fn pair_max(&self, pair: &KeyValuePair) -> Option<u32> {
        self.pair_max.get(&PairKey::of(pair)).copied()
    }

    pub fn pair_max_key(&self, pair: &PairKey) -> Option<u32> {
        self.pair_max.get(pair).copied()
    }

    /// Words observed in at least one training reference.
    pub fn vocab_contains(&self, word: &str) -> bool {
        self.vocab.contains(word)
    }

    pub fn entry_count(&self) -> usize {
        self.counts.len()
    }

    /// Serialize as deterministic text: a header, quadruples sorted by
    /// (word, key, value), and a trailing checksum line covering everything
    /// above it.
    pub fn to_file_string(&self) -> String {
        let sorted: BTreeMap<(&String, &PairKey), u32> =
            self.counts.iter().map(|((w, p), &n)| ((w, p), n)).collect();
        let mut body = String::new();
        body.push_str(FORMAT_HEADER);
        body.push('\n');
        body.push_str(&format!("corpus {}\n", self.corpus_checksum));
        body.push_str(&format!("instances {}\n", self.instance_count));
        body.push_str(&format!("entries {}\n", sorted.len()));
        for ((word, pair), n) in sorted {
            body.push_str(&format!("{word}\t{}\t{}\t{n}\n", pair.key, pair.value));
        }
        let digest = sha256_hex(body.as_bytes());
        format!("{body}sha256 {digest}\n")
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        std::fs::write(path, self.to_file_string())
            .map_err(|source| IndexError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| IndexError::Io { path: path.display().to_string(), source })?;
        Self::from_file_string(&text)
    }

    pub fn from_file_string(text: &str) -> Result<Self, IndexError> {
        // Integrity first: the last line must be the checksum of all bytes
        // before it, so truncation or edits fail loudly.
        let trimmed = text.strip_suffix('\n').ok_or(IndexError::ChecksumMismatch)?;
        let (body_end, checksum_line) = match trimmed.rfind('\n') {
            Some(pos) => (pos + 1, &trimmed[pos + 1..]),
            None => return Err(IndexError::ChecksumMismatch),
        };
        let body = &text[..body_end];
        let expected = checksum_line
            .strip_prefix("sha256 ")
            .ok_or(IndexError::ChecksumMismatch)?;
        if sha256_hex(body.as_bytes()) != expected {
            return Err(IndexError::ChecksumMismatch);
        }

        let mut lines = body.lines().enumerate();
        let mut next_line = |what: &str| {
            lines
                .next()
                .ok_or_else(|| IndexError::Malformed { line: 0, detail: format!("missing {what}") })
        };
        let (_, header) = next_line("header")?;
        if header != FORMAT_HEADER {
            return Err(IndexError::VersionMismatch(header.to_string()));
        }
        let (line, corpus_line) = next_line("corpus checksum")?;
        let corpus_checksum = corpus_line
            .strip_prefix("corpus ")
            .ok_or(IndexError::Malformed { line: line + 1, detail: "expected `corpus <checksum>`".into() })?
            .to_string();
        let (line, inst_line) = next_line("instance count")?;
        let instance_count: u64 = inst_line
            .strip_prefix("instances ")
            .and_then(|v| v.parse().ok())
            .ok_or(IndexError::Malformed { line: line + 1, detail: "expected `instances <n>`".into() })?;
        let (line, entries_line) = next_line("entry count")?;
        let declared: usize = entries_line
            .strip_prefix("entries ")
            .and_then(|v| v.parse().ok())
            .ok_or(IndexError::Malformed { line: line + 1, detail: "expected `entries <n>`".into() })?;

        let mut counts = HashMap::with_capacity(declared);
        for (i, entry) in lines {
            let line = i + 1;
            let mut fields = entry.split('\t');
            let (word, key, value, count) =
                match (fields.next(), fields.next(), fields.next(), fields.next(), fields.next()) {
                    (Some(w), Some(k), Some(v), Some(c), None) => (w, k, v, c),
                    _ => {
                        return Err(IndexError::Malformed {
                            line,
                            detail: "expected `word<TAB>key<TAB>value<TAB>count`".into(),
                        })
                    }
                };
            let count: u32 = count.parse().map_err(|_| IndexError::Malformed {
                line,
                detail: format!("bad count `{count}`"),
            })?;
            counts.insert(
                (word.to_string(), PairKey { key: key.to_string(), value: value.to_string() }),
                count,
            );
        }
        if counts.len() != declared {
            return Err(IndexError::Malformed {
                line: 4,
                detail: format!("declared {declared} entries, found {}", counts.len()),
            });
        }

        let mut loaded = Self::from_counts(counts, &corpus_checksum);
        loaded.instance_count = instance_count;
        Ok(loaded)
    }
}
