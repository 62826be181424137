//! Deterministic synthetic biography corpora with planted unsupported spans.
//!
//! Every instance describes a person with a name, nationality, and
//! occupation drawn from fixed pools, all present in the instance's table.
//! About 70% of references additionally carry a ", born in YEAR" span whose
//! year is *not* in the table and is too rare to co-occur meaningfully with
//! any table pair, so the span earns label 0 from the word labeler (roughly
//! 30% of all tokens). The corpora are used to study how mixing weights
//! steer a trained model toward or away from unsupported content.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    Corpus, EntityTable, Instance, KeyValuePair, ParsedSentence, Split, Token, Upos,
};

const FIRST_NAMES: [&str; 18] = [
    "ada", "boris", "carla", "dmitri", "elena", "farid", "greta", "hiro", "ines", "jonas",
    "karla", "liam", "mona", "nils", "oana", "petra", "quentin", "rosa",
];

const LAST_NAMES: [&str; 18] = [
    "abano", "bergmann", "castillo", "duarte", "eriksen", "fontaine", "garza", "holt",
    "ivanova", "jansen", "kovacs", "lindqvist", "moreau", "novak", "okafor", "petrov",
    "quirke", "rahman",
];

const OCCUPATIONS: [&str; 12] = [
    "architect", "botanist", "cartographer", "drummer", "engineer", "falconer", "geologist",
    "historian", "illustrator", "journalist", "linguist", "mathematician",
];

const NATIONALITIES: [&str; 10] = [
    "austrian", "brazilian", "canadian", "danish", "estonian", "finnish", "greek",
    "hungarian", "icelandic", "japanese",
];

/// Birth years: a wide pool keeps each year rare, so its co-occurrence count
/// with any table pair stays at or below the labeler's ramp threshold.
fn year_pool() -> Vec<String> {
    (1940..1980).map(|y| y.to_string()).collect()
}

/// Fraction of instances that carry the unsupported span.
const SPAN_FRACTION: f64 = 0.7;

fn base_tokens(first: &str, last: &str, nat: &str, occ: &str) -> Vec<Token> {
    vec![
        Token::new(first, Upos::Propn, 6, "nsubj"),
        Token::new(last, Upos::Propn, 1, "flat"),
        Token::new("is", Upos::Aux, 6, "cop"),
        Token::new("a", Upos::Det, 6, "det"),
        Token::new(nat, Upos::Adj, 6, "amod"),
        Token::new(occ, Upos::Noun, 0, "root"),
    ]
}

/// Builds a training corpus of `n` instances. Reruns with the same `n` and
/// `seed` are byte-identical after serialization.
pub fn divergent_corpus(n: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let years = year_pool();
    let mut instances = Vec::with_capacity(n);
    for i in 0..n {
        let first = *FIRST_NAMES.choose(&mut rng).unwrap();
        let last = *LAST_NAMES.choose(&mut rng).unwrap();
        let occ = *OCCUPATIONS.choose(&mut rng).unwrap();
        let nat = *NATIONALITIES.choose(&mut rng).unwrap();
        let with_span = rng.gen::<f64>() < SPAN_FRACTION;
        let year = years.choose(&mut rng).unwrap().clone();

        let mut tokens = base_tokens(first, last, nat, occ);
        if with_span {
            tokens.push(Token::new(",", Upos::Punct, 6, "punct"));
            tokens.push(Token::new("born", Upos::Verb, 6, "acl"));
            tokens.push(Token::new("in", Upos::Adp, 10, "case"));
            tokens.push(Token::new(&year, Upos::Num, 8, "obl"));
        }
        tokens.push(Token::new(".", Upos::Punct, 6, "punct"));

        let table = EntityTable::new(vec![
            KeyValuePair::new("name", &[first, last]),
            KeyValuePair::new("nationality", &[nat]),
            KeyValuePair::new("occupation", &[occ]),
        ]);
        instances.push(Instance {
            id: format!("synth-{i:04}"),
            table,
            reference: ParsedSentence::new(tokens),
        });
    }
    Corpus { split: Split::Train, instances }
}

fn lexicon_pos(surface: &str) -> Upos {
    if FIRST_NAMES.contains(&surface) || LAST_NAMES.contains(&surface) {
        Upos::Propn
    } else if OCCUPATIONS.contains(&surface) {
        Upos::Noun
    } else if NATIONALITIES.contains(&surface) {
        Upos::Adj
    } else if !surface.is_empty() && surface.chars().all(|c| c.is_ascii_digit()) {
        Upos::Num
    } else {
        match surface {
            "is" => Upos::Aux,
            "a" => Upos::Det,
            "born" => Upos::Verb,
            "in" | "from" => Upos::Adp,
            "," | "." => Upos::Punct,
            _ => Upos::X,
        }
    }
}

/// Rule-based analysis of a generated sentence over the synthetic lexicon.
///
/// Model output is not guaranteed to be grammatical, so every rule has a
/// fallback: the first occupation word (or failing that the first non-punct
/// token, or token one) is the root; "born" attaches to the root as a
/// clausal modifier; numbers attach to the latest "born" when present;
/// everything unrecognized hangs off the root. The result is always a valid
/// single-root tree.
pub fn parse_tokens(tokens: &[String]) -> ParsedSentence {
    if tokens.is_empty() {
        return ParsedSentence::new(Vec::new());
    }
    let root = tokens
        .iter()
        .position(|t| OCCUPATIONS.contains(&t.as_str()))
        .or_else(|| tokens.iter().position(|t| lexicon_pos(t) != Upos::Punct))
        .unwrap_or(0);
    let root_head = root + 1; // 1-based head pointer to the root token

    let mut parsed = Vec::with_capacity(tokens.len());
    let mut last_born: Option<usize> = None; // 1-based
    for (i, surface) in tokens.iter().enumerate() {
        let pos = lexicon_pos(surface);
        if i == root {
            parsed.push(Token::new(surface, pos, 0, "root"));
            continue;
        }
        let (head, deprel) = match pos {
            Upos::Verb if surface == "born" => {
                last_born = Some(i + 1);
                (root_head, "acl")
            }
            Upos::Num => match last_born {
                Some(b) => (b, "obl"),
                None => (root_head, "dep"),
            },
            Upos::Adp => {
                // Case marker for the next number, when one follows.
                match tokens[i + 1..]
                    .iter()
                    .position(|t| lexicon_pos(t) == Upos::Num)
                {
                    Some(offset) => (i + 1 + offset + 1, "case"),
                    None => (root_head, "dep"),
                }
            }
            Upos::Propn => {
                if i > 0 && lexicon_pos(&tokens[i - 1]) == Upos::Propn && i - 1 != root {
                    (i, "flat") // previous token, 1-based
                } else {
                    (root_head, "nsubj")
                }
            }
            Upos::Adj => (root_head, "amod"),
            Upos::Aux => (root_head, "cop"),
            Upos::Det => (root_head, "det"),
            Upos::Punct => (root_head, "punct"),
            _ => (root_head, "dep"),
        };
        parsed.push(Token::new(surface, pos, head, deprel));
    }
    ParsedSentence::new(parsed)
}
