//! Surface statistics: mean output length and Flesch reading ease.

use super::MetricsError;

/// Mean token count per output, punctuation included.
pub fn mean_length(outputs: &[Vec<String>]) -> Result<f64, MetricsError> {
    if outputs.is_empty() {
        return Err(MetricsError::NoOutputs);
    }
    let total: usize = outputs.iter().map(Vec::len).sum();
    Ok(total as f64 / outputs.len() as f64)
}

/// A token counts as a word when it carries at least one alphanumeric
/// character; bare punctuation does not.
fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Deterministic syllable heuristic: count maximal vowel clusters
/// (`aeiouy`), subtract a word-final silent `e` unless the word ends in a
/// consonant + `le`, and never go below one syllable per word.
pub fn syllables(word: &str) -> usize {
    let lower = word.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut clusters = 0usize;
    let mut in_cluster = false;
    for &c in &chars {
        if is_vowel(c) {
            if !in_cluster {
                clusters += 1;
            }
            in_cluster = true;
        } else {
            in_cluster = false;
        }
    }

    let n = chars.len();
    if n >= 1 && chars[n - 1] == 'e' {
        let consonant_le = n >= 3
            && chars[n - 2] == 'l'
            && chars[n - 3].is_alphabetic()
            && !is_vowel(chars[n - 3]);
        if !consonant_le {
            clusters = clusters.saturating_sub(1);
        }
    }
    clusters.max(1)
}

/// Flesch reading ease: `206.835 − 1.015·(words/sentences) −
/// 84.6·(syllables/word)`. Each output is one sentence; punctuation tokens
/// count neither as words nor toward syllables. Doubling the corpus leaves
/// the score unchanged.
pub fn flesch(outputs: &[Vec<String>]) -> Result<f64, MetricsError> {
    if outputs.is_empty() {
        return Err(MetricsError::NoOutputs);
    }
    let sentences = outputs.len() as f64;
    let mut words = 0u64;
    let mut syllable_total = 0u64;
    for sentence in outputs {
        for token in sentence {
            if is_word(token) {
                words += 1;
                syllable_total += syllables(token) as u64;
            }
        }
    }
    if words == 0 {
        return Err(MetricsError::NoWords);
    }
    Ok(206.835 - 1.015 * (words as f64 / sentences) - 84.6 * (syllable_total as f64 / words as f64))
}
