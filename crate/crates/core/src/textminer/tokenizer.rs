//! Rule-based tokenizer with exact character-offset bookkeeping.
//!
//! Splits on whitespace and punctuation boundaries: alphanumeric runs form
//! tokens and every other non-whitespace character is a single-character
//! token. All offsets are character (not byte) offsets.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    pub start: usize,
    pub end: usize,
}

/// Tokens with non-overlapping, strictly increasing offsets; each token maps
/// back to its exact substring of the source text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence {
    tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    fn flush(tokens: &mut Vec<Token>, run_start: &mut Option<usize>, run: &mut String, end: usize) {
        if let Some(start) = run_start.take() {
            tokens.push(Token {
                surface: std::mem::take(run),
                start,
                end,
            });
        }
    }

    let mut tokens = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut run = String::new();
    let mut char_len = 0;
    for (idx, ch) in text.chars().enumerate() {
        char_len = idx + 1;
        if ch.is_whitespace() {
            flush(&mut tokens, &mut run_start, &mut run, idx);
        } else if ch.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(idx);
            }
            run.push(ch);
        } else {
            flush(&mut tokens, &mut run_start, &mut run, idx);
            tokens.push(Token {
                surface: ch.to_string(),
                start: idx,
                end: idx + 1,
            });
        }
    }
    flush(&mut tokens, &mut run_start, &mut run, char_len);

    TokenSequence { tokens }
}

/// Deterministic FNV-1a hash of the lowercased surface, reduced to a bucket.
pub(crate) fn token_bucket(surface: &str, buckets: usize) -> usize {
    debug_assert!(buckets > 0);
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in surface.to_lowercase().bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_on_whitespace_and_punctuation() {
        let seq = tokenize("cool-jazz saxophone");
        let got: Vec<(&str, usize, usize)> = seq
            .tokens()
            .iter()
            .map(|t| (t.surface.as_str(), t.start, t.end))
            .collect();
        assert_eq!(
            got,
            vec![("cool", 0, 4), ("-", 4, 5), ("jazz", 5, 9), ("saxophone", 10, 19)]
        );
    }

    #[test]
    fn empty_text_yields_empty_sequence() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn single_word() {
        let seq = tokenize("piano");
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.tokens()[0].start, 0);
        assert_eq!(seq.tokens()[0].end, 5);
    }

    #[test]
    fn offsets_are_character_based() {
        // 'é' is multi-byte but a single char.
        let seq = tokenize("café au");
        assert_eq!(seq.tokens()[0].surface, "café");
        assert_eq!(seq.tokens()[0].end, 4);
        assert_eq!(seq.tokens()[1].start, 5);
    }

    #[test]
    fn surfaces_match_source_substrings() {
        let text = "It's a 3/4 waltz, really.";
        let chars: Vec<char> = text.chars().collect();
        for t in tokenize(text).tokens() {
            let sub: String = chars[t.start..t.end].iter().collect();
            assert_eq!(sub, t.surface);
        }
    }

    #[test]
    fn bucket_is_stable_and_case_insensitive() {
        assert_eq!(token_bucket("Jazz", 512), token_bucket("jazz", 512));
        let b = token_bucket("saxophone", 512);
        assert!(b < 512);
        assert_eq!(b, token_bucket("saxophone", 512));
    }
}
