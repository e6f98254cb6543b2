//! Word-level tokenization of instance text and mask-based reconstruction.
//!
//! Every instance is one or two raw segments (a single text, or a
//! premise/hypothesis pair). Tokens are numbered globally in reading order,
//! segment by segment, and a [`Mask`] over those global indices decides which
//! tokens survive when the text is rebuilt for a model call.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("input contains no tokens")]
    EmptyInput,
    #[error("expected 1 or 2 segments, got {0}")]
    SegmentArity(usize),
    #[error("mask length {got} does not match token count {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

/// A single word token and its byte range inside the source segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub span: Range<usize>,
}

/// Tokenized view of one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedInput {
    segments: Vec<Vec<Token>>,
    raw_segments: Vec<String>,
    n_tokens: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-')
}

/// Splits one segment into maximal alphanumeric runs. Apostrophes and hyphens
/// are kept only when both neighbours are word characters.
pub fn split_words(segment: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = segment.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if !is_word_char(chars[i].1) {
            i += 1;
            continue;
        }
        let start = chars[i].0;
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            if is_word_char(c) {
                j += 1;
            } else if is_joiner(c) && j + 1 < chars.len() && is_word_char(chars[j + 1].1) {
                j += 2;
            } else {
                break;
            }
        }
        let end = chars.get(j).map_or(segment.len(), |&(b, _)| b);
        tokens.push(Token {
            text: segment[start..end].to_string(),
            span: start..end,
        });
        i = j;
    }
    tokens
}

/// Tokenizes one or two raw segments.
pub fn tokenize<S: AsRef<str>>(raw_segments: &[S]) -> Result<TokenizedInput, TextError> {
    if raw_segments.is_empty() || raw_segments.len() > 2 {
        return Err(TextError::SegmentArity(raw_segments.len()));
    }
    if raw_segments.iter().any(|s| s.as_ref().trim().is_empty()) {
        return Err(TextError::EmptyInput);
    }
    let segments: Vec<Vec<Token>> = raw_segments
        .iter()
        .map(|s| split_words(s.as_ref()))
        .collect();
    let n_tokens = segments.iter().map(Vec::len).sum();
    if n_tokens == 0 {
        return Err(TextError::EmptyInput);
    }
    Ok(TokenizedInput {
        segments,
        raw_segments: raw_segments.iter().map(|s| s.as_ref().to_string()).collect(),
        n_tokens,
    })
}

impl TokenizedInput {
    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    pub fn raw_segments(&self) -> &[String] {
        &self.raw_segments
    }

    pub fn segments(&self) -> &[Vec<Token>] {
        &self.segments
    }

    /// Tokens in global index order.
    pub fn tokens(&self) -> impl Iterator<Item = &Token> + '_ {
        self.segments.iter().flatten()
    }

    /// Token texts in global index order.
    pub fn words(&self) -> Vec<&str> {
        self.tokens().map(|t| t.text.as_str()).collect()
    }

    pub fn token(&self, index: usize) -> Option<&Token> {
        self.tokens().nth(index)
    }

    /// Segment number that owns global token `index`.
    pub fn segment_of(&self, index: usize) -> Option<usize> {
        let mut offset = 0;
        for (s, seg) in self.segments.iter().enumerate() {
            if index < offset + seg.len() {
                return Some(s);
            }
            offset += seg.len();
        }
        None
    }

    /// Global index range covered by segment `s`.
    pub fn segment_range(&self, s: usize) -> Range<usize> {
        let start: usize = self.segments[..s].iter().map(Vec::len).sum();
        start..start + self.segments[s].len()
    }

    /// Text with every token kept: tokens joined by single spaces per segment.
    pub fn canonical(&self) -> Vec<String> {
        self.segments
            .iter()
            .map(|seg| join_tokens(seg.iter()))
            .collect()
    }

    /// Rebuilds the segment texts keeping only tokens whose mask bit is set.
    /// A segment with nothing kept becomes the empty string.
    pub fn reconstruct(&self, mask: &Mask) -> Result<Vec<String>, TextError> {
        if mask.len() != self.n_tokens {
            return Err(TextError::LengthMismatch {
                expected: self.n_tokens,
                got: mask.len(),
            });
        }
        let mut offset = 0;
        let mut out = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            let kept = seg
                .iter()
                .enumerate()
                .filter(|(i, _)| mask.is_kept(offset + i))
                .map(|(_, t)| t);
            out.push(join_tokens(kept));
            offset += seg.len();
        }
        Ok(out)
    }
}

fn join_tokens<'a>(tokens: impl Iterator<Item = &'a Token>) -> String {
    let mut s = String::new();
    for t in tokens {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(&t.text);
    }
    s
}

/// Keep/remove vector over global token indices (`true` = kept).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn all_keep(n: usize) -> Self {
        Mask(vec![true; n])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Mask(bits)
    }

    /// All tokens kept except the listed indices. Out-of-range indices are ignored.
    pub fn removing<'a>(n: usize, removed: impl IntoIterator<Item = &'a usize>) -> Self {
        let mut bits = vec![true; n];
        for &i in removed {
            if i < n {
                bits[i] = false;
            }
        }
        Mask(bits)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn kept_count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn removed(&self) -> BTreeSet<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| !b)
            .map(|(i, _)| i)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_segment_words() {
        let t = tokenize(&["He was a sloppy eater"]).unwrap();
        assert_eq!(t.words(), ["He", "was", "a", "sloppy", "eater"]);
        assert_eq!(t.n_tokens(), 5);
    }

    #[test]
    fn pair_global_indices() {
        let t = tokenize(&["A man leans.", "A man is touching a truck."]).unwrap();
        assert_eq!(t.n_segments(), 2);
        assert_eq!(t.n_tokens(), 9);
        assert_eq!(t.segment_range(0), 0..3);
        assert_eq!(t.segment_range(1), 3..9);
        assert_eq!(t.token(5).unwrap().text, "is");
        assert_eq!(t.segment_of(2), Some(0));
        assert_eq!(t.segment_of(3), Some(1));
        assert_eq!(t.segment_of(9), None);
    }

    #[test]
    fn interior_apostrophe_and_hyphen() {
        let t = tokenize(&["it's done"]).unwrap();
        assert_eq!(t.words(), ["it's", "done"]);
        let t = tokenize(&["an empty-handed 'adult' -- walks-"]).unwrap();
        assert_eq!(t.words(), ["an", "empty-handed", "adult", "walks"]);
    }

    #[test]
    fn punctuation_dropped_but_raw_kept() {
        let t = tokenize(&["Where is it?"]).unwrap();
        assert_eq!(t.words(), ["Where", "is", "it"]);
        assert_eq!(t.raw_segments(), ["Where is it?"]);
        assert_eq!(t.token(2).unwrap().span, 9..11);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert_eq!(tokenize(&["..."]).unwrap_err(), TextError::EmptyInput);
        assert_eq!(tokenize(&["   "]).unwrap_err(), TextError::EmptyInput);
        assert_eq!(
            tokenize::<&str>(&[]).unwrap_err(),
            TextError::SegmentArity(0)
        );
        assert_eq!(
            tokenize(&["a", "b", "c"]).unwrap_err(),
            TextError::SegmentArity(3)
        );
        // one punctuation-only segment is fine as long as the other has tokens
        assert_eq!(tokenize(&["?!", "yes"]).unwrap().n_tokens(), 1);
    }

    #[test]
    fn reconstruct_cases() {
        let t = tokenize(&["He was a sloppy eater"]).unwrap();
        assert_eq!(
            t.reconstruct(&Mask::all_keep(5)).unwrap(),
            ["He was a sloppy eater"]
        );
        assert_eq!(
            t.reconstruct(&Mask::removing(5, &[3, 4])).unwrap(),
            ["He was a"]
        );
        assert_eq!(
            t.reconstruct(&Mask::all_keep(4)).unwrap_err(),
            TextError::LengthMismatch {
                expected: 5,
                got: 4
            }
        );

        let pair = tokenize(&["A man leans.", "A man is touching a truck."]).unwrap();
        let mask = Mask::removing(9, &[3, 4, 5, 6, 7, 8]);
        assert_eq!(pair.reconstruct(&mask).unwrap(), ["A man leans", ""]);
    }

    #[test]
    fn mask_helpers() {
        let m = Mask::removing(4, &[1, 3, 9]);
        assert_eq!(m.bits(), [true, false, true, false]);
        assert_eq!(m.kept_count(), 2);
        assert_eq!(m.removed().into_iter().collect::<Vec<_>>(), [1, 3]);
    }

    fn segment_strategy() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9 ,.;!?'\\-]{1,60}".prop_filter("needs a word", |s| {
            s.chars().any(char::is_alphanumeric)
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_canonical(a in segment_strategy(), b in segment_strategy()) {
            let t = tokenize(&[a.clone(), b.clone()]).unwrap();
            let full = t.reconstruct(&Mask::all_keep(t.n_tokens())).unwrap();
            prop_assert_eq!(&full, &t.canonical());
            // canonical text tokenizes to the same words
            let again = tokenize(&full).unwrap();
            prop_assert_eq!(again.words(), t.words());
        }

        #[test]
        fn spans_increase_within_segment(a in segment_strategy()) {
            let t = tokenize(std::slice::from_ref(&a)).unwrap();
            let mut last_end = 0;
            for tok in t.tokens() {
                prop_assert!(tok.span.start >= last_end);
                prop_assert!(tok.span.end > tok.span.start);
                prop_assert!(tok.span.end <= a.len());
                prop_assert_eq!(&a[tok.span.clone()], tok.text.as_str());
                last_end = tok.span.end;
            }
        }

        #[test]
        fn reconstruction_never_grows(a in segment_strategy(), bits in proptest::collection::vec(any::<bool>(), 0..40)) {
            let t = tokenize(&[a]).unwrap();
            let mut bits = bits;
            bits.resize(t.n_tokens(), true);
            let mask = Mask::from_bits(bits);
            let out = t.reconstruct(&mask).unwrap();
            let count: usize = out.iter().map(|s| split_words(s).len()).sum();
            prop_assert!(count <= mask.kept_count());
        }
    }
}
