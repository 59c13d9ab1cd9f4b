//! Tokenization shared by extraction and the span metrics.
//!
//! Tokens are maximal runs of alphanumeric characters; everything else
//! (whitespace, punctuation, symbols) separates them. All offsets are
//! character offsets, not byte offsets.

/// A token with its half-open character interval in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lower-cased token text.
    pub text: String,
    pub start: usize,
    pub end: usize,
    /// Zero-based sentence index.
    pub sentence: usize,
}

/// Splits `text` into lower-cased tokens.
///
/// A sentence ends at `.`, `!` or `?` followed by whitespace, and at a
/// blank line.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut sentence = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_alphanumeric() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let text: String = chars[start..i].iter().flat_map(|c| c.to_lowercase()).collect();
            tokens.push(Token { text, start, end: i, sentence });
            continue;
        }
        let next_is_space = chars.get(i + 1).is_some_and(|n| n.is_whitespace());
        let blank_line = c == '\n' && chars.get(i + 1) == Some(&'\n');
        if (matches!(c, '.' | '!' | '?') && next_is_space) || blank_line {
            sentence += 1;
        }
        i += 1;
    }
    tokens
}

/// Token texts only.
pub fn token_texts(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|t| t.text).collect()
}

/// Lower-cases, strips punctuation and collapses whitespace.
///
/// `normalize("Essential (primary) hypertension") == "essential primary hypertension"`
pub fn normalize(text: &str) -> String {
    token_texts(text).join(" ")
}

/// Character length of `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring by character interval. Returns `None` when out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let begin = indices.nth(start)?;
    if end == start {
        return Some(&text[begin..begin]);
    }
    let finish = indices.nth(end - start - 1)?;
    Some(&text[begin..finish])
}
