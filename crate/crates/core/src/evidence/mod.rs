//! Evidence extraction: find codeable mentions in clinical text with exact
//! character offsets.
//!
//! Two annotators share one [`Mention`] model: a deterministic lexicon
//! matcher built from the ontology, and an HTTP client for an external
//! (typically LLM-backed) annotator.

mod external;
mod lexicon;
pub mod stub;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{char_len, char_slice, tokenize, Token};

pub use external::{ExternalAnnotator, ExternalMention, ExternalRequest, ExternalResponse};
pub use lexicon::{Lexicon, LexiconPhrase, PhraseSource};

use lexicon::ModifierNode;

/// Tokens that mark the following mention as negated.
pub const NEGATION_CUES: &[&[&str]] = &[&["no"], &["denies"], &["without"], &["negative", "for"]];

/// Half-open character interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Span {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// True when `self` lies inside `other` and differs from it.
    pub fn strictly_within(&self, other: &Span) -> bool {
        other.start <= self.start && self.end <= other.end && self != other
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    #[serde(flatten)]
    pub span: Span,
    pub surface: String,
    pub normalized: String,
    pub qualifiers: Vec<String>,
    pub negated: bool,
}

impl Mention {
    /// Checks the span against `text`.
    pub fn is_valid_for(&self, text: &str) -> bool {
        self.span.start < self.span.end
            && self.span.end <= char_len(text)
            && char_slice(text, self.span.start, self.span.end) == Some(self.surface.as_str())
            && !self.normalized.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotatorMode {
    #[default]
    Lexicon,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotatorConfig {
    pub mode: AnnotatorMode,
    pub negation_window: usize,
    pub external_endpoint: Option<String>,
    pub max_inflight: usize,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig {
            mode: AnnotatorMode::Lexicon,
            negation_window: 3,
            external_endpoint: None,
            max_inflight: 4,
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }
}

impl AnnotatorConfig {
    pub fn external(endpoint: impl Into<String>) -> Self {
        AnnotatorConfig {
            mode: AnnotatorMode::External,
            external_endpoint: Some(endpoint.into()),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExtractionError> {
        if self.mode == AnnotatorMode::External && self.external_endpoint.is_none() {
            return Err(ExtractionError::InvalidConfig("external mode requires an endpoint".into()));
        }
        if self.max_inflight == 0 {
            return Err(ExtractionError::InvalidConfig("max_inflight must be positive".into()));
        }
        Ok(())
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("external annotator unavailable: {0}")]
    ExternalUnavailable(String),
    #[error("malformed annotator response: {0}")]
    MalformedResponse(String),
    #[error("invalid annotator configuration: {0}")]
    InvalidConfig(String),
}

/// Lexicon-mode extraction. Pure in `(text, lexicon, cfg)`.
pub fn extract_mentions(text: &str, lex: &Lexicon, cfg: &AnnotatorConfig) -> Vec<Mention> {
    let tokens = tokenize(text);
    let mut found: Vec<Candidate> = Vec::new();

    for i in 0..tokens.len() {
        let sentence = tokens[i].sentence;
        let run = tokens[i..].iter().take_while(|t| t.sentence == sentence).map(|t| t.text.as_str());
        for (len, phrase) in lex.prefix_matches(run) {
            found.push(Candidate {
                first: i,
                last: i + len,
                normalized: phrase.lead.clone(),
                qualifiers: phrase.qualifiers.clone(),
            });
        }
    }

    // Lead terms with modifiers adjacent on either side.
    let texts: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    for i in 0..tokens.len() {
        let sentence = tokens[i].sentence;
        for n in 1..=lex.max_lead_tokens.min(tokens.len() - i) {
            if tokens[i + n - 1].sentence != sentence {
                break;
            }
            if let Some(tree) = lex.leads.get(&texts[i..i + n]) {
                expand_modifiers(&tokens, i, i + n, &tree.modifiers, &mut Vec::new(), &tree.lead, &mut found);
            }
        }
    }

    let mentions = found
        .into_iter()
        .map(|c| {
            let span = Span::new(tokens[c.first].start, tokens[c.last - 1].end);
            Mention {
                surface: char_slice(text, span.start, span.end).unwrap_or_default().to_string(),
                span,
                normalized: c.normalized,
                qualifiers: c.qualifiers,
                negated: is_negated(&tokens, c.first, cfg.negation_window),
            }
        })
        .collect();
    select_maximal(mentions)
}

struct Candidate {
    first: usize,
    /// Exclusive token index.
    last: usize,
    normalized: String,
    qualifiers: Vec<String>,
}

fn expand_modifiers(
    tokens: &[Token],
    first: usize,
    last: usize,
    children: &[ModifierNode],
    path: &mut Vec<String>,
    lead: &str,
    out: &mut Vec<Candidate>,
) {
    let sentence = tokens[first].sentence;
    let matches_at = |at: usize, m: &ModifierNode| {
        at + m.tokens.len() <= tokens.len()
            && tokens[at..at + m.tokens.len()]
                .iter()
                .zip(&m.tokens)
                .all(|(t, l)| &t.text == l && t.sentence == sentence)
    };
    for m in children {
        let k = m.tokens.len();
        let mut spans = Vec::with_capacity(2);
        if matches_at(last, m) {
            spans.push((first, last + k));
        }
        if first >= k && matches_at(first - k, m) {
            spans.push((first - k, last));
        }
        for (f, l) in spans {
            path.push(m.label.clone());
            out.push(Candidate { first: f, last: l, normalized: lead.to_string(), qualifiers: path.clone() });
            expand_modifiers(tokens, f, l, &m.children, path, lead, out);
            path.pop();
        }
    }
}

fn is_negated(tokens: &[Token], first: usize, window: usize) -> bool {
    let sentence = tokens[first].sentence;
    let from = first.saturating_sub(window);
    let before: Vec<&str> = tokens[from..first]
        .iter()
        .filter(|t| t.sentence == sentence)
        .map(|t| t.text.as_str())
        .collect();
    NEGATION_CUES
        .iter()
        .any(|cue| before.windows(cue.len()).any(|w| w == *cue))
}

/// Drops mentions strictly inside another mention, keeps one mention per
/// identical span (smallest normalized term, then qualifiers) and sorts by
/// position.
pub fn select_maximal(mut mentions: Vec<Mention>) -> Vec<Mention> {
    mentions.sort_by(|a, b| {
        a.span
            .cmp(&b.span)
            .then_with(|| a.normalized.cmp(&b.normalized))
            .then_with(|| a.qualifiers.cmp(&b.qualifiers))
    });
    mentions.dedup_by(|later, earlier| later.span == earlier.span);
    let spans: Vec<Span> = mentions.iter().map(|m| m.span).collect();
    mentions.retain(|m| !spans.iter().any(|s| m.span.strictly_within(s)));
    mentions
}
