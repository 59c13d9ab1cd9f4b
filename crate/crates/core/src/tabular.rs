//! Descent from an index location to the most precise billable code.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::Code;
use crate::ontology::{CodeEntry, Ontology};
use crate::text::token_texts;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidatedCode {
    pub code: Code,
    /// From the input location down to the billable base code.
    pub path: Vec<Code>,
    pub applied_seventh: Option<char>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Episode {
    Initial,
    Subsequent,
    Sequela,
}

impl Episode {
    pub fn as_str(self) -> &'static str {
        match self {
            Episode::Initial => "initial",
            Episode::Subsequent => "subsequent",
            Episode::Sequela => "sequela",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TabularError {
    #[error("unknown location {0}")]
    UnknownLocation(String),
    #[error("no billable code under {0}")]
    NoBillableDescendant(String),
}

/// Title phrases preferred when no qualifier token matches any sibling.
pub const UNSPECIFIED_MARKERS: &[&str] = &["unspecified", "without complications"];

pub fn validate_tabular(
    o: &Ontology,
    location: &Code,
    qualifiers: &[String],
    episode: Option<Episode>,
) -> Result<ValidatedCode, TabularError> {
    let mut node = o.get(location).ok_or_else(|| TabularError::UnknownLocation(location.display()))?;
    let wanted = qualifier_tokens(qualifiers);
    let mut path = vec![node.code.clone()];
    while !node.billable {
        let children: Vec<&CodeEntry> = o.children_of(&node.code).collect();
        node = pick(&children, &wanted).ok_or_else(|| TabularError::NoBillableDescendant(location.display()))?;
        path.push(node.code.clone());
    }
    let (code, applied_seventh) = match o.seventh_char_rule(&node.code) {
        Some(rule) => {
            let ch = rule.character_for(episode.map(Episode::as_str));
            let code = Code::parse(&format!("{}{ch}", rule.pad(&node.code))).expect("non-empty code");
            (code, Some(ch))
        }
        None => (node.code.clone(), None),
    };
    Ok(ValidatedCode { code, path, applied_seventh })
}

pub(crate) fn qualifier_tokens(qualifiers: &[String]) -> BTreeSet<String> {
    qualifiers.iter().flat_map(|q| token_texts(q)).collect()
}

/// Number of distinct qualifier tokens present in the entry's title or in
/// one of its inclusion terms, whichever is larger.
pub fn overlap(entry: &CodeEntry, wanted: &BTreeSet<String>) -> usize {
    std::iter::once(entry.title.as_str())
        .chain(entry.inclusion_terms())
        .map(|t| {
            let have: BTreeSet<String> = token_texts(t).into_iter().collect();
            wanted.intersection(&have).count()
        })
        .max()
        .unwrap_or(0)
}

/// True when the title names the unspecified or uncomplicated variant.
pub fn is_unspecified(entry: &CodeEntry) -> bool {
    let title = token_texts(&entry.title).join(" ");
    UNSPECIFIED_MARKERS.iter().any(|m| {
        title == *m || title.starts_with(&format!("{m} ")) || title.ends_with(&format!(" {m}")) || title.contains(&format!(" {m} "))
    })
}

/// Best entry under the sibling policy: highest overlap; when nothing
/// overlaps, unspecified titles first; then smallest code.
pub fn pick<'a>(entries: &[&'a CodeEntry], wanted: &BTreeSet<String>) -> Option<&'a CodeEntry> {
    let scored: Vec<(usize, &CodeEntry)> = entries.iter().map(|e| (overlap(e, wanted), *e)).collect();
    let best = scored.iter().map(|(s, _)| *s).max()?;
    let mut top: Vec<&CodeEntry> = scored.iter().filter(|(s, _)| *s == best).map(|(_, e)| *e).collect();
    if best == 0 && top.iter().any(|e| is_unspecified(e)) {
        top.retain(|e| is_unspecified(e));
    }
    top.into_iter().min_by(|a, b| a.code.cmp(&b.code))
}
