use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::code::Code;

/// The canonical on-disk document. Field order matches the file format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OntologyDoc {
    pub system_id: String,
    pub version: String,
    pub codes: Vec<CodeEntry>,
    #[serde(default)]
    pub index: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub code: Code,
    pub title: String,
    #[serde(default)]
    pub parent: Option<Code>,
    pub billable: bool,
    #[serde(default)]
    pub notes: Vec<Note>,
    #[serde(default)]
    pub seventh_char: Option<SeventhCharRule>,
}

impl CodeEntry {
    pub fn display_code(&self) -> String {
        self.code.display()
    }

    /// Texts of `inclusion_term` notes.
    pub fn inclusion_terms(&self) -> impl Iterator<Item = &str> {
        self.notes
            .iter()
            .filter(|n| n.kind == NoteKind::InclusionTerm)
            .filter_map(|n| n.text.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteKind {
    Excludes1,
    Excludes2,
    Includes,
    CodeFirst,
    UseAdditional,
    InclusionTerm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub kind: NoteKind,
    #[serde(default)]
    pub targets: Vec<NoteTarget>,
    #[serde(default)]
    pub text: Option<String>,
}

/// A note target: an exact code, or a prefix pattern written `E10.-`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NoteTarget {
    Code(Code),
    Prefix(Code),
}

impl NoteTarget {
    pub fn parse(raw: &str) -> Option<NoteTarget> {
        let trimmed = raw.trim();
        match trimmed.strip_suffix('-') {
            Some(stem) => Code::parse(stem.trim_end_matches('.')).map(NoteTarget::Prefix),
            None => Code::parse(trimmed).map(NoteTarget::Code),
        }
    }

    pub fn code(&self) -> &Code {
        match self {
            NoteTarget::Code(c) | NoteTarget::Prefix(c) => c,
        }
    }
}

impl fmt::Display for NoteTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoteTarget::Code(c) => write!(f, "{c}"),
            NoteTarget::Prefix(c) => {
                let d = c.display();
                if d.contains('.') {
                    write!(f, "{d}-")
                } else {
                    write!(f, "{d}.-")
                }
            }
        }
    }
}

impl Serialize for NoteTarget {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NoteTarget {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        NoteTarget::parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid note target {raw:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeventhCharRule {
    pub allowed: BTreeMap<char, String>,
    pub placeholder: char,
}

impl SeventhCharRule {
    /// Pads a base code with the placeholder up to six characters.
    pub fn pad(&self, base: &Code) -> String {
        let mut s = base.as_str().to_string();
        while s.chars().count() < 6 {
            s.push(self.placeholder);
        }
        s
    }

    /// The character whose meaning names `episode` (case-insensitive),
    /// falling back to the first allowed character in key order.
    pub fn character_for(&self, episode: Option<&str>) -> char {
        episode
            .and_then(|ep| {
                self.allowed
                    .iter()
                    .find(|(_, meaning)| meaning.eq_ignore_ascii_case(ep))
                    .map(|(c, _)| *c)
            })
            .or_else(|| self.allowed.keys().next().copied())
            .expect("validated rule has at least one allowed character")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub lead_term: String,
    #[serde(default)]
    pub default_code: Option<Code>,
    #[serde(default)]
    pub see_also: Option<String>,
    #[serde(default)]
    pub modifiers: Vec<Modifier>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modifier {
    pub label: String,
    #[serde(default)]
    pub code: Option<Code>,
    #[serde(default)]
    pub children: Vec<Modifier>,
}

impl IndexEntry {
    /// Every root-to-node modifier path, depth first, with the node.
    pub fn modifier_paths(&self) -> Vec<(Vec<&str>, &Modifier)> {
        fn walk<'a>(nodes: &'a [Modifier], prefix: &mut Vec<&'a str>, out: &mut Vec<(Vec<&'a str>, &'a Modifier)>) {
            for m in nodes {
                prefix.push(&m.label);
                out.push((prefix.clone(), m));
                walk(&m.children, prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        walk(&self.modifiers, &mut Vec::new(), &mut out);
        out
    }
}
