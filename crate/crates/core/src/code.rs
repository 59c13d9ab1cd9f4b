//! Code identifiers.
//!
//! Codes are stored in canonical dot-free form (`E1165`) and rendered in
//! display form (`E11.65`), with the dot after the third character.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A code identifier in canonical (dot-free, upper-case) form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Code(String);

impl Code {
    /// Parses a dotted or canonical code. Returns `None` for strings that
    /// contain nothing but dots and whitespace.
    pub fn parse(raw: &str) -> Option<Code> {
        let canonical: String = raw
            .trim()
            .chars()
            .filter(|c| *c != '.')
            .map(|c| c.to_ascii_uppercase())
            .collect();
        if canonical.is_empty() || canonical.chars().any(|c| c.is_whitespace()) {
            None
        } else {
            Some(Code(canonical))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn display(&self) -> String {
        if self.0.len() > 3 {
            format!("{}.{}", &self.0[..3], &self.0[3..])
        } else {
            self.0.clone()
        }
    }

    /// True when `self` is a strict string prefix of `other`.
    pub fn is_strict_prefix_of(&self, other: &Code) -> bool {
        other.0.len() > self.0.len() && other.0.starts_with(&self.0)
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

impl Serialize for Code {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.display())
    }
}

impl<'de> Deserialize<'de> for Code {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        Code::parse(&raw).ok_or_else(|| serde::de::Error::custom(format!("invalid code {raw:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_and_canonical_forms_agree() {
        assert_eq!(Code::parse("E11.65"), Code::parse("E1165"));
        assert_eq!(Code::parse("e11.65").unwrap().as_str(), "E1165");
        assert_eq!(Code::parse("E1165").unwrap().display(), "E11.65");
        assert_eq!(Code::parse("I10").unwrap().display(), "I10");
        assert_eq!(Code::parse("S52501A").unwrap().display(), "S52.501A");
    }

    #[test]
    fn rejects_empty() {
        assert!(Code::parse("").is_none());
        assert!(Code::parse(" . ").is_none());
        assert!(Code::parse("E1 1").is_none());
    }

    #[test]
    fn serializes_display_form() {
        let c = Code::parse("E1165").unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"E11.65\"");
        let back: Code = serde_json::from_str("\"E11.65\"").unwrap();
        assert_eq!(back, c);
    }
}
