use std::collections::{HashMap, HashSet};

use thiserror::Error;

use super::types::{IndexEntry, Modifier, NoteKind, NoteTarget, OntologyDoc};
use super::MAX_DEPTH;
use crate::code::Code;
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("empty ontology")]
    EmptyOntology,
    #[error("duplicate code {0}")]
    DuplicateCode(String),
    #[error("code {code} has unknown parent {parent}")]
    DanglingParent { code: String, parent: String },
    #[error("parent {parent} of {code} is not a strict prefix of it")]
    ParentNotPrefix { code: String, parent: String },
    #[error("cyclic parent chain at {0}")]
    CyclicParent(String),
    #[error("code {0} is deeper than the maximum hierarchy depth")]
    TooDeep(String),
    #[error("billable code {0} has children")]
    BillableWithChildren(String),
    #[error("non-billable code {0} has no children")]
    NonBillableLeaf(String),
    #[error("note on {code} targets {target}, which matches no code")]
    MissingNoteTarget { code: String, target: String },
    #[error("inclusion term on {0} must not carry targets")]
    InclusionTermWithTargets(String),
    #[error("inclusion term on {0} has no text")]
    InclusionTermWithoutText(String),
    #[error("invalid seventh-character rule on {code}: {reason}")]
    InvalidSeventhChar { code: String, reason: String },
    #[error("index lead term {lead:?} references unknown code {code}")]
    UnknownIndexCode { lead: String, code: String },
    #[error("duplicate index lead term {0:?}")]
    DuplicateLeadTerm(String),
    #[error("empty index term under lead {0:?}")]
    EmptyTerm(String),
    #[error("lead term {lead:?} has see-also to unknown lead term {target:?}")]
    DanglingSeeAlso { lead: String, target: String },
}

/// Normalizes and checks a parsed document. Codes come back sorted by
/// canonical code, index entries by lead term.
pub(super) fn validate(mut doc: OntologyDoc) -> Result<OntologyDoc, ValidationError> {
    if doc.codes.is_empty() {
        return Err(ValidationError::EmptyOntology);
    }
    doc.codes.sort_by(|a, b| a.code.cmp(&b.code));
    for pair in doc.codes.windows(2) {
        if pair[0].code == pair[1].code {
            return Err(ValidationError::DuplicateCode(pair[0].code.display()));
        }
    }
    let position: HashMap<&Code, usize> = doc.codes.iter().enumerate().map(|(i, c)| (&c.code, i)).collect();

    let mut child_count = vec![0usize; doc.codes.len()];
    for entry in &doc.codes {
        if let Some(parent) = &entry.parent {
            let Some(&pi) = position.get(parent) else {
                return Err(ValidationError::DanglingParent {
                    code: entry.code.display(),
                    parent: parent.display(),
                });
            };
            if !parent.is_strict_prefix_of(&entry.code) {
                return Err(ValidationError::ParentNotPrefix {
                    code: entry.code.display(),
                    parent: parent.display(),
                });
            }
            child_count[pi] += 1;
        }
    }

    for entry in &doc.codes {
        let mut depth = 1;
        let mut cursor = entry.parent.as_ref();
        while let Some(p) = cursor {
            depth += 1;
            if p == &entry.code || depth > doc.codes.len() {
                return Err(ValidationError::CyclicParent(entry.code.display()));
            }
            if depth > MAX_DEPTH {
                return Err(ValidationError::TooDeep(entry.code.display()));
            }
            cursor = doc.codes[position[p]].parent.as_ref();
        }
    }

    for (entry, &n) in doc.codes.iter().zip(&child_count) {
        if entry.billable && n > 0 {
            return Err(ValidationError::BillableWithChildren(entry.code.display()));
        }
        if !entry.billable && n == 0 {
            return Err(ValidationError::NonBillableLeaf(entry.code.display()));
        }
    }

    for entry in &doc.codes {
        for note in &entry.notes {
            if note.kind == NoteKind::InclusionTerm {
                if !note.targets.is_empty() {
                    return Err(ValidationError::InclusionTermWithTargets(entry.code.display()));
                }
                if note.text.as_deref().is_none_or(|t| normalize(t).is_empty()) {
                    return Err(ValidationError::InclusionTermWithoutText(entry.code.display()));
                }
            }
            for target in &note.targets {
                let resolves = match target {
                    NoteTarget::Code(c) => position.contains_key(c),
                    NoteTarget::Prefix(p) => {
                        let i = doc.codes.partition_point(|e| e.code.as_str() < p.as_str());
                        doc.codes.get(i).is_some_and(|e| e.code.as_str().starts_with(p.as_str()))
                    }
                };
                if !resolves {
                    return Err(ValidationError::MissingNoteTarget {
                        code: entry.code.display(),
                        target: target.to_string(),
                    });
                }
            }
        }
        if let Some(rule) = &entry.seventh_char {
            let invalid = |reason: &str| ValidationError::InvalidSeventhChar {
                code: entry.code.display(),
                reason: reason.to_string(),
            };
            if rule.allowed.is_empty() {
                return Err(invalid("no allowed characters"));
            }
            if rule.allowed.contains_key(&rule.placeholder) {
                return Err(invalid("placeholder is also an allowed character"));
            }
            if entry.code.len() > 6 {
                return Err(invalid("base code longer than six characters"));
            }
        }
    }

    for entry in &mut doc.index {
        normalize_entry(entry)?;
    }
    doc.index.sort_by(|a, b| a.lead_term.cmp(&b.lead_term));
    for pair in doc.index.windows(2) {
        if pair[0].lead_term == pair[1].lead_term {
            return Err(ValidationError::DuplicateLeadTerm(pair[0].lead_term.clone()));
        }
    }
    let leads: HashSet<&str> = doc.index.iter().map(|e| e.lead_term.as_str()).collect();
    for entry in &doc.index {
        if let Some(target) = &entry.see_also {
            if !leads.contains(target.as_str()) {
                return Err(ValidationError::DanglingSeeAlso {
                    lead: entry.lead_term.clone(),
                    target: target.clone(),
                });
            }
        }
        let referenced = entry
            .default_code
            .iter()
            .chain(entry.modifier_paths().into_iter().filter_map(|(_, m)| m.code.as_ref()));
        for code in referenced {
            if !position.contains_key(code) {
                return Err(ValidationError::UnknownIndexCode {
                    lead: entry.lead_term.clone(),
                    code: code.display(),
                });
            }
        }
    }
    Ok(doc)
}

fn normalize_entry(entry: &mut IndexEntry) -> Result<(), ValidationError> {
    fn normalize_modifiers(lead: &str, modifiers: &mut [Modifier]) -> Result<(), ValidationError> {
        for m in modifiers.iter_mut() {
            m.label = normalize(&m.label);
            if m.label.is_empty() {
                return Err(ValidationError::EmptyTerm(lead.to_string()));
            }
            normalize_modifiers(lead, &mut m.children)?;
        }
        Ok(())
    }
    let raw = entry.lead_term.clone();
    entry.lead_term = normalize(&entry.lead_term);
    if entry.lead_term.is_empty() {
        return Err(ValidationError::EmptyTerm(raw));
    }
    entry.see_also = entry.see_also.as_deref().map(normalize);
    normalize_modifiers(&entry.lead_term, &mut entry.modifiers)
}
