//! Coding-system ontology: tabular hierarchy, alphabetic index and
//! instructional notes.
//!
//! An [`Ontology`] is immutable once loaded. A new release is a new
//! `Ontology` value.

mod icd10cm_xml;
mod types;
mod validate;

use std::collections::{BTreeSet, HashMap};
use std::io::Read;

use thiserror::Error;

use crate::code::Code;
use crate::fuzzy::DeleteIndex;

pub use types::{CodeEntry, IndexEntry, Modifier, Note, NoteKind, NoteTarget, OntologyDoc, SeventhCharRule};
pub use validate::ValidationError;

/// Maximum number of hierarchy levels, counting the root as level 1.
pub const MAX_DEPTH: usize = 8;

/// Maximum lead-term edit distance served by [`Ontology::fuzzy_leads`].
pub const FUZZY_LEAD_DISTANCE: usize = 2;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("unknown code {0}")]
    UnknownCode(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Supported input formats for [`load_ontology`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OntologyFormat {
    CanonicalJson,
    Icd10cmXml,
}

/// Reads, parses and validates an ontology.
pub fn load_ontology<R: Read>(mut source: R, format: OntologyFormat) -> Result<Ontology, OntologyError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| OntologyError::Parse {
        offset: e.valid_up_to(),
        message: "input is not valid UTF-8".to_string(),
    })?;
    let doc = match format {
        OntologyFormat::CanonicalJson => parse_json(text)?,
        OntologyFormat::Icd10cmXml => icd10cm_xml::parse(text)?,
    };
    Ok(Ontology::from_doc(doc)?)
}

fn parse_json(text: &str) -> Result<OntologyDoc, OntologyError> {
    serde_json::from_str(text).map_err(|e| OntologyError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = text.split_inclusive('\n').take(line - 1).map(str::len).sum();
    (line_start + column.saturating_sub(1)).min(text.len())
}

/// A validated, immutable coding system.
#[derive(Debug, Clone)]
pub struct Ontology {
    system_id: String,
    version: String,
    /// Sorted by canonical code.
    codes: Vec<CodeEntry>,
    index: Vec<IndexEntry>,
    by_code: HashMap<Code, usize>,
    children: Vec<Vec<usize>>,
    by_lead: HashMap<String, usize>,
    leads: DeleteIndex,
    excludes1: HashMap<Code, BTreeSet<Code>>,
    code_first: HashMap<Code, BTreeSet<Code>>,
}

impl PartialEq for Ontology {
    fn eq(&self, other: &Self) -> bool {
        self.system_id == other.system_id
            && self.version == other.version
            && self.codes == other.codes
            && self.index == other.index
    }
}

/// A code that may be assigned: a billable entry, optionally extended by a
/// seventh character.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignable<'a> {
    pub entry: &'a CodeEntry,
    pub seventh: Option<char>,
}

impl Ontology {
    /// Validates a parsed document and builds the lookup structures.
    pub fn from_doc(doc: OntologyDoc) -> Result<Ontology, ValidationError> {
        let validated = validate::validate(doc)?;
        let mut o = Ontology {
            system_id: validated.system_id,
            version: validated.version,
            codes: validated.codes,
            index: validated.index,
            by_code: HashMap::new(),
            children: Vec::new(),
            by_lead: HashMap::new(),
            leads: DeleteIndex::default(),
            excludes1: HashMap::new(),
            code_first: HashMap::new(),
        };
        o.by_code = o.codes.iter().enumerate().map(|(i, c)| (c.code.clone(), i)).collect();
        o.children = vec![Vec::new(); o.codes.len()];
        for (i, entry) in o.codes.iter().enumerate() {
            if let Some(p) = &entry.parent {
                let pi = o.by_code[p];
                o.children[pi].push(i);
            }
        }
        o.by_lead = o.index.iter().enumerate().map(|(i, e)| (e.lead_term.clone(), i)).collect();
        o.leads = DeleteIndex::new(o.index.iter().map(|e| e.lead_term.clone()), FUZZY_LEAD_DISTANCE);
        let mut excludes1 = HashMap::new();
        let mut code_first = HashMap::new();
        for entry in &o.codes {
            for note in &entry.notes {
                let slot = match note.kind {
                    NoteKind::Excludes1 => &mut excludes1,
                    NoteKind::CodeFirst => &mut code_first,
                    _ => continue,
                };
                let set: &mut BTreeSet<Code> = slot.entry(entry.code.clone()).or_default();
                for target in &note.targets {
                    set.extend(o.expand_target(target).cloned());
                }
            }
        }
        o.excludes1 = excludes1;
        o.code_first = code_first;
        Ok(o)
    }

    pub fn to_doc(&self) -> OntologyDoc {
        OntologyDoc {
            system_id: self.system_id.clone(),
            version: self.version.clone(),
            codes: self.codes.clone(),
            index: self.index.clone(),
        }
    }

    /// Serializes to the canonical JSON format.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("ontology serialization is infallible")
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn codes(&self) -> &[CodeEntry] {
        &self.codes
    }

    pub fn index(&self) -> &[IndexEntry] {
        &self.index
    }

    /// Looks up a code in dotted or canonical form.
    pub fn get_code(&self, code: &str) -> Option<&CodeEntry> {
        Code::parse(code).and_then(|c| self.get(&c))
    }

    pub fn get(&self, code: &Code) -> Option<&CodeEntry> {
        self.by_code.get(code).map(|&i| &self.codes[i])
    }

    pub fn contains(&self, code: &Code) -> bool {
        self.by_code.contains_key(code)
    }

    /// Direct children in lexicographic code order.
    pub fn children(&self, code: &str) -> Result<Vec<&CodeEntry>, OntologyError> {
        let c = Code::parse(code).ok_or_else(|| OntologyError::UnknownCode(code.to_string()))?;
        let i = *self.by_code.get(&c).ok_or_else(|| OntologyError::UnknownCode(code.to_string()))?;
        Ok(self.children[i].iter().map(|&k| &self.codes[k]).collect())
    }

    pub(crate) fn children_of(&self, code: &Code) -> impl Iterator<Item = &CodeEntry> {
        self.by_code
            .get(code)
            .into_iter()
            .flat_map(move |&i| self.children[i].iter().map(move |&k| &self.codes[k]))
    }

    /// The entry and its ancestors, nearest first.
    pub fn ancestors_or_self<'a>(&'a self, code: &Code) -> impl Iterator<Item = &'a CodeEntry> + 'a {
        std::iter::successors(self.get(code), move |e| e.parent.as_ref().and_then(|p| self.get(p)))
    }

    /// Resolves a code that may carry a seventh-character extension.
    pub fn assignable(&self, code: &Code) -> Option<Assignable<'_>> {
        if let Some(entry) = self.get(code) {
            return entry.billable.then_some(Assignable { entry, seventh: None });
        }
        let s = code.as_str();
        if s.chars().count() != 7 {
            return None;
        }
        let (head, last) = s.split_at(s.len() - 1);
        let seventh = last.chars().next()?;
        let rule_holder = |base: &Code| self.ancestors_or_self(base).find_map(|e| e.seventh_char.as_ref());
        // The base may itself end in placeholder characters.
        let mut base = head.to_string();
        loop {
            if let Some(entry) = Code::parse(&base).and_then(|b| self.get(&b)) {
                let rule = rule_holder(&entry.code)?;
                let padded = rule.pad(&entry.code);
                let ok = entry.billable && rule.allowed.contains_key(&seventh) && padded == head;
                return ok.then_some(Assignable { entry, seventh: Some(seventh) });
            }
            match base.pop() {
                Some(_) if !base.is_empty() => continue,
                _ => return None,
            }
        }
    }

    /// Hierarchy chain of a possibly extended code: the extended code's
    /// base entry and its ancestors, nearest first.
    pub fn chain<'a>(&'a self, code: &Code) -> Vec<&'a CodeEntry> {
        match self.assignable(code) {
            Some(a) => self.ancestors_or_self(&a.entry.code).collect(),
            None => self.ancestors_or_self(code).collect(),
        }
    }

    /// Nearest seventh-character rule on the code or an ancestor.
    pub fn seventh_char_rule(&self, code: &Code) -> Option<&SeventhCharRule> {
        self.ancestors_or_self(code).find_map(|e| e.seventh_char.as_ref())
    }

    /// Expanded excludes1 targets carried by exactly this code.
    pub fn excludes1_of(&self, code: &Code) -> Option<&BTreeSet<Code>> {
        self.excludes1.get(code)
    }

    /// Expanded code-first targets carried by exactly this code.
    pub fn code_first_of(&self, code: &Code) -> Option<&BTreeSet<Code>> {
        self.code_first.get(code)
    }

    /// Codes matched by a note target. A prefix pattern matches the
    /// existing codes that start with the prefix.
    pub fn expand_target<'a>(&'a self, target: &'a NoteTarget) -> Box<dyn Iterator<Item = &'a Code> + 'a> {
        match target {
            NoteTarget::Code(c) => Box::new(self.get(c).map(|e| &e.code).into_iter()),
            NoteTarget::Prefix(p) => {
                let start = self.codes.partition_point(|e| e.code.as_str() < p.as_str());
                Box::new(
                    self.codes[start..]
                        .iter()
                        .take_while(move |e| e.code.as_str().starts_with(p.as_str()))
                        .map(|e| &e.code),
                )
            }
        }
    }

    pub fn lead(&self, lead_term: &str) -> Option<&IndexEntry> {
        self.by_lead.get(lead_term).map(|&i| &self.index[i])
    }

    /// Lead terms within [`FUZZY_LEAD_DISTANCE`] of `term`, nearest first.
    pub fn fuzzy_leads(&self, term: &str) -> Vec<(&IndexEntry, usize)> {
        self.leads
            .lookup(term)
            .into_iter()
            .filter_map(|(t, d)| self.lead(t).map(|e| (e, d)))
            .collect()
    }
}
