//! Best-effort importer for the CMS ICD-10-CM tabular XML release
//! (`icd10cm_tabular_<year>.xml`).
//!
//! Only the tabular list is read; the alphabetic index ships as a separate
//! file and comes back empty. Note targets are scraped from parenthesised
//! code references in the note text; ranges such as `(E08-E13)` and
//! references to codes outside the file are dropped.

use std::collections::{BTreeMap, HashSet};

use quick_xml::events::Event;
use quick_xml::Reader;

use super::types::{CodeEntry, Note, NoteKind, NoteTarget, OntologyDoc, SeventhCharRule};
use super::OntologyError;
use crate::code::Code;

const SYSTEM_ID: &str = "ICD-10-CM";
const PLACEHOLDER: char = 'X';

#[derive(Default)]
struct Diag {
    name: Option<String>,
    desc: Option<String>,
    notes: Vec<Note>,
    seventh: BTreeMap<char, String>,
}

fn note_kind(element: &[u8]) -> Option<NoteKind> {
    Some(match element {
        b"excludes1" => NoteKind::Excludes1,
        b"excludes2" => NoteKind::Excludes2,
        b"includes" => NoteKind::Includes,
        b"codeFirst" => NoteKind::CodeFirst,
        b"useAdditionalCode" => NoteKind::UseAdditional,
        b"inclusionTerm" => NoteKind::InclusionTerm,
        _ => return None,
    })
}

pub(super) fn parse(text: &str) -> Result<OntologyDoc, OntologyError> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    let mut path: Vec<Vec<u8>> = Vec::new();
    let mut stack: Vec<Diag> = Vec::new();
    let mut codes: Vec<CodeEntry> = Vec::new();
    let mut version = String::from("unknown");
    let mut extension_char: Option<char> = None;

    let parse_err = |reader: &Reader<&[u8]>, message: String| OntologyError::Parse {
        offset: reader.buffer_position() as usize,
        message,
    };

    loop {
        let event = reader.read_event().map_err(|e| parse_err(&reader, e.to_string()))?;
        match event {
            Event::Start(e) => {
                let name = e.name().as_ref().to_vec();
                if name == b"diag" {
                    stack.push(Diag::default());
                } else if name == b"extension" {
                    extension_char = e
                        .try_get_attribute("char")
                        .map_err(|err| parse_err(&reader, err.to_string()))?
                        .and_then(|a| a.unescape_value().ok())
                        .and_then(|v| v.chars().next());
                }
                path.push(name);
            }
            Event::End(e) => {
                if e.name().as_ref() == b"diag" {
                    let diag = stack.pop().ok_or_else(|| parse_err(&reader, "unbalanced </diag>".into()))?;
                    let raw_name = diag.name.ok_or_else(|| parse_err(&reader, "<diag> without <name>".into()))?;
                    let code = Code::parse(&raw_name)
                        .ok_or_else(|| parse_err(&reader, format!("invalid code {raw_name:?}")))?;
                    let parent = stack.last().and_then(|p| p.name.as_deref()).and_then(Code::parse);
                    let seventh_char = (!diag.seventh.is_empty()).then_some(SeventhCharRule {
                        allowed: diag.seventh,
                        placeholder: PLACEHOLDER,
                    });
                    codes.push(CodeEntry {
                        code,
                        title: diag.desc.unwrap_or_default(),
                        parent,
                        billable: false,
                        notes: diag.notes,
                        seventh_char,
                    });
                }
                path.pop();
            }
            Event::Text(t) => {
                let value = t.unescape().map_err(|e| parse_err(&reader, e.to_string()))?.into_owned();
                let n = path.len();
                let current = path.last().map(Vec::as_slice);
                let parent = n.checked_sub(2).map(|i| path[i].as_slice());
                match (parent, current) {
                    (Some(b"diag"), Some(b"name")) => {
                        if let Some(d) = stack.last_mut() {
                            d.name = Some(value);
                        }
                    }
                    (Some(b"diag"), Some(b"desc")) => {
                        if let Some(d) = stack.last_mut() {
                            d.desc = Some(value);
                        }
                    }
                    (Some(container), Some(b"note")) => {
                        if let (Some(kind), Some(d)) = (note_kind(container), stack.last_mut()) {
                            let targets = match kind {
                                NoteKind::InclusionTerm | NoteKind::Includes => Vec::new(),
                                _ => scrape_targets(&value),
                            };
                            d.notes.push(Note { kind, targets, text: Some(value) });
                        }
                    }
                    (Some(b"sevenChrDef"), Some(b"extension")) => {
                        if let (Some(c), Some(d)) = (extension_char.take(), stack.last_mut()) {
                            d.seventh.insert(c, value);
                        }
                    }
                    (_, Some(b"version")) if stack.is_empty() => version = value,
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }

    // Billability and target resolution need the complete code set.
    let parents: HashSet<Code> = codes.iter().filter_map(|c| c.parent.clone()).collect();
    let mut known: Vec<Code> = codes.iter().map(|c| c.code.clone()).collect();
    known.sort();
    let resolves = |t: &NoteTarget| match t {
        NoteTarget::Code(c) => known.binary_search(c).is_ok(),
        NoteTarget::Prefix(p) => {
            let i = known.partition_point(|k| k.as_str() < p.as_str());
            known.get(i).is_some_and(|k| k.as_str().starts_with(p.as_str()))
        }
    };
    for entry in &mut codes {
        entry.billable = !parents.contains(&entry.code);
        for note in &mut entry.notes {
            note.targets.retain(|t| resolves(t));
        }
    }

    Ok(OntologyDoc {
        system_id: SYSTEM_ID.to_string(),
        version,
        codes,
        index: Vec::new(),
    })
}

/// Code references inside parentheses: `(E10.-)`, `(R73.01, R73.09)`.
fn scrape_targets(text: &str) -> Vec<NoteTarget> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('(') {
        let after = &rest[open + 1..];
        let Some(close) = after.find(')') else { break };
        for piece in after[..close].split(',') {
            let piece = piece.trim();
            if looks_like_code(piece) {
                if let Some(t) = NoteTarget::parse(piece) {
                    out.push(t);
                }
            }
        }
        rest = &after[close + 1..];
    }
    out
}

fn looks_like_code(piece: &str) -> bool {
    let bytes = piece.as_bytes();
    if bytes.len() < 3 || !bytes[0].is_ascii_alphabetic() || !bytes[1].is_ascii_alphanumeric() {
        return false;
    }
    // A dash anywhere but the end is a range.
    let body = piece.trim_end_matches('-');
    !body.contains('-') && body.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'.')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ontology::{load_ontology, OntologyFormat};

    const SAMPLE: &str = r#"<?xml version="1.0" encoding="utf-8"?>
<ICD10CM.tabular>
  <version>2025</version>
  <chapter>
    <name>4</name>
    <desc>Endocrine, nutritional and metabolic diseases (E00-E89)</desc>
    <section id="E08-E13">
      <desc>Diabetes mellitus (E08-E13)</desc>
      <diag>
        <name>E10</name>
        <desc>Type 1 diabetes mellitus</desc>
        <excludes1><note>type 2 diabetes mellitus (E11.-)</note></excludes1>
        <diag>
          <name>E10.9</name>
          <desc>Type 1 diabetes mellitus without complications</desc>
        </diag>
      </diag>
      <diag>
        <name>E11</name>
        <desc>Type 2 diabetes mellitus</desc>
        <inclusionTerm><note>diabetes NOS</note></inclusionTerm>
        <excludes1><note>type 1 diabetes mellitus (E10.-)</note><note>diabetes due to underlying condition (E08.-)</note></excludes1>
        <useAdditionalCode><note>code to identify control using insulin (Z79.4)</note></useAdditionalCode>
        <diag>
          <name>E11.9</name>
          <desc>Type 2 diabetes mellitus without complications</desc>
        </diag>
      </diag>
    </section>
  </chapter>
  <chapter>
    <name>19</name>
    <desc>Injury</desc>
    <section id="S50-S59">
      <diag>
        <name>S52</name>
        <desc>Fracture of forearm</desc>
        <sevenChrDef>
          <extension char="A">initial encounter for closed fracture</extension>
          <extension char="D">subsequent encounter for closed fracture with routine healing</extension>
        </sevenChrDef>
        <diag>
          <name>S52.5</name>
          <desc>Fracture of lower end of radius</desc>
          <diag>
            <name>S52.50</name>
            <desc>Unspecified fracture of the lower end of radius</desc>
            <diag><name>S52.501</name><desc>Unspecified fracture of the lower end of right radius</desc></diag>
          </diag>
        </diag>
      </diag>
    </section>
  </chapter>
</ICD10CM.tabular>
"#;

    #[test]
    fn imports_tabular_sample() {
        let o = load_ontology(SAMPLE.as_bytes(), OntologyFormat::Icd10cmXml).unwrap();
        assert_eq!(o.system_id(), "ICD-10-CM");
        assert_eq!(o.version(), "2025");
        assert_eq!(o.codes().len(), 8);
        let e11 = o.get_code("E11").unwrap();
        assert!(!e11.billable);
        assert_eq!(e11.inclusion_terms().collect::<Vec<_>>(), vec!["diabetes NOS"]);
        // E08.- and Z79.4 are outside the sample and are dropped.
        let excl: Vec<String> = e11
            .notes
            .iter()
            .filter(|n| n.kind == NoteKind::Excludes1)
            .flat_map(|n| n.targets.iter().map(|t| t.to_string()))
            .collect();
        assert_eq!(excl, vec!["E10.-"]);
        assert!(o.get_code("E11.9").unwrap().billable);
        let rule = o.seventh_char_rule(&Code::parse("S52.501").unwrap()).unwrap();
        assert_eq!(rule.placeholder, 'X');
        assert_eq!(rule.allowed.len(), 2);
        assert!(o.assignable(&Code::parse("S52.501A").unwrap()).is_some());
        assert!(o.index().is_empty());
    }

    #[test]
    fn scrapes_targets() {
        let t: Vec<String> = scrape_targets("foo (E10.-) bar (R73.01, R73.09) range (E08-E13)")
            .iter()
            .map(ToString::to_string)
            .collect();
        assert_eq!(t, vec!["E10.-", "R73.01", "R73.09"]);
    }

    #[test]
    fn malformed_xml_is_parse_error() {
        let err = load_ontology("<ICD10CM.tabular><diag><name>E10</name></ICD10CM.tabular>".as_bytes(), OntologyFormat::Icd10cmXml)
            .unwrap_err();
        assert!(matches!(err, OntologyError::Parse { .. }), "{err}");
    }

    /// Runs against a real CMS release when `ICD10CM_TABULAR_XML` points at one.
    #[test]
    #[ignore]
    fn imports_real_release() {
        let Ok(path) = std::env::var("ICD10CM_TABULAR_XML") else { return };
        let file = std::fs::File::open(path).unwrap();
        let o = load_ontology(file, OntologyFormat::Icd10cmXml).unwrap();
        assert!(o.codes().len() > 60_000);
    }
}
