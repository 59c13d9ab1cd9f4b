//! End-to-end coding of one encounter: extraction, index navigation,
//! tabular validation and reconciliation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::Code;
use crate::evidence::{extract_mentions, AnnotatorConfig, AnnotatorMode, ExternalAnnotator, ExtractionError, Lexicon, Mention};
use crate::index_nav::{navigate_index, IndexHit};
use crate::ontology::Ontology;
use crate::reconcile::{reconcile, Candidate, ReconcileError};
use crate::tabular::{validate_tabular, ValidatedCode};
use crate::text::{char_len, char_slice};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub start: usize,
    pub end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub mention: Mention,
    pub index_hit: IndexHit,
    pub validated: ValidatedCode,
    pub reconciliation_note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedResult {
    pub code: Code,
    pub evidence: Vec<EvidenceSpan>,
    pub confidence: f64,
    pub trace: Trace,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub results: Vec<CodedResult>,
}

impl PredictionRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("prediction records serialize")
    }

    pub fn codes(&self) -> Vec<Code> {
        self.results.iter().map(|r| r.code.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodingMode {
    #[default]
    Full,
    Restricted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: CodingMode,
    pub restriction: Option<BTreeSet<Code>>,
    pub annotator: AnnotatorConfig,
    pub top_k_hits: usize,
    pub keep_negated: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            mode: CodingMode::Full,
            restriction: None,
            annotator: AnnotatorConfig::default(),
            top_k_hits: 1,
            keep_negated: false,
        }
    }
}

impl PipelineConfig {
    pub fn restricted(codes: impl IntoIterator<Item = Code>) -> Self {
        PipelineConfig { mode: CodingMode::Restricted, restriction: Some(codes.into_iter().collect()), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        match (self.mode, &self.restriction) {
            (CodingMode::Restricted, None) => {
                return Err(PipelineError::InvalidConfig("restricted mode requires a restriction".into()))
            }
            (CodingMode::Restricted, Some(r)) if r.is_empty() => {
                return Err(PipelineError::InvalidConfig("restriction must not be empty".into()))
            }
            (CodingMode::Full, Some(_)) => {
                return Err(PipelineError::InvalidConfig("full mode takes no restriction".into()))
            }
            _ => {}
        }
        if self.top_k_hits == 0 {
            return Err(PipelineError::InvalidConfig("top_k_hits must be positive".into()));
        }
        self.annotator.validate()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("empty encounter text")]
    EmptyText,
    #[error("an encounter needs at least one note")]
    NoNotes,
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
}

/// A configured pipeline over one ontology. Cheap to share across threads.
#[derive(Debug)]
pub struct Pipeline {
    ontology: Arc<Ontology>,
    lexicon: Lexicon,
    external: Option<ExternalAnnotator>,
    cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(ontology: Arc<Ontology>, cfg: PipelineConfig) -> Result<Pipeline, PipelineError> {
        cfg.validate()?;
        let external = match cfg.annotator.mode {
            AnnotatorMode::External => Some(ExternalAnnotator::new(&cfg.annotator)?),
            AnnotatorMode::Lexicon => None,
        };
        let lexicon = Lexicon::build(&ontology);
        Ok(Pipeline { ontology, lexicon, external, cfg })
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn code_encounter(&self, text: &str) -> Result<Vec<CodedResult>, PipelineError> {
        self.code_with_restriction(text, self.cfg.restriction.as_ref())
    }

    /// Codes `text` under an explicit restriction, overriding the
    /// configured one.
    pub fn code_with_restriction(
        &self,
        text: &str,
        restriction: Option<&BTreeSet<Code>>,
    ) -> Result<Vec<CodedResult>, PipelineError> {
        if text.is_empty() {
            return Err(PipelineError::EmptyText);
        }
        let mentions = match &self.external {
            Some(client) => client.extract(text)?,
            None => extract_mentions(text, &self.lexicon, &self.cfg.annotator),
        };
        let o = &*self.ontology;

        let mut candidates = Vec::new();
        let mut support: BTreeMap<Code, Vec<(Mention, IndexHit, ValidatedCode)>> = BTreeMap::new();
        for m in mentions.into_iter().filter(|m| self.cfg.keep_negated || !m.negated) {
            for hit in navigate_index(o, &m).into_iter().take(self.cfg.top_k_hits) {
                let Ok(v) = validate_tabular(o, &hit.location, &m.qualifiers, None) else { continue };
                candidates.push(Candidate::new(v.clone(), m.span.start));
                support.entry(v.code.clone()).or_default().push((m.clone(), hit, v));
            }
        }
        let decision = reconcile(o, &candidates, restriction)?;

        let results = decision
            .kept
            .iter()
            .map(|code| {
                let rows = &support[code];
                let mut spans: Vec<(usize, usize)> = rows.iter().map(|(m, _, _)| (m.span.start, m.span.end)).collect();
                spans.sort();
                spans.dedup();
                let evidence = spans
                    .into_iter()
                    .map(|(start, end)| EvidenceSpan {
                        start,
                        end,
                        text: char_slice(text, start, end).unwrap_or_default().to_string(),
                    })
                    .collect();
                let confidence = rows.iter().map(|(_, h, _)| h.score).fold(0.0, f64::max);
                let (mention, index_hit, validated) =
                    rows.iter().min_by_key(|(m, _, _)| m.span).cloned().expect("kept codes have support");
                let notes: Vec<String> = decision
                    .dropped
                    .iter()
                    .filter(|d| d.conflicting_with.as_ref() == Some(code))
                    .map(|d| format!("dropped {} ({})", d.code, d.reason.as_str()))
                    .collect();
                CodedResult {
                    code: code.clone(),
                    evidence,
                    confidence,
                    trace: Trace {
                        mention,
                        index_hit,
                        validated,
                        reconciliation_note: (!notes.is_empty()).then(|| notes.join("; ")),
                    },
                }
            })
            .collect();
        Ok(results)
    }
}

/// Builds a pipeline and codes one text.
pub fn code_encounter(o: &Ontology, text: &str, cfg: &PipelineConfig) -> Result<Vec<CodedResult>, PipelineError> {
    Pipeline::new(Arc::new(o.clone()), cfg.clone())?.code_encounter(text)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoteInput {
    pub note_type: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssembledEncounter {
    pub text: String,
    /// Character offset at which each note's text starts.
    pub offsets: Vec<usize>,
}

impl AssembledEncounter {
    /// The last note starting at or before character `pos`, with the
    /// offset relative to that note's start.
    pub fn locate(&self, pos: usize) -> Option<(usize, usize)> {
        let i = self.offsets.partition_point(|&o| o <= pos).checked_sub(1)?;
        Some((i, pos - self.offsets[i]))
    }
}

pub fn note_header(note_type: &str) -> String {
    format!("\n\n===== {note_type} =====\n\n")
}

/// Concatenates notes, each preceded by a header naming its type.
pub fn assemble_encounter(notes: &[NoteInput]) -> Result<AssembledEncounter, PipelineError> {
    if notes.is_empty() {
        return Err(PipelineError::NoNotes);
    }
    let mut text = String::new();
    let mut offsets = Vec::with_capacity(notes.len());
    let mut len = 0;
    for n in notes {
        let header = note_header(&n.note_type);
        len += char_len(&header);
        offsets.push(len);
        len += char_len(&n.text);
        text.push_str(&header);
        text.push_str(&n.text);
    }
    Ok(AssembledEncounter { text, offsets })
}
