//! The TOY-10 ontology and its evaluation dataset, embedded for tests,
//! examples and the demo service.

use crate::ontology::{load_ontology, Ontology, OntologyFormat};

pub const TOY10_JSON: &str = include_str!("../../../fixtures/toy10.json");
pub const TOY10_DATASET_JSONL: &str = include_str!("../../../fixtures/toy10_dataset.jsonl");
pub const TOY10_GOLDEN_PREDICTIONS: &str = include_str!("../../../fixtures/toy10_predictions.golden.jsonl");

/// Encounter ids whose gold codes the lexicon pipeline should reproduce
/// exactly.
pub const TOY10_UNAMBIGUOUS: &[&str] = &["toy-01", "toy-02", "toy-03", "toy-04", "toy-05"];

pub fn toy10() -> Ontology {
    load_ontology(TOY10_JSON.as_bytes(), OntologyFormat::CanonicalJson).expect("TOY-10 fixture is valid")
}
