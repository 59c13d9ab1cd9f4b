//! Ontology-guided medical code assignment with span-level evidence, and the
//! metrics used to evaluate it.

pub mod bench;
pub mod code;
pub mod evidence;
pub mod fixtures;
pub mod fuzzy;
pub mod index_nav;
pub mod metrics;
pub mod ontology;
pub mod pipeline;
pub mod reconcile;
pub mod synth;
pub mod tabular;
pub mod text;

pub use code::Code;
