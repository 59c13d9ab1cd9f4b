use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use medcode_core::evidence::AnnotatorConfig;
use medcode_core::ontology::{load_ontology, Ontology, OntologyFormat};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

pub const DEFAULT_MAX_BODY_BYTES: usize = 1024 * 1024;

/// Service settings, read from TOML.
///
/// ```toml
/// listen = "127.0.0.1:8080"
/// default_system = "TOY-10"
/// review_log = "review.jsonl"
///
/// [ontologies]
/// "TOY-10" = "fixtures/toy10.json"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Ontology file per system id. Files ending in `.xml` are read as
    /// ICD-10-CM tabular XML, everything else as canonical JSON.
    pub ontologies: BTreeMap<String, PathBuf>,
    pub default_system: String,
    #[serde(default)]
    pub annotator: AnnotatorConfig,
    #[serde(default = "default_max_body")]
    pub max_body_bytes: usize,
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_review_log")]
    pub review_log: PathBuf,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_max_body() -> usize {
    DEFAULT_MAX_BODY_BYTES
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_review_log() -> PathBuf {
    PathBuf::from("review_log.jsonl")
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<ServiceConfig, ServiceError> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ServiceConfig, ServiceError> {
        let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths resolve against the config file's directory.
        if let Some(dir) = path.parent() {
            for p in cfg.ontologies.values_mut() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
            if cfg.review_log.is_relative() {
                cfg.review_log = dir.join(&cfg.review_log);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        if self.ontologies.is_empty() {
            return Err(ServiceError::Config("at least one ontology is required".into()));
        }
        if !self.ontologies.contains_key(&self.default_system) {
            return Err(ServiceError::Config(format!("default system {} is not configured", self.default_system)));
        }
        if self.max_body_bytes == 0 || self.request_timeout_ms == 0 {
            return Err(ServiceError::Config("body limit and timeout must be positive".into()));
        }
        self.annotator.validate().map_err(|e| ServiceError::Config(e.to_string()))
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }

    /// Loads every configured ontology and checks that each file declares
    /// the system id it is registered under.
    pub fn load_ontologies(&self) -> Result<Vec<Ontology>, ServiceError> {
        self.ontologies
            .iter()
            .map(|(id, path)| {
                let format = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")) {
                    OntologyFormat::Icd10cmXml
                } else {
                    OntologyFormat::CanonicalJson
                };
                let file =
                    std::fs::File::open(path).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
                let o = load_ontology(std::io::BufReader::new(file), format)
                    .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
                if o.system_id() != id {
                    return Err(ServiceError::Config(format!(
                        "{} declares system {} but is registered as {id}",
                        path.display(),
                        o.system_id()
                    )));
                }
                Ok(o)
            })
            .collect()
    }
}
