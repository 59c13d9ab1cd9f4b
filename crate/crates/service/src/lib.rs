//! HTTP front end for the coding pipeline, the ontology and the review log.

mod api;
mod config;
mod review;

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use medcode_core::ontology::Ontology;
use medcode_core::pipeline::{Pipeline, PipelineConfig};
use thiserror::Error;

pub use api::{router, CodeRequest, CodeView, DecisionRequest, DecisionResponse, IngestRequest};
pub use config::{ServiceConfig, DEFAULT_MAX_BODY_BYTES};
pub use review::{project, read_log, Action, Decision, EncounterReview, IngestedEncounter, ReviewEvent, ReviewLog};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unavailable(String),
    #[error("request timed out")]
    Timeout,
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Timeout => StatusCode::GATEWAY_TIMEOUT,
            ServiceError::Config(_) | ServiceError::Io(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

/// One configured code system with its full-mode pipeline.
#[derive(Debug)]
pub struct System {
    pub ontology: Arc<Ontology>,
    pub pipeline: Pipeline,
}

/// Shared, read-mostly state behind every handler.
#[derive(Debug)]
pub struct AppState {
    pub systems: BTreeMap<String, System>,
    pub default_system: String,
    pub review: ReviewLog,
    pub max_body_bytes: usize,
    pub request_timeout: std::time::Duration,
}

impl AppState {
    /// Builds state from already loaded ontologies.
    pub fn new(cfg: &ServiceConfig, ontologies: Vec<Ontology>) -> Result<AppState, ServiceError> {
        cfg.validate()?;
        let pipeline_cfg = PipelineConfig { annotator: cfg.annotator.clone(), ..Default::default() };
        let mut systems = BTreeMap::new();
        for o in ontologies {
            let ontology = Arc::new(o);
            let pipeline = Pipeline::new(ontology.clone(), pipeline_cfg.clone())
                .map_err(|e| ServiceError::Config(e.to_string()))?;
            systems.insert(ontology.system_id().to_string(), System { ontology, pipeline });
        }
        if !systems.contains_key(&cfg.default_system) {
            return Err(ServiceError::Config(format!("default system {} is not loaded", cfg.default_system)));
        }
        Ok(AppState {
            systems,
            default_system: cfg.default_system.clone(),
            review: ReviewLog::open(&cfg.review_log)?,
            max_body_bytes: cfg.max_body_bytes,
            request_timeout: cfg.request_timeout(),
        })
    }

    /// Loads ontologies from the configured paths.
    pub fn from_config(cfg: &ServiceConfig) -> Result<AppState, ServiceError> {
        AppState::new(cfg, cfg.load_ontologies()?)
    }

    pub fn system(&self, id: Option<&str>) -> Result<&System, ServiceError> {
        let id = id.unwrap_or(&self.default_system);
        self.systems.get(id).ok_or_else(|| ServiceError::BadRequest(format!("unknown system_id {id}")))
    }
}

/// Binds the configured address and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::from_config(&cfg)?);
    let listener = tokio::net::TcpListener::bind(&cfg.listen)
        .await
        .map_err(|e| ServiceError::Io(format!("bind {}: {e}", cfg.listen)))?;
    tracing::info!(addr = %cfg.listen, systems = ?state.systems.keys().collect::<Vec<_>>(), "listening");
    axum::serve(listener, router(state)).await.map_err(|e| ServiceError::Io(e.to_string()))
}
