use std::collections::BTreeSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use medcode_core::bench::EncounterRecord;
use medcode_core::evidence::ExtractionError;
use medcode_core::ontology::{Note, SeventhCharRule};
use medcode_core::pipeline::{assemble_encounter, CodingMode, PipelineError, PredictionRecord};
use medcode_core::Code;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::review::{Action, Decision, EncounterReview, IngestedEncounter};
use crate::{AppState, ServiceError};

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    let limit = state.max_body_bytes;
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/code", post(code))
        .route("/v1/ontology/{system}/code/{code}", get(ontology_code))
        .route("/v1/review/ingest", post(ingest))
        .route("/v1/review/{id}", get(review))
        .route("/v1/review/{id}/decision", post(decision))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(format!("malformed body: {e}")))
}

fn parse_code(raw: &str) -> Result<Code, ServiceError> {
    Code::parse(raw).ok_or_else(|| ServiceError::BadRequest(format!("invalid code {raw:?}")))
}

fn pipeline_error(e: PipelineError) -> ServiceError {
    match e {
        PipelineError::Extraction(ExtractionError::ExternalUnavailable(m)) => ServiceError::Unavailable(m),
        PipelineError::Extraction(ExtractionError::MalformedResponse(m)) => {
            ServiceError::Unavailable(format!("external annotator: {m}"))
        }
        PipelineError::EmptyText | PipelineError::NoNotes | PipelineError::InvalidConfig(_) => {
            ServiceError::BadRequest(e.to_string())
        }
        other => ServiceError::Internal(other.to_string()),
    }
}

/// Runs blocking work off the async executor under the request timeout.
async fn blocking<T, F>(state: &Shared, f: F) -> Result<T, ServiceError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::time::timeout(state.request_timeout, tokio::task::spawn_blocking(f)).await {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => Err(ServiceError::Internal(e.to_string())),
        Err(_) => Err(ServiceError::Timeout),
    }
}

async fn healthz(State(state): State<Shared>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "systems": state.systems.keys().collect::<Vec<_>>() }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeRequest {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default)]
    pub system_id: Option<String>,
    #[serde(default)]
    pub mode: CodingMode,
    #[serde(default)]
    pub restriction: Option<Vec<String>>,
}

/// Content-derived id so identical bodies give identical responses.
fn text_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn restriction_set(mode: CodingMode, raw: Option<&[String]>) -> Result<Option<BTreeSet<Code>>, ServiceError> {
    match (mode, raw) {
        (CodingMode::Full, None) => Ok(None),
        (CodingMode::Full, Some(_)) => Err(ServiceError::BadRequest("full mode takes no restriction".into())),
        (CodingMode::Restricted, None) => Err(ServiceError::BadRequest("restricted mode requires a restriction".into())),
        (CodingMode::Restricted, Some([])) => Err(ServiceError::BadRequest("restriction must not be empty".into())),
        (CodingMode::Restricted, Some(codes)) => codes.iter().map(|c| parse_code(c)).collect::<Result<_, _>>().map(Some),
    }
}

async fn code(State(state): State<Shared>, body: Bytes) -> Result<Json<PredictionRecord>, ServiceError> {
    let req: CodeRequest = parse_body(&body)?;
    if req.text.is_empty() {
        return Err(ServiceError::BadRequest("text must not be empty".into()));
    }
    state.system(req.system_id.as_deref())?;
    let restriction = restriction_set(req.mode, req.restriction.as_deref())?;
    let id = req.id.clone().unwrap_or_else(|| text_id(&req.text));
    let st = state.clone();
    let results = blocking(&state, move || {
        let sys = st.system(req.system_id.as_deref())?;
        sys.pipeline.code_with_restriction(&req.text, restriction.as_ref()).map_err(pipeline_error)
    })
    .await?;
    Ok(Json(PredictionRecord { id, results }))
}

/// A code entry as shown in a detail pane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeView {
    pub code: Code,
    pub title: String,
    pub billable: bool,
    pub parent: Option<Code>,
    pub notes: Vec<Note>,
    pub seventh_char: Option<SeventhCharRule>,
    pub children: Vec<Code>,
    /// Meaning of the seventh character when `code` is an extended code.
    pub extension: Option<String>,
}

async fn ontology_code(
    State(state): State<Shared>,
    Path((system, raw)): Path<(String, String)>,
) -> Result<Json<CodeView>, ServiceError> {
    let sys = state.systems.get(&system).ok_or_else(|| ServiceError::NotFound(format!("unknown system {system}")))?;
    let o = &*sys.ontology;
    let unknown = || ServiceError::NotFound(format!("unknown code {raw} in {system}"));
    let code = Code::parse(&raw).ok_or_else(unknown)?;
    if let Some(e) = o.get(&code) {
        let children = o.children(code.as_str()).map_err(|_| unknown())?.into_iter().map(|c| c.code.clone()).collect();
        return Ok(Json(CodeView {
            code: e.code.clone(),
            title: e.title.clone(),
            billable: e.billable,
            parent: e.parent.clone(),
            notes: e.notes.clone(),
            seventh_char: e.seventh_char.clone(),
            children,
            extension: None,
        }));
    }
    let a = o.assignable(&code).ok_or_else(unknown)?;
    let seventh = a.seventh.expect("non-entry assignable codes are extended");
    let extension = o.seventh_char_rule(&a.entry.code).and_then(|r| r.allowed.get(&seventh).cloned());
    Ok(Json(CodeView {
        code,
        title: a.entry.title.clone(),
        billable: true,
        parent: Some(a.entry.code.clone()),
        notes: Vec::new(),
        seventh_char: None,
        children: Vec::new(),
        extension,
    }))
}

/// A dataset record plus the system to code it against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestRequest {
    #[serde(flatten)]
    pub record: EncounterRecord,
    #[serde(default)]
    pub system_id: Option<String>,
}

async fn ingest(State(state): State<Shared>, body: Bytes) -> Result<Json<EncounterReview>, ServiceError> {
    let req: IngestRequest = parse_body(&body)?;
    if req.record.id.is_empty() {
        return Err(ServiceError::BadRequest("encounter id must not be empty".into()));
    }
    let sys = state.system(req.system_id.as_deref())?;
    let system_id = sys.ontology.system_id().to_string();
    let assembled = assemble_encounter(&req.record.notes).map_err(pipeline_error)?;
    if state.review.get(&req.record.id).is_some() {
        return Err(ServiceError::Conflict(format!("encounter {} already ingested", req.record.id)));
    }
    let st = state.clone();
    let review = blocking(&state, move || {
        let sys = st.system(Some(&system_id))?;
        let restriction = req.record.allowed_codes.as_ref().filter(|s| !s.is_empty());
        let results = sys.pipeline.code_with_restriction(&assembled.text, restriction).map_err(pipeline_error)?;
        st.review.ingest(IngestedEncounter {
            id: req.record.id.clone(),
            system_id,
            text: assembled.text,
            offsets: assembled.offsets,
            note_types: req.record.notes.iter().map(|n| n.note_type.clone()).collect(),
            predictions: PredictionRecord { id: req.record.id, results },
        })
    })
    .await?;
    Ok(Json(review))
}

async fn review(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<EncounterReview>, ServiceError> {
    state.review.get(&id).map(Json).ok_or_else(|| ServiceError::NotFound(format!("unknown encounter {id}")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub code: String,
    pub action: Action,
    #[serde(default)]
    pub replacement: Option<String>,
    pub reviewer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionResponse {
    pub encounter_id: String,
    pub decisions: Vec<Decision>,
    pub current: std::collections::BTreeMap<Code, Decision>,
}

async fn decision(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<DecisionResponse>, ServiceError> {
    let req: DecisionRequest = parse_body(&body)?;
    let existing = state.review.get(&id).ok_or_else(|| ServiceError::NotFound(format!("unknown encounter {id}")))?;
    // Codes are checked against the system the encounter was ingested under.
    let o = &state
        .systems
        .get(&existing.encounter.system_id)
        .ok_or_else(|| ServiceError::BadRequest(format!("system {} is no longer loaded", existing.encounter.system_id)))?
        .ontology;
    let assignable = |raw: &str, what: &str| {
        parse_code(raw)
            .ok()
            .filter(|c| o.assignable(c).is_some())
            .ok_or_else(|| ServiceError::BadRequest(format!("{what} {raw} is not an assignable code")))
    };
    let code = assignable(&req.code, "code")?;
    let replacement = match (req.action, req.replacement.as_deref()) {
        (Action::Replace, None) => return Err(ServiceError::BadRequest("replace requires a replacement".into())),
        (Action::Replace, Some(raw)) => Some(assignable(raw, "replacement")?),
        (_, Some(_)) => return Err(ServiceError::BadRequest("replacement is only allowed with replace".into())),
        (_, None) => None,
    };
    let st = state.clone();
    let r = blocking(&state, move || st.review.decide(&id, code, req.action, replacement, req.reviewer)).await?;
    Ok(Json(DecisionResponse { encounter_id: r.encounter.id, decisions: r.decisions, current: r.current }))
}
