//! Client for an external annotator speaking the JSON wire contract
//! `{"text"}` -> `{"mentions": [...]}`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{select_maximal, AnnotatorConfig, ExtractionError, Mention, Span};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalMention {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub normalized: String,
    #[serde(default)]
    pub qualifiers: Vec<String>,
    #[serde(default)]
    pub negated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub mentions: Vec<ExternalMention>,
}

impl From<&Mention> for ExternalMention {
    fn from(m: &Mention) -> Self {
        ExternalMention {
            start: m.span.start,
            end: m.span.end,
            surface: m.surface.clone(),
            normalized: m.normalized.clone(),
            qualifiers: m.qualifiers.clone(),
            negated: m.negated,
        }
    }
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    released: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Gate {
        Gate { free: Mutex::new(n), released: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.released.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.released.notify_one();
    }
}

/// Thread-safe client. Share one instance so that `max_inflight` bounds all
/// callers together.
#[derive(Debug)]
pub struct ExternalAnnotator {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
    gate: Gate,
}

enum Attempt {
    Retry(String),
    Fatal(ExtractionError),
}

impl ExternalAnnotator {
    pub fn new(cfg: &AnnotatorConfig) -> Result<ExternalAnnotator, ExtractionError> {
        let endpoint = cfg
            .external_endpoint
            .clone()
            .ok_or_else(|| ExtractionError::InvalidConfig("external mode requires an endpoint".into()))?;
        if cfg.max_inflight == 0 {
            return Err(ExtractionError::InvalidConfig("max_inflight must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(cfg.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(ExternalAnnotator { endpoint, agent, retries: cfg.retries, gate: Gate::new(cfg.max_inflight) })
    }

    /// Requests mentions for `text`, discarding spans whose surface does not
    /// match the text, then applies the same containment and ordering rules
    /// as the lexicon annotator.
    pub fn extract(&self, text: &str) -> Result<Vec<Mention>, ExtractionError> {
        let request = ExternalRequest { text: text.to_string() };
        let mut last_failure = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
            }
            match self.attempt(&request) {
                Ok(resp) => return Ok(accept(text, resp)),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(why)) => last_failure = why,
            }
        }
        Err(ExtractionError::ExternalUnavailable(format!(
            "{} after {} attempt(s): {last_failure}",
            self.endpoint,
            self.retries + 1
        )))
    }

    fn attempt(&self, request: &ExternalRequest) -> Result<ExternalResponse, Attempt> {
        let _permit = self.gate.acquire();
        let response = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 500 {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if status >= 400 {
            return Err(Attempt::Fatal(ExtractionError::MalformedResponse(format!("HTTP {status}"))));
        }
        let body = response
            .into_body()
            .read_to_string()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        serde_json::from_str(&body).map_err(|e| Attempt::Fatal(ExtractionError::MalformedResponse(e.to_string())))
    }
}

/// Validates returned spans against the text.
pub(crate) fn accept(text: &str, resp: ExternalResponse) -> Vec<Mention> {
    let mentions = resp
        .mentions
        .into_iter()
        .map(|m| Mention {
            span: Span::new(m.start, m.end),
            surface: m.surface,
            normalized: m.normalized,
            qualifiers: m.qualifiers,
            negated: m.negated,
        })
        .filter(|m| m.is_valid_for(text))
        .collect();
    select_maximal(mentions)
}
