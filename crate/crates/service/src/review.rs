//! Append-only review log with a last-writer-wins projection per code.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use medcode_core::pipeline::PredictionRecord;
use medcode_core::Code;
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Accept,
    Reject,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub seq: u64,
    pub code: Code,
    pub action: Action,
    pub replacement: Option<Code>,
    pub reviewer: String,
}

/// An encounter as stored at ingest time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedEncounter {
    pub id: String,
    pub system_id: String,
    pub text: String,
    pub offsets: Vec<usize>,
    pub note_types: Vec<String>,
    pub predictions: PredictionRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReviewEvent {
    Ingest { seq: u64, encounter: IngestedEncounter },
    Decision { encounter_id: String, decision: Decision },
}

impl ReviewEvent {
    fn seq(&self) -> u64 {
        match self {
            ReviewEvent::Ingest { seq, .. } => *seq,
            ReviewEvent::Decision { decision, .. } => decision.seq,
        }
    }
}

/// Projected state of one encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterReview {
    pub encounter: IngestedEncounter,
    /// Every decision in log order.
    pub decisions: Vec<Decision>,
    /// Latest decision per code.
    pub current: BTreeMap<Code, Decision>,
}

impl EncounterReview {
    fn apply(&mut self, d: Decision) {
        self.current.insert(d.code.clone(), d.clone());
        self.decisions.push(d);
    }
}

/// Folds events into per-encounter state. Decisions for encounters that
/// were never ingested are ignored; a repeated ingest is ignored.
pub fn project(events: &[ReviewEvent]) -> HashMap<String, EncounterReview> {
    let mut state: HashMap<String, EncounterReview> = HashMap::new();
    for e in events {
        match e {
            ReviewEvent::Ingest { encounter, .. } => {
                state.entry(encounter.id.clone()).or_insert_with(|| EncounterReview {
                    encounter: encounter.clone(),
                    decisions: Vec::new(),
                    current: BTreeMap::new(),
                });
            }
            ReviewEvent::Decision { encounter_id, decision } => {
                if let Some(r) = state.get_mut(encounter_id) {
                    r.apply(decision.clone());
                }
            }
        }
    }
    state
}

/// Reads a log file. A truncated final line (interrupted append) is
/// skipped; any other malformed line is an error.
pub fn read_log(path: &Path) -> Result<Vec<ReviewEvent>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::Io(format!("{}: {e}", path.display()))),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
    let mut events = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => events.push(e),
            Err(_) if i + 1 == lines.len() => tracing::warn!(line = i + 1, "skipping truncated review log entry"),
            Err(e) => return Err(ServiceError::Io(format!("{} line {}: {e}", path.display(), i + 1))),
        }
    }
    Ok(events)
}

#[derive(Debug)]
struct Writer {
    file: File,
    next_seq: u64,
}

/// Durable review store. Appends are serialized through one writer; reads
/// proceed concurrently against the in-memory projection.
#[derive(Debug)]
pub struct ReviewLog {
    path: PathBuf,
    writer: Mutex<Writer>,
    state: RwLock<HashMap<String, EncounterReview>>,
}

impl ReviewLog {
    /// Opens the log, replaying any existing events.
    pub fn open(path: &Path) -> Result<ReviewLog, ServiceError> {
        let events = read_log(path)?;
        let next_seq = events.iter().map(ReviewEvent::seq).max().map_or(0, |s| s + 1);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
        Ok(ReviewLog {
            path: path.to_path_buf(),
            writer: Mutex::new(Writer { file, next_seq }),
            state: RwLock::new(project(&events)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(w: &mut Writer, event: &ReviewEvent) -> Result<(), ServiceError> {
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        w.file
            .write_all(line.as_bytes())
            .and_then(|_| w.file.sync_data())
            .map_err(|e| ServiceError::Io(format!("review log append: {e}")))
    }

    /// Registers an encounter. Fails if the id is already present.
    pub fn ingest(&self, encounter: IngestedEncounter) -> Result<EncounterReview, ServiceError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if self.state.read().unwrap_or_else(|e| e.into_inner()).contains_key(&encounter.id) {
            return Err(ServiceError::Conflict(format!("encounter {} already ingested", encounter.id)));
        }
        let event = ReviewEvent::Ingest { seq: w.next_seq, encounter: encounter.clone() };
        Self::append(&mut w, &event)?;
        w.next_seq += 1;
        let review = EncounterReview { encounter, decisions: Vec::new(), current: BTreeMap::new() };
        self.state.write().unwrap_or_else(|e| e.into_inner()).insert(review.encounter.id.clone(), review.clone());
        Ok(review)
    }

    /// Appends a decision; `seq` is assigned here.
    pub fn decide(
        &self,
        encounter_id: &str,
        code: Code,
        action: Action,
        replacement: Option<Code>,
        reviewer: String,
    ) -> Result<EncounterReview, ServiceError> {
        let mut w = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if !self.state.read().unwrap_or_else(|e| e.into_inner()).contains_key(encounter_id) {
            return Err(ServiceError::NotFound(format!("unknown encounter {encounter_id}")));
        }
        let decision = Decision { seq: w.next_seq, code, action, replacement, reviewer };
        let event = ReviewEvent::Decision { encounter_id: encounter_id.to_string(), decision: decision.clone() };
        Self::append(&mut w, &event)?;
        w.next_seq += 1;
        let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
        let review = state.get_mut(encounter_id).expect("checked above");
        review.apply(decision);
        Ok(review.clone())
    }

    pub fn get(&self, encounter_id: &str) -> Option<EncounterReview> {
        self.state.read().unwrap_or_else(|e| e.into_inner()).get(encounter_id).cloned()
    }

    pub fn snapshot(&self) -> HashMap<String, EncounterReview> {
        self.state.read().unwrap_or_else(|e| e.into_inner()).clone()
    }
}
