//! Dataset ingestion, repeated evaluation runs and the report document.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::Code;
use crate::evidence::{AnnotatorMode, Span};
use crate::metrics::{
    macro_prf, micro_prf, run_stats, span_alignment, CodeSpans, ConfusionCounts, GoldEncounter, MetricsError, Prf,
    SpanAlignmentReport,
};
use crate::ontology::Ontology;
use crate::pipeline::{assemble_encounter, AssembledEncounter, CodingMode, NoteInput, Pipeline, PipelineConfig, PipelineError, PredictionRecord};
use crate::text::char_len;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldCode {
    pub code: Code,
    #[serde(default)]
    pub spans: Option<Vec<[usize; 2]>>,
}

impl GoldCode {
    pub fn spans(&self) -> Option<Vec<Span>> {
        self.spans.as_ref().map(|v| v.iter().map(|[s, e]| Span::new(*s, *e)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub id: String,
    pub notes: Vec<NoteInput>,
    #[serde(default)]
    pub gold: Vec<GoldCode>,
    #[serde(default)]
    pub allowed_codes: Option<BTreeSet<Code>>,
}

impl EncounterRecord {
    pub fn gold_codes(&self) -> BTreeSet<Code> {
        self.gold.iter().map(|g| g.code.clone()).collect()
    }
}

/// A validated record with its assembled document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encounter {
    pub record: EncounterRecord,
    pub assembled: AssembledEncounter,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("encounter {id}: gold span [{start}, {end}) is outside the assembled text")]
    SpanOutOfBounds { id: String, start: usize, end: usize },
    #[error("runs must be at least 1")]
    NoRuns,
    #[error("encounter {0} has no prediction")]
    MissingPrediction(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

pub fn load_dataset(path: &Path) -> Result<Vec<Encounter>, BenchError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| BenchError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text)
}

/// Parses JSON Lines. Blank lines are skipped; line numbers are 1-based.
pub fn parse_dataset(text: &str) -> Result<Vec<Encounter>, BenchError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: EncounterRecord =
            serde_json::from_str(line).map_err(|e| BenchError::Parse { line: line_no, message: e.to_string() })?;
        if !seen.insert(record.id.clone()) {
            return Err(BenchError::Parse { line: line_no, message: format!("duplicate id {}", record.id) });
        }
        let assembled = assemble_encounter(&record.notes)
            .map_err(|e| BenchError::Parse { line: line_no, message: format!("{}: {e}", record.id) })?;
        let len = char_len(&assembled.text);
        for g in &record.gold {
            for [start, end] in g.spans.iter().flatten() {
                if start >= end || *end > len {
                    return Err(BenchError::SpanOutOfBounds { id: record.id.clone(), start: *start, end: *end });
                }
            }
        }
        out.push(Encounter { record, assembled });
    }
    Ok(out)
}

/// Codes every encounter, in dataset order. Encounters run on scoped worker
/// threads.
pub fn predict_dataset(pipeline: &Pipeline, ds: &[Encounter]) -> Result<Vec<PredictionRecord>, BenchError> {
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(ds.len().max(1));
    let chunk = ds.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<PredictionRecord>, PipelineError>> = std::thread::scope(|s| {
        let handles: Vec<_> = ds
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|e| {
                            Ok(PredictionRecord {
                                id: e.record.id.clone(),
                                results: pipeline.code_encounter(&e.assembled.text)?,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(ds.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Code-level confusion counts of predictions against gold.
pub fn confusion(ds: &[Encounter], preds: &[PredictionRecord]) -> Result<ConfusionCounts, BenchError> {
    let by_id: BTreeMap<&str, &PredictionRecord> = preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut acc = ConfusionCounts::new();
    for e in ds {
        let p = by_id.get(e.record.id.as_str()).ok_or_else(|| BenchError::MissingPrediction(e.record.id.clone()))?;
        acc.accumulate(&e.record.gold_codes(), &p.codes().into_iter().collect());
    }
    Ok(acc)
}

pub fn has_gold_spans(ds: &[Encounter]) -> bool {
    ds.iter().any(|e| e.record.gold.iter().any(|g| g.spans.as_ref().is_some_and(|s| !s.is_empty())))
}

pub fn alignment(ds: &[Encounter], preds: &[PredictionRecord]) -> Result<SpanAlignmentReport, BenchError> {
    let p: BTreeMap<String, Vec<CodeSpans>> = preds
        .iter()
        .map(|r| {
            let spans = r
                .results
                .iter()
                .map(|c| CodeSpans { code: c.code.clone(), spans: c.evidence.iter().map(|e| Span::new(e.start, e.end)).collect() })
                .collect();
            (r.id.clone(), spans)
        })
        .collect();
    let g: BTreeMap<String, GoldEncounter> = ds
        .iter()
        .map(|e| {
            let codes = e.record.gold.iter().map(|g| (g.code.clone(), g.spans())).collect();
            (e.record.id.clone(), GoldEncounter { text: e.assembled.text.clone(), codes })
        })
        .collect();
    Ok(span_alignment(&p, &g)?)
}

/// The restriction used in restricted mode: the configured one, else the
/// union of records' allowed codes, else the union of gold codes.
pub fn restriction_for(ds: &[Encounter], cfg: &PipelineConfig) -> BTreeSet<Code> {
    if let Some(r) = &cfg.restriction {
        return r.clone();
    }
    let allowed: BTreeSet<Code> = ds.iter().filter_map(|e| e.record.allowed_codes.as_ref()).flatten().cloned().collect();
    if !allowed.is_empty() {
        return allowed;
    }
    ds.iter().flat_map(|e| e.record.gold_codes()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    fn of(values: &[f64]) -> Result<Stat, MetricsError> {
        let s = run_stats(values)?;
        Ok(Stat { mean: s.mean, std: s.std })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfStats {
    pub p: Stat,
    pub r: Stat,
    pub f1: Stat,
}

impl PrfStats {
    fn of(runs: &[Prf]) -> Result<PrfStats, MetricsError> {
        let col = |f: fn(&Prf) -> f64| runs.iter().map(f).collect::<Vec<_>>();
        Ok(PrfStats { p: Stat::of(&col(|x| x.precision))?, r: Stat::of(&col(|x| x.recall))?, f1: Stat::of(&col(|x| x.f1))? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanAlignmentStats {
    pub coverage: Stat,
    pub hit_rate_iou_gt0: Stat,
    pub hit_rate_iou_gt50: Stat,
    pub char_f1: Stat,
    pub rouge_l_f1: Stat,
    pub mean_span_iou: Stat,
}

impl SpanAlignmentStats {
    fn of(runs: &[SpanAlignmentReport]) -> Result<SpanAlignmentStats, MetricsError> {
        let col = |f: fn(&SpanAlignmentReport) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
        Ok(SpanAlignmentStats {
            coverage: col(|x| x.coverage)?,
            hit_rate_iou_gt0: col(|x| x.hit_rate_iou_gt0)?,
            hit_rate_iou_gt50: col(|x| x.hit_rate_iou_gt50)?,
            char_f1: col(|x| x.char_f1)?,
            rouge_l_f1: col(|x| x.rouge_l_f1)?,
            mean_span_iou: col(|x| x.mean_span_iou)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub system_id: String,
    pub ontology_version: String,
    pub annotator: AnnotatorMode,
    pub encounters: usize,
    pub std: String,
    pub span_aggregation: String,
    pub macro_universe: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub setting: CodingMode,
    pub runs: usize,
    pub restriction: Option<Vec<Code>>,
    pub micro: PrfStats,
    #[serde(rename = "macro")]
    pub macro_: PrfStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_alignment: Option<SpanAlignmentStats>,
    pub metadata: ReportMetadata,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// Output of [`run_eval`]: the report and the first run's predictions.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub report: Report,
    pub predictions: Vec<PredictionRecord>,
}

pub fn run_eval(o: Arc<Ontology>, ds: &[Encounter], cfg: &PipelineConfig, runs: usize) -> Result<EvalOutcome, BenchError> {
    if runs == 0 {
        return Err(BenchError::NoRuns);
    }
    let mut cfg = cfg.clone();
    let restriction = match cfg.mode {
        CodingMode::Restricted => {
            let r = restriction_for(ds, &cfg);
            cfg.restriction = Some(r.clone());
            Some(r.into_iter().collect::<Vec<_>>())
        }
        CodingMode::Full => None,
    };
    let metadata = ReportMetadata {
        system_id: o.system_id().to_string(),
        ontology_version: o.version().to_string(),
        annotator: cfg.annotator.mode,
        encounters: ds.len(),
        std: "population".into(),
        span_aggregation: "per-span max IoU pooled over predicted spans; char_f1 and rouge_l_f1 unweighted mean over true-positive codes".into(),
        macro_universe: "codes with a non-zero count".into(),
    };
    let pipeline = Pipeline::new(o, cfg.clone())?;
    let with_spans = has_gold_spans(ds);

    let (mut micro, mut macro_, mut spans) = (Vec::new(), Vec::new(), Vec::new());
    let mut first = None;
    for _ in 0..runs {
        let preds = predict_dataset(&pipeline, ds)?;
        let acc = confusion(ds, &preds)?;
        micro.push(micro_prf(&acc));
        macro_.push(macro_prf(&acc)?);
        if with_spans {
            spans.push(alignment(ds, &preds)?);
        }
        first.get_or_insert(preds);
    }
    let report = Report {
        setting: cfg.mode,
        runs,
        restriction,
        micro: PrfStats::of(&micro)?,
        macro_: PrfStats::of(&macro_)?,
        span_alignment: if with_spans { Some(SpanAlignmentStats::of(&spans)?) } else { None },
        metadata,
    };
    Ok(EvalOutcome { report, predictions: first.expect("runs >= 1") })
}
