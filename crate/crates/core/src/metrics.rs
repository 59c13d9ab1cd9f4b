//! Code-level precision/recall/F1, evidence-span alignment and multi-run
//! statistics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::Code;
use crate::evidence::Span;
use crate::text::{char_slice, token_texts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Counts {
    pub fn is_zero(&self) -> bool {
        self.tp == 0 && self.fp == 0 && self.fn_ == 0
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub per_code: BTreeMap<Code, Counts>,
}

impl ConfusionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, gold: &BTreeSet<Code>, pred: &BTreeSet<Code>) {
        for c in gold.union(pred) {
            let e = self.per_code.entry(c.clone()).or_default();
            match (gold.contains(c), pred.contains(c)) {
                (true, true) => e.tp += 1,
                (false, true) => e.fp += 1,
                (true, false) => e.fn_ += 1,
                (false, false) => unreachable!(),
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (c, n) in &other.per_code {
            let e = self.per_code.entry(c.clone()).or_default();
            e.tp += n.tp;
            e.fp += n.fp;
            e.fn_ += n.fn_;
        }
    }

    pub fn totals(&self) -> Counts {
        self.per_code.values().fold(Counts::default(), |a, n| Counts {
            tp: a.tp + n.tp,
            fp: a.fp + n.fp,
            fn_: a.fn_ + n.fn_,
        })
    }
}

/// Returns `acc` with one encounter's decisions added.
pub fn accumulate(gold: &BTreeSet<Code>, pred: &BTreeSet<Code>, mut acc: ConfusionCounts) -> ConfusionCounts {
    acc.accumulate(gold, pred);
    acc
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    ratio(2.0 * precision * recall, precision + recall)
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Prf {
        Prf { precision, recall, f1: f1(precision, recall) }
    }

    pub fn from_counts(tp: u64, fp: u64, fn_: u64) -> Prf {
        let tp_f = tp as f64;
        Prf::new(ratio(tp_f, (tp + fp) as f64), ratio(tp_f, (tp + fn_) as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no codes accumulated")]
    EmptyAccumulator,
    #[error("no values to summarize")]
    EmptyInput,
    #[error("encounter {0} appears on one side only")]
    KeyMismatch(String),
}

pub fn micro_prf(acc: &ConfusionCounts) -> Prf {
    acc.totals().prf()
}

/// Unweighted mean over codes with any non-zero count.
pub fn macro_prf(acc: &ConfusionCounts) -> Result<Prf, MetricsError> {
    let per: Vec<Prf> = acc.per_code.values().filter(|c| !c.is_zero()).map(Counts::prf).collect();
    if per.is_empty() {
        return Err(MetricsError::EmptyAccumulator);
    }
    let n = per.len() as f64;
    Ok(Prf {
        precision: per.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: per.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: per.iter().map(|p| p.f1).sum::<f64>() / n,
    })
}

pub fn span_iou(a: Span, b: Span) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.len() + b.len() - inter;
    ratio(inter as f64, union as f64)
}

/// Sorted, disjoint, non-adjacent intervals covering the same positions.
fn merged(spans: &[Span]) -> Vec<Span> {
    let mut v: Vec<Span> = spans.iter().copied().filter(|s| !s.is_empty()).collect();
    v.sort();
    let mut out: Vec<Span> = Vec::with_capacity(v.len());
    for s in v {
        match out.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

fn covered(spans: &[Span]) -> usize {
    spans.iter().map(Span::len).sum()
}

fn intersection_len(a: &[Span], b: &[Span]) -> usize {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        total += a[i].end.min(b[j].end).saturating_sub(a[i].start.max(b[j].start));
        if a[i].end < b[j].end {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// F1 over the character positions covered by each span list.
pub fn char_f1(pred: &[Span], gold: &[Span]) -> f64 {
    let (p, g) = (merged(pred), merged(gold));
    let inter = intersection_len(&p, &g) as f64;
    f1(ratio(inter, covered(&p) as f64), ratio(inter, covered(&g) as f64))
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 over tokens.
pub fn rouge_l_f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (token_texts(pred), token_texts(gold));
    let l = lcs_len(&p, &g) as f64;
    f1(ratio(l, p.len() as f64), ratio(l, g.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpanAlignmentReport {
    pub coverage: f64,
    pub hit_rate_iou_gt0: f64,
    pub hit_rate_iou_gt50: f64,
    pub char_f1: f64,
    pub rouge_l_f1: f64,
    pub mean_span_iou: f64,
}

/// A code and its evidence spans in one encounter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSpans {
    pub code: Code,
    pub spans: Vec<Span>,
}

/// Gold side of one encounter. `spans` is `None` for codes annotated
/// without evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldEncounter {
    pub text: String,
    pub codes: Vec<(Code, Option<Vec<Span>>)>,
}

fn joined_surfaces(text: &str, spans: &[Span]) -> String {
    let mut sorted = spans.to_vec();
    sorted.sort();
    sorted.iter().filter_map(|s| char_slice(text, s.start, s.end)).collect::<Vec<_>>().join(" ")
}

/// Alignment between predicted and gold evidence over true-positive codes
/// that carry gold spans. All fields are 0 when that population is empty.
pub fn span_alignment(
    preds: &BTreeMap<String, Vec<CodeSpans>>,
    golds: &BTreeMap<String, GoldEncounter>,
) -> Result<SpanAlignmentReport, MetricsError> {
    if let Some(id) = preds.keys().find(|k| !golds.contains_key(*k)).or_else(|| golds.keys().find(|k| !preds.contains_key(*k))) {
        return Err(MetricsError::KeyMismatch(id.clone()));
    }
    let mut population = 0usize;
    let mut with_spans = 0usize;
    let mut span_ious: Vec<f64> = Vec::new();
    let (mut char_sum, mut rouge_sum) = (0.0, 0.0);
    for (id, gold) in golds {
        let predicted: BTreeMap<&Code, Vec<Span>> = preds[id].iter().fold(BTreeMap::new(), |mut m, p| {
            m.entry(&p.code).or_insert_with(Vec::new).extend(p.spans.iter().copied());
            m
        });
        for (code, gold_spans) in &gold.codes {
            let (Some(gold_spans), Some(pred_spans)) = (gold_spans, predicted.get(code)) else { continue };
            if gold_spans.is_empty() {
                continue;
            }
            population += 1;
            if !pred_spans.is_empty() {
                with_spans += 1;
            }
            for p in pred_spans {
                span_ious.push(gold_spans.iter().map(|g| span_iou(*p, *g)).fold(0.0, f64::max));
            }
            char_sum += char_f1(pred_spans, gold_spans);
            rouge_sum += rouge_l_f1(&joined_surfaces(&gold.text, pred_spans), &joined_surfaces(&gold.text, gold_spans));
        }
    }
    if population == 0 {
        return Ok(SpanAlignmentReport::default());
    }
    let n_spans = span_ious.len() as f64;
    let pop = population as f64;
    Ok(SpanAlignmentReport {
        coverage: with_spans as f64 / pop,
        hit_rate_iou_gt0: ratio(span_ious.iter().filter(|&&x| x > 0.0).count() as f64, n_spans),
        hit_rate_iou_gt50: ratio(span_ious.iter().filter(|&&x| x > 0.5).count() as f64, n_spans),
        char_f1: char_sum / pop,
        rouge_l_f1: rouge_sum / pop,
        mean_span_iou: ratio(span_ious.iter().sum(), n_spans),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub mean: f64,
    pub std: f64,
    pub n_runs: usize,
}

/// Mean and population standard deviation.
pub fn run_stats(values: &[f64]) -> Result<RunStats, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // Identical values give exactly zero regardless of rounding in `mean`.
    let std = if values.iter().all(|v| *v == values[0]) {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    Ok(RunStats { mean: if std == 0.0 { values[0] } else { mean }, std, n_runs: values.len() })
}
