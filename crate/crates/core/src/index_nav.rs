//! Alphabetic index lookup: from a mention to candidate hierarchy locations.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::code::Code;
use crate::evidence::Mention;
use crate::ontology::{IndexEntry, Ontology};
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHit {
    pub location: Code,
    pub matched_lead: String,
    pub matched_path: Vec<String>,
    pub score: f64,
}

/// Ranking score of a hit. `consumed` must not exceed `total_qualifiers`.
pub fn score_hit(exact_lead: bool, consumed: usize, total_qualifiers: usize, edit_distance: usize) -> f64 {
    debug_assert!(consumed <= total_qualifiers);
    let lead = if exact_lead { 1.0 } else { 1.0 / (1.0 + edit_distance as f64) };
    lead * (1.0 + consumed as f64) / (1.0 + total_qualifiers as f64)
}

/// Ranked index hits for a mention, best first. Empty when the mention's
/// term is not indexable.
pub fn navigate_index(o: &Ontology, m: &Mention) -> Vec<IndexHit> {
    let term = normalize(&m.normalized);
    let qualifiers: Vec<String> = m.qualifiers.iter().map(|q| normalize(q)).collect();
    let leads: Vec<(&IndexEntry, bool, usize)> = match o.lead(&term) {
        Some(e) => vec![(e, true, 0)],
        None => o.fuzzy_leads(&term).into_iter().map(|(e, d)| (e, false, d)).collect(),
    };

    let mut hits: Vec<IndexHit> = Vec::new();
    for (entry, exact, distance) in leads {
        let see_also = entry.see_also.as_deref().and_then(|s| o.lead(s));
        for e in std::iter::once(entry).chain(see_also) {
            if let Some((location, path)) = follow(e, &qualifiers) {
                let score = score_hit(exact, path.len(), qualifiers.len(), distance);
                push_best(
                    &mut hits,
                    IndexHit { location, matched_lead: e.lead_term.clone(), matched_path: path, score },
                );
            }
        }
    }
    hits.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.location.cmp(&b.location))
    });
    hits
}

/// One hit per location, keeping the higher score.
fn push_best(hits: &mut Vec<IndexHit>, hit: IndexHit) {
    match hits.iter_mut().find(|h| h.location == hit.location) {
        Some(h) if h.score < hit.score => *h = hit,
        Some(_) => {}
        None => hits.push(hit),
    }
}

/// True when every label can be matched to its own qualifier; a repeated
/// label needs a repeated qualifier.
fn consumes(path: &[&str], qualifiers: &[String]) -> bool {
    let mut used = vec![false; qualifiers.len()];
    path.iter().all(|label| match (0..qualifiers.len()).find(|&i| !used[i] && qualifiers[i] == *label) {
        Some(i) => {
            used[i] = true;
            true
        }
        None => false,
    })
}

/// Deepest modifier path whose labels are all among `qualifiers` (ties to
/// the lexicographically smallest path), then the nearest coded node on it,
/// falling back to the lead's default code.
fn follow(entry: &IndexEntry, qualifiers: &[String]) -> Option<(Code, Vec<String>)> {
    let paths = entry.modifier_paths();
    let best = paths
        .iter()
        .filter(|(p, _)| consumes(p, qualifiers))
        .max_by(|(a, _), (b, _)| a.len().cmp(&b.len()).then_with(|| b.cmp(a)));
    let mut path: Vec<&str> = best.map(|(p, _)| p.clone()).unwrap_or_default();
    while !path.is_empty() {
        let node = paths.iter().find(|(p, _)| *p == path).map(|(_, m)| m).expect("prefix of an enumerated path");
        if let Some(code) = &node.code {
            return Some((code.clone(), path.into_iter().map(str::to_string).collect()));
        }
        path.pop();
    }
    entry.default_code.clone().map(|c| (c, Vec::new()))
}
