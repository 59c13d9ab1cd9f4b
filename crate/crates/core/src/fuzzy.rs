//! Damerau-Levenshtein distance and a symmetric-delete candidate index for
//! bounded-distance lookups over a fixed term list.

use std::collections::{HashMap, HashSet};

/// Unrestricted Damerau-Levenshtein distance (insertions, deletions,
/// substitutions and transpositions of adjacent characters), over chars.
pub fn damerau_levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (n, m) = (a.len(), b.len());
    if n == 0 {
        return m;
    }
    if m == 0 {
        return n;
    }
    let max = n + m;
    let width = m + 2;
    let mut d = vec![0usize; (n + 2) * width];
    let idx = |i: usize, j: usize| i * width + j;
    d[idx(0, 0)] = max;
    for i in 0..=n {
        d[idx(i + 1, 0)] = max;
        d[idx(i + 1, 1)] = i;
    }
    for j in 0..=m {
        d[idx(0, j + 1)] = max;
        d[idx(1, j + 1)] = j;
    }
    let mut last_row: HashMap<char, usize> = HashMap::new();
    for i in 1..=n {
        let mut last_match_col = 0;
        for j in 1..=m {
            let i1 = last_row.get(&b[j - 1]).copied().unwrap_or(0);
            let j1 = last_match_col;
            let cost = if a[i - 1] == b[j - 1] {
                last_match_col = j;
                0
            } else {
                1
            };
            let substitution = d[idx(i, j)] + cost;
            let insertion = d[idx(i + 1, j)] + 1;
            let deletion = d[idx(i, j + 1)] + 1;
            let transposition = d[idx(i1, j1)] + (i - i1 - 1) + 1 + (j - j1 - 1);
            d[idx(i + 1, j + 1)] = substitution.min(insertion).min(deletion).min(transposition);
        }
        last_row.insert(a[i - 1], i);
    }
    d[idx(n + 1, m + 1)]
}

fn deletes(term: &str, max_deletes: usize) -> HashSet<String> {
    let mut out = HashSet::new();
    out.insert(term.to_string());
    let mut frontier = vec![term.chars().collect::<Vec<char>>()];
    for _ in 0..max_deletes {
        let mut next = Vec::new();
        for word in &frontier {
            for skip in 0..word.len() {
                let shorter: Vec<char> = word
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != skip)
                    .map(|(_, c)| *c)
                    .collect();
                if out.insert(shorter.iter().collect()) {
                    next.push(shorter);
                }
            }
        }
        frontier = next;
    }
    out
}

/// Candidate index answering "which terms are within distance k of q".
///
/// Every edit of distance `k` can be undone by at most `k` deletions on
/// each side, so two strings within distance `k` always share a delete
/// variant. Candidates are then verified with the exact distance.
#[derive(Debug, Clone, Default)]
pub struct DeleteIndex {
    max_distance: usize,
    terms: Vec<String>,
    variants: HashMap<String, Vec<u32>>,
}

impl DeleteIndex {
    pub fn new<I, S>(terms: I, max_distance: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let terms: Vec<String> = terms.into_iter().map(Into::into).collect();
        let mut variants: HashMap<String, Vec<u32>> = HashMap::new();
        for (id, term) in terms.iter().enumerate() {
            for v in deletes(term, max_distance) {
                variants.entry(v).or_default().push(id as u32);
            }
        }
        DeleteIndex { max_distance, terms, variants }
    }

    /// All indexed terms within `max_distance` of `query`, sorted by
    /// distance then term.
    pub fn lookup(&self, query: &str) -> Vec<(&str, usize)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for v in deletes(query, self.max_distance) {
            if let Some(ids) = self.variants.get(&v) {
                for &id in ids {
                    if !seen.insert(id) {
                        continue;
                    }
                    let term = &self.terms[id as usize];
                    let d = damerau_levenshtein(query, term);
                    if d <= self.max_distance {
                        out.push((term.as_str(), d));
                    }
                }
            }
        }
        out.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        out
    }
}
