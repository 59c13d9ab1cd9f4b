//! Encounter-level reconciliation: collapse duplicates, drop redundant
//! ancestors and mutually exclusive codes, apply a code restriction and
//! order the survivors.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::Code;
use crate::ontology::Ontology;
use crate::tabular::ValidatedCode;

/// A validated code and the character offset of its earliest evidence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub validated: ValidatedCode,
    pub evidence_start: usize,
}

impl Candidate {
    pub fn new(validated: ValidatedCode, evidence_start: usize) -> Candidate {
        Candidate { validated, evidence_start }
    }

    /// Candidate for a bare code with no descent path.
    pub fn of_code(code: Code, evidence_start: usize) -> Candidate {
        Candidate {
            validated: ValidatedCode { path: vec![code.clone()], code, applied_seventh: None },
            evidence_start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Excludes1Conflict,
    AncestorRedundant,
    Duplicate,
    OutsideRestriction,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Excludes1Conflict => "excludes1_conflict",
            DropReason::AncestorRedundant => "ancestor_redundant",
            DropReason::Duplicate => "duplicate",
            DropReason::OutsideRestriction => "outside_restriction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub code: Code,
    pub reason: DropReason,
    pub conflicting_with: Option<Code>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ReconciliationDecision {
    pub kept: Vec<Code>,
    /// Duplicate records name a code that may also be kept; every other
    /// record names a code absent from `kept`.
    pub dropped: Vec<Dropped>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReconcileError {
    #[error("unknown code {0}")]
    UnknownCode(String),
}

pub fn reconcile(
    o: &Ontology,
    candidates: &[Candidate],
    restriction: Option<&BTreeSet<Code>>,
) -> Result<ReconciliationDecision, ReconcileError> {
    let mut first_seen: BTreeMap<Code, usize> = BTreeMap::new();
    let mut dropped = Vec::new();
    let mut sorted: Vec<&Candidate> = candidates.iter().collect();
    sorted.sort_by(|a, b| a.validated.code.cmp(&b.validated.code).then(a.evidence_start.cmp(&b.evidence_start)));
    for c in sorted {
        let code = &c.validated.code;
        if o.get(code).is_none() && o.assignable(code).is_none() {
            return Err(ReconcileError::UnknownCode(code.display()));
        }
        match first_seen.get_mut(code) {
            Some(pos) => {
                *pos = (*pos).min(c.evidence_start);
                dropped.push(Dropped { code: code.clone(), reason: DropReason::Duplicate, conflicting_with: None });
            }
            None => {
                first_seen.insert(code.clone(), c.evidence_start);
            }
        }
    }

    // Strict ancestors, where an extended code's base entry counts as one.
    let chains: BTreeMap<&Code, Vec<&Code>> =
        first_seen.keys().map(|c| (c, o.chain(c).into_iter().map(|e| &e.code).collect())).collect();
    let mut alive: BTreeSet<Code> = BTreeSet::new();
    for code in first_seen.keys() {
        let descendant = first_seen
            .keys()
            .find(|other| *other != code && chains[other].contains(&code));
        match descendant {
            Some(d) => dropped.push(Dropped {
                code: code.clone(),
                reason: DropReason::AncestorRedundant,
                conflicting_with: Some(d.clone()),
            }),
            None => {
                alive.insert(code.clone());
            }
        }
    }

    let codes: Vec<Code> = alive.iter().cloned().collect();
    for (i, a) in codes.iter().enumerate() {
        for b in &codes[i + 1..] {
            if !alive.contains(a) || !alive.contains(b) {
                continue;
            }
            let (ab, ba) = (excludes(o, &chains[a], &chains[b]), excludes(o, &chains[b], &chains[a]));
            let loser = match (ab, ba) {
                (true, _) => Some((b, a)),
                (false, true) => Some((a, b)),
                (false, false) => None,
            };
            if let Some((loser, winner)) = loser {
                alive.remove(loser);
                dropped.push(Dropped {
                    code: loser.clone(),
                    reason: DropReason::Excludes1Conflict,
                    conflicting_with: Some(winner.clone()),
                });
            }
        }
    }

    if let Some(r) = restriction {
        for code in alive.iter().filter(|c| !r.contains(*c)) {
            dropped.push(Dropped { code: code.clone(), reason: DropReason::OutsideRestriction, conflicting_with: None });
        }
        alive.retain(|c| r.contains(c));
    }

    let mut by_position: Vec<&Code> = alive.iter().collect();
    by_position.sort_by(|a, b| first_seen[*a].cmp(&first_seen[*b]).then(a.cmp(b)));
    let kept = code_first_order(o, &by_position, &chains);
    Ok(ReconciliationDecision { kept, dropped })
}

/// True when an ancestor-or-self of `a` carries an excludes1 note matching
/// an ancestor-or-self of `b`.
fn excludes(o: &Ontology, a_chain: &[&Code], b_chain: &[&Code]) -> bool {
    a_chain
        .iter()
        .filter_map(|a| o.excludes1_of(a))
        .any(|targets| b_chain.iter().any(|b| targets.contains(*b)))
}

/// Places each code's kept code-first targets immediately before it,
/// otherwise keeping `ordered` order. Cycles are broken by first visit.
fn code_first_order(o: &Ontology, ordered: &[&Code], chains: &BTreeMap<&Code, Vec<&Code>>) -> Vec<Code> {
    fn place<'a>(
        o: &Ontology,
        code: &'a Code,
        ordered: &[&'a Code],
        chains: &BTreeMap<&Code, Vec<&Code>>,
        visiting: &mut HashSet<&'a Code>,
        out: &mut Vec<Code>,
    ) {
        if !visiting.insert(code) {
            return;
        }
        let targets: Vec<&BTreeSet<Code>> = chains[code].iter().filter_map(|a| o.code_first_of(a)).collect();
        for other in ordered {
            if *other != code && chains[other].iter().any(|c| targets.iter().any(|t| t.contains(*c))) {
                place(o, other, ordered, chains, visiting, out);
            }
        }
        out.push(code.clone());
    }
    let mut visiting = HashSet::new();
    let mut out = Vec::with_capacity(ordered.len());
    for code in ordered {
        place(o, code, ordered, chains, &mut visiting, &mut out);
    }
    out
}
