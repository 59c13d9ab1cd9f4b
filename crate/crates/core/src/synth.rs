//! Seeded synthetic ontologies for fuzzing and scale tests.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::code::Code;
use crate::ontology::{CodeEntry, IndexEntry, Modifier, Note, NoteKind, NoteTarget, OntologyDoc, SeventhCharRule};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    /// Generation stops at the first category that reaches this many codes.
    pub target_codes: usize,
    /// Children per non-leaf node are drawn from `1..=max_children`.
    pub max_children: usize,
    /// Levels below the category, at most 3.
    pub max_depth: usize,
    /// Probability that a node carries an excludes1 note.
    pub excludes1_rate: f64,
    /// Probability that a node carries a code-first note.
    pub code_first_rate: f64,
    /// Probability that a category carries a seventh-character rule.
    pub seventh_char_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            target_codes: 200,
            max_children: 4,
            max_depth: 3,
            excludes1_rate: 0.15,
            code_first_rate: 0.05,
            seventh_char_rate: 0.1,
            seed: 0,
        }
    }
}

const CONDITIONS: &[&str] = &[
    "fracture", "infection", "neoplasm", "ulcer", "injury", "disorder", "syndrome", "deficiency", "inflammation",
    "stenosis", "hemorrhage", "obstruction", "dislocation", "lesion", "calculus",
];
const SITES: &[&str] = &[
    "radius", "ulna", "femur", "kidney", "liver", "lung", "colon", "skin", "eye", "ear", "heart", "spine",
    "stomach", "bladder", "tibia",
];
const QUALIFIERS: &[&str] = &[
    "acute", "chronic", "left", "right", "bilateral", "recurrent", "severe", "mild", "with complications",
    "without complications", "unspecified", "primary", "secondary", "lower end", "upper end",
];

/// Category codes in generation order: A00..Z99.
fn category(n: usize) -> String {
    let letter = (b'A' + (n / 100 % 26) as u8) as char;
    format!("{letter}{:02}", n % 100)
}

pub fn generate(cfg: &SynthConfig) -> OntologyDoc {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let depth = cfg.max_depth.clamp(1, 3);
    let mut codes: Vec<CodeEntry> = Vec::new();
    let mut index: Vec<IndexEntry> = Vec::new();
    let mut n = 0;
    while codes.len() < cfg.target_codes && n < 2600 {
        let cat = category(n);
        n += 1;
        let condition = *CONDITIONS.choose(&mut rng).unwrap();
        let site = *SITES.choose(&mut rng).unwrap();
        let title = format!("{condition} of {site}");
        let seventh = rng.random_bool(cfg.seventh_char_rate).then(|| SeventhCharRule {
            allowed: [('A', "initial"), ('D', "subsequent"), ('S', "sequela")]
                .into_iter()
                .map(|(c, m)| (c, m.to_string()))
                .collect(),
            placeholder: 'X',
        });
        let modifiers = grow(&mut rng, cfg, &cat, &title, None, depth, seventh, &mut codes);
        let default_code = Code::parse(&cat).filter(|_| rng.random_bool(0.5)).and_then(|c| {
            codes.iter().find(|e| e.code == c).and_then(|e| e.billable.then(|| e.code.clone()))
        });
        index.push(IndexEntry {
            lead_term: format!("{condition} {}", cat.to_lowercase()),
            default_code,
            see_also: None,
            modifiers,
        });
    }

    let all: Vec<Code> = codes.iter().map(|e| e.code.clone()).collect();
    let categories: Vec<Code> = all.iter().filter(|c| c.len() == 3).cloned().collect();
    for e in codes.iter_mut() {
        if rng.random_bool(cfg.excludes1_rate) {
            let target = if rng.random_bool(0.5) {
                NoteTarget::Prefix(categories.choose(&mut rng).unwrap().clone())
            } else {
                NoteTarget::Code(all.choose(&mut rng).unwrap().clone())
            };
            e.notes.push(Note { kind: NoteKind::Excludes1, targets: vec![target], text: None });
        }
        if rng.random_bool(cfg.code_first_rate) {
            let target = NoteTarget::Code(all.choose(&mut rng).unwrap().clone());
            e.notes.push(Note { kind: NoteKind::CodeFirst, targets: vec![target], text: None });
        }
    }
    OntologyDoc { system_id: "SYNTH".into(), version: format!("seed-{}", cfg.seed), codes, index }
}

#[allow(clippy::too_many_arguments)]
fn grow(
    rng: &mut ChaCha8Rng,
    cfg: &SynthConfig,
    code: &str,
    title: &str,
    parent: Option<&str>,
    levels_left: usize,
    seventh: Option<SeventhCharRule>,
    out: &mut Vec<CodeEntry>,
) -> Vec<Modifier> {
    let n_children = if levels_left == 0 || (parent.is_some() && rng.random_bool(0.3)) {
        0
    } else {
        rng.random_range(1..=cfg.max_children.clamp(1, 10))
    };
    out.push(CodeEntry {
        code: Code::parse(code).unwrap(),
        title: title.to_string(),
        parent: parent.map(|p| Code::parse(p).unwrap()),
        billable: n_children == 0,
        notes: Vec::new(),
        seventh_char: seventh,
    });
    let mut labels: Vec<&str> = QUALIFIERS.to_vec();
    let mut modifiers = Vec::new();
    for digit in 0..n_children {
        let i = rng.random_range(0..labels.len());
        let label = labels.swap_remove(i);
        let child = if code.len() == 3 { format!("{code}.{digit}") } else { format!("{code}{digit}") };
        let child_title = format!("{title}, {label}");
        let children = grow(rng, cfg, &child, &child_title, Some(code), levels_left - 1, None, out);
        modifiers.push(Modifier { label: label.to_string(), code: Code::parse(&child), children });
    }
    modifiers
}
