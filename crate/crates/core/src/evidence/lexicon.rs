use std::collections::{BTreeMap, HashMap};

use crate::code::Code;
use crate::ontology::{IndexEntry, Ontology};
use crate::text::{normalize, token_texts};

/// Where a lexicon phrase came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhraseSource {
    LeadTerm,
    /// Lead term followed by a modifier chain.
    IndexPath,
    Title(Code),
    InclusionTerm(Code),
}

/// A normalized phrase and the lead term / qualifier decomposition that
/// index navigation consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconPhrase {
    pub phrase: String,
    pub lead: String,
    pub qualifiers: Vec<String>,
    pub source: PhraseSource,
}

#[derive(Debug, Clone)]
pub(super) struct ModifierNode {
    pub label: String,
    pub tokens: Vec<String>,
    pub children: Vec<ModifierNode>,
}

#[derive(Debug, Clone)]
pub(super) struct LeadTree {
    pub lead: String,
    pub modifiers: Vec<ModifierNode>,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    next: HashMap<String, usize>,
    /// Key into `Lexicon::phrases`.
    terminal: Option<String>,
}

/// Phrase dictionary built from an ontology's index, titles and inclusion
/// terms. Immutable and cheap to share.
#[derive(Debug, Clone)]
pub struct Lexicon {
    phrases: BTreeMap<String, LexiconPhrase>,
    trie: Vec<TrieNode>,
    /// Lead trees keyed by the lead term's token sequence.
    pub(super) leads: HashMap<Vec<String>, LeadTree>,
    pub(super) max_lead_tokens: usize,
}

impl Lexicon {
    pub fn build(o: &Ontology) -> Lexicon {
        let mut lex = Lexicon {
            phrases: BTreeMap::new(),
            trie: vec![TrieNode::default()],
            leads: HashMap::new(),
            max_lead_tokens: 0,
        };
        for entry in o.index() {
            lex.add(LexiconPhrase {
                phrase: entry.lead_term.clone(),
                lead: entry.lead_term.clone(),
                qualifiers: Vec::new(),
                source: PhraseSource::LeadTerm,
            });
            for (path, _) in entry.modifier_paths() {
                let phrase = std::iter::once(entry.lead_term.as_str()).chain(path.iter().copied()).collect::<Vec<_>>().join(" ");
                lex.add(LexiconPhrase {
                    phrase,
                    lead: entry.lead_term.clone(),
                    qualifiers: path.iter().map(|s| s.to_string()).collect(),
                    source: PhraseSource::IndexPath,
                });
            }
            lex.leads.insert(
                token_texts(&entry.lead_term),
                LeadTree { lead: entry.lead_term.clone(), modifiers: modifier_nodes(&entry.modifiers) },
            );
        }
        lex.max_lead_tokens = lex.leads.keys().map(Vec::len).max().unwrap_or(0);
        let lookup = LeadLookup::new(o.index());
        for code in o.codes() {
            let titled = std::iter::once((code.title.as_str(), true)).chain(code.inclusion_terms().map(|t| (t, false)));
            for (text, is_title) in titled {
                let phrase = normalize(text);
                if phrase.is_empty() {
                    continue;
                }
                let (lead, qualifiers) = decompose(o.index(), &lookup, &phrase);
                let source = if is_title {
                    PhraseSource::Title(code.code.clone())
                } else {
                    PhraseSource::InclusionTerm(code.code.clone())
                };
                lex.add(LexiconPhrase { phrase, lead, qualifiers, source });
            }
        }
        lex
    }

    /// Index-derived phrases win over titles with the same text.
    fn add(&mut self, p: LexiconPhrase) {
        if self.phrases.contains_key(&p.phrase) {
            return;
        }
        let mut node = 0;
        for tok in p.phrase.split(' ') {
            node = match self.trie[node].next.get(tok) {
                Some(&n) => n,
                None => {
                    self.trie.push(TrieNode::default());
                    let n = self.trie.len() - 1;
                    self.trie[node].next.insert(tok.to_string(), n);
                    n
                }
            };
        }
        self.trie[node].terminal = Some(p.phrase.clone());
        self.phrases.insert(p.phrase.clone(), p);
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.phrases.contains_key(&normalize(phrase))
    }

    pub fn get(&self, phrase: &str) -> Option<&LexiconPhrase> {
        self.phrases.get(&normalize(phrase))
    }

    pub fn phrases(&self) -> impl Iterator<Item = &LexiconPhrase> {
        self.phrases.values()
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    /// Every phrase whose tokens equal a prefix of `tokens`, shortest first.
    pub(super) fn prefix_matches<'a>(&'a self, tokens: impl Iterator<Item = &'a str>) -> Vec<(usize, &'a LexiconPhrase)> {
        let mut out = Vec::new();
        let mut node = 0;
        for (n, tok) in tokens.enumerate() {
            match self.trie[node].next.get(tok) {
                Some(&next) => node = next,
                None => break,
            }
            if let Some(key) = &self.trie[node].terminal {
                out.push((n + 1, &self.phrases[key]));
            }
        }
        out
    }
}

fn modifier_nodes(mods: &[crate::ontology::Modifier]) -> Vec<ModifierNode> {
    mods.iter()
        .map(|m| ModifierNode {
            label: m.label.clone(),
            tokens: token_texts(&m.label),
            children: modifier_nodes(&m.children),
        })
        .collect()
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Splits a title-like phrase into a lead term and the deepest modifier
/// path whose labels all occur in it. The longest lead occurrence wins,
/// then the leftmost. Phrases without a lead term map to themselves with
/// no qualifiers.
pub(super) fn decompose(index: &[IndexEntry], leads: &LeadLookup, phrase: &str) -> (String, Vec<String>) {
    let tokens = token_texts(phrase);
    let mut best: Option<(usize, usize, usize)> = None;
    for start in 0..tokens.len() {
        for len in 1..=leads.max_len.min(tokens.len() - start) {
            if let Some(&entry) = leads.by_tokens.get(&tokens[start..start + len]) {
                if best.is_none_or(|(_, blen, _)| len > blen) {
                    best = Some((entry, len, start));
                }
            }
        }
    }
    let Some((entry, _, _)) = best else {
        return (phrase.to_string(), Vec::new());
    };
    let entry = &index[entry];
    let path = entry
        .modifier_paths()
        .into_iter()
        .map(|(p, _)| p)
        .filter(|p| p.iter().all(|label| contains_run(&tokens, &token_texts(label))))
        .max_by(|a, b| a.len().cmp(&b.len()).then_with(|| b.cmp(a)))
        .unwrap_or_default();
    (entry.lead_term.clone(), path.into_iter().map(str::to_string).collect())
}

pub(super) struct LeadLookup {
    by_tokens: HashMap<Vec<String>, usize>,
    max_len: usize,
}

impl LeadLookup {
    pub(super) fn new(index: &[IndexEntry]) -> Self {
        let by_tokens: HashMap<Vec<String>, usize> =
            index.iter().enumerate().map(|(i, e)| (token_texts(&e.lead_term), i)).collect();
        let max_len = by_tokens.keys().map(Vec::len).max().unwrap_or(0);
        LeadLookup { by_tokens, max_len }
    }
}
