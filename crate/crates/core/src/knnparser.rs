//! Non-parametric frame transfer: copy the nearest neighbor's canonical
//! frame and re-fill each slot value with the best-matching span of the
//! input utterance.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::augment::{select_neighbors, AugmentConfig, AugmentError, NeighborPolicy};
use crate::corpus::{Corpus, UtteranceRecord};
use crate::embedding::{Embedder, EmbeddingError, EmbeddingVector};
use crate::topformat::{canonicalize, parse_top, serialize, IntentChild, IntentNode, ParseTree, SlotValue};
use crate::vindex::VectorIndex;

pub const DEFAULT_MIN_SCORE: f64 = 0.1;
pub const DEFAULT_SPAN_SLACK: usize = 2;

#[derive(Debug, Error)]
pub enum KnnError {
    #[error("index is empty")]
    EmptyIndex,
    #[error("neighbor `{0}` missing from the training corpus")]
    MissingNeighbor(String),
    #[error(transparent)]
    Augment(AugmentError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("line {line}: unknown record id `{id}`")]
    UnknownId { line: usize, id: String },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

impl From<AugmentError> for KnnError {
    fn from(e: AugmentError) -> Self {
        match e {
            AugmentError::EmptyIndex => KnnError::EmptyIndex,
            other => KnnError::Augment(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnConfig {
    pub policy: NeighborPolicy,
    pub seed: u64,
    /// Spans scoring below this keep the neighbor's value.
    pub min_score: f64,
    /// Longest span tried is the neighbor value length plus this.
    pub span_slack: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            policy: NeighborPolicy::default(),
            seed: 0,
            min_score: DEFAULT_MIN_SCORE,
            span_slack: DEFAULT_SPAN_SLACK,
        }
    }
}

fn lcs_len(a: &[char], b: &[char]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &ca in a {
        for (j, &cb) in b.iter().enumerate() {
            cur[j + 1] = if ca == cb { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn folded_chars<S: AsRef<str>>(tokens: &[S]) -> Vec<char> {
    let joined = tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ");
    joined.to_lowercase().chars().collect()
}

/// Character LCS length of the space-joined, lowercased token lists,
/// divided by the longer length.
pub fn span_similarity<A: AsRef<str>, B: AsRef<str>>(a: &[A], b: &[B]) -> f64 {
    let ca = folded_chars(a);
    let cb = folded_chars(b);
    match (ca.is_empty(), cb.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => lcs_len(&ca, &cb) as f64 / ca.len().max(cb.len()) as f64,
    }
}

/// One slot re-fill decision.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotFill {
    pub slot_label: String,
    pub neighbor_value_tokens: Vec<String>,
    pub chosen_span: Option<(usize, usize)>,
    pub score: f64,
}

struct Filler<'a> {
    tokens: &'a [&'a str],
    used: Vec<bool>,
    cfg: &'a KnnConfig,
    fills: Vec<SlotFill>,
}

impl Filler<'_> {
    fn best_span(&self, value: &[String]) -> Option<((usize, usize), f64)> {
        let n = self.tokens.len();
        let max_len = value.len() + self.cfg.span_slack;
        let mut best: Option<((usize, usize), f64)> = None;
        for start in 0..n {
            for end in start + 1..=(start + max_len).min(n) {
                let span = &self.tokens[start..end];
                if self.used[start..end].iter().any(|&u| u) {
                    break;
                }
                let score = span_similarity(span, value);
                if score >= self.cfg.min_score && best.is_none_or(|(_, s)| score > s) {
                    best = Some(((start, end), score));
                }
            }
        }
        best
    }

    fn fill_intent(&mut self, node: &mut IntentNode) {
        for child in node.children_mut() {
            let IntentChild::Slot(slot) = child else { continue };
            let label = slot.label().to_string();
            match slot.value_mut() {
                SlotValue::Intent(inner) => self.fill_intent(inner),
                SlotValue::Text(value) if value.is_empty() => {}
                SlotValue::Text(value) => {
                    let found = self.best_span(value);
                    self.fills.push(SlotFill {
                        slot_label: label,
                        neighbor_value_tokens: value.clone(),
                        chosen_span: found.map(|(s, _)| s),
                        score: found.map_or(0.0, |(_, s)| s),
                    });
                    if let Some(((start, end), _)) = found {
                        self.used[start..end].iter_mut().for_each(|u| *u = true);
                        *value = self.tokens[start..end].iter().map(|t| t.to_string()).collect();
                    }
                }
            }
        }
    }
}

/// Re-fills the slots of `frame` from `utterance`, visiting slots in
/// canonical order and never reusing a token. Returns the canonical filled
/// frame and the per-slot decisions.
pub fn transfer_frame(frame: &ParseTree, utterance: &str, cfg: &KnnConfig) -> (ParseTree, Vec<SlotFill>) {
    // bracket characters cannot appear inside a frame token
    let tokens: Vec<&str> = utterance.split_whitespace().collect();
    let mut filler = Filler {
        tokens: &tokens,
        used: tokens.iter().map(|t| t.contains(['[', ']'])).collect(),
        cfg,
        fills: Vec::new(),
    };
    let mut root = canonicalize(frame).into_root();
    filler.fill_intent(&mut root);
    (canonicalize(&ParseTree::new(root)), filler.fills)
}

/// Predicts a canonical frame for `rec` from its top-1 neighbor under
/// `cfg.policy`.
pub fn knn_predict(
    rec: &UtteranceRecord,
    query: &EmbeddingVector,
    ix: &VectorIndex,
    train: &Corpus,
    cfg: &KnnConfig,
) -> Result<String, KnnError> {
    let aug = AugmentConfig { k: 1, policy: cfg.policy, seed: cfg.seed, ..AugmentConfig::default() };
    let neighbors = select_neighbors(rec, query, ix, &aug, train)?;
    let top = neighbors.entries.first().ok_or(KnnError::EmptyIndex)?;
    let neighbor = train.get(&top.id).ok_or_else(|| KnnError::MissingNeighbor(top.id.clone()))?;
    let (filled, _) = transfer_frame(&neighbor.tree, &rec.utterance, cfg);
    Ok(serialize(&filled))
}

/// Predictions keyed by record id, kept in insertion order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PredictionSet {
    pub split_name: String,
    entries: Vec<(String, String)>,
    by_id: HashMap<String, usize>,
}

impl PredictionSet {
    pub fn new(split_name: impl Into<String>) -> Self {
        PredictionSet { split_name: split_name.into(), ..PredictionSet::default() }
    }

    /// Returns false if `id` was already present.
    pub fn insert(&mut self, id: String, frame: String) -> bool {
        if self.by_id.contains_key(&id) {
            return false;
        }
        self.by_id.insert(id.clone(), self.entries.len());
        self.entries.push((id, frame));
        true
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.by_id.get(id).map(|&i| self.entries[i].1.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }

    pub fn unparseable_ids(&self) -> Vec<&str> {
        self.iter().filter(|(_, f)| parse_top(f).is_err()).map(|(id, _)| id).collect()
    }

    /// Corpus ids with no prediction, in corpus order.
    pub fn missing<'c>(&self, corpus: &'c Corpus) -> Vec<&'c str> {
        corpus.records().iter().map(|r| r.id.as_str()).filter(|id| !self.by_id.contains_key(*id)).collect()
    }

    pub fn to_tsv(&self) -> String {
        self.iter().map(|(id, f)| format!("{id}\t{f}\n")).collect()
    }
}

pub fn predict_corpus(
    test: &Corpus,
    ix: &VectorIndex,
    train: &Corpus,
    embedder: &dyn Embedder,
    cfg: &KnnConfig,
) -> Result<PredictionSet, KnnError> {
    let mut out = PredictionSet::new(test.split_name());
    for rec in test.records() {
        let q = embedder.embed(&rec.id, &rec.utterance)?;
        out.insert(rec.id.clone(), knn_predict(rec, &q, ix, train, cfg)?);
    }
    Ok(out)
}

/// Parses `record-id \t frame` rows. Unparseable frames are kept verbatim.
pub fn parse_predictions(text: &str, corpus: &Corpus) -> Result<PredictionSet, KnnError> {
    let mut set = PredictionSet::new(corpus.split_name());
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            continue;
        }
        let (id, frame) = raw
            .split_once('\t')
            .ok_or_else(|| KnnError::Parse { line, msg: "expected `record-id<TAB>frame`".into() })?;
        if corpus.get(id).is_none() {
            return Err(KnnError::UnknownId { line, id: id.to_string() });
        }
        if !set.insert(id.to_string(), frame.to_string()) {
            return Err(KnnError::DuplicateId { line, id: id.to_string() });
        }
    }
    Ok(set)
}

pub fn load_predictions(path: &Path, corpus: &Corpus) -> Result<PredictionSet, KnnError> {
    let text = fs::read_to_string(path).map_err(|source| KnnError::Io { path: path.display().to_string(), source })?;
    parse_predictions(&text, corpus)
}
