//! Utterance embeddings: a deterministic hashed-feature embedder, plus a
//! loader for externally computed vectors.
//!
//! Embedding file format, one record per line:
//!
//! ```text
//! # comment
//! <record-id>\t<f1> <f2> ... <fD>
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::hashing::fnv1a64;

pub const DEFAULT_DIM: usize = 256;
pub const DEFAULT_SEED: u64 = 0;
pub const MIN_HASHED_DIM: usize = 8;

const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("embedding dim {0} is below the minimum of {MIN_HASHED_DIM}")]
    DimTooSmall(usize),
    #[error("line {line}: expected {expected} components, found {found}")]
    DimMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("no embedding for id `{0}`")]
    MissingId(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        EmbeddingVector { values }
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&x| x == 0.0)
    }
}

/// Scales to unit L2 norm; vectors with norm at or below 1e-12 come back unchanged.
pub fn unit_normalize(v: &EmbeddingVector) -> EmbeddingVector {
    let norm = v.norm();
    if norm <= ZERO_NORM {
        return v.clone();
    }
    EmbeddingVector {
        values: v.values.iter().map(|&x| (f64::from(x) / norm) as f32).collect(),
    }
}

/// Feature strings of one lowercased word: the word, then the character
/// trigrams of `^word$`.
fn word_features(word: &str, mut emit: impl FnMut(&str)) {
    emit(word);
    let marked: Vec<char> = std::iter::once('^').chain(word.chars()).chain(std::iter::once('$')).collect();
    let mut buf = String::with_capacity(12);
    for window in marked.windows(3) {
        buf.clear();
        buf.extend(window);
        emit(&buf);
    }
}

/// Signed feature hashing over words and boundary-marked trigrams.
///
/// Each feature hashes with seeded FNV-1a; the bucket is `hash % dim` and the
/// top bit picks the sign. Counts accumulate in f32 in a single left-to-right
/// pass, then the vector is unit-normalized. An empty utterance maps to zeros.
pub fn embed_hashed(utterance: &str, dim: usize, seed: u64) -> Result<EmbeddingVector, EmbeddingError> {
    if dim < MIN_HASHED_DIM {
        return Err(EmbeddingError::DimTooSmall(dim));
    }
    let lower = utterance.to_lowercase();
    let mut acc = vec![0f32; dim];
    for word in lower.split_whitespace() {
        word_features(word, |feature| {
            let h = fnv1a64(feature.as_bytes(), seed);
            let bucket = (h % dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        });
    }
    Ok(unit_normalize(&EmbeddingVector::new(acc)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, EmbeddingVector>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.entries.get(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }
}

pub fn parse_embeddings(text: &str, expected_ids: &HashSet<String>) -> Result<EmbeddingTable, EmbeddingError> {
    let mut dim: Option<usize> = None;
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (id, rest) = trimmed.split_once('\t').ok_or_else(|| EmbeddingError::Parse {
            line,
            msg: "missing tab between id and vector".into(),
        })?;
        if id.is_empty() {
            return Err(EmbeddingError::Parse { line, msg: "empty id".into() });
        }
        let values = rest
            .split_whitespace()
            .map(|f| {
                f.parse::<f32>().map_err(|e| EmbeddingError::Parse { line, msg: format!("`{f}`: {e}") })
            })
            .collect::<Result<Vec<f32>, _>>()?;
        if values.is_empty() {
            return Err(EmbeddingError::Parse { line, msg: "empty vector".into() });
        }
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(EmbeddingError::DimMismatch { line, expected, found: values.len() });
        }
        let vector = unit_normalize(&EmbeddingVector::new(values));
        if entries.insert(id.to_string(), vector).is_some() {
            return Err(EmbeddingError::DuplicateId { line, id: id.to_string() });
        }
    }
    let mut missing: Vec<&String> = expected_ids.iter().filter(|id| !entries.contains_key(*id)).collect();
    missing.sort();
    if let Some(id) = missing.first() {
        return Err(EmbeddingError::MissingId((*id).clone()));
    }
    let dim = dim.ok_or(EmbeddingError::Parse { line: 0, msg: "no embedding rows".into() })?;
    Ok(EmbeddingTable { dim, entries })
}

pub fn load_embeddings(path: &Path, expected_ids: &HashSet<String>) -> Result<EmbeddingTable, EmbeddingError> {
    let text = fs::read_to_string(path)
        .map_err(|source| EmbeddingError::Io { path: path.display().to_string(), source })?;
    parse_embeddings(&text, expected_ids)
}

pub(crate) fn write_floats(out: &mut String, values: &[f32]) {
    for (i, x) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // shortest representation that round-trips exactly
        out.push_str(&x.to_string());
    }
}

pub fn format_embeddings(table: &EmbeddingTable) -> String {
    let mut out = String::new();
    for (id, v) in table.iter() {
        out.push_str(id);
        out.push('\t');
        write_floats(&mut out, v.values());
        out.push('\n');
    }
    out
}

pub fn save_embeddings(table: &EmbeddingTable, path: &Path) -> Result<(), EmbeddingError> {
    fs::write(path, format_embeddings(table))
        .map_err(|source| EmbeddingError::Io { path: path.display().to_string(), source })
}

/// Source of query and index vectors.
pub trait Embedder {
    fn dim(&self) -> usize;

    /// `id` lets table-backed embedders look vectors up; text-based
    /// embedders ignore it.
    fn embed(&self, id: &str, utterance: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl HashedEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self, EmbeddingError> {
        if dim < MIN_HASHED_DIM {
            return Err(EmbeddingError::DimTooSmall(dim));
        }
        Ok(HashedEmbedder { dim, seed })
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        HashedEmbedder { dim: DEFAULT_DIM, seed: DEFAULT_SEED }
    }
}

impl Embedder for HashedEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, _id: &str, utterance: &str) -> Result<EmbeddingVector, EmbeddingError> {
        embed_hashed(utterance, self.dim, self.seed)
    }
}

impl Embedder for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, id: &str, _utterance: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.get(id).cloned().ok_or_else(|| EmbeddingError::MissingId(id.to_string()))
    }
}
