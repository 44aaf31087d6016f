//! Exact k-nearest-neighbor index over unit-norm embeddings (L2 distance).
//!
//! File layout:
//!
//! ```text
//! VIDX1 dim=<D> count=<N> metric=l2
//! <record-id>\t<domain>\t<base64(utterance)>\t<f1> ... <fD>
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use thiserror::Error;

use crate::corpus::normalize_utterance;
use crate::embedding::{write_floats, EmbeddingVector};

pub const FORMAT_MAGIC: &str = "VIDX1";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero records")]
    EmptyInput,
    #[error("index is empty")]
    EmptyIndex,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("k must be at least 1")]
    KZero,
    #[error("unknown record id `{0}`")]
    UnknownId(String),
    #[error("index format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("unsupported index version `{0}`")]
    VersionMismatch(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
}

/// One record to index. `utterance` is stored normalized.
#[derive(Debug, Clone)]
pub struct IndexEntry {
    pub id: String,
    pub vector: EmbeddingVector,
    pub domain: String,
    pub utterance: String,
}

/// Candidate filter applied before ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExclusionRule {
    None,
    ById(String),
    /// Drops candidates whose normalized utterance equals this text.
    ByText(String),
    ByIdAndText { id: String, text: String },
    /// Keeps only candidates from other domains.
    DomainNotEqual(String),
}

impl ExclusionRule {
    pub fn by_text(text: &str) -> Self {
        ExclusionRule::ByText(normalize_utterance(text))
    }

    pub fn by_id_and_text(id: &str, text: &str) -> Self {
        ExclusionRule::ByIdAndText { id: id.to_string(), text: normalize_utterance(text) }
    }

    /// True when the candidate is allowed.
    pub fn admits(&self, id: &str, domain: &str, normalized_utterance: &str) -> bool {
        match self {
            ExclusionRule::None => true,
            ExclusionRule::ById(x) => x != id,
            ExclusionRule::ByText(t) => t != normalized_utterance,
            ExclusionRule::ByIdAndText { id: x, text } => x != id && text != normalized_utterance,
            ExclusionRule::DomainNotEqual(d) => d != domain,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    pub query_id: Option<String>,
    pub entries: Vec<Neighbor>,
    pub policy: String,
}

impl NeighborList {
    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|n| n.id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    // row-major, ids.len() * dim
    matrix: Vec<f32>,
    domains: Vec<String>,
    utterances: Vec<String>,
    position: HashMap<String, usize>,
}

fn check_dim(expected: usize, found: usize) -> Result<(), IndexError> {
    if expected == found {
        Ok(())
    } else {
        Err(IndexError::DimMismatch { expected, found })
    }
}

/// Euclidean distance accumulated in f64.
pub fn l2_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

pub fn build_index(records: Vec<IndexEntry>) -> Result<VectorIndex, IndexError> {
    let first = records.first().ok_or(IndexError::EmptyInput)?;
    let dim = first.vector.dim();
    let mut ix = VectorIndex::empty(dim);
    for rec in records {
        ix.push(rec.id, rec.vector.values(), rec.domain, normalize_utterance(&rec.utterance))?;
    }
    Ok(ix)
}

impl VectorIndex {
    fn empty(dim: usize) -> Self {
        VectorIndex {
            dim,
            ids: Vec::new(),
            matrix: Vec::new(),
            domains: Vec::new(),
            utterances: Vec::new(),
            position: HashMap::new(),
        }
    }

    fn push(&mut self, id: String, values: &[f32], domain: String, utterance: String) -> Result<(), IndexError> {
        check_dim(self.dim, values.len())?;
        if self.position.contains_key(&id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.position.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.matrix.extend_from_slice(values);
        self.domains.push(domain);
        self.utterances.push(utterance);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.position.get(id).copied()
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn domain(&self, pos: usize) -> &str {
        &self.domains[pos]
    }

    pub fn utterance(&self, pos: usize) -> &str {
        &self.utterances[pos]
    }

    pub fn row(&self, pos: usize) -> &[f32] {
        &self.matrix[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn vector(&self, id: &str) -> Option<EmbeddingVector> {
        self.position(id).map(|p| EmbeddingVector::new(self.row(p).to_vec()))
    }

    pub fn domain_of(&self, id: &str) -> Option<&str> {
        self.position(id).map(|p| self.domain(p))
    }

    pub fn utterance_of(&self, id: &str) -> Option<&str> {
        self.position(id).map(|p| self.utterance(p))
    }

    pub fn admits(&self, pos: usize, rule: &ExclusionRule) -> bool {
        rule.admits(&self.ids[pos], &self.domains[pos], &self.utterances[pos])
    }

    /// The `k` nearest records that pass `exclude`, ascending by
    /// (distance, id).
    pub fn query(&self, q: &EmbeddingVector, k: usize, exclude: &ExclusionRule) -> Result<NeighborList, IndexError> {
        self.query_where(q, k, exclude, |_| true)
    }

    /// Like [`query`](Self::query) with an extra positional candidate filter.
    pub fn query_where(
        &self,
        q: &EmbeddingVector,
        k: usize,
        exclude: &ExclusionRule,
        keep: impl Fn(usize) -> bool,
    ) -> Result<NeighborList, IndexError> {
        if k == 0 {
            return Err(IndexError::KZero);
        }
        check_dim(self.dim, q.dim())?;
        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|&p| self.admits(p, exclude) && keep(p))
            .map(|p| (l2_distance(q.values(), self.row(p)), p))
            .collect();
        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            a.0.total_cmp(&b.0).then_with(|| self.ids[a.1].cmp(&self.ids[b.1]))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        Ok(NeighborList {
            query_id: None,
            entries: scored
                .into_iter()
                .map(|(distance, p)| Neighbor { id: self.ids[p].clone(), distance })
                .collect(),
            policy: "top_k".to_string(),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{FORMAT_MAGIC} dim={} count={} metric=l2\n", self.dim, self.len());
        for p in 0..self.len() {
            out.push_str(&self.ids[p]);
            out.push('\t');
            out.push_str(&self.domains[p]);
            out.push('\t');
            out.push_str(&BASE64.encode(self.utterances[p].as_bytes()));
            out.push('\t');
            write_floats(&mut out, self.row(p));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, IndexError> {
        let fmt_err = |line: usize, msg: &str| IndexError::Format { line, msg: msg.to_string() };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| fmt_err(1, "missing header"))?;
        let mut fields = header.split_whitespace();
        let magic = fields.next().unwrap_or("");
        if magic != FORMAT_MAGIC {
            if magic.starts_with("VIDX") {
                return Err(IndexError::VersionMismatch(magic.to_string()));
            }
            return Err(fmt_err(1, "bad magic"));
        }
        let mut dim = None;
        let mut count = None;
        let mut metric = None;
        for field in fields {
            match field.split_once('=') {
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("count", v)) => count = v.parse::<usize>().ok(),
                Some(("metric", v)) => metric = Some(v),
                _ => return Err(fmt_err(1, "unrecognized header field")),
            }
        }
        let (dim, count) = match (dim, count, metric) {
            (Some(d), Some(c), Some("l2")) if d > 0 => (d, c),
            _ => return Err(fmt_err(1, "header needs dim>0, count and metric=l2")),
        };
        let mut ix = VectorIndex::empty(dim);
        for (i, raw) in lines.enumerate() {
            let line = i + 2;
            if raw.is_empty() {
                continue;
            }
            let cols: Vec<&str> = raw.split('\t').collect();
            let [id, domain, b64, floats] = cols[..] else {
                return Err(fmt_err(line, "expected 4 tab-separated columns"));
            };
            let bytes = BASE64.decode(b64).map_err(|e| fmt_err(line, &e.to_string()))?;
            let utterance = String::from_utf8(bytes).map_err(|e| fmt_err(line, &e.to_string()))?;
            let values = floats
                .split_whitespace()
                .map(|f| f.parse::<f32>())
                .collect::<Result<Vec<f32>, _>>()
                .map_err(|e| fmt_err(line, &e.to_string()))?;
            if values.len() != dim {
                return Err(fmt_err(line, &format!("expected {dim} components, found {}", values.len())));
            }
            ix.push(id.to_string(), &values, domain.to_string(), utterance)
                .map_err(|e| fmt_err(line, &e.to_string()))?;
        }
        if ix.len() != count {
            return Err(fmt_err(0, &format!("header count {count} but {} rows", ix.len())));
        }
        Ok(ix)
    }
}

pub fn save_index(ix: &VectorIndex, path: &Path) -> Result<(), IndexError> {
    fs::write(path, ix.to_text()).map_err(|source| IndexError::Io { path: path.display().to_string(), source })
}

pub fn load_index(path: &Path) -> Result<VectorIndex, IndexError> {
    let text =
        fs::read_to_string(path).map_err(|source| IndexError::Io { path: path.display().to_string(), source })?;
    VectorIndex::from_text(&text)
}
