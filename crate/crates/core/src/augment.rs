//! Neighbor selection policies and retrieval-augmented input rendering.
//!
//! Neighbors are prepended right-to-left by rank, so for k = 2 the input is
//! `n2 | n1 | utterance` and the closest neighbor sits immediately left of
//! the utterance.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::corpus::{Corpus, UtteranceRecord};
use crate::embedding::{Embedder, EmbeddingError, EmbeddingVector};
use crate::hashing::SplitMix64;
use crate::topformat::serialize;
use crate::vindex::{build_index, l2_distance, ExclusionRule, IndexEntry, IndexError, Neighbor, NeighborList, VectorIndex};

pub const DEFAULT_SEPARATOR: &str = "|";
pub const DEFAULT_TOP_M: usize = 100;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augmentation config: {0}")]
    Config(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("no candidate neighbors for `{0}`")]
    NoCandidates(String),
    #[error("neighbor id `{0}` not found")]
    UnknownNeighborId(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    UtteranceNn,
    SemparseNn,
}

impl FromStr for AugmentMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "utterance-nn" | "utterance_nn" => Ok(AugmentMode::UtteranceNn),
            "semparse-nn" | "semparse_nn" => Ok(AugmentMode::SemparseNn),
            _ => Err(format!("unknown mode `{s}`")),
        }
    }
}

impl fmt::Display for AugmentMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AugmentMode::UtteranceNn => "utterance-nn",
            AugmentMode::SemparseNn => "semparse-nn",
        })
    }
}

/// Which exclusion rule to derive for each query record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exclusion {
    #[default]
    None,
    Id,
    Text,
    IdAndText,
}

impl Exclusion {
    pub fn rule_for(self, rec: &UtteranceRecord) -> ExclusionRule {
        match self {
            Exclusion::None => ExclusionRule::None,
            Exclusion::Id => ExclusionRule::ById(rec.id.clone()),
            Exclusion::Text => ExclusionRule::by_text(&rec.utterance),
            Exclusion::IdAndText => ExclusionRule::by_id_and_text(&rec.id, &rec.utterance),
        }
    }
}

impl FromStr for Exclusion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Exclusion::None),
            "id" => Ok(Exclusion::Id),
            "text" => Ok(Exclusion::Text),
            "id+text" => Ok(Exclusion::IdAndText),
            _ => Err(format!("unknown exclusion `{s}`")),
        }
    }
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exclusion::None => "none",
            Exclusion::Id => "id",
            Exclusion::Text => "text",
            Exclusion::IdAndText => "id+text",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    TopK,
    /// k uniform picks from the top `m` retrievals.
    RandomTopM { m: usize },
    /// k uniform picks among records of other domains.
    CrossDomainRandom,
    /// Nearest records sharing the query's gold skeleton. Uses gold labels,
    /// so it is only meaningful as an evaluation probe.
    OracleSkeleton,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::TopK => "top-k",
            PolicyKind::RandomTopM { .. } => "random-top-m",
            PolicyKind::CrossDomainRandom => "cross-domain",
            PolicyKind::OracleSkeleton => "oracle-skeleton",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeighborPolicy {
    pub kind: PolicyKind,
    pub exclusion: Exclusion,
}

impl Default for NeighborPolicy {
    fn default() -> Self {
        NeighborPolicy { kind: PolicyKind::TopK, exclusion: Exclusion::Id }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentConfig {
    pub mode: AugmentMode,
    pub k: usize,
    pub separator: String,
    pub policy: NeighborPolicy,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mode: AugmentMode::SemparseNn,
            k: 1,
            separator: DEFAULT_SEPARATOR.to_string(),
            policy: NeighborPolicy::default(),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.k == 0 {
            return Err(AugmentError::Config("k must be at least 1".into()));
        }
        if self.separator.is_empty() || self.separator.chars().any(char::is_whitespace) {
            return Err(AugmentError::Config(format!("bad separator `{}`", self.separator)));
        }
        if let PolicyKind::RandomTopM { m } = self.policy.kind {
            if m < self.k {
                return Err(AugmentError::Config(format!("m ({m}) must be >= k ({})", self.k)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedExample {
    pub id: String,
    pub input: String,
    pub target: String,
    pub neighbor_ids: Vec<String>,
}

fn pick(list: Vec<Neighbor>, k: usize, seed: u64, key: &str) -> Vec<Neighbor> {
    let positions = SplitMix64::keyed(seed, key).sample_positions(list.len(), k);
    let mut list: Vec<Option<Neighbor>> = list.into_iter().map(Some).collect();
    positions.into_iter().filter_map(|p| list[p].take()).collect()
}

/// Chooses neighbors for `rec` under `cfg.policy`. `query` is the record's
/// embedding from the same embedder that built `ix`; `corpus` holds the
/// indexed records (needed for gold skeletons).
pub fn select_neighbors(
    rec: &UtteranceRecord,
    query: &EmbeddingVector,
    ix: &VectorIndex,
    cfg: &AugmentConfig,
    corpus: &Corpus,
) -> Result<NeighborList, AugmentError> {
    cfg.validate()?;
    if ix.is_empty() {
        return Err(AugmentError::EmptyIndex);
    }
    let rule = cfg.policy.exclusion.rule_for(rec);
    let entries = match cfg.policy.kind {
        PolicyKind::TopK => ix.query(query, cfg.k, &rule)?.entries,
        PolicyKind::RandomTopM { m } => {
            let top = ix.query(query, m, &rule)?.entries;
            pick(top, cfg.k, cfg.seed, &rec.id)
        }
        PolicyKind::CrossDomainRandom => {
            if query.dim() != ix.dim() {
                return Err(IndexError::DimMismatch { expected: ix.dim(), found: query.dim() }.into());
            }
            let candidates: Vec<Neighbor> = (0..ix.len())
                .filter(|&p| ix.domain(p) != rec.domain && ix.admits(p, &rule))
                .map(|p| Neighbor { id: ix.id(p).to_string(), distance: l2_distance(query.values(), ix.row(p)) })
                .collect();
            if candidates.is_empty() {
                return Err(AugmentError::NoCandidates(rec.id.clone()));
            }
            pick(candidates, cfg.k, cfg.seed, &rec.id)
        }
        PolicyKind::OracleSkeleton => {
            let same_frame =
                |p: usize| corpus.get(ix.id(p)).is_some_and(|other| other.skeleton == rec.skeleton);
            let hits = ix.query_where(query, cfg.k, &rule, same_frame)?.entries;
            if hits.is_empty() {
                ix.query(query, cfg.k, &rule)?.entries
            } else {
                hits
            }
        }
    };
    Ok(NeighborList {
        query_id: Some(rec.id.clone()),
        entries,
        policy: cfg.policy.kind.name().to_string(),
    })
}

/// Renders `p_k <sep> ... <sep> p_1 <sep> utterance`, where `p_i` is the
/// rank-i neighbor's utterance or gold parse.
pub fn render_augmented(
    rec: &UtteranceRecord,
    neighbor_ids: &[String],
    cfg: &AugmentConfig,
    lookup: &Corpus,
) -> Result<AugmentedExample, AugmentError> {
    let mut pieces = Vec::with_capacity(neighbor_ids.len() + 1);
    for id in neighbor_ids.iter().rev() {
        let n = lookup.get(id).ok_or_else(|| AugmentError::UnknownNeighborId(id.clone()))?;
        pieces.push(match cfg.mode {
            AugmentMode::UtteranceNn => n.utterance.clone(),
            AugmentMode::SemparseNn => serialize(&n.tree),
        });
    }
    pieces.push(rec.utterance.clone());
    Ok(AugmentedExample {
        id: rec.id.clone(),
        input: pieces.join(&format!(" {} ", cfg.separator)),
        target: rec.canonical.clone(),
        neighbor_ids: neighbor_ids.to_vec(),
    })
}

/// Augments every record of `c` against an index built over `train`.
pub fn augment_corpus(
    c: &Corpus,
    ix: &VectorIndex,
    cfg: &AugmentConfig,
    train: &Corpus,
    embedder: &dyn Embedder,
) -> Result<Vec<AugmentedExample>, AugmentError> {
    cfg.validate()?;
    c.records()
        .iter()
        .map(|rec| {
            let q = embedder.embed(&rec.id, &rec.utterance)?;
            let neighbors = select_neighbors(rec, &q, ix, cfg, train)?;
            render_augmented(rec, &neighbors.ids(), cfg, train)
        })
        .collect()
}

/// Embeds every record of `c` and builds an index over them.
pub fn index_corpus(c: &Corpus, embedder: &dyn Embedder) -> Result<VectorIndex, AugmentError> {
    let entries = c
        .records()
        .iter()
        .map(|r| {
            Ok(IndexEntry {
                id: r.id.clone(),
                vector: embedder.embed(&r.id, &r.utterance)?,
                domain: r.domain.clone(),
                utterance: r.utterance.clone(),
            })
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;
    Ok(build_index(entries)?)
}

/// `id \t input \t target \t neighbor_ids` rows, no header.
pub fn augmented_tsv(examples: &[AugmentedExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", ex.id, ex.input, ex.target, ex.neighbor_ids.join(",")));
    }
    out
}
