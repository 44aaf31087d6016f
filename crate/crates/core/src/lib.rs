//! Retrieval-augmented task-oriented semantic parsing toolkit.
//!
//! The pipeline runs: ingest a TOP-format [`corpus`], embed utterances
//! ([`embedding`]), build an exact nearest-neighbor index ([`vindex`]),
//! select neighbors and render augmented inputs ([`augment`]), predict
//! frames by neighbor transfer ([`knnparser`]), then score predictions
//! ([`evaluation`]).

pub mod augment;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod hashing;
pub mod knnparser;
pub mod synth;
pub mod topformat;
pub mod vindex;

pub use augment::{AugmentConfig, AugmentMode, AugmentedExample, Exclusion, NeighborPolicy, PolicyKind};
pub use corpus::{Corpus, UtteranceRecord};
pub use embedding::{Embedder, EmbeddingTable, EmbeddingVector, HashedEmbedder};
pub use evaluation::{EvalReport, PRReport, SliceKind, SliceReport};
pub use knnparser::{KnnConfig, PredictionSet};
pub use topformat::{FrameSkeleton, ParseTree};
pub use vindex::{ExclusionRule, NeighborList, VectorIndex};
