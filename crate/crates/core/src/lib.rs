//! Training and evaluation engine for multimodal knowledge-graph embeddings.
//!
//! Every entity carries two embeddings: a learned structural vector and a
//! visual vector obtained by projecting a frozen, pre-pooled image feature
//! through a trainable matrix. Triples are scored with four TransE terms that
//! mix the two modalities, and training contrasts positives with negatives
//! drawn by one of five strategies:
//!
//! | Strategy | Negatives |
//! |----------|-----------|
//! | `normal` | replace the whole head or tail entity |
//! | `mans_v` | replace only the visual embedding of one slot |
//! | `mans_t` | `mans_v` for the first part of training, then `normal` |
//! | `mans_h` | a fixed fraction of every batch from `mans_v`, the rest `normal` |
//! | `mans_a` | like `mans_h`, with the fraction recomputed per batch from the scores |
//!
//! Evaluation covers filtered link prediction (MR, MRR, Hits@K) and triple
//! classification with per-relation thresholds.

pub mod data;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod scoring;
pub mod synthetic;
pub mod training;

pub use data::{Dataset, EntityId, RelationId, Triple, TripleStore, Vocab};
pub use evaluation::{ClassifMetrics, LinkPredMetrics, Split};
pub use features::{FeatureTable, Provenance};
pub use model::{EntityView, ModelParams};
pub use sampling::{NegativeTriple, SamplerConfig, Strategy};
pub use scoring::{Norm, ScoreParts};
pub use training::{RunLog, TrainConfig};

/// Crate-wide error, one variant per subsystem.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Features(#[from] features::FeatureError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Score(#[from] scoring::ScoreError),
    #[error(transparent)]
    Sampling(#[from] sampling::SampleError),
    #[error(transparent)]
    Training(#[from] training::TrainError),
    #[error(transparent)]
    Evaluation(#[from] evaluation::EvalError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
