//! Negative sampling.
//!
//! Every negative is a [`NegativeTriple`] whose slots are [`EntityView`]s, so
//! entity-level corruption (replace the whole head or tail) and visual
//! corruption (keep the structural id, swap only the visual id) share one
//! representation. The five strategies are built from the two primitives:
//!
//! * `normal`: [`sample_normal`] for every negative.
//! * `mans_v`: [`sample_visual`] for every negative.
//! * `mans_t`: visual for epochs `[0, floor(beta1 * M))`, normal afterwards.
//! * `mans_h`: `round_half_up(beta2 * k * N)` visual negatives per batch at
//!   uniformly random positions, the rest normal.
//! * `mans_a`: as `mans_h` with the proportion set per batch to the fraction
//!   of positives whose multimodal score is below their unimodal score.
//!
//! Both primitives consume the random stream identically (one coin, then
//! draws until the replacement differs from the original), and the hybrid
//! sampler only draws positions when the batch is genuinely mixed. With the
//! same seed the degenerate settings (`beta = 0` or `beta = 1`) therefore
//! emit exactly the normal or the visual stream.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EntityId, FilterIndex, RelationId, Triple};
use crate::features::FeatureTable;
use crate::model::{EntityView, ModelParams};
use crate::rng::{stream, stream_rng};
use crate::scoring::{needs_visual_ns, score_embeddings, Norm};

/// Guards the rounding rules against products such as `0.29 * 100`
/// evaluating to `28.999999999999996`.
const ROUNDING_SLACK: f64 = 1e-9;

/// Attempts per negative before a false-negative filter gives up and keeps
/// the last draw.
const MAX_FILTER_ATTEMPTS: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum SampleError {
    #[error("cannot corrupt a triple with only {0} entities (need at least 2)")]
    CannotCorrupt(usize),
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorruptionKind {
    Normal,
    Visual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NegativeTriple {
    pub head: EntityView,
    pub rel: RelationId,
    pub tail: EntityView,
    pub kind: CorruptionKind,
}

impl NegativeTriple {
    /// Both slots as whole entities; used for positives.
    pub fn from_positive(t: Triple) -> (EntityView, RelationId, EntityView) {
        (EntityView::whole(t.head), t.rel, EntityView::whole(t.tail))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    #[default]
    Normal,
    MansV,
    MansT,
    MansH,
    MansA,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Normal,
        Strategy::MansV,
        Strategy::MansT,
        Strategy::MansH,
        Strategy::MansA,
    ];

    /// True for every strategy that reads visual features of other entities.
    pub fn is_modality_aware(self) -> bool {
        self != Strategy::Normal
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "normal" => Ok(Strategy::Normal),
            "mans_v" => Ok(Strategy::MansV),
            "mans_t" => Ok(Strategy::MansT),
            "mans_h" => Ok(Strategy::MansH),
            "mans_a" => Ok(Strategy::MansA),
            other => Err(format!(
                "unknown strategy {other:?} (expected normal, mans_v, mans_t, mans_h or mans_a)"
            )),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Normal => "normal",
            Strategy::MansV => "mans_v",
            Strategy::MansT => "mans_t",
            Strategy::MansH => "mans_h",
            Strategy::MansA => "mans_a",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Fraction of epochs spent in the visual stage (`mans_t`).
    pub beta1: f64,
    /// Fraction of visual negatives per batch (`mans_h`).
    pub beta2: f64,
    /// Negatives per positive.
    pub k: usize,
    /// Total number of training epochs `M`.
    pub total_epochs: usize,
    pub seed: u64,
    /// Redraw normal negatives that happen to be known triples.
    pub filter_false_negatives: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            strategy: Strategy::Normal,
            beta1: 0.4,
            beta2: 0.3,
            k: 1,
            total_epochs: 1000,
            seed: 0,
            filter_false_negatives: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SampleError> {
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..=1.0).contains(&beta) {
                return Err(SampleError::InvalidConfig(format!(
                    "{name} = {beta} must lie in [0, 1]"
                )));
            }
        }
        if self.k == 0 {
            return Err(SampleError::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

fn corrupt(
    pos: Triple,
    n_entities: usize,
    rng: &mut impl Rng,
    kind: CorruptionKind,
    mut accept: impl FnMut(EntityId, bool) -> bool,
) -> Result<NegativeTriple, SampleError> {
    if n_entities < 2 {
        return Err(SampleError::CannotCorrupt(n_entities));
    }
    let corrupt_head = rng.gen::<bool>();
    let original = if corrupt_head { pos.head } else { pos.tail };
    let mut attempts = 0;
    let replacement = loop {
        let e = rng.gen_range(0..n_entities as EntityId);
        if e == original {
            continue;
        }
        attempts += 1;
        if accept(e, corrupt_head) || attempts >= MAX_FILTER_ATTEMPTS {
            break e;
        }
    };
    let swap = |slot: EntityId| match kind {
        CorruptionKind::Normal => EntityView::whole(replacement),
        CorruptionKind::Visual => EntityView::mixed(slot, replacement),
    };
    let (head, tail) = if corrupt_head {
        (swap(pos.head), EntityView::whole(pos.tail))
    } else {
        (EntityView::whole(pos.head), swap(pos.tail))
    };
    Ok(NegativeTriple {
        head,
        rel: pos.rel,
        tail,
        kind,
    })
}

/// Replaces the head or the tail (fair coin) by a uniformly drawn different
/// entity.
pub fn sample_normal(
    pos: Triple,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<NegativeTriple, SampleError> {
    corrupt(pos, n_entities, rng, CorruptionKind::Normal, |_, _| true)
}

/// As [`sample_normal`], redrawing replacements that form a known triple.
pub fn sample_normal_filtered(
    pos: Triple,
    n_entities: usize,
    known: &FilterIndex,
    rng: &mut impl Rng,
) -> Result<NegativeTriple, SampleError> {
    corrupt(pos, n_entities, rng, CorruptionKind::Normal, |e, head| {
        let candidate = if head {
            Triple::new(e, pos.rel, pos.tail)
        } else {
            Triple::new(pos.head, pos.rel, e)
        };
        !known.contains(&candidate)
    })
}

/// Keeps the structural id of the chosen slot and replaces only its visual
/// id by a uniformly drawn different entity.
pub fn sample_visual(
    pos: Triple,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<NegativeTriple, SampleError> {
    corrupt(pos, n_entities, rng, CorruptionKind::Visual, |_, _| true)
}

/// Epoch at which `mans_t` switches from visual to normal negatives.
pub fn stage_switch_epoch(beta1: f64, total_epochs: usize) -> usize {
    (beta1 * total_epochs as f64 + ROUNDING_SLACK).floor() as usize
}

pub fn select_strategy_mans_t(epoch: usize, beta1: f64, total_epochs: usize) -> CorruptionKind {
    if epoch < stage_switch_epoch(beta1, total_epochs) {
        CorruptionKind::Visual
    } else {
        CorruptionKind::Normal
    }
}

/// `round_half_up(beta * total)`.
pub fn visual_count(beta: f64, total: usize) -> usize {
    let n = (beta * total as f64 + 0.5 + ROUNDING_SLACK).floor() as usize;
    n.min(total)
}

/// Negative `j` of a batch belongs to positive `j % batch.len()`: the batch
/// is walked once per round, `k` rounds in total.
pub fn positive_index(j: usize, batch_len: usize) -> usize {
    j % batch_len
}

fn draw(
    kind: CorruptionKind,
    pos: Triple,
    n_entities: usize,
    known: Option<&FilterIndex>,
    rng: &mut impl Rng,
) -> Result<NegativeTriple, SampleError> {
    match (kind, known) {
        (CorruptionKind::Visual, _) => sample_visual(pos, n_entities, rng),
        (CorruptionKind::Normal, None) => sample_normal(pos, n_entities, rng),
        (CorruptionKind::Normal, Some(f)) => sample_normal_filtered(pos, n_entities, f, rng),
    }
}

/// `k` negatives per positive, all of one kind.
pub fn sample_batch_uniform(
    batch: &[Triple],
    kind: CorruptionKind,
    k: usize,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<Vec<NegativeTriple>, SampleError> {
    sample_batch_uniform_filtered(batch, kind, k, n_entities, None, rng)
}

fn sample_batch_uniform_filtered(
    batch: &[Triple],
    kind: CorruptionKind,
    k: usize,
    n_entities: usize,
    known: Option<&FilterIndex>,
    rng: &mut impl Rng,
) -> Result<Vec<NegativeTriple>, SampleError> {
    (0..k * batch.len())
        .map(|j| {
            draw(
                kind,
                batch[positive_index(j, batch.len())],
                n_entities,
                known,
                rng,
            )
        })
        .collect()
}

fn sample_batch_mixed(
    batch: &[Triple],
    n_visual: usize,
    k: usize,
    n_entities: usize,
    known: Option<&FilterIndex>,
    rng: &mut impl Rng,
) -> Result<Vec<NegativeTriple>, SampleError> {
    let total = k * batch.len();
    if n_visual == 0 {
        return sample_batch_uniform_filtered(
            batch,
            CorruptionKind::Normal,
            k,
            n_entities,
            known,
            rng,
        );
    }
    if n_visual >= total {
        return sample_batch_uniform_filtered(
            batch,
            CorruptionKind::Visual,
            k,
            n_entities,
            known,
            rng,
        );
    }
    let mut visual = vec![false; total];
    for j in index::sample(rng, total, n_visual) {
        visual[j] = true;
    }
    (0..total)
        .map(|j| {
            let kind = if visual[j] {
                CorruptionKind::Visual
            } else {
                CorruptionKind::Normal
            };
            draw(
                kind,
                batch[positive_index(j, batch.len())],
                n_entities,
                known,
                rng,
            )
        })
        .collect()
}

/// Hybrid sampling: `round_half_up(beta * k * N)` visual negatives at
/// uniformly random positions among the `k * N`, the rest normal.
pub fn sample_batch_hybrid(
    batch: &[Triple],
    beta: f64,
    k: usize,
    n_entities: usize,
    rng: &mut impl Rng,
) -> Result<Vec<NegativeTriple>, SampleError> {
    let n_visual = visual_count(beta, k * batch.len());
    sample_batch_mixed(batch, n_visual, k, n_entities, None, rng)
}

/// Number of positives whose multimodal score is strictly below their
/// unimodal score under `params`.
pub fn count_needing_visual(
    batch: &[Triple],
    params: &ModelParams,
    table: &FeatureTable,
    norm: Norm,
) -> usize {
    let d = params.dim();
    let mut h_v = vec![0.0; d];
    let mut t_v = vec![0.0; d];
    batch
        .iter()
        .filter(|t| {
            params.project_into(table.row(t.head), &mut h_v);
            params.project_into(table.row(t.tail), &mut t_v);
            let parts = score_embeddings(
                params.entity(t.head),
                &h_v,
                params.relation(t.rel),
                params.entity(t.tail),
                &t_v,
                norm,
            );
            needs_visual_ns(&parts)
        })
        .count()
}

/// Adaptive sampling. Returns the negatives and the batch proportion
/// `beta3`, the mean of the visual indicator over the batch.
pub fn sample_batch_adaptive(
    batch: &[Triple],
    params: &ModelParams,
    table: &FeatureTable,
    k: usize,
    n_entities: usize,
    norm: Norm,
    rng: &mut impl Rng,
) -> Result<(Vec<NegativeTriple>, f64), SampleError> {
    sample_batch_adaptive_filtered(batch, params, table, k, n_entities, norm, None, rng)
}

#[allow(clippy::too_many_arguments)]
fn sample_batch_adaptive_filtered(
    batch: &[Triple],
    params: &ModelParams,
    table: &FeatureTable,
    k: usize,
    n_entities: usize,
    norm: Norm,
    known: Option<&FilterIndex>,
    rng: &mut impl Rng,
) -> Result<(Vec<NegativeTriple>, f64), SampleError> {
    if batch.is_empty() {
        return Ok((Vec::new(), 0.0));
    }
    let flagged = count_needing_visual(batch, params, table, norm);
    let beta3 = flagged as f64 / batch.len() as f64;
    // round_half_up(beta3 * k * N) is exactly flagged * k
    let negatives = sample_batch_mixed(batch, flagged * k, k, n_entities, known, rng)?;
    Ok((negatives, beta3))
}

#[derive(Debug, Clone)]
pub struct BatchNegatives {
    pub negatives: Vec<NegativeTriple>,
    /// Adaptive proportion, only for `mans_a`.
    pub beta3: Option<f64>,
}

/// A sampler for one training run: owns its configuration and random
/// stream, and dispatches to the strategy's batch routine.
pub struct NegativeSampler {
    config: SamplerConfig,
    n_entities: usize,
    rng: ChaCha8Rng,
}

impl NegativeSampler {
    pub fn new(config: SamplerConfig, n_entities: usize) -> Result<Self, SampleError> {
        config.validate()?;
        if n_entities < 2 {
            return Err(SampleError::CannotCorrupt(n_entities));
        }
        let rng = stream_rng(config.seed, stream::SAMPLER);
        Ok(NegativeSampler {
            config,
            n_entities,
            rng,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Negatives for one batch. `params` must be the pre-update snapshot;
    /// only `mans_a` reads it. `known` is consulted only when
    /// `filter_false_negatives` is set.
    pub fn sample(
        &mut self,
        batch: &[Triple],
        epoch: usize,
        params: &ModelParams,
        table: &FeatureTable,
        norm: Norm,
        known: &FilterIndex,
    ) -> Result<BatchNegatives, SampleError> {
        let cfg = &self.config;
        let known = cfg.filter_false_negatives.then_some(known);
        let (k, n) = (cfg.k, self.n_entities);
        let rng = &mut self.rng;
        let (negatives, beta3) = match cfg.strategy {
            Strategy::Normal => (
                sample_batch_uniform_filtered(batch, CorruptionKind::Normal, k, n, known, rng)?,
                None,
            ),
            Strategy::MansV => (
                sample_batch_uniform_filtered(batch, CorruptionKind::Visual, k, n, known, rng)?,
                None,
            ),
            Strategy::MansT => {
                let kind = select_strategy_mans_t(epoch, cfg.beta1, cfg.total_epochs);
                (
                    sample_batch_uniform_filtered(batch, kind, k, n, known, rng)?,
                    None,
                )
            }
            Strategy::MansH => {
                let n_visual = visual_count(cfg.beta2, k * batch.len());
                (sample_batch_mixed(batch, n_visual, k, n, known, rng)?, None)
            }
            Strategy::MansA => {
                let (negs, beta3) =
                    sample_batch_adaptive_filtered(batch, params, table, k, n, norm, known, rng)?;
                (negs, Some(beta3))
            }
        };
        Ok(BatchNegatives { negatives, beta3 })
    }
}
