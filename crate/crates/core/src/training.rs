//! Margin-rank training with analytic gradients and lazy Adam.
//!
//! Each (positive, negative) pair contributes
//! `max(0, margin - F(pos) + F(neg))`. Pair losses are summed over the batch
//! and followed by a single optimizer step. Structural and relation rows are
//! updated lazily: only rows that received a gradient move, and each row
//! keeps its own Adam step count. The projection matrix is dense and shares
//! one step count. Raw features never receive gradient unless
//! `train_filled_features` is on, and then only the Xavier-filled rows do.

use std::collections::{BTreeMap, HashMap};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, EntityId, RelationId, Triple};
use crate::features::{FeatureTable, Provenance};
use crate::model::{init_params, EntityView, ModelError, ModelParams};
use crate::rng::{stream, stream_rng};
use crate::sampling::{
    positive_index, NegativeSampler, NegativeTriple, SampleError, SamplerConfig,
};
use crate::scoring::{score_embeddings, Norm, ScoreParts};

/// Residual norms below this get a zero L2 gradient.
const L2_GUARD: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: positive {positive:?}, negative {negative:?}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        positive: Triple,
        negative: NegativeTriple,
    },
    #[error(transparent)]
    Sampling(#[from] SampleError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Batching {
    NumBatches(usize),
    BatchSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub decay1: f64,
    pub decay2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.01,
            decay1: 0.9,
            decay2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Embedding dimension `d`.
    pub dim: usize,
    pub margin: f64,
    pub epochs: usize,
    pub batching: Batching,
    pub norm: Norm,
    pub seed: u64,
    /// Strategy, proportions, and `k`. Its epoch count and seed are taken
    /// from this config.
    pub sampler: SamplerConfig,
    pub adam: AdamConfig,
    pub renormalize: bool,
    pub checkpoint_every: usize,
    pub train_filled_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            margin: 4.0,
            epochs: 1000,
            batching: Batching::NumBatches(400),
            norm: Norm::L1,
            seed: 0,
            sampler: SamplerConfig::default(),
            adam: AdamConfig::default(),
            renormalize: true,
            checkpoint_every: 0,
            train_filled_features: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin = {} must be positive", self.margin));
        }
        let lr = self.adam.learning_rate;
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("learning_rate = {lr} must be positive"));
        }
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        match self.batching {
            Batching::NumBatches(0) => return bad("num_batches must be positive".into()),
            Batching::BatchSize(0) => return bad("batch_size must be positive".into()),
            _ => {}
        }
        if !(0.0..1.0).contains(&self.adam.decay1) || !(0.0..1.0).contains(&self.adam.decay2) {
            return bad("adam decays must lie in [0, 1)".into());
        }
        if self.adam.eps <= 0.0 {
            return bad("adam_eps must be positive".into());
        }
        self.sampler.validate()?;
        Ok(())
    }

    /// The sampler configuration with epoch count and seed filled in.
    pub fn effective_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            total_epochs: self.epochs,
            seed: self.seed,
            ..self.sampler.clone()
        }
    }
}

/// `max(0, margin - pos.total + neg.total)`.
pub fn margin_loss(pos: &ScoreParts, neg: &ScoreParts, gamma: f64) -> f64 {
    (gamma - pos.total + neg.total).max(0.0)
}

/// Sparse per-row gradients for `E_s` and `R`, plus a dense accumulator for
/// the projection. Rows a batch never touches are absent.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    d: usize,
    d_v: usize,
    pub entity: BTreeMap<EntityId, Vec<f64>>,
    pub relation: BTreeMap<RelationId, Vec<f64>>,
    /// `d x d_v`, present once any visual term received gradient.
    pub projection: Option<Vec<f64>>,
    /// Gradients for trainable (Xavier-filled) feature rows.
    pub features: BTreeMap<EntityId, Vec<f64>>,
    visual: BTreeMap<EntityId, Vec<f64>>,
    track_features: bool,
}

#[derive(Clone, Copy)]
enum Slot {
    Structural(EntityId),
    Visual(EntityId),
}

struct Embedded {
    h_v: Vec<f64>,
    t_v: Vec<f64>,
}

impl GradientBuffer {
    pub fn new(d: usize, d_v: usize, track_features: bool) -> Self {
        GradientBuffer {
            d,
            d_v,
            entity: BTreeMap::new(),
            relation: BTreeMap::new(),
            projection: None,
            features: BTreeMap::new(),
            visual: BTreeMap::new(),
            track_features,
        }
    }

    pub fn clear(&mut self) {
        self.entity.clear();
        self.relation.clear();
        self.projection = None;
        self.features.clear();
        self.visual.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.entity.is_empty()
            && self.relation.is_empty()
            && self.projection.is_none()
            && self.features.is_empty()
            && self.visual.is_empty()
    }

    fn embed(params: &ModelParams, table: &FeatureTable, h: EntityView, t: EntityView) -> Embedded {
        let d = params.dim();
        let mut h_v = vec![0.0; d];
        let mut t_v = vec![0.0; d];
        params.project_into(table.row(h.vis_id), &mut h_v);
        params.project_into(table.row(t.vis_id), &mut t_v);
        Embedded { h_v, t_v }
    }

    fn parts(
        params: &ModelParams,
        emb: &Embedded,
        h: EntityView,
        r: RelationId,
        t: EntityView,
        norm: Norm,
    ) -> ScoreParts {
        score_embeddings(
            params.entity(h.struct_id),
            &emb.h_v,
            params.relation(r),
            params.entity(t.struct_id),
            &emb.t_v,
            norm,
        )
    }

    fn row(&mut self, slot: Slot) -> &mut Vec<f64> {
        let d = self.d;
        match slot {
            Slot::Structural(e) => self.entity.entry(e).or_insert_with(|| vec![0.0; d]),
            Slot::Visual(e) => self.visual.entry(e).or_insert_with(|| vec![0.0; d]),
        }
    }

    /// Adds `sign * dF/dθ` for one triple to the buffer.
    #[allow(clippy::too_many_arguments)]
    fn add_triple(
        &mut self,
        params: &ModelParams,
        emb: &Embedded,
        h: EntityView,
        r: RelationId,
        t: EntityView,
        norm: Norm,
        sign: f64,
    ) {
        let d = self.d;
        let h_s = params.entity(h.struct_id);
        let t_s = params.entity(t.struct_id);
        let rel = params.relation(r);
        let terms: [(&[f64], Slot, &[f64], Slot); 4] = [
            (
                h_s,
                Slot::Structural(h.struct_id),
                t_s,
                Slot::Structural(t.struct_id),
            ),
            (
                &emb.h_v,
                Slot::Visual(h.vis_id),
                &emb.t_v,
                Slot::Visual(t.vis_id),
            ),
            (
                h_s,
                Slot::Structural(h.struct_id),
                &emb.t_v,
                Slot::Visual(t.vis_id),
            ),
            (
                &emb.h_v,
                Slot::Visual(h.vis_id),
                t_s,
                Slot::Structural(t.struct_id),
            ),
        ];
        let mut du = vec![0.0; d];
        for (a, a_slot, b, b_slot) in terms {
            // f = -||a + r - b||; du = sign * df/d(residual)
            let residual: Vec<f64> = a
                .iter()
                .zip(rel)
                .zip(b)
                .map(|((a, r), b)| a + r - b)
                .collect();
            match norm {
                Norm::L1 => {
                    for (g, x) in du.iter_mut().zip(&residual) {
                        *g = if *x > 0.0 {
                            -sign
                        } else if *x < 0.0 {
                            sign
                        } else {
                            0.0
                        };
                    }
                }
                Norm::L2 => {
                    let len = residual.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if len < L2_GUARD {
                        continue;
                    }
                    for (g, x) in du.iter_mut().zip(&residual) {
                        *g = -sign * x / len;
                    }
                }
            }
            for (acc, g) in self.row(a_slot).iter_mut().zip(&du) {
                *acc += g;
            }
            let r_row = self.relation.entry(r).or_insert_with(|| vec![0.0; d]);
            for (acc, g) in r_row.iter_mut().zip(&du) {
                *acc += g;
            }
            for (acc, g) in self.row(b_slot).iter_mut().zip(&du) {
                *acc -= g;
            }
        }
    }

    /// Accumulates the hinge subgradient of one pair and returns its loss.
    /// Inactive pairs (loss 0) leave the buffer untouched.
    pub fn accumulate(
        &mut self,
        params: &ModelParams,
        table: &FeatureTable,
        pos: Triple,
        neg: &NegativeTriple,
        gamma: f64,
        norm: Norm,
    ) -> f64 {
        let (ph, pr, pt) = NegativeTriple::from_positive(pos);
        let pos_emb = Self::embed(params, table, ph, pt);
        let neg_emb = Self::embed(params, table, neg.head, neg.tail);
        let pos_parts = Self::parts(params, &pos_emb, ph, pr, pt, norm);
        let neg_parts = Self::parts(params, &neg_emb, neg.head, neg.rel, neg.tail, norm);
        let loss = margin_loss(&pos_parts, &neg_parts, gamma);
        if loss > 0.0 && loss.is_finite() {
            self.add_triple(params, &pos_emb, ph, pr, pt, norm, -1.0);
            self.add_triple(params, &neg_emb, neg.head, neg.rel, neg.tail, norm, 1.0);
        }
        loss
    }

    /// Folds pending visual-embedding gradients into the projection (and,
    /// when tracked, into trainable feature rows).
    pub fn flush(&mut self, params: &ModelParams, table: &FeatureTable) {
        if self.visual.is_empty() {
            return;
        }
        let d_v = self.d_v;
        let w_grad = self
            .projection
            .get_or_insert_with(|| vec![0.0; self.d * d_v]);
        for (&e, g) in &self.visual {
            let feat = table.row(e);
            for (w_row, gi) in w_grad.chunks_exact_mut(d_v).zip(g) {
                for (w, x) in w_row.iter_mut().zip(feat) {
                    *w += gi * f64::from(*x);
                }
            }
        }
        if self.track_features {
            let w = params.projection();
            for (&e, g) in &self.visual {
                if table.provenance(e) != Provenance::XavierFilled {
                    continue;
                }
                let f_grad = self.features.entry(e).or_insert_with(|| vec![0.0; d_v]);
                for (w_row, gi) in w.chunks_exact(d_v).zip(g) {
                    for (acc, wij) in f_grad.iter_mut().zip(w_row) {
                        *acc += gi * wij;
                    }
                }
            }
        }
        self.visual.clear();
    }
}

/// Gradient of one pair's margin loss with respect to every parameter it
/// touches. Empty when the hinge is inactive.
pub fn compute_gradients(
    params: &ModelParams,
    table: &FeatureTable,
    pos: Triple,
    neg: &NegativeTriple,
    gamma: f64,
    norm: Norm,
) -> GradientBuffer {
    let mut buf = GradientBuffer::new(params.dim(), params.feature_dim(), false);
    buf.accumulate(params, table, pos, neg, gamma, norm);
    buf.flush(params, table);
    buf
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: Vec<u32>,
}

impl Moments {
    fn new(rows: usize, width: usize) -> Self {
        Moments {
            m: vec![0.0; rows * width],
            v: vec![0.0; rows * width],
            steps: vec![0; rows],
        }
    }
}

/// Adam moments for every parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    d: usize,
    entity: Moments,
    relation: Moments,
    projection: Moments,
    features: HashMap<EntityId, (Vec<f64>, Vec<f64>, u32)>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let d = params.dim();
        AdamState {
            d,
            entity: Moments::new(params.n_entities(), d),
            relation: Moments::new(params.n_relations(), d),
            projection: Moments::new(1, d * params.feature_dim()),
            features: HashMap::new(),
        }
    }

    pub fn entity_steps(&self, e: EntityId) -> u32 {
        self.entity.steps[e as usize]
    }
}

#[inline]
#[allow(clippy::too_many_arguments)]
fn adam_update(
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u32,
    cfg: &AdamConfig,
) {
    let c1 = 1.0 - cfg.decay1.powi(step as i32);
    let c2 = 1.0 - cfg.decay2.powi(step as i32);
    for (((p, g), m), v) in param
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *m = cfg.decay1 * *m + (1.0 - cfg.decay1) * g;
        *v = cfg.decay2 * *v + (1.0 - cfg.decay2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// One Adam step over the rows present in `buffer`. Untouched rows keep
/// their parameters and moments.
pub fn adam_step(
    params: &mut ModelParams,
    table: &mut FeatureTable,
    buffer: &GradientBuffer,
    state: &mut AdamState,
    cfg: &AdamConfig,
) {
    let d = state.d;
    for (&e, g) in &buffer.entity {
        let i = e as usize;
        state.entity.steps[i] += 1;
        let (m, v) = (
            &mut state.entity.m[i * d..(i + 1) * d],
            &mut state.entity.v[i * d..(i + 1) * d],
        );
        adam_update(params.entity_mut(e), g, m, v, state.entity.steps[i], cfg);
    }
    for (&r, g) in &buffer.relation {
        let i = r as usize;
        state.relation.steps[i] += 1;
        let (m, v) = (
            &mut state.relation.m[i * d..(i + 1) * d],
            &mut state.relation.v[i * d..(i + 1) * d],
        );
        adam_update(
            params.relation_mut(r),
            g,
            m,
            v,
            state.relation.steps[i],
            cfg,
        );
    }
    if let Some(g) = &buffer.projection {
        state.projection.steps[0] += 1;
        let step = state.projection.steps[0];
        let p = &mut state.projection;
        adam_update(params.projection_mut(), g, &mut p.m, &mut p.v, step, cfg);
    }
    for (&e, g) in &buffer.features {
        let (m, v, steps) = state
            .features
            .entry(e)
            .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()], 0));
        *steps += 1;
        let mut row: Vec<f64> = table.row(e).iter().map(|x| f64::from(*x)).collect();
        adam_update(&mut row, g, m, v, *steps, cfg);
        for (dst, src) in table.row_mut(e).iter_mut().zip(&row) {
            *dst = *src as f32;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// One-based epoch number.
    pub epoch: usize,
    /// Summed pair loss divided by the number of pairs.
    pub mean_loss: f64,
    /// Mean adaptive proportion over the epoch's batches (`mans_a` only).
    pub mean_beta3: Option<f64>,
    pub wall_ms: u128,
}

impl EpochRecord {
    /// `epoch<TAB>mean_loss<TAB>mean_beta3 or -<TAB>wall_ms`
    pub fn to_tsv(&self) -> String {
        let beta = self
            .mean_beta3
            .map_or_else(|| "-".to_string(), |b| b.to_string());
        format!(
            "{}\t{}\t{}\t{}",
            self.epoch, self.mean_loss, beta, self.wall_ms
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
}

/// Splits `n` items into `parts` contiguous chunk lengths differing by at
/// most one, larger chunks first. Never yields empty chunks.
pub fn chunk_lengths(n: usize, batching: Batching) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    match batching {
        Batching::NumBatches(parts) => {
            let parts = parts.clamp(1, n);
            let (base, extra) = (n / parts, n % parts);
            (0..parts).map(|i| base + usize::from(i < extra)).collect()
        }
        Batching::BatchSize(size) => {
            let size = size.max(1);
            (0..n.div_ceil(size))
                .map(|i| size.min(n - i * size))
                .collect()
        }
    }
}

/// Stateful training loop. [`run_epoch`](Self::run_epoch) advances one
/// epoch; callers that need per-epoch side effects (logging, checkpoints)
/// drive it directly, everyone else uses [`train`].
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    features: FeatureTable,
    config: TrainConfig,
    params: ModelParams,
    adam: AdamState,
    sampler: NegativeSampler,
    shuffle_rng: ChaCha8Rng,
    order: Vec<usize>,
    buffer: GradientBuffer,
    epoch: usize,
    normalized_all: bool,
}

impl<'a> Trainer<'a> {
    pub fn new(
        dataset: &'a Dataset,
        features: FeatureTable,
        config: TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let n = dataset.n_entities();
        if features.n_entities() != n {
            return Err(TrainError::InvalidConfig(format!(
                "feature table has {} rows for {n} entities",
                features.n_entities()
            )));
        }
        let params = init_params(
            n,
            dataset.n_relations(),
            config.dim,
            features.d_v(),
            config.seed,
        );
        Self::resume(dataset, features, config, params)
    }

    /// Starts from explicit parameters instead of a fresh initialisation.
    pub fn resume(
        dataset: &'a Dataset,
        features: FeatureTable,
        config: TrainConfig,
        params: ModelParams,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        params.check_features(&features)?;
        let sampler = NegativeSampler::new(config.effective_sampler(), dataset.n_entities())?;
        Ok(Trainer {
            dataset,
            adam: AdamState::new(&params),
            buffer: GradientBuffer::new(
                params.dim(),
                params.feature_dim(),
                config.train_filled_features,
            ),
            shuffle_rng: stream_rng(config.seed, stream::SHUFFLE),
            order: (0..dataset.store.train.len()).collect(),
            sampler,
            features,
            params,
            config,
            epoch: 0,
            normalized_all: false,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn features(&self) -> &FeatureTable {
        &self.features
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn into_parts(self) -> (ModelParams, FeatureTable) {
        (self.params, self.features)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let start = Instant::now();
        let epoch = self.epoch;
        let train = &self.dataset.store.train;
        self.order.shuffle(&mut self.shuffle_rng);

        let mut total_loss = 0.0;
        let mut pairs = 0usize;
        let mut beta_sum = 0.0;
        let mut beta_batches = 0usize;
        let mut offset = 0;
        for (b, len) in chunk_lengths(train.len(), self.config.batching)
            .into_iter()
            .enumerate()
        {
            let batch: Vec<Triple> = self.order[offset..offset + len]
                .iter()
                .map(|&i| train[i])
                .collect();
            offset += len;

            let sampled = self.sampler.sample(
                &batch,
                epoch,
                &self.params,
                &self.features,
                self.config.norm,
                self.dataset.store.filter(),
            )?;
            if let Some(beta3) = sampled.beta3 {
                beta_sum += beta3;
                beta_batches += 1;
            }

            self.buffer.clear();
            for (j, neg) in sampled.negatives.iter().enumerate() {
                let pos = batch[positive_index(j, batch.len())];
                let loss = self.buffer.accumulate(
                    &self.params,
                    &self.features,
                    pos,
                    neg,
                    self.config.margin,
                    self.config.norm,
                );
                if !loss.is_finite() {
                    return Err(TrainError::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: b,
                        positive: pos,
                        negative: *neg,
                    });
                }
                total_loss += loss;
            }
            pairs += sampled.negatives.len();
            self.buffer.flush(&self.params, &self.features);
            adam_step(
                &mut self.params,
                &mut self.features,
                &self.buffer,
                &mut self.adam,
                &self.config.adam,
            );
            if self.config.renormalize {
                // rows only change when touched, so after one full pass the
                // touched rows are the only ones that can exceed unit norm
                if self.normalized_all {
                    self.params
                        .renormalize_rows(self.buffer.entity.keys().copied());
                } else {
                    self.params.renormalize();
                    self.normalized_all = true;
                }
            }
        }

        self.epoch += 1;
        Ok(EpochRecord {
            epoch: self.epoch,
            mean_loss: if pairs == 0 {
                0.0
            } else {
                total_loss / pairs as f64
            },
            mean_beta3: (beta_batches > 0).then(|| beta_sum / beta_batches as f64),
            wall_ms: start.elapsed().as_millis(),
        })
    }
}

/// Runs every epoch and returns the final parameters with the run log.
pub fn train(
    dataset: &Dataset,
    features: &FeatureTable,
    config: &TrainConfig,
) -> Result<(ModelParams, RunLog), TrainError> {
    let mut trainer = Trainer::new(dataset, features.clone(), config.clone())?;
    let mut log = RunLog::default();
    while !trainer.is_done() {
        log.epochs.push(trainer.run_epoch()?);
    }
    Ok((trainer.into_parts().0, log))
}
