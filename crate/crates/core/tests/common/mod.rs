//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing in here calls the library's scoring, gradient, ranking or
//! classification code; every quantity is recomputed from raw parameter
//! buffers so the suites compare two separate implementations.

#![allow(dead_code)]

use std::collections::BTreeMap;

use mans_core::data::{EntityId, Triple, TripleStore};
use mans_core::features::FeatureTable;
use mans_core::model::{EntityView, ModelParams};
use mans_core::rng::{stream, stream_rng};
use mans_core::sampling::{sample_normal, NegativeTriple};
use mans_core::synthetic::{toy_kg, ToyKg, ToyKgConfig};
use mans_core::training::{AdamConfig, Batching, TrainConfig};
use mans_core::{Norm, SamplerConfig, Strategy};

/// `W * feature(e)` by explicit double loop.
pub fn visual(params: &ModelParams, table: &FeatureTable, e: EntityId) -> Vec<f64> {
    let (d, d_v) = (params.dim(), params.feature_dim());
    let w = params.projection();
    let f = table.pooled_feature(e).unwrap();
    let mut out = vec![0.0; d];
    for i in 0..d {
        for j in 0..d_v {
            out[i] += w[i * d_v + j] * f64::from(f[j]);
        }
    }
    out
}

pub fn residual(h: &[f64], r: &[f64], t: &[f64]) -> Vec<f64> {
    (0..h.len()).map(|i| h[i] + r[i] - t[i]).collect()
}

pub fn dist(x: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L1 => x.iter().map(|v| v.abs()).sum(),
        Norm::L2 => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
    }
}

/// The eight residual vectors (four per triple) of a pair, and the four
/// score terms `[ss, vv, sv, vs]` of one triple.
pub fn term_residuals(
    params: &ModelParams,
    table: &FeatureTable,
    head: EntityView,
    rel: u32,
    tail: EntityView,
) -> [Vec<f64>; 4] {
    let hs = params.entity(head.struct_id).to_vec();
    let ts = params.entity(tail.struct_id).to_vec();
    let hv = visual(params, table, head.vis_id);
    let tv = visual(params, table, tail.vis_id);
    let r = params.relation(rel);
    [
        residual(&hs, r, &ts),
        residual(&hv, r, &tv),
        residual(&hs, r, &tv),
        residual(&hv, r, &ts),
    ]
}

pub fn terms(
    params: &ModelParams,
    table: &FeatureTable,
    head: EntityView,
    rel: u32,
    tail: EntityView,
    norm: Norm,
) -> [f64; 4] {
    term_residuals(params, table, head, rel, tail).map(|x| -dist(&x, norm))
}

pub fn total_score(
    params: &ModelParams,
    table: &FeatureTable,
    head: EntityView,
    rel: u32,
    tail: EntityView,
    norm: Norm,
) -> f64 {
    terms(params, table, head, rel, tail, norm).iter().sum()
}

pub fn pair_loss(
    params: &ModelParams,
    table: &FeatureTable,
    pos: Triple,
    neg: &NegativeTriple,
    gamma: f64,
    norm: Norm,
) -> f64 {
    let p = total_score(
        params,
        table,
        EntityView::whole(pos.head),
        pos.rel,
        EntityView::whole(pos.tail),
        norm,
    );
    let n = total_score(params, table, neg.head, neg.rel, neg.tail, norm);
    (gamma - p + n).max(0.0)
}

/// Indicator of the adaptive sampler, recomputed from scratch.
pub fn phi(params: &ModelParams, table: &FeatureTable, t: Triple, norm: Norm) -> u32 {
    let [ss, vv, sv, vs] = terms(
        params,
        table,
        EntityView::whole(t.head),
        t.rel,
        EntityView::whole(t.tail),
        norm,
    );
    u32::from(sv + vs < ss + vv)
}

pub fn beta3(params: &ModelParams, table: &FeatureTable, batch: &[Triple], norm: Norm) -> f64 {
    let flagged: u32 = batch.iter().map(|&t| phi(params, table, t, norm)).sum();
    flagged as f64 / batch.len() as f64
}

/// Mid-rank by sorting: the target's rank is the mean of the positions
/// occupied by its tie group in a descending sort of the surviving
/// candidates.
pub fn sorted_mid_rank(target_score: f64, others: &[f64]) -> f64 {
    let mut all: Vec<f64> = others.to_vec();
    all.push(target_score);
    all.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let positions: Vec<usize> = all
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == target_score)
        .map(|(i, _)| i + 1)
        .collect();
    positions.iter().sum::<usize>() as f64 / positions.len() as f64
}

/// Brute-force filtered ranks for `triples`: scores every candidate entity,
/// filters by linear scan over all splits.
pub fn brute_force_ranks(
    params: &ModelParams,
    table: &FeatureTable,
    store: &TripleStore,
    triples: &[Triple],
    norm: Norm,
) -> Vec<f64> {
    let all: Vec<Triple> = store
        .train
        .iter()
        .chain(&store.valid)
        .chain(&store.test)
        .copied()
        .collect();
    let n = params.n_entities() as EntityId;
    let mut ranks = Vec::new();
    for &t in triples {
        for replace_tail in [true, false] {
            let score_of = |e: EntityId| {
                let (h, tl) = if replace_tail {
                    (t.head, e)
                } else {
                    (e, t.tail)
                };
                total_score(
                    params,
                    table,
                    EntityView::whole(h),
                    t.rel,
                    EntityView::whole(tl),
                    norm,
                )
            };
            let target = if replace_tail { t.tail } else { t.head };
            let others: Vec<f64> = (0..n)
                .filter(|&e| e != target)
                .filter(|&e| {
                    let cand = if replace_tail {
                        Triple::new(t.head, t.rel, e)
                    } else {
                        Triple::new(e, t.rel, t.tail)
                    };
                    !all.contains(&cand)
                })
                .map(score_of)
                .collect();
            ranks.push(sorted_mid_rank(score_of(target), &others));
        }
    }
    ranks
}

pub struct BruteMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits: [f64; 3],
}

pub fn brute_metrics(ranks: &[f64]) -> BruteMetrics {
    let n = ranks.len() as f64;
    let mut mr = 0.0;
    let mut mrr = 0.0;
    let mut hits = [0.0; 3];
    for &r in ranks {
        mr += r;
        mrr += 1.0 / r;
        for (h, k) in hits.iter_mut().zip([1.0, 3.0, 10.0]) {
            if r <= k {
                *h += 1.0;
            }
        }
    }
    BruteMetrics {
        mr: mr / n,
        mrr: mrr / n,
        hits: hits.map(|h| h / n),
    }
}

/// Eight entities, two relations, twelve triples; integer-valued
/// embeddings so every score is an exact integer and ties are genuine.
pub fn ranking_fixture() -> (mans_core::Dataset, ModelParams, FeatureTable) {
    let names = ["a", "b", "c", "d", "e", "f", "g", "h"];
    let train = [
        ("a", "r", "b"),
        ("b", "r", "c"),
        ("c", "r", "d"),
        ("e", "r", "f"),
        ("a", "s", "c"),
        ("b", "s", "d"),
        ("f", "s", "h"),
        ("g", "r", "h"),
    ];
    let valid = [("d", "r", "e"), ("a", "r", "f")];
    let test = [("e", "s", "g"), ("a", "r", "c")];
    let mut vocab = mans_core::Vocab::new();
    for n in names {
        vocab.intern(n);
    }
    let mut rels = mans_core::Vocab::new();
    rels.intern("r");
    rels.intern("s");
    let ds = mans_core::Dataset::from_named_with(vocab, rels, &train, &valid, &test).unwrap();
    // d = 2: entities on a line with some duplicated positions
    let entity = vec![
        0.0, 0.0, // a
        1.0, 0.0, // b
        2.0, 0.0, // c
        3.0, 0.0, // d
        4.0, 0.0, // e
        5.0, 0.0, // f
        2.0, 0.0, // g  (same position as c)
        1.0, 1.0, // h
    ];
    let relation = vec![1.0, 0.0, 2.0, 0.0];
    // W = [[1, 0], [0, 1]] with features equal to a shifted copy of the grid
    let projection = vec![1.0, 0.0, 0.0, 1.0];
    let params = ModelParams::from_parts(8, 2, 2, 2, entity, relation, projection).unwrap();
    let rows = vec![
        vec![0.0, 1.0],
        vec![1.0, 1.0],
        vec![2.0, 0.0],
        vec![3.0, 1.0],
        vec![4.0, 0.0],
        vec![6.0, 0.0],
        vec![2.0, 0.0],
        vec![1.0, 1.0],
    ];
    let table = FeatureTable::from_rows(2, rows).unwrap();
    (ds, params, table)
}

pub fn toy() -> ToyKg {
    toy_kg(&ToyKgConfig::default())
}

/// Toy-run settings: k = 1, margin 4, learning rate 0.01, 200 epochs.
pub fn toy_config(strategy: Strategy, seed: u64) -> TrainConfig {
    TrainConfig {
        dim: 32,
        margin: 4.0,
        epochs: 200,
        batching: Batching::NumBatches(10),
        norm: Norm::L1,
        seed,
        sampler: SamplerConfig {
            strategy,
            beta1: 0.4,
            beta2: 0.3,
            k: 1,
            ..Default::default()
        },
        adam: AdamConfig {
            learning_rate: 0.01,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// `H_n / n`: expected MRR of a uniformly random ranking over `n`.
pub fn random_mrr(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() / n as f64
}

/// Relative error with a denominator floor of 1e-5. A central difference of
/// a loss of order 10 carries about 1e-10 of rounding noise at step 1e-5, so
/// coordinates whose true gradient is zero stay well under any tolerance
/// above 1e-5.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Confusion counts by direct enumeration.
pub fn confusion_oracle(preds: &[(bool, bool)]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for &(pred, truth) in preds {
        match (pred, truth) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

/// Scores, thresholds and counts for the classification protocol, with the
/// threshold found by trying every observed score and +inf.
pub fn classification_oracle(
    params: &ModelParams,
    table: &FeatureTable,
    store: &TripleStore,
    norm: Norm,
    seed: u64,
) -> (usize, usize, usize, usize) {
    let mut rng = stream_rng(seed, stream::CLASSIFICATION);
    let n = params.n_entities();
    let mut scored = |triples: &[Triple]| -> Vec<(u32, f64, bool)> {
        let mut out = Vec::new();
        for &t in triples {
            let neg = sample_normal(t, n, &mut rng).unwrap();
            let s = |h, tl| {
                total_score(
                    params,
                    table,
                    EntityView::whole(h),
                    t.rel,
                    EntityView::whole(tl),
                    norm,
                )
            };
            out.push((t.rel, s(t.head, t.tail), true));
            out.push((t.rel, s(neg.head.struct_id, neg.tail.struct_id), false));
        }
        out
    };
    let valid = scored(&store.valid);
    let test = scored(&store.test);
    let best = |pairs: &[(u32, f64, bool)]| -> f64 {
        let mut candidates: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        candidates.push(f64::INFINITY);
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let correct = |th: f64| pairs.iter().filter(|p| (p.1 >= th) == p.2).count();
        let top = candidates.iter().map(|&c| correct(c)).max().unwrap();
        *candidates.iter().find(|&&c| correct(c) == top).unwrap()
    };
    let mut by_rel: BTreeMap<u32, Vec<(u32, f64, bool)>> = BTreeMap::new();
    for p in &valid {
        by_rel.entry(p.0).or_default().push(*p);
    }
    let global = best(&valid);
    let thresholds: BTreeMap<u32, f64> = by_rel.iter().map(|(r, p)| (*r, best(p))).collect();
    let preds: Vec<(bool, bool)> = test
        .iter()
        .map(|p| (p.1 >= *thresholds.get(&p.0).unwrap_or(&global), p.2))
        .collect();
    confusion_oracle(&preds)
}
