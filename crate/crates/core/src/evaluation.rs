//! Filtered link prediction and triple classification.
//!
//! Link prediction asks two queries per evaluation triple, `(h, r, ?)` and
//! `(?, r, t)`, scores every entity as the missing slot, and ranks the true
//! answer after removing every other candidate that forms a known triple.
//! Ties use mid-ranks: a target tied with `k` other candidates sits at the
//! average of the `k + 1` positions they share, so a constant scorer over
//! `n` candidates ranks every target at `(n + 1) / 2`.
//!
//! Triple classification pairs every valid/test triple with one normal
//! corruption, picks a per-relation score threshold that maximises
//! validation accuracy, and reports accuracy, precision, recall and F1 on
//! the test pairs.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;

use crate::data::{EntityId, RelationId, Triple, TripleStore};
use crate::features::FeatureTable;
use crate::model::{ModelError, ModelParams};
use crate::rng::{stream, stream_rng};
use crate::sampling::{sample_normal, SampleError};
use crate::scoring::{score_embeddings, Norm};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("target entity {0} is in the excluded set")]
    TargetExcluded(EntityId),
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sampling(#[from] SampleError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

impl Split {
    pub fn triples(self, store: &TripleStore) -> &[Triple] {
        match self {
            Split::Valid => &store.valid,
            Split::Test => &store.test,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected valid or test)")),
        }
    }
}

/// Mid-rank of `target` among the candidates not in `excluded`:
/// `1 + #(strictly higher) + #(tied, other than target) / 2`.
pub fn rank_of(
    target: EntityId,
    scores: &[f64],
    excluded: &HashSet<EntityId>,
) -> Result<f64, EvalError> {
    if excluded.contains(&target) {
        return Err(EvalError::TargetExcluded(target));
    }
    let s = scores[target as usize];
    let (mut higher, mut tied) = (0usize, 0usize);
    for (e, &x) in scores.iter().enumerate() {
        if e == target as usize || excluded.contains(&(e as EntityId)) {
            continue;
        }
        if x > s {
            higher += 1;
        } else if x == s {
            tied += 1;
        }
    }
    Ok(1.0 + higher as f64 + tied as f64 / 2.0)
}

/// Raw and filtered mid-ranks in one pass. `known` lists every entity that
/// completes a known triple for the query (it may contain the target).
fn ranks_with_filter(target: EntityId, scores: &[f64], known: &[EntityId]) -> (f64, f64) {
    let s = scores[target as usize];
    let (mut higher, mut tied) = (0usize, 0usize);
    for (e, &x) in scores.iter().enumerate() {
        if e == target as usize {
            continue;
        }
        if x > s {
            higher += 1;
        } else if x == s {
            tied += 1;
        }
    }
    let raw = 1.0 + higher as f64 + tied as f64 / 2.0;
    for &e in known {
        if e == target {
            continue;
        }
        let x = scores[e as usize];
        if x > s {
            higher -= 1;
        } else if x == s {
            tied -= 1;
        }
    }
    (raw, 1.0 + higher as f64 + tied as f64 / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkPredMetrics {
    pub mr: f64,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
    pub n_queries: usize,
}

impl LinkPredMetrics {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        let n = ranks.len() as f64;
        let mean = |f: &dyn Fn(f64) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
        LinkPredMetrics {
            mr: mean(&|r| r),
            mrr: mean(&|r| 1.0 / r),
            hits1: mean(&|r| f64::from(u8::from(r <= 1.0))),
            hits3: mean(&|r| f64::from(u8::from(r <= 3.0))),
            hits10: mean(&|r| f64::from(u8::from(r <= 10.0))),
            n_queries: ranks.len(),
        }
    }

    pub fn to_tsv(&self) -> String {
        format!(
            "mrr\t{}\nmr\t{}\nhits1\t{}\nhits3\t{}\nhits10\t{}\nn_queries\t{}\n",
            self.mrr, self.mr, self.hits1, self.hits3, self.hits10, self.n_queries
        )
    }
}

impl fmt::Display for LinkPredMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8}{:>10}", "metric", "value")?;
        writeln!(f, "{:<8}{:>10.4}", "MRR", self.mrr)?;
        writeln!(f, "{:<8}{:>10.2}", "MR", self.mr)?;
        writeln!(f, "{:<8}{:>10.4}", "Hit@1", self.hits1)?;
        writeln!(f, "{:<8}{:>10.4}", "Hit@3", self.hits3)?;
        writeln!(f, "{:<8}{:>10.4}", "Hit@10", self.hits10)?;
        write!(f, "{:<8}{:>10}", "queries", self.n_queries)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Head,
    Tail,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Head => "head",
            Side::Tail => "tail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryRank {
    pub triple: Triple,
    /// Which slot was replaced.
    pub side: Side,
    pub rank: f64,
    pub raw_rank: f64,
}

/// Ranks for both queries of every triple in `triples`, in input order
/// (tail query then head query per triple).
pub fn rank_queries(
    params: &ModelParams,
    table: &FeatureTable,
    store: &TripleStore,
    triples: &[Triple],
    norm: Norm,
) -> Result<Vec<QueryRank>, EvalError> {
    params.check_features(table)?;
    for t in triples {
        params.check_entity(t.head)?;
        params.check_entity(t.tail)?;
        params.check_relation(t.rel)?;
    }
    let d = params.dim();
    let n = params.n_entities();
    let visual = params.visual_table(table);
    let vis = |e: EntityId| &visual[e as usize * d..(e as usize + 1) * d];
    let filter = store.filter();

    let ranks = triples
        .par_iter()
        .map_init(
            || vec![0.0; n],
            |scores, &t| {
                let rel = params.relation(t.rel);
                let (h_s, h_v) = (params.entity(t.head), vis(t.head));
                for (e, s) in scores.iter_mut().enumerate() {
                    let e = e as EntityId;
                    *s = score_embeddings(h_s, h_v, rel, params.entity(e), vis(e), norm).total;
                }
                let (raw_t, tail_rank) =
                    ranks_with_filter(t.tail, scores, filter.known_tails(t.head, t.rel));

                let (t_s, t_v) = (params.entity(t.tail), vis(t.tail));
                for (e, s) in scores.iter_mut().enumerate() {
                    let e = e as EntityId;
                    *s = score_embeddings(params.entity(e), vis(e), rel, t_s, t_v, norm).total;
                }
                let (raw_h, head_rank) =
                    ranks_with_filter(t.head, scores, filter.known_heads(t.rel, t.tail));
                [
                    QueryRank {
                        triple: t,
                        side: Side::Tail,
                        rank: tail_rank,
                        raw_rank: raw_t,
                    },
                    QueryRank {
                        triple: t,
                        side: Side::Head,
                        rank: head_rank,
                        raw_rank: raw_h,
                    },
                ]
            },
        )
        .collect::<Vec<_>>();
    Ok(ranks.into_iter().flatten().collect())
}

/// Filtered link-prediction metrics over `2 * |split|` queries.
pub fn link_prediction(
    params: &ModelParams,
    table: &FeatureTable,
    store: &TripleStore,
    split: Split,
    norm: Norm,
) -> Result<LinkPredMetrics, EvalError> {
    let triples = split.triples(store);
    if triples.is_empty() {
        return Err(EvalError::EmptySplit(split));
    }
    let ranks: Vec<f64> = rank_queries(params, table, store, triples, norm)?
        .into_iter()
        .map(|q| q.rank)
        .collect();
    Ok(LinkPredMetrics::from_ranks(&ranks))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredPair {
    pub rel: RelationId,
    pub score: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Score cutoffs: a pair is predicted true iff `score >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub per_relation: BTreeMap<RelationId, f64>,
    /// Used for relations without validation pairs.
    pub global: f64,
}

impl Thresholds {
    pub fn get(&self, rel: RelationId) -> f64 {
        self.per_relation.get(&rel).copied().unwrap_or(self.global)
    }
}

/// Threshold maximising accuracy over `pairs`; ties go to the lowest
/// threshold. Candidates are every observed score plus `+inf`.
pub fn best_threshold(pairs: &[ScoredPair]) -> f64 {
    let mut sorted: Vec<&ScoredPair> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.score.total_cmp(&b.score));
    let total_pos = pairs.iter().filter(|p| p.positive).count();

    // threshold at sorted[i].score: everything from i upward is predicted true
    let (mut best, mut best_correct) = (f64::INFINITY, pairs.len() - total_pos);
    let mut neg_below = 0usize;
    let mut pos_below = 0usize;
    let mut i = 0;
    let mut candidates = Vec::new();
    while i < sorted.len() {
        let s = sorted[i].score;
        candidates.push((s, (total_pos - pos_below) + neg_below));
        while i < sorted.len() && sorted[i].score == s {
            if sorted[i].positive {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
    }
    for (s, correct) in candidates.into_iter().rev() {
        if correct >= best_correct {
            best = s;
            best_correct = correct;
        }
    }
    best
}

pub fn fit_thresholds(valid: &[ScoredPair]) -> Thresholds {
    let mut by_rel: BTreeMap<RelationId, Vec<ScoredPair>> = BTreeMap::new();
    for p in valid {
        by_rel.entry(p.rel).or_default().push(*p);
    }
    Thresholds {
        per_relation: by_rel
            .iter()
            .map(|(&r, pairs)| (r, best_threshold(pairs)))
            .collect(),
        global: if valid.is_empty() {
            f64::NEG_INFINITY
        } else {
            best_threshold(valid)
        },
    }
}

pub fn confusion(pairs: &[ScoredPair], thresholds: &Thresholds) -> Confusion {
    let mut c = Confusion::default();
    for p in pairs {
        match (p.score >= thresholds.get(p.rel), p.positive) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub thresholds: Thresholds,
    /// Seed used to corrupt the evaluation triples.
    pub seed: u64,
}

impl ClassifMetrics {
    pub fn to_tsv(&self) -> String {
        let mut out = format!(
            "accuracy\t{}\nprecision\t{}\nrecall\t{}\nf1\t{}\ntp\t{}\nfp\t{}\nfn\t{}\ntn\t{}\nseed\t{}\nthreshold_global\t{}\n",
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.confusion.tp,
            self.confusion.fp,
            self.confusion.fn_,
            self.confusion.tn,
            self.seed,
            self.thresholds.global,
        );
        for (r, t) in &self.thresholds.per_relation {
            out.push_str(&format!("threshold_rel_{r}\t{t}\n"));
        }
        out
    }
}

impl fmt::Display for ClassifMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10}{:>10}", "metric", "value")?;
        writeln!(f, "{:<10}{:>10.4}", "Accuracy", self.accuracy)?;
        writeln!(f, "{:<10}{:>10.4}", "Precision", self.precision)?;
        writeln!(f, "{:<10}{:>10.4}", "Recall", self.recall)?;
        write!(f, "{:<10}{:>10.4}", "F1", self.f1)
    }
}

/// Classifies `test` with thresholds fitted on `valid`.
pub fn classify_scored(valid: &[ScoredPair], test: &[ScoredPair], seed: u64) -> ClassifMetrics {
    let thresholds = fit_thresholds(valid);
    let c = confusion(test, &thresholds);
    ClassifMetrics {
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        confusion: c,
        thresholds,
        seed,
    }
}

pub fn triple_classification(
    params: &ModelParams,
    table: &FeatureTable,
    store: &TripleStore,
    norm: Norm,
    seed: u64,
) -> Result<ClassifMetrics, EvalError> {
    if store.valid.is_empty() {
        return Err(EvalError::EmptySplit(Split::Valid));
    }
    if store.test.is_empty() {
        return Err(EvalError::EmptySplit(Split::Test));
    }
    params.check_features(table)?;
    let n = params.n_entities();
    let d = params.dim();
    let mut rng = stream_rng(seed, stream::CLASSIFICATION);
    let mut h_v = vec![0.0; d];
    let mut t_v = vec![0.0; d];
    let mut pairs_for = |triples: &[Triple]| -> Result<Vec<ScoredPair>, EvalError> {
        let mut out = Vec::with_capacity(2 * triples.len());
        for &t in triples {
            params.check_entity(t.head)?;
            params.check_entity(t.tail)?;
            params.check_relation(t.rel)?;
            let neg = sample_normal(t, n, &mut rng)?;
            for (h, tl, positive) in [
                (t.head, t.tail, true),
                (neg.head.struct_id, neg.tail.struct_id, false),
            ] {
                params.project_into(table.row(h), &mut h_v);
                params.project_into(table.row(tl), &mut t_v);
                let score = score_embeddings(
                    params.entity(h),
                    &h_v,
                    params.relation(t.rel),
                    params.entity(tl),
                    &t_v,
                    norm,
                )
                .total;
                out.push(ScoredPair {
                    rel: t.rel,
                    score,
                    positive,
                });
            }
        }
        Ok(out)
    };
    let valid = pairs_for(&store.valid)?;
    let test = pairs_for(&store.test)?;
    Ok(classify_scored(&valid, &test, seed))
}
