//! TransE scoring over structural and visual embeddings.
//!
//! A triple's score is the sum of four TransE terms, one per pairing of head
//! and tail modality:
//!
//! ```text
//! F = f(h_s, r, t_s) + f(h_v, r, t_v)  +  f(h_s, r, t_v) + f(h_v, r, t_s)
//!     \___________ unimodal _________/    \__________ multimodal ________/
//! ```
//!
//! with `f(h, r, t) = -||h + r - t||`, so higher is more plausible.

use std::fmt;
use std::str::FromStr;

use crate::data::RelationId;
use crate::features::FeatureTable;
use crate::model::{EntityView, ModelError, ModelParams};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("vector lengths differ: head {head}, relation {rel}, tail {tail}")]
    Shape {
        head: usize,
        rel: usize,
        tail: usize,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Norm {
    #[default]
    L1,
    L2,
}

impl FromStr for Norm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            other => Err(format!("unknown norm {other:?} (expected l1 or l2)")),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// `-||h + r - t||_p` without shape checks.
#[inline]
pub fn transe(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> f64 {
    let residuals = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t);
    match norm {
        Norm::L1 => -residuals.map(f64::abs).sum::<f64>(),
        Norm::L2 => -residuals.map(|x| x * x).sum::<f64>().sqrt(),
    }
}

pub fn f_transe(h: &[f64], r: &[f64], t: &[f64], norm: Norm) -> Result<f64, ScoreError> {
    if h.len() != r.len() || r.len() != t.len() {
        return Err(ScoreError::Shape {
            head: h.len(),
            rel: r.len(),
            tail: t.len(),
        });
    }
    Ok(transe(h, r, t, norm))
}

/// The four score terms of one triple. `total` is always
/// `unimodal() + multimodal()` evaluated in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParts {
    pub ss: f64,
    pub vv: f64,
    pub sv: f64,
    pub vs: f64,
    pub total: f64,
}

impl ScoreParts {
    pub fn from_terms(ss: f64, vv: f64, sv: f64, vs: f64) -> Self {
        ScoreParts {
            ss,
            vv,
            sv,
            vs,
            total: (ss + vv) + (sv + vs),
        }
    }

    pub fn unimodal(&self) -> f64 {
        self.ss + self.vv
    }

    pub fn multimodal(&self) -> f64 {
        self.sv + self.vs
    }
}

/// Scores a triple from already materialised embeddings.
#[inline]
pub fn score_embeddings(
    h_s: &[f64],
    h_v: &[f64],
    r: &[f64],
    t_s: &[f64],
    t_v: &[f64],
    norm: Norm,
) -> ScoreParts {
    ScoreParts::from_terms(
        transe(h_s, r, t_s, norm),
        transe(h_v, r, t_v, norm),
        transe(h_s, r, t_v, norm),
        transe(h_v, r, t_s, norm),
    )
}

/// Scores `(head, rel, tail)` where each slot may mix one entity's structural
/// embedding with another entity's visual embedding.
pub fn score_triple(
    params: &ModelParams,
    table: &FeatureTable,
    head: EntityView,
    rel: RelationId,
    tail: EntityView,
    norm: Norm,
) -> Result<ScoreParts, ScoreError> {
    params.check_relation(rel)?;
    params.check_entity(head.struct_id)?;
    params.check_entity(tail.struct_id)?;
    let h_v = params.visual_embedding(table, head.vis_id)?;
    let t_v = params.visual_embedding(table, tail.vis_id)?;
    Ok(score_embeddings(
        params.entity(head.struct_id),
        &h_v,
        params.relation(rel),
        params.entity(tail.struct_id),
        &t_v,
        norm,
    ))
}

/// The adaptive-sampling indicator: true (1) iff the multimodal part scores
/// strictly below the unimodal part. Ties go to false (0).
pub fn needs_visual_ns(parts: &ScoreParts) -> bool {
    parts.multimodal() < parts.unimodal()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn transe_examples() {
        let s = f_transe(&[0.5, 0.5], &[0.25, -0.25], &[0.75, 0.25], Norm::L1).unwrap();
        assert_eq!(s, 0.0);
        assert_eq!(
            f_transe(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], Norm::L1).unwrap(),
            -1.0
        );
        assert_eq!(
            f_transe(&[3.0, 0.0], &[0.0, 4.0], &[0.0, 0.0], Norm::L2).unwrap(),
            -5.0
        );
        assert!(matches!(
            f_transe(&[1.0], &[1.0, 2.0], &[0.0], Norm::L2),
            Err(ScoreError::Shape { .. })
        ));
    }

    #[test]
    fn four_term_toy() {
        // d = 1: h_s=1, h_v=2, r=0, t_s=1, t_v=3
        let p = score_embeddings(&[1.0], &[2.0], &[0.0], &[1.0], &[3.0], Norm::L1);
        assert_eq!(
            (p.ss, p.vv, p.sv, p.vs, p.total),
            (0.0, -1.0, -2.0, -1.0, -4.0)
        );
    }

    #[test]
    fn visual_indicator_boundary() {
        let mk = |uni: f64, multi: f64| ScoreParts::from_terms(uni, 0.0, multi, 0.0);
        assert!(needs_visual_ns(&mk(-1.0, -2.0)));
        assert!(!needs_visual_ns(&mk(-1.0, -1.0)));
        assert!(!needs_visual_ns(&mk(-3.0, -1.0)));
    }

    #[test]
    fn score_triple_via_params() {
        let params =
            ModelParams::from_parts(2, 1, 1, 1, vec![1.0, 1.0], vec![0.0], vec![1.0]).unwrap();
        let table = FeatureTable::from_rows(1, vec![vec![2.0], vec![3.0]]).unwrap();
        let p = score_triple(
            &params,
            &table,
            EntityView::whole(0),
            0,
            EntityView::whole(1),
            Norm::L1,
        )
        .unwrap();
        assert_eq!(
            (p.ss, p.vv, p.sv, p.vs, p.total),
            (0.0, -1.0, -2.0, -1.0, -4.0)
        );
        assert!(score_triple(
            &params,
            &table,
            EntityView::whole(0),
            1,
            EntityView::whole(1),
            Norm::L1
        )
        .is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-5.0f64..5.0, 3)
    }

    proptest! {
        #[test]
        fn transe_is_nonpositive(h in vec3(), r in vec3(), t in vec3(), l2 in any::<bool>()) {
            let norm = if l2 { Norm::L2 } else { Norm::L1 };
            prop_assert!(transe(&h, &r, &t, norm) <= 0.0);
            let exact: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a + b).collect();
            prop_assert_eq!(transe(&h, &r, &exact, norm) == 0.0,
                h.iter().zip(&r).zip(&exact).all(|((a, b), c)| a + b - c == 0.0));
        }

        #[test]
        fn translation_invariance(h in vec3(), r in vec3(), t in vec3(), c in vec3()) {
            let hc: Vec<f64> = h.iter().zip(&c).map(|(a, b)| a + b).collect();
            let tc: Vec<f64> = t.iter().zip(&c).map(|(a, b)| a + b).collect();
            for norm in [Norm::L1, Norm::L2] {
                prop_assert!((transe(&h, &r, &t, norm) - transe(&hc, &r, &tc, norm)).abs() < 1e-6);
            }
        }

        #[test]
        fn decomposition_is_exact(ss in -10.0f64..0.0, vv in -10.0f64..0.0,
                                  sv in -10.0f64..0.0, vs in -10.0f64..0.0) {
            let p = ScoreParts::from_terms(ss, vv, sv, vs);
            prop_assert_eq!(p.total, p.unimodal() + p.multimodal());
        }

        #[test]
        fn aligned_modalities_collapse(h in vec3(), r in vec3(), t in vec3()) {
            let p = score_embeddings(&h, &h, &r, &t, &t, Norm::L2);
            prop_assert!(p.ss == p.vv && p.vv == p.sv && p.sv == p.vs);
        }
    }
}
