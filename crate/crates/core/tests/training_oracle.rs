mod common;

use mans_core::data::Triple;
use mans_core::features::FeatureTable;
use mans_core::model::{encode_checkpoint, EntityView, ModelParams};
use mans_core::sampling::{CorruptionKind, NegativeTriple};
use mans_core::training::{compute_gradients, train, Trainer};
use mans_core::{Norm, Strategy};

use common::{toy, toy_config};

/// Gradients for d = d_v = 1 under L2, where every term is -|x|.
///
/// e_s = [0.5, -0.25, 1.0], r = 0.75, W = 2, features [0.5, 1.0, -1.0],
/// so e_v = [1.0, 2.0, -2.0]. Positive (0, r, 1), negative (0, r, 2).
///   pos residuals: ss 1.5, vv -0.25, sv -0.75, vs 2.0   (signs + - - +)
///   neg residuals: ss 0.25, vv 3.75, sv 3.25, vs 0.75   (all +)
///   L = 4 + 4.5 - 8 = 0.5 > 0, dL/dx = sum_pos sign * dres/dx - sum_neg sign * dres/dx
///   e_s[0] in ss, sv with +1: (1 - 1) - (1 + 1) = -2
///   e_s[1] in pos ss, vs with -1: -(1 + 1) = -2
///   e_s[2] in neg ss, vs with -1: -(-1 - 1) = 2
///   r in all eight with +1: (1 - 1 - 1 + 1) - 4 = -4
///   W via vv (f_h - f_t), sv (-f_t), vs (f_h): pos 0.5 + 1.0 + 0.5 = 2, neg 1.5 + 1.0 + 0.5 = 3
///   dL/dW = 2 - 3 = -1
#[test]
fn scalar_gradients_by_hand() {
    let params =
        ModelParams::from_parts(3, 1, 1, 1, vec![0.5, -0.25, 1.0], vec![0.75], vec![2.0]).unwrap();
    let table = FeatureTable::from_rows(1, vec![vec![0.5], vec![1.0], vec![-1.0]]).unwrap();
    let pos = Triple::new(0, 0, 1);
    let neg = NegativeTriple {
        head: EntityView::whole(0),
        rel: 0,
        tail: EntityView::whole(2),
        kind: CorruptionKind::Normal,
    };
    assert_eq!(
        common::pair_loss(&params, &table, pos, &neg, 4.0, Norm::L2),
        0.5
    );
    let g = compute_gradients(&params, &table, pos, &neg, 4.0, Norm::L2);
    assert_eq!(g.entity[&0], vec![-2.0]);
    assert_eq!(g.entity[&1], vec![-2.0]);
    assert_eq!(g.entity[&2], vec![2.0]);
    assert_eq!(g.relation[&0], vec![-4.0]);
    assert_eq!(g.projection.as_deref(), Some(&[-1.0][..]));
}

#[test]
fn visual_negative_leaves_structural_tail_alone() {
    // same numbers, but the negative only swaps the tail's visual id to 2
    let params =
        ModelParams::from_parts(3, 1, 1, 1, vec![0.5, -0.25, 1.0], vec![0.75], vec![2.0]).unwrap();
    let table = FeatureTable::from_rows(1, vec![vec![0.5], vec![1.0], vec![-1.0]]).unwrap();
    let pos = Triple::new(0, 0, 1);
    let neg = NegativeTriple {
        head: EntityView::whole(0),
        rel: 0,
        tail: EntityView::mixed(1, 2),
        kind: CorruptionKind::Visual,
    };
    let g = compute_gradients(&params, &table, pos, &neg, 20.0, Norm::L2);
    assert!(!g.entity.contains_key(&2));
    // neg residuals: ss 1.5 (+), vv 3.75 (+), sv 3.25 (+), vs 2.0 (+)
    // e_s[1] in ss, vs with -1: pos -(1 + 1), neg +(1 + 1) -> 0
    assert_eq!(g.entity[&1], vec![0.0]);
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let kg = toy();
    let mut config = toy_config(Strategy::MansH, 3);
    config.epochs = 10;
    let (a, log_a) = train(&kg.dataset, &kg.features, &config).unwrap();
    let (b, log_b) = train(&kg.dataset, &kg.features, &config).unwrap();
    assert_eq!(encode_checkpoint(&a, 10, 3), encode_checkpoint(&b, 10, 3));
    let losses = |l: &mans_core::RunLog| {
        l.epochs
            .iter()
            .map(|e| e.mean_loss.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(losses(&log_a), losses(&log_b));

    config.seed = 4;
    let (c, _) = train(&kg.dataset, &kg.features, &config).unwrap();
    assert_ne!(encode_checkpoint(&a, 10, 3), encode_checkpoint(&c, 10, 3));
}

#[test]
fn loss_falls_below_a_tenth_of_the_first_epoch() {
    let kg = toy();
    let config = toy_config(Strategy::Normal, 0);
    let (_, log) = train(&kg.dataset, &kg.features, &config).unwrap();
    assert_eq!(log.epochs.len(), 200);
    let first = log.epochs[0].mean_loss;
    let last = log.epochs[199].mean_loss;
    assert!(last < 0.1 * first, "first {first}, last {last}");
}

#[test]
fn adaptive_run_logs_its_proportion() {
    let kg = toy();
    let mut config = toy_config(Strategy::MansA, 0);
    config.epochs = 3;
    let (_, log) = train(&kg.dataset, &kg.features, &config).unwrap();
    for e in &log.epochs {
        let b = e.mean_beta3.expect("adaptive epochs carry a proportion");
        assert!((0.0..=1.0).contains(&b));
    }
    config.sampler.strategy = Strategy::MansH;
    let (_, log) = train(&kg.dataset, &kg.features, &config).unwrap();
    assert!(log.epochs.iter().all(|e| e.mean_beta3.is_none()));
}

#[test]
fn stepping_epochs_matches_train() {
    let kg = toy();
    let mut config = toy_config(Strategy::MansT, 8);
    config.epochs = 6;
    let mut trainer = Trainer::new(&kg.dataset, kg.features.clone(), config.clone()).unwrap();
    let mut records = Vec::new();
    while !trainer.is_done() {
        records.push(trainer.run_epoch().unwrap());
    }
    let (stepped, _) = trainer.into_parts();
    let (whole, log) = train(&kg.dataset, &kg.features, &config).unwrap();
    assert_eq!(
        encode_checkpoint(&stepped, 6, 8),
        encode_checkpoint(&whole, 6, 8)
    );
    assert_eq!(records.len(), log.epochs.len());
}

#[test]
fn filled_features_move_only_when_trainable() {
    let kg = toy();
    let ds = &kg.dataset;
    let filled = FeatureTable::xavier_filled(ds.n_entities(), 16, 32, 1);
    let mut config = toy_config(Strategy::MansV, 2);
    config.epochs = 2;
    let mut frozen = Trainer::new(ds, filled.clone(), config.clone()).unwrap();
    frozen.run_epoch().unwrap();
    assert_eq!(frozen.features(), &filled);

    config.train_filled_features = true;
    let mut trainable = Trainer::new(ds, filled.clone(), config).unwrap();
    trainable.run_epoch().unwrap();
    assert_ne!(trainable.features(), &filled);
    // rows read from a file never move
    let mut loaded = Trainer::new(ds, kg.features.clone(), trainable.config().clone()).unwrap();
    loaded.run_epoch().unwrap();
    assert_eq!(loaded.features(), &kg.features);
}
