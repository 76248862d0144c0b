mod common;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mans_core::data::{Triple, TripleStore};
use mans_core::evaluation::{link_prediction, rank_queries, triple_classification};
use mans_core::features::FeatureTable;
use mans_core::model::{init_params, ModelParams};
use mans_core::training::train;
use mans_core::{Norm, Split, Strategy};

use common::*;

#[test]
fn fixture_ranks_match_brute_force() {
    let (ds, params, table) = ranking_fixture();
    for norm in [Norm::L1, Norm::L2] {
        let test = &ds.store.test;
        let want = brute_force_ranks(&params, &table, &ds.store, test, norm);
        let got: Vec<f64> = rank_queries(&params, &table, &ds.store, test, norm)
            .unwrap()
            .iter()
            .map(|q| q.rank)
            .collect();
        assert_eq!(got, want);
    }
}

#[test]
fn random_models_match_brute_force() {
    let kg = toy();
    let ds = &kg.dataset;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..4 {
        let params = init_params(
            ds.n_entities(),
            ds.n_relations(),
            rng.gen_range(2..12),
            16,
            rng.gen(),
        );
        for norm in [Norm::L1, Norm::L2] {
            let want = brute_force_ranks(&params, &kg.features, &ds.store, &ds.store.test, norm);
            let got = rank_queries(&params, &kg.features, &ds.store, &ds.store.test, norm).unwrap();
            for (q, w) in got.iter().zip(&want) {
                assert_eq!(q.rank, *w, "{q:?}");
            }
            let m = link_prediction(&params, &kg.features, &ds.store, Split::Test, norm).unwrap();
            let b = brute_metrics(&want);
            assert!((m.mrr - b.mrr).abs() < 1e-12 && (m.mr - b.mr).abs() < 1e-9);
            assert_eq!([m.hits1, m.hits3, m.hits10], b.hits);
        }
    }
}

#[test]
fn exact_translations_rank_first() {
    // a chain 0 -> 1 -> ... -> 9 under r = +1, visual copies of the structure
    let n = 10;
    let entity: Vec<f64> = (0..n).flat_map(|i| [i as f64, 0.0]).collect();
    let rows = (0..n).map(|i| vec![i as f32, 0.0]).collect();
    let table = FeatureTable::from_rows(2, rows).unwrap();
    let params =
        ModelParams::from_parts(n, 1, 2, 2, entity, vec![1.0, 0.0], vec![1.0, 0.0, 0.0, 1.0])
            .unwrap();
    let chain: Vec<Triple> = (0..n as u32 - 1)
        .map(|i| Triple::new(i, 0, i + 1))
        .collect();
    let store = TripleStore::new(
        chain[..6].to_vec(),
        chain[6..7].to_vec(),
        chain[7..].to_vec(),
    );
    for norm in [Norm::L1, Norm::L2] {
        let m = link_prediction(&params, &table, &store, Split::Test, norm).unwrap();
        assert_eq!((m.mrr, m.mr, m.hits1), (1.0, 1.0, 1.0));
    }
}

#[test]
fn filtering_never_hurts_and_order_does_not_matter() {
    let kg = toy();
    let mut config = toy_config(Strategy::Normal, 1);
    config.epochs = 20;
    let (params, _) = train(&kg.dataset, &kg.features, &config).unwrap();
    let store = &kg.dataset.store;
    let ranks = rank_queries(&params, &kg.features, store, &store.test, Norm::L1).unwrap();
    assert!(ranks.iter().all(|q| q.rank <= q.raw_rank && q.rank >= 1.0));

    let mut shuffled = store.test.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(2));
    let again = rank_queries(&params, &kg.features, store, &shuffled, Norm::L1).unwrap();
    let key = |q: &mans_core::evaluation::QueryRank| {
        (q.triple.head, q.triple.rel, q.triple.tail, q.side as u8)
    };
    let mut a: Vec<_> = ranks.iter().map(|q| (key(q), q.rank.to_bits())).collect();
    let mut b: Vec<_> = again.iter().map(|q| (key(q), q.rank.to_bits())).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn classification_matches_oracle() {
    let kg = toy();
    let mut config = toy_config(Strategy::MansA, 6);
    config.epochs = 30;
    let (params, _) = train(&kg.dataset, &kg.features, &config).unwrap();
    for (norm, seed) in [(Norm::L1, 0), (Norm::L1, 99), (Norm::L2, 5)] {
        let m =
            triple_classification(&params, &kg.features, &kg.dataset.store, norm, seed).unwrap();
        let c = m.confusion;
        assert_eq!(
            (c.tp, c.fp, c.fn_, c.tn),
            classification_oracle(&params, &kg.features, &kg.dataset.store, norm, seed)
        );
        assert_eq!(c.tp + c.fp + c.fn_ + c.tn, 2 * kg.dataset.store.test.len());
        assert_eq!(m.seed, seed);
    }
}
