//! Deterministic toy knowledge graph for smoke tests and sanity runs.
//!
//! Entities sit on a `width x height` grid. Each relation links an entity to
//! the cells at a fixed set of offsets, so relations are translations with a
//! small fan-out and compose with one another. Visual features are a fixed
//! random linear map of the grid coordinates plus uniform noise, which makes
//! them informative about structure without being identical to it.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Dataset, Vocab};
use crate::features::FeatureTable;
use crate::rng::stream_rng;

const TOY_STREAM: u64 = 0x7e57;

/// Offsets per relation. Five relations, 381 triples on a 10 x 5 grid.
pub const TOY_RELATIONS: [&[(i32, i32)]; 5] = [
    &[(1, 0), (1, 1)],
    &[(0, 1), (-1, 1)],
    &[(2, 0), (2, -1)],
    &[(1, 1), (2, 1)],
    &[(-1, 2), (0, 2), (1, 2)],
];

#[derive(Debug, Clone)]
pub struct ToyKgConfig {
    pub width: i32,
    pub height: i32,
    pub d_v: usize,
    /// Half-width of the uniform noise added to every feature coordinate.
    pub noise: f32,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for ToyKgConfig {
    fn default() -> Self {
        ToyKgConfig {
            width: 10,
            height: 5,
            d_v: 16,
            noise: 0.1,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyKg {
    pub dataset: Dataset,
    pub features: FeatureTable,
}

fn cell_name(x: i32, y: i32) -> String {
    format!("cell_{x}_{y}")
}

pub fn toy_kg(config: &ToyKgConfig) -> ToyKg {
    let mut rng = stream_rng(config.seed, TOY_STREAM);
    let rel_names: Vec<String> = (0..TOY_RELATIONS.len())
        .map(|r| format!("rel_{r}"))
        .collect();

    let mut triples: Vec<(String, usize, String)> = Vec::new();
    for (r, offsets) in TOY_RELATIONS.iter().enumerate() {
        for x in 0..config.width {
            for y in 0..config.height {
                for &(dx, dy) in offsets.iter() {
                    let (tx, ty) = (x + dx, y + dy);
                    if (0..config.width).contains(&tx) && (0..config.height).contains(&ty) {
                        triples.push((cell_name(x, y), r, cell_name(tx, ty)));
                    }
                }
            }
        }
    }
    triples.shuffle(&mut rng);

    let n = triples.len();
    let n_valid = (n as f64 * config.valid_fraction).round() as usize;
    let n_test = (n as f64 * config.test_fraction).round() as usize;
    let as_named = |s: &[(String, usize, String)]| -> Vec<(String, String, String)> {
        s.iter()
            .map(|(h, r, t)| (h.clone(), rel_names[*r].clone(), t.clone()))
            .collect()
    };
    let valid = as_named(&triples[..n_valid]);
    let test = as_named(&triples[n_valid..n_valid + n_test]);
    let train = as_named(&triples[n_valid + n_test..]);

    // entity ids follow grid order, relation ids follow relation order
    let mut entities = Vocab::new();
    for x in 0..config.width {
        for y in 0..config.height {
            entities.intern(&cell_name(x, y));
        }
    }
    let mut relations = Vocab::new();
    for name in &rel_names {
        relations.intern(name);
    }
    let dataset = Dataset::from_named_with(
        entities,
        relations,
        &borrow(&train),
        &borrow(&valid),
        &borrow(&test),
    )
    .expect("toy graph has training triples");

    let mixing: Vec<[f32; 3]> = (0..config.d_v)
        .map(|_| {
            [
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-0.5..=0.5),
            ]
        })
        .collect();
    let rows: Vec<Vec<f32>> = dataset
        .entities
        .names()
        .iter()
        .map(|name| {
            let mut coords = name.trim_start_matches("cell_").split('_');
            let x: f32 = coords.next().unwrap().parse().unwrap();
            let y: f32 = coords.next().unwrap().parse().unwrap();
            let (u, v) = (
                x / (config.width - 1).max(1) as f32,
                y / (config.height - 1).max(1) as f32,
            );
            mixing
                .iter()
                .map(|m| m[0] * u + m[1] * v + m[2] + rng.gen_range(-config.noise..=config.noise))
                .collect()
        })
        .collect();
    let features = FeatureTable::from_rows(config.d_v, rows).expect("rows have length d_v");
    ToyKg { dataset, features }
}

fn borrow(s: &[(String, String, String)]) -> Vec<(&str, &str, &str)> {
    s.iter()
        .map(|(h, r, t)| (h.as_str(), r.as_str(), t.as_str()))
        .collect()
}
