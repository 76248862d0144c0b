//! Trainable parameters: structural entity embeddings, relation embeddings,
//! and the `d x d_v` projection that maps a pooled visual feature into the
//! structural space.
//!
//! Parameters live in memory as row-major `f64` so that finite-difference
//! checks and score accumulation share one precision. Checkpoints store them
//! as little-endian `f32`:
//!
//! ```text
//! "MMKC" | version u32 = 1 | n_entities u32 | n_relations u32 | d u32 | d_v u32
//!        | epoch u32 | seed u64 | E_s (n_entities x d) | R (n_relations x d) | W (d x d_v)
//! ```

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::data::{EntityId, RelationId, Vocab};
use crate::features::{xavier_bound, FeatureTable};
use crate::rng::{stream, stream_rng};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMKC";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 6 + 8;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{kind} id {id} out of range for {n} rows")]
    Index {
        kind: &'static str,
        id: u32,
        n: usize,
    },
    #[error("projection expects d_v = {expected}, feature table has d_v = {found}")]
    FeatureDim { expected: usize, found: usize },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// The ids used to materialise one triple slot: the structural embedding
/// comes from `struct_id`, the visual embedding from `vis_id`.
///
/// Real entities have `struct_id == vis_id`. Visual negatives keep the
/// original `struct_id` and swap in another entity's `vis_id`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EntityView {
    pub struct_id: EntityId,
    pub vis_id: EntityId,
}

impl EntityView {
    pub const fn whole(e: EntityId) -> Self {
        EntityView {
            struct_id: e,
            vis_id: e,
        }
    }

    pub const fn mixed(struct_id: EntityId, vis_id: EntityId) -> Self {
        EntityView { struct_id, vis_id }
    }

    pub fn is_whole(&self) -> bool {
        self.struct_id == self.vis_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    n_entities: usize,
    n_relations: usize,
    d: usize,
    d_v: usize,
    entity: Vec<f64>,
    relation: Vec<f64>,
    projection: Vec<f64>,
}

fn fill_uniform(rng: &mut impl Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Xavier-uniform initialisation: `E_s` and `R` with bound `sqrt(6 / 2d)`,
/// `W` with bound `sqrt(6 / (d + d_v))`, drawn in that order.
pub fn init_params(
    n_entities: usize,
    n_relations: usize,
    d: usize,
    d_v: usize,
    seed: u64,
) -> ModelParams {
    assert!(
        n_entities > 0 && n_relations > 0 && d > 0 && d_v > 0,
        "all parameter dimensions must be positive"
    );
    let mut rng = stream_rng(seed, stream::PARAM_INIT);
    let emb_bound = xavier_bound(d, d);
    let entity = fill_uniform(&mut rng, n_entities * d, emb_bound);
    let relation = fill_uniform(&mut rng, n_relations * d, emb_bound);
    let projection = fill_uniform(&mut rng, d * d_v, xavier_bound(d, d_v));
    ModelParams {
        n_entities,
        n_relations,
        d,
        d_v,
        entity,
        relation,
        projection,
    }
}

impl ModelParams {
    /// Builds parameters from explicit row-major buffers.
    pub fn from_parts(
        n_entities: usize,
        n_relations: usize,
        d: usize,
        d_v: usize,
        entity: Vec<f64>,
        relation: Vec<f64>,
        projection: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(ModelError::Checkpoint(format!(
                    "{what} has {got} values, expected {want}"
                )))
            }
        };
        check("E_s", entity.len(), n_entities * d)?;
        check("R", relation.len(), n_relations * d)?;
        check("W", projection.len(), d * d_v)?;
        Ok(ModelParams {
            n_entities,
            n_relations,
            d,
            d_v,
            entity,
            relation,
            projection,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn feature_dim(&self) -> usize {
        self.d_v
    }

    #[inline]
    pub fn entity(&self, e: EntityId) -> &[f64] {
        let s = e as usize * self.d;
        &self.entity[s..s + self.d]
    }

    pub fn entity_mut(&mut self, e: EntityId) -> &mut [f64] {
        let s = e as usize * self.d;
        &mut self.entity[s..s + self.d]
    }

    #[inline]
    pub fn relation(&self, r: RelationId) -> &[f64] {
        let s = r as usize * self.d;
        &self.relation[s..s + self.d]
    }

    pub fn relation_mut(&mut self, r: RelationId) -> &mut [f64] {
        let s = r as usize * self.d;
        &mut self.relation[s..s + self.d]
    }

    /// Row-major `d x d_v` projection.
    pub fn projection(&self) -> &[f64] {
        &self.projection
    }

    pub fn projection_mut(&mut self) -> &mut [f64] {
        &mut self.projection
    }

    pub fn entity_table(&self) -> &[f64] {
        &self.entity
    }

    pub fn relation_table(&self) -> &[f64] {
        &self.relation
    }

    pub fn check_entity(&self, e: EntityId) -> Result<(), ModelError> {
        if (e as usize) < self.n_entities {
            Ok(())
        } else {
            Err(ModelError::Index {
                kind: "entity",
                id: e,
                n: self.n_entities,
            })
        }
    }

    pub fn check_relation(&self, r: RelationId) -> Result<(), ModelError> {
        if (r as usize) < self.n_relations {
            Ok(())
        } else {
            Err(ModelError::Index {
                kind: "relation",
                id: r,
                n: self.n_relations,
            })
        }
    }

    pub fn check_features(&self, table: &FeatureTable) -> Result<(), ModelError> {
        if table.d_v() != self.d_v {
            return Err(ModelError::FeatureDim {
                expected: self.d_v,
                found: table.d_v(),
            });
        }
        if table.n_entities() < self.n_entities {
            return Err(ModelError::Index {
                kind: "feature row",
                id: self.n_entities as u32 - 1,
                n: table.n_entities(),
            });
        }
        Ok(())
    }

    /// `out = W * feature`.
    #[inline]
    pub fn project_into(&self, feature: &[f32], out: &mut [f64]) {
        for (o, w_row) in out.iter_mut().zip(self.projection.chunks_exact(self.d_v)) {
            *o = w_row
                .iter()
                .zip(feature)
                .map(|(w, x)| w * f64::from(*x))
                .sum();
        }
    }

    /// Visual embedding of `e`: the projection applied to its pooled feature.
    pub fn visual_embedding(
        &self,
        table: &FeatureTable,
        e: EntityId,
    ) -> Result<Vec<f64>, ModelError> {
        self.check_entity(e)?;
        self.check_features(table)?;
        let mut out = vec![0.0; self.d];
        self.project_into(table.row(e), &mut out);
        Ok(out)
    }

    /// Visual embeddings for every entity, row-major `n_entities x d`.
    pub fn visual_table(&self, table: &FeatureTable) -> Vec<f64> {
        let mut out = vec![0.0; self.n_entities * self.d];
        out.par_chunks_mut(self.d)
            .enumerate()
            .for_each(|(e, row)| self.project_into(table.row(e as EntityId), row));
        out
    }

    /// Scales every structural entity row with L2 norm above 1 back to the
    /// unit sphere. Relations and the projection are left alone.
    pub fn renormalize(&mut self) {
        for row in self.entity.chunks_exact_mut(self.d) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }

    /// [`renormalize`](Self::renormalize) restricted to the given rows.
    pub fn renormalize_rows(&mut self, rows: impl IntoIterator<Item = EntityId>) {
        for e in rows {
            let row = self.entity_mut(e);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1.0 {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entity
            .iter()
            .chain(&self.relation)
            .chain(&self.projection)
            .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub n_entities: u32,
    pub n_relations: u32,
    pub d: u32,
    pub d_v: u32,
    pub epoch: u32,
    pub seed: u64,
}

pub fn encode_checkpoint(params: &ModelParams, epoch: u32, seed: u64) -> Vec<u8> {
    let n_values = params.entity.len() + params.relation.len() + params.projection.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * n_values);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [
        CHECKPOINT_VERSION,
        params.n_entities as u32,
        params.n_relations as u32,
        params.d as u32,
        params.d_v as u32,
        epoch,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&seed.to_le_bytes());
    for x in params
        .entity
        .iter()
        .chain(&params.relation)
        .chain(&params.projection)
    {
        buf.extend_from_slice(&(*x as f32).to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(CheckpointHeader, ModelParams), ModelError> {
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::Checkpoint("truncated header".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {}",
            word(0)
        )));
    }
    let header = CheckpointHeader {
        n_entities: word(1),
        n_relations: word(2),
        d: word(3),
        d_v: word(4),
        epoch: word(5),
        seed: u64::from_le_bytes(bytes[28..36].try_into().unwrap()),
    };
    let (n, m, d, d_v) = (
        header.n_entities as usize,
        header.n_relations as usize,
        header.d as usize,
        header.d_v as usize,
    );
    let expected = 4 * (n * d + m * d + d * d_v);
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(ModelError::Checkpoint(format!(
            "payload is {} bytes, header implies {expected}",
            body.len()
        )));
    }
    let mut values = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    let entity: Vec<f64> = values.by_ref().take(n * d).collect();
    let relation: Vec<f64> = values.by_ref().take(m * d).collect();
    let projection: Vec<f64> = values.collect();
    let params = ModelParams::from_parts(n, m, d, d_v, entity, relation, projection)?;
    Ok((header, params))
}

pub fn write_checkpoint(
    path: &Path,
    params: &ModelParams,
    epoch: u32,
    seed: u64,
) -> Result<(), ModelError> {
    let io_err = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    out.write_all(&encode_checkpoint(params, epoch, seed))
        .map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, ModelParams), ModelError> {
    let bytes = fs::read(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

/// Writes `name<TAB>type<TAB>v1...v_d` rows, one structural and one visual
/// row per entity.
pub fn export_embeddings(
    path: &Path,
    params: &ModelParams,
    table: &FeatureTable,
    entities: &Vocab,
) -> Result<(), ModelError> {
    params.check_features(table)?;
    let io_err = |source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    let visual = params.visual_table(table);
    for e in 0..params.n_entities {
        let name = entities.name(e as EntityId).unwrap_or_default();
        for (kind, row) in [
            ("structural", params.entity(e as EntityId)),
            ("visual", &visual[e * params.d..(e + 1) * params.d]),
        ] {
            write!(out, "{name}\t{kind}").map_err(io_err)?;
            for x in row {
                write!(out, "\t{x}").map_err(io_err)?;
            }
            writeln!(out).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}
