//! Per-entity visual features.
//!
//! Each entity owns one mean-pooled feature vector of length `d_v`. Vectors
//! come from an MMKF file written by the offline extractor; entities absent
//! from the file are Xavier-filled from the run seed. Features are frozen
//! unless `train_filled_features` is enabled, in which case only the filled
//! rows are updated.
//!
//! MMKF layout (little-endian):
//!
//! ```text
//! "MMKF" | version u32 = 1 | count u32 | d_v u32
//! count x [ name_len u16 | name (UTF-8) | d_v x f32 ]
//! ```
//!
//! Paths ending in `.tsv` are read as `name<TAB>v1<TAB>...<TAB>v_dv` instead.

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::{EntityId, Vocab};
use crate::rng::{stream, stream_rng};

pub const MMKF_MAGIC: &[u8; 4] = b"MMKF";
pub const MMKF_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FeatureError {
    #[error("feature dimension mismatch: expected {expected}, file has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("unknown entities in feature file: {}", .0.join(", "))]
    UnknownEntities(Vec<String>),
    #[error("duplicate feature record for entity {0}")]
    DuplicateEntity(String),
    #[error("malformed feature file: {0}")]
    Format(String),
    #[error("entity id {id} out of range for {n} entities")]
    Index { id: EntityId, n: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FromFile,
    XavierFilled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    d_v: usize,
    vectors: Vec<f32>,
    provenance: Vec<Provenance>,
}

/// Uniform Xavier bound for a `fan_in x fan_out` weight.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl FeatureTable {
    /// A table in which every entity is Xavier-filled.
    pub fn xavier_filled(n_entities: usize, d_v: usize, d: usize, seed: u64) -> Self {
        Self::assemble(n_entities, d_v, d, seed, &HashMap::new())
    }

    /// Builds a table from explicit per-entity vectors. Used for synthetic
    /// fixtures; every row is marked as coming from a file.
    pub fn from_rows(d_v: usize, rows: Vec<Vec<f32>>) -> Result<Self, FeatureError> {
        let mut vectors = Vec::with_capacity(rows.len() * d_v);
        for row in &rows {
            if row.len() != d_v {
                return Err(FeatureError::DimensionMismatch {
                    expected: d_v,
                    found: row.len(),
                });
            }
            vectors.extend_from_slice(row);
        }
        Ok(FeatureTable {
            d_v,
            vectors,
            provenance: vec![Provenance::FromFile; rows.len()],
        })
    }

    fn assemble(
        n_entities: usize,
        d_v: usize,
        d: usize,
        seed: u64,
        stored: &HashMap<EntityId, Vec<f32>>,
    ) -> Self {
        let bound = xavier_bound(d_v, d) as f32;
        let mut rng = stream_rng(seed, stream::FEATURE_FILL);
        let mut vectors = Vec::with_capacity(n_entities * d_v);
        let mut provenance = Vec::with_capacity(n_entities);
        for id in 0..n_entities as EntityId {
            match stored.get(&id) {
                Some(v) => {
                    vectors.extend_from_slice(v);
                    provenance.push(Provenance::FromFile);
                }
                None => {
                    vectors.extend((0..d_v).map(|_| rng.gen_range(-bound..=bound)));
                    provenance.push(Provenance::XavierFilled);
                }
            }
        }
        FeatureTable {
            d_v,
            vectors,
            provenance,
        }
    }

    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn n_entities(&self) -> usize {
        self.provenance.len()
    }

    /// The stored (already mean-pooled) feature of entity `e`.
    pub fn pooled_feature(&self, e: EntityId) -> Result<&[f32], FeatureError> {
        if (e as usize) < self.n_entities() {
            Ok(self.row(e))
        } else {
            Err(FeatureError::Index {
                id: e,
                n: self.n_entities(),
            })
        }
    }

    #[inline]
    pub(crate) fn row(&self, e: EntityId) -> &[f32] {
        let start = e as usize * self.d_v;
        &self.vectors[start..start + self.d_v]
    }

    pub(crate) fn row_mut(&mut self, e: EntityId) -> &mut [f32] {
        let start = e as usize * self.d_v;
        &mut self.vectors[start..start + self.d_v]
    }

    pub fn provenance(&self, e: EntityId) -> Provenance {
        self.provenance[e as usize]
    }

    pub fn filled_count(&self) -> usize {
        self.provenance
            .iter()
            .filter(|p| **p == Provenance::XavierFilled)
            .count()
    }

    /// Writes every row as an MMKF record named by `vocab`.
    pub fn write_mmkf(&self, path: &Path, vocab: &Vocab) -> Result<(), FeatureError> {
        let records: Vec<(&str, &[f32])> = (0..self.n_entities() as EntityId)
            .map(|e| (vocab.name(e).unwrap_or_default(), self.row(e)))
            .collect();
        write_mmkf(path, self.d_v, &records)
    }
}

/// Coordinate-wise mean of several feature vectors of equal length.
pub fn mean_pool(features: &[&[f32]]) -> Vec<f32> {
    let Some(first) = features.first() else {
        return Vec::new();
    };
    let n = features.len() as f64;
    (0..first.len())
        .map(|j| (features.iter().map(|f| f[j] as f64).sum::<f64>() / n) as f32)
        .collect()
}

pub fn encode_mmkf(d_v: usize, records: &[(&str, &[f32])]) -> Result<Vec<u8>, FeatureError> {
    let mut buf = Vec::with_capacity(16 + records.len() * (2 + 16 + 4 * d_v));
    buf.extend_from_slice(MMKF_MAGIC);
    buf.extend_from_slice(&MMKF_VERSION.to_le_bytes());
    buf.extend_from_slice(&(records.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(d_v as u32).to_le_bytes());
    for (name, values) in records {
        if values.len() != d_v {
            return Err(FeatureError::DimensionMismatch {
                expected: d_v,
                found: values.len(),
            });
        }
        let len = u16::try_from(name.len())
            .map_err(|_| FeatureError::Format(format!("entity name too long: {name}")))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        for v in *values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn write_mmkf(path: &Path, d_v: usize, records: &[(&str, &[f32])]) -> Result<(), FeatureError> {
    let bytes = encode_mmkf(d_v, records)?;
    let io_err = |source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(fs::File::create(path).map_err(io_err)?);
    out.write_all(&bytes).map_err(io_err)?;
    out.flush().map_err(io_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FeatureError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| {
                FeatureError::Format(format!("truncated {what} at byte {}", self.pos))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16, FeatureError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, FeatureError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Entity name and one feature vector.
pub type Record = (String, Vec<f32>);

/// Decodes an MMKF payload into `(d_v, records)`.
pub fn decode_mmkf(bytes: &[u8]) -> Result<(usize, Vec<Record>), FeatureError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MMKF_MAGIC {
        return Err(FeatureError::Format("bad magic".into()));
    }
    let version = cur.u32("version")?;
    if version != MMKF_VERSION {
        return Err(FeatureError::Format(format!(
            "unsupported version {version}"
        )));
    }
    let count = cur.u32("count")? as usize;
    let d_v = cur.u32("d_v")? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| FeatureError::Format("entity name is not UTF-8".into()))?
            .to_owned();
        let payload = cur.take(4 * d_v, "feature payload")?;
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, values));
    }
    if cur.pos != bytes.len() {
        return Err(FeatureError::Format(format!(
            "{} trailing bytes after {count} records",
            bytes.len() - cur.pos
        )));
    }
    Ok((d_v, records))
}

fn parse_tsv(text: &str, d_v_expected: usize) -> Result<Vec<(String, Vec<f32>)>, FeatureError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let name = fields.next().unwrap_or_default().to_owned();
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f32>()
                    .map_err(|_| FeatureError::Format(format!("line {}: bad value {f:?}", i + 1)))
            })
            .collect::<Result<Vec<f32>, _>>()?;
        if values.len() != d_v_expected {
            return Err(FeatureError::DimensionMismatch {
                expected: d_v_expected,
                found: values.len(),
            });
        }
        records.push((name, values));
    }
    Ok(records)
}

/// Loads a feature file and Xavier-fills every entity it does not cover.
///
/// `d` is the embedding dimension, which sets the fill bound together with
/// `d_v_expected`. Filled rows are drawn in ascending entity-id order from a
/// stream derived from `seed`, so record order in the file has no effect.
pub fn load_features(
    path: &Path,
    vocab: &Vocab,
    d_v_expected: usize,
    d: usize,
    seed: u64,
) -> Result<FeatureTable, FeatureError> {
    let bytes = fs::read(path).map_err(|source| FeatureError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let records = if path.extension().is_some_and(|e| e == "tsv") {
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| FeatureError::Format("feature TSV is not UTF-8".into()))?;
        parse_tsv(text, d_v_expected)?
    } else {
        let (d_v, records) = decode_mmkf(&bytes)?;
        if d_v != d_v_expected {
            return Err(FeatureError::DimensionMismatch {
                expected: d_v_expected,
                found: d_v,
            });
        }
        records
    };
    table_from_records(records, vocab, d_v_expected, d, seed)
}

pub fn table_from_records(
    records: Vec<(String, Vec<f32>)>,
    vocab: &Vocab,
    d_v: usize,
    d: usize,
    seed: u64,
) -> Result<FeatureTable, FeatureError> {
    let mut stored = HashMap::with_capacity(records.len());
    let mut unknown = Vec::new();
    for (name, values) in records {
        if values.len() != d_v {
            return Err(FeatureError::DimensionMismatch {
                expected: d_v,
                found: values.len(),
            });
        }
        match vocab.id(&name) {
            Some(id) => {
                if stored.insert(id, values).is_some() {
                    return Err(FeatureError::DuplicateEntity(name));
                }
            }
            None => unknown.push(name),
        }
    }
    if !unknown.is_empty() {
        return Err(FeatureError::UnknownEntities(unknown));
    }
    let table = FeatureTable::assemble(vocab.len(), d_v, d, seed, &stored);
    log::info!(
        "features: {} from file, {} xavier-filled (d_v = {d_v})",
        vocab.len() - table.filled_count(),
        table.filled_count()
    );
    Ok(table)
}
