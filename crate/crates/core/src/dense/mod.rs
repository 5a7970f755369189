//! Asymmetric dual encoder over hashed bag-of-words.
//!
//! Each side owns a `buckets × dim` embedding table. A text is encoded as
//! the mean of the rows of its hashed tokens and scored against the other
//! side with a raw dot product.
//!
//! # Checkpoint layout (`ABDM1`)
//!
//! | field | type |
//! | --- | --- |
//! | magic | 5 bytes `ABDM1` |
//! | dim, buckets | u32, u32 |
//! | seed | u64 |
//! | table checksum | u64, FNV-1a-64 of both tables' little-endian bytes |
//! | query table | buckets·dim × f32, row-major |
//! | passage table | buckets·dim × f32, row-major |
//! | file checksum | u64, FNV-1a-64 of every preceding byte |

mod finetune;
mod loss;
mod matrix;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::math::softmax;
use crate::text::{fnv1a64_extend, tokenize};

pub use finetune::{finetune_supervised, FinetuneConfig, FinetuneOutcome};
pub use loss::{contrastive_loss, ContrastiveTriple, DenseGradient};
pub use matrix::{search, search_tokens, PassageMatrix};
pub use train::{train, TrainConfig, TrainOutcome, TrainingExample};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ABDM1";
pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_BUCKETS: usize = 65_536;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Query,
    Passage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseModel {
    dim: usize,
    buckets: usize,
    seed: u64,
    query_table: Vec<f32>,
    passage_table: Vec<f32>,
}

impl DenseModel {
    /// Gaussian(0, 0.02) init; both tables start from the same draw.
    pub fn new(dim: usize, buckets: usize, seed: u64) -> Result<Self> {
        Self::with_std(dim, buckets, seed, INIT_STD)
    }

    pub fn with_std(dim: usize, buckets: usize, seed: u64, std: f64) -> Result<Self> {
        check_shape(dim, buckets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidArgument(format!("init std {std}: {e}")))?;
        let table: Vec<f32> = (0..dim * buckets).map(|_| normal.sample(&mut rng) as f32).collect();
        Ok(DenseModel {
            dim,
            buckets,
            seed,
            query_table: table.clone(),
            passage_table: table,
        })
    }

    pub fn zeros(dim: usize, buckets: usize) -> Result<Self> {
        check_shape(dim, buckets)?;
        Ok(DenseModel {
            dim,
            buckets,
            seed: 0,
            query_table: vec![0.0; dim * buckets],
            passage_table: vec![0.0; dim * buckets],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn table(&self, side: Side) -> &[f32] {
        match side {
            Side::Query => &self.query_table,
            Side::Passage => &self.passage_table,
        }
    }

    pub(crate) fn table_mut(&mut self, side: Side) -> &mut [f32] {
        match side {
            Side::Query => &mut self.query_table,
            Side::Passage => &mut self.passage_table,
        }
    }

    pub fn row(&self, side: Side, bucket: u32) -> &[f32] {
        let start = bucket as usize * self.dim;
        &self.table(side)[start..start + self.dim]
    }

    pub fn row_mut(&mut self, side: Side, bucket: u32) -> &mut [f32] {
        let dim = self.dim;
        let start = bucket as usize * dim;
        &mut self.table_mut(side)[start..start + dim]
    }

    /// Mean of the rows for `buckets`; the zero vector when empty.
    pub fn encode_buckets(&self, side: Side, buckets: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if buckets.is_empty() {
            return out;
        }
        for &b in buckets {
            for (o, &x) in out.iter_mut().zip(self.row(side, b)) {
                *o += f64::from(x);
            }
        }
        let n = buckets.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    pub fn encode(&self, side: Side, text: &str) -> Vec<f64> {
        self.encode_buckets(side, &tokenize(text).hashed(self.buckets))
    }

    /// FNV-1a-64 over the little-endian bytes of both tables.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::text::fnv1a64(b"");
        for table in [&self.query_table, &self.passage_table] {
            for x in table.iter() {
                h = fnv1a64_extend(h, &x.to_le_bytes());
            }
        }
        h
    }

    pub fn is_finite(&self) -> bool {
        self.query_table.iter().chain(&self.passage_table).all(|x| x.is_finite())
    }

    /// Squared L2 distance between the parameters of two same-shaped models.
    pub fn distance_sq(&self, other: &DenseModel) -> Result<f64> {
        if self.dim != other.dim || self.buckets != other.buckets {
            return Err(Error::DimMismatch {
                left: self.dim * self.buckets,
                right: other.dim * other.buckets,
            });
        }
        let pairs = self
            .query_table
            .iter()
            .zip(&other.query_table)
            .chain(self.passage_table.iter().zip(&other.passage_table));
        Ok(pairs.map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(CHECKPOINT_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.buckets as u32);
        w.u64(self.seed);
        w.u64(self.checksum());
        w.f32s(&self.query_table);
        w.f32s(&self.passage_table);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
        let dim = r.u32()? as usize;
        let buckets = r.u32()? as usize;
        check_shape(dim, buckets)?;
        let seed = r.u64()?;
        let stored = r.u64()?;
        let query_table = r.f32s(dim * buckets)?;
        let passage_table = r.f32s(dim * buckets)?;
        r.finish()?;
        let model = DenseModel {
            dim,
            buckets,
            seed,
            query_table,
            passage_table,
        };
        let computed = model.checksum();
        if computed != stored {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_shape(dim: usize, buckets: usize) -> Result<()> {
    if dim == 0 || buckets == 0 {
        return Err(Error::InvalidArgument(format!(
            "dim ({dim}) and buckets ({buckets}) must be positive"
        )));
    }
    Ok(())
}

/// Dot-product relevance of two encoded vectors.
pub fn score(query: &[f64], passage: &[f64]) -> Result<f64> {
    if query.len() != passage.len() {
        return Err(Error::DimMismatch {
            left: query.len(),
            right: passage.len(),
        });
    }
    Ok(crate::math::dot(query, passage))
}

/// Teacher distribution over `passages`: softmax of dot-product scores at `temperature`.
pub fn soft_labels(model: &DenseModel, query: &str, passages: &[&str], temperature: f64) -> Vec<f64> {
    let q = model.encode(Side::Query, query);
    let scores: Vec<f64> = passages
        .iter()
        .map(|p| crate::math::dot(&q, &model.encode(Side::Passage, p)))
        .collect();
    softmax(&scores, temperature)
}
