//! Pre-encoded passage matrix and exact top-k search.
//!
//! Cache file layout (`ABPM1`): magic, u32 dim, u32 rows, u64 model checksum,
//! u64 corpus checksum, rows·dim × f64, u64 file checksum.

use std::path::Path;

use rayon::prelude::*;

use super::{DenseModel, Side};
use crate::codec::{Reader, Writer};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{top_k_by_score, RankedList};
use crate::math::dot;
use crate::text::tokenize;

pub const MATRIX_MAGIC: &[u8; 5] = b"ABPM1";

/// Every passage encoded once, stored row-major by corpus ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageMatrix {
    dim: usize,
    rows: Vec<f64>,
    model_checksum: u64,
    corpus_checksum: u64,
}

impl PassageMatrix {
    /// Encodes all passages; parallel over passages, each written to its own slot.
    pub fn build(model: &DenseModel, corpus: &Corpus) -> Self {
        let dim = model.dim();
        let mut rows = vec![0.0; dim * corpus.len()];
        rows.par_chunks_mut(dim).enumerate().for_each(|(ord, slot)| {
            let buckets = tokenize(&corpus.indexing_text(ord)).hashed(model.buckets());
            slot.copy_from_slice(&model.encode_buckets(Side::Passage, &buckets));
        });
        PassageMatrix {
            dim,
            rows,
            model_checksum: model.checksum(),
            corpus_checksum: corpus.checksum(),
        }
    }

    /// Loads `path` when its key matches, otherwise builds and writes it.
    pub fn cached(model: &DenseModel, corpus: &Corpus, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            if let Ok(m) = Self::load(path) {
                if m.model_checksum == model.checksum() && m.corpus_checksum == corpus.checksum() {
                    return Ok(m);
                }
            }
        }
        let m = Self::build(model, corpus);
        m.save(path)?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, ordinal: usize) -> &[f64] {
        &self.rows[ordinal * self.dim..(ordinal + 1) * self.dim]
    }

    pub fn model_checksum(&self) -> u64 {
        self.model_checksum
    }

    pub fn corpus_checksum(&self) -> u64 {
        self.corpus_checksum
    }

    /// Dot product of `query` with every passage, by ordinal.
    pub fn scores(&self, query: &[f64]) -> Vec<f64> {
        self.rows.chunks_exact(self.dim).map(|p| dot(query, p)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MATRIX_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.len() as u32);
        w.u64(self.model_checksum);
        w.u64(self.corpus_checksum);
        for &x in &self.rows {
            w.f64(x);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MATRIX_MAGIC)?;
        let dim = r.u32()? as usize;
        let n = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::InvalidArgument("matrix dim is zero".into()));
        }
        let model_checksum = r.u64()?;
        let corpus_checksum = r.u64()?;
        let rows = (0..dim * n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(PassageMatrix {
            dim,
            rows,
            model_checksum,
            corpus_checksum,
        })
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

/// Exact top-k `(ordinal, score)` for an already-hashed query.
pub fn search_tokens(model: &DenseModel, matrix: &PassageMatrix, query: &[u32], k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if matrix.dim() != model.dim() {
        return Err(Error::DimMismatch {
            left: model.dim(),
            right: matrix.dim(),
        });
    }
    let q = model.encode_buckets(Side::Query, query);
    let scored = matrix.scores(&q).into_iter().enumerate().collect();
    Ok(top_k_by_score(scored, k))
}

/// Exact top-k by dot product; ties go to the lower corpus ordinal.
pub fn search(
    model: &DenseModel,
    matrix: &PassageMatrix,
    corpus: &Corpus,
    query_id: &str,
    query: &str,
    k: usize,
) -> Result<RankedList> {
    if matrix.len() != corpus.len() {
        return Err(Error::CorpusMismatch(format!(
            "matrix has {} rows, corpus {} passages",
            matrix.len(),
            corpus.len()
        )));
    }
    let hits = search_tokens(model, matrix, &tokenize(query).hashed(model.buckets()), k)?;
    Ok(RankedList::from_scored(query_id, corpus, &hits))
}
