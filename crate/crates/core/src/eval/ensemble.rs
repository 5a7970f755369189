//! Score-level ensemble of dual encoders. Summing per-model dot products is
//! the same as a dot product of the concatenated embeddings.

use crate::corpus::Corpus;
use crate::dense::{DenseModel, PassageMatrix, Side};
use crate::error::{Error, Result};
use crate::eval::{top_k_by_score, RankedList};
use crate::text::tokenize;

/// Summed dot-product score of `query` against every passage, by ordinal.
pub fn ensemble_scores(models: &[&DenseModel], matrices: &[&PassageMatrix], query: &str) -> Result<Vec<f64>> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("ensemble needs at least one model".into()));
    }
    if models.len() != matrices.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models but {} passage matrices",
            models.len(),
            matrices.len()
        )));
    }
    let corpus_checksum = matrices[0].corpus_checksum();
    let rows = matrices[0].len();
    if matrices
        .iter()
        .any(|m| m.corpus_checksum() != corpus_checksum || m.len() != rows)
    {
        return Err(Error::CorpusMismatch("passage matrices were built over different corpora".into()));
    }
    let tokens = tokenize(query);
    let mut total = vec![0.0; rows];
    for (model, matrix) in models.iter().zip(matrices) {
        if model.dim() != matrix.dim() {
            return Err(Error::DimMismatch {
                left: model.dim(),
                right: matrix.dim(),
            });
        }
        let q = model.encode_buckets(Side::Query, &tokens.hashed(model.buckets()));
        for (t, s) in total.iter_mut().zip(matrix.scores(&q)) {
            *t += s;
        }
    }
    Ok(total)
}

/// Exact top-k over summed scores, ties by ascending ordinal.
pub fn ensemble_search(
    models: &[&DenseModel],
    matrices: &[&PassageMatrix],
    corpus: &Corpus,
    query_id: &str,
    query: &str,
    k: usize,
) -> Result<RankedList> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let scores = ensemble_scores(models, matrices, query)?;
    if scores.len() != corpus.len() {
        return Err(Error::CorpusMismatch(format!(
            "matrices have {} rows, corpus {} passages",
            scores.len(),
            corpus.len()
        )));
    }
    let hits = top_k_by_score(scores.into_iter().enumerate().collect(), k);
    Ok(RankedList::from_scored(query_id, corpus, &hits))
}
