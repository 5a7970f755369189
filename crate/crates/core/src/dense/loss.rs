use std::collections::BTreeMap;

use super::{DenseModel, Side};
use crate::math::{dot, log_sum_exp};
use crate::text::tokenize;

/// One query with its sampled positive and hard negative, as bucket ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastiveTriple {
    pub query: Vec<u32>,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
}

impl ContrastiveTriple {
    pub fn from_texts(model: &DenseModel, query: &str, positive: &str, negative: &str) -> Self {
        let hash = |t: &str| tokenize(t).hashed(model.buckets());
        ContrastiveTriple {
            query: hash(query),
            positive: hash(positive),
            negative: hash(negative),
        }
    }
}

/// Gradient rows for both embedding tables, keyed by bucket.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DenseGradient {
    pub query_rows: BTreeMap<u32, Vec<f64>>,
    pub passage_rows: BTreeMap<u32, Vec<f64>>,
}

impl DenseGradient {
    pub fn rows(&self, side: Side) -> &BTreeMap<u32, Vec<f64>> {
        match side {
            Side::Query => &self.query_rows,
            Side::Passage => &self.passage_rows,
        }
    }

    /// Spreads the gradient of a mean-pooled vector over its token rows.
    fn scatter(&mut self, side: Side, buckets: &[u32], grad: &[f64]) {
        if buckets.is_empty() {
            return;
        }
        let rows = match side {
            Side::Query => &mut self.query_rows,
            Side::Passage => &mut self.passage_rows,
        };
        let share = 1.0 / buckets.len() as f64;
        for &b in buckets {
            let row = rows.entry(b).or_insert_with(|| vec![0.0; grad.len()]);
            for (r, g) in row.iter_mut().zip(grad) {
                *r += g * share;
            }
        }
    }
}

/// In-batch contrastive loss: every query is scored against the positive and
/// negative of every item in the batch, and the loss is the mean negative
/// log-likelihood of each query's own positive.
pub fn contrastive_loss(
    model: &DenseModel,
    batch: &[ContrastiveTriple],
    temperature: f64,
) -> (f64, DenseGradient) {
    let mut grad = DenseGradient::default();
    if batch.is_empty() {
        return (0.0, grad);
    }
    let dim = model.dim();
    let queries: Vec<Vec<f64>> = batch.iter().map(|t| model.encode_buckets(Side::Query, &t.query)).collect();
    // Candidate c = 2j is item j's positive, 2j + 1 its negative.
    let candidate_tokens: Vec<&[u32]> = batch
        .iter()
        .flat_map(|t| [t.positive.as_slice(), t.negative.as_slice()])
        .collect();
    let candidates: Vec<Vec<f64>> = candidate_tokens
        .iter()
        .map(|toks| model.encode_buckets(Side::Passage, toks))
        .collect();

    let scale = 1.0 / (temperature * batch.len() as f64);
    let mut total = 0.0;
    let mut d_candidates = vec![vec![0.0; dim]; candidates.len()];
    for (i, q) in queries.iter().enumerate() {
        let logits: Vec<f64> = candidates.iter().map(|p| dot(q, p) / temperature).collect();
        let lse = log_sum_exp(&logits);
        total += lse - logits[2 * i];

        let mut d_query = vec![0.0; dim];
        for (c, p) in candidates.iter().enumerate() {
            let mut coeff = (logits[c] - lse).exp();
            if c == 2 * i {
                coeff -= 1.0;
            }
            let coeff = coeff * scale;
            for k in 0..dim {
                d_query[k] += coeff * p[k];
                d_candidates[c][k] += coeff * q[k];
            }
        }
        grad.scatter(Side::Query, &batch[i].query, &d_query);
    }
    for (toks, d) in candidate_tokens.iter().zip(&d_candidates) {
        grad.scatter(Side::Passage, toks, d);
    }
    (total / batch.len() as f64, grad)
}
