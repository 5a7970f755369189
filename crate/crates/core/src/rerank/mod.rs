//! Joint query–passage scorer.
//!
//! A pair is described by `f = [q̄ ; p̄ ; q̄ ⊙ p̄ ; jaccard ; overlap]` where q̄ and p̄
//! are mean-pooled rows of one shared embedding table, `jaccard` is the
//! token-set Jaccard similarity and `overlap` the fraction of query tokens
//! that occur in the passage. The score is `w2 · tanh(W1 f + b1) + b2`.
//!
//! Checkpoint layout (`ABRR1`): magic, u32 dim, u32 buckets, u32 hidden,
//! u64 seed, u64 parameter checksum, then f32 embedding (buckets·dim),
//! W1 (hidden·(3·dim+2), row-major), b1 (hidden), w2 (hidden), b2, and the
//! u64 file checksum.

mod loss;
mod train;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::RankedList;
use crate::text::{fnv1a64_extend, tokenize, TokenSeq};

pub use loss::{ce_loss, kl_loss, KlDirection};
pub use train::{train, RerankLoss, RerankTrainConfig, RerankTrainOutcome};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"ABRR1";
pub const DEFAULT_HIDDEN: usize = 32;
pub const LEXICAL_FEATURES: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RerankModel {
    dim: usize,
    buckets: usize,
    hidden: usize,
    seed: u64,
    embedding: Vec<f32>,
    w1: Vec<f32>,
    b1: Vec<f32>,
    w2: Vec<f32>,
    b2: f32,
}

/// Gradient of a reranker loss. Embedding rows are sparse by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankGradient {
    pub embedding_rows: BTreeMap<u32, Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl RerankGradient {
    pub fn zeros(model: &RerankModel) -> Self {
        RerankGradient {
            embedding_rows: BTreeMap::new(),
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.hidden],
            w2: vec![0.0; model.hidden],
            b2: 0.0,
        }
    }

    pub(crate) fn scale(&mut self, factor: f64) {
        let dense = self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2);
        for g in dense.chain(self.embedding_rows.values_mut().flatten()) {
            *g *= factor;
        }
        self.b2 *= factor;
    }

    fn add_rows(&mut self, buckets: &[u32], grad: &[f64]) {
        if buckets.is_empty() {
            return;
        }
        let share = 1.0 / buckets.len() as f64;
        for &b in buckets {
            let row = self.embedding_rows.entry(b).or_insert_with(|| vec![0.0; grad.len()]);
            for (r, g) in row.iter_mut().zip(grad) {
                *r += g * share;
            }
        }
    }
}

/// Token-level inputs of one query–passage pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInput {
    pub query: Vec<u32>,
    pub passage: Vec<u32>,
    pub jaccard: f64,
    pub overlap: f64,
}

impl PairInput {
    pub fn from_tokens(query: &TokenSeq, passage: &TokenSeq, buckets: usize) -> Self {
        let (jaccard, overlap) = lexical_features(query, passage);
        PairInput {
            query: query.hashed(buckets),
            passage: passage.hashed(buckets),
            jaccard,
            overlap,
        }
    }

    pub fn from_texts(query: &str, passage: &str, buckets: usize) -> Self {
        Self::from_tokens(&tokenize(query), &tokenize(passage), buckets)
    }
}

/// (Jaccard of token sets, fraction of query tokens present in the passage).
pub fn lexical_features(query: &TokenSeq, passage: &TokenSeq) -> (f64, f64) {
    let q: HashSet<&str> = query.tokens().iter().map(String::as_str).collect();
    let p: HashSet<&str> = passage.tokens().iter().map(String::as_str).collect();
    let union = q.union(&p).count();
    let jaccard = if union == 0 {
        0.0
    } else {
        q.intersection(&p).count() as f64 / union as f64
    };
    let overlap = if query.is_empty() {
        0.0
    } else {
        let common = query.tokens().iter().filter(|t| p.contains(t.as_str())).count();
        common as f64 / query.len() as f64
    };
    (jaccard, overlap)
}

/// Cached activations of one forward pass.
pub(crate) struct Forward {
    q: Vec<f64>,
    p: Vec<f64>,
    features: Vec<f64>,
    hidden: Vec<f64>,
    pub score: f64,
}

impl RerankModel {
    /// Fresh seeded init: embedding ~ N(0, embedding_std), W1 ~ N(0, 1/√f),
    /// w2 ~ N(0, 1/√h), biases zero.
    pub fn new(dim: usize, buckets: usize, hidden: usize, embedding_std: f64, seed: u64) -> Result<Self> {
        if dim == 0 || buckets == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("dim, buckets and hidden must be positive".into()));
        }
        let n_features = 3 * dim + LEXICAL_FEATURES;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize, std: f64| -> Result<Vec<f32>> {
            let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok((0..n).map(|_| normal.sample(&mut rng) as f32).collect())
        };
        let embedding = draw(buckets * dim, embedding_std)?;
        let w1 = draw(hidden * n_features, 1.0 / (n_features as f64).sqrt())?;
        let w2 = draw(hidden, 1.0 / (hidden as f64).sqrt())?;
        Ok(RerankModel {
            dim,
            buckets,
            hidden,
            seed,
            embedding,
            w1,
            b1: vec![0.0; hidden],
            w2,
            b2: 0.0,
        })
    }

    pub fn zeros(dim: usize, buckets: usize, hidden: usize) -> Result<Self> {
        let mut m = Self::new(dim, buckets, hidden, 1.0, 0)?;
        m.embedding.iter_mut().chain(&mut m.w1).chain(&mut m.w2).for_each(|x| *x = 0.0);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_features(&self) -> usize {
        3 * self.dim + LEXICAL_FEATURES
    }

    fn pool(&self, buckets: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        if buckets.is_empty() {
            return out;
        }
        for &b in buckets {
            let start = b as usize * self.dim;
            for (o, &x) in out.iter_mut().zip(&self.embedding[start..start + self.dim]) {
                *o += f64::from(x);
            }
        }
        let n = buckets.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }

    /// The joint feature vector of a pair.
    pub fn features(&self, pair: &PairInput) -> Vec<f64> {
        let q = self.pool(&pair.query);
        let p = self.pool(&pair.passage);
        Self::assemble(&q, &p, pair)
    }

    fn assemble(q: &[f64], p: &[f64], pair: &PairInput) -> Vec<f64> {
        let mut f = Vec::with_capacity(3 * q.len() + LEXICAL_FEATURES);
        f.extend_from_slice(q);
        f.extend_from_slice(p);
        f.extend(q.iter().zip(p).map(|(a, b)| a * b));
        f.push(pair.jaccard);
        f.push(pair.overlap);
        f
    }

    pub(crate) fn forward(&self, pair: &PairInput) -> Forward {
        let q = self.pool(&pair.query);
        let p = self.pool(&pair.passage);
        let features = Self::assemble(&q, &p, pair);
        let nf = features.len();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.w1[j * nf..(j + 1) * nf];
                let pre: f64 = row.iter().zip(&features).map(|(&w, x)| f64::from(w) * x).sum();
                (pre + f64::from(self.b1[j])).tanh()
            })
            .collect();
        let score = hidden
            .iter()
            .zip(&self.w2)
            .map(|(h, &w)| h * f64::from(w))
            .sum::<f64>()
            + f64::from(self.b2);
        Forward {
            q,
            p,
            features,
            hidden,
            score,
        }
    }

    /// Accumulates `d_score · ∂score/∂θ` into `grad`.
    pub(crate) fn backward(&self, pair: &PairInput, fw: &Forward, d_score: f64, grad: &mut RerankGradient) {
        let nf = fw.features.len();
        let mut d_features = vec![0.0; nf];
        for j in 0..self.hidden {
            let h = fw.hidden[j];
            grad.w2[j] += d_score * h;
            let d_pre = d_score * f64::from(self.w2[j]) * (1.0 - h * h);
            grad.b1[j] += d_pre;
            let row = &self.w1[j * nf..(j + 1) * nf];
            let g_row = &mut grad.w1[j * nf..(j + 1) * nf];
            for k in 0..nf {
                g_row[k] += d_pre * fw.features[k];
                d_features[k] += d_pre * f64::from(row[k]);
            }
        }
        grad.b2 += d_score;
        let d = self.dim;
        let d_q: Vec<f64> = (0..d).map(|i| d_features[i] + d_features[2 * d + i] * fw.p[i]).collect();
        let d_p: Vec<f64> = (0..d).map(|i| d_features[d + i] + d_features[2 * d + i] * fw.q[i]).collect();
        grad.add_rows(&pair.query, &d_q);
        grad.add_rows(&pair.passage, &d_p);
    }

    pub fn score_pair(&self, pair: &PairInput) -> f64 {
        self.forward(pair).score
    }

    pub fn rerank_score(&self, query: &str, passage: &str) -> f64 {
        self.score_pair(&PairInput::from_texts(query, passage, self.buckets))
    }

    /// Reorders the first `depth` candidates by score, descending; ties keep
    /// their original order. Later candidates follow unchanged and keep their
    /// first-stage scores.
    pub fn rerank(&self, query: &str, candidates: &RankedList, corpus: &Corpus, depth: usize) -> Result<RankedList> {
        let q = tokenize(query);
        let depth = depth.min(candidates.len());
        let mut scored = Vec::with_capacity(depth);
        for (i, e) in candidates.entries[..depth].iter().enumerate() {
            let ord = corpus
                .ordinal(&e.passage_id)
                .ok_or_else(|| Error::UnknownPassage(e.passage_id.clone()))?;
            let pair = PairInput::from_tokens(&q, &tokenize(&corpus.indexing_text(ord)), self.buckets);
            scored.push((i, self.score_pair(&pair)));
        }
        Ok(apply_rerank(candidates, &scored))
    }

    pub fn checksum(&self) -> u64 {
        let mut h = crate::text::fnv1a64(b"");
        for block in [&self.embedding, &self.w1, &self.b1, &self.w2] {
            for x in block.iter() {
                h = fnv1a64_extend(h, &x.to_le_bytes());
            }
        }
        fnv1a64_extend(h, &self.b2.to_le_bytes())
    }

    pub fn is_finite(&self) -> bool {
        self.embedding
            .iter()
            .chain(&self.w1)
            .chain(&self.b1)
            .chain(&self.w2)
            .all(|x| x.is_finite())
            && self.b2.is_finite()
    }

    pub(crate) fn apply(&mut self, opt: &mut crate::optim::Optimizer, grad: &RerankGradient) {
        opt.begin_step();
        let d = self.dim;
        for (&b, g) in &grad.embedding_rows {
            let start = b as usize * d;
            opt.update((0, b), &mut self.embedding[start..start + d], g);
        }
        opt.update((1, 0), &mut self.w1, &grad.w1);
        opt.update((2, 0), &mut self.b1, &grad.b1);
        opt.update((3, 0), &mut self.w2, &grad.w2);
        let mut b2 = [self.b2];
        opt.update((4, 0), &mut b2, &[grad.b2]);
        self.b2 = b2[0];
    }

    /// Flat views of every parameter block: embedding, W1, b1, w2, b2.
    pub fn parameter_blocks_mut(&mut self) -> [&mut [f32]; 5] {
        [
            &mut self.embedding,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            std::slice::from_mut(&mut self.b2),
        ]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(CHECKPOINT_MAGIC);
        w.u32(self.dim as u32);
        w.u32(self.buckets as u32);
        w.u32(self.hidden as u32);
        w.u64(self.seed);
        w.u64(self.checksum());
        w.f32s(&self.embedding);
        w.f32s(&self.w1);
        w.f32s(&self.b1);
        w.f32s(&self.w2);
        w.f32(self.b2);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
        let dim = r.u32()? as usize;
        let buckets = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        if dim == 0 || buckets == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("zero-sized reranker".into()));
        }
        let seed = r.u64()?;
        let stored = r.u64()?;
        let n_features = 3 * dim + LEXICAL_FEATURES;
        let model = RerankModel {
            dim,
            buckets,
            hidden,
            seed,
            embedding: r.f32s(buckets * dim)?,
            w1: r.f32s(hidden * n_features)?,
            b1: r.f32s(hidden)?,
            w2: r.f32s(hidden)?,
            b2: r.f32()?,
        };
        r.finish()?;
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

/// Stable descending sort of the scored prefix; `scored[i] = (original index, score)`.
pub(crate) fn apply_rerank(candidates: &RankedList, scored: &[(usize, f64)]) -> RankedList {
    let mut order = scored.to_vec();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    let mut out = RankedList::new(candidates.query_id.clone());
    for (i, s) in order {
        let mut e = candidates.entries[i].clone();
        e.score = s;
        out.entries.push(e);
    }
    out.entries.extend_from_slice(&candidates.entries[scored.len()..]);
    out.renumber();
    out
}

/// Retriever soft labels over a sampled candidate subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelSet {
    pub query_id: String,
    pub passage_ids: Vec<String>,
    pub teacher_probs: Vec<f64>,
}

impl SoftLabelSet {
    pub fn validate(&self) -> Result<()> {
        if self.passage_ids.len() < 2 || self.passage_ids.len() != self.teacher_probs.len() {
            return Err(Error::InvalidArgument(format!(
                "soft label set for {:?} needs ≥ 2 passages with one probability each",
                self.query_id
            )));
        }
        let total: f64 = self.teacher_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || self.teacher_probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "teacher distribution for {:?} sums to {total}",
                self.query_id
            )));
        }
        if let Some(i) = self.teacher_probs.iter().position(|&p| p == 0.0) {
            return Err(Error::ZeroTeacherProb(self.passage_ids[i].clone()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_scores_zero() {
        let m = RerankModel::zeros(8, 64, 4).unwrap();
        assert_eq!(m.rerank_score("dense retrieval", "a passage about retrieval"), 0.0);
    }

    #[test]
    fn identical_texts_have_unit_jaccard() {
        let pair = PairInput::from_texts("the cat sat", "the cat sat", 64);
        assert_eq!(pair.jaccard, 1.0);
        assert_eq!(pair.overlap, 1.0);
        let empty = PairInput::from_texts("", "", 64);
        assert_eq!((empty.jaccard, empty.overlap), (0.0, 0.0));
    }

    #[test]
    fn feature_layout() {
        let m = RerankModel::new(3, 16, 2, 0.5, 1).unwrap();
        let pair = PairInput::from_texts("a b", "b c d", 16);
        let f = m.features(&pair);
        assert_eq!(f.len(), 11);
        assert_eq!(f[9], 0.25);
        assert_eq!(f[10], 0.5);
        for i in 0..3 {
            assert_eq!(f[6 + i], f[i] * f[3 + i]);
        }
    }

    #[test]
    fn rerank_is_stable_under_ties() {
        let corpus = Corpus::new(
            (0..4)
                .map(|i| crate::corpus::Passage {
                    id: format!("d{i}"),
                    title: String::new(),
                    text: format!("text {i}"),
                })
                .collect(),
        )
        .unwrap();
        let list = RankedList::from_pairs("q", [("d2", 4.0), ("d0", 3.0), ("d3", 2.0), ("d1", 1.0)]);
        let zero = RerankModel::zeros(4, 32, 3).unwrap();
        let out = zero.rerank("query", &list, &corpus, 4).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), ["d2", "d0", "d3", "d1"]);
        let m = RerankModel::new(4, 32, 3, 0.5, 7).unwrap();
        let out = m.rerank("query text", &list, &corpus, 1).unwrap();
        assert_eq!(out.ids().collect::<Vec<_>>(), list.ids().collect::<Vec<_>>());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = RerankModel::new(4, 32, 3, 0.1, 7).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(RerankModel::from_bytes(&bytes).unwrap(), m);
        let mut bad = bytes.clone();
        bad[4] = b'0';
        assert!(matches!(RerankModel::from_bytes(&bad), Err(Error::BadMagic { .. })));
        assert!(RerankModel::from_bytes(&bytes[..30]).is_err());
    }

    #[test]
    fn soft_label_validation() {
        let ok = SoftLabelSet {
            query_id: "q".into(),
            passage_ids: vec!["a".into(), "b".into()],
            teacher_probs: vec![0.7, 0.3],
        };
        assert!(ok.validate().is_ok());
        let zero = SoftLabelSet {
            teacher_probs: vec![1.0, 0.0],
            ..ok.clone()
        };
        assert!(matches!(zero.validate(), Err(Error::ZeroTeacherProb(id)) if id == "b"));
        let short = SoftLabelSet {
            passage_ids: vec!["a".into()],
            teacher_probs: vec![1.0],
            ..ok
        };
        assert!(short.validate().is_err());
    }
}
