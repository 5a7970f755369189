use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ce_loss, kl_loss, KlDirection};
use super::{PairInput, RerankGradient, RerankModel, SoftLabelSet, DEFAULT_HIDDEN};
use crate::corpus::{Corpus, QuerySet};
use crate::dense::{DenseModel, Side};
use crate::error::{Error, Result};
use crate::eval::RankedList;
use crate::math::{dot, softmax};
use crate::optim::{Optimizer, OptimizerKind};
use crate::text::{corrupt, derive_seed, tokenize, NoiseConfig, TokenSeq};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RerankLoss {
    /// Distillation from retriever soft labels.
    #[default]
    Kl,
    /// Hard labels: sampled positive against the sampled negatives.
    Ce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankTrainConfig {
    pub epochs: usize,
    /// Queries per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub embedding_std: f64,
    /// Candidates per query drawn from the pool beside the one positive.
    pub negatives: usize,
    /// Leading ranks of each list treated as positives; the rest form the pool.
    pub positives: usize,
    pub teacher_temperature: f64,
    pub kl_direction: KlDirection,
    pub loss: RerankLoss,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
}

impl Default for RerankTrainConfig {
    fn default() -> Self {
        RerankTrainConfig {
            epochs: 3,
            batch_size: 16,
            learning_rate: 1e-3,
            hidden: DEFAULT_HIDDEN,
            embedding_std: 0.1,
            negatives: 7,
            positives: 10,
            teacher_temperature: 1.0,
            kl_direction: KlDirection::default(),
            loss: RerankLoss::default(),
            noise: NoiseConfig::default(),
            seed: 0,
            optimizer: OptimizerKind::default(),
            weight_decay: 0.0,
        }
    }
}

impl RerankTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.negatives == 0 || self.positives == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, hidden, negatives and positives must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) || !(self.teacher_temperature > 0.0) || !(self.embedding_std > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("reranker rates and scales out of range".into()));
        }
        self.noise.validate()
    }

    /// The seeded fresh initialization every reranker starts from.
    pub fn fresh_model(&self, dim: usize, buckets: usize, init_seed: u64) -> Result<RerankModel> {
        RerankModel::new(dim, buckets, self.hidden, self.embedding_std, init_seed)
    }
}

#[derive(Debug, Clone)]
pub struct RerankTrainOutcome {
    pub model: RerankModel,
    pub init_checksum: u64,
    /// Queries without a positive or without pool candidates.
    pub skipped: usize,
    pub steps: u64,
    pub final_loss: f64,
}

struct Prepared {
    key: String,
    query: TokenSeq,
    query_vec: Vec<f64>,
    positives: Vec<usize>,
    pool: Vec<usize>,
}

/// Trains `init` to match the retriever's soft labels on sampled subsets of
/// each query's candidate list: one of the top `cfg.positives` entries plus
/// `cfg.negatives` drawn uniformly from the remainder.
pub fn train(
    init: &RerankModel,
    retriever: &DenseModel,
    lists: &[RankedList],
    queries: &QuerySet,
    corpus: &Corpus,
    cfg: &RerankTrainConfig,
) -> Result<RerankTrainOutcome> {
    cfg.validate()?;
    let texts: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let mut skipped = 0;
    let mut prepared = Vec::new();
    for list in lists {
        let ordinals: Option<Vec<usize>> = list.ids().map(|id| corpus.ordinal(id)).collect();
        match (texts.get(list.query_id.as_str()), ordinals) {
            (Some(text), Some(ords)) if ords.len() > cfg.positives.min(ords.len()) && !ords.is_empty() => {
                let split = cfg.positives.min(ords.len());
                let query = tokenize(text);
                let query_vec = retriever.encode_buckets(Side::Query, &query.hashed(retriever.buckets()));
                prepared.push(Prepared {
                    key: list.query_id.clone(),
                    query,
                    query_vec,
                    positives: ords[..split].to_vec(),
                    pool: ords[split..].to_vec(),
                })
            }
            _ => skipped += 1,
        }
    }

    let passages: Vec<TokenSeq> = (0..corpus.len()).map(|i| tokenize(&corpus.indexing_text(i))).collect();
    let mut passage_vecs: HashMap<usize, Vec<f64>> = HashMap::new();
    let mut teacher_vec = |ord: usize| -> Vec<f64> {
        passage_vecs
            .entry(ord)
            .or_insert_with(|| retriever.encode_buckets(Side::Passage, &passages[ord].hashed(retriever.buckets())))
            .clone()
    };

    let mut model = init.clone();
    let init_checksum = init.checksum();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut final_loss = 0.0;
    let buckets = model.buckets();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grad = RerankGradient::zeros(&model);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let item = &prepared[i];
                let pos = item.positives[rng.random_range(0..item.positives.len())];
                let take = cfg.negatives.min(item.pool.len());
                let mut subset = vec![pos];
                subset.extend(index::sample(&mut rng, item.pool.len(), take).into_iter().map(|j| item.pool[j]));

                let noise = |part: &str| cfg.noise.with_seed(derive_seed(cfg.seed, &format!("{}/{epoch}/{part}", item.key)));
                let query = corrupt(&item.query, &noise("q"));
                let pairs: Vec<PairInput> = subset
                    .iter()
                    .enumerate()
                    .map(|(j, &ord)| {
                        let p = corrupt(&passages[ord], &noise(&format!("p{j}")));
                        PairInput::from_tokens(&query, &p, buckets)
                    })
                    .collect();

                let (loss, g) = match cfg.loss {
                    RerankLoss::Kl => {
                        let scores: Vec<f64> = subset.iter().map(|&ord| dot(&item.query_vec, &teacher_vec(ord))).collect();
                        let labels = SoftLabelSet {
                            query_id: item.key.clone(),
                            passage_ids: subset.iter().map(|&o| corpus.passages()[o].id.clone()).collect(),
                            teacher_probs: clamp_away_from_zero(softmax(&scores, cfg.teacher_temperature)),
                        };
                        kl_loss(&model, &pairs, &labels, cfg.kl_direction)?
                    }
                    RerankLoss::Ce => ce_loss(&model, &pairs[0], &pairs[1..])?,
                };
                batch_loss += loss;
                merge(&mut grad, g);
            }
            grad.scale(1.0 / chunk.len() as f64);
            model.apply(&mut opt, &grad);
            epoch_loss += batch_loss / chunk.len() as f64;
            batches += 1;
        }
        if batches > 0 {
            final_loss = epoch_loss / batches as f64;
        }
    }
    Ok(RerankTrainOutcome {
        model,
        init_checksum,
        skipped,
        steps: opt.steps(),
        final_loss,
    })
}

/// Underflowed teacher probabilities are lifted to the smallest positive
/// normal and the distribution renormalized.
fn clamp_away_from_zero(mut probs: Vec<f64>) -> Vec<f64> {
    if probs.iter().any(|&p| p == 0.0) {
        probs.iter_mut().for_each(|p| *p = p.max(f64::MIN_POSITIVE));
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
    }
    probs
}

fn merge(into: &mut RerankGradient, from: RerankGradient) {
    for (b, row) in from.embedding_rows {
        match into.embedding_rows.get_mut(&b) {
            Some(acc) => acc.iter_mut().zip(row).for_each(|(a, x)| *a += x),
            None => {
                into.embedding_rows.insert(b, row);
            }
        }
    }
    for (a, x) in into.w1.iter_mut().zip(from.w1) {
        *a += x;
    }
    for (a, x) in into.b1.iter_mut().zip(from.b1) {
        *a += x;
    }
    for (a, x) in into.w2.iter_mut().zip(from.w2) {
        *a += x;
    }
    into.b2 += from.b2;
}
