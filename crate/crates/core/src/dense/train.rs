use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{contrastive_loss, ContrastiveTriple};
use super::{DenseModel, Side};
use crate::corpus::{Corpus, QuerySet};
use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind};
use crate::text::{corrupt, derive_seed, tokenize, NoiseConfig, TokenSeq};

/// A query with the passage ids extracted as positives and hard negatives.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub query_id: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

impl TrainingExample {
    pub fn is_usable(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub temperature: f64,
    pub noise: NoiseConfig,
    pub noise_queries: bool,
    pub noise_passages: bool,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Decoupled weight decay on updated rows.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            temperature: 1.0,
            noise: NoiseConfig::default(),
            noise_queries: true,
            noise_passages: true,
            seed: 0,
            optimizer: OptimizerKind::default(),
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.temperature > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(
                "learning_rate must be non-negative and temperature positive".into(),
            ));
        }
        self.noise.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DenseModel,
    /// Examples dropped for lacking a positive, a negative, or a known id.
    pub skipped: usize,
    pub steps: u64,
    /// Mean batch loss over the final epoch.
    pub final_loss: f64,
}

/// A training query resolved to tokens and passage ordinals.
#[derive(Debug, Clone)]
pub(crate) struct Item {
    pub key: String,
    pub query: TokenSeq,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

pub(crate) fn passage_tokens(corpus: &Corpus) -> Vec<TokenSeq> {
    (0..corpus.len()).map(|i| tokenize(&corpus.indexing_text(i))).collect()
}

/// Fine-tunes a copy of `model` on the extracted examples with in-batch
/// negatives. Each epoch draws one positive and one hard negative per
/// example.
pub fn train(
    model: &DenseModel,
    examples: &[TrainingExample],
    queries: &QuerySet,
    corpus: &Corpus,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let texts: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let mut skipped = 0;
    let mut items = Vec::with_capacity(examples.len());
    for ex in examples {
        let resolve = |ids: &[String]| ids.iter().map(|id| corpus.ordinal(id)).collect::<Option<Vec<_>>>();
        match (texts.get(ex.query_id.as_str()), resolve(&ex.positives), resolve(&ex.negatives)) {
            (Some(text), Some(positives), Some(negatives)) if !positives.is_empty() && !negatives.is_empty() => {
                items.push(Item {
                    key: ex.query_id.clone(),
                    query: tokenize(text),
                    positives,
                    negatives,
                })
            }
            _ => skipped += 1,
        }
    }
    let passages = passage_tokens(corpus);
    let (model, steps, final_loss) = fit(model, &items, &passages, cfg, |item, rng| {
        item.negatives[rng.random_range(0..item.negatives.len())]
    });
    Ok(TrainOutcome {
        model,
        skipped,
        steps,
        final_loss,
    })
}

fn maybe_corrupt(tokens: &TokenSeq, enabled: bool, noise: &NoiseConfig, seed: u64) -> TokenSeq {
    if enabled {
        corrupt(tokens, &noise.with_seed(seed))
    } else {
        tokens.clone()
    }
}

/// Minibatch contrastive training loop shared by every retriever trainer.
pub(crate) fn fit<F>(
    model: &DenseModel,
    items: &[Item],
    passages: &[TokenSeq],
    cfg: &TrainConfig,
    mut pick_negative: F,
) -> (DenseModel, u64, f64)
where
    F: FnMut(&Item, &mut ChaCha8Rng) -> usize,
{
    let mut model = model.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate).with_weight_decay(cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let buckets = model.buckets();
    let mut final_loss = 0.0;
    let mut order: Vec<usize> = (0..items.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ContrastiveTriple> = chunk
                .iter()
                .map(|&i| {
                    let item = &items[i];
                    let pos = item.positives[rng.random_range(0..item.positives.len())];
                    let neg = pick_negative(item, &mut rng);
                    let seed = |part: &str| derive_seed(cfg.seed, &format!("{}/{epoch}/{part}", item.key));
                    ContrastiveTriple {
                        query: maybe_corrupt(&item.query, cfg.noise_queries, &cfg.noise, seed("q")).hashed(buckets),
                        positive: maybe_corrupt(&passages[pos], cfg.noise_passages, &cfg.noise, seed("p"))
                            .hashed(buckets),
                        negative: maybe_corrupt(&passages[neg], cfg.noise_passages, &cfg.noise, seed("n"))
                            .hashed(buckets),
                    }
                })
                .collect();
            let (loss, grad) = contrastive_loss(&model, &batch, cfg.temperature);
            opt.begin_step();
            for (&b, g) in &grad.query_rows {
                opt.update((0, b), model.row_mut(Side::Query, b), g);
            }
            for (&b, g) in &grad.passage_rows {
                opt.update((1, b), model.row_mut(Side::Passage, b), g);
            }
            epoch_loss += loss;
            batches += 1;
        }
        if batches > 0 {
            final_loss = epoch_loss / batches as f64;
        }
    }
    (model, opt.steps(), final_loss)
}
