//! Two-stage supervised fine-tuning: gold positive with a random negative,
//! then a retrain from the same start point where a mined hard negative
//! replaces the random one with a fixed probability.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{search_tokens, PassageMatrix};
use super::train::{fit, passage_tokens, Item, TrainConfig};
use super::DenseModel;
use crate::corpus::{Corpus, Qrels, QuerySet};
use crate::error::{Error, Result};
use crate::text::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub train: TrainConfig,
    pub hard_negative_prob: f64,
    /// Hard negatives are mined from this many top non-positive retrievals.
    pub mine_depth: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            train: TrainConfig::default(),
            hard_negative_prob: 0.1,
            mine_depth: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub stage1: DenseModel,
    pub stage2: DenseModel,
    /// query id → mined hard-negative passage ids, best first.
    pub mined: BTreeMap<String, Vec<String>>,
    pub skipped: usize,
}

fn random_negative(item: &Item, corpus_len: usize, rng: &mut ChaCha8Rng) -> usize {
    loop {
        let cand = rng.random_range(0..corpus_len);
        if !item.positives.contains(&cand) {
            return cand;
        }
    }
}

pub fn finetune_supervised(
    model: &DenseModel,
    qrels: &Qrels,
    queries: &QuerySet,
    corpus: &Corpus,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome> {
    if qrels.is_empty() {
        return Err(Error::InvalidArgument("qrels are empty".into()));
    }
    if !(0.0..=1.0).contains(&cfg.hard_negative_prob) || cfg.mine_depth == 0 {
        return Err(Error::InvalidArgument(
            "hard_negative_prob must lie in [0, 1] and mine_depth be positive".into(),
        ));
    }
    cfg.train.validate()?;
    let texts: HashMap<&str, &str> = queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect();
    let mut skipped = 0;
    let mut items = Vec::new();
    for (qid, judged) in qrels {
        let positives: Vec<usize> = judged
            .iter()
            .filter(|(_, &g)| g > 0)
            .filter_map(|(pid, _)| corpus.ordinal(pid))
            .collect();
        match texts.get(qid.as_str()) {
            Some(text) if !positives.is_empty() && positives.len() < corpus.len() => items.push(Item {
                key: qid.clone(),
                query: tokenize(text),
                positives,
                negatives: Vec::new(),
            }),
            _ => skipped += 1,
        }
    }
    if items.is_empty() {
        return Err(Error::NoTrainingQueries);
    }
    let passages = passage_tokens(corpus);
    let n = corpus.len();

    let (stage1, _, _) = fit(model, &items, &passages, &cfg.train, |item, rng| random_negative(item, n, rng));

    let matrix = PassageMatrix::build(&stage1, corpus);
    let mined_ordinals: Vec<Vec<usize>> = items
        .par_iter()
        .map(|item| {
            let gold: HashSet<usize> = item.positives.iter().copied().collect();
            let want = (cfg.mine_depth + gold.len()).min(n);
            let hits = search_tokens(&stage1, &matrix, &item.query.hashed(stage1.buckets()), want)
                .expect("k is positive and dims match");
            hits.into_iter()
                .map(|(ord, _)| ord)
                .filter(|ord| !gold.contains(ord))
                .take(cfg.mine_depth)
                .collect()
        })
        .collect();
    for (item, mined) in items.iter_mut().zip(&mined_ordinals) {
        item.negatives = mined.clone();
    }

    let p = cfg.hard_negative_prob;
    let (stage2, _, _) = fit(model, &items, &passages, &cfg.train, |item, rng| {
        if p > 0.0 && !item.negatives.is_empty() && rng.random::<f64>() < p {
            item.negatives[rng.random_range(0..item.negatives.len())]
        } else {
            random_negative(item, n, rng)
        }
    });

    let mined = items
        .iter()
        .map(|item| {
            let ids = item.negatives.iter().map(|&o| corpus.passages()[o].id.clone()).collect();
            (item.key.clone(), ids)
        })
        .collect();
    Ok(FinetuneOutcome {
        stage1,
        stage2,
        mined,
        skipped,
    })
}
