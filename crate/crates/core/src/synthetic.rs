//! Seeded latent-topic worlds for end-to-end experiments.
//!
//! Every passage belongs to one subtopic of one topic. Its sentences mix
//! subtopic words, topic words and background words shared by everyone, all
//! Zipf weighted. Some topic words leak in from a sibling topic so lexical
//! overlap alone is an unreliable relevance signal. Evaluation queries are
//! fresh sentences drawn from one subtopic; passages of that subtopic have
//! grade 2 and the rest of its topic grade 1.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bootstrap::Validation;
use crate::corpus::{crop_queries, CropConfig, Corpus, Passage, Qrels, Query, QuerySet};
use crate::error::{Error, Result};
use crate::text::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub passages: usize,
    pub topics: usize,
    pub subtopics: usize,
    pub topic_vocab: usize,
    pub subtopic_vocab: usize,
    pub background_vocab: usize,
    pub zipf_exponent: f64,
    /// Share of sentence tokens drawn from topic vocabularies.
    pub topic_share: f64,
    pub subtopic_share: f64,
    /// Chance a topic token comes from the sibling topic instead.
    pub leak: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    pub train_queries: usize,
    pub eval_queries: usize,
    /// Grade of same-topic passages outside the query's subtopic.
    pub topic_grade: u32,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            passages: 3000,
            topics: 30,
            subtopics: 10,
            topic_vocab: 40,
            subtopic_vocab: 12,
            background_vocab: 300,
            zipf_exponent: 1.0,
            topic_share: 0.25,
            subtopic_share: 0.25,
            leak: 0.3,
            min_sentences: 4,
            max_sentences: 6,
            min_sentence_len: 6,
            max_sentence_len: 10,
            train_queries: 500,
            eval_queries: 200,
            topic_grade: 1,
            seed: 17,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.passages > 0
            && self.topics >= 2
            && self.subtopics >= 1
            && self.topic_vocab > 0
            && self.subtopic_vocab > 0
            && self.background_vocab > 0
            && self.topic_share >= 0.0
            && self.subtopic_share >= 0.0
            && self.topic_share + self.subtopic_share <= 1.0
            && (0.0..=1.0).contains(&self.leak)
            && self.min_sentences >= 1
            && self.min_sentences <= self.max_sentences
            && self.min_sentence_len >= 3
            && self.min_sentence_len <= self.max_sentence_len
            && self.train_queries > 0
            && self.eval_queries > 0
            && self.zipf_exponent >= 0.0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid world config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub corpus: Corpus,
    /// Cropped-sentence training queries.
    pub train_queries: QuerySet,
    pub validation: Validation,
    /// Latent (topic, subtopic) of every passage, by ordinal.
    pub labels: Vec<(usize, usize)>,
}

fn zipf(n: usize, s: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((1..=n).map(|r| 1.0 / (r as f64).powf(s))).expect("non-empty positive weights")
}

fn topic_word(topic: usize, j: usize) -> String {
    format!("t{topic}w{j}")
}

fn subtopic_word(topic: usize, sub: usize, j: usize) -> String {
    format!("t{topic}s{sub}w{j}")
}

pub fn generate(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let topic_dist = zipf(cfg.topic_vocab, cfg.zipf_exponent);
    let sub_dist = zipf(cfg.subtopic_vocab, cfg.zipf_exponent);
    let background = zipf(cfg.background_vocab, cfg.zipf_exponent);
    // Topics pair up: 0-1, 2-3, ...; an odd last topic pairs with 0.
    let sibling = |t: usize| if t % 2 == 1 { t - 1 } else { (t + 1) % cfg.topics };
    let clusters = cfg.topics * cfg.subtopics;

    let sentence = |rng: &mut ChaCha8Rng, t: usize, st: usize| {
        let len = rng.random_range(cfg.min_sentence_len..=cfg.max_sentence_len);
        let words: Vec<String> = (0..len)
            .map(|_| {
                let u = rng.random::<f64>();
                if u < cfg.subtopic_share {
                    subtopic_word(t, st, sub_dist.sample(rng))
                } else if u < cfg.subtopic_share + cfg.topic_share {
                    let source = if rng.random::<f64>() < cfg.leak { sibling(t) } else { t };
                    topic_word(source, topic_dist.sample(rng))
                } else {
                    format!("g{}", background.sample(rng))
                }
            })
            .collect();
        words.join(" ") + "."
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "corpus"));
    let mut passages = Vec::with_capacity(cfg.passages);
    let mut labels = Vec::with_capacity(cfg.passages);
    for i in 0..cfg.passages {
        let c = i % clusters;
        let (t, st) = (c / cfg.subtopics, c % cfg.subtopics);
        let n_sent = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
        let sentences: Vec<String> = (0..n_sent).map(|_| sentence(&mut rng, t, st)).collect();
        passages.push(Passage {
            id: format!("p{i}"),
            title: String::new(),
            text: sentences.join(" "),
        });
        labels.push((t, st));
    }
    let corpus = Corpus::new(passages)?;

    let train_queries = crop_queries(
        &corpus,
        CropConfig {
            cap: cfg.train_queries,
            seed: derive_seed(cfg.seed, "crop"),
            ..CropConfig::default()
        },
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "eval"));
    let mut queries = Vec::with_capacity(cfg.eval_queries);
    let mut qrels: Qrels = BTreeMap::new();
    for q in 0..cfg.eval_queries {
        let t = rng.random_range(0..cfg.topics);
        let st = rng.random_range(0..cfg.subtopics);
        let id = format!("v{q}");
        queries.push(Query {
            id: id.clone(),
            text: sentence(&mut rng, t, st),
            source_passage_id: None,
        });
        let judged = labels
            .iter()
            .enumerate()
            .filter(|&(_, &(pt, ps))| pt == t && (ps == st || cfg.topic_grade > 0))
            .map(|(ord, &(_, ps))| (corpus.passages()[ord].id.clone(), if ps == st { 2 } else { cfg.topic_grade }))
            .collect();
        qrels.insert(id, judged);
    }
    Ok(World {
        corpus,
        train_queries,
        validation: Validation {
            queries: QuerySet::new(queries)?,
            qrels,
        },
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            passages: 60,
            topics: 6,
            subtopics: 2,
            train_queries: 40,
            eval_queries: 10,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn shapes_and_judgments() {
        let w = generate(&small()).unwrap();
        assert_eq!(w.corpus.len(), 60);
        assert_eq!(w.train_queries.len(), 40);
        assert_eq!(w.validation.queries.len(), 10);
        for judged in w.validation.qrels.values() {
            assert_eq!(judged.len(), 10);
            assert_eq!(judged.values().filter(|&&g| g == 2).count(), 5);
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus.checksum(), b.corpus.checksum());
        assert_eq!(a.validation.qrels, b.validation.qrels);
    }
}
