//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use altboot::bm25::Bm25Params;
use altboot::corpus::{Corpus, Passage, Qrels};
use altboot::dense::{DenseModel, Side};
use altboot::eval::{RankedList, Run};
use altboot::rerank::{PairInput, RerankGradient, RerankModel};
use altboot::text::tokenize;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random passages over a small vocabulary so that queries share terms with
/// many passages. Word frequency falls off roughly as 1/rank.
pub fn random_corpus(n: usize, vocab: usize, seed: u64) -> Corpus {
    let mut r = rng(seed);
    let passages = (0..n)
        .map(|i| {
            let len = r.random_range(5..40);
            let words: Vec<String> = (0..len).map(|_| word(&mut r, vocab)).collect();
            Passage {
                id: format!("d{i}"),
                title: if i % 3 == 0 { word(&mut r, vocab) } else { String::new() },
                text: words.join(" "),
            }
        })
        .collect();
    Corpus::new(passages).unwrap()
}

pub fn word(r: &mut ChaCha8Rng, vocab: usize) -> String {
    let u: f64 = r.random();
    let j = ((vocab as f64).powf(u) - 1.0) as usize;
    format!("w{}", j.min(vocab - 1))
}

pub fn random_query(r: &mut ChaCha8Rng, vocab: usize) -> String {
    let len = r.random_range(1..6);
    (0..len).map(|_| word(r, vocab)).collect::<Vec<_>>().join(" ")
}

/// Scores every passage from scratch: term counts per document, document
/// frequencies by scanning the corpus, then the BM25 sum per distinct query term.
pub fn brute_bm25_scores(corpus: &Corpus, query: &str, params: Bm25Params) -> Vec<f64> {
    let docs: Vec<Vec<String>> = (0..corpus.len())
        .map(|i| tokenize(&corpus.indexing_text(i)).into_inner())
        .collect();
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let mut terms: Vec<String> = Vec::new();
    for t in tokenize(query).into_inner() {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let df: HashMap<&str, usize> = terms
        .iter()
        .map(|t| (t.as_str(), docs.iter().filter(|d| d.contains(t)).count()))
        .collect();
    docs.iter()
        .map(|d| {
            let mut s = 0.0;
            for t in &terms {
                let tf = d.iter().filter(|w| *w == t).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = df[t.as_str()] as f64;
                let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                let norm = params.k1 * (1.0 - params.b + params.b * d.len() as f64 / avgdl);
                s += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
            s
        })
        .collect()
}

/// Sort by score descending, ties to the lower ordinal; keep positive scores only
/// when `positive_only`.
pub fn brute_rank(scores: &[f64], k: usize, positive_only: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| !positive_only || scores[i] > 0.0).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Dense scores by encoding each passage separately.
pub fn brute_dense_scores(model: &DenseModel, corpus: &Corpus, query: &str) -> Vec<f64> {
    let q = model.encode(Side::Query, query);
    (0..corpus.len())
        .map(|i| {
            let p = model.encode(Side::Passage, &corpus.indexing_text(i));
            q.iter().zip(&p).map(|(a, b)| a * b).sum()
        })
        .collect()
}

/// Reference nDCG@k written from the textbook definition.
pub fn ref_ndcg(ranked: &[&str], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg_of = |grades: &[u32]| -> f64 {
        let mut total = 0.0;
        for (i, &g) in grades.iter().take(k).enumerate() {
            total += (2f64.powi(g as i32) - 1.0) / (2.0 + i as f64).log2();
        }
        total
    };
    let got: Vec<u32> = ranked.iter().map(|d| *judged.get(*d).unwrap_or(&0)).collect();
    let mut best: Vec<u32> = judged.values().copied().collect();
    best.sort();
    best.reverse();
    let ideal = dcg_of(&best);
    if ideal == 0.0 {
        0.0
    } else {
        dcg_of(&got) / ideal
    }
}

pub fn ref_recall(ranked: &[&str], judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let relevant: Vec<&String> = judged.iter().filter(|(_, g)| **g > 0).map(|(d, _)| d).collect();
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|d| relevant.iter().any(|r| r.as_str() == **d)).count();
    hits as f64 / relevant.len() as f64
}

/// Positions (1-based ranks) an extraction rule should select from a list of
/// length `n`: positives from the top, negatives from the bottom of the
/// window without overlapping the positives.
pub fn rule_oracle(n: usize, k: usize, k_pos: usize, k_neg: usize) -> (Vec<usize>, Vec<usize>) {
    let w = n.min(k);
    let pos: Vec<usize> = (1..=w).filter(|&r| r <= k_pos).collect();
    let neg: Vec<usize> = (1..=w).filter(|&r| r + k_neg > w && r > k_pos).collect();
    (pos, neg)
}

pub const FD_STEP: f64 = 1e-4;

/// Central difference of `loss` in the f32 parameter `param` selects. The
/// divisor is the step actually realized after rounding to f32.
pub fn central_difference<M>(model: &mut M, param: impl Fn(&mut M) -> &mut f32, loss: impl Fn(&M) -> f64) -> f64 {
    let x = *param(model);
    *param(model) = (f64::from(x) + FD_STEP) as f32;
    let hi = f64::from(*param(model));
    let up = loss(model);
    *param(model) = (f64::from(x) - FD_STEP) as f32;
    let lo = f64::from(*param(model));
    let down = loss(model);
    *param(model) = x;
    (up - down) / (hi - lo)
}

/// ‖a − n‖ / max(‖a‖, ‖n‖).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

pub fn random_buckets(r: &mut ChaCha8Rng, buckets: usize, max_len: usize) -> Vec<u32> {
    let len = r.random_range(1..=max_len);
    (0..len).map(|_| r.random_range(0..buckets as u32)).collect()
}

pub fn random_pair(r: &mut ChaCha8Rng, buckets: usize) -> PairInput {
    PairInput {
        query: random_buckets(r, buckets, 4),
        passage: random_buckets(r, buckets, 8),
        jaccard: r.random(),
        overlap: r.random(),
    }
}

/// Finite-difference gradient of a reranker loss over every dense parameter
/// and the embedding rows the analytic gradient touches, flattened in the
/// same order as `flatten_rerank`.
pub fn numeric_rerank_gradient(
    model: &RerankModel,
    analytic: &RerankGradient,
    loss: impl Fn(&RerankModel) -> f64,
) -> Vec<f64> {
    let mut m = model.clone();
    let dim = model.dim();
    let mut out = Vec::new();
    for &b in analytic.embedding_rows.keys() {
        for i in 0..dim {
            let idx = b as usize * dim + i;
            out.push(central_difference(&mut m, |m| &mut m.parameter_blocks_mut()[0][idx], &loss));
        }
    }
    for block in 1..5 {
        for idx in 0..m.parameter_blocks_mut()[block].len() {
            out.push(central_difference(&mut m, |m| &mut m.parameter_blocks_mut()[block][idx], &loss));
        }
    }
    out
}

pub fn flatten_rerank(g: &RerankGradient) -> Vec<f64> {
    let mut out: Vec<f64> = g.embedding_rows.values().flatten().copied().collect();
    out.extend(&g.w1);
    out.extend(&g.b1);
    out.extend(&g.w2);
    out.push(g.b2);
    out
}

/// Worst relative error of the in-batch contrastive gradient over random
/// instances.
pub fn contrastive_gradient_error(instances: usize, seed: u64) -> f64 {
    use altboot::dense::{contrastive_loss, ContrastiveTriple};
    let (dim, buckets) = (4, 24);
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for inst in 0..instances {
        let mut model = DenseModel::with_std(dim, buckets, seed ^ inst as u64, 0.5).unwrap();
        let batch: Vec<ContrastiveTriple> = (0..r.random_range(1..=4))
            .map(|_| ContrastiveTriple {
                query: random_buckets(&mut r, buckets, 4),
                positive: random_buckets(&mut r, buckets, 6),
                negative: random_buckets(&mut r, buckets, 6),
            })
            .collect();
        let tau = r.random_range(0.2..2.0);
        let (_, grad) = contrastive_loss(&model, &batch, tau);
        let loss = |m: &DenseModel| contrastive_loss(m, &batch, tau).0;
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for side in [Side::Query, Side::Passage] {
            for (&b, row) in grad.rows(side) {
                for (i, &g) in row.iter().enumerate() {
                    analytic.push(g);
                    numeric.push(central_difference(&mut model, |m| &mut m.row_mut(side, b)[i], loss));
                }
            }
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

fn small_reranker(r: &mut ChaCha8Rng, seed: u64) -> RerankModel {
    RerankModel::new(3, 16, 4, 0.5, seed ^ r.random::<u64>()).unwrap()
}

/// Worst relative error of the distillation gradient in the given direction.
pub fn kl_gradient_error(instances: usize, seed: u64, direction: altboot::rerank::KlDirection) -> f64 {
    use altboot::rerank::{kl_loss, SoftLabelSet};
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let model = small_reranker(&mut r, seed);
        let n = r.random_range(2..=5);
        let pairs: Vec<PairInput> = (0..n).map(|_| random_pair(&mut r, model.buckets())).collect();
        let raw: Vec<f64> = (0..n).map(|_| r.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mut probs: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let head: f64 = probs[..n - 1].iter().sum();
        probs[n - 1] = 1.0 - head;
        let labels = SoftLabelSet {
            query_id: "q".into(),
            passage_ids: (0..n).map(|i| format!("p{i}")).collect(),
            teacher_probs: probs,
        };
        let (_, grad) = kl_loss(&model, &pairs, &labels, direction).unwrap();
        let numeric = numeric_rerank_gradient(&model, &grad, |m| kl_loss(m, &pairs, &labels, direction).unwrap().0);
        worst = worst.max(relative_error(&flatten_rerank(&grad), &numeric));
    }
    worst
}

/// Worst relative error of the hard-label cross-entropy gradient.
pub fn ce_gradient_error(instances: usize, seed: u64) -> f64 {
    use altboot::rerank::ce_loss;
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let model = small_reranker(&mut r, seed);
        let positive = random_pair(&mut r, model.buckets());
        let negatives: Vec<PairInput> = (0..r.random_range(1..=4)).map(|_| random_pair(&mut r, model.buckets())).collect();
        let (_, grad) = ce_loss(&model, &positive, &negatives).unwrap();
        let numeric = numeric_rerank_gradient(&model, &grad, |m| ce_loss(m, &positive, &negatives).unwrap().0);
        worst = worst.max(relative_error(&flatten_rerank(&grad), &numeric));
    }
    worst
}

/// Random run and qrels, including unjudged and unretrieved queries.
pub fn random_instance(r: &mut ChaCha8Rng) -> (Run, Qrels) {
    let mut run = Run::new();
    let mut qrels = Qrels::new();
    for q in 0..r.random_range(1..6) {
        let qid = format!("q{q}");
        let pool: usize = r.random_range(1..40);
        let mut ids: Vec<String> = (0..pool).map(|i| format!("d{i}")).collect();
        ids.shuffle(r);
        let depth = r.random_range(0..=pool);
        let list = RankedList::from_pairs(qid.clone(), ids[..depth].iter().enumerate().map(|(i, d)| (d.clone(), -(i as f64))));
        run.insert(qid.clone(), list);
        let mut judged = BTreeMap::new();
        for d in &ids {
            if r.random_bool(0.3) {
                judged.insert(d.clone(), r.random_range(0..4u32));
            }
        }
        if !judged.is_empty() || r.random_bool(0.5) {
            qrels.insert(qid, judged);
        }
    }
    (run, qrels)
}
