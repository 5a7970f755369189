mod common;

use std::collections::BTreeMap;

use altboot::bm25::{Bm25Index, Bm25Params};
use altboot::bootstrap::{extract_labels, ExtractionRule};
use altboot::corpus::{load_corpus, load_qrels, load_queries, save_corpus, save_qrels, save_queries, Corpus, Passage, Qrels, Query, QuerySet};
use altboot::dense::DenseModel;
use altboot::eval::{ndcg_of, read_run, write_run, RankedList, Run};
use altboot::rerank::RerankModel;
use altboot::text::{corrupt_staged, perturb_count, tokenize, NoiseConfig, TokenSeq, DEFAULT_MASK_SYMBOL};
use proptest::prelude::*;

fn sorted(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v
}

fn is_sub_multiset(small: &[String], big: &[String]) -> bool {
    let mut pool = sorted(big.to_vec());
    for s in small {
        match pool.iter().position(|p| p == s) {
            Some(i) => {
                pool.remove(i);
            }
            None => return false,
        }
    }
    true
}

proptest! {
    #[test]
    fn noise_stage_contracts(words in prop::collection::vec("[a-z]{1,6}", 0..60), rate in 0.0f64..=1.0, seed: u64) {
        let input = TokenSeq::from_tokens(&words);
        let cfg = NoiseConfig { rate, seed, ..NoiseConfig::default() };
        let st = corrupt_staged(&input, &cfg);
        let n = words.len();
        prop_assert_eq!(sorted(st.shuffled.tokens().to_vec()), sorted(words.clone()));
        let deleted = perturb_count(rate, n);
        prop_assert_eq!(st.deleted.len(), n - deleted);
        prop_assert!(is_sub_multiset(st.deleted.tokens(), st.shuffled.tokens()));
        prop_assert_eq!(st.masked.len(), st.deleted.len());
        let masks = st.masked.tokens().iter().filter(|t| *t == DEFAULT_MASK_SYMBOL).count();
        prop_assert_eq!(masks, perturb_count(rate, n - deleted));
        for (m, d) in st.masked.tokens().iter().zip(st.deleted.tokens()) {
            prop_assert!(m == d || m == DEFAULT_MASK_SYMBOL);
        }
    }

    #[test]
    fn zero_rate_noise_is_identity(words in prop::collection::vec("[a-z]{1,6}", 0..40), seed: u64) {
        let input = TokenSeq::from_tokens(&words);
        let st = corrupt_staged(&input, &NoiseConfig { rate: 0.0, seed, ..NoiseConfig::default() });
        prop_assert_eq!(st.masked, input);
    }

    #[test]
    fn bm25_results_are_sorted_positive_and_consistent(seed in 0u64..50, qseed: u64, k in 1usize..80) {
        let corpus = common::random_corpus(80, 60, seed);
        let index = Bm25Index::build(&corpus, Bm25Params::default()).unwrap();
        let mut r = common::rng(qseed);
        let q = common::random_query(&mut r, 60);
        let toks = tokenize(&q);
        let hits = index.search_tokens(&toks, k);
        prop_assert!(hits.len() <= k);
        for w in hits.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
        for &(ord, s) in &hits {
            prop_assert!(s > 0.0);
            prop_assert_eq!(s, index.score(&toks, ord).unwrap());
        }
        // Everything left out scores no higher than the last hit.
        if hits.len() == k {
            let floor = hits[k - 1].1;
            for ord in 0..corpus.len() {
                if !hits.iter().any(|h| h.0 == ord) {
                    prop_assert!(index.score(&toks, ord).unwrap() <= floor);
                }
            }
        }
    }

    #[test]
    fn extraction_is_disjoint_within_list_and_matches_rule(n in 0usize..130, k in 1usize..70, k_pos in 1usize..20, k_neg in 1usize..20) {
        prop_assume!(k_pos + k_neg <= k);
        let rule = ExtractionRule { k, k_pos, k_neg };
        let list = RankedList::from_pairs("q", (0..n).map(|i| (format!("r{}", i + 1), -(i as f64))));
        let ex = extract_labels(&list, &rule);
        for p in &ex.positives {
            prop_assert!(!ex.negatives.contains(p));
        }
        let ids: Vec<&str> = list.ids().collect();
        prop_assert!(ex.positives.iter().chain(&ex.negatives).all(|d| ids.contains(&d.as_str())));
        let (pos, neg) = common::rule_oracle(n, k, k_pos, k_neg);
        prop_assert_eq!(ex.positives, pos.iter().map(|r| format!("r{r}")).collect::<Vec<_>>());
        prop_assert_eq!(ex.negatives, neg.iter().map(|r| format!("r{r}")).collect::<Vec<_>>());
    }

    #[test]
    fn ndcg_is_bounded_and_ideal_order_scores_one(grades in prop::collection::vec(0u32..4, 1..30), perm_seed: u64, k in 1usize..40) {
        let judged: BTreeMap<String, u32> = grades.iter().enumerate().map(|(i, &g)| (format!("d{i}"), g)).collect();
        let mut r = common::rng(perm_seed);
        let mut ids: Vec<String> = judged.keys().cloned().collect();
        rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), &mut r);
        let list = RankedList::from_pairs("q", ids.iter().enumerate().map(|(i, d)| (d.clone(), -(i as f64))));
        let v = ndcg_of(&list, &judged, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        let mut ideal: Vec<(&String, &u32)> = judged.iter().collect();
        ideal.sort_by(|a, b| b.1.cmp(a.1));
        let best = RankedList::from_pairs("q", ideal.iter().enumerate().map(|(i, (d, _))| ((*d).clone(), -(i as f64))));
        let top = ndcg_of(&best, &judged, k);
        if grades.iter().any(|&g| g > 0) {
            prop_assert!((top - 1.0).abs() < 1e-12);
            prop_assert!(v <= top + 1e-12);
        } else {
            prop_assert_eq!(top, 0.0);
        }
    }

    #[test]
    fn corpus_and_queries_round_trip(
        docs in prop::collection::btree_map("[A-Za-z0-9_-]{1,8}", ("[^\u{0}]{0,12}", "[a-z]{1,5}( [a-zé\"\\\\\t]{1,5}){0,6}"), 1..12),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let passages: Vec<Passage> = docs.iter().map(|(id, (title, text))| Passage { id: id.clone(), title: title.clone(), text: text.clone() }).collect();
        let corpus = Corpus::new(passages).unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let back = load_corpus(&path).unwrap();
        prop_assert_eq!(back.passages(), corpus.passages());
        prop_assert_eq!(back.checksum(), corpus.checksum());

        let queries = QuerySet::new(docs.iter().map(|(id, (_, text))| Query { id: format!("q{id}"), text: text.clone(), source_passage_id: None }).collect()).unwrap();
        let qpath = dir.path().join("queries.jsonl");
        save_queries(&queries, &qpath).unwrap();
        let qback = load_queries(&qpath).unwrap();
        prop_assert_eq!(qback.as_slice(), queries.as_slice());
    }

    #[test]
    fn qrels_and_runs_round_trip(
        judged in prop::collection::btree_map("[a-z0-9]{1,6}", prop::collection::btree_map("[A-Za-z0-9_.-]{1,8}", 0u32..5, 0..6), 1..8),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let qrels: Qrels = judged.into_iter().filter(|(_, d)| !d.is_empty()).collect();
        prop_assume!(!qrels.is_empty());
        let path = dir.path().join("qrels.tsv");
        save_qrels(&qrels, &path).unwrap();
        prop_assert_eq!(load_qrels(&path).unwrap(), qrels.clone());

        let run: Run = qrels
            .iter()
            .map(|(q, docs)| (q.clone(), RankedList::from_pairs(q.clone(), docs.keys().enumerate().map(|(i, d)| (d.clone(), 1.0 / (i as f64 + 1.0))))))
            .collect();
        let rpath = dir.path().join("run.trec");
        write_run(&run, &rpath, "t").unwrap();
        let back = read_run(&rpath).unwrap();
        prop_assert_eq!(back.len(), run.len());
        for (q, list) in &run {
            prop_assert_eq!(back[q].ids().collect::<Vec<_>>(), list.ids().collect::<Vec<_>>());
            for (a, b) in back[q].entries.iter().zip(&list.entries) {
                // Scores are written with six decimals.
                prop_assert!((a.score - b.score).abs() <= 5e-7);
                prop_assert_eq!(a.rank, b.rank);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_and_reject_truncation(seed: u64, dim in 1usize..6, buckets in 1usize..20, cut in 1usize..64) {
        let model = DenseModel::with_std(dim, buckets, seed, 0.1).unwrap();
        let bytes = model.to_bytes();
        prop_assert_eq!(DenseModel::from_bytes(&bytes).unwrap(), model);
        let cut = cut.min(bytes.len());
        prop_assert!(DenseModel::from_bytes(&bytes[..bytes.len() - cut]).is_err());

        let rr = RerankModel::new(dim, buckets, 3, 0.1, seed).unwrap();
        let bytes = rr.to_bytes();
        prop_assert_eq!(RerankModel::from_bytes(&bytes).unwrap(), rr);
        prop_assert!(RerankModel::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }
}
