mod common;

use std::collections::BTreeMap;

use altboot::bm25::{Bm25Index, Bm25Params};
use altboot::dense::{self, DenseModel, PassageMatrix, Side};
use altboot::eval::{ensemble_scores, ensemble_search, ndcg_at_k, ndcg_of, recall_at_k, RankedList};
use common::*;

#[test]
fn bm25_search_equals_brute_force() {
    for (seed, params) in [(1, Bm25Params::default()), (2, Bm25Params { k1: 0.9, b: 0.4 })] {
        let corpus = random_corpus(500, 300, seed);
        let index = Bm25Index::build(&corpus, params).unwrap();
        let mut r = rng(seed + 100);
        for _ in 0..40 {
            let q = random_query(&mut r, 300);
            let scores = brute_bm25_scores(&corpus, &q, params);
            for k in [1, 10, 50, 600] {
                let got: Vec<String> = index.search("q", &q, k).ids().map(String::from).collect();
                let want: Vec<String> =
                    brute_rank(&scores, k, true).iter().map(|&i| corpus.passages()[i].id.clone()).collect();
                assert_eq!(got, want, "query {q:?} k {k}");
            }
        }
    }
}

#[test]
fn bm25_scores_match_brute_force_values() {
    let corpus = random_corpus(200, 100, 9);
    let params = Bm25Params::default();
    let index = Bm25Index::build(&corpus, params).unwrap();
    let mut r = rng(3);
    for _ in 0..20 {
        let q = random_query(&mut r, 100);
        let brute = brute_bm25_scores(&corpus, &q, params);
        let toks = altboot::text::tokenize(&q);
        for (i, want) in brute.iter().enumerate() {
            let got = index.score(&toks, i).unwrap();
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }
}

#[test]
fn index_round_trip_preserves_search() {
    let corpus = random_corpus(120, 80, 4);
    let index = Bm25Index::build(&corpus, Bm25Params::default()).unwrap();
    let back = Bm25Index::from_bytes(&index.to_bytes()).unwrap();
    let mut r = rng(8);
    for _ in 0..20 {
        let q = random_query(&mut r, 80);
        assert_eq!(index.search("q", &q, 20), back.search("q", &q, 20));
    }
}

#[test]
fn dense_search_equals_brute_force() {
    let corpus = random_corpus(300, 200, 5);
    let model = DenseModel::with_std(16, 512, 7, 0.3).unwrap();
    let matrix = PassageMatrix::build(&model, &corpus);
    let mut r = rng(6);
    for _ in 0..30 {
        let q = random_query(&mut r, 200);
        let scores = brute_dense_scores(&model, &corpus, &q);
        for k in [1, 10, 50] {
            let got = dense::search(&model, &matrix, &corpus, "q", &q, k).unwrap();
            let want: Vec<usize> = brute_rank(&scores, k, false);
            let got_ids: Vec<&str> = got.ids().collect();
            let want_ids: Vec<&str> = want.iter().map(|&i| corpus.passages()[i].id.as_str()).collect();
            assert_eq!(got_ids, want_ids);
            for (e, &i) in got.entries.iter().zip(&want) {
                assert!((e.score - scores[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn hand_derived_ndcg_case() {
    // Relevant at ranks 1 and 3 of 3: DCG = 1 + 1/log2(4) = 1.5,
    // IDCG = 1 + 1/log2(3) ≈ 1.6309, nDCG ≈ 0.9198.
    let judged = BTreeMap::from([("a".to_string(), 1), ("c".to_string(), 1)]);
    let list = RankedList::from_pairs("q", [("a", 3.0), ("b", 2.0), ("c", 1.0)]);
    let got = ndcg_of(&list, &judged, 10);
    let idcg = 1.0 + 1.0 / 3f64.log2();
    assert!((idcg - 1.6309).abs() < 1e-4);
    assert!((got - 1.5 / idcg).abs() < 1e-12);
    assert!((got - 0.9198).abs() < 1e-4);
    assert!((got - ref_ndcg(&["a", "b", "c"], &judged, 10)).abs() < 1e-12);
}

#[test]
fn metrics_match_reference_on_random_instances() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let (run, qrels) = random_instance(&mut r);
        for k in [1, 5, 10, 100] {
            let ndcg = ndcg_at_k(&run, &qrels, k).unwrap();
            let recall = recall_at_k(&run, &qrels, k).unwrap();
            for (qid, list) in &run {
                let ids: Vec<&str> = list.ids().collect();
                match qrels.get(qid) {
                    Some(judged) => {
                        assert!((ndcg.per_query[qid] - ref_ndcg(&ids, judged, k)).abs() <= 1e-9);
                        assert!((recall.per_query[qid] - ref_recall(&ids, judged, k)).abs() <= 1e-9);
                    }
                    None => assert!(!ndcg.per_query.contains_key(qid)),
                }
            }
            let n = ndcg.per_query.len();
            if n > 0 {
                let mean: f64 = ndcg.per_query.values().sum::<f64>() / n as f64;
                assert!((ndcg.mean - mean).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn ensemble_of_a_model_with_itself_keeps_its_ranking() {
    let corpus = random_corpus(300, 150, 12);
    let model = DenseModel::with_std(8, 1024, 3, 0.3).unwrap();
    let matrix = PassageMatrix::build(&model, &corpus);
    let mut r = rng(13);
    for q in 0..100 {
        let text = random_query(&mut r, 150);
        let single = dense::search(&model, &matrix, &corpus, "q", &text, 20).unwrap();
        let pair = ensemble_search(&[&model, &model], &[&matrix, &matrix], &corpus, "q", &text, 20).unwrap();
        assert_eq!(single.ids().collect::<Vec<_>>(), pair.ids().collect::<Vec<_>>(), "query {q}");
    }
}

#[test]
fn two_model_ensemble_sums_dot_products() {
    let corpus = random_corpus(150, 100, 21);
    let a = DenseModel::with_std(8, 1024, 1, 0.3).unwrap();
    let b = DenseModel::with_std(12, 2048, 2, 0.3).unwrap();
    let (ma, mb) = (PassageMatrix::build(&a, &corpus), PassageMatrix::build(&b, &corpus));
    let mut r = rng(22);
    for _ in 0..20 {
        let text = random_query(&mut r, 100);
        let summed = ensemble_scores(&[&a, &b], &[&ma, &mb], &text).unwrap();
        let (qa, qb) = (a.encode(Side::Query, &text), b.encode(Side::Query, &text));
        for (i, s) in summed.iter().enumerate() {
            let passage = corpus.indexing_text(i);
            let (pa, pb) = (a.encode(Side::Passage, &passage), b.encode(Side::Passage, &passage));
            let want = dense::score(&qa, &pa).unwrap() + dense::score(&qb, &pb).unwrap();
            assert!((s - want).abs() <= 1e-9);
        }
    }
}
