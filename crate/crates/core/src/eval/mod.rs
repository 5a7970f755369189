//! Ranking metrics, run files and embedding ensembles.
//!
//! Gains are exponential (`2^rel - 1`) with a `log2(rank + 1)` discount, the
//! trec_eval convention. Unjudged passages count as grade 0. Queries in the
//! run that have no qrels entry are left out of the mean and counted in
//! [`Report::excluded`].

mod ensemble;
mod run;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Qrels;
use crate::error::{Error, Result};

pub use ensemble::{ensemble_scores, ensemble_search};
pub use run::{format_run_line, read_run, write_run, RankedEntry, RankedList, Run};
pub(crate) use run::top_k_by_score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metric: String,
    pub k: usize,
    pub per_query: BTreeMap<String, f64>,
    pub mean: f64,
    pub n: usize,
    #[serde(default)]
    pub excluded: usize,
}

impl Report {
    fn from_values(metric: &str, k: usize, per_query: BTreeMap<String, f64>, excluded: usize) -> Self {
        let n = per_query.len();
        let mean = if n == 0 {
            0.0
        } else {
            per_query.values().sum::<f64>() / n as f64
        };
        Report {
            metric: metric.to_string(),
            k,
            per_query,
            mean,
            n,
            excluded,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }
}

fn evaluate<F>(name: &str, run: &Run, qrels: &Qrels, k: usize, per_query: F) -> Result<Report>
where
    F: Fn(&RankedList, &BTreeMap<String, u32>) -> f64,
{
    if k == 0 {
        return Err(Error::InvalidArgument("metric cutoff k must be at least 1".into()));
    }
    let mut values = BTreeMap::new();
    let mut excluded = 0;
    for (qid, list) in run {
        match qrels.get(qid) {
            Some(judged) => {
                values.insert(qid.clone(), per_query(list, judged));
            }
            None => excluded += 1,
        }
    }
    Ok(Report::from_values(name, k, values, excluded))
}

fn gain(grade: u32) -> f64 {
    (grade as f64).exp2() - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// nDCG@k of a single ranked list.
pub fn ndcg_of(list: &RankedList, judged: &BTreeMap<String, u32>, k: usize) -> f64 {
    let dcg: f64 = list
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| gain(judged.get(&e.passage_id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = judged.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    if idcg > 0.0 {
        dcg / idcg
    } else {
        0.0
    }
}

pub fn ndcg_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<Report> {
    evaluate(&format!("ndcg@{k}"), run, qrels, k, |list, judged| ndcg_of(list, judged, k))
}

fn relevant_set(judged: &BTreeMap<String, u32>) -> HashSet<&str> {
    judged
        .iter()
        .filter(|(_, &g)| g > 0)
        .map(|(d, _)| d.as_str())
        .collect()
}

/// Fraction of relevant passages found in the top k.
pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<Report> {
    evaluate(&format!("recall@{k}"), run, qrels, k, |list, judged| {
        let relevant = relevant_set(judged);
        if relevant.is_empty() {
            return 0.0;
        }
        let hits = list.ids().take(k).filter(|d| relevant.contains(d)).count();
        hits as f64 / relevant.len() as f64
    })
}

/// 1 when any relevant passage appears in the top k, else 0.
pub fn topk_accuracy(run: &Run, qrels: &Qrels, k: usize) -> Result<Report> {
    evaluate(&format!("accuracy@{k}"), run, qrels, k, |list, judged| {
        let relevant = relevant_set(judged);
        f64::from(u8::from(list.ids().take(k).any(|d| relevant.contains(d))))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(ids: &[&str]) -> Run {
        let list = RankedList::from_pairs("q1", ids.iter().enumerate().map(|(i, d)| (*d, -(i as f64))));
        Run::from([("q1".to_string(), list)])
    }

    fn qrels(pairs: &[(&str, u32)]) -> Qrels {
        Qrels::from([(
            "q1".to_string(),
            pairs.iter().map(|(d, g)| (d.to_string(), *g)).collect(),
        )])
    }

    #[test]
    fn hand_derived_ndcg() {
        let run = single(&["a", "b", "c"]);
        let q = qrels(&[("a", 1), ("c", 1)]);
        let r = ndcg_at_k(&run, &q, 3).unwrap();
        // DCG = 1 + 1/log2(4) = 1.5, IDCG = 1 + 1/log2(3) = 1.63093
        assert!((r.mean - 1.5 / (1.0 + 1.0 / 3f64.log2())).abs() < 1e-12);
        assert!((r.mean - 0.9198).abs() < 1e-4);
    }

    #[test]
    fn perfect_and_empty() {
        let q = qrels(&[("a", 2), ("b", 1)]);
        assert_eq!(ndcg_at_k(&single(&["a", "b", "z"]), &q, 10).unwrap().mean, 1.0);
        assert_eq!(ndcg_at_k(&single(&["x", "y"]), &q, 10).unwrap().mean, 0.0);
        assert_eq!(ndcg_at_k(&single(&["a"]), &qrels(&[("a", 0)]), 10).unwrap().mean, 0.0);
    }

    #[test]
    fn recall_and_accuracy() {
        let q = qrels(&[("a", 1), ("b", 1)]);
        assert_eq!(recall_at_k(&single(&["a", "b"]), &q, 2).unwrap().mean, 1.0);
        assert_eq!(recall_at_k(&single(&["a", "x", "b"]), &q, 2).unwrap().mean, 0.5);
        assert_eq!(topk_accuracy(&single(&["x", "a"]), &q, 1).unwrap().mean, 0.0);
        assert_eq!(topk_accuracy(&single(&["x", "a"]), &q, 2).unwrap().mean, 1.0);
    }

    #[test]
    fn unjudged_queries_are_excluded() {
        let mut run = single(&["a"]);
        run.insert("q2".into(), RankedList::from_pairs("q2", [("a", 1.0)]));
        let r = ndcg_at_k(&run, &qrels(&[("a", 1)]), 10).unwrap();
        assert_eq!((r.n, r.excluded), (1, 1));
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn zero_cutoff_is_rejected() {
        assert!(ndcg_at_k(&Run::new(), &Qrels::new(), 0).is_err());
    }
}
