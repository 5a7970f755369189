//! Ranked lists and TREC run files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::{write_lines, Corpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub passage_id: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Ordered retrieval result for one query.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: Vec::new(),
        }
    }

    /// Builds a list from `(ordinal, score)` pairs already in rank order.
    pub fn from_scored(query_id: impl Into<String>, corpus: &Corpus, scored: &[(usize, f64)]) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: scored
                .iter()
                .enumerate()
                .map(|(i, &(ord, score))| RankedEntry {
                    passage_id: corpus.passages()[ord].id.clone(),
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn from_pairs<S: Into<String>>(
        query_id: impl Into<String>,
        pairs: impl IntoIterator<Item = (S, f64)>,
    ) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: pairs
                .into_iter()
                .enumerate()
                .map(|(i, (pid, score))| RankedEntry {
                    passage_id: pid.into(),
                    score,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.passage_id.as_str())
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }

    /// Rewrites ranks as 1..=len in current order.
    pub fn renumber(&mut self) {
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.rank = i + 1;
        }
    }

    /// Contiguous ranks, unique ids and non-increasing scores.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.entries.iter().enumerate().all(|(i, e)| e.rank == i + 1 && seen.insert(&e.passage_id))
            && self.entries.windows(2).all(|w| w[0].score >= w[1].score)
    }
}

/// query id → ranked list.
pub type Run = BTreeMap<String, RankedList>;

pub fn format_run_line(query_id: &str, entry: &RankedEntry, tag: &str) -> String {
    format!(
        "{} Q0 {} {} {:.6} {}",
        query_id, entry.passage_id, entry.rank, entry.score, tag
    )
}

/// Writes `qid Q0 passage_id rank score tag` lines, queries in id order.
pub fn write_run(run: &Run, path: impl AsRef<Path>, tag: &str) -> Result<()> {
    let lines = run.iter().flat_map(|(qid, list)| {
        list.entries.iter().map(move |e| format_run_line(qid, e, tag))
    });
    write_lines(path.as_ref(), lines)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Run> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut run = Run::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: msg.to_string(),
        };
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(bad("expected `qid Q0 passage_id rank score tag`"));
        }
        let rank: usize = cols[3].parse().map_err(|_| bad("bad rank"))?;
        let score: f64 = cols[4].parse().map_err(|_| bad("bad score"))?;
        run.entry(cols[0].to_string())
            .or_insert_with(|| RankedList::new(cols[0]))
            .entries
            .push(RankedEntry {
                passage_id: cols[2].to_string(),
                score,
                rank,
            });
    }
    for list in run.values_mut() {
        list.entries.sort_by_key(|e| e.rank);
    }
    Ok(run)
}

/// Sorts by score descending, ties by ascending ordinal, and keeps `k`.
pub(crate) fn top_k_by_score(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    let order = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if scored.len() > k && k > 0 {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    scored.truncate(k);
    scored
}
