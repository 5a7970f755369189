//! Inverted-index BM25.
//!
//! Scoring uses the Robertson–Zaragoza form with a +1-smoothed idf, which
//! never goes negative:
//!
//! ```text
//! idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(q, p) = Σ_{t ∈ unique(q)} idf(t) · tf·(k1 + 1) / (tf + k1·(1 - b + b·|p|/avgdl))
//! ```
//!
//! Query terms are summed in first-occurrence order, so `search` and `score`
//! produce bit-identical floats for the same pair.
//!
//! # Index file layout (`ABIX1`)
//!
//! All integers little-endian.
//!
//! | field | type |
//! | --- | --- |
//! | magic | 5 bytes `ABIX1` |
//! | k1, b | f64, f64 |
//! | N | u32 |
//! | doc lengths | N × u32 |
//! | passage ids | N × (u32 byte length, UTF-8 bytes) |
//! | vocabulary size V | u32 |
//! | per term, in byte order | u32 length, UTF-8 bytes, u32 posting count, count × (u32 ordinal, u32 tf) |
//! | checksum | u64 FNV-1a-64 over every preceding byte |

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{top_k_by_score, RankedList};
use crate::text::{tokenize, TokenSeq};

pub const INDEX_MAGIC: &[u8; 5] = b"ABIX1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::InvalidArgument(format!(
                "BM25 parameters out of range: k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub ordinal: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    /// term → postings sorted by ordinal.
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    ids: Vec<String>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(corpus.len());
        for ordinal in 0..corpus.len() {
            let tokens = tokenize(&corpus.indexing_text(ordinal));
            doc_lengths.push(tokens.len() as u32);
            let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
            for t in tokens.tokens() {
                *counts.entry(t.as_str()).or_default() += 1;
            }
            for (term, tf) in counts {
                postings.entry(term.to_string()).or_default().push(Posting {
                    ordinal: ordinal as u32,
                    tf,
                });
            }
        }
        let ids = corpus.passages().iter().map(|p| p.id.clone()).collect();
        Ok(Self::assemble(params, postings, doc_lengths, ids))
    }

    fn assemble(
        params: Bm25Params,
        postings: BTreeMap<String, Vec<Posting>>,
        doc_lengths: Vec<u32>,
        ids: Vec<String>,
    ) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avgdl = total as f64 / doc_lengths.len() as f64;
        Bm25Index {
            params,
            postings,
            doc_lengths,
            avgdl,
            ids,
        }
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn num_passages(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_length(&self, ordinal: usize) -> u32 {
        self.doc_lengths[ordinal]
    }

    pub fn passage_id(&self, ordinal: usize) -> &str {
        &self.ids[ordinal]
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn vocabulary_len(&self) -> usize {
        self.postings.len()
    }

    pub fn idf(&self, df: usize) -> f64 {
        let n = self.num_passages() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, ordinal: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let len_ratio = f64::from(self.doc_lengths[ordinal]) / self.avgdl;
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len_ratio))
    }

    /// BM25 score of one passage, by ordinal.
    pub fn score(&self, query: &TokenSeq, ordinal: usize) -> Result<f64> {
        if ordinal >= self.num_passages() {
            return Err(Error::UnknownPassage(format!("#{ordinal}")));
        }
        let mut total = 0.0;
        for term in unique_terms(query) {
            let list = self.postings(term);
            if let Ok(pos) = list.binary_search_by_key(&(ordinal as u32), |p| p.ordinal) {
                total += self.term_weight(self.idf(list.len()), list[pos].tf, ordinal);
            }
        }
        Ok(total)
    }

    pub fn score_id(&self, query: &TokenSeq, passage_id: &str) -> Result<f64> {
        let ordinal = self
            .ids
            .iter()
            .position(|id| id == passage_id)
            .ok_or_else(|| Error::UnknownPassage(passage_id.to_string()))?;
        self.score(query, ordinal)
    }

    /// Top-k `(ordinal, score)` pairs; only passages sharing a term with the query.
    pub fn search_tokens(&self, query: &TokenSeq, k: usize) -> Vec<(usize, f64)> {
        let mut acc = vec![0.0f64; self.num_passages()];
        let mut touched = Vec::new();
        for term in unique_terms(query) {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let idf = self.idf(list.len());
            for p in list {
                let ord = p.ordinal as usize;
                if acc[ord] == 0.0 {
                    touched.push(ord);
                }
                acc[ord] += self.term_weight(idf, p.tf, ord);
            }
        }
        let scored = touched
            .into_iter()
            .map(|ord| (ord, acc[ord]))
            .filter(|&(_, s)| s > 0.0)
            .collect();
        top_k_by_score(scored, k)
    }

    pub fn search(&self, query_id: &str, query_text: &str, k: usize) -> RankedList {
        let hits = self.search_tokens(&tokenize(query_text), k);
        RankedList::from_pairs(
            query_id,
            hits.into_iter().map(|(ord, s)| (self.ids[ord].clone(), s)),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(INDEX_MAGIC);
        w.f64(self.params.k1);
        w.f64(self.params.b);
        w.u32(self.doc_lengths.len() as u32);
        for &l in &self.doc_lengths {
            w.u32(l);
        }
        for id in &self.ids {
            w.str(id);
        }
        w.u32(self.postings.len() as u32);
        for (term, list) in &self.postings {
            w.str(term);
            w.u32(list.len() as u32);
            for p in list {
                w.u32(p.ordinal);
                w.u32(p.tf);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, INDEX_MAGIC)?;
        let params = Bm25Params {
            k1: r.f64()?,
            b: r.f64()?,
        };
        let n = r.u32()? as usize;
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let doc_lengths = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let vocab = r.u32()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..vocab {
            let term = r.str()?;
            let count = r.u32()? as usize;
            let mut list = Vec::with_capacity(count.min(n));
            for _ in 0..count {
                let ordinal = r.u32()?;
                let tf = r.u32()?;
                if ordinal as usize >= n {
                    return Err(Error::InvalidArgument(format!("posting ordinal {ordinal} out of range")));
                }
                list.push(Posting { ordinal, tf });
            }
            postings.insert(term, list);
        }
        r.finish()?;
        Ok(Self::assemble(params, postings, doc_lengths, ids))
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

fn unique_terms(query: &TokenSeq) -> impl Iterator<Item = &str> {
    let mut seen = HashSet::new();
    query
        .tokens()
        .iter()
        .map(String::as_str)
        .filter(move |t| seen.insert(*t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Passage;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Passage {
                    id: format!("d{i}"),
                    title: String::new(),
                    text: t.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn build_statistics() {
        let idx = Bm25Index::build(&corpus(&["a b", "x x x", "c d e f"]), Bm25Params::default()).unwrap();
        assert_eq!(idx.num_passages(), 3);
        assert_eq!(idx.avgdl(), 3.0);
        assert_eq!(idx.postings("x"), &[Posting { ordinal: 1, tf: 3 }]);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty = Corpus::new(Vec::new()).unwrap();
        assert!(matches!(Bm25Index::build(&empty, Bm25Params::default()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn closed_form_score() {
        // N = 3, df("t") = 1, tf = 2, |p| = avgdl = 4.
        let idx = Bm25Index::build(&corpus(&["t t u v", "a b c d", "e f g h"]), Bm25Params::default()).unwrap();
        let s = idx.score(&tokenize("t"), 0).unwrap();
        let idf = (8.0f64 / 3.0).ln();
        assert!((idf - 0.98083).abs() < 1e-5);
        assert!((s - idf * 4.4 / 3.2).abs() < 1e-12);
        assert!((s - 1.34864).abs() < 1e-5);
        assert_eq!(idx.score(&tokenize("zzz"), 1).unwrap(), 0.0);
        assert!(idx.score(&tokenize("t"), 9).is_err());
    }

    #[test]
    fn score_grows_with_tf_below_bound() {
        let mut prev = 0.0;
        for tf in 1..=20 {
            let mut text = vec!["t"; tf];
            text.extend(["pad"; 4]);
            let doc = text.join(" ");
            let idx = Bm25Index::build(&corpus(&[&doc, "other words here", "more filler text"]), Bm25Params::default()).unwrap();
            let s = idx.score(&tokenize("t"), 0).unwrap();
            let bound = idx.idf(1) * 2.2;
            assert!(s > prev && s < bound, "tf={tf} s={s}");
            prev = s;
        }
    }

    #[test]
    fn search_excludes_non_matching() {
        let idx = Bm25Index::build(&corpus(&["apple pie", "banana split", "cherry tart"]), Bm25Params::default()).unwrap();
        let hits = idx.search("q", "banana bread", 1);
        assert_eq!(hits.ids().collect::<Vec<_>>(), ["d1"]);
        assert!(idx.search("q", "durian", 5).is_empty());
        let all = idx.search("q", "banana bread", 10);
        assert_eq!(all.len(), 1);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let idx = Bm25Index::build(&corpus(&["a b"]), Bm25Params::default()).unwrap();
        let mut bytes = idx.to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Bm25Index::from_bytes(&bytes), Err(Error::BadMagic { .. })));
        let truncated = &idx.to_bytes()[..12];
        assert!(Bm25Index::from_bytes(truncated).is_err());
    }
}
