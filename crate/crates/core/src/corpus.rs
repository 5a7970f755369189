//! BEIR-style corpus, query and qrels files, plus sentence cropping.
//!
//! Corpus and query files are JSON lines (`_id`, `text`, optional `title`).
//! Qrels are tab separated with the header `query-id\tcorpus-id\tscore`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::text::tokenize;

pub const QRELS_HEADER: &str = "query-id\tcorpus-id\tscore";
pub const DEFAULT_QUERY_CAP: usize = 2_000_000;
pub const MIN_SENTENCE_TOKENS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// Passages in file order, addressable by ordinal or id.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    use_titles: bool,
}

impl Corpus {
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::InvalidArgument(format!("passage {i} has an empty id")));
            }
            if p.text.trim().is_empty() {
                return Err(Error::InvalidArgument(format!("passage {:?} has empty text", p.id)));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate passage id {:?}", p.id)));
            }
        }
        Ok(Corpus {
            passages,
            by_id,
            use_titles: true,
        })
    }

    /// Whether `indexing_text` prepends the title.
    pub fn with_titles(mut self, use_titles: bool) -> Self {
        self.use_titles = use_titles;
        self
    }

    pub fn uses_titles(&self) -> bool {
        self.use_titles
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, ordinal: usize) -> Option<&Passage> {
        self.passages.get(ordinal)
    }

    pub fn ordinal(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn by_id(&self, id: &str) -> Option<&Passage> {
        self.ordinal(id).map(|i| &self.passages[i])
    }

    /// Text fed to indexes and encoders: `title + " " + text` when titles are on.
    pub fn indexing_text(&self, ordinal: usize) -> String {
        let p = &self.passages[ordinal];
        if self.use_titles && !p.title.trim().is_empty() {
            format!("{} {}", p.title, p.text)
        } else {
            p.text.clone()
        }
    }

    /// Order-sensitive FNV-1a digest over ids, titles and texts.
    pub fn checksum(&self) -> u64 {
        let mut h = crate::text::fnv1a64(&[u8::from(self.use_titles)]);
        for p in &self.passages {
            for field in [&p.id, &p.title, &p.text] {
                h = crate::text::fnv1a64_extend(h, &(field.len() as u64).to_le_bytes());
                h = crate::text::fnv1a64_extend(h, field.as_bytes());
            }
        }
        h
    }
}

/// A query. Cropped queries remember the passage they were cut from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub source_passage_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuerySet {
    queries: Vec<Query>,
}

impl QuerySet {
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(queries.len());
        for (i, q) in queries.iter().enumerate() {
            if seen.insert(q.id.as_str(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate query id {:?}", q.id)));
            }
        }
        Ok(QuerySet { queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Query> {
        self.queries.iter()
    }

    pub fn as_slice(&self) -> &[Query] {
        &self.queries
    }
}

/// query id → passage id → graded relevance.
pub type Qrels = BTreeMap<String, BTreeMap<String, u32>>;

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn string_field(obj: &Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Non-blank JSON object lines with their 1-based line numbers.
fn json_lines(path: &Path) -> Result<Vec<(usize, Map<String, Value>)>> {
    let body = read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(obj)) => out.push((lineno, obj)),
            Ok(_) => return Err(parse_err(path, lineno, "expected a JSON object")),
            Err(e) => return Err(parse_err(path, lineno, e.to_string())),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut passages = Vec::new();
    for (lineno, obj) in json_lines(path)? {
        let id = string_field(&obj, "_id").ok_or_else(|| parse_err(path, lineno, "missing `_id`"))?;
        let text =
            string_field(&obj, "text").ok_or_else(|| parse_err(path, lineno, "missing `text`"))?;
        let title = string_field(&obj, "title").unwrap_or_default();
        if id.is_empty() {
            return Err(parse_err(path, lineno, "empty `_id`"));
        }
        if text.trim().is_empty() {
            return Err(parse_err(path, lineno, format!("passage {id:?} has empty text")));
        }
        if seen.insert(id.clone(), lineno).is_some() {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id,
            });
        }
        passages.push(Passage { id, title, text });
    }
    Corpus::new(passages)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), corpus.passages().iter().map(|p| {
        json!({"_id": p.id, "title": p.title, "text": p.text}).to_string()
    }))
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<QuerySet> {
    let path = path.as_ref();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut queries = Vec::new();
    for (lineno, obj) in json_lines(path)? {
        let id = string_field(&obj, "_id").ok_or_else(|| parse_err(path, lineno, "missing `_id`"))?;
        let text =
            string_field(&obj, "text").ok_or_else(|| parse_err(path, lineno, "missing `text`"))?;
        if seen.insert(id.clone(), lineno).is_some() {
            return Err(Error::DuplicateId {
                path: path.to_path_buf(),
                line: lineno,
                id,
            });
        }
        let source_passage_id = string_field(&obj, "source_passage_id");
        queries.push(Query {
            id,
            text,
            source_passage_id,
        });
    }
    QuerySet::new(queries)
}

pub fn save_queries(queries: &QuerySet, path: impl AsRef<Path>) -> Result<()> {
    write_lines(path.as_ref(), queries.iter().map(|q| {
        let mut obj = json!({"_id": q.id, "text": q.text});
        if let Some(src) = &q.source_passage_id {
            obj["source_passage_id"] = Value::String(src.clone());
        }
        obj.to_string()
    }))
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let body = read_to_string(path)?;
    let mut lines = body.lines();
    match lines.next() {
        Some(h) if h.trim_end_matches('\r') == QRELS_HEADER => {}
        _ => return Err(parse_err(path, 1, format!("missing header {QRELS_HEADER:?}"))),
    }
    let mut qrels = Qrels::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols[0].is_empty() || cols[1].is_empty() {
            return Err(parse_err(path, lineno, "expected three tab-separated columns"));
        }
        let grade: u32 = cols[2]
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("grade {:?} is not a non-negative integer", cols[2])))?;
        qrels
            .entry(cols[0].to_string())
            .or_default()
            .insert(cols[1].to_string(), grade);
    }
    Ok(qrels)
}

pub fn save_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let rows = qrels.iter().flat_map(|(q, docs)| {
        docs.iter().map(move |(d, g)| format!("{q}\t{d}\t{g}"))
    });
    write_lines(path.as_ref(), std::iter::once(QRELS_HEADER.to_string()).chain(rows))
}

/// Reports qrels entries whose query or passage id is unknown.
pub fn check_qrels(qrels: &Qrels, queries: &QuerySet, corpus: &Corpus) -> Vec<String> {
    let known: std::collections::HashSet<&str> = queries.iter().map(|q| q.id.as_str()).collect();
    let mut problems = Vec::new();
    for (q, docs) in qrels {
        if !known.contains(q.as_str()) {
            problems.push(format!("unknown query {q:?}"));
        }
        for d in docs.keys() {
            if corpus.ordinal(d).is_none() {
                problems.push(format!("query {q:?}: unknown passage {d:?}"));
            }
        }
    }
    problems
}

pub(crate) fn write_lines<I>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text, trims each
/// piece and keeps those with at least `min_tokens` tokens. Terminators stay
/// attached, so every sentence is a substring of the input.
pub fn split_sentences(text: &str, min_tokens: usize) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = match chars.peek() {
                None => true,
                Some(&(_, next)) => next.is_whitespace(),
            };
            if at_boundary {
                let end = i + c.len_utf8();
                push_sentence(&mut out, &text[start..end], min_tokens);
                start = end;
            }
        }
    }
    push_sentence(&mut out, &text[start..], min_tokens);
    out
}

fn push_sentence<'a>(out: &mut Vec<&'a str>, piece: &'a str, min_tokens: usize) {
    let piece = piece.trim();
    if !piece.is_empty() && tokenize(piece).len() >= min_tokens.max(1) {
        out.push(piece);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropConfig {
    pub cap: usize,
    pub seed: u64,
    pub min_tokens: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            cap: DEFAULT_QUERY_CAP,
            seed: 0,
            min_tokens: MIN_SENTENCE_TOKENS,
        }
    }
}

/// Turns every sentence of every passage into a query; when there are more
/// than `cap` sentences a uniform sample of `cap` is kept, in corpus order.
pub fn crop_queries(corpus: &Corpus, cfg: CropConfig) -> Result<QuerySet> {
    if cfg.cap == 0 {
        return Err(Error::InvalidArgument("query cap must be at least 1".into()));
    }
    let mut all = Vec::new();
    for p in corpus.passages() {
        for (i, sentence) in split_sentences(&p.text, cfg.min_tokens).into_iter().enumerate() {
            all.push(Query {
                id: format!("{}#{}", p.id, i),
                text: sentence.to_string(),
                source_passage_id: Some(p.id.clone()),
            });
        }
    }
    if all.len() > cfg.cap {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut keep = index::sample(&mut rng, all.len(), cfg.cap).into_vec();
        keep.sort_unstable();
        let mut slots: Vec<Option<Query>> = all.into_iter().map(Some).collect();
        all = keep.into_iter().filter_map(|i| slots[i].take()).collect();
    }
    QuerySet::new(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str, text: &str) -> Passage {
        Passage {
            id: id.into(),
            title: String::new(),
            text: text.into(),
        }
    }

    #[test]
    fn splitter_keeps_terminators() {
        assert_eq!(
            split_sentences("A is B. C is D. E!", 1),
            vec!["A is B.", "C is D.", "E!"]
        );
        // One-token sentences fall below the default minimum.
        assert_eq!(
            split_sentences("A is B. C is D. E!", MIN_SENTENCE_TOKENS),
            vec!["A is B.", "C is D."]
        );
        assert_eq!(split_sentences("v1.2 is out now", 1), vec!["v1.2 is out now"]);
        assert!(split_sentences("   ", 1).is_empty());
    }

    #[test]
    fn crop_without_sampling() {
        let corpus = Corpus::new(vec![passage("d1", "A is B. C is D. E!")]).unwrap();
        let cfg = CropConfig {
            min_tokens: 1,
            ..Default::default()
        };
        let qs = crop_queries(&corpus, cfg).unwrap();
        let texts: Vec<_> = qs.iter().map(|q| q.text.as_str()).collect();
        assert_eq!(texts, ["A is B.", "C is D.", "E!"]);
        assert!(qs.iter().all(|q| q.source_passage_id.as_deref() == Some("d1")));
    }

    #[test]
    fn crop_cap_not_binding() {
        let passages = (0..5)
            .map(|i| passage(&format!("d{i}"), "one two three. four five six."))
            .collect();
        let corpus = Corpus::new(passages).unwrap();
        let qs = crop_queries(&corpus, CropConfig { cap: 10, ..Default::default() }).unwrap();
        assert_eq!(qs.len(), 10);
    }

    #[test]
    fn crop_rejects_zero_cap() {
        let corpus = Corpus::new(vec![passage("d1", "x y z.")]).unwrap();
        assert!(crop_queries(&corpus, CropConfig { cap: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn indexing_text_prepends_title() {
        let mut p = passage("d1", "body text");
        p.title = "Title".into();
        let corpus = Corpus::new(vec![p]).unwrap();
        assert_eq!(corpus.indexing_text(0), "Title body text");
        let corpus = corpus.with_titles(false);
        assert_eq!(corpus.indexing_text(0), "body text");
    }
}
