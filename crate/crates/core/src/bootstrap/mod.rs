//! The alternating retriever/reranker training loop.
//!
//! A warm-up retriever is first trained on labels extracted from BM25 rankings.
//! Every later iteration t then
//!
//! 1. retrieves the top candidates of each training query with the retriever
//!    from iteration t−1,
//! 2. trains a freshly initialized reranker on that retriever's soft labels,
//! 3. reranks the candidates, extracts new labels from the reranked order and
//!    trains retriever t starting again from the warm-up retriever.
//!
//! Artifacts written per iteration N (when a work directory is set):
//! `iterN.retriever.ckpt`, `iterN.reranker.ckpt` (N ≥ 1), `iterN.labels.jsonl`
//! and a cumulative `trace.json`.

mod extract;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bm25::{Bm25Index, Bm25Params};
use crate::corpus::{write_lines, Corpus, Qrels, QuerySet};
use crate::dense::{self, DenseModel, PassageMatrix, TrainConfig, TrainingExample};
use crate::error::{Error, Result};
use crate::eval::{ndcg_at_k, RankedList, Run};
use crate::rerank::{self, RerankModel, RerankTrainConfig};
use crate::text::{derive_seed, tokenize};

pub use extract::{extract_labels, ExtractionRule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub rule: ExtractionRule,
    pub retrieve_k: usize,
    pub rerank_depth: usize,
    pub dim: usize,
    pub buckets: usize,
    pub bm25: Bm25Params,
    pub retriever: TrainConfig,
    /// Retriever training in iterations t ≥ 1; the warm-up settings when absent.
    pub refine: Option<TrainConfig>,
    pub reranker: RerankTrainConfig,
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    /// Extract labels from the retriever's own ranking, with no reranker.
    pub self_supervision: bool,
    /// Start each model from the previous iteration's instead of the
    /// warm-up retriever / fresh reranker init.
    pub warm_start: bool,
    /// Cutoff of the validation nDCG.
    pub metric_k: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            rule: ExtractionRule::default(),
            retrieve_k: 100,
            rerank_depth: 100,
            dim: dense::DEFAULT_DIM,
            buckets: dense::DEFAULT_BUCKETS,
            bm25: Bm25Params::default(),
            retriever: TrainConfig::default(),
            refine: None,
            reranker: RerankTrainConfig::default(),
            seed: 0,
            self_supervision: false,
            warm_start: false,
            metric_k: 10,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        self.rule.validate()?;
        self.bm25.validate()?;
        self.retriever.validate()?;
        if let Some(refine) = &self.refine {
            refine.validate()?;
        }
        self.reranker.validate()?;
        if self.retrieve_k == 0 || self.rerank_depth == 0 || self.metric_k == 0 {
            return Err(Error::InvalidArgument("retrieve_k, rerank_depth and metric_k must be positive".into()));
        }
        if self.dim == 0 || self.buckets == 0 {
            return Err(Error::InvalidArgument("dim and buckets must be positive".into()));
        }
        Ok(())
    }

    pub fn retriever_init_seed(&self) -> u64 {
        derive_seed(self.seed, "retriever-init")
    }

    pub fn reranker_init_seed(&self) -> u64 {
        derive_seed(self.seed, "reranker-init")
    }

    fn retriever_cfg(&self, iteration: usize) -> TrainConfig {
        let base = match (&self.refine, iteration) {
            (Some(refine), 1..) => refine,
            _ => &self.retriever,
        };
        TrainConfig {
            seed: derive_seed(self.seed, &format!("retriever-train/{iteration}")),
            ..base.clone()
        }
    }

    fn reranker_cfg(&self, iteration: usize) -> RerankTrainConfig {
        RerankTrainConfig {
            seed: derive_seed(self.seed, &format!("reranker-train/{iteration}")),
            positives: self.rule.k_pos,
            ..self.reranker.clone()
        }
    }

    /// The reranker every iteration starts from unless warm-starting.
    pub fn fresh_reranker(&self) -> Result<RerankModel> {
        self.reranker.fresh_model(self.dim, self.buckets, self.reranker_init_seed())
    }
}

/// Held-out queries with judgments, used to score every iteration.
#[derive(Debug, Clone)]
pub struct Validation {
    pub queries: QuerySet,
    pub qrels: Qrels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub retriever_ndcg: Option<f64>,
    pub reranker_ndcg: Option<f64>,
    pub examples: usize,
    pub skipped: usize,
    /// Checksum of the model retriever training started from.
    pub retriever_init_checksum: String,
    pub retriever_checksum: String,
    pub reranker_init_checksum: Option<String>,
    pub reranker_checksum: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub metric: String,
    pub iterations: Vec<TraceEntry>,
}

impl Trace {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let body = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&body)?)
    }
}

pub fn hex(checksum: u64) -> String {
    format!("{checksum:016x}")
}

#[derive(Debug, Clone)]
pub struct IterationModels {
    pub retriever: DenseModel,
    pub reranker: Option<RerankModel>,
}

#[derive(Debug, Clone)]
pub struct BootstrapState {
    pub iteration: usize,
    pub warmup: DenseModel,
    /// Models of every iteration, index = iteration.
    pub history: Vec<IterationModels>,
    pub trace: Trace,
}

impl BootstrapState {
    pub fn retriever(&self) -> &DenseModel {
        &self.history[self.iteration].retriever
    }

    pub fn reranker(&self) -> Option<&RerankModel> {
        self.history[self.iteration].reranker.as_ref()
    }

    /// Rebuilds a state from the artifacts of a previous run.
    pub fn resume(workdir: impl AsRef<Path>) -> Result<Self> {
        let dir = workdir.as_ref();
        let trace = Trace::load(dir.join("trace.json"))?;
        if trace.iterations.is_empty() {
            return Err(Error::InvalidArgument("trace.json has no iterations".into()));
        }
        let mut history = Vec::with_capacity(trace.iterations.len());
        for entry in &trace.iterations {
            let n = entry.iteration;
            let retriever = DenseModel::load(dir.join(format!("iter{n}.retriever.ckpt")))?;
            let reranker_path = dir.join(format!("iter{n}.reranker.ckpt"));
            let reranker = if reranker_path.exists() {
                Some(RerankModel::load(reranker_path)?)
            } else {
                None
            };
            history.push(IterationModels { retriever, reranker });
        }
        Ok(BootstrapState {
            iteration: history.len() - 1,
            warmup: history[0].retriever.clone(),
            history,
            trace,
        })
    }
}

/// Drives the loop over one corpus and training query set.
pub struct Bootstrap<'a> {
    pub corpus: &'a Corpus,
    pub queries: &'a QuerySet,
    pub cfg: &'a LoopConfig,
    pub validation: Option<&'a Validation>,
    pub workdir: Option<PathBuf>,
}

impl<'a> Bootstrap<'a> {
    pub fn new(corpus: &'a Corpus, queries: &'a QuerySet, cfg: &'a LoopConfig) -> Self {
        Bootstrap {
            corpus,
            queries,
            cfg,
            validation: None,
            workdir: None,
        }
    }

    pub fn with_validation(mut self, validation: &'a Validation) -> Self {
        self.validation = Some(validation);
        self
    }

    pub fn with_workdir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.workdir = Some(dir.into());
        self
    }

    fn artifact(&self, name: &str) -> Option<PathBuf> {
        self.workdir.as_ref().map(|d| d.join(name))
    }

    /// BM25 labels and the warm-up retriever.
    pub fn warmup(&self, index: &Bm25Index) -> Result<BootstrapState> {
        self.cfg.validate()?;
        if self.queries.is_empty() {
            return Err(Error::NoTrainingQueries);
        }
        let lists: Vec<RankedList> = self
            .queries
            .as_slice()
            .par_iter()
            .map(|q| index.search(&q.id, &q.text, self.cfg.rule.k))
            .collect();
        let init = DenseModel::new(self.cfg.dim, self.cfg.buckets, self.cfg.retriever_init_seed())?;
        let (examples, skipped) = self.extract(&lists);
        if examples.is_empty() {
            return Err(Error::NoUsableExamples {
                iteration: 0,
                detail: format!("{skipped} queries had no positive or no negative"),
            });
        }
        let outcome = dense::train(&init, &examples, self.queries, self.corpus, &self.cfg.retriever_cfg(0))?;
        let retriever = outcome.model;
        let entry = TraceEntry {
            iteration: 0,
            retriever_ndcg: self.score_retriever(&retriever)?,
            reranker_ndcg: None,
            examples: examples.len(),
            skipped: skipped + outcome.skipped,
            retriever_init_checksum: hex(init.checksum()),
            retriever_checksum: hex(retriever.checksum()),
            reranker_init_checksum: None,
            reranker_checksum: None,
        };
        let state = BootstrapState {
            iteration: 0,
            warmup: retriever.clone(),
            history: vec![IterationModels {
                retriever,
                reranker: None,
            }],
            trace: Trace {
                metric: format!("ndcg@{}", self.cfg.metric_k),
                iterations: vec![entry],
            },
        };
        self.write_artifacts(&state, &examples)?;
        Ok(state)
    }

    /// Runs iterations `state.iteration + 1 ..= until`.
    pub fn iterate(&self, mut state: BootstrapState, until: usize) -> Result<BootstrapState> {
        self.cfg.validate()?;
        while state.iteration < until {
            state = self.step(state)?;
        }
        Ok(state)
    }

    fn step(&self, mut state: BootstrapState) -> Result<BootstrapState> {
        let t = state.iteration + 1;
        let previous = state.retriever().clone();
        let matrix = PassageMatrix::build(&previous, self.corpus);
        let lists = self.retrieve(&previous, &matrix, self.queries, self.cfg.retrieve_k)?;

        let mut reranker_init_checksum = None;
        let mut reranker_ndcg = None;
        let (reranker, label_lists) = if self.cfg.self_supervision {
            (None, lists)
        } else {
            let init = match (self.cfg.warm_start, state.reranker()) {
                (true, Some(prev)) => prev.clone(),
                _ => self.cfg.fresh_reranker()?,
            };
            let outcome = rerank::train(&init, &previous, &lists, self.queries, self.corpus, &self.cfg.reranker_cfg(t))?;
            reranker_init_checksum = Some(hex(outcome.init_checksum));
            let reranker = outcome.model;
            reranker_ndcg = self.score_reranker(&reranker, &previous, &matrix)?;
            let reranked = self.rerank_all(&reranker, self.queries, &lists)?;
            (Some(reranker), reranked)
        };

        let (examples, skipped) = self.extract(&label_lists);
        if examples.is_empty() {
            return Err(Error::NoUsableExamples {
                iteration: t,
                detail: format!("{skipped} queries had no positive or no negative"),
            });
        }
        let start = if self.cfg.warm_start { &previous } else { &state.warmup };
        let outcome = dense::train(start, &examples, self.queries, self.corpus, &self.cfg.retriever_cfg(t))?;
        let retriever = outcome.model;
        state.trace.iterations.push(TraceEntry {
            iteration: t,
            retriever_ndcg: self.score_retriever(&retriever)?,
            reranker_ndcg,
            examples: examples.len(),
            skipped: skipped + outcome.skipped,
            retriever_init_checksum: hex(start.checksum()),
            retriever_checksum: hex(retriever.checksum()),
            reranker_init_checksum,
            reranker_checksum: reranker.as_ref().map(|r| hex(r.checksum())),
        });
        state.history.push(IterationModels { retriever, reranker });
        state.iteration = t;
        self.write_artifacts(&state, &examples)?;
        Ok(state)
    }

    fn extract(&self, lists: &[RankedList]) -> (Vec<TrainingExample>, usize) {
        let mut skipped = 0;
        let examples = lists
            .iter()
            .map(|l| extract_labels(l, &self.cfg.rule))
            .filter(|ex| {
                let ok = ex.is_usable();
                skipped += usize::from(!ok);
                ok
            })
            .collect();
        (examples, skipped)
    }

    fn retrieve(&self, model: &DenseModel, matrix: &PassageMatrix, queries: &QuerySet, k: usize) -> Result<Vec<RankedList>> {
        queries
            .as_slice()
            .par_iter()
            .map(|q| dense::search(model, matrix, self.corpus, &q.id, &q.text, k))
            .collect()
    }

    fn rerank_all(&self, reranker: &RerankModel, queries: &QuerySet, lists: &[RankedList]) -> Result<Vec<RankedList>> {
        queries
            .as_slice()
            .par_iter()
            .zip(lists)
            .map(|(q, list)| reranker.rerank(&q.text, list, self.corpus, self.cfg.rerank_depth))
            .collect()
    }

    fn score_retriever(&self, model: &DenseModel) -> Result<Option<f64>> {
        let Some(val) = self.validation else {
            return Ok(None);
        };
        let matrix = PassageMatrix::build(model, self.corpus);
        let lists = self.retrieve(model, &matrix, &val.queries, self.cfg.metric_k)?;
        Ok(Some(ndcg(lists, &val.qrels, self.cfg.metric_k)?))
    }

    fn score_reranker(&self, reranker: &RerankModel, retriever: &DenseModel, matrix: &PassageMatrix) -> Result<Option<f64>> {
        let Some(val) = self.validation else {
            return Ok(None);
        };
        let lists = self.retrieve(retriever, matrix, &val.queries, self.cfg.retrieve_k)?;
        let reranked = self.rerank_all(reranker, &val.queries, &lists)?;
        Ok(Some(ndcg(reranked, &val.qrels, self.cfg.metric_k)?))
    }

    fn write_artifacts(&self, state: &BootstrapState, examples: &[TrainingExample]) -> Result<()> {
        let Some(dir) = &self.workdir else {
            return Ok(());
        };
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let t = state.iteration;
        let models = &state.history[t];
        models.retriever.save(dir.join(format!("iter{t}.retriever.ckpt")))?;
        if let Some(r) = &models.reranker {
            r.save(dir.join(format!("iter{t}.reranker.ckpt")))?;
        }
        let lines = examples
            .iter()
            .map(|ex| serde_json::to_string(ex).map_err(Error::from))
            .collect::<Result<Vec<_>>>()?;
        write_lines(&dir.join(format!("iter{t}.labels.jsonl")), lines)?;
        state.trace.save(self.artifact("trace.json").expect("workdir set"))
    }
}

fn ndcg(lists: Vec<RankedList>, qrels: &Qrels, k: usize) -> Result<f64> {
    let run: Run = lists.into_iter().map(|l| (l.query_id.clone(), l)).collect();
    Ok(ndcg_at_k(&run, qrels, k)?.mean)
}

/// Final models picked by validation metric.
#[derive(Debug, Clone)]
pub struct FinalModels {
    pub retriever: DenseModel,
    pub retriever_iteration: usize,
    pub reranker: Option<RerankModel>,
    pub reranker_iteration: Option<usize>,
}

/// Best iteration ≥ 1 by each metric; the earlier iteration wins ties.
pub fn select_from_trace(trace: &Trace) -> Result<(usize, Option<usize>)> {
    let best = |metric: fn(&TraceEntry) -> Option<f64>| {
        trace
            .iterations
            .iter()
            .filter(|e| e.iteration >= 1)
            .filter_map(|e| metric(e).map(|m| (e.iteration, m)))
            .fold(None, |acc: Option<(usize, f64)>, (it, m)| match acc {
                Some((_, best)) if best >= m => acc,
                _ => Some((it, m)),
            })
            .map(|(it, _)| it)
    };
    let retriever = best(|e| e.retriever_ndcg).ok_or(Error::NoMetrics)?;
    Ok((retriever, best(|e| e.reranker_ndcg)))
}

pub fn select_final(state: &BootstrapState) -> Result<FinalModels> {
    if state.iteration == 0 {
        return Err(Error::InvalidArgument("select_final needs at least one bootstrap iteration".into()));
    }
    let (r, rr) = select_from_trace(&state.trace)?;
    Ok(FinalModels {
        retriever: state.history[r].retriever.clone(),
        retriever_iteration: r,
        reranker: rr.and_then(|i| state.history[i].reranker.clone()),
        reranker_iteration: rr,
    })
}

/// Tokenized training-query texts, for callers that need them repeatedly.
pub fn query_tokens(queries: &QuerySet) -> Vec<crate::text::TokenSeq> {
    queries.iter().map(|q| tokenize(&q.text)).collect()
}
