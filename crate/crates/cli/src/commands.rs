use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use altboot::bm25::Bm25Index;
use altboot::bootstrap::{hex, select_from_trace, Bootstrap, BootstrapState, Trace, Validation};
use altboot::corpus::{
    check_qrels, crop_queries, load_corpus, load_qrels, load_queries, save_queries, CropConfig, Corpus, QuerySet,
};
use altboot::dense::{self, finetune_supervised, DenseModel, FinetuneConfig, PassageMatrix};
use altboot::eval::{ensemble_search, ndcg_at_k, read_run, recall_at_k, write_run, RankedList, Run};
use altboot::rerank::RerankModel;
use altboot::text::derive_seed;
use anyhow::Context;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::failure::{config_err, data_err};
use crate::Command;

const RUN_TAG: &str = "altboot";
const CROPPED: &str = "cropped_queries.jsonl";
const INDEX: &str = "bm25.idx";
const TRACE: &str = "trace.json";

pub fn dispatch(cmd: &Command, cfg: &RunConfig) -> anyhow::Result<Value> {
    let (name, body) = match cmd {
        Command::Ingest => ("ingest", ingest(cfg)?),
        Command::CropQueries { .. } => ("crop-queries", crop(cfg)?),
        Command::Bm25Index { .. } => ("bm25-index", bm25_index(cfg)?),
        Command::Warmup(_) => ("warmup", warmup(cfg)?),
        Command::Iterate(_) => ("iterate", iterate(cfg)?),
        Command::Retrieve { model, bm25, out, .. } => ("retrieve", retrieve(cfg, model.as_deref(), *bm25, out.as_deref())?),
        Command::Rerank { run, model, out, .. } => ("rerank", rerank(cfg, run.as_deref(), model.as_deref(), out.as_deref())?),
        Command::Eval { run, .. } => ("eval", eval(cfg, run.as_deref())?),
        Command::Ensemble { models, out, .. } => ("ensemble", ensemble(cfg, models, out.as_deref())?),
        Command::Finetune { model } => ("finetune", finetune(cfg, model.as_deref())?),
        Command::ShowConfig => ("show-config", json!({"config": serde_json::to_value(cfg)?})),
    };
    let mut summary = json!({"command": name});
    if let (Value::Object(s), Value::Object(b)) = (&mut summary, body) {
        s.extend(b);
    }
    Ok(summary)
}

fn workdir(cfg: &RunConfig) -> anyhow::Result<&Path> {
    let dir = cfg.workdir.as_path();
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create workdir {}", dir.display()))?;
    Ok(dir)
}

fn corpus(cfg: &RunConfig) -> anyhow::Result<Corpus> {
    Ok(load_corpus(cfg.corpus_path()?)?.with_titles(cfg.use_titles))
}

fn validation(cfg: &RunConfig) -> anyhow::Result<Option<Validation>> {
    match (&cfg.queries, &cfg.qrels) {
        (Some(q), Some(r)) => Ok(Some(Validation {
            queries: load_queries(q)?,
            qrels: load_qrels(r)?,
        })),
        _ => Ok(None),
    }
}

fn crop_config(cfg: &RunConfig) -> anyhow::Result<CropConfig> {
    Ok(CropConfig {
        cap: cfg.crop.cap,
        seed: derive_seed(cfg.seed()?, "crop"),
        min_tokens: cfg.crop.min_tokens,
    })
}

/// Cropped sentences from the workdir (cropping on first use) or the
/// external queries file.
fn training_queries(cfg: &RunConfig, corpus: &Corpus) -> anyhow::Result<QuerySet> {
    if cfg.use_synthetic_queries_file {
        let path = cfg
            .train_queries
            .as_deref()
            .ok_or_else(|| config_err("use_synthetic_queries_file needs train_queries"))?;
        return Ok(load_queries(path)?);
    }
    let path = workdir(cfg)?.join(CROPPED);
    if path.exists() {
        return Ok(load_queries(&path)?);
    }
    let queries = crop_queries(corpus, crop_config(cfg)?)?;
    save_queries(&queries, &path)?;
    Ok(queries)
}

/// The workdir index when it matches the corpus and parameters, else a fresh one.
fn index(cfg: &RunConfig, corpus: &Corpus) -> anyhow::Result<Bm25Index> {
    let path = workdir(cfg)?.join(INDEX);
    if path.exists() {
        let idx = Bm25Index::load(&path)?;
        let same = idx.params() == cfg.bootstrap.bm25
            && idx.num_passages() == corpus.len()
            && (0..corpus.len()).all(|i| idx.passage_id(i) == corpus.passages()[i].id);
        if same {
            return Ok(idx);
        }
    }
    let idx = Bm25Index::build(corpus, cfg.bootstrap.bm25)?;
    idx.save(&path)?;
    Ok(idx)
}

fn query_texts(queries: &QuerySet) -> HashMap<&str, &str> {
    queries.iter().map(|q| (q.id.as_str(), q.text.as_str())).collect()
}

fn to_run(lists: Vec<RankedList>) -> Run {
    lists.into_iter().map(|l| (l.query_id.clone(), l)).collect()
}

fn ingest(cfg: &RunConfig) -> anyhow::Result<Value> {
    let corpus = corpus(cfg)?;
    let queries = cfg.queries.as_deref().map(load_queries).transpose()?;
    let qrels = cfg.qrels.as_deref().map(load_qrels).transpose()?;
    let warnings = match (&queries, &qrels) {
        (Some(q), Some(r)) => check_qrels(r, q, &corpus),
        _ => Vec::new(),
    };
    let mut stats = json!({
        "passages": corpus.len(),
        "queries": queries.as_ref().map(|q| q.len()),
        "judged_queries": qrels.as_ref().map(|r| r.len()),
        "corpus_checksum": hex(corpus.checksum()),
    });
    let summary = stats.clone();
    stats["warnings"] = json!(warnings);
    let path = workdir(cfg)?.join("ingest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&stats)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    let mut summary = summary;
    summary["warnings"] = json!(warnings.len());
    Ok(summary)
}

fn crop(cfg: &RunConfig) -> anyhow::Result<Value> {
    let corpus = corpus(cfg)?;
    let queries = crop_queries(&corpus, crop_config(cfg)?)?;
    let path = workdir(cfg)?.join(CROPPED);
    save_queries(&queries, &path)?;
    Ok(json!({"queries": queries.len(), "path": path}))
}

fn bm25_index(cfg: &RunConfig) -> anyhow::Result<Value> {
    let corpus = corpus(cfg)?;
    let idx = Bm25Index::build(&corpus, cfg.bootstrap.bm25)?;
    let path = workdir(cfg)?.join(INDEX);
    idx.save(&path)?;
    Ok(json!({
        "passages": idx.num_passages(),
        "vocabulary": idx.vocabulary_len(),
        "avgdl": idx.avgdl(),
        "path": path,
    }))
}

fn trace_summary(trace: &Trace) -> Value {
    json!(trace.iterations.iter().map(|e| json!({
        "iteration": e.iteration,
        "retriever": e.retriever_ndcg,
        "reranker": e.reranker_ndcg,
        "examples": e.examples,
    })).collect::<Vec<_>>())
}

fn warmup(cfg: &RunConfig) -> anyhow::Result<Value> {
    let lc = cfg.loop_config()?;
    let corpus = corpus(cfg)?;
    let queries = training_queries(cfg, &corpus)?;
    let validation = validation(cfg)?;
    let idx = index(cfg, &corpus)?;
    let mut b = Bootstrap::new(&corpus, &queries, &lc).with_workdir(workdir(cfg)?);
    if let Some(v) = &validation {
        b = b.with_validation(v);
    }
    let state = b.warmup(&idx)?;
    let entry = &state.trace.iterations[0];
    Ok(json!({
        "iteration": 0,
        "training_queries": queries.len(),
        "examples": entry.examples,
        "skipped": entry.skipped,
        state.trace.metric.clone(): entry.retriever_ndcg,
        "retriever_checksum": entry.retriever_checksum,
    }))
}

fn iterate(cfg: &RunConfig) -> anyhow::Result<Value> {
    let lc = cfg.loop_config()?;
    let corpus = corpus(cfg)?;
    let queries = training_queries(cfg, &corpus)?;
    let validation = validation(cfg)?;
    let dir = workdir(cfg)?;
    let mut b = Bootstrap::new(&corpus, &queries, &lc).with_workdir(dir);
    if let Some(v) = &validation {
        b = b.with_validation(v);
    }
    let state = if dir.join(TRACE).exists() {
        BootstrapState::resume(dir)?
    } else {
        b.warmup(&index(cfg, &corpus)?)?
    };
    let start = state.iteration;
    let state = if cfg.iterations > start { b.iterate(state, cfg.iterations)? } else { state };
    let selected = if state.iteration >= 1 { select_from_trace(&state.trace).ok() } else { None };
    if let Some((r, rr)) = selected {
        let body = json!({"retriever_iteration": r, "reranker_iteration": rr});
        let path = dir.join("selection.json");
        std::fs::write(&path, serde_json::to_string_pretty(&body)? + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(json!({
        "iterations_performed": state.iteration - start,
        "iteration": state.iteration,
        "metric": state.trace.metric,
        "trace": trace_summary(&state.trace),
        "selected_retriever": selected.map(|s| s.0),
        "selected_reranker": selected.and_then(|s| s.1),
    }))
}

/// Best validated iteration, or the latest when the trace has no metrics.
fn selected_checkpoint(cfg: &RunConfig, kind: &str) -> anyhow::Result<PathBuf> {
    let dir = cfg.workdir.as_path();
    let trace = Trace::load(dir.join(TRACE))
        .with_context(|| format!("no trace in {}; run warmup or iterate first", dir.display()))?;
    let selected = select_from_trace(&trace).ok();
    let iteration = match kind {
        "retriever" => selected.map(|s| s.0).or(trace.iterations.last().map(|e| e.iteration)),
        _ => selected.and_then(|s| s.1).or_else(|| {
            trace.iterations.iter().rev().find(|e| e.reranker_checksum.is_some()).map(|e| e.iteration)
        }),
    };
    let iteration = iteration.ok_or_else(|| config_err(format!("the trace in {} has no {kind}", dir.display())))?;
    Ok(dir.join(format!("iter{iteration}.{kind}.ckpt")))
}

fn retrieve(cfg: &RunConfig, model: Option<&Path>, bm25: bool, out: Option<&str>) -> anyhow::Result<Value> {
    let corpus = corpus(cfg)?;
    let queries = load_queries(cfg.queries_path()?)?;
    let k = cfg.run_depth;
    let (lists, source) = if bm25 {
        let idx = index(cfg, &corpus)?;
        let lists: Vec<RankedList> = queries.as_slice().par_iter().map(|q| idx.search(&q.id, &q.text, k)).collect();
        (lists, "bm25".to_string())
    } else {
        let path = match model {
            Some(p) => p.to_path_buf(),
            None => selected_checkpoint(cfg, "retriever")?,
        };
        let model = DenseModel::load(&path)?;
        let matrix = PassageMatrix::build(&model, &corpus);
        let lists = queries
            .as_slice()
            .par_iter()
            .map(|q| dense::search(&model, &matrix, &corpus, &q.id, &q.text, k))
            .collect::<altboot::Result<Vec<_>>>()?;
        (lists, path.display().to_string())
    };
    let path = workdir(cfg)?.join(out.unwrap_or("run.trec"));
    write_run(&to_run(lists), &path, RUN_TAG)?;
    Ok(json!({"queries": queries.len(), "depth": k, "source": source, "path": path}))
}

fn rerank(cfg: &RunConfig, run: Option<&Path>, model: Option<&Path>, out: Option<&str>) -> anyhow::Result<Value> {
    let corpus = corpus(cfg)?;
    let queries = load_queries(cfg.queries_path()?)?;
    let texts = query_texts(&queries);
    let run_path = run.map(Path::to_path_buf).unwrap_or_else(|| cfg.workdir.join("run.trec"));
    let input = read_run(&run_path)?;
    let model_path = match model {
        Some(p) => p.to_path_buf(),
        None => selected_checkpoint(cfg, "reranker")?,
    };
    let model = RerankModel::load(&model_path)?;
    let depth = cfg.bootstrap.rerank_depth;
    let lists: Vec<&RankedList> = input.values().collect();
    let reranked = lists
        .par_iter()
        .map(|list| {
            let text = texts
                .get(list.query_id.as_str())
                .ok_or_else(|| data_err(format!("run query {:?} is not in the queries file", list.query_id)))?;
            Ok(model.rerank(text, list, &corpus, depth)?)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let path = workdir(cfg)?.join(out.unwrap_or("reranked.trec"));
    write_run(&to_run(reranked), &path, RUN_TAG)?;
    Ok(json!({"queries": lists.len(), "depth": depth, "model": model_path, "path": path}))
}

fn eval(cfg: &RunConfig, run: Option<&Path>) -> anyhow::Result<Value> {
    let run_path = run.map(Path::to_path_buf).unwrap_or_else(|| cfg.workdir.join("run.trec"));
    let run = read_run(&run_path)?;
    let qrels = load_qrels(cfg.qrels_path()?)?;
    let ndcg = ndcg_at_k(&run, &qrels, cfg.eval_k)?;
    let recall = recall_at_k(&run, &qrels, cfg.recall_k)?;
    let (nk, rk) = (format!("ndcg@{}", cfg.eval_k), format!("recall@{}", cfg.recall_k));
    let report = BTreeMap::from([(nk.clone(), &ndcg), (rk.clone(), &recall)]);
    let path = workdir(cfg)?.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(json!({
        nk: ndcg.mean,
        rk: recall.mean,
        "queries": ndcg.n,
        "excluded": ndcg.excluded,
        "run": run_path,
    }))
}

fn ensemble(cfg: &RunConfig, models: &[PathBuf], out: Option<&str>) -> anyhow::Result<Value> {
    if models.is_empty() {
        return Err(config_err("ensemble needs at least one model"));
    }
    let corpus = corpus(cfg)?;
    let queries = load_queries(cfg.queries_path()?)?;
    let loaded = models.iter().map(DenseModel::load).collect::<altboot::Result<Vec<_>>>()?;
    let matrices: Vec<PassageMatrix> = loaded.iter().map(|m| PassageMatrix::build(m, &corpus)).collect();
    let model_refs: Vec<&DenseModel> = loaded.iter().collect();
    let matrix_refs: Vec<&PassageMatrix> = matrices.iter().collect();
    let k = cfg.run_depth;
    let lists = queries
        .as_slice()
        .par_iter()
        .map(|q| ensemble_search(&model_refs, &matrix_refs, &corpus, &q.id, &q.text, k))
        .collect::<altboot::Result<Vec<_>>>()?;
    let path = workdir(cfg)?.join(out.unwrap_or("ensemble.trec"));
    write_run(&to_run(lists), &path, RUN_TAG)?;
    Ok(json!({"queries": queries.len(), "models": models.len(), "depth": k, "path": path}))
}

fn finetune(cfg: &RunConfig, model: Option<&Path>) -> anyhow::Result<Value> {
    let seed = cfg.seed()?;
    let corpus = corpus(cfg)?;
    let queries = load_queries(cfg.queries_path()?)?;
    let qrels = load_qrels(cfg.qrels_path()?)?;
    let path = match model {
        Some(p) => p.to_path_buf(),
        None => selected_checkpoint(cfg, "retriever")?,
    };
    let start = DenseModel::load(&path)?;
    let mut fc: FinetuneConfig = cfg.finetune.clone();
    fc.train.seed = derive_seed(seed, "finetune");
    let outcome = finetune_supervised(&start, &qrels, &queries, &corpus, &fc)?;
    let dir = workdir(cfg)?;
    outcome.stage1.save(dir.join("finetune.stage1.ckpt"))?;
    outcome.stage2.save(dir.join("finetune.stage2.ckpt"))?;
    let mined = dir.join("finetune.mined.json");
    std::fs::write(&mined, serde_json::to_string_pretty(&outcome.mined)? + "\n")
        .with_context(|| format!("cannot write {}", mined.display()))?;
    Ok(json!({
        "start": path,
        "skipped": outcome.skipped,
        "stage1_checksum": hex(outcome.stage1.checksum()),
        "stage2_checksum": hex(outcome.stage2.checksum()),
    }))
}
