//! `altboot` command-line driver.
//!
//! Every subcommand prints one JSON summary line on stdout. Failures print a
//! JSON object on stderr and exit with 2 (config), 3 (data) or 4 (runtime).

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::parse_assignment;

#[derive(Debug, Parser)]
#[command(name = "altboot", version, about = "Alternating retriever/reranker bootstrapping for dense retrieval")]
struct Cli {
    /// JSON run configuration; flags override its keys [default: none]
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads, 0 for one per core [default: 0]
    #[arg(long, global = true, help_heading = "Global options", value_name = "N")]
    threads: Option<usize>,
    /// Corpus JSONL with `_id`, `title`, `text` [default: none]
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Judged queries JSONL with `_id`, `text` [default: none]
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    queries: Option<PathBuf>,
    /// Qrels TSV with header `query-id corpus-id score` [default: none]
    #[arg(long, global = true, help_heading = "Global options", value_name = "FILE")]
    qrels: Option<PathBuf>,
    /// Artifact directory, created when missing [default: work]
    #[arg(long, global = true, help_heading = "Global options", value_name = "DIR")]
    workdir: Option<PathBuf>,
    /// Master seed; required by every command that samples [default: none]
    #[arg(long, global = true, help_heading = "Global options")]
    seed: Option<u64>,
    /// Set any config key, e.g. `loop.retriever.epochs=5`; repeatable [default: none]
    #[arg(long = "set", global = true, help_heading = "Global options", value_name = "KEY=VALUE", value_parser = parse_assignment)]
    set: Vec<(String, Value)>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate corpus, queries and qrels and record their statistics
    Ingest,
    /// Cut every corpus sentence into a training query
    CropQueries {
        /// Keep at most this many sentences [default: 2000000]
        #[arg(long)]
        cap: Option<usize>,
        /// Drop sentences with fewer tokens [default: 3]
        #[arg(long)]
        min_tokens: Option<usize>,
    },
    /// Build the BM25 inverted index
    Bm25Index {
        /// Term-frequency saturation [default: 1.2]
        #[arg(long)]
        k1: Option<f64>,
        /// Length normalization [default: 0.75]
        #[arg(long)]
        b: Option<f64>,
    },
    /// Train the warm-up retriever on BM25 labels
    Warmup(LoopArgs),
    /// Run bootstrap iterations up to T, warming up first if needed
    Iterate(LoopArgs),
    /// Write a run file from a dense checkpoint or BM25
    Retrieve {
        /// Dense checkpoint [default: selected retriever in workdir]
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Use the BM25 index instead of a dense model [default: false]
        #[arg(long)]
        bm25: bool,
        /// Candidates per query [default: 100]
        #[arg(long)]
        k: Option<usize>,
        /// Output run file name inside workdir [default: run.trec]
        #[arg(long, value_name = "NAME")]
        out: Option<String>,
    },
    /// Rerank the head of a run file with a reranker checkpoint
    Rerank {
        /// Input run file [default: run.trec in workdir]
        #[arg(long, value_name = "FILE")]
        run: Option<PathBuf>,
        /// Reranker checkpoint [default: selected reranker in workdir]
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Rerank this many leading candidates [default: 100]
        #[arg(long)]
        depth: Option<usize>,
        /// Output run file name inside workdir [default: reranked.trec]
        #[arg(long, value_name = "NAME")]
        out: Option<String>,
    },
    /// Score a run file against qrels
    Eval {
        /// Run file [default: run.trec in workdir]
        #[arg(long, value_name = "FILE")]
        run: Option<PathBuf>,
        /// nDCG cutoff [default: 10]
        #[arg(long)]
        k: Option<usize>,
        /// Recall cutoff [default: 100]
        #[arg(long)]
        recall_k: Option<usize>,
    },
    /// Retrieve with the summed scores of several dense checkpoints
    Ensemble {
        /// Comma-separated dense checkpoints [default: none]
        #[arg(long, value_delimiter = ',', required = true, value_name = "FILES")]
        models: Vec<PathBuf>,
        /// Candidates per query [default: 100]
        #[arg(long)]
        k: Option<usize>,
        /// Output run file name inside workdir [default: ensemble.trec]
        #[arg(long, value_name = "NAME")]
        out: Option<String>,
    },
    /// Supervised two-stage fine-tuning on queries and qrels
    Finetune {
        /// Starting checkpoint [default: selected retriever in workdir]
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
    },
    /// Print the resolved configuration
    ShowConfig,
}

#[derive(Debug, Clone, Args)]
struct LoopArgs {
    /// Number of bootstrap iterations T [default: 2]
    #[arg(long = "T", visible_alias = "iterations")]
    iterations: Option<usize>,
    /// Retriever candidates per query for reranker training [default: 100]
    #[arg(long)]
    retrieve_k: Option<usize>,
    /// Candidates reranked per query before label extraction [default: 100]
    #[arg(long)]
    rerank_depth: Option<usize>,
    /// Extract labels from the retriever's own ranking [default: false]
    #[arg(long)]
    self_supervision: bool,
    /// Start models from the previous iteration's [default: false]
    #[arg(long)]
    warm_start: bool,
    /// student_teacher or teacher_student [default: student_teacher]
    #[arg(long)]
    kl_direction: Option<String>,
    /// Train on --train-queries instead of cropped sentences [default: false]
    #[arg(long)]
    use_synthetic_queries_file: bool,
    /// External training queries JSONL [default: none]
    #[arg(long, value_name = "FILE")]
    train_queries: Option<PathBuf>,
}

impl LoopArgs {
    fn overrides(&self, out: &mut Vec<(String, Value)>) {
        if let Some(t) = self.iterations {
            out.push(("iterations".into(), json!(t)));
        }
        if let Some(k) = self.retrieve_k {
            out.push(("loop.retrieve_k".into(), json!(k)));
        }
        if let Some(d) = self.rerank_depth {
            out.push(("loop.rerank_depth".into(), json!(d)));
        }
        if self.self_supervision {
            out.push(("loop.self_supervision".into(), json!(true)));
        }
        if self.warm_start {
            out.push(("loop.warm_start".into(), json!(true)));
        }
        if let Some(dir) = &self.kl_direction {
            out.push(("loop.reranker.kl_direction".into(), json!(dir)));
        }
        if self.use_synthetic_queries_file {
            out.push(("use_synthetic_queries_file".into(), json!(true)));
        }
        if let Some(p) = &self.train_queries {
            out.push(("train_queries".into(), json!(p)));
        }
    }
}

impl Cli {
    /// Flag overrides in application order: `--set` first, named flags last.
    fn overrides(&self) -> Vec<(String, Value)> {
        let mut out = self.set.clone();
        let paths = [
            ("corpus", &self.corpus),
            ("queries", &self.queries),
            ("qrels", &self.qrels),
            ("workdir", &self.workdir),
        ];
        for (key, path) in paths {
            if let Some(p) = path {
                out.push((key.into(), json!(p)));
            }
        }
        if let Some(seed) = self.seed {
            out.push(("seed".into(), json!(seed)));
        }
        match &self.command {
            Command::CropQueries { cap, min_tokens } => {
                if let Some(c) = cap {
                    out.push(("crop.cap".into(), json!(c)));
                }
                if let Some(m) = min_tokens {
                    out.push(("crop.min_tokens".into(), json!(m)));
                }
            }
            Command::Bm25Index { k1, b } => {
                if let Some(k1) = k1 {
                    out.push(("loop.bm25.k1".into(), json!(k1)));
                }
                if let Some(b) = b {
                    out.push(("loop.bm25.b".into(), json!(b)));
                }
            }
            Command::Warmup(args) | Command::Iterate(args) => args.overrides(&mut out),
            Command::Retrieve { k: Some(k), .. } | Command::Ensemble { k: Some(k), .. } => {
                out.push(("run_depth".into(), json!(k)));
            }
            Command::Rerank { depth: Some(d), .. } => out.push(("loop.rerank_depth".into(), json!(d))),
            Command::Eval { k, recall_k, .. } => {
                if let Some(k) = k {
                    out.push(("eval_k".into(), json!(k)));
                }
                if let Some(r) = recall_k {
                    out.push(("recall_k".into(), json!(r)));
                }
            }
            _ => {}
        }
        out
    }
}

fn run(cli: &Cli) -> anyhow::Result<Value> {
    let cfg = config::resolve(cli.config.as_deref(), &cli.overrides())?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| commands::dispatch(&cli.command, &cfg))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let body = json!({"error": "config", "exit_code": 2, "message": e.kind().to_string(), "usage": e.to_string()});
            eprintln!("{body}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            let (kind, code) = failure::classify(&err);
            let body = json!({"error": kind, "exit_code": code, "message": format!("{err:#}")});
            eprintln!("{body}");
            ExitCode::from(code as u8)
        }
    }
}
