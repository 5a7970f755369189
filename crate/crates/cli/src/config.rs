use std::path::{Path, PathBuf};

use altboot::bootstrap::LoopConfig;
use altboot::corpus::{DEFAULT_QUERY_CAP, MIN_SENTENCE_TOKENS};
use altboot::dense::FinetuneConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::config_err;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSettings {
    pub cap: usize,
    pub min_tokens: usize,
}

impl Default for CropSettings {
    fn default() -> Self {
        CropSettings {
            cap: DEFAULT_QUERY_CAP,
            min_tokens: MIN_SENTENCE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// Judged queries: validation during the loop, training data for finetune.
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub workdir: PathBuf,
    /// External training queries used instead of cropped sentences.
    pub train_queries: Option<PathBuf>,
    pub use_synthetic_queries_file: bool,
    pub seed: Option<u64>,
    /// Number of bootstrap iterations T.
    pub iterations: usize,
    pub use_titles: bool,
    pub crop: CropSettings,
    #[serde(rename = "loop")]
    pub bootstrap: LoopConfig,
    pub finetune: FinetuneConfig,
    /// Depth of run files written by retrieve and ensemble.
    pub run_depth: usize,
    pub eval_k: usize,
    pub recall_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            queries: None,
            qrels: None,
            workdir: PathBuf::from("work"),
            train_queries: None,
            use_synthetic_queries_file: false,
            seed: None,
            iterations: 2,
            use_titles: true,
            crop: CropSettings::default(),
            bootstrap: LoopConfig::default(),
            finetune: FinetuneConfig::default(),
            run_depth: 100,
            eval_k: 10,
            recall_k: 100,
        }
    }
}

/// Reads the optional config file, applies `path=value` overrides in order
/// and deserializes the result.
pub fn resolve(file: Option<&Path>, overrides: &[(String, Value)]) -> anyhow::Result<RunConfig> {
    let mut root = match file {
        Some(path) => {
            let body = std::fs::read_to_string(path)
                .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
            serde_json::from_str::<Value>(&body)
                .map_err(|e| config_err(format!("config {} is not valid JSON: {e}", path.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !root.is_object() {
        return Err(config_err("config must be a JSON object"));
    }
    for (key, value) in overrides {
        set_path(&mut root, key, value.clone())?;
    }
    let cfg: RunConfig = serde_json::from_value(root).map_err(|e| config_err(format!("invalid config: {e}")))?;
    cfg.bootstrap.validate()?;
    cfg.finetune.train.validate()?;
    if cfg.run_depth == 0 || cfg.eval_k == 0 || cfg.recall_k == 0 {
        return Err(config_err("run_depth, eval_k and recall_k must be positive"));
    }
    for path in [&cfg.corpus, &cfg.queries, &cfg.qrels, &cfg.train_queries].into_iter().flatten() {
        if !path.exists() {
            return Err(config_err(format!("{} does not exist", path.display())));
        }
    }
    Ok(cfg)
}

fn set_path(root: &mut Value, key: &str, value: Value) -> anyhow::Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(config_err(format!("bad config key {key:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("{key:?} descends into a non-object")))?;
        let child = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if child.is_null() {
            *child = Value::Object(Default::default());
        }
        node = child;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| config_err(format!("{key:?} descends into a non-object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `key=value`; the value is JSON when it parses, a string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value), String> {
    let (key, raw) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

impl RunConfig {
    pub fn seed(&self) -> anyhow::Result<u64> {
        self.seed.ok_or_else(|| config_err("a master seed is required (--seed or \"seed\")"))
    }

    pub fn corpus_path(&self) -> anyhow::Result<&Path> {
        self.corpus.as_deref().ok_or_else(|| config_err("no corpus given (--corpus or \"corpus\")"))
    }

    pub fn queries_path(&self) -> anyhow::Result<&Path> {
        self.queries.as_deref().ok_or_else(|| config_err("no queries given (--queries or \"queries\")"))
    }

    pub fn qrels_path(&self) -> anyhow::Result<&Path> {
        self.qrels.as_deref().ok_or_else(|| config_err("no qrels given (--qrels or \"qrels\")"))
    }

    /// Loop settings with the master seed folded in.
    pub fn loop_config(&self) -> anyhow::Result<LoopConfig> {
        Ok(LoopConfig {
            seed: self.seed()?,
            ..self.bootstrap.clone()
        })
    }
}
