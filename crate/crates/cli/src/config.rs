//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fsner::evaluation::MacroAverage;
use fsner::metalearn::Aggregation;
use fsner::prompting::Template;
use fsner::training::KlDirection;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Random,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub backend: String,
    pub seed: u64,

    pub general_corpus: Option<PathBuf>,
    pub target_train: Option<PathBuf>,
    pub target_test: Option<PathBuf>,
    pub support: Option<PathBuf>,
    pub verbalizer: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub merge: Option<String>,
    pub template: String,
    pub init: Init,

    pub k_shot: usize,
    pub n_way: usize,
    pub k_query: usize,
    pub n_tasks: usize,
    pub dedup: bool,

    pub max_seq_len: usize,
    pub inner_batch: usize,
    pub outer_batch: usize,
    pub meta_train_epochs: usize,
    pub meta_test_epochs: usize,
    pub max_meta_steps: usize,
    pub meta_lr: f64,
    pub inner_lr: f64,
    pub finetune_lr: f64,
    pub first_order: bool,
    pub aggregation: Aggregation,
    pub target_smoothing: f64,
    pub kl_direction: KlDirection,
    pub macro_average: MacroAverage,

    pub hidden_dim: usize,
    pub vocab_size: usize,
    pub embed_std: f64,
    pub freeze_head: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: "tiny".into(),
            seed: 0,
            general_corpus: None,
            target_train: None,
            target_test: None,
            support: None,
            verbalizer: None,
            rules: None,
            merge: None,
            template: fsner::prompting::DEFAULT_TEMPLATE.into(),
            init: Init::Random,
            k_shot: 5,
            n_way: 27,
            k_query: 15,
            n_tasks: 40,
            dedup: false,
            max_seq_len: 128,
            inner_batch: 8,
            outer_batch: 32,
            meta_train_epochs: 1,
            meta_test_epochs: 10,
            max_meta_steps: 15,
            meta_lr: 5e-3,
            inner_lr: 1e-2,
            finetune_lr: 1e-2,
            first_order: true,
            aggregation: Aggregation::Mean,
            target_smoothing: 0.0,
            kl_direction: KlDirection::TargetToPred,
            macro_average: MacroAverage::GoldPresent,
            hidden_dim: 32,
            vocab_size: 8000,
            embed_std: 0.3,
            freeze_head: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| CliError::config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::config(format!("`{key}`: expected true or false, found `{value}`"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "backend" => self.backend = v.to_string(),
            "seed" => self.seed = parse(key, v)?,
            "general_corpus" => self.general_corpus = optional_path(v),
            "target_train" => self.target_train = optional_path(v),
            "target_test" => self.target_test = optional_path(v),
            "support" => self.support = optional_path(v),
            "verbalizer" => self.verbalizer = optional_path(v),
            "rules" => self.rules = optional_path(v),
            "merge" => self.merge = (!v.is_empty()).then(|| v.to_string()),
            "template" => self.template = v.to_string(),
            "init" => {
                self.init = match v {
                    "random" | "" => Init::Random,
                    path => Init::Checkpoint(PathBuf::from(path)),
                }
            }
            "k_shot" => self.k_shot = parse(key, v)?,
            "n_way" => self.n_way = parse(key, v)?,
            "k_query" => self.k_query = parse(key, v)?,
            "n_tasks" => self.n_tasks = parse(key, v)?,
            "dedup" => self.dedup = parse_bool(key, v)?,
            "max_seq_len" => self.max_seq_len = parse(key, v)?,
            "inner_batch" => self.inner_batch = parse(key, v)?,
            "outer_batch" => self.outer_batch = parse(key, v)?,
            "meta_train_epochs" => self.meta_train_epochs = parse(key, v)?,
            "meta_test_epochs" => self.meta_test_epochs = parse(key, v)?,
            "max_meta_steps" => self.max_meta_steps = parse(key, v)?,
            "meta_lr" => self.meta_lr = parse(key, v)?,
            "inner_lr" => self.inner_lr = parse(key, v)?,
            "finetune_lr" => self.finetune_lr = parse(key, v)?,
            "first_order" => self.first_order = parse_bool(key, v)?,
            "aggregation" => {
                self.aggregation = match v {
                    "mean" => Aggregation::Mean,
                    "sum" => Aggregation::Sum,
                    _ => return Err(CliError::config(format!("`aggregation` must be mean or sum, found `{v}`"))),
                }
            }
            "target_smoothing" => self.target_smoothing = parse(key, v)?,
            "kl_direction" => {
                self.kl_direction = match v {
                    "target_to_pred" => KlDirection::TargetToPred,
                    "pred_to_target" => KlDirection::PredToTarget,
                    _ => return Err(CliError::config(format!("`kl_direction`: unknown value `{v}`"))),
                }
            }
            "macro_average" => {
                self.macro_average = match v {
                    "gold_present" => MacroAverage::GoldPresent,
                    "all_labels" => MacroAverage::AllLabels,
                    _ => return Err(CliError::config(format!("`macro_average`: unknown value `{v}`"))),
                }
            }
            "hidden_dim" => self.hidden_dim = parse(key, v)?,
            "vocab_size" => self.vocab_size = parse(key, v)?,
            "embed_std" => self.embed_std = parse(key, v)?,
            "freeze_head" => self.freeze_head = parse_bool(key, v)?,
            other => return Err(CliError::config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines. `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("config line {}: expected `key = value`", i + 1)))?;
            self.set(k, v).map_err(|e| CliError::config(format!("config line {}: {}", i + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let counts = [
            ("k_shot", self.k_shot),
            ("k_query", self.k_query),
            ("n_tasks", self.n_tasks),
            ("inner_batch", self.inner_batch),
            ("outer_batch", self.outer_batch),
            ("meta_train_epochs", self.meta_train_epochs),
            ("meta_test_epochs", self.meta_test_epochs),
            ("hidden_dim", self.hidden_dim),
        ];
        for (name, n) in counts {
            if n == 0 {
                return Err(CliError::config(format!("`{name}` must be >= 1")));
            }
        }
        if self.n_way < 2 {
            return Err(CliError::config("`n_way` must be >= 2"));
        }
        if !(8..=4096).contains(&self.max_seq_len) {
            return Err(CliError::config("`max_seq_len` must lie in [8, 4096]"));
        }
        Template::parse(&self.template)?;
        if self.vocab_size < 4 {
            return Err(CliError::config("`vocab_size` must be >= 4"));
        }
        for (name, lr) in [("meta_lr", self.meta_lr), ("inner_lr", self.inner_lr), ("finetune_lr", self.finetune_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(CliError::config(format!("`{name}` must be positive")));
            }
        }
        if !(self.embed_std.is_finite() && self.embed_std > 0.0) {
            return Err(CliError::config("`embed_std` must be positive"));
        }
        if !(0.0..0.5).contains(&self.target_smoothing) {
            return Err(CliError::config("`target_smoothing` must lie in [0, 0.5)"));
        }
        if self.kl_direction == KlDirection::PredToTarget && self.target_smoothing == 0.0 {
            return Err(CliError::config("`kl_direction = pred_to_target` needs target_smoothing > 0"));
        }
        Ok(())
    }

    /// Canonical snapshot; re-reading it reproduces this configuration.
    pub fn to_text(&self) -> String {
        let agg = match self.aggregation {
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
        };
        let dir = match self.kl_direction {
            KlDirection::TargetToPred => "target_to_pred",
            KlDirection::PredToTarget => "pred_to_target",
        };
        let avg = match self.macro_average {
            MacroAverage::GoldPresent => "gold_present",
            MacroAverage::AllLabels => "all_labels",
        };
        let init = match &self.init {
            Init::Random => "random".to_string(),
            Init::Checkpoint(p) => p.display().to_string(),
        };
        let entries: Vec<(&str, String)> = vec![
            ("backend", self.backend.clone()),
            ("seed", self.seed.to_string()),
            ("general_corpus", show_path(&self.general_corpus)),
            ("target_train", show_path(&self.target_train)),
            ("target_test", show_path(&self.target_test)),
            ("support", show_path(&self.support)),
            ("verbalizer", show_path(&self.verbalizer)),
            ("rules", show_path(&self.rules)),
            ("merge", self.merge.clone().unwrap_or_default()),
            ("template", self.template.clone()),
            ("init", init),
            ("k_shot", self.k_shot.to_string()),
            ("n_way", self.n_way.to_string()),
            ("k_query", self.k_query.to_string()),
            ("n_tasks", self.n_tasks.to_string()),
            ("dedup", self.dedup.to_string()),
            ("max_seq_len", self.max_seq_len.to_string()),
            ("inner_batch", self.inner_batch.to_string()),
            ("outer_batch", self.outer_batch.to_string()),
            ("meta_train_epochs", self.meta_train_epochs.to_string()),
            ("meta_test_epochs", self.meta_test_epochs.to_string()),
            ("max_meta_steps", self.max_meta_steps.to_string()),
            ("meta_lr", self.meta_lr.to_string()),
            ("inner_lr", self.inner_lr.to_string()),
            ("finetune_lr", self.finetune_lr.to_string()),
            ("first_order", self.first_order.to_string()),
            ("aggregation", agg.to_string()),
            ("target_smoothing", self.target_smoothing.to_string()),
            ("kl_direction", dir.to_string()),
            ("macro_average", avg.to_string()),
            ("hidden_dim", self.hidden_dim.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("embed_std", self.embed_std.to_string()),
            ("freeze_head", self.freeze_head.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
