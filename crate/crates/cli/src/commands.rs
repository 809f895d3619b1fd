//! The pipeline commands. Each writes its artifacts under an output
//! directory together with a `config.txt` snapshot of the resolved
//! configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use fsner::backend::{Backend, TinyBackend, TinyConfig};
use fsner::corpus::{build_label_set, corpus_instances, instances_to_conll, label_counts, parse_conll, LabelSet, ParsedCorpus, TypingInstance};
use fsner::episodes::{load_manual_support, make_task_stream, sample_support, SamplerConfig, SupportReport};
use fsner::evaluation::{chart_csv, emit_report, evaluate_with, per_category_chart_data, EvalReport};
use fsner::metalearn::{meta_test, meta_train as run_meta_train, prepare_episode, MetaConfig, PromptLoss};
use fsner::patterns::{classify_instances, compile_rules, merge_predictions, pattern_scores, MergePolicy, RuleSet};
use fsner::prompting::{Template, Verbalizer, WordVocab};
use fsner::training::{epoch_trace_lines, TrainConfig, TypingTask};
use fsner::Error;
use serde_json::json;

use crate::config::{Init, RunConfig};
use crate::{CliError, CliResult};

fn read(path: &Path) -> CliResult<String> {
    if !path.exists() {
        return Err(CliError::data(format!("path not found: {}", path.display())));
    }
    fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> CliResult<&'a Path> {
    path.as_deref().ok_or_else(|| CliError::config(format!("`{key}` is not set")))
}

fn load_corpus(path: &Path) -> CliResult<ParsedCorpus> {
    parse_conll(&read(path)?).map_err(|e| CliError::from(e).context(path.display()))
}

fn instances_of(path: &Path) -> CliResult<Vec<TypingInstance>> {
    let instances = corpus_instances(&load_corpus(path)?.sentences);
    if instances.is_empty() {
        return Err(CliError::from(Error::EmptyCorpus).context(path.display()));
    }
    Ok(instances)
}

fn load_verbalizer(cfg: &RunConfig) -> CliResult<Verbalizer> {
    match &cfg.verbalizer {
        Some(p) => Verbalizer::parse(&read(p)?).map_err(|e| CliError::from(e).context(p.display())),
        None => Ok(Verbalizer::default_set()),
    }
}

fn load_rules(path: Option<&Path>) -> CliResult<RuleSet> {
    match path {
        Some(p) => compile_rules(&read(p)?).map_err(|e| CliError::from(e).context(p.display())),
        None => Ok(RuleSet::default_set()),
    }
}

fn template(cfg: &RunConfig) -> CliResult<Template> {
    Ok(Template::parse(&cfg.template)?)
}

fn check_backend(cfg: &RunConfig) -> CliResult<()> {
    match cfg.backend.as_str() {
        "tiny" => Ok(()),
        b if b.starts_with("pretrained:") => Err(Error::Unsupported(format!(
            "backend `{b}`: no pretrained-transformer adapter is bundled; implement the Backend trait for it"
        ))
        .into()),
        b => Err(CliError::config(format!("unknown backend `{b}`"))),
    }
}

fn start(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    cfg.validate()?;
    check_backend(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), cfg.to_text())?;
    Ok(())
}

/// Every configured corpus path, in a fixed order.
fn corpus_paths(cfg: &RunConfig) -> Vec<&Path> {
    [&cfg.general_corpus, &cfg.target_train, &cfg.target_test, &cfg.support]
        .into_iter()
        .filter_map(|p| p.as_deref())
        .collect()
}

/// Vocabulary over all configured corpora plus every template and
/// verbalizer word, so meta-training and target runs share token ids.
fn build_vocab(cfg: &RunConfig, verbalizer: &Verbalizer, tpl: &Template) -> CliResult<WordVocab> {
    let mut tokens = Vec::new();
    for p in corpus_paths(cfg) {
        for s in load_corpus(p)?.sentences {
            tokens.extend(s.tokens);
        }
    }
    let required: Vec<&str> = tpl.literal_words().chain(verbalizer.words()).collect();
    Ok(WordVocab::build(tokens.iter().map(String::as_str), required, cfg.vocab_size)?)
}

fn tiny_config(cfg: &RunConfig) -> TinyConfig {
    TinyConfig {
        hidden_dim: cfg.hidden_dim,
        max_seq_len: cfg.max_seq_len,
        freeze_head: cfg.freeze_head,
        embed_std: cfg.embed_std,
    }
}

fn fresh_backend(cfg: &RunConfig, verbalizer: &Verbalizer, tpl: &Template) -> CliResult<TinyBackend> {
    Ok(TinyBackend::new(build_vocab(cfg, verbalizer, tpl)?, tiny_config(cfg))?)
}

fn json_pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json values serialize") + "\n"
}

fn summary_json(path: &Path, parsed: &ParsedCorpus) -> CliResult<serde_json::Value> {
    let instances = corpus_instances(&parsed.sentences);
    let mut counts = serde_json::Map::new();
    if !instances.is_empty() {
        let labels = build_label_set(&instances)?;
        for (l, n) in label_counts(&instances, &labels) {
            counts.insert(l, json!(n));
        }
    }
    Ok(json!({
        "path": path.display().to_string(),
        "sentences": parsed.sentences.len(),
        "instances": instances.len(),
        "num_labels": counts.len(),
        "labels": counts,
        "repaired_tags": parsed.diagnostics.len(),
    }))
}

/// Parses every configured corpus and writes per-label counts to
/// `dataset_summary.json`. Returns a human-readable summary.
pub fn prepare(cfg: &RunConfig, out: &Path) -> CliResult<String> {
    start(cfg, out)?;
    let named = [
        ("general_corpus", &cfg.general_corpus),
        ("target_train", &cfg.target_train),
        ("target_test", &cfg.target_test),
        ("support", &cfg.support),
    ];
    if named.iter().all(|(_, p)| p.is_none()) {
        return Err(CliError::config("no corpus paths are configured"));
    }
    let mut summary = serde_json::Map::new();
    let mut text = String::new();
    let mut label_sets: Vec<(&str, LabelSet)> = Vec::new();
    for (name, path) in named {
        let Some(path) = path.as_deref() else { continue };
        let parsed = load_corpus(path)?;
        let s = summary_json(path, &parsed)?;
        let _ = writeln!(
            text,
            "{name}: {} sentences, {} instances, {} labels",
            s["sentences"], s["instances"], s["num_labels"]
        );
        let instances = corpus_instances(&parsed.sentences);
        if instances.is_empty() {
            return Err(CliError::from(Error::EmptyCorpus).context(path.display()));
        }
        label_sets.push((name, build_label_set(&instances)?));
        summary.insert(name.to_string(), s);
    }

    let verbalizer = load_verbalizer(cfg)?;
    for (name, labels) in &label_sets {
        if let Some(missing) = labels.names().iter().find(|l| !verbalizer.entries.contains_key(*l)) {
            return Err(CliError::from(Error::MissingVerbalizerEntry(missing.clone())).context(name));
        }
    }
    let train = label_sets.iter().find(|(n, _)| *n == "target_train").map(|(_, l)| l);
    let test = label_sets.iter().find(|(n, _)| *n == "target_test").map(|(_, l)| l);
    if let (Some(train), Some(test)) = (train, test) {
        let uncovered: Vec<&String> = test.names().iter().filter(|l| !train.contains(l)).collect();
        if !uncovered.is_empty() {
            let _ = writeln!(text, "warning: test labels missing from training data: {uncovered:?}");
        }
        summary.insert("uncovered_test_labels".into(), json!(uncovered));
    }
    fs::write(out.join("dataset_summary.json"), json_pretty(&serde_json::Value::Object(summary)))?;
    Ok(text)
}

/// Target label set: the training corpus inventory, or the manual support
/// file's when no training corpus is configured.
fn target_labels(cfg: &RunConfig) -> CliResult<(LabelSet, Option<Vec<TypingInstance>>)> {
    if let Some(p) = &cfg.target_train {
        let train = instances_of(p)?;
        return Ok((build_label_set(&train)?, Some(train)));
    }
    let p = require(&cfg.support, "target_train or support")?;
    Ok((build_label_set(&instances_of(p)?)?, None))
}

fn support_set(
    cfg: &RunConfig,
    labels: &LabelSet,
    train: Option<&[TypingInstance]>,
) -> CliResult<(Vec<TypingInstance>, Option<SupportReport>)> {
    if let Some(p) = &cfg.support {
        let (support, report) =
            load_manual_support(&read(p)?, labels, cfg.k_shot).map_err(|e| CliError::from(e).context(p.display()))?;
        for d in &report.duplicates {
            log::warn!("support label {}: surface `{}` appears {} times", d.label, d.surface, d.count);
        }
        return Ok((support, Some(report)));
    }
    let train = train.ok_or_else(|| CliError::config("`target_train` is not set"))?;
    let sampler = SamplerConfig { k_shot: cfg.k_shot, n_way: labels.len().max(2), dedup_surface: cfg.dedup, seed: cfg.seed };
    Ok((sample_support(train, labels, &sampler)?, None))
}

fn support_report_json(labels: &LabelSet, support: &[TypingInstance], report: Option<&SupportReport>) -> serde_json::Value {
    let counts: serde_json::Map<String, serde_json::Value> =
        label_counts(support, labels).into_iter().map(|(l, n)| (l, json!(n))).collect();
    let duplicates: Vec<serde_json::Value> = report
        .map(|r| {
            r.duplicates
                .iter()
                .map(|d| json!({"label": d.label, "surface": d.surface, "count": d.count}))
                .collect()
        })
        .unwrap_or_default();
    json!({"instances": support.len(), "counts": counts, "duplicate_surfaces": duplicates})
}

/// Samples (or validates a manual) target support set and writes it as
/// `support.conll` with a `support_report.json`.
pub fn sample(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    start(cfg, out)?;
    let (labels, train) = target_labels(cfg)?;
    let (support, report) = support_set(cfg, &labels, train.as_deref())?;
    let path = out.join("support.conll");
    fs::write(&path, instances_to_conll(&support))?;
    fs::write(out.join("support_report.json"), json_pretty(&support_report_json(&labels, &support, report.as_ref())))?;
    Ok(path)
}

fn meta_config(cfg: &RunConfig) -> MetaConfig {
    MetaConfig {
        inner_lr: cfg.inner_lr,
        meta_lr: cfg.meta_lr,
        outer_batch_size: cfg.outer_batch,
        max_meta_steps: cfg.max_meta_steps,
        n_tasks: cfg.n_tasks,
        inner_epochs: cfg.meta_train_epochs,
        first_order: cfg.first_order,
        aggregation: cfg.aggregation,
        seed: cfg.seed,
    }
}

/// Meta-trains from a fresh initialization on episodes of the general
/// corpus. Writes `meta_trace.jsonl`, one checkpoint per step under
/// `checkpoints/` and the final one under `checkpoint/`, whose path is
/// returned.
pub fn meta_train(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    start(cfg, out)?;
    let general = instances_of(require(&cfg.general_corpus, "general_corpus")?)?;
    let verbalizer = load_verbalizer(cfg)?;
    let tpl = template(cfg)?;
    let backend = fresh_backend(cfg, &verbalizer, &tpl)?;
    let init = backend.init_params(cfg.seed);

    let sampler = SamplerConfig { k_shot: cfg.k_shot, n_way: cfg.n_way, dedup_surface: false, seed: cfg.seed };
    let episodes = make_task_stream(&general, &sampler, cfg.k_query, cfg.n_tasks, cfg.seed)?;
    let pool = episodes
        .iter()
        .map(|e| prepare_episode(&backend, e, &tpl, &verbalizer, cfg.target_smoothing))
        .collect::<Result<Vec<_>, _>>()?;

    let mut loss = PromptLoss::new(&backend);
    loss.direction = cfg.kl_direction;
    let ckpt_root = out.join("checkpoints");
    let mut trace = String::new();
    let theta = run_meta_train(&loss, &init, &pool, &meta_config(cfg), |record, params| {
        trace.push_str(&record.to_json_line());
        trace.push('\n');
        backend.save(&ckpt_root.join(format!("step-{:04}", record.meta_step)), params)
    })?;
    fs::write(out.join("meta_trace.jsonl"), trace)?;
    let path = out.join("checkpoint");
    backend.save(&path, &theta)?;
    Ok(path)
}

fn prediction_lines(preds: &[fsner::training::Prediction]) -> String {
    preds.iter().map(|p| p.to_json_line() + "\n").collect()
}

/// Fine-tunes on the target support set from a random or meta-trained
/// initialization, predicts the test corpus, optionally merges rule output
/// and writes `report.json`, `report.txt`, `predictions.jsonl`,
/// `chart.csv`, `support.conll` and `finetune_trace.jsonl`.
pub fn run(cfg: &RunConfig, out: &Path) -> CliResult<EvalReport> {
    start(cfg, out)?;
    let test = instances_of(require(&cfg.target_test, "target_test")?)?;
    let verbalizer = load_verbalizer(cfg)?;
    let tpl = template(cfg)?;
    let (labels, train) = target_labels(cfg)?;
    let (support, _) = support_set(cfg, &labels, train.as_deref())?;

    let (backend, init) = match &cfg.init {
        Init::Random => {
            let b = fresh_backend(cfg, &verbalizer, &tpl)?;
            let p = b.init_params(cfg.seed);
            (b, p)
        }
        Init::Checkpoint(dir) => {
            if !dir.exists() {
                return Err(CliError::data(format!("path not found: {}", dir.display())));
            }
            TinyBackend::load(dir).map_err(|e| CliError::from(e).context(dir.display()))?
        }
    };

    let task = TypingTask::new(&backend, tpl, &verbalizer, labels.clone())?;
    let train_cfg = TrainConfig {
        inner_batch_size: cfg.inner_batch,
        epochs: cfg.meta_test_epochs,
        lr: cfg.finetune_lr,
        seed: cfg.seed,
        target_smoothing: cfg.target_smoothing,
        direction: cfg.kl_direction,
    };
    let result = meta_test(&backend, &init, &support, &test, &task, &train_cfg)?;
    let mut predictions = result.predictions;
    let golds: Vec<_> = predictions.iter().map(|p| (p.instance, p.gold.clone())).collect();
    let score = |preds: &[(fsner::corpus::InstanceId, String)]| evaluate_with(preds, &golds, &labels, cfg.macro_average);

    let model_preds: Vec<_> = predictions.iter().map(|p| (p.instance, p.pred.clone())).collect();
    let mut report = score(&model_preds)?;
    if let Some(rules_path) = &cfg.rules {
        let rules = load_rules(Some(rules_path))?;
        let policy = match &cfg.merge {
            Some(m) => m.parse::<MergePolicy>()?,
            None => MergePolicy::for_rules(&rules, &labels),
        };
        let fired = classify_instances(&test, &rules);
        let merged = merge_predictions(&model_preds, &fired, &policy, &labels)?;
        fs::write(out.join("report_model.json"), emit_report(&report, "json")?)?;
        fs::write(out.join("pattern_predictions.jsonl"), pattern_lines(&test, &fired))?;
        report = score(&merged)?;
        for (p, (_, label)) in predictions.iter_mut().zip(merged) {
            p.pred = label;
        }
    }

    fs::write(out.join("support.conll"), instances_to_conll(&support))?;
    fs::write(out.join("finetune_trace.jsonl"), epoch_trace_lines(&result.epoch_losses))?;
    fs::write(out.join("predictions.jsonl"), prediction_lines(&predictions))?;
    fs::write(out.join("report.json"), emit_report(&report, "json")?)?;
    fs::write(out.join("report.txt"), emit_report(&report, "text")?)?;
    fs::write(out.join("chart.csv"), chart_csv(&per_category_chart_data(&report)))?;
    Ok(report)
}

fn pattern_lines(instances: &[TypingInstance], fired: &[(fsner::corpus::InstanceId, Option<String>)]) -> String {
    instances
        .iter()
        .zip(fired)
        .map(|(inst, (id, label))| {
            json!({"instance": id.to_string(), "mention": inst.mention(), "gold": inst.label, "pattern": label})
                .to_string()
                + "\n"
        })
        .collect()
}

/// Applies the rules alone to `corpus` (default: the target test corpus) and
/// scores them per rule category. Writes `pattern_predictions.jsonl` and
/// `pattern_report.json`; returns a text table.
pub fn patterns(cfg: &RunConfig, corpus: Option<&Path>, out: &Path) -> CliResult<String> {
    start(cfg, out)?;
    let path = match corpus {
        Some(p) => p,
        None => require(&cfg.target_test, "target_test")?,
    };
    let instances = instances_of(path)?;
    let rules = load_rules(cfg.rules.as_deref())?;
    let fired = classify_instances(&instances, &rules);
    let golds: Vec<_> = instances.iter().map(|i| (i.id(), i.label.clone())).collect();
    let scores = pattern_scores(&fired, &golds, &rules.categories())?;

    let mut table = serde_json::Map::new();
    let mut text = format!("{:<20}  {:>9}  {:>9}  {:>9}  {:>7}\n", "category", "precision", "recall", "f1", "support");
    for (cat, s) in &scores {
        table.insert(cat.clone(), serde_json::to_value(s).expect("plain record serializes"));
        let _ = writeln!(text, "{cat:<20}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}", s.precision, s.recall, s.f1, s.support);
    }
    let covered = fired.iter().filter(|(_, l)| l.is_some()).count();
    let _ = writeln!(text, "{covered} of {} mentions matched a rule", instances.len());
    fs::write(out.join("pattern_predictions.jsonl"), pattern_lines(&instances, &fired))?;
    fs::write(
        out.join("pattern_report.json"),
        json_pretty(&json!({"matched": covered, "instances": instances.len(), "per_category": table})),
    )?;
    Ok(text)
}

/// Re-emits a saved `report.json` as `json` or `text`, optionally writing
/// the chart series as CSV.
pub fn report(input: &Path, format: &str, chart: Option<&Path>) -> CliResult<String> {
    let parsed = EvalReport::from_json(&read(input)?).map_err(|e| CliError::from(e).context(input.display()))?;
    let doc = emit_report(&parsed, format)?;
    if let Some(path) = chart {
        fs::write(path, chart_csv(&per_category_chart_data(&parsed)))?;
    }
    Ok(doc)
}

