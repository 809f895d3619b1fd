use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fsner_cli::commands;
use fsner_cli::config::RunConfig;
use fsner_cli::CliResult;

#[derive(Parser)]
#[command(name = "fsner", version, about = "Few-shot entity typing with prompts and MAML")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run directory for all outputs.
    #[arg(long, short, default_value = "run")]
    out: PathBuf,
    /// Override a config entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backend: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Parse the configured corpora and summarise them.
    Prepare {
        #[command(flatten)]
        common: Common,
    },
    /// Sample or validate the target support set.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Manual support file to validate instead of sampling.
        #[arg(long)]
        support: Option<PathBuf>,
        /// Require distinct mention surfaces within a label.
        #[arg(long)]
        dedup: bool,
    },
    /// Meta-train an initialization on general-domain episodes.
    MetaTrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_meta_steps: Option<usize>,
    },
    /// Fine-tune on the target support set, predict and evaluate.
    Run {
        #[command(flatten)]
        common: Common,
        /// `random` or a checkpoint directory.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        support: Option<PathBuf>,
        /// Rule file; enables merging rule output into the predictions.
        #[arg(long)]
        patterns: Option<PathBuf>,
        /// `pattern_wins`, `model_wins` or `pattern_only_for=A,B`.
        #[arg(long)]
        merge: Option<String>,
    },
    /// Score the pattern rules on their own.
    Patterns {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Corpus to classify (default: `target_test`).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Re-emit a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "text")]
        format: String,
        /// Also write the per-category chart series as CSV.
        #[arg(long)]
        chart: Option<PathBuf>,
    },
}

fn resolve(common: &Common, extra: &[(&str, Option<String>)]) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for (k, v) in extra.iter().filter_map(|(k, v)| v.as_ref().map(|v| (*k, v.clone()))) {
        cfg.set(k, &v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(b) = &common.backend {
        cfg.backend = b.clone();
    }
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| fsner_cli::CliError::config(format!("--set expects KEY=VALUE, got `{s}`")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn path_arg(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Prepare { common } => {
            let cfg = resolve(&common, &[])?;
            print!("{}", commands::prepare(&cfg, &common.out)?);
        }
        Command::Sample { common, support, dedup } => {
            let dedup = dedup.then(|| "true".to_string());
            let cfg = resolve(&common, &[("support", path_arg(&support)), ("dedup", dedup)])?;
            println!("{}", commands::sample(&cfg, &common.out)?.display());
        }
        Command::MetaTrain { common, max_meta_steps } => {
            let cfg = resolve(&common, &[("max_meta_steps", max_meta_steps.map(|n| n.to_string()))])?;
            println!("{}", commands::meta_train(&cfg, &common.out)?.display());
        }
        Command::Run { common, init, support, patterns, merge } => {
            let cfg = resolve(
                &common,
                &[("init", init), ("support", path_arg(&support)), ("rules", path_arg(&patterns)), ("merge", merge)],
            )?;
            let report = commands::run(&cfg, &common.out)?;
            println!("micro-F1 {:.4}  macro-F1 {:.4}", report.micro_f1, report.macro_f1);
        }
        Command::Patterns { common, rules, corpus } => {
            let cfg = resolve(&common, &[("rules", path_arg(&rules))])?;
            print!("{}", commands::patterns(&cfg, corpus.as_deref(), &common.out)?);
        }
        Command::Report { input, format, chart } => {
            print!("{}", commands::report(&input, &format, chart.as_deref())?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
