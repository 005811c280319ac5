//! Command-line pipeline: abstract, mutate, run, label, embed, train,
//! predict and report, each stage reading and writing plain files under one
//! output directory.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod report;
pub mod stages;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use mimicry_core::exec::{with_jobs, Execution};
use mimicry_core::predictor::PredictorSpec;

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, ErrorSummary, ItemFailure, EXIT_OK, EXIT_PARTIAL};
use crate::stages::{Context, Outcome};

#[derive(Debug, Parser)]
#[command(name = "mimicry", version, about = "Generate, run and classify vulnerability-mimicking mutants")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Seed for the embedder, the forest and fold assignment.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// `builtin` or `remote=<url>`.
    #[arg(long, global = true)]
    pub predictor: Option<PredictorSpec>,
    /// Candidates per mask site.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Run every stage on a single thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Tokenize and abstract the target files.
    Abstract,
    /// Generate mutants with the predictor.
    Mutate,
    /// Run the test suite on the clean project and on every valid mutant.
    Run,
    /// Label mutants against the vulnerability's PoV tests.
    Label,
    /// Train the sequence embedder on the annotated mutants.
    EmbedTrain,
    /// Embed every annotated mutant.
    Embed,
    /// Cross-validate and train the mimicry classifier.
    Train {
        /// Output directories to pool (default: the output directory).
        #[arg(long, num_args = 1..)]
        from: Vec<PathBuf>,
    },
    /// Score the embedded mutants with the trained classifier.
    Predict,
    /// Write the Markdown and JSON report.
    Report {
        /// Output directories whose labels to aggregate.
        #[arg(long, num_args = 1..)]
        from: Vec<PathBuf>,
        /// Per-project counts to include.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Every stage in order.
    Pipeline,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Abstract => "abstract",
            Command::Mutate => "mutate",
            Command::Run => "run",
            Command::Label => "label",
            Command::EmbedTrain => "embed-train",
            Command::Embed => "embed",
            Command::Train { .. } => "train",
            Command::Predict => "predict",
            Command::Report { .. } => "report",
            Command::Pipeline => "pipeline",
        }
    }
}

const PIPELINE: &[Command] = &[
    Command::Abstract,
    Command::Mutate,
    Command::Run,
    Command::Label,
    Command::EmbedTrain,
    Command::Embed,
    Command::Train { from: Vec::new() },
    Command::Predict,
    Command::Report {
        from: Vec::new(),
        counts: None,
    },
];

pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        out: cli.out.clone(),
        seed: cli.seed,
        predictor: cli.predictor.clone(),
        k: cli.k,
    });
    if cli.jobs == Some(0) {
        return Err(CliError::ConfigInvalid("--jobs must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

fn errors_path(ctx: &Context, stage: &str) -> PathBuf {
    ctx.out().join(format!("{stage}.errors.json"))
}

/// Run one stage and record its partial failures, if any, in
/// `<stage>.errors.json`.
fn run_one(ctx: &Context, cmd: &Command) -> Result<Outcome, CliError> {
    log::info!("stage {}", cmd.name());
    let outcome = match cmd {
        Command::Abstract => stages::abstract_stage(ctx),
        Command::Mutate => stages::mutate_stage(ctx),
        Command::Run => stages::run_stage(ctx),
        Command::Label => stages::label_stage(ctx),
        Command::EmbedTrain => stages::embed_train_stage(ctx),
        Command::Embed => stages::embed_stage(ctx),
        Command::Train { from } => stages::train_stage(ctx, from),
        Command::Predict => stages::predict_stage(ctx),
        Command::Report { from, counts } => stages::report_stage(ctx, from, counts.as_deref()),
        Command::Pipeline => unreachable!("pipeline is expanded by the caller"),
    }?;
    let path = errors_path(ctx, cmd.name());
    if outcome.failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path).map_err(CliError::io(&path))?;
        }
    } else {
        artifacts::write_json(&path, &ErrorSummary::partial(cmd.name(), outcome.failures.clone()))?;
    }
    Ok(outcome)
}

/// Execute `cmd`; partial failures of the pipeline's stages are collected
/// and reported together.
pub fn execute(ctx: &Context, cmd: &Command) -> Result<Vec<ItemFailure>, CliError> {
    artifacts::ensure_dir(ctx.out())?;
    let stages: &[Command] = match cmd {
        Command::Pipeline => PIPELINE,
        other => std::slice::from_ref(other),
    };
    let mut failures = Vec::new();
    for s in stages {
        let outcome = run_one(ctx, s).map_err(|e| {
            log::error!("stage {} failed: {e}", s.name());
            e
        })?;
        if stages.len() == 1 {
            failures.extend(outcome.failures);
        } else {
            failures.extend(outcome.failures.into_iter().map(|f| ItemFailure {
                item: format!("{}:{}", s.name(), f.item),
                error: f.error,
            }));
        }
    }
    Ok(failures)
}

fn print_summary(summary: &ErrorSummary) {
    match serde_json::to_string(summary) {
        Ok(s) => eprintln!("{s}"),
        Err(_) => eprintln!("{}", summary.message),
    }
}

/// Parse-free entry point used by `main` and by tests.
pub fn run(cli: Cli) -> i32 {
    let stage = cli.command.name();
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            print_summary(&ErrorSummary::from_error(stage, &e));
            return e.exit_code();
        }
    };
    let ctx = Context {
        cfg,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    match with_jobs(cli.jobs, || execute(&ctx, &cli.command)) {
        Ok(f) if f.is_empty() => EXIT_OK,
        Ok(f) => {
            print_summary(&ErrorSummary::partial(stage, f));
            EXIT_PARTIAL
        }
        Err(e) => {
            print_summary(&ErrorSummary::from_error(stage, &e));
            e.exit_code()
        }
    }
}

