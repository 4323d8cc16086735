//! `protokg` command-line driver.
//!
//! Every subcommand that produces results writes them into a fresh run
//! directory together with one `manifest.json` recording the resolved config,
//! dataset fingerprints, seed, tool version and timestamps.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand};

use protokg::eval::TiePolicy;
use protokg::gcn::GcnMode;
use protokg::rotate::CompletionModel;

use crate::config::Task;
use crate::error::{CliError, CliResult};
use crate::manifest::RunSettings;

#[derive(Debug, Parser)]
#[command(name = "protokg", version, about = "Prototype-augmented knowledge-graph embeddings")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Run single-threaded so repeated runs give byte-identical metrics.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Parent directory for new run directories.
    #[arg(long, global = true, env = "PROTOKG_RUNS_DIR", default_value = "runs")]
    pub out: PathBuf,
    /// Exact run directory to create instead of a timestamped one.
    #[arg(long, global = true)]
    pub run_dir: Option<PathBuf>,
    /// Directory that holds named datasets.
    #[arg(long, global = true, env = "PROTOKG_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

impl GlobalArgs {
    pub fn settings(&self) -> RunSettings {
        RunSettings {
            out_root: self.out.clone(),
            run_dir: self.run_dir.clone(),
            deterministic: self.deterministic,
            threads: self.effective_threads(),
        }
    }

    pub fn effective_threads(&self) -> Option<usize> {
        if self.deterministic {
            Some(1)
        } else {
            self.threads
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Relation, entity and triple counts of a dataset.
    Stats(StatsArgs),
    /// Train RotatE or RPE-RotatE for link prediction.
    TrainCompletion(TrainCompletionArgs),
    /// Train GCN or RPE-GCN for entity alignment.
    TrainAlignment(TrainAlignmentArgs),
    /// Recompute ranking metrics of a trained run.
    Evaluate(EvaluateArgs),
    /// Davies-Bouldin index of entity embeddings grouped by relation category.
    Dbi(DbiArgs),
    /// MRR of a baseline and an RPE run bucketed by entity degree.
    Longtail(LongtailArgs),
    /// Write entity embeddings with category labels as CSV.
    Export(ExportArgs),
    /// Numerical checks of the prototype-area lemma and theorems.
    TheoryCheck(TheoryArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Retrain across a grid of λ values and tabulate test metrics.
    LambdaSweep(SweepArgs),
    /// Write a synthetic fixture dataset as triple files.
    MakeFixture(MakeFixtureArgs),
    /// Print a resolved config as TOML, or list the shipped configs.
    ShowConfig(ShowConfigArgs),
}

fn parse_tie(s: &str) -> Result<TiePolicy, String> {
    match s {
        "mean" => Ok(TiePolicy::Mean),
        "optimistic" => Ok(TiePolicy::Optimistic),
        "pessimistic" => Ok(TiePolicy::Pessimistic),
        other => Err(format!("unknown tie policy `{other}` (mean, optimistic, pessimistic)")),
    }
}

fn parse_task(s: &str) -> Result<Task, String> {
    match s {
        "completion" => Ok(Task::Completion),
        "alignment" => Ok(Task::Alignment),
        other => Err(format!("unknown task `{other}` (completion, alignment)")),
    }
}

/// Config selection shared by the training-style commands.
#[derive(Debug, Clone, Args)]
pub struct SourceArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Shipped config name (e.g. `wn18rr`, `fixture`) or a dataset directory.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Master seed; for fixtures it also seeds the generator.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prototype weight λ in (0, 1]; 1 reproduces the baseline.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Tie policy for ranking: mean, optimistic or pessimistic.
    #[arg(long, value_parser = parse_tie)]
    pub tie_policy: Option<TiePolicy>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CompletionOverrides {
    /// `rotate` or `rpe-rotate`.
    #[arg(long)]
    pub model: Option<CompletionModel>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Negatives per positive.
    #[arg(long)]
    pub negatives: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AlignmentOverrides {
    /// `gcn` or `rpe-gcn`.
    #[arg(long)]
    pub mode: Option<GcnMode>,
    /// Use only the last layer's output instead of the mean over layers.
    #[arg(long)]
    pub no_layer_aggregation: bool,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_parser = parse_task, default_value = "completion")]
    pub task: Task,
}

#[derive(Debug, Clone, Args)]
pub struct TrainCompletionArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub overrides: CompletionOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct TrainAlignmentArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub overrides: AlignmentOverrides,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Training run directory.
    #[arg(long)]
    pub run: PathBuf,
    /// Completion only: rank the `valid` split instead of `test`.
    #[arg(long)]
    pub valid: bool,
    #[arg(long, value_parser = parse_tie)]
    pub tie_policy: Option<TiePolicy>,
}

#[derive(Debug, Clone, Args)]
pub struct DbiArgs {
    /// Training run directories (repeatable).
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Categories with fewer single-category members are dropped.
    #[arg(long, default_value_t = 5)]
    pub min_members: usize,
}

#[derive(Debug, Clone, Args)]
pub struct LongtailArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub rpe: PathBuf,
    /// Degree limits of the buckets; an `all` bucket is always added.
    #[arg(long, value_delimiter = ',', default_values_t = protokg::eval::DEFAULT_LONG_TAIL_THRESHOLDS)]
    pub thresholds: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    /// Only entities that belong to exactly one category with enough members.
    #[arg(long)]
    pub filtered: bool,
    #[arg(long, default_value_t = 5)]
    pub min_members: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TheoryArgs {
    /// Check the areas of a trained run.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Check the built-in separated instances plus an overlapping control.
    #[arg(long)]
    pub constructed: bool,
    /// Number of random lemma instances to check.
    #[arg(long)]
    pub lemma: Option<usize>,
    /// Complex dimension of the random lemma instances.
    #[arg(long, default_value_t = 8)]
    pub lemma_dim: usize,
    /// Push each lemma instance this far off the prototype assumption.
    #[arg(long, default_value_t = 0.0)]
    pub perturb: f64,
    /// Samples per area.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tolerance for the prototype assumption and area identity.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// `all`, `rotate`, `rpe-rotate`, `gcn` or `rpe-gcn`.
    #[arg(long, default_value = "all")]
    pub model: String,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Task to sweep; taken from `--config` when given.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<Task>,
    /// λ grid.
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    pub grid: Vec<f64>,
    #[command(flatten)]
    pub completion: CompletionOverrides,
    /// Alignment only: `gcn` or `rpe-gcn`.
    #[arg(long)]
    pub mode: Option<GcnMode>,
    /// Alignment only.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct MakeFixtureArgs {
    #[arg(long, value_parser = parse_task, default_value = "completion")]
    pub task: Task,
    /// Destination directory; it also receives the manifest.
    #[arg(long)]
    pub dest: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ShowConfigArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long, value_parser = parse_task, default_value = "completion")]
    pub task: Task,
    /// List shipped config names instead.
    #[arg(long)]
    pub list: bool,
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .try_init();
}

fn init_threads(global: &GlobalArgs) -> CliResult<()> {
    if let Some(n) = global.effective_threads() {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // a second initialization (e.g. in tests) keeps the first pool
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialized");
        }
    }
    Ok(())
}

/// Runs one parsed command; returns the run directory when one was written.
pub fn run(cli: Cli) -> CliResult<Option<PathBuf>> {
    init_logging(cli.global.verbose);
    init_threads(&cli.global)?;
    let g = &cli.global;
    use commands::*;
    match cli.command {
        Command::Stats(a) => data::stats(g, &a).map(Some),
        Command::TrainCompletion(a) => train::train_completion(g, &a).map(Some),
        Command::TrainAlignment(a) => train::train_alignment(g, &a).map(Some),
        Command::Evaluate(a) => report::evaluate(g, &a).map(Some),
        Command::Dbi(a) => report::dbi(g, &a).map(Some),
        Command::Longtail(a) => report::longtail(g, &a).map(Some),
        Command::Export(a) => report::export(g, &a).map(Some),
        Command::TheoryCheck(a) => theory::theory_check(g, &a).map(Some),
        Command::Gradcheck(a) => gradcheck::gradcheck(g, &a).map(Some),
        Command::LambdaSweep(a) => train::lambda_sweep(g, &a).map(Some),
        Command::MakeFixture(a) => data::make_fixture(g, &a).map(Some),
        Command::ShowConfig(a) => data::show_config(&a).map(|_| None),
    }
}
