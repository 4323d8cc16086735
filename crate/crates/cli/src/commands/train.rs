//! `train-completion`, `train-alignment` and `lambda-sweep`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use protokg::eval::{self, QueryRank, RankingReport, TiePolicy, COMPLETION_HITS};
use protokg::gcn::{train_alignment as fit_gcn, GcnMode, TrainedAlignment};
use protokg::kg::AugmentedGraph;
use protokg::rotate::{train_completion as fit_rotate, CompletionModel, TrainedCompletion};

use super::{resolve_alignment, resolve_completion, say};
use crate::checkpoint::{save_alignment, save_completion};
use crate::config::{peek_task, read_config_file, AlignmentRunConfig, CompletionRunConfig, Task};
use crate::dataset::{load_alignment, load_completion, LoadedAlignment, LoadedCompletion};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunDir, METRICS_FILE};
use crate::{AlignmentOverrides, GlobalArgs, SweepArgs, TrainAlignmentArgs, TrainCompletionArgs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionMetrics {
    pub task: Task,
    pub dataset: String,
    pub model: CompletionModel,
    /// λ in effect; the baseline always reports 1.
    pub lambda: f64,
    pub tie_policy: TiePolicy,
    pub test: RankingReport,
    pub best_step: usize,
    pub best_valid_mrr: Option<f64>,
    pub final_loss: Option<f64>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMetrics {
    pub task: Task,
    pub dataset: String,
    pub mode: GcnMode,
    pub lambda: f64,
    pub aggregate_all_layers: bool,
    pub tie_policy: TiePolicy,
    pub test: RankingReport,
    pub final_loss: Option<f64>,
    pub epochs: usize,
}

pub struct CompletionOutcome {
    pub trained: TrainedCompletion,
    pub queries: Vec<QueryRank>,
    pub report: RankingReport,
}

/// Trains and ranks the test split with the configured tie policy.
pub fn fit_completion(cfg: &CompletionRunConfig, data: &LoadedCompletion) -> CliResult<CompletionOutcome> {
    let ds = &data.dataset;
    let trained = fit_rotate(ds, &cfg.training, cfg.model)?;
    let queries = eval::completion_ranks(&ds.test, &trained.model, &ds.known_triples(), cfg.tie_policy);
    let ranks: Vec<usize> = queries.iter().map(|q| q.rank).collect();
    let report = RankingReport::from_ranks(&ranks, &COMPLETION_HITS)?;
    Ok(CompletionOutcome {
        trained,
        queries,
        report,
    })
}

impl CompletionOutcome {
    pub fn metrics(&self, cfg: &CompletionRunConfig) -> CompletionMetrics {
        CompletionMetrics {
            task: Task::Completion,
            dataset: cfg.dataset_name(),
            model: cfg.model,
            lambda: cfg.training.effective_lambda(cfg.model),
            tie_policy: cfg.tie_policy,
            test: self.report.clone(),
            best_step: self.trained.best_step,
            best_valid_mrr: self.trained.best_valid_mrr,
            final_loss: self.trained.curve.last().map(|s| s.loss),
            steps: self.trained.curve.len(),
        }
    }
}

pub struct AlignmentOutcome {
    pub trained: TrainedAlignment,
    pub report: RankingReport,
}

pub fn augmented(data: &LoadedAlignment) -> CliResult<[AugmentedGraph; 2]> {
    let [a, b] = data.graphs.clone();
    Ok([AugmentedGraph::new(a)?, AugmentedGraph::new(b)?])
}

pub fn fit_alignment(cfg: &AlignmentRunConfig, data: &LoadedAlignment) -> CliResult<AlignmentOutcome> {
    if data.seeds.test.is_empty() {
        return Err(protokg::Error::EmptyInput("test seed pairs".into()).into());
    }
    let graphs = augmented(data)?;
    let trained = fit_gcn([&graphs[0], &graphs[1]], &data.seeds, &cfg.training, cfg.mode)?;
    let [l, r] = &trained.embeddings;
    let report = eval::alignment_report(&data.seeds.test, l, r, cfg.tie_policy)?;
    Ok(AlignmentOutcome {
        trained,
        report: RankingReport { ranks: None, ..report },
    })
}

pub fn alignment_lambda(cfg: &AlignmentRunConfig) -> f64 {
    match cfg.mode {
        GcnMode::Gcn => 1.0,
        GcnMode::RpeGcn => cfg.training.lambda_weight,
    }
}

impl AlignmentOutcome {
    pub fn metrics(&self, cfg: &AlignmentRunConfig) -> AlignmentMetrics {
        AlignmentMetrics {
            task: Task::Alignment,
            dataset: cfg.dataset_name(),
            mode: cfg.mode,
            lambda: alignment_lambda(cfg),
            aggregate_all_layers: cfg.training.aggregate_all_layers,
            tie_policy: cfg.tie_policy,
            test: self.report.clone(),
            final_loss: self.trained.curve.last().map(|e| e.loss),
            epochs: self.trained.curve.len(),
        }
    }
}

fn queries_csv(data: &LoadedCompletion, queries: &[QueryRank]) -> String {
    let kg = &data.dataset.graph;
    let ent = |e: usize| kg.entities.label(e).map_or_else(|| e.to_string(), str::to_owned);
    let rel = |r: usize| kg.relations.label(r).map_or_else(|| r.to_string(), str::to_owned);
    let mut out = String::from("head,relation,tail,missing,rank\n");
    for q in queries {
        let t = q.triple;
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            ent(t.head),
            rel(t.relation),
            ent(t.tail),
            q.missing,
            q.rank
        ));
    }
    out
}

pub fn train_completion(g: &GlobalArgs, a: &TrainCompletionArgs) -> CliResult<PathBuf> {
    let mut cfg = resolve_completion(&a.source, &a.overrides)?;
    let data = load_completion(&mut cfg.dataset, &g.data_dir)?;
    let mut run = RunDir::create(&g.settings(), "train-completion", Some(cfg.training.seed))?;
    log::info!("training {:?} on {}", cfg.model, cfg.dataset_name());
    let out = fit_completion(&cfg, &data)?;
    save_completion(&mut run, &out.trained.model)?;
    run.write_text("loss.csv", &out.trained.curve_csv())?;
    run.write_text("queries.csv", &queries_csv(&data, &out.queries))?;
    run.write_json(METRICS_FILE, &out.metrics(&cfg))?;
    say(&out.report.to_table(&format!("{} test", cfg.dataset_name())));
    let dir = run.finish(&cfg, data.fingerprints)?;
    println!("run: {}", dir.display());
    Ok(dir)
}

pub fn train_alignment(g: &GlobalArgs, a: &TrainAlignmentArgs) -> CliResult<PathBuf> {
    let mut cfg = resolve_alignment(&a.source, &a.overrides)?;
    let data = load_alignment(&mut cfg.dataset, &g.data_dir, cfg.training.seed)?;
    let mut run = RunDir::create(&g.settings(), "train-alignment", Some(cfg.training.seed))?;
    log::info!("training {:?} on {}", cfg.mode, cfg.dataset_name());
    let out = fit_alignment(&cfg, &data)?;
    save_alignment(&mut run, &out.trained.params)?;
    run.write_text("loss.csv", &out.trained.curve_csv())?;
    run.write_json(METRICS_FILE, &out.metrics(&cfg))?;
    say(&out.report.to_table(&format!("{} test", cfg.dataset_name())));
    let dir = run.finish(&cfg, data.fingerprints)?;
    println!("run: {}", dir.display());
    Ok(dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub test: RankingReport,
}

fn sweep_csv(rows: &[SweepRow], hits: &[usize]) -> String {
    let mut out = String::from("lambda,mrr");
    for k in hits {
        out.push_str(&format!(",hits@{k}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!("{},{}", r.lambda, r.test.mrr));
        for k in hits {
            out.push_str(&format!(",{}", r.test.hits_at(*k).unwrap_or(f64::NAN)));
        }
        out.push('\n');
    }
    out
}

fn sweep_task(a: &SweepArgs) -> CliResult<Task> {
    if let Some(t) = a.task {
        return Ok(t);
    }
    match &a.source.config {
        Some(p) => peek_task(&read_config_file(p)?),
        None => Ok(Task::Completion),
    }
}

/// Retrains once per λ; the baseline models ignore λ, so completion sweeps
/// always train RPE-RotatE and alignment sweeps RPE-GCN unless told otherwise.
pub fn lambda_sweep(g: &GlobalArgs, a: &SweepArgs) -> CliResult<PathBuf> {
    if a.grid.is_empty() {
        return Err(CliError::Usage("empty λ grid".into()));
    }
    if let Some(bad) = a.grid.iter().find(|l| !(**l > 0.0 && **l <= 1.0)) {
        return Err(CliError::Usage(format!("λ {bad} outside (0, 1]")));
    }
    let mut source = a.source.clone();
    source.lambda = None;
    match sweep_task(a)? {
        Task::Completion => {
            let mut cfg = resolve_completion(&source, &a.completion)?;
            cfg.model = CompletionModel::RpeRotate;
            let data = load_completion(&mut cfg.dataset, &g.data_dir)?;
            let mut run = RunDir::create(&g.settings(), "lambda-sweep", Some(cfg.training.seed))?;
            let mut rows = Vec::with_capacity(a.grid.len());
            for &lambda in &a.grid {
                let mut c = cfg.clone();
                c.training.lambda_weight = lambda;
                log::info!("λ = {lambda}");
                let out = fit_completion(&c, &data)?;
                rows.push(SweepRow {
                    lambda,
                    test: out.report,
                });
            }
            let csv = sweep_outputs(&mut run, &rows, &COMPLETION_HITS, Task::Completion)?;
            finish_sweep(&csv, run, &cfg, &a.grid, data.fingerprints)
        }
        Task::Alignment => {
            let ov = AlignmentOverrides {
                mode: a.mode,
                epochs: a.epochs,
                dim: a.completion.dim,
                learning_rate: a.completion.learning_rate,
                ..Default::default()
            };
            let mut cfg = resolve_alignment(&source, &ov)?;
            if a.mode.is_none() {
                cfg.mode = GcnMode::RpeGcn;
            }
            let data = load_alignment(&mut cfg.dataset, &g.data_dir, cfg.training.seed)?;
            let mut run = RunDir::create(&g.settings(), "lambda-sweep", Some(cfg.training.seed))?;
            let mut rows = Vec::with_capacity(a.grid.len());
            for &lambda in &a.grid {
                let mut c = cfg.clone();
                c.training.lambda_weight = lambda;
                log::info!("λ = {lambda}");
                let out = fit_alignment(&c, &data)?;
                rows.push(SweepRow {
                    lambda,
                    test: out.report,
                });
            }
            let csv = sweep_outputs(&mut run, &rows, &eval::ALIGNMENT_HITS, Task::Alignment)?;
            finish_sweep(&csv, run, &cfg, &a.grid, data.fingerprints)
        }
    }
}

fn sweep_outputs(run: &mut RunDir, rows: &[SweepRow], hits: &[usize], task: Task) -> CliResult<String> {
    let csv = sweep_csv(rows, hits);
    run.write_text("lambda_sweep.csv", &csv)?;
    run.write_json(METRICS_FILE, &serde_json::json!({ "task": task, "sweep": rows }))?;
    Ok(csv)
}

fn finish_sweep<C: Serialize>(
    csv: &str,
    run: RunDir,
    cfg: &C,
    grid: &[f64],
    fingerprints: crate::dataset::Fingerprints,
) -> CliResult<PathBuf> {
    say(csv);
    let dir = run.finish(&serde_json::json!({ "base": cfg, "grid": grid }), fingerprints)?;
    println!("run: {}", dir.display());
    Ok(dir)
}
