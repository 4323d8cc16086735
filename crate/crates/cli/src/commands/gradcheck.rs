//! `gradcheck`: analytic gradients against central finite differences on
//! small synthetic graphs.

use std::path::PathBuf;
use std::time::Instant;

use serde::Serialize;

use protokg::gcn::{check_objective_gradients, Activation, GcnConfig, GcnMode};
use protokg::gradcheck::GradCheckReport;
use protokg::kg::AugmentedGraph;
use protokg::rotate::{check_loss_gradients, CompletionConfig, CompletionModel};
use protokg::synth::{alignment_fixture, category_graph, AlignmentFixtureConfig, CategoryGraphConfig};

use super::say;
use crate::dataset::Fingerprints;
use crate::error::{CliError, CliResult};
use crate::manifest::RunDir;
use crate::{GlobalArgs, GradcheckArgs};

/// Finite-difference step; smaller steps are dominated by round-off.
const STEP: f64 = 1e-4;
/// Positives per checked batch.
const BATCH: usize = 8;

#[derive(Debug, Clone, Serialize)]
pub struct ModelCheck {
    pub model: String,
    pub report: GradCheckReport,
}

fn small_graph(seed: u64) -> CategoryGraphConfig {
    CategoryGraphConfig {
        entities: 16,
        relations: 2,
        triples_per_relation: 10,
        seed,
        ..Default::default()
    }
}

fn check_rotate(kind: CompletionModel, dim: usize, seed: u64, tol: f64) -> CliResult<GradCheckReport> {
    let cfg = small_graph(seed);
    let g = category_graph(&cfg)?;
    let config = CompletionConfig {
        dim,
        batch_size: BATCH,
        negative_sample_size: 4,
        seed,
        ..Default::default()
    };
    Ok(check_loss_gradients(
        cfg.entities,
        cfg.relations,
        &g.triples,
        &config,
        kind,
        BATCH,
        STEP,
        tol,
    )?)
}

fn check_gcn(mode: GcnMode, dim: usize, seed: u64, tol: f64) -> CliResult<GradCheckReport> {
    let f = alignment_fixture(&AlignmentFixtureConfig {
        graph: small_graph(seed),
        train_fraction: 0.5,
    })?;
    let [a, b] = f.graphs;
    let graphs = [AugmentedGraph::new(a)?, AugmentedGraph::new(b)?];
    let train: Vec<(usize, usize)> = f.seeds.train.iter().copied().take(BATCH).collect();
    let config = GcnConfig {
        dim,
        activation: Activation::Tanh,
        negatives_per_positive: 2,
        margin: 3.0,
        dropout_rate: 0.0,
        seed,
        ..Default::default()
    };
    Ok(check_objective_gradients(
        [&graphs[0], &graphs[1]],
        &train,
        &config,
        mode,
        STEP,
        tol,
    )?)
}

/// Runs the selected checks; `model` is `all` or one model name.
pub fn run_checks(model: &str, dim: usize, seed: u64, tol: f64) -> CliResult<Vec<ModelCheck>> {
    let names: Vec<&str> = match model {
        "all" => vec!["rotate", "rpe-rotate", "gcn", "rpe-gcn"],
        m @ ("rotate" | "rpe-rotate" | "gcn" | "rpe-gcn") => vec![m],
        other => {
            return Err(CliError::Usage(format!(
                "unknown model `{other}` (all, rotate, rpe-rotate, gcn, rpe-gcn)"
            )))
        }
    };
    names
        .into_iter()
        .map(|m| {
            let report = match m {
                "rotate" => check_rotate(CompletionModel::Rotate, dim, seed, tol)?,
                "rpe-rotate" => check_rotate(CompletionModel::RpeRotate, dim, seed, tol)?,
                "gcn" => check_gcn(GcnMode::Gcn, dim, seed, tol)?,
                _ => check_gcn(GcnMode::RpeGcn, dim, seed, tol)?,
            };
            Ok(ModelCheck {
                model: m.to_owned(),
                report,
            })
        })
        .collect()
}

pub fn gradcheck(g: &GlobalArgs, a: &GradcheckArgs) -> CliResult<PathBuf> {
    let start = Instant::now();
    let checks = run_checks(&a.model, a.dim, a.seed, a.tolerance)?;
    let mut table = format!("{:<12}{:>10}{:>14}{:>8}\n", "model", "coords", "max rel err", "ok");
    for c in &checks {
        table.push_str(&format!(
            "{:<12}{:>10}{:>14.3e}{:>8}\n",
            c.model, c.report.checked, c.report.max_rel_error, c.report.passed
        ));
    }
    say(&table);
    println!("elapsed: {:.2}s", start.elapsed().as_secs_f64());
    let mut run = RunDir::create(&g.settings(), "gradcheck", Some(a.seed))?;
    run.write_json("gradcheck.json", &checks)?;
    let dir = run.finish(
        &serde_json::json!({
            "model": a.model,
            "dim": a.dim,
            "seed": a.seed,
            "tolerance": a.tolerance,
            "step": STEP,
            "batch": BATCH,
        }),
        Fingerprints::new(),
    )?;
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.report.passed)
        .map(|c| c.model.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::CheckFailed(format!("gradient mismatch for {}", failed.join(", "))));
    }
    Ok(dir)
}
