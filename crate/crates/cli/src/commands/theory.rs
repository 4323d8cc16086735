//! `theory-check`: the prototype-area lemma and theorems, numerically.

use std::path::PathBuf;

use protokg::gcn::{gcn_forward, GcnMode};
use protokg::geometry::{
    build_areas, check_all_completion, check_theorem_alignment, constructed_completion_instance,
    LemmaInstance, PrototypeArea, SampleOptions, TheoryReport, EXACT_TOL,
};
use protokg::kg::AugmentedGraph;
use protokg::matrix::Matrix;
use protokg::rng::{self, Stream};

use super::say;
use super::train::augmented;
use crate::checkpoint::{open_run, AlignmentRun, TrainedRun};
use crate::dataset::Fingerprints;
use crate::error::{CliError, CliResult};
use crate::manifest::RunDir;
use crate::{GlobalArgs, TheoryArgs};

fn options(a: &TheoryArgs, default_tol: f64) -> SampleOptions {
    SampleOptions {
        per_region: a.samples,
        tolerance: a.tolerance.unwrap_or(default_tol),
        ..Default::default()
    }
}

fn merge(into: &mut TheoryReport, other: TheoryReport) {
    into.entries.extend(other.entries);
    into.min_prototype_distance = match (into.min_prototype_distance, other.min_prototype_distance) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    };
}

/// Separated completion instance, plus the alignment theorems on a copy of
/// its areas matched with itself.
pub fn constructed_report(opts: &SampleOptions, seed: u64) -> CliResult<TheoryReport> {
    let (areas, phases) = constructed_completion_instance();
    let mut report = check_all_completion(&areas, &phases, opts, seed)?;
    let pairs: Vec<(usize, usize)> = (0..areas.len()).map(|i| (i, i)).collect();
    let mut rng = rng::stream(seed, Stream::TheorySampling);
    merge(&mut report, check_theorem_alignment(&areas, &areas, &pairs, opts, &mut rng)?);
    Ok(report)
}

pub fn lemma_report(count: usize, dim: usize, perturb: f64, tol: f64, seed: u64) -> TheoryReport {
    let mut rng = rng::stream(seed, Stream::TheorySampling);
    TheoryReport {
        entries: (0..count)
            .map(|_| LemmaInstance::random(dim, perturb, &mut rng).check(tol))
            .collect(),
        min_prototype_distance: None,
    }
}

/// Mean (or last) layer of every node, prototypes included.
fn node_states(graph: &AugmentedGraph, run: &AlignmentRun, side: usize) -> CliResult<Matrix> {
    let cfg = &run.config.training;
    let cache = gcn_forward(graph, &run.params.graphs[side], &run.params.weights, cfg, run.config.mode)?;
    let last = cache.layers.last().expect("at least one layer");
    if !cfg.aggregate_all_layers {
        return Ok(last.clone());
    }
    let mut out = Matrix::zeros(last.rows(), last.cols());
    for l in &cache.layers {
        out.add_assign(l);
    }
    out.scale(1.0 / cache.layers.len() as f64);
    Ok(out)
}

/// Pairs areas of relations whose labels occur in both graphs.
fn corresponding_areas(g1: &AugmentedGraph, g2: &AugmentedGraph) -> Vec<(usize, usize)> {
    let (m1, m2) = (g1.num_relations(), g2.num_relations());
    let mut pairs = Vec::new();
    for r1 in 0..m1 {
        let Some(label) = g1.base.relations.label(r1) else { continue };
        let Some(r2) = g2.base.relations.id(label) else { continue };
        pairs.push((r1, r2));
        pairs.push((m1 + r1, m2 + r2));
    }
    pairs
}

pub fn run_report(trained: &TrainedRun, opts: &SampleOptions, seed: u64) -> CliResult<TheoryReport> {
    match trained {
        TrainedRun::Completion(r) => {
            let graph = AugmentedGraph::new(r.data.dataset.graph.clone())?;
            let areas = build_areas(&r.model.entities, &graph, r.model.lambda)?;
            let phases: Vec<Vec<f64>> = (0..r.model.num_relations())
                .map(|i| r.model.relations.row(i).to_vec())
                .collect();
            Ok(check_all_completion(&areas, &phases, opts, seed)?)
        }
        TrainedRun::Alignment(r) => {
            if r.config.mode != GcnMode::RpeGcn {
                return Err(CliError::Usage(
                    "plain GCN runs have no prototype nodes to check".into(),
                ));
            }
            let graphs = augmented(&r.data)?;
            // the propagated states already carry the λ blend
            let areas: Vec<Vec<PrototypeArea>> = (0..2)
                .map(|s| Ok(build_areas(&node_states(&graphs[s], r, s)?, &graphs[s], 1.0)?))
                .collect::<CliResult<_>>()?;
            let pairs = corresponding_areas(&graphs[0], &graphs[1]);
            let mut rng = rng::stream(seed, Stream::TheorySampling);
            Ok(check_theorem_alignment(&areas[0], &areas[1], &pairs, opts, &mut rng)?)
        }
    }
}

pub fn theory_check(g: &GlobalArgs, a: &TheoryArgs) -> CliResult<PathBuf> {
    let mut report = TheoryReport::default();
    let mut fingerprints = Fingerprints::new();
    let constructed = a.constructed || (a.run.is_none() && a.lemma.is_none());
    if constructed {
        merge(&mut report, constructed_report(&options(a, EXACT_TOL), a.seed)?);
    }
    if let Some(n) = a.lemma {
        let tol = a.tolerance.unwrap_or(EXACT_TOL);
        merge(&mut report, lemma_report(n, a.lemma_dim, a.perturb, tol, a.seed));
    }
    if let Some(dir) = &a.run {
        let trained = open_run(dir, &g.data_dir)?;
        merge(&mut report, run_report(&trained, &options(a, SampleOptions::default().tolerance), a.seed)?);
        fingerprints = match &trained {
            TrainedRun::Completion(r) => r.manifest.dataset_fingerprints.clone(),
            TrainedRun::Alignment(r) => r.manifest.dataset_fingerprints.clone(),
        };
    }
    let mut run = RunDir::create(&g.settings(), "theory-check", Some(a.seed))?;
    if let Some(dir) = &a.run {
        run.add_input("run", dir);
    }
    run.write_text("theory.json", &format!("{}\n", report.to_json()?))?;
    let text = report.to_text();
    run.write_text("theory.txt", &text)?;
    say(&text);
    let dir = run.finish(
        &serde_json::json!({
            "constructed": constructed,
            "lemma": a.lemma,
            "lemma_dim": a.lemma_dim,
            "perturb": a.perturb,
            "run": a.run,
            "samples": a.samples,
            "seed": a.seed,
            "tolerance": a.tolerance,
        }),
        fingerprints,
    )?;
    if report.violations() > 0 {
        return Err(CliError::CheckFailed(format!(
            "{} of {} checks violated (see {})",
            report.violations(),
            report.entries.len(),
            dir.join("theory.txt").display()
        )));
    }
    Ok(dir)
}
