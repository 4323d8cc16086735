//! Commands that read trained runs: `evaluate`, `dbi`, `longtail`, `export`.

use std::path::PathBuf;

use serde::Serialize;

use protokg::eval::{
    self, all_categories, davies_bouldin, export_embeddings_with_categories, filtered_categories,
    long_tail_report, CategoryAssignment, RankingReport, TiePolicy, COMPLETION_HITS,
};
use protokg::gcn::AlignmentProblem;
use protokg::kg::KnowledgeGraph;
use protokg::matrix::Matrix;

use super::say;
use super::train::{alignment_lambda, augmented};
use crate::checkpoint::{open_run, AlignmentRun, CompletionRun, TrainedRun};
use crate::dataset::{check_fingerprints, Fingerprints};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunDir, METRICS_FILE};
use crate::{DbiArgs, EvaluateArgs, ExportArgs, GlobalArgs, LongtailArgs};

fn completion_entity_rows(run: &CompletionRun) -> Matrix {
    let t = &run.model.entities;
    let n = run.model.num_entities();
    Matrix::from_vec(n, t.width(), t.values()[..n * t.width()].to_vec())
}

fn alignment_embeddings(run: &AlignmentRun) -> CliResult<[Matrix; 2]> {
    let graphs = augmented(&run.data)?;
    let cfg = &run.config;
    let problem = AlignmentProblem::new([&graphs[0], &graphs[1]], cfg.mode, cfg.training.lambda_weight)?;
    Ok(problem.embed(&run.params, &cfg.training)?)
}

/// The graph whose relation categories label the rows, and the rows: raw
/// entity embeddings for completion, final G1 embeddings for alignment.
fn labeled_rows(run: &TrainedRun) -> CliResult<(KnowledgeGraph, Matrix)> {
    match run {
        TrainedRun::Completion(r) => Ok((r.data.dataset.graph.clone(), completion_entity_rows(r))),
        TrainedRun::Alignment(r) => {
            let [g1, _] = alignment_embeddings(r)?;
            Ok((r.data.graphs[0].clone(), g1))
        }
    }
}

fn model_name(run: &TrainedRun) -> String {
    match run {
        TrainedRun::Completion(r) => serde_json::to_value(r.config.model),
        TrainedRun::Alignment(r) => serde_json::to_value(r.config.mode),
    }
    .ok()
    .and_then(|v| v.as_str().map(str::to_owned))
    .unwrap_or_default()
}

fn lambda_of(run: &TrainedRun) -> f64 {
    match run {
        TrainedRun::Completion(r) => r.model.lambda,
        TrainedRun::Alignment(r) => alignment_lambda(&r.config),
    }
}

fn fingerprints_of(run: &TrainedRun) -> &Fingerprints {
    match run {
        TrainedRun::Completion(r) => &r.manifest.dataset_fingerprints,
        TrainedRun::Alignment(r) => &r.manifest.dataset_fingerprints,
    }
}

#[derive(Debug, Serialize)]
struct EvaluateMetrics {
    run: PathBuf,
    split: &'static str,
    tie_policy: TiePolicy,
    report: RankingReport,
}

pub fn evaluate(g: &GlobalArgs, a: &EvaluateArgs) -> CliResult<PathBuf> {
    let trained = open_run(&a.run, &g.data_dir)?;
    let (split, policy, report) = match &trained {
        TrainedRun::Completion(r) => {
            let ds = &r.data.dataset;
            let policy = a.tie_policy.unwrap_or(r.config.tie_policy);
            let (split, triples) = if a.valid {
                ("valid", &ds.valid)
            } else {
                ("test", &ds.test)
            };
            let ranks: Vec<usize> = eval::completion_ranks(triples, &r.model, &ds.known_triples(), policy)
                .iter()
                .map(|q| q.rank)
                .collect();
            (split, policy, RankingReport::from_ranks(&ranks, &COMPLETION_HITS)?)
        }
        TrainedRun::Alignment(r) => {
            if a.valid {
                return Err(CliError::Usage("alignment runs have no validation split".into()));
            }
            let policy = a.tie_policy.unwrap_or(r.config.tie_policy);
            let [l, rt] = alignment_embeddings(r)?;
            let report = eval::alignment_report(&r.data.seeds.test, &l, &rt, policy)?;
            ("test", policy, RankingReport { ranks: None, ..report })
        }
    };
    let mut run = RunDir::create(&g.settings(), "evaluate", None)?;
    run.add_input("run", &a.run);
    let metrics = EvaluateMetrics {
        run: a.run.clone(),
        split,
        tie_policy: policy,
        report,
    };
    run.write_json(METRICS_FILE, &metrics)?;
    say(&metrics.report.to_table(&format!("{} {split}", a.run.display())));
    let dir = run.finish(
        &serde_json::json!({ "run": a.run, "split": split, "tie_policy": policy }),
        fingerprints_of(&trained).clone(),
    )?;
    Ok(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct DbiEntry {
    pub run: PathBuf,
    pub model: String,
    pub lambda: f64,
    pub categories: usize,
    pub entities: usize,
    pub dbi: f64,
}

/// DBI of one trained run over its single-category entities.
pub fn run_dbi(trained: &TrainedRun, min_members: usize) -> CliResult<DbiEntry> {
    let (kg, rows) = labeled_rows(trained)?;
    let clusters = CategoryAssignment::from_graph(&kg).filtered(min_members).member_lists();
    if clusters.len() < 2 {
        return Err(CliError::Core(protokg::Error::Degenerate(format!(
            "{} categories with at least {min_members} members; DBI needs two",
            clusters.len()
        ))));
    }
    Ok(DbiEntry {
        run: trained.dir().to_path_buf(),
        model: model_name(trained),
        lambda: lambda_of(trained),
        categories: clusters.len(),
        entities: clusters.iter().map(Vec::len).sum(),
        dbi: davies_bouldin(&rows, &clusters)?,
    })
}

pub fn dbi(g: &GlobalArgs, a: &DbiArgs) -> CliResult<PathBuf> {
    let mut entries = Vec::with_capacity(a.runs.len());
    let mut fingerprints = Fingerprints::new();
    for (i, dir) in a.runs.iter().enumerate() {
        let trained = open_run(dir, &g.data_dir)?;
        entries.push(run_dbi(&trained, a.min_members)?);
        for (k, v) in fingerprints_of(&trained) {
            fingerprints.insert(format!("run{i}/{k}"), v.clone());
        }
    }
    let mut run = RunDir::create(&g.settings(), "dbi", None)?;
    for (i, dir) in a.runs.iter().enumerate() {
        run.add_input(&format!("run{i}"), dir);
    }
    run.write_json("dbi.json", &entries)?;
    let mut table = format!("{:<12}{:>8}{:>12}{:>10}\n", "model", "lambda", "categories", "DBI");
    for e in &entries {
        table.push_str(&format!(
            "{:<12}{:>8.2}{:>12}{:>10.4}\n",
            e.model, e.lambda, e.categories, e.dbi
        ));
    }
    say(&table);
    run.finish(
        &serde_json::json!({ "runs": a.runs, "min_members": a.min_members }),
        fingerprints,
    )
}

/// Per-query degrees plus baseline and RPE ranks on the same queries.
pub struct PairedRanks {
    pub degrees: Vec<usize>,
    pub baseline: Vec<usize>,
    pub rpe: Vec<usize>,
}

/// Ranks both runs on the shared test queries. Completion queries are keyed
/// by the answer entity's degree, alignment queries by the query entity's.
pub fn paired_ranks(baseline: &TrainedRun, rpe: &TrainedRun) -> CliResult<PairedRanks> {
    check_fingerprints(fingerprints_of(baseline), fingerprints_of(rpe))?;
    match (baseline, rpe) {
        (TrainedRun::Completion(b), TrainedRun::Completion(r)) => {
            let ds = &r.data.dataset;
            if b.data.dataset.test != ds.test {
                return Err(CliError::Usage("the two runs have different test splits".into()));
            }
            let known = ds.known_triples();
            let policy = r.config.tie_policy;
            let qb = eval::completion_ranks(&ds.test, &b.model, &known, policy);
            let qr = eval::completion_ranks(&ds.test, &r.model, &known, policy);
            Ok(PairedRanks {
                degrees: eval::answer_degrees(&qr, &ds.graph.degrees()),
                baseline: qb.iter().map(|q| q.rank).collect(),
                rpe: qr.iter().map(|q| q.rank).collect(),
            })
        }
        (TrainedRun::Alignment(b), TrainedRun::Alignment(r)) => {
            let test = &r.data.seeds.test;
            if &b.data.seeds.test != test {
                return Err(CliError::Usage(
                    "the two runs have different test seed pairs (train them with the same seed)".into(),
                ));
            }
            let policy = r.config.tie_policy;
            let [bl, br] = alignment_embeddings(b)?;
            let [rl, rr] = alignment_embeddings(r)?;
            let d1 = r.data.graphs[0].degrees();
            let d2 = r.data.graphs[1].degrees();
            let degrees = test
                .iter()
                .map(|&(i, _)| d1[i])
                .chain(test.iter().map(|&(_, j)| d2[j]))
                .collect();
            Ok(PairedRanks {
                degrees,
                baseline: eval::alignment_ranks(test, &bl, &br, policy),
                rpe: eval::alignment_ranks(test, &rl, &rr, policy),
            })
        }
        _ => Err(CliError::Usage("cannot compare a completion run with an alignment run".into())),
    }
}

pub fn longtail(g: &GlobalArgs, a: &LongtailArgs) -> CliResult<PathBuf> {
    let base = open_run(&a.baseline, &g.data_dir)?;
    let rpe = open_run(&a.rpe, &g.data_dir)?;
    let paired = paired_ranks(&base, &rpe)?;
    let report = long_tail_report(&paired.degrees, &paired.baseline, &paired.rpe, &a.thresholds)?;
    let mut run = RunDir::create(&g.settings(), "longtail", None)?;
    run.add_input("baseline", &a.baseline);
    run.add_input("rpe", &a.rpe);
    run.write_json("longtail.json", &report)?;
    say(&report.to_table());
    run.finish(
        &serde_json::json!({ "baseline": a.baseline, "rpe": a.rpe, "thresholds": a.thresholds }),
        fingerprints_of(&rpe).clone(),
    )
}

pub fn export(g: &GlobalArgs, a: &ExportArgs) -> CliResult<PathBuf> {
    let trained = open_run(&a.run, &g.data_dir)?;
    let (kg, rows) = labeled_rows(&trained)?;
    let assign = CategoryAssignment::from_graph(&kg);
    let entities = if a.filtered {
        filtered_categories(&assign.filtered(a.min_members))
    } else {
        all_categories(&assign)
    };
    let count = entities.len();
    let mut run = RunDir::create(&g.settings(), "export", None)?;
    run.add_input("run", &a.run);
    let path = run.output("embeddings.csv");
    export_embeddings_with_categories(&path, &kg, &rows, entities)?;
    println!("{count} rows -> {}", path.display());
    run.finish(
        &serde_json::json!({ "run": a.run, "filtered": a.filtered, "min_members": a.min_members }),
        fingerprints_of(&trained).clone(),
    )
}
