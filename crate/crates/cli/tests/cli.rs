//! End-to-end behaviour of the `protokg` binary and its config resolution.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use protokg::gcn::{Activation, GcnMode};
use protokg::rotate::CompletionModel;
use protokg_cli::commands::{resolve_alignment, resolve_completion};
use protokg_cli::config::{shipped, shipped_names, AlignmentRunConfig, CompletionRunConfig, Task};
use protokg_cli::{AlignmentOverrides, CompletionOverrides, SourceArgs};
use serde_json::Value;

fn protokg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protokg"))
        .args(args)
        .env_remove("PROTOKG_RUNS_DIR")
        .env("PROTOKG_DATA_DIR", dir.join("data"))
        .current_dir(dir)
        .output()
        .expect("spawn protokg")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn metrics(run: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(run.join("metrics.json")).unwrap()).unwrap()
}

fn source(dataset: Option<&str>) -> SourceArgs {
    SourceArgs {
        config: None,
        dataset: dataset.map(str::to_owned),
        seed: None,
        lambda: None,
        tie_policy: None,
    }
}

#[test]
fn completion_configs_resolve_benchmark_settings() {
    // (name, k, b, b', γ, α, λ, lr)
    let rows = [
        ("wn18rr", 500, 512, 1024, 6.0, 0.5, 0.5, 0.00005),
        ("fb15k-237", 1000, 1024, 256, 9.0, 1.0, 0.5, 0.00005),
        ("yago3-10", 500, 1024, 400, 24.0, 1.0, 0.5, 0.0002),
    ];
    for (name, k, b, neg, gamma, alpha, lambda, lr) in rows {
        let c = resolve_completion(&source(Some(name)), &CompletionOverrides::default()).unwrap();
        let t = &c.training;
        assert_eq!((t.dim, t.batch_size, t.negative_sample_size), (k, b, neg), "{name}");
        assert_eq!((t.margin, t.adversarial_temperature, t.lambda_weight, t.learning_rate), (gamma, alpha, lambda, lr), "{name}");
        assert_eq!(c.model, CompletionModel::RpeRotate);
        assert!(c.expected_runtime.is_some());
    }
}

#[test]
fn alignment_configs_resolve_benchmark_settings() {
    for name in ["dbp-zh-en", "dbp-ja-en", "dbp-fr-en", "dbp-wd", "dbp-yg"] {
        let c = resolve_alignment(&source(Some(name)), &AlignmentOverrides::default()).unwrap();
        let t = &c.training;
        assert_eq!((t.dim, t.num_layers), (128, 2), "{name}");
        assert_eq!((t.margin, t.lambda_weight, t.l2_weight, t.learning_rate, t.dropout_rate), (1.0, 0.5, 0.01, 0.001, 0.2), "{name}");
        assert_eq!((t.negatives_per_positive, t.negative_refresh_epochs), (25, 5));
        assert_eq!(t.activation, Activation::Relu);
        assert!(t.aggregate_all_layers);
        assert_eq!(c.mode, GcnMode::RpeGcn);
    }
}

#[test]
fn flags_override_config_values() {
    let src = SourceArgs {
        lambda: Some(0.7),
        seed: Some(42),
        ..source(Some("yago3-10"))
    };
    let ov = CompletionOverrides {
        model: Some(CompletionModel::Rotate),
        dim: Some(16),
        ..Default::default()
    };
    let c = resolve_completion(&src, &ov).unwrap();
    assert_eq!((c.training.lambda_weight, c.training.seed, c.training.dim), (0.7, 42, 16));
    assert_eq!(c.model, CompletionModel::Rotate);

    let ov = AlignmentOverrides {
        no_layer_aggregation: true,
        ..Default::default()
    };
    let a = resolve_alignment(&source(None), &ov).unwrap();
    assert!(!a.training.aggregate_all_layers);
    let bad = SourceArgs {
        lambda: Some(1.5),
        ..source(None)
    };
    assert!(resolve_completion(&bad, &CompletionOverrides::default()).is_err());
}

#[test]
fn shipped_configs_round_trip() {
    for name in shipped_names(Task::Completion) {
        let c = CompletionRunConfig::from_toml(shipped(Task::Completion, name).unwrap()).unwrap();
        assert_eq!(CompletionRunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c, "{name}");
    }
    for name in shipped_names(Task::Alignment) {
        let c = AlignmentRunConfig::from_toml(shipped(Task::Alignment, name).unwrap()).unwrap();
        assert_eq!(AlignmentRunConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c, "{name}");
    }
}

#[test]
fn lambda_one_rpe_run_reproduces_rotate_run() {
    let tmp = tempfile::tempdir().unwrap();
    let common = ["--deterministic", "train-completion", "--max-steps", "150", "--lambda", "1.0"];
    let run = |name: &str, model: &str| {
        let dir = tmp.path().join(name);
        let mut args = vec!["--run-dir", dir.to_str().unwrap()];
        args.extend(common);
        args.extend(["--model", model]);
        ok(&protokg(tmp.path(), &args));
        metrics(&dir)
    };
    let (base, rpe) = (run("base", "rotate"), run("rpe", "rpe-rotate"));
    assert_eq!(base["test"], rpe["test"]);
    assert_eq!(base["final_loss"], rpe["final_loss"]);
    assert_eq!(rpe["lambda"], 1.0);
}

#[test]
fn fixture_completion_run_writes_its_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let start = std::time::Instant::now();
    ok(&protokg(tmp.path(), &["--run-dir", dir.to_str().unwrap(), "train-completion"]));
    assert!(start.elapsed().as_secs() < 60, "{:?}", start.elapsed());
    for f in ["manifest.json", "metrics.json", "loss.csv", "checkpoint/entities.bin", "checkpoint/relations.bin"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let m = metrics(&dir);
    assert!(m["test"]["mrr"].as_f64().unwrap() > 0.0);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "train-completion");
}

#[test]
fn fixture_alignment_run_reports_nonzero_hits() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    ok(&protokg(tmp.path(), &["--run-dir", dir.to_str().unwrap(), "train-alignment", "--epochs", "100"]));
    let m = metrics(&dir);
    assert!(m["test"]["hits"]["1"].as_f64().unwrap() > 0.0, "{m}");
}

#[test]
fn sweep_writes_one_row_per_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("sweep");
    ok(&protokg(
        tmp.path(),
        &["--run-dir", dir.to_str().unwrap(), "lambda-sweep", "--task", "completion", "--max-steps", "20"],
    ));
    let csv = fs::read_to_string(dir.join("lambda_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with("lambda,mrr"));
    assert!(lines[10].starts_with("1,") || lines[10].starts_with("1.0,"), "{}", lines[10]);
}

#[test]
fn changed_dataset_files_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("fixture-data");
    let run = tmp.path().join("run");
    ok(&protokg(tmp.path(), &["make-fixture", "--dest", data.to_str().unwrap()]));
    ok(&protokg(
        tmp.path(),
        &["--run-dir", run.to_str().unwrap(), "train-completion", "--dataset", data.to_str().unwrap(), "--max-steps", "20"],
    ));
    let eval = tmp.path().join("eval");
    ok(&protokg(tmp.path(), &["--run-dir", eval.to_str().unwrap(), "evaluate", "--run", run.to_str().unwrap()]));

    let test = data.join("test.txt");
    let mut text = fs::read_to_string(&test).unwrap();
    let first = text.lines().next().unwrap().to_owned();
    text.push_str(&first);
    text.push('\n');
    fs::write(&test, text).unwrap();
    let out = protokg(tmp.path(), &["evaluate", "--run", run.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn failures_exit_with_categorized_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let code = |args: &[&str]| protokg(tmp.path(), args).status.code();
    assert_eq!(code(&["no-such-command"]), Some(2));
    assert_eq!(code(&["train-completion", "--dataset", "no-such-config"]), Some(3));
    assert_eq!(code(&["train-completion", "--dataset", "wn18rr"]), Some(4));
    assert_eq!(code(&["evaluate", "--run", "missing-run"]), Some(8));
}

#[test]
fn constructed_theory_check_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("theory");
    let stdout = ok(&protokg(tmp.path(), &["--run-dir", dir.to_str().unwrap(), "theory-check", "--constructed"]));
    let report: Value = serde_json::from_str(&fs::read_to_string(dir.join("theory.json")).unwrap()).unwrap();
    assert!(!stdout.is_empty());
    let entries = report["entries"].as_array().unwrap();
    // the overlapping control fails its premise; everything else must verify
    assert!(entries.iter().all(|e| e["conclusion_verified"] != false), "{report}");
    assert!(entries.iter().any(|e| e["conclusion_verified"] == true));
}
