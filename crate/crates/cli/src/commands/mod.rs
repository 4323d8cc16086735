//! Subcommand implementations.

pub mod data;
pub mod gradcheck;
pub mod report;
pub mod theory;
pub mod train;

use std::path::{Path, PathBuf};

use protokg::kg::TripleFormat;

use crate::config::{
    base_text, shipped, AlignmentData, AlignmentRunConfig, CompletionData, CompletionRunConfig, Task,
};
use crate::error::CliResult;
use crate::{AlignmentOverrides, CompletionOverrides, SourceArgs};

fn dir_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// `--dataset` replaces the config's data source unless it only selected the
/// shipped config itself.
enum DatasetChoice {
    Keep,
    Fixture,
    Named(String),
    Dir(PathBuf),
}

fn dataset_choice(src: &SourceArgs) -> DatasetChoice {
    match src.dataset.as_deref() {
        None => DatasetChoice::Keep,
        Some(d) if Path::new(d).is_dir() => DatasetChoice::Dir(PathBuf::from(d)),
        // without --config the name already picked the shipped config
        Some(_) if src.config.is_none() => DatasetChoice::Keep,
        Some("fixture") => DatasetChoice::Fixture,
        Some(d) => DatasetChoice::Named(d.to_owned()),
    }
}

/// Config file or shipped config, then `--dataset`, `--seed`, `--lambda`,
/// `--tie-policy` and the model flags, in that order.
pub fn resolve_completion(src: &SourceArgs, ov: &CompletionOverrides) -> CliResult<CompletionRunConfig> {
    let text = base_text(Task::Completion, src.config.as_deref(), src.dataset.as_deref())?;
    let mut cfg = CompletionRunConfig::from_toml(&text)?;
    match dataset_choice(src) {
        DatasetChoice::Keep => {}
        DatasetChoice::Fixture => {
            cfg.dataset = CompletionRunConfig::from_toml(shipped(Task::Completion, "fixture")?)?.dataset
        }
        DatasetChoice::Named(name) => {
            cfg.dataset = CompletionData::Directory {
                name,
                path: None,
                format: TripleFormat::default(),
            }
        }
        DatasetChoice::Dir(p) => {
            cfg.dataset = CompletionData::Directory {
                name: dir_name(&p),
                path: Some(p),
                format: TripleFormat::default(),
            }
        }
    }
    if let Some(s) = src.seed {
        cfg.set_seed(s);
    }
    if let Some(l) = src.lambda {
        cfg.training.lambda_weight = l;
    }
    if let Some(t) = src.tie_policy {
        cfg.tie_policy = t;
    }
    let t = &mut cfg.training;
    if let Some(m) = ov.model {
        cfg.model = m;
    }
    if let Some(v) = ov.dim {
        t.dim = v;
    }
    if let Some(v) = ov.max_steps {
        t.max_steps = v;
    }
    if let Some(v) = ov.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = ov.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = ov.negatives {
        t.negative_sample_size = v;
    }
    if let Some(v) = ov.eval_every {
        t.eval_every = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_alignment(src: &SourceArgs, ov: &AlignmentOverrides) -> CliResult<AlignmentRunConfig> {
    let text = base_text(Task::Alignment, src.config.as_deref(), src.dataset.as_deref())?;
    let mut cfg = AlignmentRunConfig::from_toml(&text)?;
    let keep_fraction = match &cfg.dataset {
        AlignmentData::Directory { train_fraction, .. } => *train_fraction,
        AlignmentData::Fixture { fixture } => fixture.train_fraction,
    };
    match dataset_choice(src) {
        DatasetChoice::Keep => {}
        DatasetChoice::Fixture => {
            cfg.dataset = AlignmentRunConfig::from_toml(shipped(Task::Alignment, "fixture")?)?.dataset
        }
        DatasetChoice::Named(name) => {
            cfg.dataset = AlignmentData::Directory {
                name,
                path: None,
                format: TripleFormat::default(),
                train_fraction: keep_fraction,
            }
        }
        DatasetChoice::Dir(p) => {
            cfg.dataset = AlignmentData::Directory {
                name: dir_name(&p),
                path: Some(p),
                format: TripleFormat::default(),
                train_fraction: keep_fraction,
            }
        }
    }
    if let Some(s) = src.seed {
        cfg.set_seed(s);
    }
    if let Some(l) = src.lambda {
        cfg.training.lambda_weight = l;
    }
    if let Some(t) = src.tie_policy {
        cfg.tie_policy = t;
    }
    let t = &mut cfg.training;
    if let Some(m) = ov.mode {
        cfg.mode = m;
    }
    if ov.no_layer_aggregation {
        t.aggregate_all_layers = false;
    }
    if let Some(v) = ov.dim {
        t.dim = v;
    }
    if let Some(v) = ov.epochs {
        t.epochs = v;
    }
    if let Some(v) = ov.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = ov.layers {
        t.num_layers = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Prints a line to stdout; the report tables are the command's visible output.
fn say(text: &str) {
    print!("{text}");
    if !text.ends_with('\n') {
        println!();
    }
}
