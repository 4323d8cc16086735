//! Run configuration files.
//!
//! A config file names its task, a dataset source and the training settings.
//! Every field has a default, so a resolved config serialized back to TOML is
//! a complete record of the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use protokg::eval::TiePolicy;
use protokg::gcn::{GcnConfig, GcnMode};
use protokg::kg::TripleFormat;
use protokg::rotate::{CompletionConfig, CompletionModel};
use protokg::synth::{AlignmentFixtureConfig, CompletionFixtureConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Completion,
    Alignment,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Completion => "completion",
            Task::Alignment => "alignment",
        })
    }
}

/// Where completion triples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CompletionData {
    /// `train.txt`, `valid.txt`, `test.txt` under `path`, or under
    /// `<data dir>/<name>` when `path` is unset.
    Directory {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default)]
        format: TripleFormat,
    },
    /// Synthetic category-structured graph generated in memory.
    Fixture {
        #[serde(default)]
        fixture: CompletionFixtureConfig,
    },
}

/// Where the two alignment graphs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AlignmentData {
    /// `triples_1.txt`, `triples_2.txt` and `links.txt` (one
    /// `label1<TAB>label2` pair per line).
    Directory {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default)]
        format: TripleFormat,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    Fixture {
        #[serde(default)]
        fixture: AlignmentFixtureConfig,
    },
}

fn default_train_fraction() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRunConfig {
    pub task: Task,
    /// Informational; benchmark-scale configs say `hours-to-days`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_runtime: Option<String>,
    #[serde(default = "default_completion_model")]
    pub model: CompletionModel,
    #[serde(default)]
    pub tie_policy: TiePolicy,
    pub dataset: CompletionData,
    #[serde(default)]
    pub training: CompletionConfig,
}

fn default_completion_model() -> CompletionModel {
    CompletionModel::RpeRotate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignmentRunConfig {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_runtime: Option<String>,
    #[serde(default = "default_gcn_mode")]
    pub mode: GcnMode,
    #[serde(default)]
    pub tie_policy: TiePolicy,
    pub dataset: AlignmentData,
    #[serde(default)]
    pub training: GcnConfig,
}

fn default_gcn_mode() -> GcnMode {
    GcnMode::RpeGcn
}

const COMPLETION_CONFIGS: [(&str, &str); 4] = [
    ("wn18rr", include_str!("../configs/completion/wn18rr.toml")),
    ("fb15k-237", include_str!("../configs/completion/fb15k-237.toml")),
    ("yago3-10", include_str!("../configs/completion/yago3-10.toml")),
    ("fixture", include_str!("../configs/completion/fixture.toml")),
];

const ALIGNMENT_CONFIGS: [(&str, &str); 6] = [
    ("dbp-zh-en", include_str!("../configs/alignment/dbp-zh-en.toml")),
    ("dbp-ja-en", include_str!("../configs/alignment/dbp-ja-en.toml")),
    ("dbp-fr-en", include_str!("../configs/alignment/dbp-fr-en.toml")),
    ("dbp-wd", include_str!("../configs/alignment/dbp-wd.toml")),
    ("dbp-yg", include_str!("../configs/alignment/dbp-yg.toml")),
    ("fixture", include_str!("../configs/alignment/fixture.toml")),
];

fn table(task: Task) -> &'static [(&'static str, &'static str)] {
    match task {
        Task::Completion => &COMPLETION_CONFIGS,
        Task::Alignment => &ALIGNMENT_CONFIGS,
    }
}

pub fn shipped_names(task: Task) -> Vec<&'static str> {
    table(task).iter().map(|(n, _)| *n).collect()
}

/// Text of the shipped config `name` for `task`.
pub fn shipped(task: Task, name: &str) -> CliResult<&'static str> {
    table(task)
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
        .ok_or_else(|| {
            CliError::Config(format!(
                "no shipped {task} config `{name}` (known: {})",
                shipped_names(task).join(", ")
            ))
        })
}

fn check_task(found: Task, expected: Task) -> CliResult<()> {
    if found != expected {
        return Err(CliError::Config(format!(
            "config is for the {found} task, expected {expected}"
        )));
    }
    Ok(())
}

/// Reads only the `task` key.
pub fn peek_task(text: &str) -> CliResult<Task> {
    #[derive(Deserialize)]
    struct Peek {
        task: Task,
    }
    let p: Peek = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    Ok(p.task)
}

impl CompletionRunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        check_task(self.task, Task::Completion)?;
        self.training.validate()?;
        Ok(())
    }

    /// Applies `seed` to training and, for fixtures, to the generator.
    pub fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
        if let CompletionData::Fixture { fixture } = &mut self.dataset {
            fixture.graph.seed = seed;
        }
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            CompletionData::Directory { name, .. } => name.clone(),
            CompletionData::Fixture { .. } => "fixture".into(),
        }
    }
}

impl AlignmentRunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> CliResult<()> {
        check_task(self.task, Task::Alignment)?;
        self.training.validate()?;
        if let AlignmentData::Directory { train_fraction, .. } = &self.dataset {
            if !(0.0..=1.0).contains(train_fraction) {
                return Err(CliError::Config(format!(
                    "train_fraction {train_fraction} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.training.seed = seed;
        if let AlignmentData::Fixture { fixture } = &mut self.dataset {
            fixture.graph.seed = seed;
        }
    }

    pub fn dataset_name(&self) -> String {
        match &self.dataset {
            AlignmentData::Directory { name, .. } => name.clone(),
            AlignmentData::Fixture { .. } => "fixture".into(),
        }
    }
}

/// Reads a config file from disk.
pub fn read_config_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Base config text for a command: `--config` wins, then a shipped name given
/// with `--dataset`, then the shipped fixture. A `--dataset` that is an
/// existing directory keeps the base config and only replaces its data source,
/// which the caller handles.
pub fn base_text(task: Task, config: Option<&Path>, dataset: Option<&str>) -> CliResult<String> {
    if let Some(p) = config {
        return read_config_file(p);
    }
    match dataset {
        Some(d) if !Path::new(d).is_dir() => Ok(shipped(task, d)?.to_owned()),
        _ => Ok(shipped(task, "fixture")?.to_owned()),
    }
}
