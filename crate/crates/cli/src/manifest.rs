//! Run directories and their manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::dataset::Fingerprints;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    /// Resolved config with every default materialized.
    pub config: serde_json::Value,
    pub dataset_fingerprints: Fingerprints,
    /// Other runs this one read from, by role.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: Option<usize>,
    pub started_at: String,
    pub finished_at: String,
    /// File names inside the run directory.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(run: &Path) -> CliResult<Self> {
        let p = run.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
    }
}

/// Where a command writes, and how it is tagged.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub out_root: PathBuf,
    pub run_dir: Option<PathBuf>,
    pub deterministic: bool,
    pub threads: Option<usize>,
}

/// An open run directory that collects outputs until [`RunDir::finish`]
/// writes the single manifest.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    subcommand: String,
    seed: Option<u64>,
    started_at: String,
    outputs: Vec<String>,
    inputs: BTreeMap<String, PathBuf>,
    deterministic: bool,
    threads: Option<usize>,
}

fn timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true)
}

impl RunDir {
    /// Uses `settings.run_dir` as given, or creates
    /// `<out_root>/<subcommand>-<UTC timestamp>-seed<seed>`.
    pub fn create(settings: &RunSettings, subcommand: &str, seed: Option<u64>) -> CliResult<Self> {
        let path = match &settings.run_dir {
            Some(p) => p.clone(),
            None => {
                let stamp = Utc::now().format("%Y%m%dT%H%M%S%.6fZ");
                let seed = seed.map_or_else(|| "none".to_owned(), |s| s.to_string());
                let base = settings.out_root.join(format!("{subcommand}-{stamp}-seed{seed}"));
                let mut p = base.clone();
                let mut n = 1;
                while p.exists() {
                    p = PathBuf::from(format!("{}-{n}", base.display()));
                    n += 1;
                }
                p
            }
        };
        if path.join(MANIFEST_FILE).exists() {
            return Err(CliError::Usage(format!(
                "{} already holds a finished run",
                path.display()
            )));
        }
        std::fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self {
            path,
            subcommand: subcommand.to_owned(),
            seed,
            started_at: timestamp(),
            outputs: Vec::new(),
            inputs: BTreeMap::new(),
            deterministic: settings.deterministic,
            threads: settings.threads,
        })
    }

    /// Registers `name` as an output and returns its full path.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_owned());
        }
        self.path.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CliResult<PathBuf> {
        let p = self.output(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Config(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn add_input(&mut self, role: &str, path: &Path) {
        self.inputs.insert(role.to_owned(), path.to_path_buf());
    }

    pub fn finish<C: Serialize>(self, config: &C, fingerprints: Fingerprints) -> CliResult<PathBuf> {
        let manifest = RunManifest {
            subcommand: self.subcommand,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            config: serde_json::to_value(config)
                .map_err(|e| CliError::Config(format!("serializing config: {e}")))?,
            dataset_fingerprints: fingerprints,
            inputs: self.inputs,
            seed: self.seed,
            deterministic: self.deterministic,
            threads: self.threads,
            started_at: self.started_at,
            finished_at: timestamp(),
            outputs: self.outputs,
        };
        let p = self.path.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Config(format!("serializing manifest: {e}")))?;
        text.push('\n');
        std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        Ok(self.path)
    }
}
