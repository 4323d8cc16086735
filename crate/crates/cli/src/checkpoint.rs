//! Saving trained tables into a run directory and reopening them.

use std::path::{Path, PathBuf};

use protokg::embedding::EmbeddingTable;
use protokg::gcn::{GcnParameters, GraphInputs};
use protokg::rotate::RotateModel;

use crate::config::{AlignmentRunConfig, CompletionRunConfig, Task};
use crate::dataset::{check_fingerprints, load_alignment, load_completion, LoadedAlignment, LoadedCompletion};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunDir, RunManifest};

const ENTITIES: &str = "checkpoint/entities.bin";
const RELATIONS: &str = "checkpoint/relations.bin";

fn weight_file(l: usize) -> String {
    format!("checkpoint/weight_{l}.bin")
}

fn input_file(graph: usize, what: &str) -> String {
    format!("checkpoint/g{}_{what}.bin", graph + 1)
}

fn save(run: &mut RunDir, name: &str, table: &EmbeddingTable) -> CliResult<()> {
    let p = run.output(name);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    table.export_binary(&p)?;
    Ok(())
}

fn load(dir: &Path, name: &str) -> CliResult<EmbeddingTable> {
    Ok(EmbeddingTable::import_binary(&dir.join(name))?)
}

pub fn save_completion(run: &mut RunDir, model: &RotateModel) -> CliResult<()> {
    save(run, ENTITIES, &model.entities)?;
    save(run, RELATIONS, &model.relations)
}

pub fn save_alignment(run: &mut RunDir, params: &GcnParameters) -> CliResult<()> {
    for (l, w) in params.weights.iter().enumerate() {
        save(run, &weight_file(l), w)?;
    }
    for (g, inputs) in params.graphs.iter().enumerate() {
        save(run, &input_file(g, "entities"), &inputs.entities)?;
        save(run, &input_file(g, "prototypes"), &inputs.prototypes)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CompletionRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub config: CompletionRunConfig,
    pub data: LoadedCompletion,
    pub model: RotateModel,
}

#[derive(Debug, Clone)]
pub struct AlignmentRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub config: AlignmentRunConfig,
    pub data: LoadedAlignment,
    pub params: GcnParameters,
}

#[derive(Debug, Clone)]
pub enum TrainedRun {
    Completion(Box<CompletionRun>),
    Alignment(Box<AlignmentRun>),
}

impl TrainedRun {
    pub fn dir(&self) -> &Path {
        match self {
            TrainedRun::Completion(r) => &r.dir,
            TrainedRun::Alignment(r) => &r.dir,
        }
    }
}

fn config_task(m: &RunManifest) -> CliResult<Task> {
    serde_json::from_value(m.config.get("task").cloned().unwrap_or_default())
        .map_err(|_| CliError::Usage(format!("`{}` runs hold no trained model", m.subcommand)))
}

/// Reopens a training run: reloads its dataset, verifies the fingerprints and
/// reads the checkpoint tables.
pub fn open_run(dir: &Path, data_dir: &Path) -> CliResult<TrainedRun> {
    let manifest = RunManifest::read(dir)?;
    if !matches!(manifest.subcommand.as_str(), "train-completion" | "train-alignment") {
        return Err(CliError::Usage(format!(
            "{} is a `{}` run, not a training run",
            dir.display(),
            manifest.subcommand
        )));
    }
    let bad = |e: serde_json::Error| CliError::Config(format!("{}: recorded config: {e}", dir.display()));
    match config_task(&manifest)? {
        Task::Completion => {
            let mut config: CompletionRunConfig = serde_json::from_value(manifest.config.clone()).map_err(bad)?;
            let data = load_completion(&mut config.dataset, data_dir)?;
            check_fingerprints(&manifest.dataset_fingerprints, &data.fingerprints)?;
            let model = RotateModel::from_tables(
                config.model,
                config.training.effective_lambda(config.model),
                data.dataset.graph.num_entities(),
                load(dir, ENTITIES)?,
                load(dir, RELATIONS)?,
            )?;
            Ok(TrainedRun::Completion(Box::new(CompletionRun {
                dir: dir.to_path_buf(),
                manifest,
                config,
                data,
                model,
            })))
        }
        Task::Alignment => {
            let mut config: AlignmentRunConfig = serde_json::from_value(manifest.config.clone()).map_err(bad)?;
            let data = load_alignment(&mut config.dataset, data_dir, config.training.seed)?;
            check_fingerprints(&manifest.dataset_fingerprints, &data.fingerprints)?;
            let weights = (0..config.training.num_layers)
                .map(|l| load(dir, &weight_file(l)))
                .collect::<CliResult<Vec<_>>>()?;
            let graph = |g: usize| -> CliResult<GraphInputs> {
                Ok(GraphInputs {
                    entities: load(dir, &input_file(g, "entities"))?,
                    prototypes: load(dir, &input_file(g, "prototypes"))?,
                })
            };
            let params = GcnParameters {
                weights,
                graphs: [graph(0)?, graph(1)?],
            };
            Ok(TrainedRun::Alignment(Box::new(AlignmentRun {
                dir: dir.to_path_buf(),
                manifest,
                config,
                data,
                params,
            })))
        }
    }
}
