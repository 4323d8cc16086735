//! `stats`, `make-fixture` and `show-config`.

use std::path::PathBuf;

use protokg::kg::DatasetStats;

use super::{resolve_alignment, resolve_completion, say};
use crate::config::{shipped, shipped_names, AlignmentData, AlignmentRunConfig, CompletionData, CompletionRunConfig, Task};
use crate::dataset::{
    hash_files, load_alignment, load_completion, write_alignment_fixture, write_completion_fixture,
    ALIGNMENT_FILES, COMPLETION_FILES,
};
use crate::error::{CliError, CliResult};
use crate::manifest::{RunDir, RunSettings};
use crate::{GlobalArgs, MakeFixtureArgs, ShowConfigArgs, StatsArgs};

pub fn stats(g: &GlobalArgs, a: &StatsArgs) -> CliResult<PathBuf> {
    match a.task {
        Task::Completion => {
            let mut cfg = resolve_completion(&a.source, &Default::default())?;
            let data = load_completion(&mut cfg.dataset, &g.data_dir)?;
            let s = data.dataset.stats();
            let mut run = RunDir::create(&g.settings(), "stats", Some(cfg.training.seed))?;
            run.write_text("stats.json", &format!("{}\n", s.to_json()))?;
            say(&s.to_kv());
            run.finish(&cfg.dataset, data.fingerprints)
        }
        Task::Alignment => {
            let mut cfg = resolve_alignment(&a.source, &Default::default())?;
            let data = load_alignment(&mut cfg.dataset, &g.data_dir, cfg.training.seed)?;
            let graphs: Vec<DatasetStats> = data.graphs.iter().map(|k| k.stats()).collect();
            let value = serde_json::json!({
                "graphs": graphs,
                "seed_pairs": data.seeds.pairs.len(),
                "train_pairs": data.seeds.train.len(),
                "test_pairs": data.seeds.test.len(),
            });
            let mut run = RunDir::create(&g.settings(), "stats", Some(cfg.training.seed))?;
            run.write_json("stats.json", &value)?;
            for s in &graphs {
                say(&s.to_kv());
            }
            println!(
                "seed_pairs={}\ntrain_pairs={}\ntest_pairs={}",
                data.seeds.pairs.len(),
                data.seeds.train.len(),
                data.seeds.test.len()
            );
            run.finish(&cfg.dataset, data.fingerprints)
        }
    }
}

/// Writes the shipped fixture (reseeded with `--seed`) into `--dest`, which
/// then loads as a directory dataset.
pub fn make_fixture(g: &GlobalArgs, a: &MakeFixtureArgs) -> CliResult<PathBuf> {
    let settings = RunSettings {
        run_dir: Some(a.dest.clone()),
        ..g.settings()
    };
    match a.task {
        Task::Completion => {
            let mut cfg = CompletionRunConfig::from_toml(shipped(Task::Completion, "fixture")?)?;
            if let Some(s) = a.seed {
                cfg.set_seed(s);
            }
            let CompletionData::Fixture { fixture } = &cfg.dataset else {
                unreachable!("shipped fixture config")
            };
            let mut run = RunDir::create(&settings, "make-fixture", Some(fixture.graph.seed))?;
            write_completion_fixture(fixture, &run.path)?;
            for f in COMPLETION_FILES {
                run.output(f);
            }
            let fingerprints = hash_files(&run.path, &COMPLETION_FILES)?;
            println!("wrote {}", run.path.display());
            run.finish(fixture, fingerprints)
        }
        Task::Alignment => {
            let mut cfg = AlignmentRunConfig::from_toml(shipped(Task::Alignment, "fixture")?)?;
            if let Some(s) = a.seed {
                cfg.set_seed(s);
            }
            let AlignmentData::Fixture { fixture } = &cfg.dataset else {
                unreachable!("shipped fixture config")
            };
            let mut run = RunDir::create(&settings, "make-fixture", Some(fixture.graph.seed))?;
            write_alignment_fixture(fixture, &run.path)?;
            for f in ALIGNMENT_FILES {
                run.output(f);
            }
            let fingerprints = hash_files(&run.path, &ALIGNMENT_FILES)?;
            println!("wrote {}", run.path.display());
            run.finish(fixture, fingerprints)
        }
    }
}

pub fn show_config(a: &ShowConfigArgs) -> CliResult<()> {
    if a.list {
        for task in [Task::Completion, Task::Alignment] {
            println!("{task}: {}", shipped_names(task).join(", "));
        }
        return Ok(());
    }
    let text = match a.task {
        Task::Completion => resolve_completion(&a.source, &Default::default())?.to_toml()?,
        Task::Alignment => resolve_alignment(&a.source, &Default::default())?.to_toml()?,
    };
    if text.is_empty() {
        return Err(CliError::Config("empty config".into()));
    }
    say(&text);
    Ok(())
}
