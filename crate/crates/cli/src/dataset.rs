//! Dataset resolution, loading and content fingerprints.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use protokg::kg::{
    ingest_alignment_dataset, ingest_completion_dataset, write_triples, AlignmentSeedSet,
    CompletionDataset, KnowledgeGraph, Triple,
};
use protokg::synth::{alignment_fixture, completion_fixture, AlignmentFixtureConfig, CompletionFixtureConfig};

use crate::config::{AlignmentData, CompletionData};
use crate::error::{CliError, CliResult};

/// File name -> sha256 hex digest.
pub type Fingerprints = BTreeMap<String, String>;

pub const COMPLETION_FILES: [&str; 3] = ["train.txt", "valid.txt", "test.txt"];
pub const ALIGNMENT_FILES: [&str; 3] = ["triples_1.txt", "triples_2.txt", "links.txt"];

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn hash_files(dir: &Path, files: &[&str]) -> CliResult<Fingerprints> {
    files
        .iter()
        .map(|f| Ok(((*f).to_owned(), hash_file(&dir.join(f))?)))
        .collect()
}

fn triples_text(out: &mut String, label: &str, triples: &[Triple]) {
    out.push_str(label);
    out.push('\n');
    for t in triples {
        out.push_str(&format!("{}\t{}\t{}\n", t.head, t.relation, t.tail));
    }
}

/// Directory for a named dataset: the explicit path, else `<data_dir>/<name>`.
pub fn resolve_dir(name: &str, path: Option<&Path>, data_dir: &Path) -> PathBuf {
    match path {
        Some(p) => p.to_path_buf(),
        None => data_dir.join(name),
    }
}

fn absolute(p: PathBuf) -> PathBuf {
    std::path::absolute(&p).unwrap_or(p)
}

#[derive(Debug, Clone)]
pub struct LoadedCompletion {
    pub dataset: CompletionDataset,
    /// Planted categories, fixtures only.
    pub categories: Option<Vec<usize>>,
    pub fingerprints: Fingerprints,
}

/// Loads the dataset and pins a relative directory to an absolute path in
/// `data`, so the recorded config stays valid from any working directory.
pub fn load_completion(data: &mut CompletionData, data_dir: &Path) -> CliResult<LoadedCompletion> {
    match data {
        CompletionData::Directory { name, path, format } => {
            let dir = absolute(resolve_dir(name, path.as_deref(), data_dir));
            let [tr, va, te] = COMPLETION_FILES.map(|f| dir.join(f));
            let dataset = ingest_completion_dataset(name, &tr, &va, &te, *format)?;
            let fingerprints = hash_files(&dir, &COMPLETION_FILES)?;
            *path = Some(dir);
            Ok(LoadedCompletion {
                dataset,
                categories: None,
                fingerprints,
            })
        }
        CompletionData::Fixture { fixture } => {
            let f = completion_fixture(fixture)?;
            let mut text = String::new();
            triples_text(&mut text, "train", f.dataset.train());
            triples_text(&mut text, "valid", &f.dataset.valid);
            triples_text(&mut text, "test", &f.dataset.test);
            let fingerprints = BTreeMap::from([("fixture".to_owned(), sha256_hex(text.as_bytes()))]);
            Ok(LoadedCompletion {
                dataset: f.dataset,
                categories: Some(f.categories),
                fingerprints,
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedAlignment {
    pub graphs: [KnowledgeGraph; 2],
    pub seeds: AlignmentSeedSet,
    pub fingerprints: Fingerprints,
}

/// Directory datasets split their seed pairs with `split_seed`.
pub fn load_alignment(data: &mut AlignmentData, data_dir: &Path, split_seed: u64) -> CliResult<LoadedAlignment> {
    match data {
        AlignmentData::Directory {
            name,
            path,
            format,
            train_fraction,
        } => {
            let dir = absolute(resolve_dir(name, path.as_deref(), data_dir));
            let [a, b, links] = ALIGNMENT_FILES.map(|f| dir.join(f));
            let (g1, g2, seeds) = ingest_alignment_dataset(&a, &b, &links, *format, *train_fraction, split_seed)?;
            let fingerprints = hash_files(&dir, &ALIGNMENT_FILES)?;
            *path = Some(dir);
            Ok(LoadedAlignment {
                graphs: [g1, g2],
                seeds,
                fingerprints,
            })
        }
        AlignmentData::Fixture { fixture } => {
            let f = alignment_fixture(fixture)?;
            let mut text = String::new();
            triples_text(&mut text, "g1", &f.graphs[0].triples);
            triples_text(&mut text, "g2", &f.graphs[1].triples);
            text.push_str("seeds\n");
            for (a, b) in &f.seeds.pairs {
                text.push_str(&format!("{a}\t{b}\n"));
            }
            let fingerprints = BTreeMap::from([("fixture".to_owned(), sha256_hex(text.as_bytes()))]);
            Ok(LoadedAlignment {
                graphs: f.graphs,
                seeds: f.seeds,
                fingerprints,
            })
        }
    }
}

/// Errors unless `current` matches what a run recorded.
pub fn check_fingerprints(recorded: &Fingerprints, current: &Fingerprints) -> CliResult<()> {
    for (name, cur) in current {
        match recorded.get(name) {
            Some(rec) if rec == cur => {}
            Some(rec) => {
                return Err(CliError::Fingerprint {
                    name: name.clone(),
                    recorded: rec.clone(),
                    current: cur.clone(),
                })
            }
            None => {
                return Err(CliError::Fingerprint {
                    name: name.clone(),
                    recorded: "nothing".into(),
                    current: cur.clone(),
                })
            }
        }
    }
    if let Some(missing) = recorded.keys().find(|k| !current.contains_key(*k)) {
        return Err(CliError::Fingerprint {
            name: missing.clone(),
            recorded: recorded[missing].clone(),
            current: "nothing".into(),
        });
    }
    Ok(())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes a completion fixture as a labeled triple directory.
pub fn write_completion_fixture(cfg: &CompletionFixtureConfig, dir: &Path) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let f = completion_fixture(cfg)?;
    let kg = &f.dataset.graph;
    let splits: [&[Triple]; 3] = [f.dataset.train(), &f.dataset.valid, &f.dataset.test];
    let mut out = Vec::new();
    for (file, triples) in COMPLETION_FILES.iter().zip(splits) {
        let p = dir.join(file);
        write_triples(&p, kg, triples)?;
        out.push(p);
    }
    Ok(out)
}

/// Writes an alignment fixture as two labeled triple files plus the links.
pub fn write_alignment_fixture(cfg: &AlignmentFixtureConfig, dir: &Path) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let f = alignment_fixture(cfg)?;
    let mut out = Vec::new();
    for (file, g) in ALIGNMENT_FILES.iter().zip(&f.graphs) {
        let p = dir.join(file);
        write_triples(&p, g, &g.triples)?;
        out.push(p);
    }
    let p = dir.join(ALIGNMENT_FILES[2]);
    let label = |g: &KnowledgeGraph, e: usize| g.entities.label(e).unwrap_or_default().to_owned();
    let mut text = String::new();
    for &(a, b) in &f.seeds.pairs {
        text.push_str(&format!("{}\t{}\n", label(&f.graphs[0], a), label(&f.graphs[1], b)));
    }
    std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
    out.push(p);
    Ok(out)
}
