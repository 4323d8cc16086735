//! Small synthetic datasets with planted category structure.
//!
//! Relation `r` links head category `2r` to tail category `2r + 1`, so every
//! entity sits in exactly one category. Entity popularity follows a power law
//! within its category, which produces a long tail of rarely linked entities.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{AlignmentSeedSet, CompletionDataset, KnowledgeGraph, Triple};
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CategoryGraphConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples_per_relation: usize,
    /// Popularity exponent: weight of the `k`-th entity of a category is `(k+1)^-skew`.
    pub skew: f64,
    /// Length scale of the within-category latent affinity.
    pub locality: f64,
    pub seed: u64,
}

impl Default for CategoryGraphConfig {
    fn default() -> Self {
        Self {
            entities: 200,
            relations: 4,
            triples_per_relation: 600,
            skew: 1.0,
            locality: 0.5,
            seed: 7,
        }
    }
}

/// Triples plus the planted category of each entity.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryGraph {
    pub triples: Vec<Triple>,
    pub categories: Vec<usize>,
}

fn weighted(weights: &[f64]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::Config(format!("sampling weights: {e}")))
}

pub fn category_graph(cfg: &CategoryGraphConfig) -> Result<CategoryGraph> {
    let n_cat = 2 * cfg.relations;
    if cfg.relations == 0 || cfg.entities < n_cat {
        return Err(Error::Config(format!(
            "{} entities cannot fill {n_cat} categories",
            cfg.entities
        )));
    }
    if !(cfg.locality > 0.0) {
        return Err(Error::Config("locality must be positive".into()));
    }
    let mut rng = rng::stream(cfg.seed, Stream::Fixture);
    let categories: Vec<usize> = (0..cfg.entities).map(|e| e % n_cat).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_cat];
    for (e, &c) in categories.iter().enumerate() {
        members[c].push(e);
    }
    // popularity rank within the category is random
    let mut popularity = vec![0.0; cfg.entities];
    for m in &mut members {
        m.shuffle(&mut rng);
        for (k, &e) in m.iter().enumerate() {
            popularity[e] = ((k + 1) as f64).powf(-cfg.skew);
        }
    }
    let position: Vec<f64> = (0..cfg.entities).map(|_| rng.random::<f64>()).collect();

    let mut seen = HashSet::new();
    let mut triples = Vec::new();
    let mut push = |t: Triple, triples: &mut Vec<Triple>| {
        if seen.insert(t) {
            triples.push(t);
        }
    };
    for r in 0..cfg.relations {
        let heads = &members[2 * r];
        let tails = &members[2 * r + 1];
        let head_dist = weighted(&heads.iter().map(|&e| popularity[e]).collect::<Vec<_>>())?;
        let tail_weights = |h: usize| -> Vec<f64> {
            tails
                .iter()
                .map(|&t| popularity[t] * (-(position[h] - position[t]).abs() / cfg.locality).exp())
                .collect()
        };
        for _ in 0..cfg.triples_per_relation {
            let h = heads[head_dist.sample(&mut rng)];
            let t = tails[weighted(&tail_weights(h))?.sample(&mut rng)];
            push(Triple::new(h, r, t), &mut triples);
        }
        // every entity gets at least one link
        let mut linked: HashSet<usize> = triples.iter().flat_map(|t| [t.head, t.tail]).collect();
        for &h in heads {
            if linked.insert(h) {
                let t = tails[weighted(&tail_weights(h))?.sample(&mut rng)];
                push(Triple::new(h, r, t), &mut triples);
            }
        }
        for &t in tails {
            if linked.insert(t) {
                let w: Vec<f64> = heads
                    .iter()
                    .map(|&h| (-(position[h] - position[t]).abs() / cfg.locality).exp())
                    .collect();
                let h = heads[weighted(&w)?.sample(&mut rng)];
                push(Triple::new(h, r, t), &mut triples);
            }
        }
    }
    Ok(CategoryGraph {
        triples,
        categories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionFixtureConfig {
    pub graph: CategoryGraphConfig,
    pub valid_fraction: f64,
    pub test_fraction: f64,
}

impl Default for CompletionFixtureConfig {
    fn default() -> Self {
        Self {
            graph: CategoryGraphConfig::default(),
            valid_fraction: 0.05,
            test_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionFixture {
    pub dataset: CompletionDataset,
    pub categories: Vec<usize>,
}

pub fn completion_fixture(cfg: &CompletionFixtureConfig) -> Result<CompletionFixture> {
    if cfg.valid_fraction < 0.0 || cfg.test_fraction < 0.0 || cfg.valid_fraction + cfg.test_fraction >= 1.0 {
        return Err(Error::Config("held-out fractions must be non-negative and sum below 1".into()));
    }
    let g = category_graph(&cfg.graph)?;
    let mut triples = g.triples;
    triples.shuffle(&mut rng::stream(cfg.graph.seed, Stream::SeedSplit));
    let n = triples.len();
    let n_test = (n as f64 * cfg.test_fraction).round() as usize;
    let n_valid = (n as f64 * cfg.valid_fraction).round() as usize;
    let test = triples.split_off(n - n_test);
    let valid = triples.split_off(n - n_test - n_valid);
    let graph = KnowledgeGraph::from_triples(
        "category-fixture",
        cfg.graph.entities,
        cfg.graph.relations,
        triples,
    )?;
    Ok(CompletionFixture {
        dataset: CompletionDataset { graph, valid, test },
        categories: g.categories,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentFixtureConfig {
    pub graph: CategoryGraphConfig,
    pub train_fraction: f64,
}

impl Default for AlignmentFixtureConfig {
    fn default() -> Self {
        Self {
            graph: CategoryGraphConfig {
                entities: 150,
                relations: 6,
                triples_per_relation: 60,
                skew: 1.0,
                locality: 0.1,
                seed: 11,
            },
            train_fraction: 0.3,
        }
    }
}

/// Two isomorphic graphs: `G2` relabels `G1`'s entities by a random permutation.
#[derive(Debug, Clone)]
pub struct AlignmentFixture {
    pub graphs: [KnowledgeGraph; 2],
    pub seeds: AlignmentSeedSet,
    /// `permutation[e]` is the `G2` id of `G1` entity `e`.
    pub permutation: Vec<usize>,
    pub categories: Vec<usize>,
}

pub fn alignment_fixture(cfg: &AlignmentFixtureConfig) -> Result<AlignmentFixture> {
    let g = category_graph(&cfg.graph)?;
    let n = cfg.graph.entities;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng: Rng = rng::stream(cfg.graph.seed, Stream::SecondGraphInit);
    perm.shuffle(&mut rng);
    let g1 = KnowledgeGraph::from_triples("G1", n, cfg.graph.relations, g.triples.iter().copied())?;
    let g2 = KnowledgeGraph::from_triples(
        "G2",
        n,
        cfg.graph.relations,
        g.triples
            .iter()
            .map(|t| Triple::new(perm[t.head], t.relation, perm[t.tail])),
    )?;
    let pairs = (0..n).map(|e| (e, perm[e])).collect();
    let seeds = AlignmentSeedSet::split(pairs, cfg.train_fraction, cfg.graph.seed)?;
    Ok(AlignmentFixture {
        graphs: [g1, g2],
        seeds,
        permutation: perm,
        categories: g.categories,
    })
}
