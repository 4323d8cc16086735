//! Vocabularies, triples, alignment seeds and prototype augmentation.
//!
//! Triple files are UTF-8, tab-separated, one `head<TAB>relation<TAB>tail` per
//! line. Ids are dense and assigned in first-appearance order. Prototype nodes
//! live in a contiguous id block right after the entities: `P_H(r) = |E| + r`
//! and `P_T(r) = |E| + |R| + r`.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Bijective label <-> dense id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary whose labels are the decimal ids `0..n`.
    pub fn numeric(n: usize) -> Self {
        Self::from_labels((0..n).map(|i| i.to_string()))
    }

    pub fn from_labels<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::new();
        for l in labels {
            v.get_or_insert(&l.into());
        }
        v
    }

    pub fn get_or_insert(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// How the three fields of a triple line are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TripleFormat {
    /// Arbitrary string labels, ids assigned in first-appearance order.
    #[default]
    Labels,
    /// Pre-assigned non-negative integer ids; the vocabulary spans `0..=max`.
    Ids,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    pub name: String,
    pub entities: Vocab,
    pub relations: Vocab,
    pub triples: Vec<Triple>,
}

impl KnowledgeGraph {
    /// Builds a graph over numeric vocabularies, dropping duplicate triples.
    pub fn from_triples(
        name: impl Into<String>,
        num_entities: usize,
        num_relations: usize,
        triples: impl IntoIterator<Item = Triple>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for t in triples {
            check_id("entity", t.head, num_entities)?;
            check_id("entity", t.tail, num_entities)?;
            check_id("relation", t.relation, num_relations)?;
            if seen.insert(t) {
                kept.push(t);
            }
        }
        Ok(Self {
            name: name.into(),
            entities: Vocab::from_labels((0..num_entities).map(|i| format!("e{i}"))),
            relations: Vocab::from_labels((0..num_relations).map(|i| format!("r{i}"))),
            triples: kept,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn check_entity(&self, id: usize) -> Result<()> {
        check_id("entity", id, self.num_entities())
    }

    /// Undirected one-hop entity neighbor sets, self excluded.
    pub fn neighbor_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut nbrs = vec![BTreeSet::new(); self.num_entities()];
        for t in &self.triples {
            if t.head != t.tail {
                nbrs[t.head].insert(t.tail);
                nbrs[t.tail].insert(t.head);
            }
        }
        nbrs
    }

    /// Degree of every entity, see [`degree_of`].
    pub fn degrees(&self) -> Vec<usize> {
        self.neighbor_sets().iter().map(BTreeSet::len).collect()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            name: self.name.clone(),
            relation_count: self.num_relations(),
            entity_count: self.num_entities(),
            triple_count: self.triples.len(),
            splits: None,
        }
    }

    /// Writes the triples back out as a label TSV.
    pub fn export_triples(&self, path: &Path) -> Result<()> {
        write_triples(path, self, &self.triples)
    }
}

fn check_id(kind: &'static str, id: usize, size: usize) -> Result<()> {
    if id < size {
        Ok(())
    } else {
        Err(Error::InvalidId { kind, id, size })
    }
}

/// Writes `triples` as a label TSV using the vocabularies of `kg`.
pub fn write_triples(path: &Path, kg: &KnowledgeGraph, triples: &[Triple]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in triples {
        let h = kg.entities.label(t.head).unwrap_or_default();
        let r = kg.relations.label(t.relation).unwrap_or_default();
        let tl = kg.entities.label(t.tail).unwrap_or_default();
        writeln!(w, "{h}\t{r}\t{tl}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Number of distinct undirected one-hop entity neighbors of `entity`, self excluded.
pub fn degree_of(kg: &KnowledgeGraph, entity: usize) -> Result<usize> {
    kg.check_entity(entity)?;
    let mut nbrs = BTreeSet::new();
    for t in &kg.triples {
        if t.head == entity && t.tail != entity {
            nbrs.insert(t.tail);
        } else if t.tail == entity && t.head != entity {
            nbrs.insert(t.head);
        }
    }
    Ok(nbrs.len())
}

/// Outcome of reading one triple file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub graph: KnowledgeGraph,
    pub duplicates_dropped: usize,
}

/// Incremental reader sharing one vocabulary across several triple files.
#[derive(Debug, Clone)]
pub struct GraphBuilder {
    name: String,
    format: TripleFormat,
    entities: Vocab,
    relations: Vocab,
    max_entity: Option<usize>,
    max_relation: Option<usize>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>, format: TripleFormat) -> Self {
        Self {
            name: name.into(),
            format,
            entities: Vocab::new(),
            relations: Vocab::new(),
            max_entity: None,
            max_relation: None,
        }
    }

    /// Reads one file; duplicates within the file are dropped and counted.
    pub fn read_file(&mut self, path: &Path) -> Result<(Vec<Triple>, usize)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut seen = HashSet::new();
        let mut triples = Vec::new();
        let mut duplicates = 0;
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let t = self.parse_line(&line).map_err(|message| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            })?;
            if seen.insert(t) {
                triples.push(t);
            } else {
                duplicates += 1;
            }
        }
        if triples.is_empty() {
            return Err(Error::EmptyInput(path.display().to_string()));
        }
        if duplicates > 0 {
            log::warn!("{}: dropped {duplicates} duplicate triple(s)", path.display());
        }
        Ok((triples, duplicates))
    }

    fn parse_line(&mut self, line: &str) -> std::result::Result<Triple, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            ));
        }
        match self.format {
            TripleFormat::Labels => Ok(Triple::new(
                self.entities.get_or_insert(fields[0]),
                self.relations.get_or_insert(fields[1]),
                self.entities.get_or_insert(fields[2]),
            )),
            TripleFormat::Ids => {
                let parse = |s: &str| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| format!("`{s}` is not a non-negative integer id"))
                };
                let (h, r, t) = (parse(fields[0])?, parse(fields[1])?, parse(fields[2])?);
                self.max_entity = self.max_entity.max(Some(h.max(t)));
                self.max_relation = self.max_relation.max(Some(r));
                Ok(Triple::new(h, r, t))
            }
        }
    }

    pub fn entity_id(&self, label: &str) -> Option<usize> {
        match self.format {
            TripleFormat::Labels => self.entities.id(label),
            TripleFormat::Ids => label
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|&i| self.max_entity.is_some_and(|m| i <= m)),
        }
    }

    pub fn finish(self, triples: Vec<Triple>) -> KnowledgeGraph {
        let (entities, relations) = match self.format {
            TripleFormat::Labels => (self.entities, self.relations),
            TripleFormat::Ids => (
                Vocab::numeric(self.max_entity.map_or(0, |m| m + 1)),
                Vocab::numeric(self.max_relation.map_or(0, |m| m + 1)),
            ),
        };
        KnowledgeGraph {
            name: self.name,
            entities,
            relations,
            triples,
        }
    }
}

/// Reads a single triple file into a graph.
pub fn ingest_triples(path: &Path, format: TripleFormat) -> Result<Ingested> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut builder = GraphBuilder::new(name, format);
    let (triples, duplicates_dropped) = builder.read_file(path)?;
    Ok(Ingested {
        graph: builder.finish(triples),
        duplicates_dropped,
    })
}

/// Link-prediction dataset: `graph` carries the merged vocabulary and the
/// training triples; validation and test triples share its ids.
#[derive(Debug, Clone)]
pub struct CompletionDataset {
    pub graph: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl CompletionDataset {
    pub fn train(&self) -> &[Triple] {
        &self.graph.triples
    }

    /// Union of train, valid and test triples, used by the filtered ranking.
    pub fn known_triples(&self) -> HashSet<Triple> {
        self.train()
            .iter()
            .chain(&self.valid)
            .chain(&self.test)
            .copied()
            .collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let mut s = self.graph.stats();
        s.triple_count = self.train().len() + self.valid.len() + self.test.len();
        s.splits = Some(SplitCounts {
            train: self.train().len(),
            valid: self.valid.len(),
            test: self.test.len(),
        });
        s
    }
}

/// Reads `train`, `valid` and `test` files into one id space.
pub fn ingest_completion_dataset(
    name: &str,
    train: &Path,
    valid: &Path,
    test: &Path,
    format: TripleFormat,
) -> Result<CompletionDataset> {
    let mut builder = GraphBuilder::new(name, format);
    let (train, _) = builder.read_file(train)?;
    let (valid, _) = builder.read_file(valid)?;
    let (test, _) = builder.read_file(test)?;
    Ok(CompletionDataset {
        graph: builder.finish(train),
        valid,
        test,
    })
}

/// Pre-aligned entity pairs `(id in G1, id in G2)` with a train/test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSeedSet {
    pub pairs: Vec<(usize, usize)>,
    pub train_fraction: f64,
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
}

impl AlignmentSeedSet {
    /// Shuffles deterministically and puts `floor(n · fraction)` pairs in train.
    pub fn split(pairs: Vec<(usize, usize)>, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&train_fraction) {
            return Err(Error::Config(format!(
                "train fraction {train_fraction} outside [0, 1]"
            )));
        }
        let mut seen = HashSet::new();
        let pairs: Vec<_> = pairs.into_iter().filter(|p| seen.insert(*p)).collect();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rng::stream(seed, Stream::SeedSplit));
        // epsilon keeps e.g. 0.29 * 100 from flooring to 28
        let n_train = ((shuffled.len() as f64) * train_fraction + 1e-9).floor() as usize;
        let test = shuffled.split_off(n_train.min(shuffled.len()));
        Ok(Self {
            pairs,
            train_fraction,
            train: shuffled,
            test,
        })
    }
}

/// Reads two graphs and a seed-pair file (`label1<TAB>label2` per line).
pub fn ingest_alignment_dataset(
    triples_1: &Path,
    triples_2: &Path,
    seeds: &Path,
    format: TripleFormat,
    train_fraction: f64,
    seed: u64,
) -> Result<(KnowledgeGraph, KnowledgeGraph, AlignmentSeedSet)> {
    let mut b1 = GraphBuilder::new("G1", format);
    let (t1, _) = b1.read_file(triples_1)?;
    let mut b2 = GraphBuilder::new("G2", format);
    let (t2, _) = b2.read_file(triples_2)?;

    let file = File::open(seeds).map_err(|e| Error::io(seeds, e))?;
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(seeds, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: seeds.to_path_buf(),
                line: idx + 1,
                message: format!("expected 2 tab-separated fields, found {}", fields.len()),
            });
        }
        let a = b1.entity_id(fields[0]).ok_or_else(|| Error::UnknownLabel {
            kind: "G1 entity",
            label: fields[0].to_owned(),
        })?;
        let b = b2.entity_id(fields[1]).ok_or_else(|| Error::UnknownLabel {
            kind: "G2 entity",
            label: fields[1].to_owned(),
        })?;
        pairs.push((a, b));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput(seeds.display().to_string()));
    }
    let split = AlignmentSeedSet::split(pairs, train_fraction, seed)?;
    Ok((b1.finish(t1), b2.finish(t2), split))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub relation_count: usize,
    pub entity_count: usize,
    pub triple_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub splits: Option<SplitCounts>,
}

impl DatasetStats {
    /// Line-oriented `key=value` rendering.
    pub fn to_kv(&self) -> String {
        let mut out = format!(
            "name={}\nrelations={}\nentities={}\ntriples={}\n",
            self.name, self.relation_count, self.entity_count, self.triple_count
        );
        if let Some(s) = self.splits {
            out.push_str(&format!(
                "train={}\nvalid={}\ntest={}\n",
                s.train, s.valid, s.test
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Head or tail side of a relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn flip(self) -> Self {
        match self {
            Side::Head => Side::Tail,
            Side::Tail => Side::Head,
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Head => "head",
            Side::Tail => "tail",
        })
    }
}

/// A knowledge graph plus one head and one tail prototype node per relation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedGraph {
    pub base: KnowledgeGraph,
    /// `N_1(i)`: sorted undirected entity neighbors, self excluded.
    pub entity_neighbors: Vec<Vec<usize>>,
    /// `N_1^R(i)`: sorted prototype node ids linked to entity `i`.
    pub proto_neighbors_of_entity: Vec<Vec<usize>>,
    /// `N_1(P)`: sorted entity ids, indexed by prototype offset `node - |E|`.
    pub entity_neighbors_of_proto: Vec<Vec<usize>>,
}

impl AugmentedGraph {
    pub fn new(kg: KnowledgeGraph) -> Result<Self> {
        if kg.triples.is_empty() {
            return Err(Error::EmptyInput(format!("graph `{}`", kg.name)));
        }
        let n = kg.num_entities();
        let m = kg.num_relations();
        let entity_neighbors = kg
            .neighbor_sets()
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();
        let mut protos_of = vec![BTreeSet::new(); n];
        let mut members = vec![BTreeSet::new(); 2 * m];
        for t in &kg.triples {
            let ph = n + t.relation;
            let pt = n + m + t.relation;
            protos_of[t.head].insert(ph);
            protos_of[t.tail].insert(pt);
            members[t.relation].insert(t.head);
            members[m + t.relation].insert(t.tail);
        }
        Ok(Self {
            base: kg,
            entity_neighbors,
            proto_neighbors_of_entity: protos_of
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            entity_neighbors_of_proto: members
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
        })
    }

    pub fn num_entities(&self) -> usize {
        self.base.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.base.num_relations()
    }

    pub fn num_prototypes(&self) -> usize {
        2 * self.num_relations()
    }

    /// Entities plus prototypes.
    pub fn num_nodes(&self) -> usize {
        self.num_entities() + self.num_prototypes()
    }

    pub fn proto_head_of(&self, relation: usize) -> usize {
        self.num_entities() + relation
    }

    pub fn proto_tail_of(&self, relation: usize) -> usize {
        self.num_entities() + self.num_relations() + relation
    }

    pub fn proto_of(&self, relation: usize, side: Side) -> usize {
        match side {
            Side::Head => self.proto_head_of(relation),
            Side::Tail => self.proto_tail_of(relation),
        }
    }

    pub fn is_prototype(&self, node: usize) -> bool {
        node >= self.num_entities() && node < self.num_nodes()
    }

    /// `(relation, side)` a prototype node stands for.
    pub fn prototype_role(&self, node: usize) -> Option<(usize, Side)> {
        if !self.is_prototype(node) {
            return None;
        }
        let off = node - self.num_entities();
        let m = self.num_relations();
        Some(if off < m {
            (off, Side::Head)
        } else {
            (off - m, Side::Tail)
        })
    }

    /// Entity members of the prototype at node id `node`.
    pub fn members_of_proto(&self, node: usize) -> &[usize] {
        &self.entity_neighbors_of_proto[node - self.num_entities()]
    }

    pub fn members(&self, relation: usize, side: Side) -> &[usize] {
        self.members_of_proto(self.proto_of(relation, side))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_counts() {
        let f = write_tmp(&["a\tR\tb", "b\tR\tc"]);
        let g = ingest_triples(f.path(), TripleFormat::Labels).unwrap().graph;
        assert_eq!(
            (g.num_entities(), g.num_relations(), g.triples.len()),
            (3, 1, 2)
        );
        assert_eq!(g.entities.label(2), Some("c"));
    }

    #[test]
    fn ingest_drops_duplicates() {
        let f = write_tmp(&["a\tR\tb", "a\tR\tb"]);
        let out = ingest_triples(f.path(), TripleFormat::Labels).unwrap();
        assert_eq!(out.graph.triples.len(), 1);
        assert_eq!(out.duplicates_dropped, 1);
    }

    #[test]
    fn ingest_errors() {
        let f = write_tmp(&["a\tR\tb", "oops only two\tfields"]);
        match ingest_triples(f.path(), TripleFormat::Labels) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let empty = write_tmp(&[]);
        assert!(matches!(
            ingest_triples(empty.path(), TripleFormat::Labels),
            Err(Error::EmptyInput(_))
        ));
        let bad_id = write_tmp(&["0\t0\tx"]);
        assert!(ingest_triples(bad_id.path(), TripleFormat::Ids).is_err());
    }

    #[test]
    fn ingest_numeric_ids() {
        let f = write_tmp(&["0\t1\t4", "2\t0\t3"]);
        let g = ingest_triples(f.path(), TripleFormat::Ids).unwrap().graph;
        assert_eq!(g.num_entities(), 5);
        assert_eq!(g.num_relations(), 2);
        assert_eq!(g.triples[0], Triple::new(0, 1, 4));
    }

    #[test]
    fn export_round_trip() {
        let f = write_tmp(&["x\tR\ty", "y\tS\tz", "z\tR\tx"]);
        let g = ingest_triples(f.path(), TripleFormat::Labels).unwrap().graph;
        let out = tempfile::NamedTempFile::new().unwrap();
        g.export_triples(out.path()).unwrap();
        let g2 = ingest_triples(out.path(), TripleFormat::Labels).unwrap().graph;
        assert_eq!(g.entities, g2.entities);
        assert_eq!(g.relations, g2.relations);
        assert_eq!(g.triples, g2.triples);
    }

    #[test]
    fn prototype_counts_and_membership() {
        // (h1,r1,t1),(h1,r2,t2): h1 links to both head prototypes
        let kg = KnowledgeGraph::from_triples(
            "t",
            4,
            2,
            [Triple::new(0, 0, 1), Triple::new(0, 1, 2)],
        )
        .unwrap();
        let aug = AugmentedGraph::new(kg).unwrap();
        assert_eq!(aug.num_prototypes(), 4);
        assert_eq!(
            aug.proto_neighbors_of_entity[0],
            vec![aug.proto_head_of(0), aug.proto_head_of(1)]
        );
        assert_eq!(aug.prototype_role(aug.proto_tail_of(1)), Some((1, Side::Tail)));
        assert!(!aug.is_prototype(3));
    }

    #[test]
    fn prototype_members_deduplicated() {
        let kg = KnowledgeGraph::from_triples(
            "t",
            3,
            1,
            [Triple::new(0, 0, 1), Triple::new(2, 0, 1)],
        )
        .unwrap();
        let aug = AugmentedGraph::new(kg).unwrap();
        assert_eq!(aug.members(0, Side::Tail), &[1]);
        assert_eq!(aug.members(0, Side::Head), &[0, 2]);
    }

    #[test]
    fn degrees() {
        let kg = KnowledgeGraph::from_triples(
            "t",
            3,
            2,
            [Triple::new(0, 0, 1), Triple::new(0, 1, 2)],
        )
        .unwrap();
        assert_eq!(degree_of(&kg, 0).unwrap(), 2);
        let kg = KnowledgeGraph::from_triples(
            "t",
            3,
            1,
            [Triple::new(0, 0, 1), Triple::new(2, 0, 1)],
        )
        .unwrap();
        assert_eq!(degree_of(&kg, 1).unwrap(), 2);
        let kg = KnowledgeGraph::from_triples("t", 1, 1, [Triple::new(0, 0, 0)]).unwrap();
        assert_eq!(degree_of(&kg, 0).unwrap(), 0);
        assert!(degree_of(&kg, 5).is_err());
        assert_eq!(kg.degrees(), vec![0]);
    }

    #[test]
    fn seed_split_floor_and_determinism() {
        let pairs: Vec<_> = (0..10).map(|i| (i, i)).collect();
        let a = AlignmentSeedSet::split(pairs.clone(), 0.30, 11).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (3, 7));
        let b = AlignmentSeedSet::split(pairs, 0.30, 11).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<_> = a.train.iter().chain(&a.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn alignment_ingest_resolves_labels() {
        let g1 = write_tmp(&["a\tR\tb", "b\tR\tc"]);
        let g2 = write_tmp(&["x\tQ\ty", "y\tQ\tz"]);
        let seeds = write_tmp(&["a\tx", "b\ty", "c\tz"]);
        let (k1, k2, s) = ingest_alignment_dataset(
            g1.path(),
            g2.path(),
            seeds.path(),
            TripleFormat::Labels,
            0.34,
            1,
        )
        .unwrap();
        assert_eq!(k1.num_entities(), 3);
        assert_eq!(k2.num_entities(), 3);
        assert_eq!(s.train.len(), 1);
        let bad = write_tmp(&["a\tnope"]);
        let err = ingest_alignment_dataset(
            g1.path(),
            g2.path(),
            bad.path(),
            TripleFormat::Labels,
            0.3,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn stats_rendering() {
        let kg = KnowledgeGraph::from_triples("toy", 3, 1, [Triple::new(0, 0, 1)]).unwrap();
        let s = kg.stats();
        assert!(s.to_kv().contains("entities=3"));
        let back: DatasetStats = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }
}
