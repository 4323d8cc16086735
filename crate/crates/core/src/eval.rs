//! Filtered ranking metrics, alignment retrieval, Davies-Bouldin index,
//! long-tail buckets and embedding export.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::l2_distance;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Side, Triple};
use crate::matrix::Rows;

/// How a true answer that ties with other candidates is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TiePolicy {
    /// `1 + higher + equal / 2`, rounded up.
    #[default]
    Mean,
    Optimistic,
    Pessimistic,
}

impl TiePolicy {
    pub fn rank(self, higher: usize, equal: usize) -> usize {
        match self {
            TiePolicy::Mean => 1 + higher + equal.div_ceil(2),
            TiePolicy::Optimistic => 1 + higher,
            TiePolicy::Pessimistic => 1 + higher + equal,
        }
    }
}

/// Rank of `answer` among the candidates for which `excluded` is false.
/// `excluded` is never consulted for the answer itself.
pub fn filtered_rank(
    scores: &[f64],
    answer: usize,
    excluded: impl Fn(usize) -> bool,
    policy: TiePolicy,
) -> usize {
    let target = scores[answer];
    let (mut higher, mut equal) = (0, 0);
    for (c, &s) in scores.iter().enumerate() {
        if c == answer || excluded(c) {
            continue;
        }
        if s > target {
            higher += 1;
        } else if s == target {
            equal += 1;
        }
    }
    policy.rank(higher, equal)
}

/// Scores every entity as the missing slot of `(anchor, relation, ?)` or
/// `(?, relation, anchor)`. Higher is better.
pub trait LinkScorer: Sync {
    fn num_entities(&self) -> usize;
    fn score_candidates(&self, anchor: usize, relation: usize, missing: Side) -> Vec<f64>;
}

/// Known answers per `(anchor, relation, missing side)`.
#[derive(Debug, Clone, Default)]
pub struct FilterIndex {
    tails: HashMap<(usize, usize), HashSet<usize>>,
    heads: HashMap<(usize, usize), HashSet<usize>>,
}

impl FilterIndex {
    pub fn new<'a>(known: impl IntoIterator<Item = &'a Triple>) -> Self {
        let mut idx = Self::default();
        for t in known {
            idx.tails.entry((t.head, t.relation)).or_default().insert(t.tail);
            idx.heads.entry((t.tail, t.relation)).or_default().insert(t.head);
        }
        idx
    }

    pub fn is_known(&self, anchor: usize, relation: usize, missing: Side, candidate: usize) -> bool {
        let map = match missing {
            Side::Tail => &self.tails,
            Side::Head => &self.heads,
        };
        map.get(&(anchor, relation))
            .is_some_and(|s| s.contains(&candidate))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryRank {
    pub triple: Triple,
    pub missing: Side,
    pub answer: usize,
    pub rank: usize,
}

/// Head and tail query ranks for every test triple, in input order.
pub fn completion_ranks(
    test: &[Triple],
    scorer: &impl LinkScorer,
    known: &HashSet<Triple>,
    policy: TiePolicy,
) -> Vec<QueryRank> {
    let filter = FilterIndex::new(known);
    test.par_iter()
        .flat_map_iter(|&t| {
            [Side::Head, Side::Tail].map(|missing| {
                let (anchor, answer) = match missing {
                    Side::Tail => (t.head, t.tail),
                    Side::Head => (t.tail, t.head),
                };
                let scores = scorer.score_candidates(anchor, t.relation, missing);
                let rank = filtered_rank(
                    &scores,
                    answer,
                    |c| filter.is_known(anchor, t.relation, missing, c),
                    policy,
                );
                QueryRank {
                    triple: t,
                    missing,
                    answer,
                    rank,
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub queries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ranks: Option<Vec<usize>>,
}

impl RankingReport {
    /// Sums reciprocals per distinct rank in ascending order, so the result
    /// does not depend on query order.
    pub fn from_ranks(ranks: &[usize], hits_at: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptyInput("rank list".into()));
        }
        if ranks.contains(&0) {
            return Err(Error::Config("ranks are 1-based".into()));
        }
        let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
        for &r in ranks {
            *hist.entry(r).or_default() += 1;
        }
        let n = ranks.len() as f64;
        let recip: f64 = hist.iter().map(|(&r, &c)| c as f64 / r as f64).sum();
        let hits = hits_at
            .iter()
            .map(|&k| {
                let c: usize = hist.range(..=k).map(|(_, c)| c).sum();
                (k, c as f64 / n)
            })
            .collect();
        Ok(Self {
            mrr: recip / n,
            hits,
            queries: ranks.len(),
            ranks: None,
        })
    }

    pub fn with_ranks(mut self, ranks: Vec<usize>) -> Self {
        self.ranks = Some(ranks);
        self
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }

    /// Aligned human-readable table.
    pub fn to_table(&self, title: &str) -> String {
        let mut out = format!("{title}\n{:<10}{:>10}\n", "metric", "value");
        out.push_str(&format!("{:<10}{:>10.4}\n", "MRR", self.mrr));
        for (k, v) in &self.hits {
            out.push_str(&format!("{:<10}{:>10.4}\n", format!("H@{k}"), v));
        }
        out.push_str(&format!("{:<10}{:>10}\n", "queries", self.queries));
        out
    }

    /// `query,rank` CSV of the rank dump, if present.
    pub fn ranks_csv(&self) -> Option<String> {
        self.ranks.as_ref().map(|rs| {
            let mut s = String::from("query,rank\n");
            for (i, r) in rs.iter().enumerate() {
                s.push_str(&format!("{i},{r}\n"));
            }
            s
        })
    }
}

pub const COMPLETION_HITS: [usize; 3] = [1, 3, 10];
pub const ALIGNMENT_HITS: [usize; 2] = [1, 10];

/// Filtered MRR and H@{1,3,10} over head and tail queries of `test`.
pub fn completion_report(
    test: &[Triple],
    scorer: &impl LinkScorer,
    known: &HashSet<Triple>,
    policy: TiePolicy,
) -> Result<RankingReport> {
    let ranks: Vec<usize> = completion_ranks(test, scorer, known, policy)
        .iter()
        .map(|q| q.rank)
        .collect();
    Ok(RankingReport::from_ranks(&ranks, &COMPLETION_HITS)?.with_ranks(ranks))
}

/// Rank of `target` among all rows of `candidates` by ascending distance to `query`.
fn distance_rank(query: &[f64], candidates: &impl Rows, target: usize, policy: TiePolicy) -> usize {
    let dt = l2_distance(query, candidates.row_slice(target));
    let (mut higher, mut equal) = (0, 0);
    for c in 0..candidates.num_rows() {
        if c == target {
            continue;
        }
        let d = l2_distance(query, candidates.row_slice(c));
        if d < dt {
            higher += 1;
        } else if d == dt {
            equal += 1;
        }
    }
    policy.rank(higher, equal)
}

/// Ranks for both directions: first every `G1 -> G2` query, then `G2 -> G1`.
pub fn alignment_ranks(
    test: &[(usize, usize)],
    left: &impl Rows,
    right: &impl Rows,
    policy: TiePolicy,
) -> Vec<usize> {
    let forward: Vec<usize> = test
        .par_iter()
        .map(|&(i, j)| distance_rank(left.row_slice(i), right, j, policy))
        .collect();
    let backward: Vec<usize> = test
        .par_iter()
        .map(|&(i, j)| distance_rank(right.row_slice(j), left, i, policy))
        .collect();
    forward.into_iter().chain(backward).collect()
}

/// MRR and H@{1,10} averaged over both alignment directions.
pub fn alignment_report(
    test: &[(usize, usize)],
    left: &impl Rows,
    right: &impl Rows,
    policy: TiePolicy,
) -> Result<RankingReport> {
    let ranks = alignment_ranks(test, left, right, policy);
    Ok(RankingReport::from_ranks(&ranks, &ALIGNMENT_HITS)?.with_ranks(ranks))
}

/// A category is the head or tail side of one relation.
pub type Category = (usize, Side);

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryAssignment {
    /// Categories of each entity.
    pub per_entity: Vec<BTreeSet<Category>>,
}

/// Entities that belong to exactly one category, grouped by that category,
/// keeping only categories with at least `min_members` such entities.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredCategories {
    pub clusters: BTreeMap<Category, Vec<usize>>,
}

impl FilteredCategories {
    pub fn category_of(&self, entity: usize) -> Option<Category> {
        self.clusters
            .iter()
            .find(|(_, m)| m.binary_search(&entity).is_ok())
            .map(|(c, _)| *c)
    }

    pub fn member_lists(&self) -> Vec<Vec<usize>> {
        self.clusters.values().cloned().collect()
    }
}

impl CategoryAssignment {
    pub fn from_graph(kg: &KnowledgeGraph) -> Self {
        let mut per_entity = vec![BTreeSet::new(); kg.num_entities()];
        for t in &kg.triples {
            per_entity[t.head].insert((t.relation, Side::Head));
            per_entity[t.tail].insert((t.relation, Side::Tail));
        }
        Self { per_entity }
    }

    pub fn filtered(&self, min_members: usize) -> FilteredCategories {
        let mut clusters: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
        for (e, cats) in self.per_entity.iter().enumerate() {
            if cats.len() == 1 {
                let c = *cats.iter().next().unwrap();
                clusters.entry(c).or_default().push(e);
            }
        }
        clusters.retain(|_, m| m.len() >= min_members.max(1));
        FilteredCategories { clusters }
    }
}

pub fn category_label(kg: &KnowledgeGraph, (relation, side): Category) -> String {
    let r = kg
        .relations
        .label(relation)
        .map_or_else(|| relation.to_string(), str::to_owned);
    format!("{r}:{side}")
}

fn centroid(rows: &impl Rows, members: &[usize]) -> Vec<f64> {
    let w = rows.row_slice(members[0]).len();
    let mut c = vec![0.0; w];
    for &m in members {
        for (acc, v) in c.iter_mut().zip(rows.row_slice(m)) {
            *acc += v;
        }
    }
    let n = members.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

/// Davies-Bouldin index with mean Euclidean scatter and Euclidean centroid
/// separation: `(1/K) Σ_i max_{j≠i} (S_i + S_j) / M_ij`.
pub fn davies_bouldin(rows: &impl Rows, clusters: &[Vec<usize>]) -> Result<f64> {
    if clusters.len() < 2 {
        return Err(Error::Degenerate(format!(
            "Davies-Bouldin needs at least 2 clusters, got {}",
            clusters.len()
        )));
    }
    if let Some(i) = clusters.iter().position(Vec::is_empty) {
        return Err(Error::Degenerate(format!("cluster {i} is empty")));
    }
    let centroids: Vec<Vec<f64>> = clusters.iter().map(|m| centroid(rows, m)).collect();
    let scatter: Vec<f64> = clusters
        .iter()
        .zip(&centroids)
        .map(|(m, c)| {
            m.iter().map(|&e| l2_distance(rows.row_slice(e), c)).sum::<f64>() / m.len() as f64
        })
        .collect();
    let k = clusters.len();
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0_f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let m = l2_distance(&centroids[i], &centroids[j]);
            if m == 0.0 {
                return Err(Error::Degenerate(format!(
                    "clusters {i} and {j} have coincident centroids"
                )));
            }
            worst = worst.max((scatter[i] + scatter[j]) / m);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailBucket {
    /// `None` is the "all" row.
    pub max_links: Option<usize>,
    pub queries: usize,
    pub mrr_baseline: Option<f64>,
    pub mrr_rpe: Option<f64>,
}

impl LongTailBucket {
    pub fn gap(&self) -> Option<f64> {
        Some(self.mrr_rpe? - self.mrr_baseline?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailReport {
    pub buckets: Vec<LongTailBucket>,
}

pub const DEFAULT_LONG_TAIL_THRESHOLDS: [usize; 4] = [5, 10, 20, 50];

impl LongTailReport {
    pub fn bucket(&self, max_links: Option<usize>) -> Option<&LongTailBucket> {
        self.buckets.iter().find(|b| b.max_links == max_links)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10}{:>9}{:>12}{:>12}{:>10}\n",
            "max_links", "queries", "baseline", "rpe", "gap"
        );
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |x| format!("{x:.4}"));
        for b in &self.buckets {
            let label = b.max_links.map_or_else(|| "all".to_owned(), |n| n.to_string());
            out.push_str(&format!(
                "{:<10}{:>9}{:>12}{:>12}{:>10}\n",
                label,
                b.queries,
                fmt(b.mrr_baseline),
                fmt(b.mrr_rpe),
                fmt(b.gap())
            ));
        }
        out
    }
}

/// MRR per degree bucket for two models ranked on the same queries.
/// `query_degrees[i]` is the degree that decides bucket membership of query `i`.
pub fn long_tail_report(
    query_degrees: &[usize],
    ranks_baseline: &[usize],
    ranks_rpe: &[usize],
    thresholds: &[usize],
) -> Result<LongTailReport> {
    if query_degrees.len() != ranks_baseline.len() || query_degrees.len() != ranks_rpe.len() {
        return Err(Error::Shape("one degree and two ranks per query required".into()));
    }
    let mut limits: Vec<Option<usize>> = thresholds.iter().copied().map(Some).collect();
    limits.sort();
    limits.dedup();
    limits.push(None);
    let mrr = |ranks: &[usize], sel: &[usize]| -> Option<f64> {
        let picked: Vec<usize> = sel.iter().map(|&i| ranks[i]).collect();
        RankingReport::from_ranks(&picked, &[]).ok().map(|r| r.mrr)
    };
    let buckets = limits
        .into_iter()
        .map(|limit| {
            let sel: Vec<usize> = (0..query_degrees.len())
                .filter(|&i| limit.is_none_or(|n| query_degrees[i] <= n))
                .collect();
            LongTailBucket {
                max_links: limit,
                queries: sel.len(),
                mrr_baseline: mrr(ranks_baseline, &sel),
                mrr_rpe: mrr(ranks_rpe, &sel),
            }
        })
        .collect();
    Ok(LongTailReport { buckets })
}

/// Degree of the answer entity for each completion query.
pub fn answer_degrees(queries: &[QueryRank], degrees: &[usize]) -> Vec<usize> {
    queries.iter().map(|q| degrees[q.answer]).collect()
}

/// CSV rows `label, categories, v_0 .. v_{w-1}` for the listed entities.
/// Categories are `relation:side` joined with `;`.
pub fn export_embeddings_with_categories(
    path: &Path,
    kg: &KnowledgeGraph,
    rows: &impl Rows,
    entities: impl IntoIterator<Item = (usize, Vec<Category>)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for (e, cats) in entities {
        let label = kg
            .entities
            .label(e)
            .map_or_else(|| e.to_string(), str::to_owned);
        let joined = cats
            .iter()
            .map(|&c| category_label(kg, c))
            .collect::<Vec<_>>()
            .join(";");
        let mut rec = vec![label, joined];
        rec.extend(rows.row_slice(e).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Every entity with all its categories.
pub fn all_categories(assign: &CategoryAssignment) -> Vec<(usize, Vec<Category>)> {
    assign
        .per_entity
        .iter()
        .enumerate()
        .map(|(e, c)| (e, c.iter().copied().collect()))
        .collect()
}

/// Only the single-category entities of a filtered view.
pub fn filtered_categories(view: &FilteredCategories) -> Vec<(usize, Vec<Category>)> {
    let mut out: Vec<(usize, Vec<Category>)> = view
        .clusters
        .iter()
        .flat_map(|(c, m)| m.iter().map(move |&e| (e, vec![*c])))
        .collect();
    out.sort();
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedRow {
    pub label: String,
    pub categories: Vec<String>,
    pub values: Vec<f64>,
}

pub fn read_embedding_export(path: &Path) -> Result<Vec<ExportedRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected label and categories".into(),
            });
        }
        let values = rec
            .iter()
            .skip(2)
            .map(str::parse)
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        let categories = if rec[1].is_empty() {
            Vec::new()
        } else {
            rec[1].split(';').map(str::to_owned).collect()
        };
        out.push(ExportedRow {
            label: rec[0].to_owned(),
            categories,
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_cases() {
        let scores = [0.1, 0.9, 0.3];
        assert_eq!(filtered_rank(&scores, 1, |_| false, TiePolicy::Mean), 1);
        let tie = [0.5, 0.5, 0.1];
        assert_eq!(filtered_rank(&tie, 0, |_| false, TiePolicy::Mean), 2);
        assert_eq!(filtered_rank(&tie, 0, |_| false, TiePolicy::Optimistic), 1);
        assert_eq!(filtered_rank(&tie, 0, |_| false, TiePolicy::Pessimistic), 2);
        // filtering the competing candidate lifts the answer to rank 1
        assert_eq!(filtered_rank(&tie, 0, |c| c == 1, TiePolicy::Mean), 1);
        // the answer is never filtered out of its own query
        assert_eq!(filtered_rank(&[0.2, 0.9], 0, |_| true, TiePolicy::Mean), 1);
    }

    #[test]
    fn report_arithmetic() {
        let r = RankingReport::from_ranks(&[1, 1, 1], &COMPLETION_HITS).unwrap();
        assert_eq!(r.mrr, 1.0);
        assert_eq!(r.hits_at(1), Some(1.0));
        let r = RankingReport::from_ranks(&[1, 2, 4], &COMPLETION_HITS).unwrap();
        assert!((r.mrr - 0.583_333_333_333).abs() < 1e-9);
        assert!((r.hits_at(3).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(RankingReport::from_ranks(&[], &COMPLETION_HITS).is_err());
        assert!(RankingReport::from_ranks(&[0], &COMPLETION_HITS).is_err());
        assert!(r.to_table("t").contains("H@10"));
    }

    #[test]
    fn dbi_cases() {
        let pts: Vec<Vec<f64>> = vec![vec![0.0], vec![5.0]];
        assert_eq!(davies_bouldin(&pts, &[vec![0], vec![1]]).unwrap(), 0.0);
        let pts: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0], vec![10.0], vec![12.0]];
        let d = davies_bouldin(&pts, &[vec![0, 1], vec![2, 3]]).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        let same: Vec<Vec<f64>> = vec![vec![1.0], vec![1.0]];
        assert!(davies_bouldin(&same, &[vec![0], vec![1]]).is_err());
        assert!(davies_bouldin(&same, &[vec![0]]).is_err());
    }

    #[test]
    fn alignment_identical_embeddings() {
        let left: Vec<Vec<f64>> = (0..4).map(|i| vec![10.0 * i as f64, 0.0]).collect();
        let right = left.clone();
        let test = [(0, 0), (1, 1), (2, 2), (3, 3)];
        let r = alignment_report(&test, &left, &right, TiePolicy::Mean).unwrap();
        assert_eq!(r.hits_at(1), Some(1.0));
        assert_eq!(r.queries, 8);
    }

    #[test]
    fn long_tail_cases() {
        let r = long_tail_report(&[3, 3, 3], &[1, 2, 3], &[1, 1, 1], &[5]).unwrap();
        assert_eq!(r.buckets[0], LongTailBucket { max_links: Some(5), ..r.buckets[1].clone() });
        let r = long_tail_report(&[1, 7, 30], &[1, 2, 3], &[1, 1, 1], &[5, 10, 20, 50]).unwrap();
        let counts: Vec<usize> = r.buckets.iter().map(|b| b.queries).collect();
        assert_eq!(counts, vec![1, 2, 2, 3, 3]);
        let r = long_tail_report(&[30], &[1], &[1], &[5]).unwrap();
        assert_eq!(r.buckets[0].queries, 0);
        assert_eq!(r.buckets[0].mrr_baseline, None);
        assert!(r.to_table().contains("all"));
    }

    #[test]
    fn category_filter_and_export() {
        let kg = KnowledgeGraph::from_triples(
            "t",
            3,
            2,
            [Triple::new(0, 0, 1), Triple::new(0, 1, 2)],
        )
        .unwrap();
        let assign = CategoryAssignment::from_graph(&kg);
        assert_eq!(assign.per_entity[0].len(), 2);
        let view = assign.filtered(1);
        assert_eq!(view.category_of(0), None);
        assert_eq!(view.category_of(1), Some((0, Side::Tail)));

        let rows: Vec<Vec<f64>> = vec![vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-300], vec![7.0, 8.0]];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("emb.csv");
        export_embeddings_with_categories(&p, &kg, &rows, all_categories(&assign)).unwrap();
        let back = read_embedding_export(&p).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].categories, vec!["r0:head", "r1:head"]);
        for (row, orig) in back.iter().zip(&rows) {
            assert_eq!(&row.values, orig);
        }
        let pf = dir.path().join("filtered.csv");
        export_embeddings_with_categories(&pf, &kg, &rows, filtered_categories(&view)).unwrap();
        let back = read_embedding_export(&pf).unwrap();
        assert_eq!(back.len(), 2);
        assert!(back.iter().all(|r| r.categories.len() == 1));
    }
}
