//! Ranking and metric code checked against brute-force enumeration.

use std::collections::HashSet;

use proptest::prelude::*;

use protokg::eval::{
    alignment_ranks, completion_ranks, filtered_rank, LinkScorer, RankingReport, TiePolicy,
};
use protokg::kg::{Side, Triple};

const POLICIES: [TiePolicy; 3] = [TiePolicy::Optimistic, TiePolicy::Pessimistic, TiePolicy::Mean];

/// Sorts the surviving candidates by descending score and reads the answer's
/// first and last possible 1-based positions.
fn brute_rank(scores: &[f64], answer: usize, excluded: &HashSet<usize>, policy: TiePolicy) -> usize {
    let mut kept: Vec<(f64, usize)> = scores
        .iter()
        .enumerate()
        .filter(|(c, _)| *c == answer || !excluded.contains(c))
        .map(|(c, &s)| (s, c))
        .collect();
    kept.sort_by(|a, b| b.0.total_cmp(&a.0));
    let target = scores[answer];
    let first = kept.iter().position(|&(s, _)| s == target).unwrap() + 1;
    let last = kept.iter().rposition(|&(s, _)| s == target).unwrap() + 1;
    match policy {
        TiePolicy::Optimistic => first,
        TiePolicy::Pessimistic => last,
        TiePolicy::Mean => (first + last).div_ceil(2),
    }
}

/// Coarse scores so ties are common.
fn score_table(max_entities: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0u8..6).prop_map(|v| v as f64 * 0.5), 2..=max_entities)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn filtered_rank_matches_enumeration(
        scores in score_table(50),
        answer_frac in 0.0f64..1.0,
        mask in prop::collection::vec(any::<bool>(), 50),
    ) {
        let answer = ((scores.len() as f64) * answer_frac) as usize % scores.len();
        let excluded: HashSet<usize> = (0..scores.len()).filter(|&c| mask[c]).collect();
        for policy in POLICIES {
            let got = filtered_rank(&scores, answer, |c| excluded.contains(&c), policy);
            prop_assert_eq!(got, brute_rank(&scores, answer, &excluded, policy), "{:?}", policy);
        }
    }
}

/// Scores read from a fixed table indexed by `(anchor, relation, side, candidate)`.
struct TableScorer {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl TableScorer {
    fn at(&self, anchor: usize, relation: usize, side: Side, cand: usize) -> f64 {
        let s = usize::from(side == Side::Head);
        self.values[((anchor * self.m + relation) * 2 + s) * self.n + cand]
    }
}

impl LinkScorer for TableScorer {
    fn num_entities(&self) -> usize {
        self.n
    }

    fn score_candidates(&self, anchor: usize, relation: usize, missing: Side) -> Vec<f64> {
        (0..self.n).map(|c| self.at(anchor, relation, missing, c)).collect()
    }
}

fn kg_case() -> impl Strategy<Value = (usize, usize, Vec<Triple>, Vec<f64>)> {
    (3usize..=12, 1usize..=3).prop_flat_map(|(n, m)| {
        let triple = (0..n, 0..m, 0..n).prop_map(|(h, r, t)| Triple::new(h, r, t));
        (
            Just(n),
            Just(m),
            prop::collection::vec(triple, 1..30),
            prop::collection::vec((0u8..4).prop_map(f64::from), n * m * 2 * n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn completion_ranks_match_filtered_enumeration((n, m, triples, values) in kg_case(), split in 0usize..30) {
        let scorer = TableScorer { n, m, values };
        let known: HashSet<Triple> = triples.iter().copied().collect();
        let test = &triples[split.min(triples.len() - 1)..];
        for policy in POLICIES {
            let got = completion_ranks(test, &scorer, &known, policy);
            prop_assert_eq!(got.len(), 2 * test.len());
            for (i, &t) in test.iter().enumerate() {
                for (j, missing) in [Side::Head, Side::Tail].into_iter().enumerate() {
                    let q = &got[2 * i + j];
                    let (anchor, answer) = match missing {
                        Side::Tail => (t.head, t.tail),
                        Side::Head => (t.tail, t.head),
                    };
                    let scores: Vec<f64> = (0..n).map(|c| scorer.at(anchor, t.relation, missing, c)).collect();
                    // every other candidate that forms a known triple is dropped
                    let excluded: HashSet<usize> = (0..n)
                        .filter(|&c| c != answer)
                        .filter(|&c| {
                            let cand = match missing {
                                Side::Tail => Triple::new(anchor, t.relation, c),
                                Side::Head => Triple::new(c, t.relation, anchor),
                            };
                            known.contains(&cand)
                        })
                        .collect();
                    prop_assert_eq!(q.missing, missing);
                    prop_assert_eq!(q.answer, answer);
                    prop_assert_eq!(q.rank, brute_rank(&scores, answer, &excluded, policy));
                }
            }
        }
    }

    #[test]
    fn alignment_ranks_match_enumeration(
        left in prop::collection::vec(prop::collection::vec((0u8..3).prop_map(f64::from), 2), 2..15),
        right_seed in prop::collection::vec(prop::collection::vec((0u8..3).prop_map(f64::from), 2), 15),
    ) {
        let n = left.len();
        let right: Vec<Vec<f64>> = right_seed[..n].to_vec();
        let test: Vec<(usize, usize)> = (0..n).map(|i| (i, (i * 7 + 3) % n)).collect();
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        for policy in POLICIES {
            let got = alignment_ranks(&test, &left, &right, policy);
            prop_assert_eq!(got.len(), 2 * n);
            for (k, &(i, j)) in test.iter().enumerate() {
                let fwd: Vec<f64> = right.iter().map(|r| -dist(&left[i], r)).collect();
                let bwd: Vec<f64> = left.iter().map(|l| -dist(&right[j], l)).collect();
                prop_assert_eq!(got[k], brute_rank(&fwd, j, &HashSet::new(), policy));
                prop_assert_eq!(got[n + k], brute_rank(&bwd, i, &HashSet::new(), policy));
            }
        }
    }

    #[test]
    fn report_matches_direct_means(ranks in prop::collection::vec(1usize..40, 1..200)) {
        let r = RankingReport::from_ranks(&ranks, &[1, 3, 10]).unwrap();
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|&x| 1.0 / x as f64).sum::<f64>() / n;
        prop_assert!((r.mrr - mrr).abs() < 1e-12);
        for k in [1, 3, 10] {
            let h = ranks.iter().filter(|&&x| x <= k).count() as f64 / n;
            prop_assert_eq!(r.hits_at(k), Some(h));
        }
        prop_assert_eq!(r.queries, ranks.len());
    }
}

#[test]
fn optimistic_mean_pessimistic_order() {
    let scores = [1.0, 2.0, 2.0, 2.0, 0.5];
    let ranks: Vec<usize> = POLICIES
        .iter()
        .map(|&p| filtered_rank(&scores, 1, |_| false, p))
        .collect();
    assert_eq!(ranks, vec![1, 3, 2]);
}
