//! Training-side checks: gradients, negative mining, loss trajectory and the
//! clustering and long-tail metrics.

use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protokg::eval::{davies_bouldin, long_tail_report};
use protokg::gcn::{check_objective_gradients, mine_negatives, Activation, GcnConfig, GcnMode};
use protokg::kg::AugmentedGraph;
use protokg::matrix::Matrix;
use protokg::rotate::{check_loss_gradients, train_completion, CompletionConfig, CompletionModel};
use protokg::synth::{
    alignment_fixture, category_graph, completion_fixture, AlignmentFixtureConfig, CategoryGraphConfig,
    CompletionFixtureConfig,
};

fn small_graph(seed: u64) -> CategoryGraphConfig {
    CategoryGraphConfig {
        entities: 16,
        relations: 2,
        triples_per_relation: 10,
        seed,
        ..Default::default()
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    let start = Instant::now();
    let cfg = small_graph(3);
    let g = category_graph(&cfg).unwrap();
    let config = CompletionConfig {
        dim: 8,
        batch_size: 8,
        negative_sample_size: 4,
        seed: 3,
        ..Default::default()
    };
    for kind in [CompletionModel::Rotate, CompletionModel::RpeRotate] {
        let r = check_loss_gradients(cfg.entities, cfg.relations, &g.triples, &config, kind, 8, 1e-4, 1e-4).unwrap();
        assert!(r.passed && r.max_rel_error < 1e-4, "{kind:?}: {r:?}");
        assert!(r.checked > 0);
    }

    let f = alignment_fixture(&AlignmentFixtureConfig {
        graph: small_graph(5),
        train_fraction: 0.5,
    })
    .unwrap();
    let [a, b] = f.graphs;
    let graphs = [AugmentedGraph::new(a).unwrap(), AugmentedGraph::new(b).unwrap()];
    let train: Vec<(usize, usize)> = f.seeds.train.iter().copied().take(8).collect();
    let config = GcnConfig {
        dim: 8,
        activation: Activation::Tanh,
        negatives_per_positive: 2,
        margin: 3.0,
        dropout_rate: 0.0,
        seed: 5,
        ..Default::default()
    };
    for mode in [GcnMode::Gcn, GcnMode::RpeGcn] {
        let r = check_objective_gradients([&graphs[0], &graphs[1]], &train, &config, mode, 1e-4, 1e-4).unwrap();
        assert!(r.passed && r.max_rel_error < 1e-4, "{mode:?}: {r:?}");
    }
    assert!(start.elapsed().as_secs_f64() < 10.0, "took {:?}", start.elapsed());
}

/// Full O(n²) cosine scan with the lower-id tie rule.
fn brute_nearest(m: &Matrix, anchor: usize, count: usize) -> Vec<usize> {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut order: Vec<usize> = (0..m.rows()).filter(|&c| c != anchor).collect();
    order.sort_by(|&x, &y| {
        cos(m.row(anchor), m.row(y))
            .total_cmp(&cos(m.row(anchor), m.row(x)))
            .then(x.cmp(&y))
    });
    order.truncate(count);
    order
}

#[test]
fn mining_matches_brute_force_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut random = |n: usize| {
        let mut m = Matrix::zeros(n, 6);
        for i in 0..n {
            for v in m.row_mut(i) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        m
    };
    let (mut left, right) = (random(100), random(100));
    // exact duplicates force cosine ties
    let copy = left.row(3).to_vec();
    left.row_mut(40).copy_from_slice(&copy);
    left.row_mut(77).copy_from_slice(&copy);
    let train: Vec<(usize, usize)> = (0..100).map(|i| (i, (i * 31) % 100)).collect();
    let cache = mine_negatives(&left, &right, &train, 25, 0).unwrap();
    for (p, &(i, j)) in train.iter().enumerate() {
        assert_eq!(cache.left[p], brute_nearest(&left, i, 25), "left {i}");
        assert_eq!(cache.right[p], brute_nearest(&right, j, 25), "right {j}");
    }
}

#[test]
fn completion_loss_falls_over_the_first_epochs() {
    let fixture = completion_fixture(&CompletionFixtureConfig {
        graph: CategoryGraphConfig {
            relations: 4,
            seed: 11,
            ..Default::default()
        },
        ..Default::default()
    })
    .unwrap();
    let config = CompletionConfig {
        dim: 32,
        seed: 11,
        ..Default::default()
    };
    let per_epoch = fixture.dataset.train().len().div_ceil(config.batch_size);
    let epochs = 50;
    let config = CompletionConfig {
        max_steps: epochs * per_epoch,
        ..config
    };
    let run = train_completion(&fixture.dataset, &config, CompletionModel::RpeRotate).unwrap();
    let means: Vec<f64> = run
        .curve
        .chunks(per_epoch)
        .map(|c| c.iter().map(|s| s.loss).sum::<f64>() / c.len() as f64)
        .collect();
    assert_eq!(means.len(), epochs);
    let falling = means.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(
        falling as f64 >= 0.9 * (epochs - 1) as f64,
        "{falling} of {} epoch transitions fell: {means:?}",
        epochs - 1
    );
}

/// Textbook Davies-Bouldin written out independently.
fn reference_dbi(points: &[Vec<f64>], clusters: &[Vec<usize>]) -> f64 {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let dim = points[0].len();
    let stats: Vec<(Vec<f64>, f64)> = clusters
        .iter()
        .map(|m| {
            let mut c = vec![0.0; dim];
            for &e in m {
                for (a, v) in c.iter_mut().zip(&points[e]) {
                    *a += v;
                }
            }
            c.iter_mut().for_each(|a| *a /= m.len() as f64);
            let s = m.iter().map(|&e| dist(&points[e], &c)).sum::<f64>() / m.len() as f64;
            (c, s)
        })
        .collect();
    let worst: Vec<f64> = (0..stats.len())
        .map(|i| {
            (0..stats.len())
                .filter(|&j| j != i)
                .map(|j| (stats[i].1 + stats[j].1) / dist(&stats[i].0, &stats[j].0))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    worst.iter().sum::<f64>() / worst.len() as f64
}

#[test]
fn dbi_hand_example() {
    let points = vec![vec![0.0], vec![2.0], vec![10.0], vec![12.0]];
    let dbi = davies_bouldin(&points, &[vec![0, 1], vec![2, 3]]).unwrap();
    assert!((dbi - 0.2).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dbi_matches_reference(
        points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..40),
        k in 2usize..5,
    ) {
        let clusters: Vec<Vec<usize>> = (0..k).map(|c| (c..points.len()).step_by(k).collect()).collect();
        let got = davies_bouldin(&points, &clusters).unwrap();
        let want = reference_dbi(&points, &clusters);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0), "{got} vs {want}");
        // relabelling the clusters changes nothing
        let mut rev = clusters.clone();
        rev.reverse();
        prop_assert!((davies_bouldin(&points, &rev).unwrap() - got).abs() <= 1e-12 * got.max(1.0));
    }

    #[test]
    fn long_tail_buckets_match_recomputation(
        cases in prop::collection::vec((1usize..60, 1usize..21, 1usize..21), 1..80),
    ) {
        // 20 candidate entities, so ranks live in 1..=20
        let degrees: Vec<usize> = cases.iter().map(|c| c.0).collect();
        let base: Vec<usize> = cases.iter().map(|c| c.1).collect();
        let rpe: Vec<usize> = cases.iter().map(|c| c.2).collect();
        let report = long_tail_report(&degrees, &base, &rpe, &[20, 5, 10, 50]).unwrap();
        let limits = [Some(5), Some(10), Some(20), Some(50), None];
        prop_assert_eq!(report.buckets.len(), limits.len());
        let mut last = 0;
        for (b, limit) in report.buckets.iter().zip(limits) {
            prop_assert_eq!(b.max_links, limit);
            let picked: Vec<usize> = (0..degrees.len()).filter(|&i| limit.is_none_or(|n| degrees[i] <= n)).collect();
            prop_assert_eq!(b.queries, picked.len());
            prop_assert!(b.queries >= last);
            last = b.queries;
            let mrr = |r: &[usize]| -> Option<f64> {
                (!picked.is_empty()).then(|| picked.iter().map(|&i| 1.0 / r[i] as f64).sum::<f64>() / picked.len() as f64)
            };
            for (got, want) in [(b.mrr_baseline, mrr(&base)), (b.mrr_rpe, mrr(&rpe))] {
                match (got, want) {
                    (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                    (x, y) => prop_assert_eq!(x, y),
                }
            }
        }
    }
}

#[test]
fn uniform_low_degree_fills_every_bucket() {
    let degrees = vec![3; 12];
    let ranks: Vec<usize> = (1..=12).collect();
    let report = long_tail_report(&degrees, &ranks, &ranks, &[5, 10]).unwrap();
    let all = report.bucket(None).unwrap();
    assert_eq!(report.bucket(Some(5)).unwrap(), &protokg::eval::LongTailBucket { max_links: Some(5), ..all.clone() });
}
