//! Prototype-area geometry: shrinkage, the score bounds and the ordering theorems.

use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use protokg::embedding::l2_distance;
use protokg::geometry::{
    area_distance, build_areas, check_all_completion, check_theorem_alignment, check_theorem_completion,
    constructed_completion_instance, grid_in_disc, lambda_premise_profile, CompletionTheorem, LemmaInstance,
    PrototypeArea, SampleOptions, Sampling, EXACT_TOL,
};
use protokg::kg::{AugmentedGraph, KnowledgeGraph, Side, Triple};
use protokg::rng::{self, Stream};
use protokg::rotate::rotate_score;

fn random_graph(n: usize, m: usize, edges: usize, seed: u64) -> AugmentedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = std::collections::HashSet::new();
    while triples.len() < edges {
        triples.insert(Triple::new(rng.random_range(0..n), rng.random_range(0..m), rng.random_range(0..n)));
    }
    let mut triples: Vec<_> = triples.into_iter().collect();
    triples.sort_by_key(|t| (t.head, t.relation, t.tail));
    AugmentedGraph::new(KnowledgeGraph::from_triples("g", n, m, triples).unwrap()).unwrap()
}

fn random_rows(rows: usize, width: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows)
        .map(|_| (0..width).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect()
}

#[test]
fn aggregated_radius_is_lambda_times_raw_radius() {
    let g = random_graph(120, 6, 500, 1);
    let rows = random_rows(g.num_nodes(), 10, 2);
    let raw = build_areas(&rows, &g, 1.0).unwrap();
    for lambda in [0.1, 0.5, 0.9] {
        let agg = build_areas(&rows, &g, lambda).unwrap();
        for (a, b) in raw.iter().zip(&agg) {
            // radius computed from scratch: max member distance after blending
            let direct = b
                .members
                .iter()
                .map(|&e| {
                    let blended: Vec<f64> = rows[e]
                        .iter()
                        .zip(&a.center)
                        .map(|(x, c)| lambda * x + (1.0 - lambda) * c)
                        .collect();
                    l2_distance(&blended, &a.center)
                })
                .fold(0.0, f64::max);
            assert!((b.radius - lambda * a.radius).abs() <= 1e-12, "{}: {} vs {}", a.label(), b.radius, lambda * a.radius);
            assert!((b.radius - direct).abs() <= 1e-12);
        }
    }
}

fn ball() -> impl Strategy<Value = PrototypeArea> {
    (prop::collection::vec(-5.0f64..5.0, 4), 0.0f64..3.0)
        .prop_map(|(c, r)| PrototypeArea::ball(0, Side::Head, c, r))
}

proptest! {
    #[test]
    fn area_distance_symmetric_and_triangle_bound(a in ball(), b in ball(), c in ball()) {
        prop_assert!((area_distance(&a, &b) - area_distance(&b, &a)).abs() <= 1e-12);
        prop_assert!(area_distance(&a, &b) >= 0.0);
        // a path through b can cross b's ball
        let bound = area_distance(&a, &b) + area_distance(&b, &c) + 2.0 * b.radius;
        prop_assert!(area_distance(&a, &c) <= bound + 1e-12);
    }

    #[test]
    fn failed_premises_never_assert_conclusions(
        centers in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 4),
        radii in prop::collection::vec(0.0f64..1.5, 4),
        phase in -3.0f64..3.0,
        seed in 0u64..1000,
    ) {
        let sides = [(0, Side::Head), (1, Side::Head), (0, Side::Tail), (1, Side::Tail)];
        let areas: Vec<PrototypeArea> = sides
            .iter()
            .zip(centers.iter().zip(&radii))
            .map(|(&(r, s), (c, &rad))| PrototypeArea::ball(r, s, c.clone(), rad))
            .collect();
        let opts = SampleOptions { per_region: 10, ..Default::default() };
        let report = check_all_completion(&areas, &[vec![phase], vec![phase]], &opts, seed).unwrap();
        for e in &report.entries {
            if !e.premise_satisfied {
                prop_assert!(e.conclusion_verified.is_none());
                prop_assert!(e.worst_margin.is_none());
            }
        }
        let mut rng = rng::stream(seed, Stream::TheorySampling);
        let align = check_theorem_alignment(&areas, &areas, &[(0, 1), (2, 3)], &opts, &mut rng).unwrap();
        for e in &align.entries {
            // distinct areas are never identical, so the premise cannot hold
            if !e.premise_satisfied {
                prop_assert!(e.conclusion_verified.is_none());
            }
        }
    }
}

/// The three bounds, evaluated directly.
fn bounds_hold(inst: &LemmaInstance, tol: f64) -> bool {
    let f = rotate_score(&inst.h, &inst.phase, &inst.t);
    let a = l2_distance(&inst.h, &inst.p_head);
    let b = l2_distance(&inst.t, &inst.p_tail);
    f >= -(a + b) - tol && f <= a - b + tol && f <= b - a + tol
}

#[test]
fn lemma_holds_on_random_instances() {
    let mut rng = rng::stream(1, Stream::TheorySampling);
    let mut violations = 0;
    for i in 0..10_000 {
        let inst = LemmaInstance::random(1 + i % 8, 0.0, &mut rng);
        let e = inst.check(EXACT_TOL);
        assert!(e.premise_satisfied, "assumption residual {}", e.assumption_residual);
        assert!(bounds_hold(&inst, EXACT_TOL));
        violations += usize::from(e.violated());
    }
    assert_eq!(violations, 0);
}

#[test]
fn perturbed_assumption_is_flagged() {
    let mut rng = rng::stream(2, Stream::TheorySampling);
    let mut direct_failures = 0;
    for _ in 0..2_000 {
        let inst = LemmaInstance::random(2, 3.0, &mut rng);
        let e = inst.check(EXACT_TOL);
        assert!(!e.premise_satisfied);
        assert!(e.conclusion_verified.is_none());
        assert!(e.assumption_residual > 2.9);
        direct_failures += usize::from(!bounds_hold(&inst, EXACT_TOL));
    }
    // the bounds really do break without the assumption, so the flag matters
    assert!(direct_failures > 0);
}

#[test]
fn constructed_instance_orders_scores_on_grid_samples() {
    let (areas, phases) = constructed_completion_instance();
    let opts = SampleOptions {
        per_region: 100,
        scheme: Sampling::Grid,
        include_members: true,
        tolerance: EXACT_TOL,
    };
    let report = check_all_completion(&areas, &phases, &opts, 0).unwrap();
    assert!(report.all_passed(), "{}", report.to_text());
    // premise margin far beyond the radii
    for e in &report.entries {
        assert!(e.premise_margin >= 10.0 * 0.1 * 2.0, "{e:?}");
    }

    // independent check for relation 0, heads: every grid point of the head
    // area must outscore every point of the second head area
    let grid = |a: &PrototypeArea| grid_in_disc(&a.center, a.radius, 100).unwrap();
    let (h0, h1, t0) = (grid(&areas[0]), grid(&areas[1]), grid(&areas[2]));
    for t in &t0 {
        let lo_in = h0.iter().map(|h| rotate_score(h, &phases[0], t)).fold(f64::INFINITY, f64::min);
        let hi_out = h1.iter().map(|h| rotate_score(h, &phases[0], t)).fold(f64::NEG_INFINITY, f64::max);
        assert!(lo_in > hi_out);
    }
}

#[test]
fn ball_sampled_theorem_checks_pass_with_wide_separation() {
    let k = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phase: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let unit = |c: Vec<f64>| -> Vec<f64> { c };
    let mut areas = Vec::new();
    let mut phases = Vec::new();
    // two relations, heads far apart, tails placed at the rotated heads
    for (r, offset) in [(0, 0.0), (1, 40.0)] {
        let head: Vec<f64> = (0..2 * k).map(|j| if j == 0 { offset } else { 0.0 }).collect();
        let tail = protokg::rotate::rotate_vec(&head, &phase);
        areas.push((r, Side::Head, unit(head)));
        areas.push((r, Side::Tail, tail));
        phases.push(phase.clone());
    }
    let areas: Vec<PrototypeArea> = areas
        .into_iter()
        .map(|(r, s, c)| PrototypeArea::ball(r, s, c, 0.5))
        .collect();
    let opts = SampleOptions::default();
    let report = check_all_completion(&areas, &phases, &opts, 4).unwrap();
    assert!(report.all_passed(), "{}", report.to_text());

    let mut rng = rng::stream(4, Stream::TheorySampling);
    let one = check_theorem_completion(&areas, 1, &phase, CompletionTheorem::Tails, &opts, &mut rng).unwrap();
    assert!(one.passed());
    assert!(one.comparisons > 0);
}

#[test]
fn overlapping_areas_fail_the_premise() {
    let areas = vec![
        PrototypeArea::ball(0, Side::Head, vec![0.0, 0.0], 1.0),
        PrototypeArea::ball(1, Side::Head, vec![0.5, 0.0], 1.0),
        PrototypeArea::ball(0, Side::Tail, vec![0.0, 0.0], 1.0),
        PrototypeArea::ball(1, Side::Tail, vec![0.5, 0.0], 1.0),
    ];
    let report = check_all_completion(&areas, &[vec![0.0], vec![0.0]], &SampleOptions::default(), 0).unwrap();
    assert_eq!(report.premise_failures(), report.entries.len());
    assert_eq!(report.violations(), 0);
    assert!(!report.all_passed());
}

#[test]
fn alignment_theorems_on_identical_areas() {
    let areas = vec![
        PrototypeArea::ball(0, Side::Head, vec![0.0, 0.0, 0.0], 0.3),
        PrototypeArea::ball(0, Side::Tail, vec![20.0, 0.0, 0.0], 0.3),
    ];
    let mut rng = rng::stream(3, Stream::TheorySampling);
    let opts = SampleOptions::default();
    let report = check_theorem_alignment(&areas, &areas, &[(0, 0), (1, 1)], &opts, &mut rng).unwrap();
    assert_eq!(report.entries.len(), 4);
    assert!(report.all_passed(), "{}", report.to_text());

    // shifting one side breaks the identical-area assumption
    let mut moved = areas.clone();
    moved[0].center[0] += 0.5;
    let report = check_theorem_alignment(&areas, &moved, &[(0, 0)], &opts, &mut rng).unwrap();
    assert!(report.entries.iter().all(|e| !e.premise_satisfied && e.conclusion_verified.is_none()));
}

#[test]
fn feasible_lambdas_grow_as_areas_separate() {
    // relation r links block 2r (heads) to block 2r+1 (tails), 5 entities each
    let (m, block) = (2, 5);
    let mut triples = Vec::new();
    for r in 0..m {
        for i in 0..block {
            triples.push(Triple::new(2 * r * block + i, r, (2 * r + 1) * block + (i + 1) % block));
        }
    }
    let n = 2 * m * block;
    let g = AugmentedGraph::new(KnowledgeGraph::from_triples("blocks", n, m, triples).unwrap()).unwrap();
    let base = random_rows(g.num_nodes(), 4, 10);
    let block_of = |node: usize| match g.prototype_role(node) {
        Some((r, Side::Head)) => 2 * r,
        Some((r, Side::Tail)) => 2 * r + 1,
        None => node / block,
    };
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let mut previous: Vec<bool> = vec![false; grid.len()];
    for spread in [0.0, 2.0, 5.0, 10.0, 40.0] {
        let mut rows = base.clone();
        for (node, row) in rows.iter_mut().enumerate() {
            // blocks differ only along axis 0, so every center gap grows with spread
            row[0] = spread * block_of(node) as f64;
        }
        let feasible: Vec<bool> = lambda_premise_profile(&rows, &g, &grid, 1e-9)
            .unwrap()
            .into_iter()
            .map(|(_, ok)| ok)
            .collect();
        // translation keeps radii, so more spread only adds feasible λ
        for (was, now) in previous.iter().zip(&feasible) {
            assert!(!*was || *now, "spread {spread}: {previous:?} -> {feasible:?}");
        }
        // radii shrink with λ, so feasibility is closed downward
        if let Some(last_ok) = feasible.iter().rposition(|ok| *ok) {
            assert!(feasible[..=last_ok].iter().all(|ok| *ok), "{feasible:?}");
        }
        previous = feasible;
    }
    assert!(previous.iter().all(|ok| *ok), "wide spread should satisfy every λ");
}
