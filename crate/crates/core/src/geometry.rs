//! Prototype areas and numerical checks of the score-ordering guarantees.
//!
//! An area is the closed ball around a prototype embedding whose radius is the
//! largest member distance. Checks never claim a conclusion when their premise
//! fails; such entries carry `conclusion_verified: None`.

use std::fmt::Write as _;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{l2_distance, l2_norm};
use crate::error::{Error, Result};
use crate::kg::{AugmentedGraph, Side};
use crate::matrix::Rows;
use crate::rng::{self, Rng, Stream};
use crate::rotate::{rotate_score, rotate_vec};

/// Tolerance for claims that hold in exact arithmetic.
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for the prototype assumption in sampled checks.
pub const SAMPLED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeArea {
    pub relation: usize,
    pub side: Side,
    pub center: Vec<f64>,
    pub radius: f64,
    pub members: Vec<usize>,
    /// Member embeddings used for the radius (aggregated when λ < 1).
    pub member_points: Vec<Vec<f64>>,
}

impl PrototypeArea {
    pub fn new(
        relation: usize,
        side: Side,
        center: Vec<f64>,
        members: Vec<usize>,
        member_points: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if member_points.is_empty() {
            return Err(Error::Degenerate(format!(
                "{side} area of relation {relation} has no members"
            )));
        }
        let radius = member_points
            .iter()
            .map(|p| l2_distance(p, &center))
            .fold(0.0, f64::max);
        Ok(Self {
            relation,
            side,
            center,
            radius,
            members,
            member_points,
        })
    }

    /// A ball with no recorded members, for constructed instances.
    pub fn ball(relation: usize, side: Side, center: Vec<f64>, radius: f64) -> Self {
        Self {
            relation,
            side,
            center,
            radius,
            members: Vec::new(),
            member_points: Vec::new(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        l2_distance(x, &self.center) <= self.radius
    }

    fn same_set(&self, other: &PrototypeArea, tol: f64) -> bool {
        l2_distance(&self.center, &other.center) <= tol && (self.radius - other.radius).abs() <= tol
    }

    pub fn label(&self) -> String {
        format!("r{}:{}", self.relation, self.side)
    }
}

/// One area per prototype, in node order: all head areas, then all tail areas.
/// `rows` is indexed like the augmented graph (entities, then prototypes).
/// Members are aggregated as `λe + (1-λ)c` before measuring the radius.
pub fn build_areas(rows: &impl Rows, graph: &AugmentedGraph, lambda: f64) -> Result<Vec<PrototypeArea>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config(format!("lambda {lambda} outside (0, 1]")));
    }
    if rows.num_rows() < graph.num_nodes() {
        return Err(Error::Shape(format!(
            "{} rows for {} graph nodes",
            rows.num_rows(),
            graph.num_nodes()
        )));
    }
    let n = graph.num_entities();
    (n..graph.num_nodes())
        .map(|node| {
            let (relation, side) = graph.prototype_role(node).expect("prototype node");
            let center = rows.row_slice(node).to_vec();
            let members = graph.members_of_proto(node).to_vec();
            let points = members
                .iter()
                .map(|&e| {
                    rows.row_slice(e)
                        .iter()
                        .zip(&center)
                        .map(|(x, c)| lambda * x + (1.0 - lambda) * c)
                        .collect()
                })
                .collect();
            PrototypeArea::new(relation, side, center, members, points)
        })
        .collect()
}

/// `inf ‖x - y‖` over the two balls.
pub fn area_distance(a: &PrototypeArea, b: &PrototypeArea) -> f64 {
    (l2_distance(&a.center, &b.center) - a.radius - b.radius).max(0.0)
}

/// Smallest distance between two distinct prototype centers.
pub fn min_prototype_distance(areas: &[PrototypeArea]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for (i, a) in areas.iter().enumerate() {
        for b in &areas[i + 1..] {
            let d = l2_distance(&a.center, &b.center);
            best = Some(best.map_or(d, |x: f64| x.min(d)));
        }
    }
    best
}

/// Uniform sample from the ball: Gaussian direction, radius `R·u^(1/d)`.
pub fn sample_in_ball(center: &[f64], radius: f64, rng: &mut Rng) -> Vec<f64> {
    let d = center.len();
    let dir: Vec<f64> = loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if l2_norm(&v) > 1e-12 {
            break v;
        }
    };
    let norm = l2_norm(&dir);
    let u: f64 = rng.random();
    let scale = radius * u.powf(1.0 / d as f64) / norm;
    center.iter().zip(&dir).map(|(c, v)| c + scale * v).collect()
}

/// Deterministic polar grid of `n` points inside a 2-D ball (one complex
/// coordinate), including the boundary circle.
pub fn grid_in_disc(center: &[f64], radius: f64, n: usize) -> Result<Vec<Vec<f64>>> {
    if center.len() != 2 {
        return Err(Error::Shape(format!(
            "grid sampling needs width 2, got {}",
            center.len()
        )));
    }
    let rings = (n as f64).sqrt().ceil().max(1.0) as usize;
    let per = n.div_ceil(rings);
    let mut out = Vec::with_capacity(n);
    'outer: for ring in 0..rings {
        let rad = radius * (ring + 1) as f64 / rings as f64;
        for j in 0..per {
            if out.len() == n {
                break 'outer;
            }
            let a = std::f64::consts::TAU * j as f64 / per as f64;
            out.push(vec![center[0] + rad * a.cos(), center[1] + rad * a.sin()]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Uniform draws from each ball.
    Ball,
    /// Polar grid; width-2 embeddings only.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub per_region: usize,
    pub scheme: Sampling,
    /// Include recorded member embeddings alongside the samples.
    pub include_members: bool,
    /// Tolerance for the prototype assumption and area identity.
    pub tolerance: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            per_region: 100,
            scheme: Sampling::Ball,
            include_members: true,
            tolerance: SAMPLED_TOL,
        }
    }
}

fn region_points(area: &PrototypeArea, opts: &SampleOptions, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let mut pts = Vec::new();
    if opts.include_members {
        pts.extend(area.member_points.iter().cloned());
    }
    match opts.scheme {
        Sampling::Ball => {
            pts.extend((0..opts.per_region).map(|_| sample_in_ball(&area.center, area.radius, rng)))
        }
        Sampling::Grid => pts.extend(grid_in_disc(&area.center, area.radius, opts.per_region)?),
    }
    pts.push(area.center.clone());
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub detail: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryEntry {
    pub check: String,
    pub subject: String,
    pub premise_satisfied: bool,
    /// `None` when the premise fails.
    pub conclusion_verified: Option<bool>,
    /// Smallest slack of the conclusion (positive means it held).
    pub worst_margin: Option<f64>,
    /// Slack of the premise (positive means it held).
    pub premise_margin: f64,
    /// Residual of the prototype assumption.
    pub assumption_residual: f64,
    pub comparisons: usize,
    pub counterexample: Option<Counterexample>,
}

impl TheoryEntry {
    fn premise_failed(check: &str, subject: String, premise_margin: f64, residual: f64) -> Self {
        Self {
            check: check.to_owned(),
            subject,
            premise_satisfied: false,
            conclusion_verified: None,
            worst_margin: None,
            premise_margin,
            assumption_residual: residual,
            comparisons: 0,
            counterexample: None,
        }
    }

    /// Premise held and the conclusion was confirmed.
    pub fn passed(&self) -> bool {
        self.premise_satisfied && self.conclusion_verified == Some(true)
    }

    /// A premise held but the conclusion did not.
    pub fn violated(&self) -> bool {
        self.conclusion_verified == Some(false)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub entries: Vec<TheoryEntry>,
    pub min_prototype_distance: Option<f64>,
}

impl TheoryReport {
    pub fn violations(&self) -> usize {
        self.entries.iter().filter(|e| e.violated()).count()
    }

    pub fn premise_failures(&self) -> usize {
        self.entries.iter().filter(|e| !e.premise_satisfied).count()
    }

    pub fn all_passed(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(TheoryEntry::passed)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:<14} {:>8} {:>10} {:>14} {:>14}",
            "check", "subject", "premise", "conclusion", "margin", "residual"
        );
        for e in &self.entries {
            let concl = match e.conclusion_verified {
                Some(true) => "ok",
                Some(false) => "VIOLATED",
                None => "untested",
            };
            let margin = e.worst_margin.map_or_else(|| "-".to_owned(), |m| format!("{m:.6e}"));
            let _ = writeln!(
                out,
                "{:<12} {:<14} {:>8} {:>10} {:>14} {:>14.6e}",
                e.check,
                e.subject,
                if e.premise_satisfied { "holds" } else { "fails" },
                concl,
                margin,
                e.assumption_residual
            );
        }
        if let Some(d) = self.min_prototype_distance {
            let _ = writeln!(out, "minimum prototype distance: {d:.6e}");
        }
        let _ = writeln!(
            out,
            "{} entries, {} premise failures, {} violations",
            self.entries.len(),
            self.premise_failures(),
            self.violations()
        );
        out
    }
}

/// `‖P_H∘r - P_T‖` for split-complex vectors.
pub fn assumption_residual(p_head: &[f64], phase: &[f64], p_tail: &[f64]) -> f64 {
    -rotate_score(p_head, phase, p_tail)
}

/// Checks the three score bounds implied by `P_H∘r = P_T`.
pub fn check_lemma1(
    h: &[f64],
    t: &[f64],
    phase: &[f64],
    p_head: &[f64],
    p_tail: &[f64],
    tol: f64,
) -> TheoryEntry {
    let residual = assumption_residual(p_head, phase, p_tail);
    let subject = format!("k={}", phase.len());
    if residual > tol {
        return TheoryEntry::premise_failed("lemma1", subject, tol - residual, residual);
    }
    let f = rotate_score(h, phase, t);
    let a = l2_distance(h, p_head);
    let b = l2_distance(t, p_tail);
    let margins = [f + a + b, (b - a) - f, (a - b) - f];
    let (worst_i, worst) = margins
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, m)| if m < acc.1 { (i, m) } else { acc });
    let ok = worst >= -tol;
    TheoryEntry {
        check: "lemma1".into(),
        subject,
        premise_satisfied: true,
        conclusion_verified: Some(ok),
        worst_margin: Some(worst),
        premise_margin: tol - residual,
        assumption_residual: residual,
        comparisons: 3,
        counterexample: (!ok).then(|| Counterexample {
            detail: format!("inequality {} fails: f={f}, |h-P_H|={a}, |t-P_T|={b}", worst_i + 1),
            values: vec![f, a, b],
        }),
    }
}

/// A random instance with `P_T := P_H∘r`, optionally pushed off the
/// assumption by `perturb` along a random direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LemmaInstance {
    pub h: Vec<f64>,
    pub t: Vec<f64>,
    pub phase: Vec<f64>,
    pub p_head: Vec<f64>,
    pub p_tail: Vec<f64>,
}

impl LemmaInstance {
    pub fn random(k: usize, perturb: f64, rng: &mut Rng) -> Self {
        let mut v = |n: usize, s: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-s..s)).collect() };
        let h = v(2 * k, 2.0);
        let t = v(2 * k, 2.0);
        let p_head = v(2 * k, 2.0);
        let phase = v(k, std::f64::consts::PI);
        let mut p_tail = rotate_vec(&p_head, &phase);
        if perturb > 0.0 {
            let dir: Vec<f64> = (0..2 * k).map(|_| rng.sample(StandardNormal)).collect();
            let n = l2_norm(&dir).max(1e-300);
            p_tail.iter_mut().zip(&dir).for_each(|(p, d)| *p += perturb * d / n);
        }
        Self {
            h,
            t,
            phase,
            p_head,
            p_tail,
        }
    }

    pub fn check(&self, tol: f64) -> TheoryEntry {
        check_lemma1(&self.h, &self.t, &self.phase, &self.p_head, &self.p_tail, tol)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionTheorem {
    /// Heads from the correct head area outscore heads from elsewhere.
    Heads,
    /// Same for tails.
    Tails,
}

impl CompletionTheorem {
    fn varied(self) -> Side {
        match self {
            Self::Heads => Side::Head,
            Self::Tails => Side::Tail,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Heads => "thm-heads",
            Self::Tails => "thm-tails",
        }
    }
}

fn find_area(areas: &[PrototypeArea], relation: usize, side: Side) -> Result<usize> {
    areas
        .iter()
        .position(|a| a.relation == relation && a.side == side)
        .ok_or_else(|| Error::InvalidId {
            kind: "relation area",
            id: relation,
            size: areas.len(),
        })
}

/// Minimum of `d(C, target) - 2·partner_radius` over the other areas; areas
/// equal to the target as sets are skipped since nothing outside the target
/// lies in them. `+∞` when no other area exists.
fn separation_margin(areas: &[PrototypeArea], target: usize, partner_radius: f64, tol: f64) -> f64 {
    areas
        .iter()
        .enumerate()
        .filter(|&(i, a)| i != target && !a.same_set(&areas[target], tol))
        .map(|(_, a)| area_distance(a, &areas[target]) - 2.0 * partner_radius)
        .fold(f64::INFINITY, f64::min)
}

/// Score-ordering check for one relation on aggregated embeddings.
/// `phase` is the relation's phase vector.
pub fn check_theorem_completion(
    areas: &[PrototypeArea],
    relation: usize,
    phase: &[f64],
    which: CompletionTheorem,
    opts: &SampleOptions,
    rng: &mut Rng,
) -> Result<TheoryEntry> {
    let side = which.varied();
    let ti = find_area(areas, relation, side)?;
    let pi = find_area(areas, relation, side.flip())?;
    let (target, partner) = (&areas[ti], &areas[pi]);
    let (ph, pt) = match side {
        Side::Head => (&target.center, &partner.center),
        Side::Tail => (&partner.center, &target.center),
    };
    let residual = assumption_residual(ph, phase, pt);
    let sep = separation_margin(areas, ti, partner.radius, opts.tolerance);
    let subject = format!("r{relation}");
    if residual > opts.tolerance || sep <= 0.0 {
        return Ok(TheoryEntry::premise_failed(which.name(), subject, sep, residual));
    }

    let inside = region_points(target, opts, rng)?;
    let anchors = region_points(partner, opts, rng)?;
    let mut outside = Vec::new();
    for (i, a) in areas.iter().enumerate() {
        if i == ti || a.same_set(target, opts.tolerance) {
            continue;
        }
        outside.extend(
            region_points(a, opts, rng)?
                .into_iter()
                .filter(|x| !target.contains(x)),
        );
    }
    let score = |varied: &[f64], anchor: &[f64]| match side {
        Side::Head => rotate_score(varied, phase, anchor),
        Side::Tail => rotate_score(anchor, phase, varied),
    };
    let mut worst = f64::INFINITY;
    let mut counter = None;
    for a in &anchors {
        let lo_in = inside.iter().map(|x| score(x, a)).fold(f64::INFINITY, f64::min);
        let hi_out = outside
            .iter()
            .map(|x| score(x, a))
            .fold(f64::NEG_INFINITY, f64::max);
        let m = lo_in - hi_out;
        if m < worst {
            worst = m;
            if m <= 0.0 {
                counter = Some(Counterexample {
                    detail: format!("in-area score {lo_in} not above outside score {hi_out}"),
                    values: a.clone(),
                });
            }
        }
    }
    Ok(TheoryEntry {
        check: which.name().into(),
        subject,
        premise_satisfied: true,
        conclusion_verified: Some(worst > 0.0),
        worst_margin: Some(worst),
        premise_margin: sep,
        assumption_residual: residual,
        comparisons: anchors.len() * inside.len() * outside.len(),
        counterexample: counter,
    })
}

/// Both completion theorems for every relation; entries ordered by relation.
pub fn check_all_completion(
    areas: &[PrototypeArea],
    phases: &[Vec<f64>],
    opts: &SampleOptions,
    seed: u64,
) -> Result<TheoryReport> {
    let per: Vec<Vec<TheoryEntry>> = (0..phases.len())
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed.wrapping_add(r as u64), Stream::TheorySampling);
            Ok(vec![
                check_theorem_completion(areas, r, &phases[r], CompletionTheorem::Heads, opts, &mut rng)?,
                check_theorem_completion(areas, r, &phases[r], CompletionTheorem::Tails, opts, &mut rng)?,
            ])
        })
        .collect::<Result<_>>()?;
    Ok(TheoryReport {
        entries: per.into_iter().flatten().collect(),
        min_prototype_distance: min_prototype_distance(areas),
    })
}

/// Whether every separation premise of both completion theorems holds.
pub fn completion_premises_hold(areas: &[PrototypeArea], tol: f64) -> bool {
    areas.iter().enumerate().all(|(i, a)| {
        let partner = areas
            .iter()
            .find(|b| b.relation == a.relation && b.side == a.side.flip());
        let r = partner.map_or(0.0, |p| p.radius);
        separation_margin(areas, i, r, tol) > 0.0
    })
}

/// For each λ in `grid`, whether all separation premises hold after aggregation.
pub fn lambda_premise_profile(
    rows: &impl Rows,
    graph: &AugmentedGraph,
    grid: &[f64],
    tol: f64,
) -> Result<Vec<(f64, bool)>> {
    grid.iter()
        .map(|&l| Ok((l, completion_premises_hold(&build_areas(rows, graph, l)?, tol))))
        .collect()
}

/// One direction of the alignment theorems: points of `source` should be
/// closer to every point of `target` than to anything outside `target`.
fn alignment_direction(
    name: &str,
    subject: String,
    source: &PrototypeArea,
    target_areas: &[PrototypeArea],
    ti: usize,
    opts: &SampleOptions,
    rng: &mut Rng,
) -> Result<TheoryEntry> {
    let target = &target_areas[ti];
    let residual = l2_distance(&source.center, &target.center) + (source.radius - target.radius).abs();
    let sep = separation_margin(target_areas, ti, target.radius, opts.tolerance);
    if residual > opts.tolerance || sep <= 0.0 {
        return Ok(TheoryEntry::premise_failed(name, subject, sep, residual));
    }
    let anchors = region_points(source, opts, rng)?;
    let inside = region_points(target, opts, rng)?;
    let mut outside = Vec::new();
    for (i, a) in target_areas.iter().enumerate() {
        if i == ti || a.same_set(target, opts.tolerance) {
            continue;
        }
        outside.extend(
            region_points(a, opts, rng)?
                .into_iter()
                .filter(|x| !target.contains(x)),
        );
    }
    let mut worst = f64::INFINITY;
    let mut counter = None;
    for e in &anchors {
        let far_in = inside.iter().map(|x| l2_distance(e, x)).fold(0.0, f64::max);
        let near_out = outside
            .iter()
            .map(|x| l2_distance(e, x))
            .fold(f64::INFINITY, f64::min);
        // score gap f(e, e1) - f(e, e2) = d(e, e2) - d(e, e1)
        let m = near_out - far_in;
        if m < worst {
            worst = m;
            if m <= 0.0 {
                counter = Some(Counterexample {
                    detail: format!("in-area distance {far_in} not below outside distance {near_out}"),
                    values: e.clone(),
                });
            }
        }
    }
    Ok(TheoryEntry {
        check: name.into(),
        subject,
        premise_satisfied: true,
        conclusion_verified: Some(worst > 0.0),
        worst_margin: Some(worst),
        premise_margin: sep,
        assumption_residual: residual,
        comparisons: anchors.len() * inside.len() * outside.len(),
        counterexample: counter,
    })
}

/// Checks both directions for each corresponding pair `(area in G1, area in G2)`.
pub fn check_theorem_alignment(
    areas1: &[PrototypeArea],
    areas2: &[PrototypeArea],
    correspondence: &[(usize, usize)],
    opts: &SampleOptions,
    rng: &mut Rng,
) -> Result<TheoryReport> {
    let mut entries = Vec::with_capacity(2 * correspondence.len());
    for &(a, b) in correspondence {
        if a >= areas1.len() || b >= areas2.len() {
            return Err(Error::InvalidId {
                kind: "area",
                id: a.max(b),
                size: areas1.len().min(areas2.len()),
            });
        }
        let subject = format!("{}~{}", areas1[a].label(), areas2[b].label());
        entries.push(alignment_direction(
            "align-fwd",
            subject.clone(),
            &areas1[a],
            areas2,
            b,
            opts,
            rng,
        )?);
        entries.push(alignment_direction("align-bwd", subject, &areas2[b], areas1, a, opts, rng)?);
    }
    let mut all = areas1.to_vec();
    all.extend_from_slice(areas2);
    Ok(TheoryReport {
        entries,
        min_prototype_distance: min_prototype_distance(areas1)
            .into_iter()
            .chain(min_prototype_distance(areas2))
            .reduce(f64::min),
    })
}

/// One complex coordinate, phase 0, both prototypes of relation 0 at the
/// origin with radius 0.1, and a second relation whose areas sit at 10.
pub fn constructed_completion_instance() -> (Vec<PrototypeArea>, Vec<Vec<f64>>) {
    let ball = |r, side, x: f64, rad| PrototypeArea::ball(r, side, vec![x, 0.0], rad);
    let areas = vec![
        ball(0, Side::Head, 0.0, 0.1),
        ball(1, Side::Head, 10.0, 0.1),
        ball(0, Side::Tail, 0.0, 0.1),
        ball(1, Side::Tail, 10.0, 0.1),
    ];
    (areas, vec![vec![0.0], vec![0.0]])
}
