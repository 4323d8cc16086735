//! RotatE and RPE-RotatE for link prediction.
//!
//! Entities and prototypes live in one complex table (`|E| + 2|R|` rows, the
//! prototype block after the entities). Relations are stored as phase angles.
//! RPE-RotatE scores `(h, r, t)` as
//!
//! ```text
//! -‖(λh + (1-λ)P_H(r)) ∘ r - (λt + (1-λ)P_T(r))‖
//! ```
//!
//! and is trained with the self-adversarial negative-sampling loss. All
//! gradients are derived by hand and checked against finite differences.

use std::collections::{BTreeSet, HashSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{init_table, EmbeddingTable, Initializer, TableKind};
use crate::error::{Error, Result};
use crate::eval::{self, LinkScorer, TiePolicy};
use crate::gradcheck::{finite_difference_check, GradCheckReport};
use crate::kg::{CompletionDataset, Side, Triple};
use crate::optim::{Algorithm, OptimizerState, SparseGrad};
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompletionModel {
    Rotate,
    RpeRotate,
}

impl std::str::FromStr for CompletionModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotate" => Ok(Self::Rotate),
            "rpe-rotate" => Ok(Self::RpeRotate),
            other => Err(Error::Config(format!("unknown completion model `{other}`"))),
        }
    }
}

/// Which slot a negative sample corrupts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionMode {
    Head,
    Tail,
    /// Fair coin per negative.
    Both,
}

/// How prototype rows start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrototypeInit {
    Random,
    /// Mean of the member entities' initial embeddings.
    EntityMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompletionConfig {
    pub dim: usize,
    pub batch_size: usize,
    pub negative_sample_size: usize,
    pub margin: f64,
    pub adversarial_temperature: f64,
    pub lambda_weight: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Validation interval in steps; 0 evaluates only once at the end.
    pub eval_every: usize,
    pub seed: u64,
    /// Treat the self-adversarial weights as constants.
    pub adversarial_detach: bool,
    pub corruption: CorruptionMode,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub init_scale: f64,
    pub prototype_init: PrototypeInit,
    /// Weight of `‖P_H(r) ∘ r - P_T(r)‖²`; 0 disables the term.
    pub prototype_consistency_weight: f64,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            batch_size: 64,
            negative_sample_size: 16,
            margin: 6.0,
            adversarial_temperature: 1.0,
            lambda_weight: 0.5,
            learning_rate: 0.001,
            max_steps: 1000,
            eval_every: 0,
            seed: 0,
            adversarial_detach: true,
            corruption: CorruptionMode::Both,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            init_scale: 1.0,
            prototype_init: PrototypeInit::Random,
            prototype_consistency_weight: 0.0,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return fail("dim must be positive".into());
        }
        if !(self.lambda_weight > 0.0 && self.lambda_weight <= 1.0) {
            return fail(format!("lambda_weight {} outside (0, 1]", self.lambda_weight));
        }
        if !(self.margin >= 0.0) {
            return fail(format!("margin {} must be >= 0", self.margin));
        }
        if !(self.adversarial_temperature > 0.0) {
            return fail("adversarial_temperature must be > 0".into());
        }
        if self.batch_size == 0 || self.negative_sample_size == 0 {
            return fail("batch_size and negative_sample_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be > 0".into());
        }
        if self.prototype_consistency_weight < 0.0 {
            return fail("prototype_consistency_weight must be >= 0".into());
        }
        Ok(())
    }

    /// λ actually used by `model`: the baseline always behaves as λ = 1.
    pub fn effective_lambda(&self, model: CompletionModel) -> f64 {
        match model {
            CompletionModel::Rotate => 1.0,
            CompletionModel::RpeRotate => self.lambda_weight,
        }
    }
}

/// `‖h ∘ r - t‖` over `2k` reals; `h`, `t` are split-complex, `phase` has `k` angles.
pub fn rotate_distance(h: &[f64], phase: &[f64], t: &[f64]) -> f64 {
    let k = phase.len();
    debug_assert_eq!(h.len(), 2 * k);
    debug_assert_eq!(t.len(), 2 * k);
    let mut acc = 0.0;
    for j in 0..k {
        let (s, c) = phase[j].sin_cos();
        let re = h[j] * c - h[k + j] * s - t[j];
        let im = h[j] * s + h[k + j] * c - t[k + j];
        acc += re * re + im * im;
    }
    acc.sqrt()
}

/// RotatE score `-‖h ∘ r - t‖`, always `<= 0`.
pub fn rotate_score(h: &[f64], phase: &[f64], t: &[f64]) -> f64 {
    -rotate_distance(h, phase, t)
}

/// `λe + (1-λ)p`, with `λ ∈ (0, 1]`.
pub fn aggregate_with_prototype(e: &[f64], p: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config(format!("lambda {lambda} outside (0, 1]")));
    }
    if e.len() != p.len() {
        return Err(Error::Shape("entity and prototype widths differ".into()));
    }
    Ok(blend(e, p, lambda))
}

#[inline]
fn blend(e: &[f64], p: &[f64], lambda: f64) -> Vec<f64> {
    let mu = 1.0 - lambda;
    e.iter().zip(p).map(|(x, y)| lambda * x + mu * y).collect()
}

/// Rotation `a ∘ r` of a split-complex vector.
pub fn rotate_vec(a: &[f64], phase: &[f64]) -> Vec<f64> {
    let k = phase.len();
    let mut out = vec![0.0; 2 * k];
    for j in 0..k {
        let (s, c) = phase[j].sin_cos();
        out[j] = a[j] * c - a[k + j] * s;
        out[k + j] = a[j] * s + a[k + j] * c;
    }
    out
}

/// Accumulates `upstream · ∂‖a∘r - b‖/∂(a, b, θ)`. Returns the distance.
/// At zero distance the subgradient 0 is used.
fn distance_backward(
    a: &[f64],
    unit: &[(f64, f64)],
    b: &[f64],
    upstream: f64,
    grad_a: &mut [f64],
    grad_b: &mut [f64],
    grad_phase: &mut [f64],
) -> f64 {
    let k = unit.len();
    let rotated = |j: usize| {
        let (s, c) = unit[j];
        (a[j] * c - a[k + j] * s, a[j] * s + a[k + j] * c, s, c)
    };
    let mut sq = 0.0;
    for j in 0..k {
        let (re, im, _, _) = rotated(j);
        let (dr, di) = (re - b[j], im - b[k + j]);
        sq += dr * dr + di * di;
    }
    let dist = sq.sqrt();
    if dist == 0.0 || upstream == 0.0 {
        return dist;
    }
    let g = upstream / dist;
    for j in 0..k {
        let (re, im, s, c) = rotated(j);
        let (dr, di) = (re - b[j], im - b[k + j]);
        // conj(r) ∘ d
        grad_a[j] += g * (dr * c + di * s);
        grad_a[k + j] += g * (-dr * s + di * c);
        grad_b[j] -= g * dr;
        grad_b[k + j] -= g * di;
        grad_phase[j] += g * (-dr * im + di * re);
    }
    dist
}

/// `(sin θ_j, cos θ_j)` for every phase.
fn unit_circle(phase: &[f64]) -> Vec<(f64, f64)> {
    phase.iter().map(|p| p.sin_cos()).collect()
}

/// Trainable state of either model.
#[derive(Debug, Clone, PartialEq)]
pub struct RotateModel {
    pub kind: CompletionModel,
    pub lambda: f64,
    /// Entities then prototypes, complex, `|E| + 2|R|` rows.
    pub entities: EmbeddingTable,
    pub relations: EmbeddingTable,
    num_entities: usize,
    num_relations: usize,
}

impl RotateModel {
    pub fn init(
        num_entities: usize,
        num_relations: usize,
        config: &CompletionConfig,
        kind: CompletionModel,
        train: &[Triple],
    ) -> Result<Self> {
        config.validate()?;
        let k = config.dim;
        let scheme = Initializer::Uniform {
            scale: config.init_scale,
        };
        let ents = init_table(
            num_entities,
            k,
            TableKind::Entity,
            true,
            scheme,
            &mut rng::stream(config.seed, Stream::EntityInit),
        )?;
        let protos = init_table(
            2 * num_relations,
            k,
            TableKind::Prototype,
            true,
            scheme,
            &mut rng::stream(config.seed, Stream::PrototypeInit),
        )?;
        let relations = init_table(
            num_relations,
            k,
            TableKind::RelationPhase,
            false,
            Initializer::default(),
            &mut rng::stream(config.seed, Stream::RelationInit),
        )?;
        let mut values = ents.values().to_vec();
        values.extend_from_slice(protos.values());
        let entities = EmbeddingTable::from_values(
            TableKind::Entity,
            num_entities + 2 * num_relations,
            k,
            true,
            values,
        )?;
        let mut model = Self {
            kind,
            lambda: config.effective_lambda(kind),
            entities,
            relations,
            num_entities,
            num_relations,
        };
        if config.prototype_init == PrototypeInit::EntityMean {
            model.prototypes_from_entity_means(train);
        }
        Ok(model)
    }

    /// Assembles a model from existing tables (e.g. a loaded checkpoint).
    pub fn from_tables(
        kind: CompletionModel,
        lambda: f64,
        num_entities: usize,
        entities: EmbeddingTable,
        relations: EmbeddingTable,
    ) -> Result<Self> {
        let num_relations = relations.rows();
        if entities.rows() != num_entities + 2 * num_relations
            || !entities.is_complex()
            || entities.dim() != relations.dim()
        {
            return Err(Error::Shape(format!(
                "entity table {}x{} does not fit {num_entities} entities and {num_relations} relations of dim {}",
                entities.rows(),
                entities.dim(),
                relations.dim()
            )));
        }
        Ok(Self {
            kind,
            lambda,
            entities,
            relations,
            num_entities,
            num_relations,
        })
    }

    fn prototypes_from_entity_means(&mut self, train: &[Triple]) {
        let mut heads = vec![BTreeSet::new(); self.num_relations];
        let mut tails = vec![BTreeSet::new(); self.num_relations];
        for t in train {
            heads[t.relation].insert(t.head);
            tails[t.relation].insert(t.tail);
        }
        let w = self.entities.width();
        for r in 0..self.num_relations {
            for (side, members) in [(Side::Head, &heads[r]), (Side::Tail, &tails[r])] {
                if members.is_empty() {
                    continue;
                }
                let mut mean = vec![0.0; w];
                for &e in members {
                    for (m, v) in mean.iter_mut().zip(self.entities.row(e)) {
                        *m += v / members.len() as f64;
                    }
                }
                let row = self.proto_row(r, side);
                self.entities.row_mut(row).copy_from_slice(&mean);
            }
        }
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn dim(&self) -> usize {
        self.relations.dim()
    }

    pub fn proto_row(&self, relation: usize, side: Side) -> usize {
        match side {
            Side::Head => self.num_entities + relation,
            Side::Tail => self.num_entities + self.num_relations + relation,
        }
    }

    fn uses_prototypes(&self) -> bool {
        self.kind == CompletionModel::RpeRotate
    }

    /// Embedding of `entity` as seen in slot `side` of relation `relation`.
    pub fn slot_embedding(&self, entity: usize, relation: usize, side: Side) -> Vec<f64> {
        let e = self.entities.row(entity);
        if self.uses_prototypes() {
            blend(e, self.entities.row(self.proto_row(relation, side)), self.lambda)
        } else {
            e.to_vec()
        }
    }

    fn slot_into(&self, entity: usize, relation: usize, side: Side, out: &mut [f64]) {
        let e = self.entities.row(entity);
        if self.uses_prototypes() {
            let p = self.entities.row(self.proto_row(relation, side));
            for ((o, x), y) in out.iter_mut().zip(e).zip(p) {
                *o = self.lambda * x + (1.0 - self.lambda) * y;
            }
        } else {
            out.copy_from_slice(e);
        }
    }

    /// Score of one triple under this model.
    pub fn score(&self, t: Triple) -> f64 {
        -self.distance(t)
    }

    fn distance(&self, t: Triple) -> f64 {
        self.distance_with(t, &unit_circle(self.relations.row(t.relation)))
    }

    /// Distance with the relation's `(sin, cos)` table precomputed.
    fn distance_with(&self, t: Triple, unit: &[(f64, f64)]) -> f64 {
        let h = self.entities.row(t.head);
        let tl = self.entities.row(t.tail);
        let k = unit.len();
        let mut sq = 0.0;
        if !self.uses_prototypes() {
            for j in 0..k {
                let (s, c) = unit[j];
                let re = h[j] * c - h[k + j] * s - tl[j];
                let im = h[j] * s + h[k + j] * c - tl[k + j];
                sq += re * re + im * im;
            }
            return sq.sqrt();
        }
        let ph = self.entities.row(self.proto_row(t.relation, Side::Head));
        let pt = self.entities.row(self.proto_row(t.relation, Side::Tail));
        let (lam, mu) = (self.lambda, 1.0 - self.lambda);
        for j in 0..k {
            let (s, c) = unit[j];
            let (hr, hi) = (lam * h[j] + mu * ph[j], lam * h[k + j] + mu * ph[k + j]);
            let (tr, ti) = (lam * tl[j] + mu * pt[j], lam * tl[k + j] + mu * pt[k + j]);
            let re = hr * c - hi * s - tr;
            let im = hr * s + hi * c - ti;
            sq += re * re + im * im;
        }
        sq.sqrt()
    }
}

impl LinkScorer for RotateModel {
    fn num_entities(&self) -> usize {
        self.num_entities
    }

    fn score_candidates(&self, anchor: usize, relation: usize, missing: Side) -> Vec<f64> {
        let unit = unit_circle(self.relations.row(relation));
        (0..self.num_entities)
            .map(|c| {
                let t = match missing {
                    Side::Tail => Triple::new(anchor, relation, c),
                    Side::Head => Triple::new(c, relation, anchor),
                };
                -self.distance_with(t, &unit)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Negative {
    pub triple: Triple,
    pub corrupted: Side,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripleBatch {
    pub positives: Vec<Triple>,
    /// `negatives[i]` belongs to `positives[i]`.
    pub negatives: Vec<Vec<Negative>>,
}

/// Filtered uniform corruption sampler.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    num_entities: usize,
    train: HashSet<Triple>,
}

const MAX_REJECTIONS: usize = 32;

impl NegativeSampler {
    pub fn new(num_entities: usize, train: &[Triple]) -> Self {
        Self {
            num_entities,
            train: train.iter().copied().collect(),
        }
    }

    fn corrupt(positive: Triple, side: Side, e: usize) -> Triple {
        match side {
            Side::Head => Triple::new(e, positive.relation, positive.tail),
            Side::Tail => Triple::new(positive.head, positive.relation, e),
        }
    }

    fn pool(&self, positive: Triple, side: Side) -> Vec<usize> {
        (0..self.num_entities)
            .filter(|&e| !self.train.contains(&Self::corrupt(positive, side, e)))
            .collect()
    }

    fn draw(&self, positive: Triple, side: Side, rng: &mut Rng) -> Option<Negative> {
        for _ in 0..MAX_REJECTIONS {
            let e = rng.random_range(0..self.num_entities);
            let t = Self::corrupt(positive, side, e);
            if !self.train.contains(&t) {
                return Some(Negative {
                    triple: t,
                    corrupted: side,
                });
            }
        }
        let pool = self.pool(positive, side);
        if pool.is_empty() {
            return None;
        }
        let e = pool[rng.random_range(0..pool.len())];
        Some(Negative {
            triple: Self::corrupt(positive, side, e),
            corrupted: side,
        })
    }

    /// `count` corruptions of `positive`, none of them a training triple.
    pub fn sample(
        &self,
        positive: Triple,
        count: usize,
        mode: CorruptionMode,
        rng: &mut Rng,
    ) -> Result<Vec<Negative>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let side = match mode {
                CorruptionMode::Head => Side::Head,
                CorruptionMode::Tail => Side::Tail,
                CorruptionMode::Both => {
                    if rng.random_bool(0.5) {
                        Side::Head
                    } else {
                        Side::Tail
                    }
                }
            };
            let neg = match self.draw(positive, side, rng) {
                Some(n) => Some(n),
                None if mode == CorruptionMode::Both => {
                    let other = match side {
                        Side::Head => Side::Tail,
                        Side::Tail => Side::Head,
                    };
                    self.draw(positive, other, rng)
                }
                None => None,
            };
            out.push(neg.ok_or_else(|| {
                Error::PoolExhausted(format!(
                    "no valid corruption of {positive:?}; use a smaller negative_sample_size or another corruption mode"
                ))
            })?);
        }
        Ok(out)
    }

    pub fn sample_batch(
        &self,
        positives: Vec<Triple>,
        count: usize,
        mode: CorruptionMode,
        rng: &mut Rng,
    ) -> Result<TripleBatch> {
        let negatives = positives
            .iter()
            .map(|&p| self.sample(p, count, mode, rng))
            .collect::<Result<_>>()?;
        Ok(TripleBatch {
            positives,
            negatives,
        })
    }
}

/// `-log σ(x)` without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax of `α · score = -α · distance`.
pub fn adversarial_weights(neg_distances: &[f64], temperature: f64) -> Vec<f64> {
    let logits: Vec<f64> = neg_distances.iter().map(|d| -temperature * d).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Per-positive objective on distances `d = ‖ĥ∘r - t̂‖`:
/// `-log σ(γ - d_pos) - Σ p_i log σ(d_neg,i - γ)`, `p = softmax(-α d_neg)`.
pub fn self_adversarial_objective(pos_distance: f64, neg_distances: &[f64], margin: f64, temperature: f64) -> f64 {
    let p = adversarial_weights(neg_distances, temperature);
    neg_log_sigmoid(margin - pos_distance)
        + p.iter()
            .zip(neg_distances)
            .map(|(pi, d)| pi * neg_log_sigmoid(d - margin))
            .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradients for entity and prototype rows.
    pub entity_grads: SparseGrad,
    pub relation_grads: SparseGrad,
}

struct GradSink<'a> {
    model: &'a RotateModel,
    units: Vec<Vec<(f64, f64)>>,
    ent: SparseGrad,
    rel: SparseGrad,
    a: Vec<f64>,
    b: Vec<f64>,
    ga: Vec<f64>,
    gb: Vec<f64>,
    gp: Vec<f64>,
}

impl<'a> GradSink<'a> {
    fn new(model: &'a RotateModel) -> Self {
        let w = model.entities.width();
        let k = model.dim();
        Self {
            model,
            units: (0..model.num_relations())
                .map(|r| unit_circle(model.relations.row(r)))
                .collect(),
            ent: SparseGrad::new(w),
            rel: SparseGrad::new(model.relations.width()),
            a: vec![0.0; w],
            b: vec![0.0; w],
            ga: vec![0.0; w],
            gb: vec![0.0; w],
            gp: vec![0.0; k],
        }
    }

    fn distance(&self, t: Triple) -> f64 {
        self.model.distance_with(t, &self.units[t.relation])
    }

    /// Adds `upstream · ∂d/∂params` for triple `t`.
    fn distance_grad(&mut self, t: Triple, upstream: f64) {
        let m = self.model;
        let unit = &self.units[t.relation];
        m.slot_into(t.head, t.relation, Side::Head, &mut self.a);
        m.slot_into(t.tail, t.relation, Side::Tail, &mut self.b);
        for buf in [&mut self.ga, &mut self.gb, &mut self.gp] {
            buf.iter_mut().for_each(|v| *v = 0.0);
        }
        distance_backward(&self.a, unit, &self.b, upstream, &mut self.ga, &mut self.gb, &mut self.gp);
        let lam = if m.uses_prototypes() { m.lambda } else { 1.0 };
        self.ent.add_scaled(t.head, lam, &self.ga);
        self.ent.add_scaled(t.tail, lam, &self.gb);
        if m.uses_prototypes() {
            let mu = 1.0 - m.lambda;
            self.ent.add_scaled(m.proto_row(t.relation, Side::Head), mu, &self.ga);
            self.ent.add_scaled(m.proto_row(t.relation, Side::Tail), mu, &self.gb);
        }
        self.rel.add_scaled(t.relation, 1.0, &self.gp);
    }
}

/// Mean self-adversarial loss over the batch's positives plus the optional
/// prototype-consistency penalty, with gradients for every touched row.
pub fn self_adversarial_loss(
    batch: &TripleBatch,
    model: &RotateModel,
    config: &CompletionConfig,
) -> Result<LossOutput> {
    loss_impl(batch, model, config, None)
}

/// Negative weights `p` of every positive in the batch under `model`.
pub fn batch_adversarial_weights(batch: &TripleBatch, model: &RotateModel, temperature: f64) -> Vec<Vec<f64>> {
    batch
        .negatives
        .iter()
        .map(|negs| {
            let d: Vec<f64> = negs.iter().map(|n| model.distance(n.triple)).collect();
            adversarial_weights(&d, temperature)
        })
        .collect()
}

/// Same loss with the negative weights held at `weights`; its gradient is
/// what the detached update follows.
pub fn self_adversarial_loss_with_weights(
    batch: &TripleBatch,
    model: &RotateModel,
    config: &CompletionConfig,
    weights: &[Vec<f64>],
) -> Result<LossOutput> {
    if weights.len() != batch.negatives.len()
        || weights.iter().zip(&batch.negatives).any(|(w, n)| w.len() != n.len())
    {
        return Err(Error::Shape("one weight per negative required".into()));
    }
    let frozen = CompletionConfig {
        adversarial_detach: true,
        ..config.clone()
    };
    loss_impl(batch, model, &frozen, Some(weights))
}

fn loss_impl(
    batch: &TripleBatch,
    model: &RotateModel,
    config: &CompletionConfig,
    fixed_weights: Option<&[Vec<f64>]>,
) -> Result<LossOutput> {
    if batch.positives.len() != batch.negatives.len() || batch.positives.is_empty() {
        return Err(Error::Shape("batch needs one negative list per positive".into()));
    }
    let gamma = config.margin;
    let alpha = config.adversarial_temperature;
    let scale = 1.0 / batch.positives.len() as f64;
    let mut sink = GradSink::new(model);
    let mut total = 0.0;
    for (b, (&pos, negs)) in batch.positives.iter().zip(&batch.negatives).enumerate() {
        if negs.is_empty() {
            return Err(Error::Shape(format!("positive {pos:?} has no negatives")));
        }
        let d_pos = sink.distance(pos);
        let d_neg: Vec<f64> = negs.iter().map(|n| sink.distance(n.triple)).collect();
        if !d_pos.is_finite() || d_neg.iter().any(|d| !d.is_finite()) {
            return Err(Error::NonFinite(format!("score of {pos:?} or one of its negatives")));
        }
        let p = match fixed_weights {
            Some(w) => w[b].clone(),
            None => adversarial_weights(&d_neg, alpha),
        };
        let neg_terms: Vec<f64> = d_neg.iter().map(|d| neg_log_sigmoid(d - gamma)).collect();
        let li = neg_log_sigmoid(gamma - d_pos)
            + p.iter().zip(&neg_terms).map(|(a, b)| a * b).sum::<f64>();
        if !li.is_finite() {
            return Err(Error::NonFinite(format!("loss term of {pos:?}")));
        }
        total += li;

        // d/dd_pos [-log σ(γ - d)] = σ(d - γ)
        sink.distance_grad(pos, scale * sigmoid(d_pos - gamma));
        let weighted: f64 = p.iter().zip(&neg_terms).map(|(a, b)| a * b).sum();
        for (i, n) in negs.iter().enumerate() {
            // d/dd [-log σ(d - γ)] = -σ(γ - d)
            let mut g = -p[i] * sigmoid(gamma - d_neg[i]);
            if !config.adversarial_detach {
                g -= alpha * p[i] * (neg_terms[i] - weighted);
            }
            sink.distance_grad(n.triple, scale * g);
        }
    }
    let mut loss = total * scale;

    if config.prototype_consistency_weight > 0.0 && model.uses_prototypes() {
        let w = config.prototype_consistency_weight;
        let rels: BTreeSet<usize> = batch.positives.iter().map(|t| t.relation).collect();
        let k = model.dim();
        for r in rels {
            let ph_row = model.proto_row(r, Side::Head);
            let pt_row = model.proto_row(r, Side::Tail);
            let phase = model.relations.row(r);
            let d = rotate_distance(model.entities.row(ph_row), phase, model.entities.row(pt_row));
            loss += w * d * d;
            let mut ga = vec![0.0; 2 * k];
            let mut gb = vec![0.0; 2 * k];
            let mut gp = vec![0.0; k];
            distance_backward(
                model.entities.row(ph_row),
                &sink.units[r],
                model.entities.row(pt_row),
                2.0 * w * d,
                &mut ga,
                &mut gb,
                &mut gp,
            );
            sink.ent.add_scaled(ph_row, 1.0, &ga);
            sink.ent.add_scaled(pt_row, 1.0, &gb);
            sink.rel.add_scaled(r, 1.0, &gp);
        }
    }

    if !loss.is_finite() || !sink.ent.is_finite() || !sink.rel.is_finite() {
        return Err(Error::NonFinite("batch loss or gradient".into()));
    }
    Ok(LossOutput {
        loss,
        entity_grads: sink.ent,
        relation_grads: sink.rel,
    })
}

/// Central-difference check of [`self_adversarial_loss`] on a fresh model:
/// the first `batch_size` training triples, `config.negative_sample_size`
/// negatives each, every entity, prototype and relation coordinate. With
/// detached weights the oracle holds `p` fixed at its start value.
pub fn check_loss_gradients(
    num_entities: usize,
    num_relations: usize,
    train: &[Triple],
    config: &CompletionConfig,
    kind: CompletionModel,
    batch_size: usize,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let model = RotateModel::init(num_entities, num_relations, config, kind, train)?;
    let positives = train.iter().take(batch_size).copied().collect::<Vec<_>>();
    if positives.is_empty() {
        return Err(Error::EmptyInput("gradient-check batch".into()));
    }
    let batch = NegativeSampler::new(num_entities, train).sample_batch(
        positives,
        config.negative_sample_size,
        config.corruption,
        &mut rng::stream(config.seed, Stream::NegativeSampling),
    )?;
    let out = self_adversarial_loss(&batch, &model, config)?;
    let frozen = batch_adversarial_weights(&batch, &model, config.adversarial_temperature);
    let eval = |m: &RotateModel| -> Result<f64> {
        if config.adversarial_detach {
            Ok(self_adversarial_loss_with_weights(&batch, m, config, &frozen)?.loss)
        } else {
            Ok(self_adversarial_loss(&batch, m, config)?.loss)
        }
    };
    let mut ents = model.entities.clone();
    let rows: Vec<usize> = (0..ents.rows()).collect();
    let mut report = finite_difference_check(&mut ents, &rows, &out.entity_grads, h, tolerance, |t| {
        let mut m = model.clone();
        m.entities = t.clone();
        eval(&m)
    })?;
    let mut rels = model.relations.clone();
    let rows: Vec<usize> = (0..rels.rows()).collect();
    let rel_report = finite_difference_check(&mut rels, &rows, &out.relation_grads, h, tolerance, |t| {
        let mut m = model.clone();
        m.relations = t.clone();
        eval(&m)
    })?;
    report.merge(&rel_report);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedCompletion {
    /// Best-validation checkpoint (final model when validation never ran).
    pub model: RotateModel,
    pub curve: Vec<StepLog>,
    pub best_step: usize,
    pub best_valid_mrr: Option<f64>,
}

impl TrainedCompletion {
    /// `step,loss,valid_mrr` CSV.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("step,loss,valid_mrr\n");
        for s in &self.curve {
            let v = s.valid_mrr.map(|m| m.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", s.step, s.loss, v));
        }
        out
    }
}

/// Cycles through shuffled training triples, reshuffling every epoch.
struct BatchStream {
    order: Vec<Triple>,
    cursor: usize,
    rng: Rng,
}

impl BatchStream {
    fn new(train: &[Triple], seed: u64) -> Self {
        let mut s = Self {
            order: train.to_vec(),
            cursor: 0,
            rng: rng::stream(seed, Stream::BatchOrder),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        use rand::seq::SliceRandom;
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next(&mut self, size: usize) -> Vec<Triple> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.reshuffle();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Trains `kind` on `dataset.train()` for `config.max_steps` Adam steps.
pub fn train_completion(
    dataset: &CompletionDataset,
    config: &CompletionConfig,
    kind: CompletionModel,
) -> Result<TrainedCompletion> {
    config.validate()?;
    let kg = &dataset.graph;
    let train = dataset.train();
    if train.is_empty() {
        return Err(Error::EmptyInput("training split".into()));
    }
    let mut model = RotateModel::init(kg.num_entities(), kg.num_relations(), config, kind, train)?;
    let algorithm = Algorithm::Adam {
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        epsilon: config.adam_epsilon,
    };
    let mut ent_opt = OptimizerState::new(algorithm, config.learning_rate, &model.entities);
    let mut rel_opt = OptimizerState::new(algorithm, config.learning_rate, &model.relations);
    let sampler = NegativeSampler::new(kg.num_entities(), train);
    let mut batches = BatchStream::new(train, config.seed);
    let mut neg_rng = rng::stream(config.seed, Stream::NegativeSampling);
    let known = dataset.known_triples();

    let mut curve = Vec::with_capacity(config.max_steps);
    let mut best: Option<(f64, usize, RotateModel)> = None;
    let validate = |m: &RotateModel| -> Result<Option<f64>> {
        if dataset.valid.is_empty() {
            return Ok(None);
        }
        let report = eval::completion_report(&dataset.valid, m, &known, TiePolicy::Mean)?;
        Ok(Some(report.mrr))
    };

    for step in 1..=config.max_steps {
        let positives = batches.next(config.batch_size);
        let batch = sampler.sample_batch(
            positives,
            config.negative_sample_size,
            config.corruption,
            &mut neg_rng,
        )?;
        let out = self_adversarial_loss(&batch, &model, config).map_err(|e| Error::Diverged {
            step,
            detail: e.to_string(),
        })?;
        ent_opt.apply(&mut model.entities, &out.entity_grads)?;
        rel_opt.apply(&mut model.relations, &out.relation_grads)?;
        if !model.entities.is_finite() || !model.relations.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!("non-finite parameters after update (loss {})", out.loss),
            });
        }
        let due = (config.eval_every > 0 && step % config.eval_every == 0)
            || (step == config.max_steps);
        let valid_mrr = if due { validate(&model)? } else { None };
        if let Some(mrr) = valid_mrr {
            log::debug!("step {step}: loss {:.6} valid MRR {mrr:.4}", out.loss);
            if best.as_ref().is_none_or(|(b, _, _)| mrr > *b) {
                best = Some((mrr, step, model.clone()));
            }
        }
        curve.push(StepLog {
            step,
            loss: out.loss,
            valid_mrr,
        });
    }

    Ok(match best {
        Some((mrr, step, m)) => TrainedCompletion {
            model: m,
            curve,
            best_step: step,
            best_valid_mrr: Some(mrr),
        },
        None => TrainedCompletion {
            model,
            curve,
            best_step: config.max_steps,
            best_valid_mrr: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::KnowledgeGraph;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn score_hand_cases() {
        assert_eq!(rotate_score(&[1.0, 0.0], &[0.0], &[1.0, 0.0]), 0.0);
        let s = rotate_score(&[1.0, 0.0], &[FRAC_PI_2], &[0.0, 0.0]);
        assert!((s + 1.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate_with_prototype(&[3.0, -1.0], &[9.0, 9.0], 1.0).unwrap(), vec![3.0, -1.0]);
        assert_eq!(aggregate_with_prototype(&[2.0], &[0.0], 0.5).unwrap(), vec![1.0]);
        assert!(aggregate_with_prototype(&[2.0], &[0.0], 0.0).is_err());
        assert!(aggregate_with_prototype(&[2.0], &[0.0], 1.5).is_err());
        assert!(aggregate_with_prototype(&[2.0], &[0.0, 1.0], 0.5).is_err());
    }

    fn toy_model(kind: CompletionModel, lambda: f64) -> RotateModel {
        // k = 1: entity rows (2, 0) and (1, 0); P_H = 0, P_T = 1, phase 0
        let ents = EmbeddingTable::from_values(
            TableKind::Entity,
            4,
            1,
            true,
            vec![2.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        )
        .unwrap();
        let rels = EmbeddingTable::from_values(TableKind::RelationPhase, 1, 1, false, vec![0.0]).unwrap();
        RotateModel::from_tables(kind, lambda, 2, ents, rels).unwrap()
    }

    #[test]
    fn rpe_score_real_case() {
        let m = toy_model(CompletionModel::RpeRotate, 0.5);
        assert_eq!(m.slot_embedding(0, 0, Side::Head), vec![1.0, 0.0]);
        assert_eq!(m.slot_embedding(1, 0, Side::Tail), vec![1.0, 0.0]);
        assert_eq!(m.score(Triple::new(0, 0, 1)), 0.0);
        let base = toy_model(CompletionModel::Rotate, 1.0);
        assert_eq!(base.score(Triple::new(0, 0, 1)), -1.0);
    }

    #[test]
    fn objective_reference_value() {
        let l = self_adversarial_objective(0.0, &[-2.0], 1.0, 1.0);
        assert!((l - 3.361_849).abs() < 1e-6, "{l}");
        let w = adversarial_weights(&[0.7, 0.7], 1e-9);
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_sigmoid_is_stable() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert!(neg_log_sigmoid(800.0) >= 0.0);
        assert!((sigmoid(-800.0)).abs() < 1e-300);
    }

    fn chain_kg() -> KnowledgeGraph {
        KnowledgeGraph::from_triples(
            "t",
            6,
            2,
            [
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 2),
                Triple::new(3, 1, 4),
                Triple::new(4, 1, 5),
            ],
        )
        .unwrap()
    }

    #[test]
    fn sampler_forced_choice_and_counts() {
        // every (x, 0, 1) is a training triple except x = 4
        let triples: Vec<Triple> = (0..6).filter(|&h| h != 4).map(|h| Triple::new(h, 0, 1)).collect();
        let s = NegativeSampler::new(6, &triples);
        let mut rng = rng::stream(1, Stream::NegativeSampling);
        let negs = s.sample(Triple::new(0, 0, 1), 20, CorruptionMode::Head, &mut rng).unwrap();
        assert_eq!(negs.len(), 20);
        assert!(negs.iter().all(|n| n.triple.head == 4 && n.corrupted == Side::Head));
    }

    #[test]
    fn sampler_exhaustion_and_determinism() {
        let triples: Vec<Triple> = (0..3).map(|h| Triple::new(h, 0, 0)).collect();
        let s = NegativeSampler::new(3, &triples);
        let mut rng = rng::stream(1, Stream::NegativeSampling);
        let err = s.sample(Triple::new(0, 0, 0), 1, CorruptionMode::Head, &mut rng);
        assert!(matches!(err, Err(Error::PoolExhausted(_))));

        let kg = chain_kg();
        let s = NegativeSampler::new(6, &kg.triples);
        let draw = || {
            let mut rng = rng::stream(5, Stream::NegativeSampling);
            s.sample(Triple::new(0, 0, 1), 16, CorruptionMode::Both, &mut rng).unwrap()
        };
        let a = draw();
        assert_eq!(a, draw());
        let train: HashSet<_> = kg.triples.iter().copied().collect();
        for n in &a {
            assert!(!train.contains(&n.triple));
            let t = n.triple;
            match n.corrupted {
                Side::Head => assert_eq!((t.relation, t.tail), (0, 1)),
                Side::Tail => assert_eq!((t.head, t.relation), (0, 0)),
            }
        }
    }

    fn grad_setup(kind: CompletionModel, detach: bool, consistency: f64) -> (RotateModel, TripleBatch, CompletionConfig) {
        let kg = chain_kg();
        let config = CompletionConfig {
            dim: 8,
            margin: 2.0,
            adversarial_temperature: 0.8,
            lambda_weight: 0.6,
            adversarial_detach: detach,
            prototype_consistency_weight: consistency,
            init_scale: 0.3,
            seed: 3,
            ..Default::default()
        };
        let model = RotateModel::init(6, 2, &config, kind, &kg.triples).unwrap();
        let s = NegativeSampler::new(6, &kg.triples);
        let mut rng = rng::stream(2, Stream::NegativeSampling);
        let batch = s
            .sample_batch(vec![kg.triples[0], kg.triples[2]], 4, CorruptionMode::Both, &mut rng)
            .unwrap();
        (model, batch, config)
    }

    fn check_grads(kind: CompletionModel, detach: bool, consistency: f64) {
        let (_, _, config) = grad_setup(kind, detach, consistency);
        let kg = chain_kg();
        let rep = check_loss_gradients(6, 2, &kg.triples, &config, kind, 4, 1e-4, 1e-4).unwrap();
        assert!(rep.passed, "{kind:?} detach={detach} consistency={consistency}: {rep:?}");
        assert!(rep.checked > 0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_grads(CompletionModel::RpeRotate, true, 0.0);
        check_grads(CompletionModel::Rotate, true, 0.0);
        check_grads(CompletionModel::RpeRotate, false, 0.0);
        check_grads(CompletionModel::RpeRotate, true, 0.7);
    }

    #[test]
    fn loss_invariant_to_negative_order() {
        let (model, mut batch, config) = grad_setup(CompletionModel::RpeRotate, true, 0.0);
        let a = self_adversarial_loss(&batch, &model, &config).unwrap().loss;
        for negs in &mut batch.negatives {
            negs.reverse();
        }
        let b = self_adversarial_loss(&batch, &model, &config).unwrap().loss;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = CompletionConfig::default();
        assert!(c.validate().is_ok());
        c.lambda_weight = 0.0;
        assert!(c.validate().is_err());
        c.lambda_weight = 0.5;
        c.adversarial_temperature = 0.0;
        assert!(c.validate().is_err());
    }
}
