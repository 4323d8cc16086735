//! GCN and RPE-GCN for entity alignment.
//!
//! Each layer computes `X^l = ρ(A X^{l-1} Wᵀ)` where `X` stacks entity rows and,
//! in RPE mode, prototype rows after them. Row `i` of the normalized operator
//! `A` is
//!
//! * vanilla entity: `1/|N(i)∪{i}|` on every `j ∈ N(i)∪{i}`;
//! * RPE entity: `λ/D` on `N(i)∪{i}` and `(1-λ)/D` on linked prototypes, with
//!   `D = λ|N(i)∪{i}| + (1-λ)|N^R(i)|`;
//! * RPE prototype: `λ/D` on member entities and `(1-λ)/D` on itself, with
//!   `D = λ|N(P)| + 1 - λ`.
//!
//! Prototype rows read layer `l-1` entity states (synchronous update). Both
//! graphs share the layer weights; inputs and prototypes are per graph.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{init_table, l2_distance, EmbeddingTable, Initializer, TableKind};
use crate::error::{Error, Result};
use crate::eval::{self, RankingReport, TiePolicy};
use crate::gradcheck::{finite_difference_check, GradCheckReport};
use crate::kg::{AlignmentSeedSet, AugmentedGraph};
use crate::matrix::Matrix;
use crate::optim::{Algorithm, OptimizerState, SparseGrad};
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GcnMode {
    Gcn,
    RpeGcn,
}

impl std::str::FromStr for GcnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Self::Gcn),
            "rpe-gcn" => Ok(Self::RpeGcn),
            other => Err(Error::Config(format!("unknown alignment model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `z` and output `y = ρ(z)`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub dim: usize,
    pub num_layers: usize,
    pub margin: f64,
    pub lambda_weight: f64,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub aggregate_all_layers: bool,
    pub negatives_per_positive: usize,
    pub negative_refresh_epochs: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Scale of the uniform initializer for entity and prototype inputs.
    pub init_scale: f64,
    /// Keep input entity rows on the unit sphere after each update.
    pub normalize_inputs: bool,
    /// Train the input entity embeddings (otherwise fixed random features).
    pub train_inputs: bool,
    /// Test-metric interval in epochs; 0 evaluates only after training.
    pub eval_every: usize,
    pub adagrad_epsilon: f64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            dim: 128,
            num_layers: 2,
            margin: 1.0,
            lambda_weight: 0.5,
            learning_rate: 0.001,
            l2_weight: 0.01,
            dropout_rate: 0.2,
            activation: Activation::Relu,
            aggregate_all_layers: true,
            negatives_per_positive: 25,
            negative_refresh_epochs: 5,
            epochs: 100,
            seed: 0,
            init_scale: 1.0,
            normalize_inputs: false,
            train_inputs: true,
            eval_every: 0,
            adagrad_epsilon: 1e-10,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.num_layers == 0 {
            return fail("num_layers must be >= 1");
        }
        if !(self.lambda_weight > 0.0 && self.lambda_weight <= 1.0) {
            return fail("lambda_weight must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must lie in [0, 1)");
        }
        if !(self.margin >= 0.0) || !(self.learning_rate > 0.0) || self.l2_weight < 0.0 {
            return fail("margin, learning_rate and l2_weight must be non-negative (learning_rate positive)");
        }
        if self.negatives_per_positive == 0 || self.negative_refresh_epochs == 0 {
            return fail("negatives_per_positive and negative_refresh_epochs must be >= 1");
        }
        Ok(())
    }
}

/// Sparse normalized propagation operator for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    rows: Vec<Vec<(usize, f64)>>,
    num_entities: usize,
}

impl Propagation {
    pub fn new(graph: &AugmentedGraph, mode: GcnMode, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Config(format!("lambda {lambda} outside (0, 1]")));
        }
        let n = graph.num_entities();
        let mut rows = Vec::with_capacity(graph.num_nodes());
        for i in 0..n {
            let mut closed = graph.entity_neighbors[i].clone();
            if let Err(pos) = closed.binary_search(&i) {
                closed.insert(pos, i);
            }
            match mode {
                GcnMode::Gcn => {
                    let c = 1.0 / closed.len() as f64;
                    rows.push(closed.into_iter().map(|j| (j, c)).collect());
                }
                GcnMode::RpeGcn => {
                    let protos = &graph.proto_neighbors_of_entity[i];
                    let den = lambda * closed.len() as f64 + (1.0 - lambda) * protos.len() as f64;
                    let (ce, cp) = (lambda / den, (1.0 - lambda) / den);
                    let mut row: Vec<(usize, f64)> = closed.into_iter().map(|j| (j, ce)).collect();
                    row.extend(protos.iter().map(|&p| (p, cp)));
                    rows.push(row);
                }
            }
        }
        if mode == GcnMode::RpeGcn {
            for p in n..graph.num_nodes() {
                let members = graph.members_of_proto(p);
                let den = lambda * members.len() as f64 + 1.0 - lambda;
                let (ce, cp) = (lambda / den, (1.0 - lambda) / den);
                let mut row: Vec<(usize, f64)> = members.iter().map(|&j| (j, ce)).collect();
                row.push((p, cp));
                rows.push(row);
            }
        }
        Ok(Self {
            rows,
            num_entities: n,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    fn apply(&self, x: &Matrix) -> Matrix {
        let k = x.cols();
        let data: Vec<f64> = self
            .rows
            .par_iter()
            .flat_map_iter(|row| {
                let mut acc = vec![0.0; k];
                for &(j, c) in row {
                    for (a, v) in acc.iter_mut().zip(x.row(j)) {
                        *a += c * v;
                    }
                }
                acc
            })
            .collect();
        Matrix::from_vec(self.rows.len(), k, data)
    }

    fn apply_transpose_into(&self, du: &Matrix, out: &mut Matrix) {
        for (i, row) in self.rows.iter().enumerate() {
            let g = du.row(i);
            for &(j, c) in row {
                for (o, v) in out.row_mut(j).iter_mut().zip(g) {
                    *o += c * v;
                }
            }
        }
    }
}

/// Per-graph input features.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    pub entities: EmbeddingTable,
    pub prototypes: EmbeddingTable,
}

impl GraphInputs {
    fn stacked(&self, mode: GcnMode) -> Matrix {
        let k = self.entities.width();
        let mut data = self.entities.values().to_vec();
        let mut rows = self.entities.rows();
        if mode == GcnMode::RpeGcn {
            data.extend_from_slice(self.prototypes.values());
            rows += self.prototypes.rows();
        }
        Matrix::from_vec(rows, k, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnParameters {
    /// `W^(l)`, each `k × k`, shared by both graphs.
    pub weights: Vec<EmbeddingTable>,
    pub graphs: [GraphInputs; 2],
}

impl GcnParameters {
    pub fn init(graphs: [&AugmentedGraph; 2], config: &GcnConfig) -> Result<Self> {
        config.validate()?;
        let k = config.dim;
        let mut wrng = rng::stream(config.seed, Stream::WeightInit);
        let weights = (0..config.num_layers)
            .map(|_| init_table(k, k, TableKind::GcnWeight, false, Initializer::Glorot, &mut wrng))
            .collect::<Result<Vec<_>>>()?;
        let scheme = Initializer::Uniform {
            scale: config.init_scale,
        };
        let mk = |g: &AugmentedGraph, ent: Stream, idx: u64| -> Result<GraphInputs> {
            let entities = init_table(
                g.num_entities(),
                k,
                TableKind::Entity,
                false,
                scheme,
                &mut rng::stream(config.seed, ent),
            )?;
            let prototypes = init_table(
                g.num_prototypes().max(1),
                k,
                TableKind::Prototype,
                false,
                scheme,
                &mut rng::stream(config.seed.wrapping_add(idx), Stream::PrototypeInit),
            )?;
            Ok(GraphInputs {
                entities,
                prototypes,
            })
        };
        let mut params = Self {
            weights,
            graphs: [
                mk(graphs[0], Stream::EntityInit, 0)?,
                mk(graphs[1], Stream::SecondGraphInit, 1)?,
            ],
        };
        if config.normalize_inputs {
            for g in &mut params.graphs {
                normalize_rows(&mut g.entities);
            }
        }
        Ok(params)
    }

    fn weight_matrices(&self) -> Vec<Matrix> {
        self.weights
            .iter()
            .map(|w| Matrix::from_vec(w.rows(), w.width(), w.values().to_vec()))
            .collect()
    }
}

fn normalize_rows(t: &mut EmbeddingTable) {
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Dropout masks are drawn from two streams: entity rows from the first,
/// prototype rows from the second, so entity masks match across modes.
pub struct DropoutRngs<'a> {
    pub rate: f64,
    pub entities: &'a mut Rng,
    pub prototypes: &'a mut Rng,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `A X^{l-1}` per layer.
    aggregated: Vec<Matrix>,
    /// Pre-activations per layer.
    pre: Vec<Matrix>,
    /// `ρ(Z)` before dropout.
    activated: Vec<Matrix>,
    /// Scaled keep-masks, when dropout ran.
    masks: Vec<Option<Matrix>>,
    /// Layer outputs `X^1 .. X^L` (entities then prototypes).
    pub layers: Vec<Matrix>,
    pub num_entities: usize,
}

impl ForwardCache {
    /// Entity rows of layer `l` (1-based).
    pub fn entity_states(&self, l: usize) -> Matrix {
        let x = &self.layers[l - 1];
        Matrix::from_vec(
            self.num_entities,
            x.cols(),
            x.data()[..self.num_entities * x.cols()].to_vec(),
        )
    }

    pub fn entity_layers(&self) -> Vec<Matrix> {
        (1..=self.layers.len()).map(|l| self.entity_states(l)).collect()
    }
}

fn forward_with(
    prop: &Propagation,
    x0: Matrix,
    weights: &[Matrix],
    activation: Activation,
    mut dropout: Option<DropoutRngs<'_>>,
) -> Result<ForwardCache> {
    let k = x0.cols();
    for w in weights {
        if w.rows() != k || w.cols() != k {
            return Err(Error::Shape(format!(
                "weight {}x{} does not match width {k}",
                w.rows(),
                w.cols()
            )));
        }
    }
    if x0.rows() != prop.num_nodes() {
        return Err(Error::Shape(format!(
            "{} input rows for {} graph nodes",
            x0.rows(),
            prop.num_nodes()
        )));
    }
    let ne = prop.num_entities();
    let mut cache = ForwardCache {
        aggregated: Vec::new(),
        pre: Vec::new(),
        activated: Vec::new(),
        masks: Vec::new(),
        layers: Vec::new(),
        num_entities: ne,
    };
    let mut x = x0;
    for w in weights {
        let u = prop.apply(&x);
        let mut z = Matrix::zeros(u.rows(), k);
        z.data_mut()
            .par_chunks_mut(k)
            .zip(u.data().par_chunks(k))
            .for_each(|(zr, ur)| {
                for (a, za) in zr.iter_mut().enumerate() {
                    *za = w.row(a).iter().zip(ur).map(|(wab, ub)| wab * ub).sum();
                }
            });
        let mut h = z.clone();
        h.data_mut().iter_mut().for_each(|v| *v = activation.apply(*v));
        let (out, mask) = match dropout.as_mut() {
            Some(d) if d.rate > 0.0 => {
                let keep = 1.0 - d.rate;
                let mut mask = Matrix::zeros(h.rows(), k);
                for (idx, m) in mask.data_mut().iter_mut().enumerate() {
                    let r = if idx < ne * k {
                        &mut *d.entities
                    } else {
                        &mut *d.prototypes
                    };
                    *m = if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                }
                let mut out = h.clone();
                out.data_mut()
                    .iter_mut()
                    .zip(mask.data())
                    .for_each(|(o, m)| *o *= m);
                (out, Some(mask))
            }
            _ => (h.clone(), None),
        };
        cache.aggregated.push(u);
        cache.pre.push(z);
        cache.activated.push(h);
        cache.masks.push(mask);
        cache.layers.push(out.clone());
        x = out;
    }
    Ok(cache)
}

/// Per-layer hidden states of every node of `graph` (no dropout).
pub fn gcn_forward(
    graph: &AugmentedGraph,
    inputs: &GraphInputs,
    weights: &[EmbeddingTable],
    config: &GcnConfig,
    mode: GcnMode,
) -> Result<ForwardCache> {
    if inputs.entities.rows() != graph.num_entities()
        || (mode == GcnMode::RpeGcn && inputs.prototypes.rows() != graph.num_prototypes())
    {
        return Err(Error::Shape("input tables do not match the graph".into()));
    }
    let prop = Propagation::new(graph, mode, config.lambda_weight)?;
    let w: Vec<Matrix> = weights
        .iter()
        .map(|t| Matrix::from_vec(t.rows(), t.width(), t.values().to_vec()))
        .collect();
    forward_with(&prop, inputs.stacked(mode), &w, config.activation, None)
}

/// Mean of layers `1..=L` when `aggregate_all_layers`, otherwise layer `L`.
pub fn final_embeddings(entity_layers: &[Matrix], aggregate_all_layers: bool) -> Result<Matrix> {
    let last = entity_layers
        .last()
        .ok_or_else(|| Error::EmptyInput("hidden states".into()))?;
    if !aggregate_all_layers {
        return Ok(last.clone());
    }
    let mut out = Matrix::zeros(last.rows(), last.cols());
    for l in entity_layers {
        out.add_assign(l);
    }
    out.scale(1.0 / entity_layers.len() as f64);
    Ok(out)
}

/// Gradients w.r.t. the layer weights and the stacked inputs `X^0`.
fn backward_with(
    prop: &Propagation,
    cache: &ForwardCache,
    weights: &[Matrix],
    activation: Activation,
    grad_final: &Matrix,
    aggregate_all_layers: bool,
) -> (Vec<Matrix>, Matrix) {
    let num_layers = weights.len();
    let k = grad_final.cols();
    let nodes = prop.num_nodes();
    let ne = prop.num_entities();
    let mut grad_w: Vec<Matrix> = (0..num_layers).map(|_| Matrix::zeros(k, k)).collect();
    let mut dx = Matrix::zeros(nodes, k);
    let inject = |dx: &mut Matrix, scale: f64| {
        for (d, g) in dx.data_mut()[..ne * k].iter_mut().zip(grad_final.data()) {
            *d += scale * g;
        }
    };
    for l in (0..num_layers).rev() {
        if aggregate_all_layers {
            inject(&mut dx, 1.0 / num_layers as f64);
        } else if l == num_layers - 1 {
            inject(&mut dx, 1.0);
        }
        // through dropout and activation
        let mut dz = dx;
        if let Some(mask) = &cache.masks[l] {
            dz.data_mut().iter_mut().zip(mask.data()).for_each(|(d, m)| *d *= m);
        }
        dz.data_mut()
            .iter_mut()
            .zip(cache.pre[l].data().iter().zip(cache.activated[l].data()))
            .for_each(|(d, (&z, &y))| *d *= activation.derivative(z, y));
        let u = &cache.aggregated[l];
        let gw = &mut grad_w[l];
        for i in 0..nodes {
            let dzi = dz.row(i);
            let ui = u.row(i);
            for (a, &g) in dzi.iter().enumerate() {
                if g != 0.0 {
                    for (gwab, ub) in gw.row_mut(a).iter_mut().zip(ui) {
                        *gwab += g * ub;
                    }
                }
            }
        }
        let w = &weights[l];
        let mut du = Matrix::zeros(nodes, k);
        for i in 0..nodes {
            let dzi = dz.row(i);
            let dui = du.row_mut(i);
            for (a, &g) in dzi.iter().enumerate() {
                for (d, wab) in dui.iter_mut().zip(w.row(a)) {
                    *d += g * wab;
                }
            }
        }
        let mut next = Matrix::zeros(nodes, k);
        prop.apply_transpose_into(&du, &mut next);
        dx = next;
    }
    (grad_w, dx)
}

/// Cached hard negatives: for training pair `p`, `left[p]` are the nearest
/// `G1` entities to its left entity, `right[p]` the nearest `G2` entities to
/// its right entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativePairCache {
    pub left: Vec<Vec<usize>>,
    pub right: Vec<Vec<usize>>,
    pub epoch: usize,
}

impl NegativePairCache {
    pub fn is_stale(&self, epoch: usize, refresh_every: usize) -> bool {
        epoch - self.epoch >= refresh_every
    }
}

fn unit_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    out
}

/// Exact top-`count` cosine neighbors of `anchor` in `unit` (rows L2-normalized),
/// self excluded, ties broken by lower id.
fn top_k_cosine(unit: &Matrix, anchor: usize, count: usize) -> Vec<usize> {
    let a = unit.row(anchor);
    let mut sims: Vec<(f64, usize)> = (0..unit.rows())
        .filter(|&c| c != anchor)
        .map(|c| (a.iter().zip(unit.row(c)).map(|(x, y)| x * y).sum(), c))
        .collect();
    sims.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    sims.truncate(count);
    sims.into_iter().map(|(_, c)| c).collect()
}

pub fn mine_negatives(
    left: &Matrix,
    right: &Matrix,
    train: &[(usize, usize)],
    count: usize,
    epoch: usize,
) -> Result<NegativePairCache> {
    for (name, m) in [("G1", left), ("G2", right)] {
        if m.rows() <= count + 1 {
            return Err(Error::Config(format!(
                "{name} has {} entities; mining {count} negatives needs more than {}",
                m.rows(),
                count + 1
            )));
        }
    }
    let (ul, ur) = (unit_rows(left), unit_rows(right));
    let l = train.par_iter().map(|&(i, _)| top_k_cosine(&ul, i, count)).collect();
    let r = train.par_iter().map(|&(_, j)| top_k_cosine(&ur, j, count)).collect();
    Ok(NegativePairCache {
        left: l,
        right: r,
        epoch,
    })
}

/// Adds `scale · ∂‖a - b‖/∂a` to `ga` and the opposite to `gb`; zero at `a = b`.
fn distance_grad(a: &[f64], b: &[f64], scale: f64, ga: &mut [f64], gb: &mut [f64]) {
    let d = l2_distance(a, b);
    if d == 0.0 {
        return;
    }
    for j in 0..a.len() {
        let g = scale * (a[j] - b[j]) / d;
        ga[j] += g;
        gb[j] -= g;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentLoss {
    pub loss: f64,
    pub grad_left: Matrix,
    pub grad_right: Matrix,
}

/// `Σ_{(i,j)} Σ_{negatives} [‖e_i - e_j‖ + γ - ‖e_i' - e_j'‖]_+`, where each
/// mined `i'` forms `(i', j)` and each mined `j'` forms `(i, j')`.
pub fn alignment_loss(
    train: &[(usize, usize)],
    negatives: &NegativePairCache,
    left: &Matrix,
    right: &Matrix,
    margin: f64,
) -> Result<AlignmentLoss> {
    if negatives.left.len() != train.len() || negatives.right.len() != train.len() {
        return Err(Error::Shape("negative cache does not match training pairs".into()));
    }
    let mut gl = Matrix::zeros(left.rows(), left.cols());
    let mut gr = Matrix::zeros(right.rows(), right.cols());
    let mut loss = 0.0;
    let mut gbuf_a = vec![0.0; left.cols()];
    let mut gbuf_b = vec![0.0; left.cols()];
    for (p, &(i, j)) in train.iter().enumerate() {
        let d_pos = l2_distance(left.row(i), right.row(j));
        let mut active = 0usize;
        for &ni in &negatives.left[p] {
            let term = d_pos + margin - l2_distance(left.row(ni), right.row(j));
            if term > 0.0 {
                loss += term;
                active += 1;
                gbuf_a.iter_mut().for_each(|v| *v = 0.0);
                gbuf_b.iter_mut().for_each(|v| *v = 0.0);
                distance_grad(left.row(ni), right.row(j), -1.0, &mut gbuf_a, &mut gbuf_b);
                add_row(&mut gl, ni, &gbuf_a);
                add_row(&mut gr, j, &gbuf_b);
            }
        }
        for &nj in &negatives.right[p] {
            let term = d_pos + margin - l2_distance(left.row(i), right.row(nj));
            if term > 0.0 {
                loss += term;
                active += 1;
                gbuf_a.iter_mut().for_each(|v| *v = 0.0);
                gbuf_b.iter_mut().for_each(|v| *v = 0.0);
                distance_grad(left.row(i), right.row(nj), -1.0, &mut gbuf_a, &mut gbuf_b);
                add_row(&mut gl, i, &gbuf_a);
                add_row(&mut gr, nj, &gbuf_b);
            }
        }
        if active > 0 {
            gbuf_a.iter_mut().for_each(|v| *v = 0.0);
            gbuf_b.iter_mut().for_each(|v| *v = 0.0);
            distance_grad(left.row(i), right.row(j), active as f64, &mut gbuf_a, &mut gbuf_b);
            add_row(&mut gl, i, &gbuf_a);
            add_row(&mut gr, j, &gbuf_b);
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("alignment loss".into()));
    }
    Ok(AlignmentLoss {
        loss,
        grad_left: gl,
        grad_right: gr,
    })
}

fn add_row(m: &mut Matrix, i: usize, g: &[f64]) {
    m.row_mut(i).iter_mut().zip(g).for_each(|(a, b)| *a += b);
}

/// Gradients of the full objective for every parameter table.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub entities: [Matrix; 2],
    pub prototypes: [Matrix; 2],
}

/// Prepared pair of graphs plus their propagation operators.
#[derive(Debug, Clone)]
pub struct AlignmentProblem<'a> {
    pub graphs: [&'a AugmentedGraph; 2],
    props: [Propagation; 2],
    pub mode: GcnMode,
}

impl<'a> AlignmentProblem<'a> {
    pub fn new(graphs: [&'a AugmentedGraph; 2], mode: GcnMode, lambda: f64) -> Result<Self> {
        Ok(Self {
            graphs,
            props: [
                Propagation::new(graphs[0], mode, lambda)?,
                Propagation::new(graphs[1], mode, lambda)?,
            ],
            mode,
        })
    }

    fn forward(
        &self,
        params: &GcnParameters,
        config: &GcnConfig,
        side: usize,
        dropout: Option<DropoutRngs<'_>>,
    ) -> Result<ForwardCache> {
        forward_with(
            &self.props[side],
            params.graphs[side].stacked(self.mode),
            &params.weight_matrices(),
            config.activation,
            dropout,
        )
    }

    /// Final entity embeddings of both graphs in evaluation mode.
    pub fn embed(&self, params: &GcnParameters, config: &GcnConfig) -> Result<[Matrix; 2]> {
        let a = self.forward(params, config, 0, None)?;
        let b = self.forward(params, config, 1, None)?;
        Ok([
            final_embeddings(&a.entity_layers(), config.aggregate_all_layers)?,
            final_embeddings(&b.entity_layers(), config.aggregate_all_layers)?,
        ])
    }

    /// Alignment loss plus `½ · l2 · Σ‖W‖²`, and its gradients.
    pub fn objective(
        &self,
        params: &GcnParameters,
        config: &GcnConfig,
        train: &[(usize, usize)],
        negatives: &NegativePairCache,
        mut dropout: Option<[DropoutRngs<'_>; 2]>,
    ) -> Result<(f64, ParamGrads)> {
        let (d0, d1) = match dropout.take() {
            Some([a, b]) => (Some(a), Some(b)),
            None => (None, None),
        };
        let c0 = self.forward(params, config, 0, d0)?;
        let c1 = self.forward(params, config, 1, d1)?;
        let e0 = final_embeddings(&c0.entity_layers(), config.aggregate_all_layers)?;
        let e1 = final_embeddings(&c1.entity_layers(), config.aggregate_all_layers)?;
        let al = alignment_loss(train, negatives, &e0, &e1, config.margin)?;
        let weights = params.weight_matrices();
        let (gw0, gx0) = backward_with(
            &self.props[0],
            &c0,
            &weights,
            config.activation,
            &al.grad_left,
            config.aggregate_all_layers,
        );
        let (gw1, gx1) = backward_with(
            &self.props[1],
            &c1,
            &weights,
            config.activation,
            &al.grad_right,
            config.aggregate_all_layers,
        );
        let mut loss = al.loss;
        let mut grad_w = Vec::with_capacity(weights.len());
        for ((mut a, b), w) in gw0.into_iter().zip(gw1).zip(&weights) {
            a.add_assign(&b);
            if config.l2_weight > 0.0 {
                loss += 0.5 * config.l2_weight * w.data().iter().map(|v| v * v).sum::<f64>();
                a.data_mut()
                    .iter_mut()
                    .zip(w.data())
                    .for_each(|(g, v)| *g += config.l2_weight * v);
            }
            grad_w.push(a);
        }
        let split = |gx: Matrix, side: usize| -> (Matrix, Matrix) {
            let ne = self.graphs[side].num_entities();
            let k = gx.cols();
            let ent = Matrix::from_vec(ne, k, gx.data()[..ne * k].to_vec());
            let np = params.graphs[side].prototypes.rows();
            let proto = if self.mode == GcnMode::RpeGcn {
                Matrix::from_vec(np, k, gx.data()[ne * k..].to_vec())
            } else {
                Matrix::zeros(np, k)
            };
            (ent, proto)
        };
        let (ge0, gp0) = split(gx0, 0);
        let (ge1, gp1) = split(gx1, 1);
        Ok((
            loss,
            ParamGrads {
                weights: grad_w,
                entities: [ge0, ge1],
                prototypes: [gp0, gp1],
            },
        ))
    }
}

fn dense_grad(m: &Matrix) -> SparseGrad {
    let mut g = SparseGrad::new(m.cols());
    for i in 0..m.rows() {
        g.row_mut(i).copy_from_slice(m.row(i));
    }
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub test_hits1: Option<f64>,
    pub test_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedAlignment {
    pub params: GcnParameters,
    pub curve: Vec<EpochLog>,
    /// Evaluation-mode embeddings of both graphs after training.
    pub embeddings: [Matrix; 2],
    pub report: RankingReport,
}

impl TrainedAlignment {
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("epoch,loss,test_hits1,test_mrr\n");
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.curve {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch,
                e.loss,
                f(e.test_hits1),
                f(e.test_mrr)
            ));
        }
        out
    }
}

/// Full-batch training with Adagrad; negatives are re-mined from the current
/// evaluation-mode embeddings every `negative_refresh_epochs` epochs.
pub fn train_alignment(
    graphs: [&AugmentedGraph; 2],
    seeds: &AlignmentSeedSet,
    config: &GcnConfig,
    mode: GcnMode,
) -> Result<TrainedAlignment> {
    config.validate()?;
    if seeds.train.is_empty() {
        return Err(Error::EmptyInput("training seed pairs".into()));
    }
    let problem = AlignmentProblem::new(graphs, mode, config.lambda_weight)?;
    let mut params = GcnParameters::init(graphs, config)?;
    let alg = Algorithm::Adagrad {
        epsilon: config.adagrad_epsilon,
    };
    let lr = config.learning_rate;
    let mut w_opt: Vec<OptimizerState> = params
        .weights
        .iter()
        .map(|w| OptimizerState::new(alg, lr, w))
        .collect();
    let mut e_opt = params.graphs.clone().map(|g| OptimizerState::new(alg, lr, &g.entities));
    let mut p_opt = params.graphs.clone().map(|g| OptimizerState::new(alg, lr, &g.prototypes));
    let mut drop_rng = [
        rng::stream(config.seed, Stream::Dropout),
        rng::stream(config.seed.wrapping_add(1), Stream::Dropout),
    ];
    let mut drop_proto_rng = [
        rng::stream(config.seed, Stream::PrototypeDropout),
        rng::stream(config.seed.wrapping_add(1), Stream::PrototypeDropout),
    ];

    let evaluate = |params: &GcnParameters| -> Result<([Matrix; 2], RankingReport)> {
        let emb = problem.embed(params, config)?;
        let report = if seeds.test.is_empty() {
            RankingReport::from_ranks(&[1], &eval::ALIGNMENT_HITS)?
        } else {
            eval::alignment_report(&seeds.test, &emb[0], &emb[1], TiePolicy::Mean)?
        };
        Ok((emb, report))
    };

    let mut cache: Option<NegativePairCache> = None;
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        if cache
            .as_ref()
            .is_none_or(|c| c.is_stale(epoch, config.negative_refresh_epochs))
        {
            let emb = problem.embed(&params, config)?;
            cache = Some(mine_negatives(
                &emb[0],
                &emb[1],
                &seeds.train,
                config.negatives_per_positive,
                epoch,
            )?);
        }
        let negatives = cache.as_ref().expect("mined above");
        let [d0, d1] = &mut drop_rng;
        let [p0, p1] = &mut drop_proto_rng;
        let dropout = (config.dropout_rate > 0.0).then(|| {
            [
                DropoutRngs {
                    rate: config.dropout_rate,
                    entities: d0,
                    prototypes: p0,
                },
                DropoutRngs {
                    rate: config.dropout_rate,
                    entities: d1,
                    prototypes: p1,
                },
            ]
        });
        let (loss, grads) = problem.objective(&params, config, &seeds.train, negatives, dropout)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: epoch,
                detail: format!("loss {loss}"),
            });
        }
        for ((w, opt), g) in params.weights.iter_mut().zip(&mut w_opt).zip(&grads.weights) {
            opt.apply(w, &dense_grad(g))?;
        }
        for side in 0..2 {
            if config.train_inputs {
                e_opt[side].apply(&mut params.graphs[side].entities, &dense_grad(&grads.entities[side]))?;
                if config.normalize_inputs {
                    normalize_rows(&mut params.graphs[side].entities);
                }
            }
            if mode == GcnMode::RpeGcn {
                p_opt[side].apply(
                    &mut params.graphs[side].prototypes,
                    &dense_grad(&grads.prototypes[side]),
                )?;
            }
        }
        let due = config.eval_every > 0 && (epoch + 1) % config.eval_every == 0;
        let (h1, mrr) = if due {
            let (_, r) = evaluate(&params)?;
            (r.hits_at(1), Some(r.mrr))
        } else {
            (None, None)
        };
        curve.push(EpochLog {
            epoch: epoch + 1,
            loss,
            test_hits1: h1,
            test_mrr: mrr,
        });
    }
    let (embeddings, report) = evaluate(&params)?;
    Ok(TrainedAlignment {
        params,
        curve,
        embeddings,
        report,
    })
}

/// Central-difference check of [`AlignmentProblem::objective`] for every
/// parameter table, without dropout. Negatives are mined once at the start
/// point and then held fixed.
pub fn check_objective_gradients(
    graphs: [&AugmentedGraph; 2],
    train: &[(usize, usize)],
    config: &GcnConfig,
    mode: GcnMode,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let problem = AlignmentProblem::new(graphs, mode, config.lambda_weight)?;
    let params = GcnParameters::init(graphs, config)?;
    let emb = problem.embed(&params, config)?;
    let negatives = mine_negatives(&emb[0], &emb[1], train, config.negatives_per_positive, 0)?;
    let (_, grads) = problem.objective(&params, config, train, &negatives, None)?;
    let loss_of = |p: &GcnParameters| Ok(problem.objective(p, config, train, &negatives, None)?.0);

    let check = |table: &EmbeddingTable, grad: &Matrix, put: &dyn Fn(&mut GcnParameters, &EmbeddingTable)| {
        let mut probe = table.clone();
        let rows: Vec<usize> = (0..probe.rows()).collect();
        finite_difference_check(&mut probe, &rows, &dense_grad(grad), h, tolerance, |t| {
            let mut p = params.clone();
            put(&mut p, t);
            loss_of(&p)
        })
    };
    let mut reports = Vec::new();
    for (l, w) in params.weights.iter().enumerate() {
        reports.push(check(w, &grads.weights[l], &|p, t| p.weights[l] = t.clone())?);
    }
    for side in 0..2 {
        let g = &params.graphs[side];
        reports.push(check(&g.entities, &grads.entities[side], &|p, t| {
            p.graphs[side].entities = t.clone()
        })?);
        reports.push(check(&g.prototypes, &grads.prototypes[side], &|p, t| {
            p.graphs[side].prototypes = t.clone()
        })?);
    }
    let mut out = reports.remove(0);
    for r in &reports {
        out.merge(r);
    }
    Ok(out)
}
