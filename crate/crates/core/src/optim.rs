//! Adam and Adagrad over sparse row gradients.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};

/// Row-indexed gradient accumulator. Keys are kept sorted so every consumer
/// sees rows in the same order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGrad {
    width: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl SparseGrad {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            rows: BTreeMap::new(),
        }
    }

    /// Builds from explicit `(row, gradient)` pairs; rows must be unique.
    pub fn from_rows(width: usize, rows: impl IntoIterator<Item = (usize, Vec<f64>)>) -> Result<Self> {
        let mut g = Self::new(width);
        for (r, v) in rows {
            if v.len() != width {
                return Err(Error::Shape(format!(
                    "gradient for row {r} has length {}, expected {width}",
                    v.len()
                )));
            }
            if g.rows.insert(r, v).is_some() {
                return Err(Error::Shape(format!("duplicate gradient row {r}")));
            }
        }
        Ok(g)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        let w = self.width;
        self.rows.entry(row).or_insert_with(|| vec![0.0; w])
    }

    pub fn add_scaled(&mut self, row: usize, scale: f64, grad: &[f64]) {
        debug_assert_eq!(grad.len(), self.width);
        for (acc, g) in self.row_mut(row).iter_mut().zip(grad) {
            *acc += scale * g;
        }
    }

    pub fn get(&self, row: usize) -> Option<&[f64]> {
        self.rows.get(&row).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Largest absolute entry, 0 when empty.
    pub fn max_abs(&self) -> f64 {
        self.rows
            .values()
            .flat_map(|v| v.iter())
            .fold(0.0_f64, |m, g| m.max(g.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.rows.values().flatten().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "kebab-case")]
pub enum Algorithm {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Adagrad { epsilon: f64 },
}

impl Algorithm {
    pub fn adam() -> Self {
        Algorithm::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn adagrad() -> Self {
        Algorithm::Adagrad { epsilon: 1e-10 }
    }
}

/// Per-table optimizer state; buffers mirror the table's shape. Adam keeps a
/// step counter per row so bias correction only depends on that row's history.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub algorithm: Algorithm,
    pub learning_rate: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    row_steps: Vec<u64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(algorithm: Algorithm, learning_rate: f64, table: &EmbeddingTable) -> Self {
        let n = table.values().len();
        let first = match algorithm {
            Algorithm::Adam { .. } => vec![0.0; n],
            Algorithm::Adagrad { .. } => Vec::new(),
        };
        Self {
            algorithm,
            learning_rate,
            first,
            second: vec![0.0; n],
            row_steps: vec![0; table.rows()],
            step: 0,
        }
    }

    /// Number of `apply` calls.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of updates row `row` has received.
    pub fn row_step(&self, row: usize) -> u64 {
        self.row_steps.get(row).copied().unwrap_or(0)
    }

    /// Updates only the rows present in `grads`. The step counter advances on
    /// every call, even for an all-zero gradient.
    pub fn apply(&mut self, table: &mut EmbeddingTable, grads: &SparseGrad) -> Result<()> {
        let width = table.width();
        if grads.width() != width {
            return Err(Error::Shape(format!(
                "gradient width {} does not match table width {width}",
                grads.width()
            )));
        }
        if self.second.len() != table.values().len() {
            return Err(Error::Shape("optimizer state built for another table".into()));
        }
        if let Some((r, _)) = grads.iter().find(|(r, _)| *r >= table.rows()) {
            return Err(Error::InvalidId {
                kind: "table row",
                id: r,
                size: table.rows(),
            });
        }
        self.step += 1;
        let lr = self.learning_rate;
        let values = table.values_mut();
        match self.algorithm {
            Algorithm::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                for (r, g) in grads.iter() {
                    self.row_steps[r] += 1;
                    let t = i32::try_from(self.row_steps[r]).unwrap_or(i32::MAX);
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let base = r * width;
                    for (j, &gj) in g.iter().enumerate() {
                        let k = base + j;
                        self.first[k] = beta1 * self.first[k] + (1.0 - beta1) * gj;
                        self.second[k] = beta2 * self.second[k] + (1.0 - beta2) * gj * gj;
                        let m_hat = self.first[k] / c1;
                        let v_hat = self.second[k] / c2;
                        values[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
            Algorithm::Adagrad { epsilon } => {
                for (r, g) in grads.iter() {
                    self.row_steps[r] += 1;
                    let base = r * width;
                    for (j, &gj) in g.iter().enumerate() {
                        let k = base + j;
                        self.second[k] += gj * gj;
                        values[k] -= lr * gj / (self.second[k].sqrt() + epsilon);
                    }
                }
            }
        }
        debug_assert!(table.is_finite(), "non-finite parameter after optimizer step");
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TableKind;
    use proptest::prelude::*;

    fn table(vals: Vec<f64>, width: usize) -> EmbeddingTable {
        let rows = vals.len() / width;
        EmbeddingTable::from_values(TableKind::Entity, rows, width, false, vals).unwrap()
    }

    #[test]
    fn adam_first_step_closed_form() {
        let mut t = table(vec![0.0, 0.0, 0.0], 3);
        let mut s = OptimizerState::new(Algorithm::adam(), 0.1, &t);
        let g = vec![0.5, -2.0, 1e-3];
        s.apply(&mut t, &SparseGrad::from_rows(3, [(0, g.clone())]).unwrap())
            .unwrap();
        for (x, gj) in t.row(0).iter().zip(&g) {
            let expect = -0.1 * gj / (gj.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-12, "{x} vs {expect}");
        }
    }

    #[test]
    fn adagrad_first_step() {
        let mut t = table(vec![0.0], 1);
        let mut s = OptimizerState::new(Algorithm::adagrad(), 1.0, &t);
        s.apply(&mut t, &SparseGrad::from_rows(1, [(0, vec![3.0])]).unwrap())
            .unwrap();
        assert!((t.row(0)[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params_but_counts_step() {
        let mut t = table(vec![1.0, 2.0], 2);
        let mut s = OptimizerState::new(Algorithm::adam(), 0.1, &t);
        s.apply(&mut t, &SparseGrad::from_rows(2, [(0, vec![0.0, 0.0])]).unwrap())
            .unwrap();
        assert_eq!(t.row(0), &[1.0, 2.0]);
        assert_eq!(s.step(), 1);
        assert_eq!(s.row_step(0), 1);
    }

    #[test]
    fn only_touched_rows_change_and_shapes_checked() {
        let mut t = table(vec![1.0, 1.0, 1.0, 1.0], 2);
        let mut s = OptimizerState::new(Algorithm::adagrad(), 0.5, &t);
        s.apply(&mut t, &SparseGrad::from_rows(2, [(1, vec![1.0, -1.0])]).unwrap())
            .unwrap();
        assert_eq!(t.row(0), &[1.0, 1.0]);
        assert_ne!(t.row(1), &[1.0, 1.0]);
        assert!(s.apply(&mut t, &SparseGrad::new(3)).is_err());
        assert!(s
            .apply(&mut t, &SparseGrad::from_rows(2, [(7, vec![0.0, 0.0])]).unwrap())
            .is_err());
        assert!(SparseGrad::from_rows(2, [(0, vec![0.0])]).is_err());
        assert!(SparseGrad::from_rows(1, [(0, vec![0.0]), (0, vec![1.0])]).is_err());
    }

    proptest! {
        #[test]
        fn adam_zero_betas_is_normalized_sgd(g in prop::collection::vec(-5.0f64..5.0, 1..6), lr in 0.001f64..1.0) {
            let n = g.len();
            let mut t = table(vec![0.0; n], n);
            let alg = Algorithm::Adam { beta1: 0.0, beta2: 0.0, epsilon: 1e-8 };
            let mut s = OptimizerState::new(alg, lr, &t);
            // two steps: the degenerate form holds at every step, not only the first
            for _ in 0..2 {
                let before = t.row(0).to_vec();
                s.apply(&mut t, &SparseGrad::from_rows(n, [(0, g.clone())]).unwrap()).unwrap();
                for j in 0..n {
                    let expect = -lr * g[j] / (g[j].abs() + 1e-8);
                    prop_assert!((t.row(0)[j] - before[j] - expect).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn disjoint_row_updates_commute(a in prop::collection::vec(-1.0f64..1.0, 2), b in prop::collection::vec(-1.0f64..1.0, 2), adam in any::<bool>()) {
            let alg = if adam { Algorithm::adam() } else { Algorithm::adagrad() };
            let run = |first: usize| {
                let mut t = table(vec![0.3, -0.2, 0.7, 0.1], 2);
                let mut s = OptimizerState::new(alg, 0.1, &t);
                let ga = SparseGrad::from_rows(2, [(0, a.clone())]).unwrap();
                let gb = SparseGrad::from_rows(2, [(1, b.clone())]).unwrap();
                if first == 0 {
                    s.apply(&mut t, &ga).unwrap();
                    s.apply(&mut t, &gb).unwrap();
                } else {
                    s.apply(&mut t, &gb).unwrap();
                    s.apply(&mut t, &ga).unwrap();
                }
                t
            };
            prop_assert_eq!(run(0), run(1));
        }
    }
}
