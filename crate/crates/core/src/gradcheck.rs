//! Central finite-difference gradient checker.
//!
//! Every model in this crate supplies hand-derived gradients; this is the
//! oracle they are validated against.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::optim::SparseGrad;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Flat parameter index of the worst coordinate.
    pub worst_index: Option<usize>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    fn new(tolerance: f64) -> Self {
        Self {
            checked: 0,
            max_rel_error: 0.0,
            worst_index: None,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
            tolerance,
            passed: true,
        }
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if self.worst_index.is_none() || err > self.max_rel_error {
            self.max_rel_error = err;
            self.worst_index = Some(index);
            self.worst_analytic = analytic;
            self.worst_numeric = numeric;
        }
        self.passed = self.max_rel_error < self.tolerance;
    }

    /// Folds another report into this one.
    pub fn merge(&mut self, other: &GradCheckReport) {
        self.checked += other.checked;
        if other.worst_index.is_some()
            && (self.worst_index.is_none() || other.max_rel_error > self.max_rel_error)
        {
            self.max_rel_error = other.max_rel_error;
            self.worst_index = other.worst_index;
            self.worst_analytic = other.worst_analytic;
            self.worst_numeric = other.worst_numeric;
        }
        self.tolerance = self.tolerance.min(other.tolerance);
        self.passed = self.max_rel_error < self.tolerance;
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks `analytic[i]` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for each
/// index in `coords`. `params` is restored before returning.
pub fn check_coordinates<F>(
    params: &mut [f64],
    coords: &[usize],
    analytic: &[f64],
    h: f64,
    tolerance: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    if coords.len() != analytic.len() {
        return Err(Error::Shape("one analytic value per coordinate required".into()));
    }
    let mut report = GradCheckReport::new(tolerance);
    for (&i, &a) in coords.iter().zip(analytic) {
        let x = params[i];
        params[i] = x + h;
        let up = loss(params);
        params[i] = x - h;
        let down = loss(params);
        params[i] = x;
        let (up, down) = (up?, down?);
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        report.record(i, a, (up - down) / (2.0 * h));
    }
    Ok(report)
}

/// Table-level wrapper: checks every coordinate of `rows_to_check`. Rows with
/// no entry in `analytic` are expected to have zero gradient.
pub fn finite_difference_check<F>(
    table: &mut EmbeddingTable,
    rows_to_check: &[usize],
    analytic: &SparseGrad,
    h: f64,
    tolerance: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&EmbeddingTable) -> Result<f64>,
{
    let width = table.width();
    if analytic.width() != width {
        return Err(Error::Shape("gradient width differs from table width".into()));
    }
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for &r in rows_to_check {
        if r >= table.rows() {
            return Err(Error::InvalidId {
                kind: "table row",
                id: r,
                size: table.rows(),
            });
        }
        let g = analytic.get(r);
        for j in 0..width {
            coords.push(r * width + j);
            values.push(g.map_or(0.0, |g| g[j]));
        }
    }
    // Swap the values out so the closure can see a full table while we perturb.
    let mut flat = table.values().to_vec();
    let mut probe = table.clone();
    let report = check_coordinates(&mut flat, &coords, &values, h, tolerance, |p| {
        probe.values_mut().copy_from_slice(p);
        loss(&probe)
    })?;
    debug_assert_eq!(flat.as_slice(), table.values());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::TableKind;

    fn half_sq(t: &EmbeddingTable) -> Result<f64> {
        Ok(0.5 * t.values().iter().map(|v| v * v).sum::<f64>())
    }

    fn setup() -> (EmbeddingTable, SparseGrad) {
        let t = EmbeddingTable::from_values(TableKind::Entity, 1, 2, false, vec![1.0, 2.0]).unwrap();
        let g = SparseGrad::from_rows(2, [(0, vec![1.0, 2.0])]).unwrap();
        (t, g)
    }

    #[test]
    fn quadratic_passes() {
        let (mut t, g) = setup();
        let r = finite_difference_check(&mut t, &[0], &g, 1e-4, 1e-6, half_sq).unwrap();
        assert!(r.passed);
        assert!(r.max_rel_error < 1e-6);
        assert_eq!(r.checked, 2);
        assert_eq!(t.values(), &[1.0, 2.0]);
    }

    #[test]
    fn constant_loss_passes() {
        let (mut t, _) = setup();
        let r = finite_difference_check(&mut t, &[0], &SparseGrad::new(2), 1e-4, 1e-6, |_| Ok(3.0))
            .unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn scaled_gradient_fails() {
        let (mut t, _) = setup();
        let wrong = SparseGrad::from_rows(2, [(0, vec![2.0, 4.0])]).unwrap();
        let r = finite_difference_check(&mut t, &[0], &wrong, 1e-4, 1e-4, half_sq).unwrap();
        assert!(!r.passed);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let (mut t, g) = setup();
        let r = finite_difference_check(&mut t, &[0], &g, 1e-4, 1e-6, |_| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite(_))));
        assert!(finite_difference_check(&mut t, &[0], &g, 0.0, 1e-6, half_sq).is_err());
    }
}
