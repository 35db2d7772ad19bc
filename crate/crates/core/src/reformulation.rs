//! The continuous reformulation in `(x, y)`:
//! `g(x) <= 0, h(x) = 0, 0 <= y <= e, e^T y >= n - kappa, x o y = 0`.
//!
//! Feasibility tests, index-set classification and the canonical
//! completion of `y` from a cardinality-feasible `x`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Problem;

/// A point `(x, y)` of the reformulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalPair {
    #[serde(with = "crate::serde_util::dvec")]
    pub x: DVector<f64>,
    #[serde(with = "crate::serde_util::dvec")]
    pub y: DVector<f64>,
}

impl PrimalPair {
    pub fn new(x: DVector<f64>, y: DVector<f64>) -> Self {
        assert_eq!(x.len(), y.len(), "x and y must have equal length");
        PrimalPair { x, y }
    }
}

/// Numerical thresholds for feasibility, activity and stationarity tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Constraint violation accepted as feasible.
    pub feas_tol: f64,
    /// Activity detection for `g_i` and for `y_i` at 0 or 1.
    pub act_tol: f64,
    /// `|x_i| <= zero_tol` counts as `x_i = 0`.
    pub zero_tol: f64,
    /// Stationarity residual threshold, scaled by `1 + ||grad f||_inf`.
    pub stat_tol: f64,
    /// Singular values below `rank_tol * sigma_max` count as zero.
    pub rank_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feas_tol: 1e-8,
            act_tol: 1e-6,
            zero_tol: 1e-8,
            stat_tol: 1e-6,
            rank_tol: 1e-8,
        }
    }
}

/// Index sets of a feasible pair (0-based indices, ascending).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSets {
    /// Active inequalities.
    pub i_g: Vec<usize>,
    /// Zero components of `x`.
    pub i_0: Vec<usize>,
    pub i_pm0: Vec<usize>,
    pub i_00: Vec<usize>,
    pub i_0plus: Vec<usize>,
    pub i_01: Vec<usize>,
    /// `e^T y = n - kappa` within `act_tol`.
    pub card_active: bool,
}

impl IndexSets {
    pub fn n(&self) -> usize {
        self.i_pm0.len() + self.i_00.len() + self.i_0plus.len() + self.i_01.len()
    }
}

fn is_zero(v: f64, tols: &Tolerances) -> bool {
    v.abs() <= tols.zero_tol
}

/// Indices of active inequalities, `g_i(x) >= -act_tol`.
pub fn active_inequalities(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<Vec<usize>> {
    let (g, _) = problem.constraints(x)?;
    Ok((0..g.len()).filter(|&i| g[i] >= -tols.act_tol).collect())
}

/// Indices with `|x_i| <= zero_tol`.
pub fn zero_indices(x: &DVector<f64>, tols: &Tolerances) -> Vec<usize> {
    (0..x.len()).filter(|&i| is_zero(x[i], tols)).collect()
}

/// Number of components with `|x_i| > zero_tol`.
pub fn cardinality(x: &DVector<f64>, tols: &Tolerances) -> usize {
    x.iter().filter(|v| !is_zero(**v, tols)).count()
}

/// Classify `{0..n}` into `I_pm0`, `I_00`, `I_0+`, `I_01`.
///
/// Components with `x_i != 0` land in `I_pm0` whatever `y_i` is; for a
/// feasible pair this forces `y_i = 0`.
pub fn index_sets(problem: &Problem, pair: &PrimalPair, tols: &Tolerances) -> Result<IndexSets> {
    let n = problem.n();
    if pair.x.len() != n || pair.y.len() != n {
        return Err(Error::Dimension { what: "pair", expected: n, got: pair.x.len().min(pair.y.len()) });
    }
    let mut sets = IndexSets {
        i_g: active_inequalities(problem, &pair.x, tols)?,
        i_0: zero_indices(&pair.x, tols),
        i_pm0: Vec::new(),
        i_00: Vec::new(),
        i_0plus: Vec::new(),
        i_01: Vec::new(),
        card_active: (pair.y.sum() - (n - problem.kappa()) as f64).abs() <= tols.act_tol,
    };
    for i in 0..n {
        let yi = pair.y[i];
        if yi < -tols.act_tol || yi > 1.0 + tols.act_tol || !yi.is_finite() {
            return Err(Error::Classification { index: i, value: yi });
        }
        if !is_zero(pair.x[i], tols) {
            sets.i_pm0.push(i);
        } else if yi.abs() <= tols.act_tol {
            sets.i_00.push(i);
        } else if (yi - 1.0).abs() <= tols.act_tol {
            sets.i_01.push(i);
        } else {
            sets.i_0plus.push(i);
        }
    }
    Ok(sets)
}

fn x_constraints_hold(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<bool> {
    let (g, h) = problem.constraints(x)?;
    let g_ok = g.iter().all(|&v| v <= tols.feas_tol);
    let h_ok = h.iter().all(|&v| v.abs() <= tols.feas_tol);
    Ok(g_ok && h_ok)
}

/// `x` satisfies `g <= 0`, `h = 0` and `||x||_0 <= kappa` within tolerances.
pub fn is_feasible_original(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<bool> {
    Ok(x_constraints_hold(problem, x, tols)? && cardinality(x, tols) <= problem.kappa())
}

/// `(x, y)` is feasible for the reformulation within `feas_tol`.
pub fn is_feasible_reformulation(problem: &Problem, pair: &PrimalPair, tols: &Tolerances) -> Result<bool> {
    let n = problem.n();
    if pair.y.len() != n {
        return Err(Error::Dimension { what: "y", expected: n, got: pair.y.len() });
    }
    if !x_constraints_hold(problem, &pair.x, tols)? {
        return Ok(false);
    }
    let y_box = pair.y.iter().all(|&v| v >= -tols.feas_tol && v <= 1.0 + tols.feas_tol);
    let sum_ok = pair.y.sum() >= (n - problem.kappa()) as f64 - tols.feas_tol;
    let comp = pair.x.component_mul(&pair.y).amax();
    Ok(y_box && sum_ok && comp <= tols.feas_tol)
}

/// `y_i = 0` on the support of `x`, `y_i = 1` elsewhere.
pub fn complete_y(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<DVector<f64>> {
    if !is_feasible_original(problem, x, tols)? {
        return Err(Error::InfeasibleInput(format!(
            "x is not feasible for the cardinality-constrained problem (||x||_0 = {}, kappa = {})",
            cardinality(x, tols),
            problem.kappa()
        )));
    }
    Ok(x.map(|v| if is_zero(v, tols) { 1.0 } else { 0.0 }))
}
