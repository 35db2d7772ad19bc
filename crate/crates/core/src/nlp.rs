//! Smooth NLP solver: augmented Lagrangian (PHR) outer loop with a
//! bound-constrained inner solver.
//!
//! Solves `min F(z)` subject to `c(z) <= 0`, `e(z) = 0`, `lo <= z <= hi`.
//! The inner solver is a projected Newton method when the spec supplies a
//! Lagrangian Hessian and projected limited-memory BFGS otherwise. The
//! result is a local KKT point; which one is found depends on the start.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Problem;

type ValueGrad<'a> = Box<dyn Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)> + Send + Sync + 'a>;
type ValueJac<'a> = Box<dyn Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> + Send + Sync + 'a>;
type LagHessian<'a> = Box<dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'a>;

/// A smooth NLP given by closures returning values with first derivatives.
pub struct NlpSpec<'a> {
    pub dim: usize,
    pub objective: ValueGrad<'a>,
    pub n_ineq: usize,
    /// `c(z)` and its Jacobian; `c(z) <= 0`.
    pub ineq: Option<ValueJac<'a>>,
    pub n_eq: usize,
    /// `e(z)` and its Jacobian; `e(z) = 0`.
    pub eq: Option<ValueJac<'a>>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// `(z, w, v) -> ∇²F + Σ w_i ∇²c_i + Σ v_j ∇²e_j`.
    pub hessian: Option<LagHessian<'a>>,
}

impl<'a> NlpSpec<'a> {
    /// Unconstrained problem on `R^dim`.
    pub fn new(dim: usize, objective: impl Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)> + Send + Sync + 'a) -> Self {
        NlpSpec {
            dim,
            objective: Box::new(objective),
            n_ineq: 0,
            ineq: None,
            n_eq: 0,
            eq: None,
            lower: DVector::from_element(dim, f64::NEG_INFINITY),
            upper: DVector::from_element(dim, f64::INFINITY),
            hessian: None,
        }
    }

    pub fn with_hessian(
        mut self,
        hessian: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>) -> Result<DMatrix<f64>> + Send + Sync + 'a,
    ) -> Self {
        self.hessian = Some(Box::new(hessian));
        self
    }

    pub fn with_ineq(
        mut self,
        count: usize,
        ineq: impl Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> + Send + Sync + 'a,
    ) -> Self {
        self.n_ineq = count;
        self.ineq = Some(Box::new(ineq));
        self
    }

    pub fn with_eq(
        mut self,
        count: usize,
        eq: impl Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> + Send + Sync + 'a,
    ) -> Self {
        self.n_eq = count;
        self.eq = Some(Box::new(eq));
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.lower.len() != self.dim {
            return Err(Error::Dimension { what: "lower bounds", expected: self.dim, got: self.lower.len() });
        }
        if self.upper.len() != self.dim {
            return Err(Error::Dimension { what: "upper bounds", expected: self.dim, got: self.upper.len() });
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidProblem("lower bound exceeds upper bound".into()));
        }
        Ok(())
    }

    fn project(&self, z: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| z[i].clamp(self.lower[i], self.upper[i]))
    }

    fn constraints(&self, z: &DVector<f64>) -> Result<Block> {
        let (c, jc) = match &self.ineq {
            Some(f) => f(z)?,
            None => (DVector::zeros(0), DMatrix::zeros(0, self.dim)),
        };
        let (e, je) = match &self.eq {
            Some(f) => f(z)?,
            None => (DVector::zeros(0), DMatrix::zeros(0, self.dim)),
        };
        check_block("inequality constraints", &c, &jc, self.n_ineq, self.dim)?;
        check_block("equality constraints", &e, &je, self.n_eq, self.dim)?;
        Ok(Block { c, jc, e, je })
    }

    fn objective_checked(&self, z: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let (f, g) = (self.objective)(z)?;
        if g.len() != self.dim {
            return Err(Error::Dimension { what: "objective gradient", expected: self.dim, got: g.len() });
        }
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("objective returned a non-finite value".into()));
        }
        Ok((f, g))
    }
}

struct Block {
    c: DVector<f64>,
    jc: DMatrix<f64>,
    e: DVector<f64>,
    je: DMatrix<f64>,
}

fn check_block(what: &'static str, v: &DVector<f64>, j: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if v.len() != rows || j.nrows() != rows {
        return Err(Error::Dimension { what, expected: rows, got: v.len().max(j.nrows()) });
    }
    if j.ncols() != cols {
        return Err(Error::Dimension { what, expected: cols, got: j.ncols() });
    }
    if v.iter().chain(j.iter()).any(|x| !x.is_finite()) {
        return Err(Error::Evaluation(format!("{what} returned a non-finite value")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlpOptions {
    pub stat_tol: f64,
    pub feas_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub memory: usize,
    pub penalty_start: f64,
    pub penalty_factor: f64,
    pub penalty_max: f64,
    pub multiplier_bound: f64,
    pub armijo_slope: f64,
    pub backtrack: f64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            stat_tol: 1e-8,
            feas_tol: 1e-8,
            max_outer: 100,
            max_inner: 500,
            memory: 10,
            penalty_start: 10.0,
            penalty_factor: 10.0,
            penalty_max: 1e12,
            multiplier_bound: 1e8,
            armijo_slope: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NlpStatus {
    Converged,
    IterationLimit,
    InfeasibleStall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NlpResult {
    #[serde(with = "crate::serde_util::dvec")]
    pub z: DVector<f64>,
    #[serde(with = "crate::serde_util::dvec")]
    pub lam_ineq: DVector<f64>,
    #[serde(with = "crate::serde_util::dvec")]
    pub lam_eq: DVector<f64>,
    /// Signed bound multipliers: positive at an active lower bound,
    /// negative at an active upper bound.
    #[serde(with = "crate::serde_util::dvec")]
    pub lam_box: DVector<f64>,
    pub objective: f64,
    /// Max of stationarity and complementarity violation.
    pub kkt_residual: f64,
    /// Max constraint violation.
    pub violation: f64,
    pub status: NlpStatus,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

impl NlpResult {
    pub fn converged(&self) -> bool {
        self.status == NlpStatus::Converged
    }
}

/// KKT measures at `z` for the given multipliers.
struct Kkt {
    lam_box: DVector<f64>,
    stationarity: f64,
    complementarity: f64,
    violation: f64,
}

fn kkt_measures(spec: &NlpSpec, z: &DVector<f64>, grad: &DVector<f64>, blk: &Block, lam: &DVector<f64>, mu: &DVector<f64>) -> Kkt {
    let mut r = grad.clone();
    if lam.len() > 0 {
        r += blk.jc.transpose() * lam;
    }
    if mu.len() > 0 {
        r += blk.je.transpose() * mu;
    }
    let mut lam_box = DVector::zeros(spec.dim);
    for i in 0..spec.dim {
        if (z[i] <= spec.lower[i] && r[i] > 0.0) || (z[i] >= spec.upper[i] && r[i] < 0.0) {
            lam_box[i] = r[i];
        }
    }
    let stationarity = (&r - &lam_box).amax();
    let complementarity = blk
        .c
        .iter()
        .zip(lam.iter())
        .map(|(c, l)| l.min(c.abs()))
        .fold(0.0, f64::max);
    let violation = blk
        .c
        .iter()
        .map(|c| c.max(0.0))
        .chain(blk.e.iter().map(|e| e.abs()))
        .fold(0.0, f64::max);
    Kkt { lam_box, stationarity, complementarity, violation }
}

/// KKT residual (max of stationarity and complementarity) of `spec` at `z`
/// for the given multipliers; bound multipliers are inferred.
pub fn kkt_residual(spec: &NlpSpec, z: &DVector<f64>, lam_ineq: &DVector<f64>, lam_eq: &DVector<f64>) -> Result<f64> {
    spec.validate()?;
    if lam_ineq.len() != spec.n_ineq {
        return Err(Error::Dimension { what: "lam_ineq", expected: spec.n_ineq, got: lam_ineq.len() });
    }
    if lam_eq.len() != spec.n_eq {
        return Err(Error::Dimension { what: "lam_eq", expected: spec.n_eq, got: lam_eq.len() });
    }
    let (_, grad) = spec.objective_checked(z)?;
    let blk = spec.constraints(z)?;
    let kkt = kkt_measures(spec, z, &grad, &blk, lam_ineq, lam_eq);
    Ok(kkt.stationarity.max(kkt.complementarity))
}

/// Augmented Lagrangian value and gradient.
fn augmented(
    spec: &NlpSpec,
    z: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
    rho: f64,
) -> Result<(f64, DVector<f64>)> {
    let (f, mut g) = spec.objective_checked(z)?;
    let blk = spec.constraints(z)?;
    let mut val = f;
    if spec.n_ineq > 0 {
        let shifted = DVector::from_fn(spec.n_ineq, |i, _| (lam[i] + rho * blk.c[i]).max(0.0));
        val += (shifted.norm_squared() - lam.norm_squared()) / (2.0 * rho);
        g += blk.jc.transpose() * shifted;
    }
    if spec.n_eq > 0 {
        val += mu.dot(&blk.e) + 0.5 * rho * blk.e.norm_squared();
        g += blk.je.transpose() * (mu + &blk.e * rho);
    }
    Ok((val, g))
}

/// Generalised Hessian of the augmented Lagrangian.
fn augmented_hessian(
    spec: &NlpSpec,
    hessian: &LagHessian,
    z: &DVector<f64>,
    lam: &DVector<f64>,
    mu: &DVector<f64>,
    rho: f64,
) -> Result<DMatrix<f64>> {
    let blk = spec.constraints(z)?;
    let shifted = DVector::from_fn(spec.n_ineq, |i, _| (lam[i] + rho * blk.c[i]).max(0.0));
    let weights_eq = mu + &blk.e * rho;
    let mut h = hessian(z, &shifted, &weights_eq)?;
    if h.shape() != (spec.dim, spec.dim) {
        return Err(Error::Dimension { what: "lagrangian hessian", expected: spec.dim, got: h.nrows() });
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::Evaluation("lagrangian hessian returned a non-finite value".into()));
    }
    let active: Vec<usize> = (0..spec.n_ineq).filter(|&i| shifted[i] > 0.0).collect();
    if !active.is_empty() {
        let a = blk.jc.select_rows(&active);
        h += a.transpose() * a * rho;
    }
    if spec.n_eq > 0 {
        h += blk.je.transpose() * &blk.je * rho;
    }
    Ok((&h + h.transpose()) * 0.5)
}

struct InnerOutcome {
    z: DVector<f64>,
    iterations: usize,
}

/// Projected L-BFGS on the box; stops when the projected gradient is below
/// `tol` in the infinity norm.
fn projected_lbfgs<F>(spec: &NlpSpec, fun: F, start: DVector<f64>, tol: f64, opts: &NlpOptions) -> Result<InnerOutcome>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = spec.dim;
    let mut z = spec.project(&start);
    let (mut f, mut g) = fun(&z)?;
    let mut mem: VecDeque<(DVector<f64>, DVector<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    while iterations < opts.max_inner {
        let pg = &z - spec.project(&(&z - &g));
        if pg.amax() <= tol {
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| !((z[i] <= spec.lower[i] && g[i] > 0.0) || (z[i] >= spec.upper[i] && g[i] < 0.0)))
            .collect();
        let mask = |v: &DVector<f64>| DVector::from_fn(n, |i, _| if free[i] { v[i] } else { 0.0 });
        let gm = mask(&g);

        let mut direction = two_loop(&gm, &mem, &mask);
        if gm.dot(&direction) >= -1e-12 * gm.norm() * direction.norm() || mem.is_empty() {
            direction = -&gm;
            if mem.is_empty() {
                direction *= (1.0 / gm.amax()).min(1.0);
            }
        }

        let mut accepted = None;
        for attempt in 0..2 {
            let mut alpha = 1.0;
            for _ in 0..60 {
                let trial = spec.project(&(&z + &direction * alpha));
                let step = &trial - &z;
                if step.amax() == 0.0 {
                    break;
                }
                if let Ok((ft, gt)) = fun(&trial) {
                    let slope = g.dot(&step);
                    let noise = 8.0 * f64::EPSILON * (1.0 + f.abs());
                    if ft <= f + opts.armijo_slope * slope || (slope < 0.0 && ft <= f + noise && gt.amax() < g.amax()) {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                alpha *= opts.backtrack;
            }
            if accepted.is_some() || attempt == 1 {
                break;
            }
            // retry along the scaled steepest descent direction
            mem.clear();
            direction = -&gm * (1.0 / gm.amax()).min(1.0);
        }
        let Some((zn, fn_, gn)) = accepted else {
            break;
        };
        let s = &zn - &z;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            mem.push_back((s, y, 1.0 / sy));
            if mem.len() > opts.memory {
                mem.pop_front();
            }
        }
        z = zn;
        f = fn_;
        g = gn;
    }
    Ok(InnerOutcome { z, iterations })
}

/// Projected Newton on the box: Newton step on the variables away from
/// their bounds, scaled gradient step on the others, Armijo search along
/// the projection arc.
fn projected_newton<F, H>(spec: &NlpSpec, fun: F, hess: H, start: DVector<f64>, tol: f64, opts: &NlpOptions) -> Result<InnerOutcome>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
    H: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
{
    let n = spec.dim;
    let mut z = spec.project(&start);
    let (mut f, mut g) = fun(&z)?;
    let mut iterations = 0;
    let mut stalled = 0;
    while iterations < opts.max_inner {
        let pg = &z - spec.project(&(&z - &g));
        let pg_norm = pg.amax();
        if pg_norm <= tol {
            break;
        }
        iterations += 1;
        let eps = pg_norm.min(1e-3);
        let free: Vec<usize> = (0..n)
            .filter(|&i| !((z[i] <= spec.lower[i] + eps && g[i] > 0.0) || (z[i] >= spec.upper[i] - eps && g[i] < 0.0)))
            .collect();
        let h = hess(&z)?;
        let mut direction = DVector::zeros(n);
        for i in 0..n {
            direction[i] = -g[i] / h[(i, i)].max(1e-8);
        }
        if !free.is_empty() {
            let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
            let gf = DVector::from_fn(free.len(), |a, _| -g[free[a]]);
            let scale = hf.amax().max(1.0);
            let mut shift = 0.0;
            let step = loop {
                let shifted = &hf + DMatrix::identity(free.len(), free.len()) * shift;
                if let Some(ch) = shifted.cholesky() {
                    break ch.solve(&gf);
                }
                shift = if shift == 0.0 { 1e-10 * scale } else { shift * 10.0 };
                if shift > 1e10 * scale {
                    break gf.clone();
                }
            };
            for (a, &i) in free.iter().enumerate() {
                direction[i] = step[a];
            }
        }

        let mut accepted = None;
        for candidate in [direction, -&g] {
            let mut alpha = 1.0;
            for _ in 0..60 {
                let trial = spec.project(&(&z + &candidate * alpha));
                let step = &trial - &z;
                if step.amax() == 0.0 {
                    break;
                }
                let slope = g.dot(&step);
                if slope < 0.0 {
                    if let Ok((ft, gt)) = fun(&trial) {
                        let noise = 8.0 * f64::EPSILON * (1.0 + f.abs());
                        if ft <= f + opts.armijo_slope * slope || (ft <= f + noise && gt.amax() < g.amax()) {
                            accepted = Some((trial, ft, gt));
                            break;
                        }
                    }
                }
                alpha *= opts.backtrack;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((zn, fn_, gn)) = accepted else {
            break;
        };
        if (&zn - &z).amax() <= 1e-14 * (1.0 + z.amax()) {
            stalled += 1;
            if stalled >= 3 {
                break;
            }
        } else {
            stalled = 0;
        }
        z = zn;
        f = fn_;
        g = gn;
    }
    Ok(InnerOutcome { z, iterations })
}

fn two_loop<M>(g: &DVector<f64>, mem: &VecDeque<(DVector<f64>, DVector<f64>, f64)>, mask: &M) -> DVector<f64>
where
    M: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let s = mask(s);
        let a = rho * s.dot(&q);
        q -= mask(y) * a;
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let yy = y.norm_squared();
        if yy > 0.0 {
            q *= s.dot(y) / yy;
        }
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * mask(y).dot(&q);
        q += mask(s) * (a - b);
    }
    -mask(&q)
}

/// Outer iterations without a 10% merit improvement before giving up.
const STAGNATION_LIMIT: usize = 10;

/// Solve the NLP from `start` (projected onto the box).
pub fn solve_nlp(spec: &NlpSpec, start: &DVector<f64>, opts: &NlpOptions) -> Result<NlpResult> {
    spec.validate()?;
    if start.len() != spec.dim {
        return Err(Error::Dimension { what: "start", expected: spec.dim, got: start.len() });
    }
    let bound = opts.multiplier_bound;
    let mut z = spec.project(start);
    let mut lam = DVector::zeros(spec.n_ineq);
    let mut mu = DVector::zeros(spec.n_eq);
    let mut rho = opts.penalty_start;
    let mut omega: f64 = 1e-3_f64.max(opts.stat_tol);
    let mut prev_violation = f64::INFINITY;
    let mut inner_total = 0;
    let mut best: Option<(f64, NlpResult)> = None;
    let mut stagnant = 0;

    for outer in 1..=opts.max_outer {
        let fun = |w: &DVector<f64>| augmented(spec, w, &lam, &mu, rho);
        let inner = match &spec.hessian {
            Some(hess) => projected_newton(spec, fun, |w| augmented_hessian(spec, hess, w, &lam, &mu, rho), z.clone(), omega, opts)?,
            None => projected_lbfgs(spec, fun, z.clone(), omega, opts)?,
        };
        inner_total += inner.iterations;
        z = inner.z;
        let blk = spec.constraints(&z)?;
        let (f, grad) = spec.objective_checked(&z)?;

        let progress = blk
            .c
            .iter()
            .zip(lam.iter())
            .map(|(c, l)| c.max(-l / rho).abs())
            .chain(blk.e.iter().map(|e| e.abs()))
            .fold(0.0, f64::max);
        lam = DVector::from_fn(spec.n_ineq, |i, _| (lam[i] + rho * blk.c[i]).clamp(0.0, bound));
        mu = DVector::from_fn(spec.n_eq, |i, _| (mu[i] + rho * blk.e[i]).clamp(-bound, bound));

        let kkt = kkt_measures(spec, &z, &grad, &blk, &lam, &mu);
        let kkt_residual = kkt.stationarity.max(kkt.complementarity);
        let result = NlpResult {
            z: z.clone(),
            lam_ineq: lam.clone(),
            lam_eq: mu.clone(),
            lam_box: kkt.lam_box,
            objective: f,
            kkt_residual,
            violation: kkt.violation,
            status: NlpStatus::Converged,
            outer_iterations: outer,
            inner_iterations: inner_total,
        };
        if kkt_residual <= opts.stat_tol && kkt.violation <= opts.feas_tol {
            return Ok(result);
        }
        let merit = kkt_residual.max(kkt.violation);
        if best.as_ref().map_or(true, |(m, _)| merit < 0.9 * *m) {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
        if best.as_ref().map_or(true, |(m, _)| merit < *m) {
            best = Some((merit, result));
        }
        if stagnant >= STAGNATION_LIMIT {
            break;
        }

        if progress > 0.25 * prev_violation && progress > 0.1 * opts.feas_tol {
            if rho >= opts.penalty_max && kkt.violation > opts.feas_tol {
                break;
            }
            rho = (rho * opts.penalty_factor).min(opts.penalty_max);
        }
        prev_violation = progress;
        omega = (omega * 0.1).max(0.5 * opts.stat_tol);
    }

    let (_, mut result) = best.expect("at least one outer iteration");
    result.status = if result.violation > opts.feas_tol && rho >= opts.penalty_max {
        NlpStatus::InfeasibleStall
    } else {
        NlpStatus::IterationLimit
    };
    result.outer_iterations = opts.max_outer.min(result.outer_iterations.max(1));
    result.inner_iterations = inner_total;
    Ok(result)
}

/// Solve the original NLP (without the cardinality constraint) with
/// `x_i = 0` enforced for `i` outside `support`. The returned `z` is the
/// full `n`-vector.
pub fn solve_restricted(problem: &Problem, support: &[usize], start: &DVector<f64>, opts: &NlpOptions) -> Result<NlpResult> {
    let n = problem.n();
    if start.len() != n {
        return Err(Error::Dimension { what: "start", expected: n, got: start.len() });
    }
    if support.iter().any(|&i| i >= n) {
        return Err(Error::InvalidProblem("support index out of range".into()));
    }
    let mut support = support.to_vec();
    support.sort_unstable();
    support.dedup();
    let k = support.len();
    let embed = {
        let support = support.clone();
        move |z: &DVector<f64>| {
            let mut x = DVector::zeros(n);
            for (t, &i) in support.iter().enumerate() {
                x[i] = z[t];
            }
            x
        }
    };
    let restrict_cols = {
        let support = support.clone();
        move |j: &DMatrix<f64>| DMatrix::from_fn(j.nrows(), k, |r, c| j[(r, support[c])])
    };

    if k == 0 {
        let x = DVector::zeros(n);
        let f = problem.objective(&x)?;
        let (g, h) = problem.constraints(&x)?;
        let violation = g.iter().map(|v| v.max(0.0)).chain(h.iter().map(|v| v.abs())).fold(0.0, f64::max);
        let status = if violation <= opts.feas_tol { NlpStatus::Converged } else { NlpStatus::InfeasibleStall };
        return Ok(NlpResult {
            z: x,
            lam_ineq: DVector::zeros(problem.m()),
            lam_eq: DVector::zeros(problem.p()),
            lam_box: DVector::zeros(0),
            objective: f,
            kkt_residual: 0.0,
            violation,
            status,
            outer_iterations: 0,
            inner_iterations: 0,
        });
    }

    let mut spec = NlpSpec::new(k, |z| {
        let x = embed(z);
        let f = problem.objective(&x)?;
        let g = problem.gradient(&x)?;
        Ok((f, DVector::from_fn(k, |t, _| g[support[t]])))
    });
    if problem.m() > 0 {
        let embed = embed.clone();
        let restrict_cols = restrict_cols.clone();
        spec = spec.with_ineq(problem.m(), move |z| {
            let x = embed(z);
            let (g, _) = problem.constraints(&x)?;
            let (jg, _) = problem.jacobians(&x)?;
            Ok((g, restrict_cols(&jg)))
        });
    }
    if problem.p() > 0 {
        let embed = embed.clone();
        let restrict_cols = restrict_cols.clone();
        spec = spec.with_eq(problem.p(), move |z| {
            let x = embed(z);
            let (_, h) = problem.constraints(&x)?;
            let (_, jh) = problem.jacobians(&x)?;
            Ok((h, restrict_cols(&jh)))
        });
    }
    let hess_embed = embed.clone();
    let hess_support = support.clone();
    spec = spec.with_hessian(move |z, w, v| {
        let x = hess_embed(z);
        let hess = problem.hessians(&x)?;
        let mut h = hess.f;
        for (i, hg) in hess.g.iter().enumerate() {
            h += hg * w[i];
        }
        for (j, hh) in hess.h.iter().enumerate() {
            h += hh * v[j];
        }
        Ok(DMatrix::from_fn(k, k, |a, b| h[(hess_support[a], hess_support[b])]))
    });
    let z0 = DVector::from_fn(k, |t, _| start[support[t]]);
    let mut res = solve_nlp(&spec, &z0, opts)?;
    res.z = embed(&res.z);
    Ok(res)
}
