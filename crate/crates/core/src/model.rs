//! Problem definition for `min f(x) s.t. g(x) <= 0, h(x) = 0, ||x||_0 <= kappa`,
//! function/derivative evaluation and finite-difference derivative checks.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// User-supplied smooth functions of a cardinality-constrained program.
///
/// Gradients and Jacobians are mandatory. Hessians are optional: returning
/// `None` makes [`Problem`] fall back to central differences of the
/// first derivatives. Implementations must be reentrant.
pub trait ProblemFunctions: Send + Sync {
    fn objective(&self, x: &DVector<f64>) -> f64;
    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    fn objective_hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }

    fn ineq(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, x.len())
    }
    fn ineq_hessian(&self, _x: &DVector<f64>, _i: usize) -> Option<DMatrix<f64>> {
        None
    }

    fn eq(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(0, x.len())
    }
    fn eq_hessian(&self, _x: &DVector<f64>, _i: usize) -> Option<DMatrix<f64>> {
        None
    }
}

/// Quadratic objective with quadratic/linear constraints:
///
/// * `f(x) = 1/2 x^T Q x + c^T x + offset`
/// * `g_i(x) = 1/2 x^T Q_i x + a_i^T x - b_i` (`Q_i` omitted means linear)
/// * `h_j(x) = 1/2 x^T P_j x + a_j^T x - b_j`
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticData {
    pub n: usize,
    pub kappa: usize,
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub offset: f64,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub q_ineq: Vec<DMatrix<f64>>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub q_eq: Vec<DMatrix<f64>>,
}

impl QuadraticData {
    /// Unconstrained quadratic `1/2 x^T Q x + c^T x + offset`.
    pub fn unconstrained(kappa: usize, q: DMatrix<f64>, c: DVector<f64>, offset: f64) -> Self {
        let n = c.len();
        QuadraticData {
            n,
            kappa,
            q,
            c,
            offset,
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            q_ineq: Vec::new(),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            q_eq: Vec::new(),
        }
    }

    pub fn m(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn p(&self) -> usize {
        self.b_eq.len()
    }

    /// Shape checks; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::parse("n", "dimension must be positive"));
        }
        if self.kappa == 0 || self.kappa >= n {
            return Err(Error::parse(
                "kappa",
                format!("need 0 < kappa < n, got kappa = {} with n = {}", self.kappa, n),
            ));
        }
        if self.q.shape() != (n, n) {
            return Err(Error::parse("Q", format!("expected {n}x{n}, got {:?}", self.q.shape())));
        }
        if self.c.len() != n {
            return Err(Error::parse("c", format!("expected length {n}, got {}", self.c.len())));
        }
        let m = self.b_ineq.len();
        if self.a_ineq.shape() != (m, n) {
            return Err(Error::parse(
                "A_ineq",
                format!("expected {m}x{n}, got {:?}", self.a_ineq.shape()),
            ));
        }
        if !self.q_ineq.is_empty() && self.q_ineq.len() != m {
            return Err(Error::parse("Q_ineq", format!("expected {m} matrices")));
        }
        if self.q_ineq.iter().any(|h| h.shape() != (n, n)) {
            return Err(Error::parse("Q_ineq", format!("each matrix must be {n}x{n}")));
        }
        let p = self.b_eq.len();
        if self.a_eq.shape() != (p, n) {
            return Err(Error::parse(
                "A_eq",
                format!("expected {p}x{n}, got {:?}", self.a_eq.shape()),
            ));
        }
        if !self.q_eq.is_empty() && self.q_eq.len() != p {
            return Err(Error::parse("Q_eq", format!("expected {p} matrices")));
        }
        if self.q_eq.iter().any(|h| h.shape() != (n, n)) {
            return Err(Error::parse("Q_eq", format!("each matrix must be {n}x{n}")));
        }
        let all_finite = self.q.iter().all(|v| v.is_finite())
            && self.c.iter().all(|v| v.is_finite())
            && self.offset.is_finite()
            && self.a_ineq.iter().chain(self.b_ineq.iter()).all(|v| v.is_finite())
            && self.a_eq.iter().chain(self.b_eq.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::parse("document", "non-finite number"));
        }
        Ok(())
    }
}

struct QuadraticFunctions(QuadraticData);

fn quad_value(h: Option<&DMatrix<f64>>, x: &DVector<f64>) -> f64 {
    h.map_or(0.0, |h| 0.5 * x.dot(&(h * x)))
}

impl ProblemFunctions for QuadraticFunctions {
    fn objective(&self, x: &DVector<f64>) -> f64 {
        let d = &self.0;
        0.5 * x.dot(&(&d.q * x)) + d.c.dot(x) + d.offset
    }

    fn objective_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = &self.0;
        symmetrize(&d.q) * x + &d.c
    }

    fn objective_hessian(&self, _x: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.0.q.clone())
    }

    fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = &self.0;
        let mut g = &d.a_ineq * x - &d.b_ineq;
        for i in 0..g.len() {
            g[i] += quad_value(d.q_ineq.get(i), x);
        }
        g
    }

    fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = &self.0;
        let mut jac = d.a_ineq.clone();
        for (i, h) in d.q_ineq.iter().enumerate() {
            let row = (symmetrize(h) * x).transpose();
            let updated = jac.row(i) + row;
            jac.set_row(i, &updated);
        }
        jac
    }

    fn ineq_hessian(&self, _x: &DVector<f64>, i: usize) -> Option<DMatrix<f64>> {
        let n = self.0.n;
        Some(self.0.q_ineq.get(i).cloned().unwrap_or_else(|| DMatrix::zeros(n, n)))
    }

    fn eq(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = &self.0;
        let mut h = &d.a_eq * x - &d.b_eq;
        for i in 0..h.len() {
            h[i] += quad_value(d.q_eq.get(i), x);
        }
        h
    }

    fn eq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = &self.0;
        let mut jac = d.a_eq.clone();
        for (i, h) in d.q_eq.iter().enumerate() {
            let row = (symmetrize(h) * x).transpose();
            let updated = jac.row(i) + row;
            jac.set_row(i, &updated);
        }
        jac
    }

    fn eq_hessian(&self, _x: &DVector<f64>, i: usize) -> Option<DMatrix<f64>> {
        let n = self.0.n;
        Some(self.0.q_eq.get(i).cloned().unwrap_or_else(|| DMatrix::zeros(n, n)))
    }
}

/// A cardinality-constrained program with dimension data and evaluators.
#[derive(Clone)]
pub struct Problem {
    name: String,
    n: usize,
    kappa: usize,
    m: usize,
    p: usize,
    functions: Arc<dyn ProblemFunctions>,
    quadratic: Option<QuadraticData>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("kappa", &self.kappa)
            .field("m", &self.m)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

/// Second derivatives at a point, symmetrized.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessians {
    pub f: DMatrix<f64>,
    pub g: Vec<DMatrix<f64>>,
    pub h: Vec<DMatrix<f64>>,
}

/// Everything [`Problem::evaluate`] computes at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalBundle {
    pub f: f64,
    pub grad_f: DVector<f64>,
    pub g: DVector<f64>,
    pub h: DVector<f64>,
    pub jac_g: DMatrix<f64>,
    pub jac_h: DMatrix<f64>,
    pub hessians: Option<Hessians>,
}

fn check_vector(what: &'static str, v: &DVector<f64>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Dimension { what, expected: len, got: v.len() });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Evaluation(format!("{what} returned a non-finite value")));
    }
    Ok(())
}

fn check_matrix(what: &'static str, a: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if a.nrows() != rows {
        return Err(Error::Dimension { what, expected: rows, got: a.nrows() });
    }
    if a.ncols() != cols {
        return Err(Error::Dimension { what, expected: cols, got: a.ncols() });
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Evaluation(format!("{what} returned a non-finite value")));
    }
    Ok(())
}

/// Default relative step for finite-difference fallbacks.
pub const FD_STEP: f64 = 1e-6;

impl Problem {
    /// Wrap user-supplied functions. Requires `0 < kappa < n`.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        kappa: usize,
        m: usize,
        p: usize,
        functions: impl ProblemFunctions + 'static,
    ) -> Result<Self> {
        if n == 0 || kappa == 0 || kappa >= n {
            return Err(Error::InvalidProblem(format!(
                "need 0 < kappa < n, got kappa = {kappa}, n = {n}"
            )));
        }
        Ok(Problem {
            name: name.into(),
            n,
            kappa,
            m,
            p,
            functions: Arc::new(functions),
            quadratic: None,
        })
    }

    /// Problem backed by quadratic data (serializable through `problems::save`).
    pub fn from_quadratic(name: impl Into<String>, data: QuadraticData) -> Result<Self> {
        data.validate()?;
        let (n, kappa, m, p) = (data.n, data.kappa, data.m(), data.p());
        Ok(Problem {
            name: name.into(),
            n,
            kappa,
            m,
            p,
            functions: Arc::new(QuadraticFunctions(data.clone())),
            quadratic: Some(data),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn kappa(&self) -> usize {
        self.kappa
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn quadratic(&self) -> Option<&QuadraticData> {
        self.quadratic.as_ref()
    }
    pub fn functions(&self) -> &dyn ProblemFunctions {
        self.functions.as_ref()
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension { what: "x", expected: self.n, got: x.len() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation("point has a non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_point(x)?;
        let f = self.functions.objective(x);
        if !f.is_finite() {
            return Err(Error::Evaluation("objective returned a non-finite value".into()));
        }
        Ok(f)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        let g = self.functions.objective_gradient(x);
        check_vector("grad_f", &g, self.n)?;
        Ok(g)
    }

    /// `(g(x), h(x))`
    pub fn constraints(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.check_point(x)?;
        let g = self.functions.ineq(x);
        check_vector("g", &g, self.m)?;
        let h = self.functions.eq(x);
        check_vector("h", &h, self.p)?;
        Ok((g, h))
    }

    /// `(jac_g(x), jac_h(x))`
    pub fn jacobians(&self, x: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_point(x)?;
        let jg = self.functions.ineq_jacobian(x);
        check_matrix("jac_g", &jg, self.m, self.n)?;
        let jh = self.functions.eq_jacobian(x);
        check_matrix("jac_h", &jh, self.p, self.n)?;
        Ok((jg, jh))
    }

    /// Symmetrized Hessians of `f`, every `g_i` and every `h_j`, using the
    /// supplied callbacks or central differences of first derivatives.
    pub fn hessians(&self, x: &DVector<f64>) -> Result<Hessians> {
        self.check_point(x)?;
        let n = self.n;
        let f = match self.functions.objective_hessian(x) {
            Some(h) => h,
            None => self.fd_jacobian(x, |z| Ok(DMatrix::from_row_slice(1, n, self.gradient(z)?.as_slice())))?.remove(0),
        };
        check_matrix("hess_f", &f, n, n)?;

        let mut g: Vec<Option<DMatrix<f64>>> =
            (0..self.m).map(|i| self.functions.ineq_hessian(x, i)).collect();
        if g.iter().any(Option::is_none) {
            let fd = self.fd_jacobian(x, |z| Ok(self.jacobians(z)?.0))?;
            for (slot, est) in g.iter_mut().zip(fd) {
                slot.get_or_insert(est);
            }
        }
        let mut h: Vec<Option<DMatrix<f64>>> =
            (0..self.p).map(|i| self.functions.eq_hessian(x, i)).collect();
        if h.iter().any(Option::is_none) {
            let fd = self.fd_jacobian(x, |z| Ok(self.jacobians(z)?.1))?;
            for (slot, est) in h.iter_mut().zip(fd) {
                slot.get_or_insert(est);
            }
        }
        let g: Vec<DMatrix<f64>> = g.into_iter().map(Option::unwrap).collect();
        let h: Vec<DMatrix<f64>> = h.into_iter().map(Option::unwrap).collect();
        for m in g.iter().chain(h.iter()) {
            check_matrix("constraint hessian", m, n, n)?;
        }
        Ok(Hessians {
            f: symmetrize(&f),
            g: g.iter().map(symmetrize).collect(),
            h: h.iter().map(symmetrize).collect(),
        })
    }

    /// Central differences of a row-stacked first derivative (`k x n`);
    /// returns one `n x n` matrix per row.
    fn fd_jacobian<F>(&self, x: &DVector<f64>, rows: F) -> Result<Vec<DMatrix<f64>>>
    where
        F: Fn(&DVector<f64>) -> Result<DMatrix<f64>>,
    {
        let n = self.n;
        let k = rows(x)?.nrows();
        let mut out = vec![DMatrix::zeros(n, n); k];
        for j in 0..n {
            let step = FD_STEP * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += step;
            let mut xm = x.clone();
            xm[j] -= step;
            let diff = (rows(&xp)? - rows(&xm)?) / (2.0 * step);
            for (r, mat) in out.iter_mut().enumerate() {
                for i in 0..n {
                    mat[(i, j)] = diff[(r, i)];
                }
            }
        }
        Ok(out)
    }

    /// Evaluate all first-order quantities (and Hessians on request) at `x`.
    pub fn evaluate(&self, x: &DVector<f64>, with_hessians: bool) -> Result<EvalBundle> {
        let f = self.objective(x)?;
        let grad_f = self.gradient(x)?;
        let (g, h) = self.constraints(x)?;
        let (jac_g, jac_h) = self.jacobians(x)?;
        let hessians = if with_hessians { Some(self.hessians(x)?) } else { None };
        Ok(EvalBundle { f, grad_f, g, h, jac_g, jac_h, hessians })
    }
}

/// Maximum relative error of one derivative block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub block: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeReport {
    pub step: f64,
    pub tol: f64,
    pub blocks: Vec<BlockError>,
    pub passed: bool,
}

impl DerivativeReport {
    pub fn block(&self, name: &str) -> Option<&BlockError> {
        self.blocks.iter().find(|b| b.block == name)
    }
}

fn rel_error(supplied: &DMatrix<f64>, estimate: &DMatrix<f64>) -> f64 {
    supplied
        .iter()
        .zip(estimate.iter())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compare supplied derivatives against central differences with step
/// `step * (1 + |x_i|)`.
///
/// Gradients and Jacobians are checked against differences of function
/// values; Hessians against differences of the supplied first derivatives.
pub fn check_derivatives(problem: &Problem, x: &DVector<f64>, step: f64, tol: f64) -> Result<DerivativeReport> {
    if !(step > 0.0) {
        return Err(Error::InvalidProblem("finite-difference step must be positive".into()));
    }
    let n = problem.n();
    let base = problem.evaluate(x, true)?;
    let hess = base.hessians.as_ref().expect("requested hessians");

    let mut fd_grad = DMatrix::zeros(1, n);
    let mut fd_jg = DMatrix::zeros(problem.m(), n);
    let mut fd_jh = DMatrix::zeros(problem.p(), n);
    let mut fd_hf = DMatrix::zeros(n, n);
    let mut fd_hg = vec![DMatrix::zeros(n, n); problem.m()];
    let mut fd_hh = vec![DMatrix::zeros(n, n); problem.p()];
    for j in 0..n {
        let hstep = step * (1.0 + x[j].abs());
        let mut xp = x.clone();
        xp[j] += hstep;
        let mut xm = x.clone();
        xm[j] -= hstep;
        let ep = problem.evaluate(&xp, false)?;
        let em = problem.evaluate(&xm, false)?;
        let inv = 1.0 / (2.0 * hstep);
        fd_grad[(0, j)] = (ep.f - em.f) * inv;
        fd_jg.set_column(j, &((&ep.g - &em.g) * inv));
        fd_jh.set_column(j, &((&ep.h - &em.h) * inv));
        fd_hf.set_column(j, &((&ep.grad_f - &em.grad_f) * inv));
        for i in 0..problem.m() {
            fd_hg[i].set_column(j, &((ep.jac_g.row(i) - em.jac_g.row(i)).transpose() * inv));
        }
        for i in 0..problem.p() {
            fd_hh[i].set_column(j, &((ep.jac_h.row(i) - em.jac_h.row(i)).transpose() * inv));
        }
    }

    let stack_err = |supplied: &[DMatrix<f64>], est: &[DMatrix<f64>]| {
        supplied
            .iter()
            .zip(est)
            .map(|(a, b)| rel_error(a, b))
            .fold(0.0, f64::max)
    };
    let errors = [
        ("objective gradient", rel_error(&DMatrix::from_row_slice(1, n, base.grad_f.as_slice()), &fd_grad)),
        ("objective hessian", rel_error(&hess.f, &symmetrize(&fd_hf))),
        ("ineq jacobian", rel_error(&base.jac_g, &fd_jg)),
        (
            "ineq hessians",
            stack_err(&hess.g, &fd_hg.iter().map(symmetrize).collect::<Vec<_>>()),
        ),
        ("eq jacobian", rel_error(&base.jac_h, &fd_jh)),
        (
            "eq hessians",
            stack_err(&hess.h, &fd_hh.iter().map(symmetrize).collect::<Vec<_>>()),
        ),
    ];
    let blocks: Vec<BlockError> = errors
        .iter()
        .map(|&(name, err)| BlockError {
            block: name.to_string(),
            max_rel_error: err,
            passed: err <= tol,
        })
        .collect();
    let passed = blocks.iter().all(|b| b.passed);
    Ok(DerivativeReport { step, tol, blocks, passed })
}
