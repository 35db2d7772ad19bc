//! Second-order conditions: branches of the CC-critical cone (projected onto
//! `d_x`), the necessary condition, CC-SOSC and the second-order hypothesis of
//! the local uniqueness result for M-stationary points.
//!
//! A quadratic form is certified on a branch by positive (semi)definiteness on
//! the span of the branch, which is sufficient. Violations are searched for by
//! eigen-directions and seeded sampling inside the branch cone. Anything in
//! between is reported as inconclusive.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{bounded_lsq, null_space, select_rows, sym_eigen_sorted, vstack};
use crate::model::{Hessians, Problem};
use crate::reformulation::{active_inequalities, index_sets, zero_indices, PrimalPair, Tolerances};
use crate::stationarity::{
    certify_m_stationary, certify_s_stationary, multiplier_set_vertices, Combinations, MultiplierKind, Multipliers,
    DEFAULT_VERTEX_CAP,
};

/// One polyhedral piece `{d : eq_rows d = 0, ineq_rows d <= 0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeBranch {
    /// Indices whose `d_x` entry is forced to zero by the branch choice.
    pub zero_set: Vec<usize>,
    pub eq_rows: DMatrix<f64>,
    pub ineq_rows: DMatrix<f64>,
}

impl ConeBranch {
    pub fn contains(&self, d: &DVector<f64>, tol: f64) -> bool {
        let scale = tol * (1.0 + d.amax());
        (self.eq_rows.nrows() == 0 || (&self.eq_rows * d).amax() <= scale)
            && (self.ineq_rows.nrows() == 0 || (&self.ineq_rows * d).max() <= scale)
    }

    fn same_rows(&self, other: &ConeBranch) -> bool {
        sorted_rows(&self.eq_rows) == sorted_rows(&other.eq_rows)
            && sorted_rows(&self.ineq_rows) == sorted_rows(&other.ineq_rows)
    }
}

fn sorted_rows(a: &DMatrix<f64>) -> Vec<Vec<u64>> {
    let mut rows: Vec<Vec<u64>> = a
        .row_iter()
        .map(|r| r.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    rows.sort();
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeMode {
    /// x-projection of the critical cone at a given pair.
    Pair,
    /// Union over all completions `y` (critical cone of the original problem).
    XUnion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultiplierMode {
    Exists,
    Forall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictStatus {
    Certified,
    Falsified,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchReport {
    pub zero_set: Vec<usize>,
    /// Dimension of the span of the branch.
    pub dimension: usize,
    /// Smallest eigenvalue of the reduced Hessian (best multiplier in
    /// `exists` mode, worst in `forall` mode); `None` for `{0}` branches.
    pub min_eigenvalue: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderVerdict {
    pub status: VerdictStatus,
    /// Unit direction violating the condition when falsified.
    #[serde(with = "crate::serde_util::opt_dvec")]
    pub witness: Option<DVector<f64>>,
    /// Value of the quadratic form at the witness.
    pub witness_value: Option<f64>,
    pub branch_reports: Vec<BranchReport>,
    pub multiplier_mode: MultiplierMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondOrderOptions {
    pub tolerances: Tolerances,
    pub samples_per_branch: usize,
    pub seed: u64,
    pub branch_cap: u128,
    pub vertex_cap: usize,
}

impl Default for SecondOrderOptions {
    fn default() -> Self {
        SecondOrderOptions {
            tolerances: Tolerances::default(),
            samples_per_branch: 1000,
            seed: 0x5EED,
            branch_cap: 1 << 20,
            vertex_cap: DEFAULT_VERTEX_CAP,
        }
    }
}

/// `grad^2 f + sum lambda_i grad^2 g_i + sum mu_j grad^2 h_j` at `x`.
pub fn lagrangian_hessian(problem: &Problem, x: &DVector<f64>, mult: &Multipliers) -> Result<DMatrix<f64>> {
    check_multipliers(problem, mult)?;
    Ok(combine(&problem.hessians(x)?, mult))
}

fn combine(hess: &Hessians, mult: &Multipliers) -> DMatrix<f64> {
    let mut h = hess.f.clone();
    for (i, gi) in hess.g.iter().enumerate() {
        if mult.lambda[i] != 0.0 {
            h += gi * mult.lambda[i];
        }
    }
    for (j, hj) in hess.h.iter().enumerate() {
        if mult.mu[j] != 0.0 {
            h += hj * mult.mu[j];
        }
    }
    (&h + h.transpose()) * 0.5
}

fn check_multipliers(problem: &Problem, mult: &Multipliers) -> Result<()> {
    let dims = [
        ("lambda", problem.m(), mult.lambda.len()),
        ("mu", problem.p(), mult.mu.len()),
        ("gamma", problem.n(), mult.gamma.len()),
    ];
    for (what, expected, got) in dims {
        if expected != got {
            return Err(Error::Dimension { what, expected, got });
        }
    }
    Ok(())
}

/// Membership of `(d_x, d_y)` in the CC-linearisation cone at a feasible pair.
pub fn linearization_cone_member(
    problem: &Problem,
    pair: &PrimalPair,
    d_x: &DVector<f64>,
    d_y: &DVector<f64>,
    tols: &Tolerances,
) -> Result<bool> {
    let sets = index_sets(problem, pair, tols)?;
    let tol = tols.act_tol;
    let (jg, jh) = problem.jacobians(&pair.x)?;
    let dg = &jg * d_x;
    let dh = &jh * d_x;
    let ok = sets.i_g.iter().all(|&i| dg[i] <= tol)
        && dh.iter().all(|v| v.abs() <= tol)
        && (!sets.card_active || d_y.sum() >= -tol)
        && sets.i_pm0.iter().all(|&i| d_y[i].abs() <= tol)
        && sets.i_00.iter().all(|&i| d_y[i] >= -tol && (d_x[i] * d_y[i]).abs() <= tol)
        && sets.i_01.iter().all(|&i| d_y[i] <= tol)
        && sets.i_01.iter().chain(&sets.i_0plus).all(|&i| d_x[i].abs() <= tol);
    Ok(ok)
}

/// Direct membership of `d_x` in the x-projection of the critical cone:
/// linearised constraints, fixed components and `grad f^T d_x <= 0`.
pub fn critical_cone_member(problem: &Problem, pair: &PrimalPair, d_x: &DVector<f64>, tols: &Tolerances) -> Result<bool> {
    let sets = index_sets(problem, pair, tols)?;
    let tol = tols.act_tol * (1.0 + d_x.amax());
    let (jg, jh) = problem.jacobians(&pair.x)?;
    let grad = problem.gradient(&pair.x)?;
    let dg = &jg * d_x;
    Ok(sets.i_g.iter().all(|&i| dg[i] <= tol)
        && (&jh * d_x).iter().all(|v| v.abs() <= tol)
        && sets.i_01.iter().chain(&sets.i_0plus).all(|&i| d_x[i].abs() <= tol)
        && grad.dot(d_x) <= tol)
}

/// Direct membership of `d_x` in the critical cone of the original problem
/// (union over all feasible completions).
pub fn x_critical_cone_member(problem: &Problem, x: &DVector<f64>, d_x: &DVector<f64>, tols: &Tolerances) -> Result<bool> {
    let tol = tols.act_tol * (1.0 + d_x.amax());
    let (jg, jh) = problem.jacobians(x)?;
    let grad = problem.gradient(x)?;
    let dg = &jg * d_x;
    let zeros = zero_indices(x, tols).into_iter().filter(|&i| d_x[i].abs() <= tol).count();
    Ok(active_inequalities(problem, x, tols)?.iter().all(|&i| dg[i] <= tol)
        && (&jh * d_x).iter().all(|v| v.abs() <= tol)
        && zeros >= problem.n() - problem.kappa()
        && grad.dot(d_x) <= tol)
}

fn unit_rows(n: usize, idx: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(idx.len(), n);
    for (r, &i) in idx.iter().enumerate() {
        out[(r, i)] = 1.0;
    }
    out
}

fn positive_part(lambda: &DVector<f64>, active: &[usize], tols: &Tolerances) -> Vec<usize> {
    let cut = tols.zero_tol * (1.0 + lambda.amax());
    active.iter().copied().filter(|&i| lambda[i] > cut).collect()
}

fn push_unique(branches: &mut Vec<ConeBranch>, b: ConeBranch) {
    if !branches.iter().any(|o| o.same_rows(&b)) {
        branches.push(b);
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Branches of the x-projected critical cone in pair mode, described with
/// the positive part of the given multipliers.
fn pair_branches(problem: &Problem, pair: &PrimalPair, multipliers: &[Multipliers], opts: &SecondOrderOptions) -> Result<Vec<ConeBranch>> {
    let tols = &opts.tolerances;
    let n = problem.n();
    let sets = index_sets(problem, pair, tols)?;
    let count = 1u128.checked_shl(sets.i_00.len() as u32).unwrap_or(u128::MAX);
    if sets.i_00.len() >= 127 || count > opts.branch_cap {
        return Err(Error::BranchExplosion { count, cap: opts.branch_cap });
    }
    let (jg, jh) = problem.jacobians(&pair.x)?;
    let mut plus: Vec<usize> = Vec::new();
    for m in multipliers {
        plus.extend(positive_part(&m.lambda, &sets.i_g, tols));
    }
    plus.sort_unstable();
    plus.dedup();
    let zero_part: Vec<usize> = sets.i_g.iter().copied().filter(|i| !plus.contains(i)).collect();
    let mut fixed: Vec<usize> = sets.i_01.iter().chain(&sets.i_0plus).copied().collect();
    fixed.sort_unstable();

    let ineq_rows = select_rows(&jg, &zero_part);
    let mut branches = Vec::new();
    for k in 0..=sets.i_00.len() {
        let mut combos = Combinations::new(sets.i_00.len(), k);
        while let Some(c) = combos.next_combo() {
            let zero_set: Vec<usize> = c.iter().map(|&j| sets.i_00[j]).collect();
            let mut forced = fixed.clone();
            forced.extend(&zero_set);
            forced.sort_unstable();
            let eq_rows = vstack(&[jh.clone(), select_rows(&jg, &plus), unit_rows(n, &forced)], n);
            push_unique(&mut branches, ConeBranch { zero_set, eq_rows, ineq_rows: ineq_rows.clone() });
        }
    }
    Ok(branches)
}

/// Branches of the critical cone of the original problem: one per minimal
/// zero pattern `Z0 ⊆ I_0` with `|Z0| = n - kappa`.
///
/// The objective row `grad f^T d <= 0` is replaced by `grad g_i^T d = 0` on
/// the positive part of an M-multiplier whose `gamma` vanishes off `Z0`;
/// when no such multiplier is available it is kept as an inequality.
fn x_union_branches(problem: &Problem, x: &DVector<f64>, multipliers: &[Multipliers], opts: &SecondOrderOptions) -> Result<Vec<ConeBranch>> {
    let tols = &opts.tolerances;
    let n = problem.n();
    let need = n - problem.kappa();
    let i_0 = zero_indices(x, tols);
    if i_0.len() < need {
        return Err(Error::InfeasibleInput("x violates the cardinality bound".into()));
    }
    let count = binomial(i_0.len(), need);
    if count > opts.branch_cap {
        return Err(Error::BranchExplosion { count, cap: opts.branch_cap });
    }
    let active = active_inequalities(problem, x, tols)?;
    let (jg, jh) = problem.jacobians(x)?;
    let grad = problem.gradient(x)?;
    let mut branches = Vec::new();
    let mut combos = Combinations::new(i_0.len(), need);
    while let Some(c) = combos.next_combo() {
        let zero_set: Vec<usize> = c.iter().map(|&j| i_0[j]).collect();
        let gcut = |m: &Multipliers| tols.zero_tol * (1.0 + m.gamma.amax());
        let compatible: Vec<&Multipliers> = multipliers
            .iter()
            .filter(|m| (0..n).all(|i| zero_set.contains(&i) || m.gamma[i].abs() <= gcut(m)))
            .collect();
        let (eq_extra, ineq_rows) = if compatible.is_empty() {
            let grad_row = DMatrix::from_row_slice(1, n, grad.as_slice());
            (DMatrix::zeros(0, n), vstack(&[select_rows(&jg, &active), grad_row], n))
        } else {
            let mut plus: Vec<usize> = Vec::new();
            for m in &compatible {
                plus.extend(positive_part(&m.lambda, &active, tols));
            }
            plus.sort_unstable();
            plus.dedup();
            let rest: Vec<usize> = active.iter().copied().filter(|i| !plus.contains(i)).collect();
            (select_rows(&jg, &plus), select_rows(&jg, &rest))
        };
        let eq_rows = vstack(&[jh.clone(), eq_extra, unit_rows(n, &zero_set)], n);
        push_unique(&mut branches, ConeBranch { zero_set, eq_rows, ineq_rows });
    }
    Ok(branches)
}

/// Branches whose union is the x-projected critical cone.
///
/// In pair mode `y` must be given and the point S-stationary with `mult`;
/// in x-union mode the point must be M-stationary with `mult`.
pub fn critical_cone_branches(
    problem: &Problem,
    x: &DVector<f64>,
    y: Option<&DVector<f64>>,
    mult: &Multipliers,
    mode: ConeMode,
    opts: &SecondOrderOptions,
) -> Result<Vec<ConeBranch>> {
    check_multipliers(problem, mult)?;
    match mode {
        ConeMode::Pair => {
            let y = y.ok_or_else(|| Error::InvalidProblem("pair mode requires y".into()))?;
            pair_branches(problem, &PrimalPair::new(x.clone(), y.clone()), std::slice::from_ref(mult), opts)
        }
        ConeMode::XUnion => x_union_branches(problem, x, std::slice::from_ref(mult), opts),
    }
}

/// Matrix infinity norm (max absolute row sum).
fn norm_inf(h: &DMatrix<f64>) -> f64 {
    h.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn form_tol(h: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + norm_inf(h))
}

fn quad(h: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    d.dot(&(h * d))
}

/// Smallest eigenvalue and its eigenvector of `B^T H B`.
fn reduced_min(h: &DMatrix<f64>, basis: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let reduced = basis.transpose() * h * basis;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_sorted(&reduced);
    (vals[0], basis * vecs.column(0))
}

/// Candidate unit directions inside a branch cone: extreme eigen-directions
/// on the span and on the lineality space, then seeded random directions
/// projected onto the cone.
struct Sampler<'a> {
    branch: &'a ConeBranch,
    basis: DMatrix<f64>,
    /// `ineq_rows * basis`
    reduced_ineq: DMatrix<f64>,
    rng: ChaCha8Rng,
    tol: f64,
}

impl<'a> Sampler<'a> {
    fn new(branch: &'a ConeBranch, basis: DMatrix<f64>, seed: u64, tol: f64) -> Self {
        let reduced_ineq = &branch.ineq_rows * &basis;
        Sampler { branch, basis, reduced_ineq, rng: ChaCha8Rng::seed_from_u64(seed), tol }
    }

    fn normalize(d: DVector<f64>) -> Option<DVector<f64>> {
        let norm = d.norm();
        (norm > 1e-10).then(|| d / norm)
    }

    fn admit(&self, d: DVector<f64>) -> Option<DVector<f64>> {
        let d = Self::normalize(d)?;
        self.branch.contains(&d, self.tol).then_some(d)
    }

    /// Eigenvectors of the reduced forms, both signs.
    fn eigen_candidates(&self, forms: &[DMatrix<f64>], rel_tol: f64) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        let n = self.basis.nrows();
        let lineality = if self.branch.ineq_rows.nrows() > 0 {
            let rows = vstack(&[self.branch.eq_rows.clone(), self.branch.ineq_rows.clone()], n);
            Some(null_space(&rows, n, rel_tol))
        } else {
            None
        };
        for h in forms {
            for space in std::iter::once(&self.basis).chain(lineality.as_ref()) {
                if space.ncols() == 0 {
                    continue;
                }
                let reduced = space.transpose() * h * space;
                let reduced = (&reduced + reduced.transpose()) * 0.5;
                let (_, vecs) = sym_eigen_sorted(&reduced);
                for j in 0..vecs.ncols() {
                    let d = space * vecs.column(j);
                    for s in [1.0, -1.0] {
                        if let Some(d) = self.admit(&d * s) {
                            out.push(d);
                        }
                    }
                }
            }
        }
        out
    }

    /// Random direction in the span, projected onto the cone.
    fn random(&mut self) -> Option<DVector<f64>> {
        let k = self.basis.ncols();
        let r = DVector::from_fn(k, |_, _| StandardNormal.sample(&mut self.rng));
        let u = if self.reduced_ineq.nrows() == 0 {
            r
        } else {
            // r = P_K(r) + A^T s with s = argmin_{s >= 0} |A^T s - r|
            let at = self.reduced_ineq.transpose();
            let s = bounded_lsq(&at, &r, &vec![true; at.ncols()]).ok()?;
            r - at * s
        };
        self.admit(&self.basis * u)
    }
}

fn lineality_min(branch: &ConeBranch, h: &DMatrix<f64>, n: usize, rel_tol: f64) -> Option<f64> {
    let rows = vstack(&[branch.eq_rows.clone(), branch.ineq_rows.clone()], n);
    let basis = null_space(&rows, n, rel_tol);
    (basis.ncols() > 0).then(|| reduced_min(h, &basis).0)
}

/// Second-order necessary condition at an S-stationary pair with the given
/// multiplier.
pub fn check_sonc(problem: &Problem, pair: &PrimalPair, mult: &Multipliers, opts: &SecondOrderOptions) -> Result<SecondOrderVerdict> {
    check_multipliers(problem, mult)?;
    let tols = &opts.tolerances;
    let n = problem.n();
    let h = lagrangian_hessian(problem, &pair.x, mult)?;
    let tol_psd = form_tol(&h);
    let branches = pair_branches(problem, pair, std::slice::from_ref(mult), opts)?;
    let mut reports = Vec::with_capacity(branches.len());
    let mut all_span_psd = true;
    let mut all_lineality_psd = true;
    for (bi, branch) in branches.iter().enumerate() {
        let basis = null_space(&branch.eq_rows, n, tols.rank_tol);
        if basis.ncols() == 0 {
            reports.push(BranchReport { zero_set: branch.zero_set.clone(), dimension: 0, min_eigenvalue: None, passed: true });
            continue;
        }
        let (min_eig, _) = reduced_min(&h, &basis);
        let span_ok = min_eig >= -tol_psd;
        reports.push(BranchReport {
            zero_set: branch.zero_set.clone(),
            dimension: basis.ncols(),
            min_eigenvalue: Some(min_eig),
            passed: span_ok,
        });
        if span_ok {
            continue;
        }
        all_span_psd = false;
        let mut sampler = Sampler::new(branch, basis, opts.seed ^ bi as u64, tols.act_tol);
        let mut candidates = sampler.eigen_candidates(std::slice::from_ref(&h), tols.rank_tol);
        for _ in 0..opts.samples_per_branch {
            candidates.extend(sampler.random());
        }
        if let Some(d) = candidates.into_iter().find(|d| quad(&h, d) < -tol_psd) {
            let value = quad(&h, &d);
            reports.last_mut().expect("pushed above").passed = false;
            return Ok(SecondOrderVerdict {
                status: VerdictStatus::Falsified,
                witness: Some(d),
                witness_value: Some(value),
                branch_reports: reports,
                multiplier_mode: MultiplierMode::Exists,
            });
        }
        let lin_ok = lineality_min(branch, &h, n, tols.rank_tol).map_or(true, |v| v >= -tol_psd);
        reports.last_mut().expect("pushed above").passed = lin_ok;
        all_lineality_psd &= lin_ok;
    }
    let status = if all_span_psd || all_lineality_psd {
        VerdictStatus::Certified
    } else {
        VerdictStatus::Inconclusive
    };
    Ok(SecondOrderVerdict {
        status,
        witness: None,
        witness_value: None,
        branch_reports: reports,
        multiplier_mode: MultiplierMode::Exists,
    })
}

/// CC-SOSC (`exists` mode, at an S-stationary pair) or the second-order
/// hypothesis of M-stationary uniqueness (`forall` mode, all M-multipliers
/// on the critical cone of the original problem at `pair.x`).
pub fn check_cc_sosc(problem: &Problem, pair: &PrimalPair, mode: MultiplierMode, opts: &SecondOrderOptions) -> Result<SecondOrderVerdict> {
    let tols = &opts.tolerances;
    let n = problem.n();
    let x = &pair.x;
    let (set, branches) = match mode {
        MultiplierMode::Exists => {
            let cert = certify_s_stationary(problem, pair, tols)?;
            if !cert.is_stationary() {
                return Err(Error::NotStationary(format!(
                    "S-stationarity residual {:e} exceeds {:e}",
                    cert.residual, cert.threshold
                )));
            }
            let set = multiplier_set_vertices(problem, x, &MultiplierKind::Strong(pair.y.clone()), tols, opts.vertex_cap)?;
            let mults = vertex_list(&set.vertices, &set.representative);
            let branches = pair_branches(problem, pair, &mults, opts)?;
            (set, branches)
        }
        MultiplierMode::Forall => {
            let cert = certify_m_stationary(problem, x, tols)?;
            if !cert.is_stationary() {
                return Err(Error::NotStationary(format!(
                    "M-stationarity residual {:e} exceeds {:e}",
                    cert.residual, cert.threshold
                )));
            }
            let set = multiplier_set_vertices(problem, x, &MultiplierKind::Mordukhovich, tols, opts.vertex_cap)?;
            let mults = vertex_list(&set.vertices, &set.representative);
            let branches = x_union_branches(problem, x, &mults, opts)?;
            (set, branches)
        }
    };
    let hess = problem.hessians(x)?;
    let multipliers = vertex_list(&set.vertices, &set.representative);
    let forms: Vec<DMatrix<f64>> = multipliers.iter().map(|m| combine(&hess, m)).collect();
    // with no constraint curvature every multiplier gives the same form
    let flat = hess.g.iter().chain(&hess.h).all(|m| m.amax() == 0.0);
    let forms = if flat { forms[..1].to_vec() } else { forms };
    // rays of an unbounded multiplier set are not represented by vertices
    let complete = flat || !set.unbounded;
    let tol_pd = forms.iter().map(form_tol).fold(0.0, f64::max);

    let mut reports = Vec::with_capacity(branches.len());
    // exists mode needs one multiplier that works on every branch
    let mut good_forms = vec![true; forms.len()];
    let mut all_pass = true;
    let mut witness: Option<(DVector<f64>, f64)> = None;
    for (bi, branch) in branches.iter().enumerate() {
        let basis = null_space(&branch.eq_rows, n, tols.rank_tol);
        if basis.ncols() == 0 {
            reports.push(BranchReport { zero_set: branch.zero_set.clone(), dimension: 0, min_eigenvalue: None, passed: true });
            continue;
        }
        let eigs: Vec<f64> = forms.iter().map(|h| reduced_min(h, &basis).0).collect();
        for (k, e) in eigs.iter().enumerate() {
            good_forms[k] &= *e >= tol_pd;
        }
        let (min_eigenvalue, passed) = match mode {
            MultiplierMode::Exists => {
                let best = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (best, best >= tol_pd)
            }
            MultiplierMode::Forall => {
                let worst = eigs.iter().copied().fold(f64::INFINITY, f64::min);
                (worst, worst >= tol_pd && complete)
            }
        };
        reports.push(BranchReport {
            zero_set: branch.zero_set.clone(),
            dimension: basis.ncols(),
            min_eigenvalue: Some(min_eigenvalue),
            passed,
        });
        if passed {
            continue;
        }
        all_pass = false;
        if witness.is_some() {
            continue;
        }
        let mut sampler = Sampler::new(branch, basis, opts.seed ^ bi as u64, tols.act_tol);
        let mut candidates = sampler.eigen_candidates(&forms, tols.rank_tol);
        for _ in 0..opts.samples_per_branch {
            candidates.extend(sampler.random());
        }
        witness = candidates.into_iter().find_map(|d| {
            let values = forms.iter().map(|h| quad(h, &d));
            match mode {
                // some multiplier might still give positive curvature along
                // a ray unless the vertex list is complete
                MultiplierMode::Exists if complete => {
                    let best = values.fold(f64::NEG_INFINITY, f64::max);
                    (best < tol_pd).then_some((d, best))
                }
                MultiplierMode::Exists => None,
                MultiplierMode::Forall => {
                    let worst = values.fold(f64::INFINITY, f64::min);
                    (worst < tol_pd).then_some((d, worst))
                }
            }
        });
    }
    let certified = match mode {
        MultiplierMode::Exists => good_forms.iter().any(|&g| g),
        MultiplierMode::Forall => all_pass,
    };
    let (status, witness, witness_value) = if certified {
        (VerdictStatus::Certified, None, None)
    } else if let Some((d, v)) = witness {
        (VerdictStatus::Falsified, Some(d), Some(v))
    } else {
        (VerdictStatus::Inconclusive, None, None)
    };
    Ok(SecondOrderVerdict { status, witness, witness_value, branch_reports: reports, multiplier_mode: mode })
}

fn vertex_list(vertices: &[Multipliers], representative: &Multipliers) -> Vec<Multipliers> {
    if vertices.is_empty() {
        vec![representative.clone()]
    } else {
        vertices.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProblemFunctions, QuadraticData};
    use crate::problems::builtin;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn pair(x: &[f64], y: &[f64]) -> PrimalPair {
        PrimalPair::new(v(x), v(y))
    }

    fn quadratic(q: &[f64], c: &[f64]) -> Problem {
        let n = c.len();
        let data = QuadraticData::unconstrained(1, DMatrix::from_row_slice(n, n, q), v(c), 0.0);
        Problem::from_quadratic("q", data).unwrap()
    }

    #[test]
    fn lagrangian_hessian_examples() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let h = lagrangian_hessian(&disk, &v(&[0.0, 0.0]), &Multipliers::zeros(1, 0, 2)).unwrap();
        assert_eq!(h, DMatrix::identity(2, 2) * 2.0);
        let mut m = Multipliers::zeros(1, 0, 2);
        m.lambda[0] = 0.5;
        let h = lagrangian_hessian(&disk, &v(&[0.0, 0.0]), &m).unwrap();
        assert_eq!(h, DMatrix::identity(2, 2) * 3.0);

        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let mut m = Multipliers::zeros(0, 0, 3);
        let a = lagrangian_hessian(&d3, &v(&[0.3, -1.0, 2.0]), &m).unwrap();
        m.gamma = v(&[7.0, -3.0, 1e6]);
        let b = lagrangian_hessian(&d3, &v(&[0.3, -1.0, 2.0]), &m).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, DMatrix::identity(3, 3) * 2.0);

        let lin = quadratic(&[0.0; 4], &[1.0, 1.0]);
        let h = lagrangian_hessian(&lin, &v(&[0.0, 0.0]), &Multipliers::zeros(0, 0, 2)).unwrap();
        assert_eq!(h, DMatrix::zeros(2, 2));

        assert!(matches!(
            lagrangian_hessian(&lin, &v(&[0.0, 0.0]), &Multipliers::zeros(1, 0, 2)),
            Err(Error::Dimension { what: "lambda", .. })
        ));
    }

    #[test]
    fn linearization_cone_examples() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let p = pair(&[0.0, 0.0], &[1.0, 0.0]);
        let t = Tolerances::default();
        assert!(linearization_cone_member(&disk, &p, &v(&[0.0, 0.0]), &v(&[0.0, 1.0]), &t).unwrap());
        assert!(!linearization_cone_member(&disk, &p, &v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &t).unwrap());
        assert!(linearization_cone_member(&disk, &p, &v(&[0.0, 0.0]), &v(&[0.0, 0.0]), &t).unwrap());
        // complementarity on I_00 and sign of d_y
        assert!(!linearization_cone_member(&disk, &p, &v(&[0.0, 1.0]), &v(&[0.0, 1.0]), &t).unwrap());
        assert!(!linearization_cone_member(&disk, &p, &v(&[0.0, 0.0]), &v(&[0.0, -1.0]), &t).unwrap());
        assert!(!linearization_cone_member(&disk, &p, &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &t).unwrap());
        // card constraint active: e^T d_y >= 0
        assert!(!linearization_cone_member(&disk, &p, &v(&[0.0, 0.0]), &v(&[-1.0, 0.5]), &t).unwrap());
    }

    #[test]
    fn disk_pair_branches() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let m = Multipliers::zeros(1, 0, 2);
        let b = critical_cone_branches(&disk, &v(&[0.0, 0.0]), Some(&v(&[1.0, 0.0])), &m, ConeMode::Pair, &Default::default()).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].zero_set, Vec::<usize>::new());
        assert_eq!(b[0].eq_rows, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
        assert_eq!(b[1].zero_set, vec![1]);
        assert_eq!(b[1].eq_rows, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
        assert!(b[0].contains(&v(&[0.0, 3.0]), 1e-9));
        assert!(!b[0].contains(&v(&[1.0, 0.0]), 1e-9));
    }

    #[test]
    fn dist3d_x_union_branch() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let mut m = Multipliers::zeros(0, 0, 3);
        m.gamma = v(&[0.0, 2.0, 0.0]);
        let b = critical_cone_branches(&d3, &v(&[0.0, 0.0, 2.0]), None, &m, ConeMode::XUnion, &Default::default()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].zero_set, vec![0, 1]);
        let basis = null_space(&b[0].eq_rows, 3, 1e-8);
        assert_eq!(basis.ncols(), 1);
        assert!((basis[(2, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_i00_gives_one_branch() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let mut m = Multipliers::zeros(0, 0, 3);
        m.gamma = v(&[0.0, 2.0, 0.0]);
        let b = critical_cone_branches(&d3, &v(&[0.0, 0.0, 2.0]), Some(&v(&[1.0, 1.0, 0.0])), &m, ConeMode::Pair, &Default::default()).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn branch_cap_is_enforced() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let opts = SecondOrderOptions { branch_cap: 1, ..Default::default() };
        let mut m = Multipliers::zeros(0, 0, 3);
        m.gamma = v(&[0.0, 2.0, 4.0]);
        // two indices in I_00 give four branches
        let err = critical_cone_branches(&d3, &v(&[0.0; 3]), Some(&v(&[1.0, 0.0, 0.0])), &m, ConeMode::Pair, &opts);
        assert!(matches!(err, Err(Error::BranchExplosion { count: 4, cap: 1 })));
    }

    #[test]
    fn sonc_examples() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let p = pair(&[0.0, 0.0], &[1.0, 0.0]);
        let r = check_sonc(&disk, &p, &Multipliers::zeros(1, 0, 2), &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Certified);

        let concave = quadratic(&[-2.0, 0.0, 0.0, -2.0], &[0.0, 0.0]);
        let r = check_sonc(&concave, &p, &Multipliers::zeros(0, 0, 2), &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Falsified);
        let w = r.witness.unwrap();
        assert!(w[0].abs() < 1e-12 && (w[1].abs() - 1.0).abs() < 1e-12);
        assert!((r.witness_value.unwrap() + 2.0).abs() < 1e-12);

        let linear = quadratic(&[0.0; 4], &[0.0, 0.0]);
        let r = check_sonc(&linear, &p, &Multipliers::zeros(0, 0, 2), &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Certified);
    }

    #[test]
    fn sosc_exists_examples() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let r = check_cc_sosc(&disk, &pair(&[0.0, 0.0], &[1.0, 0.0]), MultiplierMode::Exists, &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Certified);
        assert_eq!(r.branch_reports.len(), 2);
        assert_eq!(r.branch_reports[0].min_eigenvalue, Some(2.0));
        assert_eq!(r.branch_reports[1].min_eigenvalue, None);

        let saddle = quadratic(&[0.0, 1.0, 1.0, 0.0], &[0.0, 0.0]);
        let r = check_cc_sosc(&saddle, &pair(&[0.0, 0.0], &[1.0, 0.0]), MultiplierMode::Exists, &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Falsified);
        let w = r.witness.unwrap();
        assert!(w[0].abs() < 1e-12);
        assert!(r.witness_value.unwrap().abs() < 1e-12);
    }

    #[test]
    fn sosc_forall_dist3d() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let r = check_cc_sosc(&d3, &pair(&[0.0, 0.0, 2.0], &[1.0, 1.0, 0.0]), MultiplierMode::Forall, &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Certified);
        assert_eq!(r.branch_reports.len(), 1);
        assert!((r.branch_reports[0].min_eigenvalue.unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sosc_requires_stationarity() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let err = check_cc_sosc(&d3, &pair(&[0.0, 0.0, 1.0], &[1.0, 1.0, 0.0]), MultiplierMode::Exists, &Default::default());
        assert!(matches!(err, Err(Error::NotStationary(_))));
    }

    #[test]
    fn sonc_inequality_branch_uses_cone() {
        // f = -x2^2 + x2 with g = -x2 <= 0 active at x = 0, kappa = 1 and
        // y = (1, 0): lambda = 1 > 0, so d2 = 0 on the critical cone and
        // the negative curvature is invisible
        let mut data = QuadraticData::unconstrained(1, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0]), v(&[0.0, 1.0]), 0.0);
        data.a_ineq = DMatrix::from_row_slice(1, 2, &[0.0, -1.0]);
        data.b_ineq = v(&[0.0]);
        let p = Problem::from_quadratic("edge", data).unwrap();
        let pr = pair(&[0.0, 0.0], &[1.0, 0.0]);
        let cert = certify_s_stationary(&p, &pr, &Tolerances::default()).unwrap();
        let m = cert.multipliers.unwrap();
        assert!((m.lambda[0] - 1.0).abs() < 1e-12);
        let r = check_sonc(&p, &pr, &m, &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Certified);
    }

    #[test]
    fn sampler_finds_violation_inside_polyhedral_cone() {
        // f = -x2^2 with g = -x2 <= 0 inactive multiplier (lambda = 0):
        // the cone is d1 = 0, d2 >= 0 and d = (0, 1) has value -2
        let mut data = QuadraticData::unconstrained(1, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -2.0]), v(&[0.0, 0.0]), 0.0);
        data.a_ineq = DMatrix::from_row_slice(1, 2, &[0.0, -1.0]);
        data.b_ineq = v(&[0.0]);
        let p = Problem::from_quadratic("ray", data).unwrap();
        let r = check_sonc(&p, &pair(&[0.0, 0.0], &[1.0, 0.0]), &Multipliers::zeros(1, 0, 2), &Default::default()).unwrap();
        assert_eq!(r.status, VerdictStatus::Falsified);
        let w = r.witness.unwrap();
        assert!(w[1] > 0.99);
    }

    #[test]
    fn x_critical_membership_matches_branch_union() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let x = v(&[0.0, 0.0, 0.0]);
        let cert = certify_m_stationary(&d3, &x, &Tolerances::default()).unwrap();
        let m = cert.multipliers.unwrap();
        let b = critical_cone_branches(&d3, &x, None, &m, ConeMode::XUnion, &Default::default()).unwrap();
        assert_eq!(b.len(), 3);
        let t = Tolerances::default();
        for d in [[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 1.0], [0.0, -1.0, 0.0]] {
            let d = v(&d);
            let direct = x_critical_cone_member(&d3, &x, &d, &t).unwrap();
            let union = b.iter().any(|br| br.contains(&d, t.act_tol));
            assert_eq!(direct, union, "{d:?}");
        }
    }

    #[test]
    fn nonlinear_constraint_curvature_enters() {
        struct Circle;
        impl ProblemFunctions for Circle {
            // f = -x2, g = x1^2 + x2^2 - 1, optimum (0, 1) with lambda = 1/2
            fn objective(&self, x: &DVector<f64>) -> f64 {
                -x[1]
            }
            fn objective_gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![0.0, -1.0])
            }
            fn ineq(&self, x: &DVector<f64>) -> DVector<f64> {
                DVector::from_vec(vec![x.norm_squared() - 1.0])
            }
            fn ineq_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
                DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]])
            }
            fn ineq_hessian(&self, _x: &DVector<f64>, _i: usize) -> Option<DMatrix<f64>> {
                Some(DMatrix::identity(2, 2) * 2.0)
            }
        }
        let p = Problem::new("circle", 2, 1, 1, 0, Circle).unwrap();
        let pr = pair(&[0.0, 1.0], &[1.0, 0.0]);
        let r = check_cc_sosc(&p, &pr, MultiplierMode::Exists, &Default::default()).unwrap();
        // d1 = 0 and grad g d = 2 d2 = 0: only d = 0 remains
        assert_eq!(r.status, VerdictStatus::Certified);
        assert!(r.branch_reports.iter().all(|b| b.dimension == 0));
    }
}
