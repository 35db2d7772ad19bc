//! First-order certification: M- and S-stationarity, multiplier sets and
//! the tailored constraint qualifications CC-LICQ and CC-MFCQ.
//!
//! The stationarity system
//! `grad f + jac_g^T lambda + jac_h^T mu + gamma = 0`
//! is solved in the least-squares sense with `lambda >= 0` on the active
//! inequalities and `gamma` free on the admissible zero components, so a
//! residual is reported even when no exact multiplier exists.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, bounded_lsq, lstsq, phase_one, select_columns, LpFeasibility};
use crate::model::Problem;
use crate::reformulation::{
    active_inequalities, index_sets, is_feasible_original, is_feasible_reformulation, zero_indices, PrimalPair,
    Tolerances,
};

/// Multipliers `(lambda, mu, gamma)` for `g`, `h` and the zero components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    #[serde(with = "crate::serde_util::dvec")]
    pub lambda: DVector<f64>,
    #[serde(with = "crate::serde_util::dvec")]
    pub mu: DVector<f64>,
    #[serde(with = "crate::serde_util::dvec")]
    pub gamma: DVector<f64>,
}

impl Multipliers {
    pub fn zeros(m: usize, p: usize, n: usize) -> Self {
        Multipliers {
            lambda: DVector::zeros(m),
            mu: DVector::zeros(p),
            gamma: DVector::zeros(n),
        }
    }

    fn amax(&self) -> f64 {
        self.lambda.amax().max(self.mu.amax()).max(self.gamma.amax())
    }

    fn distance(&self, other: &Multipliers) -> f64 {
        (&self.lambda - &other.lambda)
            .amax()
            .max((&self.mu - &other.mu).amax())
            .max((&self.gamma - &other.gamma).amax())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StationarityKind {
    S,
    M,
    #[serde(rename = "none")]
    NotStationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Uniqueness {
    Yes,
    No,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityCertificate {
    pub kind: StationarityKind,
    /// Least-squares multipliers; present whenever the system was solved.
    pub multipliers: Option<Multipliers>,
    /// Infinity norm of the stationarity equation residual.
    pub residual: f64,
    /// Threshold the residual was compared against.
    pub threshold: f64,
    pub unique_multiplier: Uniqueness,
}

impl StationarityCertificate {
    pub fn is_stationary(&self) -> bool {
        self.kind != StationarityKind::NotStationary
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LicqReport {
    pub holds: bool,
    /// Smallest singular value of the stacked gradients; `None` when no
    /// gradient is active.
    pub sigma_min: Option<f64>,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfcqReport {
    pub holds: bool,
    /// Nontrivial positively dependent combination, l1-normalized.
    pub witness: Option<Multipliers>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqReport {
    pub cc_licq: LicqReport,
    pub cc_mfcq: MfcqReport,
    /// CC-CPLD is a neighbourhood property and is not decided at a point.
    pub cc_cpld: String,
}

pub const CPLD_NOTE: &str = "not decidable pointwise";

/// Which multiplier system to use.
#[derive(Debug, Clone, PartialEq)]
pub enum MultiplierKind {
    /// S-stationarity at `(x, y)`: `gamma = 0` on `I_pm0` and `I_00`.
    Strong(DVector<f64>),
    /// M-stationarity at `x`: `gamma = 0` on `I_pm0`.
    Mordukhovich,
}

/// Column layout of the stationarity system at one point.
struct System {
    n: usize,
    m: usize,
    p: usize,
    active: Vec<usize>,
    gamma_free: Vec<usize>,
    /// `[jac_g[active]^T | jac_h^T | e_gamma_free]`
    columns: DMatrix<f64>,
    rhs: DVector<f64>,
    threshold: f64,
}

impl System {
    fn build(
        problem: &Problem,
        x: &DVector<f64>,
        active: Vec<usize>,
        gamma_free: Vec<usize>,
        tols: &Tolerances,
    ) -> Result<System> {
        let n = problem.n();
        let grad = problem.gradient(x)?;
        let (jg, jh) = problem.jacobians(x)?;
        let k = active.len() + problem.p() + gamma_free.len();
        let mut columns = DMatrix::zeros(n, k);
        let mut col = 0;
        for &i in &active {
            columns.set_column(col, &jg.row(i).transpose());
            col += 1;
        }
        for j in 0..problem.p() {
            columns.set_column(col, &jh.row(j).transpose());
            col += 1;
        }
        for &i in &gamma_free {
            columns[(i, col)] = 1.0;
            col += 1;
        }
        Ok(System {
            n,
            m: problem.m(),
            p: problem.p(),
            threshold: tols.stat_tol * (1.0 + grad.amax()),
            rhs: -grad,
            active,
            gamma_free,
            columns,
        })
    }

    fn nonneg(&self) -> Vec<bool> {
        (0..self.columns.ncols()).map(|j| j < self.active.len()).collect()
    }

    fn n_free(&self) -> usize {
        self.p + self.gamma_free.len()
    }

    fn free_columns(&self) -> DMatrix<f64> {
        let start = self.active.len();
        self.columns.columns(start, self.n_free()).into_owned()
    }

    fn ineq_columns(&self) -> DMatrix<f64> {
        self.columns.columns(0, self.active.len()).into_owned()
    }

    fn unpack(&self, w: &DVector<f64>) -> Multipliers {
        let mut mult = Multipliers::zeros(self.m, self.p, self.n);
        let mut col = 0;
        for &i in &self.active {
            mult.lambda[i] = w[col];
            col += 1;
        }
        for j in 0..self.p {
            mult.mu[j] = w[col];
            col += 1;
        }
        for &i in &self.gamma_free {
            mult.gamma[i] = w[col];
            col += 1;
        }
        mult
    }

    fn residual(&self, w: &DVector<f64>) -> f64 {
        (&self.columns * w - &self.rhs).amax()
    }
}

fn solve_system(sys: &System) -> Result<(Multipliers, f64)> {
    let w = bounded_lsq(&sys.columns, &sys.rhs, &sys.nonneg())?;
    Ok((sys.unpack(&w), sys.residual(&w)))
}

fn certificate(problem: &Problem, x: &DVector<f64>, sys: &System, kind: StationarityKind, tols: &Tolerances) -> Result<StationarityCertificate> {
    let (mult, residual) = solve_system(sys)?;
    let stationary = residual <= sys.threshold;
    let unique = if !stationary {
        Uniqueness::Unknown
    } else if linalg::rank(&sys.columns, tols.rank_tol) == sys.columns.ncols() {
        Uniqueness::Yes
    } else {
        match vertices_of(problem, x, sys, tols, DEFAULT_VERTEX_CAP) {
            Ok(set) if set.unbounded || set.vertices.len() > 1 => Uniqueness::No,
            Ok(set) if set.vertices.len() == 1 => Uniqueness::Yes,
            _ => Uniqueness::Unknown,
        }
    };
    Ok(StationarityCertificate {
        kind: if stationary { kind } else { StationarityKind::NotStationary },
        multipliers: Some(mult),
        residual,
        threshold: sys.threshold,
        unique_multiplier: unique,
    })
}

fn require_original(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<()> {
    if !is_feasible_original(problem, x, tols)? {
        return Err(Error::InfeasibleInput(
            "x violates the constraints or the cardinality bound".into(),
        ));
    }
    Ok(())
}

/// M-stationarity of a cardinality-feasible `x` (independent of `y`).
pub fn certify_m_stationary(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<StationarityCertificate> {
    require_original(problem, x, tols)?;
    let sys = System::build(problem, x, active_inequalities(problem, x, tols)?, zero_indices(x, tols), tols)?;
    certificate(problem, x, &sys, StationarityKind::M, tols)
}

/// S-stationarity of a reformulation-feasible pair.
pub fn certify_s_stationary(problem: &Problem, pair: &PrimalPair, tols: &Tolerances) -> Result<StationarityCertificate> {
    if !is_feasible_reformulation(problem, pair, tols)? {
        return Err(Error::InfeasibleInput("(x, y) is not feasible for the reformulation".into()));
    }
    let sys = s_system(problem, pair, tols)?;
    certificate(problem, &pair.x, &sys, StationarityKind::S, tols)
}

fn s_system(problem: &Problem, pair: &PrimalPair, tols: &Tolerances) -> Result<System> {
    let sets = index_sets(problem, pair, tols)?;
    let mut gamma_free: Vec<usize> = sets.i_0plus.iter().chain(&sets.i_01).copied().collect();
    gamma_free.sort_unstable();
    System::build(problem, &pair.x, sets.i_g, gamma_free, tols)
}

fn m_system(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<System> {
    System::build(problem, x, active_inequalities(problem, x, tols)?, zero_indices(x, tols), tols)
}

/// Rows `grad g_i (i in I_g)`, `grad h_j`, `e_i (i in I_0)`.
fn cq_rows(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<System> {
    let n = problem.n();
    let sys = m_system(problem, x, tols)?;
    debug_assert_eq!(sys.columns.nrows(), n);
    Ok(sys)
}

/// CC-LICQ: the active gradients and unit vectors are linearly independent.
pub fn check_cc_licq(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<LicqReport> {
    require_original(problem, x, tols)?;
    let sys = cq_rows(problem, x, tols)?;
    let rows = sys.columns.ncols();
    if rows == 0 {
        return Ok(LicqReport { holds: true, sigma_min: None, rows });
    }
    let sv = linalg::singular_values(&sys.columns);
    let smax = sv.max();
    let smin = if rows > problem.n() { 0.0 } else { sv.min() };
    Ok(LicqReport {
        holds: rows <= problem.n() && smin >= tols.rank_tol * smax && smax > 0.0,
        sigma_min: Some(smin),
        rows,
    })
}

/// Look for `(lambda >= 0, free) != 0` with `G lambda + F free = 0`,
/// l1-normalized. `None` means the columns are positively independent.
fn positive_dependence(ineq: &DMatrix<f64>, free: &DMatrix<f64>, tols: &Tolerances) -> Result<Option<(DVector<f64>, DVector<f64>)>> {
    let n = ineq.nrows().max(free.nrows());
    let kf = free.ncols();
    let kg = ineq.ncols();
    if kf > 0 {
        if linalg::rank(free, tols.rank_tol) < kf {
            // free columns alone are dependent
            let ns = linalg::null_space(free, kf, tols.rank_tol.max(1e-12));
            let ns = if ns.ncols() == 0 {
                // the rank test and the SVD disagree only at the cutoff; take
                // the weakest right singular direction
                let svd = free.clone().svd(false, true);
                let v_t = svd.v_t.expect("requested V^T");
                let (imin, _) = svd.singular_values.argmin();
                v_t.row(imin).transpose()
            } else {
                ns.column(0).into_owned()
            };
            let _ = ns.len();
            let l1 = ns.lp_norm(1);
            return Ok(Some((DVector::zeros(kg), ns / l1)));
        }
    }
    if kg == 0 {
        return Ok(None);
    }
    // project G onto the orthogonal complement of range(F)
    let projected = if kf > 0 {
        let mut out = ineq.clone();
        for j in 0..kg {
            let coeff = lstsq(free, &ineq.column(j).into_owned());
            let col = ineq.column(j) - free * coeff;
            out.set_column(j, &col);
        }
        out
    } else {
        ineq.clone()
    };
    let scale = 1.0 + ineq.amax();
    let mut a = DMatrix::zeros(n + 1, kg);
    a.view_mut((0, 0), (n, kg)).copy_from(&projected);
    a.row_mut(n).fill(1.0);
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    // zero out projection noise
    for v in a.view_mut((0, 0), (n, kg)).iter_mut() {
        if v.abs() <= 1e-12 * scale {
            *v = 0.0;
        }
    }
    let lambda = match phase_one(&a, &b)? {
        LpFeasibility::Infeasible => return Ok(None),
        LpFeasibility::Feasible(v) => v,
    };
    let lambda = min_norm_witness(&projected, scale).unwrap_or(lambda);
    let free_coeff = if kf > 0 { -lstsq(free, &(ineq * &lambda)) } else { DVector::zeros(0) };
    let l1 = lambda.lp_norm(1) + free_coeff.lp_norm(1);
    Ok(Some((lambda / l1, free_coeff / l1)))
}

/// Least-norm point of `{lambda >= 0 : P lambda = 0, e^T lambda = 1}`,
/// computed by a heavily weighted bounded least-squares solve.
fn min_norm_witness(projected: &DMatrix<f64>, scale: f64) -> Option<DVector<f64>> {
    let (n, kg) = projected.shape();
    let weight = 1e6;
    let mut c = DMatrix::zeros(n + 1 + kg, kg);
    c.view_mut((0, 0), (n, kg)).copy_from(&(projected * weight));
    c.row_mut(n).fill(weight);
    c.view_mut((n + 1, 0), (kg, kg)).copy_from(&DMatrix::identity(kg, kg));
    let mut d = DVector::zeros(n + 1 + kg);
    d[n] = weight;
    let lambda = bounded_lsq(&c, &d, &vec![true; kg]).ok()?;
    let sum = lambda.sum();
    if sum <= 0.0 {
        return None;
    }
    let lambda = lambda / sum;
    if (projected * &lambda).amax() > 1e-9 * scale {
        return None;
    }
    // exact least-norm solution on the identified support
    let support: Vec<usize> = (0..kg).filter(|&j| lambda[j] > 1e-6).collect();
    let mut rows = DMatrix::zeros(n + 1, support.len());
    rows.view_mut((0, 0), (n, support.len())).copy_from(&select_columns(projected, &support));
    rows.row_mut(n).fill(1.0);
    let mut rhs = DVector::zeros(n + 1);
    rhs[n] = 1.0;
    let polished = lstsq(&rows, &rhs);
    if polished.iter().all(|&v| v >= 0.0) && (&rows * &polished - &rhs).amax() <= 1e-9 * scale {
        let mut out = DVector::zeros(kg);
        for (t, &j) in support.iter().enumerate() {
            out[j] = polished[t];
        }
        return Some(out);
    }
    Some(lambda)
}

/// CC-MFCQ: the active gradients (sign-constrained) together with the
/// equality gradients and unit vectors on `I_0` (free) are positively
/// linearly independent.
pub fn check_cc_mfcq(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<MfcqReport> {
    require_original(problem, x, tols)?;
    let sys = cq_rows(problem, x, tols)?;
    match positive_dependence(&sys.ineq_columns(), &sys.free_columns(), tols)? {
        None => Ok(MfcqReport { holds: true, witness: None }),
        Some((lambda, free)) => {
            let mut w = DVector::zeros(sys.columns.ncols());
            w.rows_mut(0, lambda.len()).copy_from(&lambda);
            w.rows_mut(lambda.len(), free.len()).copy_from(&free);
            Ok(MfcqReport { holds: false, witness: Some(sys.unpack(&w)) })
        }
    }
}

/// CC-LICQ and CC-MFCQ at `x`.
pub fn cq_report(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Result<CqReport> {
    Ok(CqReport {
        cc_licq: check_cc_licq(problem, x, tols)?,
        cc_mfcq: check_cc_mfcq(problem, x, tols)?,
        cc_cpld: CPLD_NOTE.to_string(),
    })
}

/// Default cap on the number of bases examined by vertex enumeration.
pub const DEFAULT_VERTEX_CAP: usize = 10_000;

/// Vertices of the multiplier polyhedron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    pub vertices: Vec<Multipliers>,
    /// The polyhedron contains a ray (or a line): "for all multipliers"
    /// statements cannot be checked on vertices alone.
    pub unbounded: bool,
    /// Least-squares multiplier from certification.
    pub representative: Multipliers,
}

/// Enumerate the vertices of the set of stationarity multipliers of the
/// requested kind at `x`.
pub fn multiplier_set_vertices(
    problem: &Problem,
    x: &DVector<f64>,
    kind: &MultiplierKind,
    tols: &Tolerances,
    cap: usize,
) -> Result<MultiplierSet> {
    let sys = match kind {
        MultiplierKind::Mordukhovich => {
            require_original(problem, x, tols)?;
            m_system(problem, x, tols)?
        }
        MultiplierKind::Strong(y) => {
            let pair = PrimalPair::new(x.clone(), y.clone());
            if !is_feasible_reformulation(problem, &pair, tols)? {
                return Err(Error::InfeasibleInput("(x, y) is not feasible for the reformulation".into()));
            }
            s_system(problem, &pair, tols)?
        }
    };
    vertices_of(problem, x, &sys, tols, cap)
}

fn vertices_of(_problem: &Problem, _x: &DVector<f64>, sys: &System, tols: &Tolerances, cap: usize) -> Result<MultiplierSet> {
    let (representative, residual) = solve_system(sys)?;
    if residual > sys.threshold {
        return Err(Error::NotStationary(format!(
            "stationarity residual {residual:e} exceeds {:e}",
            sys.threshold
        )));
    }
    let free = sys.free_columns();
    let ineq = sys.ineq_columns();
    let kf = free.ncols();
    let kg = ineq.ncols();
    let unbounded = positive_dependence(&ineq, &free, tols)?.is_some();
    if kf > 0 && linalg::rank(&free, tols.rank_tol) < kf {
        // a line through the set: no vertices exist
        return Ok(MultiplierSet { vertices: Vec::new(), unbounded: true, representative });
    }

    let n = sys.n;
    let max_size = kg.min(n.saturating_sub(kf));
    let mut vertices: Vec<Multipliers> = Vec::new();
    let mut bases = 0usize;
    let mut subset: Vec<usize> = Vec::new();
    for size in 0..=max_size {
        let mut combos = Combinations::new(kg, size);
        while let Some(combo) = combos.next_combo() {
            bases += 1;
            if bases > cap {
                return Err(Error::EnumerationLimit { count: bases as u128, cap: cap as u128 });
            }
            subset.clear();
            subset.extend_from_slice(combo);
            let mut cols: Vec<usize> = subset.clone();
            cols.extend(kg..kg + kf);
            let basis = select_columns(&sys.columns, &cols);
            if linalg::rank(&basis, tols.rank_tol) < cols.len() {
                continue;
            }
            let coeff = lstsq(&basis, &sys.rhs);
            if (&basis * &coeff - &sys.rhs).amax() > sys.threshold {
                continue;
            }
            if coeff.rows(0, subset.len()).iter().any(|&v| v < -sys.threshold) {
                continue;
            }
            let mut w = DVector::zeros(kg + kf);
            for (t, &j) in cols.iter().enumerate() {
                w[j] = if t < subset.len() { coeff[t].max(0.0) } else { coeff[t] };
            }
            let mult = sys.unpack(&w);
            let tol = 1e-6 * (1.0 + mult.amax());
            if !vertices.iter().any(|v| v.distance(&mult) <= tol) {
                vertices.push(mult);
            }
        }
    }
    Ok(MultiplierSet { vertices, unbounded, representative })
}

/// Lexicographic k-subsets of `0..n`.
pub(crate) struct Combinations {
    n: usize,
    idx: Vec<usize>,
    started: bool,
    done: bool,
}

impl Combinations {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        Combinations { n, idx: (0..k).collect(), started: false, done: k > n }
    }

    pub(crate) fn next_combo(&mut self) -> Option<&[usize]> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(&self.idx);
        }
        let k = self.idx.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if self.idx[i] < self.n - k + i {
                self.idx[i] += 1;
                for j in i + 1..k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(&self.idx);
            }
        }
        self.done = true;
        None
    }
}
