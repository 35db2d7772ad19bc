//! Scholtes-type regularization: `NLP(t)` relaxes `x ∘ y = 0` to
//! `-t e <= x ∘ y <= t e`, and the path drives `t` to zero with warm starts.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Problem;
use crate::nlp::{kkt_residual, solve_nlp, solve_restricted, NlpOptions, NlpResult, NlpSpec, NlpStatus};
use crate::reformulation::{complete_y, is_feasible_original, is_feasible_reformulation, PrimalPair, Tolerances};
use crate::stationarity::{certify_m_stationary, certify_s_stationary, cq_report, CqReport, StationarityCertificate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathOptions {
    pub t0: f64,
    pub sigma: f64,
    pub t_min: f64,
    pub comp_tol: f64,
    pub rounding_tol: f64,
    /// Seed for the perturbed restart after a failed solve.
    pub seed: u64,
    /// Re-solve the original problem on the identified support before
    /// certification.
    pub polish: bool,
    pub tolerances: Tolerances,
}

impl Default for PathOptions {
    fn default() -> Self {
        PathOptions {
            t0: 1.0,
            sigma: 0.1,
            t_min: 1e-10,
            comp_tol: 1e-8,
            rounding_tol: 1e-6,
            seed: 0,
            polish: true,
            tolerances: Tolerances::default(),
        }
    }
}

impl PathOptions {
    fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::InvalidProblem("sigma must lie in (0, 1)".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < self.t0) {
            return Err(Error::InvalidProblem("need 0 < t_min < t0".into()));
        }
        Ok(())
    }
}

/// Starting point of a path.
#[derive(Debug, Clone, PartialEq)]
pub enum PathStart {
    Pair(PrimalPair),
    X(DVector<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub t: f64,
    #[serde(with = "crate::serde_util::dvec")]
    pub x: DVector<f64>,
    #[serde(with = "crate::serde_util::dvec")]
    pub y: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    /// `max |x_i y_i|`.
    pub comp_violation: f64,
    pub status: NlpStatus,
    /// The solve was repeated from a perturbed start.
    pub restarted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationPath {
    pub entries: Vec<PathEntry>,
    /// Rounded (and possibly polished) limit point with recompleted `y`.
    pub final_point: PrimalPair,
    pub final_objective: f64,
    /// S-stationarity certificate of `final_point`.
    pub final_certificate: StationarityCertificate,
    pub m_certificate: StationarityCertificate,
    pub cq_report: CqReport,
}

impl RegularizationPath {
    /// One JSON record per `t_k`, then a final record with certificates.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        let last = serde_json::json!({
            "final_point": self.final_point,
            "final_objective": self.final_objective,
            "final_certificate": self.final_certificate,
            "m_certificate": self.m_certificate,
            "cq_report": self.cq_report,
        });
        out.push_str(&last.to_string());
        out.push('\n');
        out
    }
}

/// `NLP(t)` over `z = (x, y)`. Inequalities are ordered `g`, `x∘y - t`,
/// `-x∘y - t`, `n - kappa - e^T y`; `y` is boxed in `[0, 1]`.
pub fn build_nlpt(problem: &Problem, t: f64) -> NlpSpec<'_> {
    let n = problem.n();
    let m = problem.m();
    let p = problem.p();
    let target = (n - problem.kappa()) as f64;
    let mut lower = DVector::from_element(2 * n, f64::NEG_INFINITY);
    let mut upper = DVector::from_element(2 * n, f64::INFINITY);
    for i in n..2 * n {
        lower[i] = 0.0;
        upper[i] = 1.0;
    }
    let mut spec = NlpSpec::new(2 * n, move |z| {
        let x = z.rows(0, n).into_owned();
        let f = problem.objective(&x)?;
        let g = problem.gradient(&x)?;
        let mut grad = DVector::zeros(2 * n);
        grad.rows_mut(0, n).copy_from(&g);
        Ok((f, grad))
    })
    .with_bounds(lower, upper)
    .with_ineq(m + 2 * n + 1, move |z| {
        let x = z.rows(0, n).into_owned();
        let y = z.rows(n, n);
        let mut c = DVector::zeros(m + 2 * n + 1);
        let mut jac = DMatrix::zeros(m + 2 * n + 1, 2 * n);
        if m > 0 {
            let (g, _) = problem.constraints(&x)?;
            let (jg, _) = problem.jacobians(&x)?;
            c.rows_mut(0, m).copy_from(&g);
            jac.view_mut((0, 0), (m, n)).copy_from(&jg);
        }
        for i in 0..n {
            let xy = x[i] * y[i];
            c[m + i] = xy - t;
            c[m + n + i] = -xy - t;
            jac[(m + i, i)] = y[i];
            jac[(m + i, n + i)] = x[i];
            jac[(m + n + i, i)] = -y[i];
            jac[(m + n + i, n + i)] = -x[i];
        }
        c[m + 2 * n] = target - y.sum();
        for i in 0..n {
            jac[(m + 2 * n, n + i)] = -1.0;
        }
        Ok((c, jac))
    });
    if p > 0 {
        spec = spec.with_eq(p, move |z| {
            let x = z.rows(0, n).into_owned();
            let (_, h) = problem.constraints(&x)?;
            let (_, jh) = problem.jacobians(&x)?;
            let mut jac = DMatrix::zeros(p, 2 * n);
            jac.view_mut((0, 0), (p, n)).copy_from(&jh);
            Ok((h, jac))
        });
    }
    spec.with_hessian(move |z, w, v| {
        let x = z.rows(0, n).into_owned();
        let hess = problem.hessians(&x)?;
        let mut hxx = hess.f;
        for (i, hg) in hess.g.iter().enumerate() {
            if w[i] != 0.0 {
                hxx += hg * w[i];
            }
        }
        for (j, hh) in hess.h.iter().enumerate() {
            if v[j] != 0.0 {
                hxx += hh * v[j];
            }
        }
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&hxx);
        for i in 0..n {
            let cross = w[m + i] - w[m + n + i];
            out[(i, n + i)] = cross;
            out[(n + i, i)] = cross;
        }
        Ok(out)
    })
}

/// KKT residual of `NLP(t)` at `pair` for multipliers ordered as in
/// [`build_nlpt`]; bound multipliers on `y` are inferred.
pub fn kkt_residual_nlpt(problem: &Problem, t: f64, pair: &PrimalPair, lam_ineq: &DVector<f64>, lam_eq: &DVector<f64>) -> Result<f64> {
    let spec = build_nlpt(problem, t);
    kkt_residual(&spec, &stack(pair), lam_ineq, lam_eq)
}

fn stack(pair: &PrimalPair) -> DVector<f64> {
    let n = pair.x.len();
    DVector::from_fn(2 * n, |i, _| if i < n { pair.x[i] } else { pair.y[i - n] })
}

fn split(z: &DVector<f64>, n: usize) -> PrimalPair {
    PrimalPair::new(z.rows(0, n).into_owned(), z.rows(n, n).into_owned())
}

fn comp_violation(pair: &PrimalPair) -> f64 {
    pair.x.component_mul(&pair.y).amax()
}

fn initial_pair(problem: &Problem, start: &PathStart, tols: &Tolerances) -> Result<PrimalPair> {
    let n = problem.n();
    let pair = match start {
        PathStart::Pair(p) => p.clone(),
        PathStart::X(x) => {
            if x.len() != n {
                return Err(Error::Dimension { what: "start", expected: n, got: x.len() });
            }
            let y = if is_feasible_original(problem, x, tols)? {
                complete_y(problem, x, tols)?
            } else {
                DVector::from_element(n, (n - problem.kappa()) as f64 / n as f64)
            };
            PrimalPair::new(x.clone(), y)
        }
    };
    if pair.x.len() != n || pair.y.len() != n {
        return Err(Error::Dimension { what: "start", expected: n, got: pair.x.len().min(pair.y.len()) });
    }
    Ok(pair)
}

/// Round tiny components to zero, optionally polish on the support, and
/// recomplete `y`. `None` if the result is not feasible for the
/// reformulation.
fn finalize(problem: &Problem, x: &DVector<f64>, popts: &PathOptions, nopts: &NlpOptions) -> Result<Option<PrimalPair>> {
    let tols = &popts.tolerances;
    let mut x = x.map(|v| if v.abs() <= popts.rounding_tol { 0.0 } else { v });
    let support: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    if support.len() > problem.kappa() {
        return Ok(None);
    }
    if popts.polish {
        if let Ok(res) = solve_restricted(problem, &support, &x, nopts) {
            let f_round = problem.objective(&x)?;
            let candidate = res.z.map(|v| if v.abs() <= tols.zero_tol { 0.0 } else { v });
            if res.converged()
                && is_feasible_original(problem, &candidate, tols)?
                && problem.objective(&candidate)? <= f_round + 1e-8 * (1.0 + f_round.abs())
            {
                x = candidate;
            }
        }
    }
    if !is_feasible_original(problem, &x, tols)? {
        return Ok(None);
    }
    let pair = PrimalPair::new(x.clone(), complete_y(problem, &x, tols)?);
    Ok(is_feasible_reformulation(problem, &pair, tols)?.then_some(pair))
}

/// Follow the regularization path from `start` until the complementarity
/// violation drops below `comp_tol` and the rounded point is feasible.
pub fn solve_path(problem: &Problem, start: &PathStart, popts: &PathOptions, nopts: &NlpOptions) -> Result<RegularizationPath> {
    popts.validate()?;
    let n = problem.n();
    let tols = &popts.tolerances;
    let mut current = initial_pair(problem, start, tols)?;
    let mut rng = ChaCha8Rng::seed_from_u64(popts.seed);
    let noise = Normal::new(0.0, 1e-3).expect("valid normal");
    let mut entries: Vec<PathEntry> = Vec::new();
    let mut t = popts.t0;
    let floor = popts.t_min * (1.0 - 1e-9);
    let mut last_comp = f64::INFINITY;

    while t >= floor {
        let spec = build_nlpt(problem, t);
        let z0 = stack(&current);
        let mut res: NlpResult = solve_nlp(&spec, &z0, nopts)?;
        let mut restarted = false;
        if res.status != NlpStatus::Converged {
            let perturbed = z0.map(|v| v + noise.sample(&mut rng));
            let retry = solve_nlp(&spec, &perturbed, nopts)?;
            restarted = true;
            if retry.converged() || retry.kkt_residual.max(retry.violation) < res.kkt_residual.max(res.violation) {
                res = retry;
            }
        }
        let pair = split(&res.z, n);
        let comp = comp_violation(&pair);
        last_comp = comp;
        entries.push(PathEntry {
            t,
            x: pair.x.clone(),
            y: pair.y.clone(),
            objective: res.objective,
            kkt_residual: res.kkt_residual,
            comp_violation: comp,
            status: res.status,
            restarted,
        });
        current = pair;
        if comp <= popts.comp_tol {
            if let Some(final_point) = finalize(problem, &current.x, popts, nopts)? {
                return certify(problem, entries, final_point, tols);
            }
        }
        t *= popts.sigma;
    }
    let t_last = entries.last().map_or(popts.t0, |e| e.t);
    Err(Error::PathStalled { t: t_last, comp_violation: last_comp })
}

fn certify(problem: &Problem, entries: Vec<PathEntry>, final_point: PrimalPair, tols: &Tolerances) -> Result<RegularizationPath> {
    let final_certificate = certify_s_stationary(problem, &final_point, tols)?;
    let m_certificate = certify_m_stationary(problem, &final_point.x, tols)?;
    let cq = cq_report(problem, &final_point.x, tols)?;
    Ok(RegularizationPath {
        final_objective: problem.objective(&final_point.x)?,
        entries,
        final_point,
        final_certificate,
        m_certificate,
        cq_report: cq,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::builtin;
    use crate::stationarity::StationarityKind;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn nlpt_shape() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let spec = build_nlpt(&disk, 0.1);
        assert_eq!(spec.dim, 4);
        assert_eq!(spec.n_ineq, 1 + 2 * 2 + 1);
        assert_eq!(spec.n_eq, 0);
        assert_eq!(spec.lower.rows(2, 2), v(&[0.0, 0.0]));
        assert_eq!(spec.upper.rows(2, 2), v(&[1.0, 1.0]));
    }

    #[test]
    fn nlpt_feasibility_examples() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let spec = build_nlpt(&d3, 0.15);
        let z = v(&[0.15, 1.0, 2.0, 1.0, 0.0, 0.0]);
        let (c, _) = (spec.ineq.as_ref().unwrap())(&z).unwrap();
        // the complementarity rows hold; e^T y = 1 < n - kappa is a separate row
        assert!(c.rows(0, 6).max() <= 1e-15);
        assert_eq!(c[6], 1.0);
        // at t = 0 only complementary points remain feasible
        let spec = build_nlpt(&d3, 0.0);
        let (c, _) = (spec.ineq.as_ref().unwrap())(&z).unwrap();
        assert!(c.rows(0, 6).max() > 0.0);
        let z = v(&[0.0, 1.0, 2.0, 1.0, 0.0, 0.0]);
        let (c, _) = (spec.ineq.as_ref().unwrap())(&z).unwrap();
        assert!(c.rows(0, 6).max() <= 0.0);
    }

    #[test]
    fn nlpt_jacobian_matches_differences() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let spec = build_nlpt(&d3, 0.3);
        let f = spec.ineq.as_ref().unwrap();
        let z = v(&[0.3, -0.7, 1.1, 0.2, 0.9, 0.4]);
        let (_, jac) = f(&z).unwrap();
        for j in 0..6 {
            let mut zp = z.clone();
            zp[j] += 1e-6;
            let mut zm = z.clone();
            zm[j] -= 1e-6;
            let fd = (f(&zp).unwrap().0 - f(&zm).unwrap().0) / 2e-6;
            assert!((fd - jac.column(j)).amax() < 1e-8);
        }
    }

    #[test]
    fn kkt_residual_at_disk_minimum_is_zero() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let pair = PrimalPair::new(v(&[0.0, 0.0]), v(&[1.0, 0.0]));
        let r = kkt_residual_nlpt(&disk, 0.1, &pair, &DVector::zeros(6), &DVector::zeros(0)).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn kkt_residual_is_lipschitz_in_multipliers() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let pair = PrimalPair::new(v(&[0.0, 0.0]), v(&[1.0, 0.0]));
        let mut lam = DVector::zeros(6);
        lam[1] = 1e-3;
        let r = kkt_residual_nlpt(&disk, 0.1, &pair, &lam, &DVector::zeros(0)).unwrap();
        // row of x1*y1 - t has gradient (y1, 0, x1, 0) = (1, 0, 0, 0)
        assert!(r <= 1e-3 + 1e-15);
    }

    #[test]
    fn dist3d_path_from_paper_start() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let path = solve_path(&d3, &PathStart::X(v(&[0.5, 0.9, 1.9])), &Default::default(), &Default::default()).unwrap();
        assert!((path.final_point.x.clone() - v(&[0.0, 0.0, 2.0])).amax() <= 1e-8, "{:?}", path.final_point);
        assert!((path.final_objective - 1.0).abs() <= 1e-8);
        assert_eq!(path.final_certificate.kind, StationarityKind::S);
        let mut last = f64::INFINITY;
        for e in &path.entries {
            assert!(e.t < last);
            last = e.t;
            if e.status == NlpStatus::Converged {
                assert!(e.comp_violation <= e.t * (1.0 + 1e-6) + 1e-8);
            }
        }
    }

    #[test]
    fn disk2d_path() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let path = solve_path(&disk, &PathStart::X(v(&[0.3, 0.3])), &Default::default(), &Default::default()).unwrap();
        assert_eq!(path.final_point.x, v(&[0.0, 0.0]));
        assert!(path.final_objective <= 1e-10);
        assert_eq!(path.final_certificate.kind, StationarityKind::S);
    }

    #[test]
    fn dist3d_path_leaves_origin() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        let start = PathStart::Pair(PrimalPair::new(v(&[0.0; 3]), v(&[1.0; 3])));
        let tight = NlpOptions { stat_tol: 1e-10, feas_tol: 1e-10, ..Default::default() };
        let path = solve_path(&d3, &start, &Default::default(), &tight).unwrap();
        let x = &path.final_point.x;
        let near = |a: &[f64]| (x - v(a)).amax() <= 1e-6;
        assert!(near(&[0.0, 0.0, 2.0]) || near(&[0.0, 1.0, 0.0]), "{x:?}");
    }

    #[test]
    fn json_lines_have_one_record_per_step_plus_final() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let path = solve_path(&disk, &PathStart::X(v(&[0.3, 0.3])), &Default::default(), &Default::default()).unwrap();
        let text = path.to_json_lines();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), path.entries.len() + 1);
        let last: serde_json::Value = serde_json::from_str(lines.last().unwrap()).unwrap();
        assert_eq!(last["final_certificate"]["kind"], "S");
        assert_eq!(last["cq_report"]["cc_cpld"], "not decidable pointwise");
    }

    #[test]
    fn invalid_options_rejected() {
        let disk = builtin("disk2d", &Default::default()).unwrap();
        let bad = PathOptions { sigma: 1.0, ..Default::default() };
        assert!(solve_path(&disk, &PathStart::X(v(&[0.3, 0.3])), &bad, &Default::default()).is_err());
    }

    #[test]
    fn stall_is_reported() {
        let d3 = builtin("dist3d", &Default::default()).unwrap();
        // a single step at t = 1 cannot reach the complementarity target
        let popts = PathOptions { t0: 1.0, t_min: 0.5, ..Default::default() };
        let err = solve_path(&d3, &PathStart::X(v(&[0.5, 0.9, 1.9])), &popts, &Default::default()).unwrap_err();
        assert!(matches!(err, Error::PathStalled { .. }));
    }
}
