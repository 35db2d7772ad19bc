//! Brute-force ground truth by support enumeration.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Problem;
use crate::nlp::{solve_restricted, NlpOptions, NlpResult, NlpStatus};
use crate::reformulation::{is_feasible_original, Tolerances};
use crate::stationarity::{certify_m_stationary, Combinations};

pub const DEFAULT_SUPPORT_CAP: u128 = 1_000_000;

/// Number of subsets of `{0..n}` with at most `kappa` elements.
pub fn support_count(n: usize, kappa: usize) -> u128 {
    let mut total: u128 = 0;
    let mut binom: u128 = 1;
    for k in 0..=kappa.min(n) {
        total = total.saturating_add(binom);
        binom = binom.saturating_mul((n - k) as u128) / (k + 1) as u128;
    }
    total
}

/// All supports of size at most `kappa`, by size and then lexicographically.
pub fn enumerate_supports(n: usize, kappa: usize, cap: u128) -> Result<Vec<Vec<usize>>> {
    if kappa == 0 || kappa >= n {
        return Err(Error::InvalidProblem(format!("need 0 < kappa < n, got kappa = {kappa}, n = {n}")));
    }
    let count = support_count(n, kappa);
    if count > cap {
        return Err(Error::EnumerationLimit { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    for k in 0..=kappa {
        let mut combos = Combinations::new(n, k);
        while let Some(c) = combos.next_combo() {
            out.push(c.to_vec());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    pub starts_per_support: usize,
    pub seed: u64,
    pub support_cap: u128,
    /// Candidates closer than this in the infinity norm are merged.
    pub dedup_tol: f64,
    pub tolerances: Tolerances,
    pub nlp: NlpOptions,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            starts_per_support: 3,
            seed: 0,
            support_cap: DEFAULT_SUPPORT_CAP,
            dedup_tol: 1e-6,
            tolerances: Tolerances::default(),
            nlp: NlpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Support whose restricted problem produced the point.
    pub support: Vec<usize>,
    #[serde(with = "crate::serde_util::dvec")]
    pub x: DVector<f64>,
    pub f: f64,
    pub m_residual: f64,
    pub m_stationary: bool,
    pub feasible: bool,
    pub status: NlpStatus,
}

/// A support on which no start converged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportFailure {
    pub support: Vec<usize>,
    pub status: NlpStatus,
    pub kkt_residual: f64,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    #[serde(with = "crate::serde_util::opt_dvec")]
    pub best_x: Option<DVector<f64>>,
    pub best_f: Option<f64>,
    pub candidates: Vec<Candidate>,
    pub failures: Vec<SupportFailure>,
    pub enumerated_supports: usize,
    pub seed: u64,
}

impl OracleResult {
    /// M-stationary candidates in the closed Euclidean ball.
    pub fn m_points_in_ball(&self, center: &DVector<f64>, radius: f64) -> Vec<DVector<f64>> {
        self.candidates
            .iter()
            .filter(|c| c.m_stationary && (&c.x - center).norm() <= radius)
            .map(|c| c.x.clone())
            .collect()
    }
}

fn support_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 step keeps per-support streams independent of thread order
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn solve_support(problem: &Problem, support: &[usize], index: usize, opts: &OracleOptions) -> Result<Vec<NlpResult>> {
    let n = problem.n();
    let mut rng = ChaCha8Rng::seed_from_u64(support_seed(opts.seed, index));
    let starts = if support.is_empty() { 1 } else { opts.starts_per_support.max(1) };
    let mut out = Vec::with_capacity(starts);
    for _ in 0..starts {
        let start = DVector::from_fn(n, |i, _| {
            let s: f64 = StandardNormal.sample(&mut rng);
            if support.contains(&i) { s } else { 0.0 }
        });
        out.push(solve_restricted(problem, support, &start, &opts.nlp)?);
    }
    Ok(out)
}

/// Solve the restricted problem on every support from seeded random starts
/// and collect deduplicated, M-certified candidates.
pub fn brute_force_solve(problem: &Problem, opts: &OracleOptions) -> Result<OracleResult> {
    let supports = enumerate_supports(problem.n(), problem.kappa(), opts.support_cap)?;
    let tols = &opts.tolerances;
    let solved: Vec<Result<Vec<NlpResult>>> = supports
        .par_iter()
        .enumerate()
        .map(|(i, s)| solve_support(problem, s, i, opts))
        .collect();

    let mut candidates: Vec<Candidate> = Vec::new();
    let mut failures = Vec::new();
    for (support, results) in supports.iter().zip(solved) {
        let results = results?;
        if !results.iter().any(NlpResult::converged) {
            let r = results
                .iter()
                .min_by(|a, b| a.kkt_residual.max(a.violation).total_cmp(&b.kkt_residual.max(b.violation)))
                .expect("at least one start");
            failures.push(SupportFailure {
                support: support.clone(),
                status: r.status,
                kkt_residual: r.kkt_residual,
                violation: r.violation,
            });
            continue;
        }
        for r in results.into_iter().filter(NlpResult::converged) {
            let x = r.z.map(|v| if v.abs() <= tols.zero_tol { 0.0 } else { v });
            if candidates.iter().any(|c| (&c.x - &x).amax() <= opts.dedup_tol) {
                continue;
            }
            let feasible = is_feasible_original(problem, &x, tols)?;
            let (m_residual, m_stationary) = if feasible {
                let cert = certify_m_stationary(problem, &x, tols)?;
                (cert.residual, cert.is_stationary())
            } else {
                (f64::INFINITY, false)
            };
            candidates.push(Candidate {
                support: support.clone(),
                f: problem.objective(&x)?,
                x,
                m_residual,
                m_stationary,
                feasible,
                status: r.status,
            });
        }
    }
    let best = candidates
        .iter()
        .filter(|c| c.feasible)
        .min_by(|a, b| a.f.total_cmp(&b.f));
    Ok(OracleResult {
        best_x: best.map(|c| c.x.clone()),
        best_f: best.map(|c| c.f),
        enumerated_supports: supports.len(),
        candidates,
        failures,
        seed: opts.seed,
    })
}

/// Deduplicated M-stationary oracle candidates in the closed ball of the
/// given radius around `center`.
pub fn m_points_in_ball(problem: &Problem, center: &DVector<f64>, radius: f64, opts: &OracleOptions) -> Result<Vec<DVector<f64>>> {
    if center.len() != problem.n() {
        return Err(Error::Dimension { what: "center", expected: problem.n(), got: center.len() });
    }
    Ok(brute_force_solve(problem, opts)?.m_points_in_ball(center, radius))
}
