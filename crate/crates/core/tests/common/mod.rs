#![allow(dead_code)]

use cardopt::linalg::null_space;
use cardopt::oracle::{brute_force_solve, OracleOptions};
use cardopt::reformulation::{complete_y, zero_indices};
use cardopt::{builtin, BuiltinParams, ConeBranch, PrimalPair, Problem, Tolerances};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const BUILTINS: [&str; 4] = ["disk2d", "dist3d", "sparse_lsq", "portfolio"];

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

pub fn builtin_problems() -> Vec<Problem> {
    BUILTINS
        .iter()
        .map(|name| builtin(name, &BuiltinParams::default()).unwrap())
        .collect()
}

/// The 20 seeded convex `sparse_lsq` instances with `n <= 8`, `kappa <= 3`.
pub fn convex_instances() -> Vec<Problem> {
    (0..20u64)
        .map(|s| {
            let params = BuiltinParams {
                n: Some(5 + (s % 4) as usize),
                kappa: Some(1 + (s % 3) as usize),
                seed: Some(100 + s),
                ..Default::default()
            };
            builtin("sparse_lsq", &params).unwrap()
        })
        .collect()
}

/// Feasible completions of `x`: the maximal one plus the first and last
/// minimal ones over the zero set.
pub fn completions(problem: &Problem, x: &DVector<f64>, tols: &Tolerances) -> Vec<DVector<f64>> {
    let n = problem.n();
    let need = n - problem.kappa();
    let zeros = zero_indices(x, tols);
    let mut out = vec![complete_y(problem, x, tols).unwrap()];
    for window in [&zeros[..need], &zeros[zeros.len() - need..]] {
        let mut y = DVector::zeros(n);
        for &i in window {
            y[i] = 1.0;
        }
        if !out.contains(&y) {
            out.push(y);
        }
    }
    out
}

pub struct Point {
    pub label: String,
    pub problem: Problem,
    pub pair: PrimalPair,
}

/// Every M-stationary oracle candidate of every built-in, paired with each
/// of its completions.
pub fn builtin_points() -> Vec<Point> {
    let tols = Tolerances::default();
    let mut out = Vec::new();
    for problem in builtin_problems() {
        let r = brute_force_solve(&problem, &OracleOptions::default()).unwrap();
        for c in r.candidates.iter().filter(|c| c.m_stationary) {
            for y in completions(&problem, &c.x, &tols) {
                out.push(Point {
                    label: format!("{} x={:?} y={:?}", problem.name(), c.x.as_slice(), y.as_slice()),
                    problem: problem.clone(),
                    pair: PrimalPair::new(c.x.clone(), y),
                });
            }
        }
    }
    out
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Directions mixing random sparse vectors with points drawn from the
/// linear span of a random branch, so both members and non-members occur.
pub fn sample_direction(rng: &mut ChaCha8Rng, n: usize, branches: &[ConeBranch]) -> DVector<f64> {
    let mut d = gaussian(rng, n);
    if !branches.is_empty() && rng.gen_bool(0.5) {
        let b = &branches[rng.gen_range(0..branches.len())];
        if b.eq_rows.nrows() > 0 {
            let basis = null_space(&b.eq_rows, n, 1e-10);
            d = &basis * gaussian(rng, basis.ncols());
        }
    }
    for i in 0..n {
        if rng.gen_bool(0.3) {
            d[i] = 0.0;
        }
    }
    d
}

/// A random pair feasible for the reformulation of the given built-in.
pub fn random_feasible_pair(problem: &Problem, rng: &mut ChaCha8Rng) -> PrimalPair {
    let n = problem.n();
    let kappa = problem.kappa();
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, rng.gen_range(0..=i));
    }
    let size = rng.gen_range(0..=kappa);
    let support = &idx[..size];
    let mut x = DVector::zeros(n);
    for &i in support {
        x[i] = rng.sample::<f64, _>(StandardNormal);
    }
    match problem.name() {
        "disk2d" => {
            let r: f64 = rng.gen();
            if x.norm() > 0.0 {
                x *= r / x.norm();
            }
        }
        "portfolio" => {
            if support.is_empty() {
                x[idx[0]] = 1.0;
            } else {
                x = x.abs();
                x /= x.sum();
            }
        }
        _ => {}
    }
    let zero_set: Vec<usize> = (0..n).filter(|&i| x[i] == 0.0).collect();
    let mut y = DVector::zeros(n);
    for &i in &zero_set {
        y[i] = match rng.gen_range(0..3) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen(),
        };
    }
    for &i in &zero_set {
        if y.sum() >= (n - kappa) as f64 {
            break;
        }
        y[i] = 1.0;
    }
    PrimalPair::new(x, y)
}
