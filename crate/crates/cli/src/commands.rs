//! Subcommand implementations. Each returns the JSON report together with
//! the exit code it implies.

use cardopt::reformulation::complete_y;
use cardopt::{
    brute_force_solve, certify_m_stationary, certify_s_stationary, check_cc_sosc, check_derivatives, cq_report, solve_path,
    Error, MultiplierMode, PathStart, PrimalPair, Problem, Result,
};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use crate::config::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INPUT: u8 = 1;
pub const EXIT_RESOURCE: u8 = 2;
pub const EXIT_INFEASIBLE: u8 = 3;
pub const EXIT_PRECONDITION: u8 = 4;

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::EnumerationLimit { .. } | Error::BranchExplosion { .. } | Error::PathStalled { .. } | Error::SubproblemFailure(_) => {
            EXIT_RESOURCE
        }
        Error::InfeasibleInput(_) => EXIT_INFEASIBLE,
        Error::NotStationary(_) => EXIT_PRECONDITION,
        _ => EXIT_INPUT,
    }
}

pub struct Report {
    pub body: Value,
    pub code: u8,
}

fn header(command: &str, problem: &Problem, seed: u64) -> serde_json::Map<String, Value> {
    let mut m = serde_json::Map::new();
    m.insert("command".into(), json!(command));
    m.insert("problem".into(), json!({ "name": problem.name(), "n": problem.n(), "kappa": problem.kappa() }));
    m.insert("seed".into(), json!(seed));
    m
}

fn to_value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports always serialize")
}

fn check_len(what: &'static str, v: &DVector<f64>, n: usize) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension { what, expected: n, got: v.len() });
    }
    Ok(())
}

pub fn solve(cfg: &RunConfig, start: Option<DVector<f64>>) -> Result<Report> {
    let problem = cfg.load_problem()?;
    let n = problem.n();
    let start = start.unwrap_or_else(|| DVector::zeros(n));
    check_len("start", &start, n)?;
    let path = solve_path(&problem, &PathStart::X(start.clone()), &cfg.path_options(), &cfg.nlp)?;
    let certified = path.final_certificate.is_stationary() || path.m_certificate.is_stationary();
    let mut body = header("solve", &problem, cfg.seed());
    body.insert("start".into(), json!(start.as_slice()));
    body.insert("path".into(), to_value(&path));
    Ok(Report { body: Value::Object(body), code: if certified { EXIT_OK } else { EXIT_RESOURCE } })
}

/// Use `y` if given, otherwise the maximal completion of `x`.
fn resolve_pair(problem: &Problem, cfg: &RunConfig, x: DVector<f64>, y: Option<DVector<f64>>) -> Result<(PrimalPair, bool)> {
    check_len("x", &x, problem.n())?;
    match y {
        Some(y) => {
            check_len("y", &y, problem.n())?;
            Ok((PrimalPair::new(x, y), false))
        }
        None => {
            let y = complete_y(problem, &x, &cfg.tolerances)?;
            Ok((PrimalPair::new(x, y), true))
        }
    }
}

pub fn certify(cfg: &RunConfig, x: DVector<f64>, y: Option<DVector<f64>>) -> Result<Report> {
    let problem = cfg.load_problem()?;
    let tols = &cfg.tolerances;
    let (pair, completed) = resolve_pair(&problem, cfg, x, y)?;
    let m = certify_m_stationary(&problem, &pair.x, tols)?;
    let s = certify_s_stationary(&problem, &pair, tols)?;
    let cq = cq_report(&problem, &pair.x, tols)?;
    let mut body = header("certify", &problem, cfg.seed());
    body.insert("x".into(), json!(pair.x.as_slice()));
    body.insert("y".into(), json!(pair.y.as_slice()));
    body.insert("y_completed".into(), json!(completed));
    body.insert("m_certificate".into(), to_value(&m));
    body.insert("s_certificate".into(), to_value(&s));
    body.insert("cq_report".into(), to_value(&cq));
    Ok(Report { body: Value::Object(body), code: EXIT_OK })
}

pub fn second_order(cfg: &RunConfig, x: DVector<f64>, y: Option<DVector<f64>>, mode: MultiplierMode) -> Result<Report> {
    let problem = cfg.load_problem()?;
    let (pair, completed) = resolve_pair(&problem, cfg, x, y)?;
    let opts = cfg.second_order_options();
    let verdict = check_cc_sosc(&problem, &pair, mode, &opts)?;
    let mut body = header("second-order", &problem, opts.seed);
    body.insert("x".into(), json!(pair.x.as_slice()));
    body.insert("y".into(), json!(pair.y.as_slice()));
    body.insert("y_completed".into(), json!(completed));
    body.insert("mode".into(), to_value(&mode));
    body.insert("verdict".into(), to_value(&verdict));
    Ok(Report { body: Value::Object(body), code: EXIT_OK })
}

pub fn oracle(cfg: &RunConfig) -> Result<Report> {
    let problem = cfg.load_problem()?;
    let result = brute_force_solve(&problem, &cfg.oracle_options())?;
    let m_stationary = result.candidates.iter().filter(|c| c.m_stationary).count();
    let mut body = header("oracle", &problem, cfg.seed());
    body.insert("m_stationary_count".into(), json!(m_stationary));
    body.insert("oracle".into(), to_value(&result));
    Ok(Report { body: Value::Object(body), code: EXIT_OK })
}

pub fn derivatives(cfg: &RunConfig, x: Option<DVector<f64>>) -> Result<Report> {
    let problem = cfg.load_problem()?;
    let n = problem.n();
    let x = x.unwrap_or_else(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
        DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))
    });
    check_len("x", &x, n)?;
    let report = check_derivatives(&problem, &x, cfg.derivatives.step, cfg.derivatives.tol)?;
    let mut body = header("check-derivatives", &problem, cfg.seed());
    body.insert("x".into(), json!(x.as_slice()));
    body.insert("report".into(), to_value(&report));
    let code = if report.passed { EXIT_OK } else { EXIT_PRECONDITION };
    Ok(Report { body: Value::Object(body), code })
}
