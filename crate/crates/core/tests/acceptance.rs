mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use cardopt::oracle::{brute_force_solve, OracleOptions};
use cardopt::reformulation::{complete_y, index_sets};
use cardopt::secondorder::{critical_cone_member, linearization_cone_member, x_critical_cone_member};
use cardopt::stationarity::MultiplierSet;
use cardopt::{
    certify_m_stationary, certify_s_stationary, check_cc_licq, check_cc_mfcq, check_cc_sosc, check_derivatives,
    critical_cone_branches, multiplier_set_vertices, solve_path, ConeMode, Error, MultiplierKind, MultiplierMode,
    Multipliers, NlpOptions, PathOptions, PathStart, PrimalPair, Problem, SecondOrderOptions, StationarityKind,
    Tolerances, VerdictStatus,
};
use common::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn tols() -> Tolerances {
    Tolerances::default()
}

fn ok<T>(r: cardopt::Result<T>, what: &str) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{what}: {e}"))
}

fn disk_example() -> Outcome {
    let p = cardopt::builtin("disk2d", &Default::default()).unwrap();
    let pair = PrimalPair::new(v(&[0.0, 0.0]), v(&[1.0, 0.0]));
    let t = tols();
    let licq = ok(check_cc_licq(&p, &pair.x, &t), "licq")?;
    ensure!(licq.holds, "CC-LICQ does not hold");
    let cert = ok(certify_s_stationary(&p, &pair, &t), "certify")?;
    ensure!(cert.kind == StationarityKind::S, "kind {:?}", cert.kind);
    ensure!(cert.residual <= 1e-10, "residual {:e}", cert.residual);
    let m = cert.multipliers.unwrap();
    ensure!(m.lambda.amax() <= 1e-10 && m.gamma.amax() <= 1e-10, "multipliers {m:?}");
    let member = ok(linearization_cone_member(&p, &pair, &v(&[0.0, 0.0]), &v(&[0.0, 1.0]), &t), "cone")?;
    ensure!(member, "d = ((0,0),(0,1)) rejected from the linearisation cone");
    let verdict = ok(check_cc_sosc(&p, &pair, MultiplierMode::Exists, &Default::default()), "sosc")?;
    ensure!(verdict.status == VerdictStatus::Certified, "verdict {:?}", verdict.status);
    Ok(format!("residual {:.1e}", cert.residual))
}

fn dist3d_example() -> Outcome {
    let p = cardopt::builtin("dist3d", &Default::default()).unwrap();
    let r = ok(brute_force_solve(&p, &OracleOptions::default()), "oracle")?;
    let expected = [(v(&[0.0, 0.0, 2.0]), 1.0), (v(&[0.0, 1.0, 0.0]), 4.0), (v(&[0.0, 0.0, 0.0]), 5.0)];
    let m_points: Vec<_> = r.candidates.iter().filter(|c| c.m_stationary).collect();
    ensure!(m_points.len() == 3, "{} M-stationary candidates", m_points.len());
    for (x, f) in &expected {
        let hit = m_points.iter().find(|c| (&c.x - x).amax() <= 1e-5);
        ensure!(hit.is_some_and(|c| (c.f - f).abs() <= 1e-6), "missing M-point {x:?} with f = {f}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let locals = [v(&[0.0, 0.0, 2.0]), v(&[0.0, 1.0, 0.0])];
    let mut ends = [0usize; 2];
    for k in 0..20 {
        let start = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..=3.0));
        let path = ok(
            solve_path(&p, &PathStart::X(start.clone()), &PathOptions::default(), &NlpOptions::default()),
            &format!("path from {start:?}"),
        )?;
        let x = &path.final_point.x;
        ensure!(x.amax() > 1e-4, "start {k} {:?} ended at the origin", start.as_slice());
        let hit = locals.iter().position(|l| (x - l).amax() <= 1e-4);
        ensure!(hit.is_some(), "start {k} {:?} ended at {:?}", start.as_slice(), x.as_slice());
        ends[hit.unwrap()] += 1;
    }
    Ok(format!("paths ended at (0,0,2) x{}, (0,1,0) x{}", ends[0], ends[1]))
}

/// Feasible reformulation points `(x, y*)` with `x` in the ball of radius
/// `radius` around `x*`; `x` may only move where `y*` vanishes so that the
/// pair stays close to `(x*, y*)`.
fn sample_neighbour(p: &Problem, pair: &PrimalPair, radius: f64, rng: &mut ChaCha8Rng) -> Option<DVector<f64>> {
    let n = p.n();
    let free: Vec<usize> = (0..n).filter(|&i| pair.y[i] == 0.0).collect();
    if free.is_empty() {
        return None;
    }
    let (_, jh) = p.jacobians(&pair.x).ok()?;
    for _ in 0..1000 {
        let mut d = DVector::zeros(n);
        for &i in &free {
            if rng.gen_bool(0.8) {
                d[i] = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        if jh.nrows() > 0 {
            let basis = cardopt::linalg::null_space(&jh, n, 1e-12);
            let coef = basis.transpose() * &d;
            d = &basis * coef;
        }
        if d.norm() == 0.0 {
            continue;
        }
        let k = free.len() as f64;
        let r = radius * rng.gen::<f64>().powf(1.0 / k);
        let scale = r / d.norm();
        let x = &pair.x + d * scale;
        if (&x - &pair.x).amax() < 1e-9 {
            continue;
        }
        let (g, h) = p.constraints(&x).ok()?;
        if g.iter().all(|&gi| gi <= 0.0) && h.iter().all(|hi| hi.abs() <= 1e-12) {
            return Some(x);
        }
    }
    None
}

fn strict_minimum() -> Outcome {
    let mut certified = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for pt in builtin_points() {
        let verdict = match check_cc_sosc(&pt.problem, &pt.pair, MultiplierMode::Exists, &Default::default()) {
            Ok(v) => v,
            Err(Error::NotStationary(_)) => continue,
            Err(e) => return Err(format!("{}: {e}", pt.label)),
        };
        if verdict.status != VerdictStatus::Certified {
            continue;
        }
        certified += 1;
        let f_star = pt.problem.objective(&pt.pair.x).unwrap();
        let mut drawn = 0;
        for _ in 0..2000 {
            // with y* = 1 off the support the only nearby feasible x is x*
            let Some(x) = sample_neighbour(&pt.problem, &pt.pair, 1e-3, &mut rng) else { break };
            drawn += 1;
            let f = pt.problem.objective(&x).unwrap();
            ensure!(f > f_star, "{}: f({:?}) = {f} <= {f_star}", pt.label, x.as_slice());
        }
        ensure!(drawn == 2000 || drawn == 0, "{}: only {drawn} feasible samples", pt.label);
    }
    ensure!(certified > 0, "no certified point");
    Ok(format!("{certified} certified points sampled"))
}

fn m_uniqueness() -> Outcome {
    let t = tols();
    let mut checked = 0;
    let mut crowded = Vec::new();
    let mut nearest = f64::INFINITY;
    for (k, p) in convex_instances().iter().enumerate() {
        let r = ok(brute_force_solve(p, &OracleOptions::default()), "oracle")?;
        for c in r.candidates.iter().filter(|c| c.m_stationary) {
            if !ok(check_cc_licq(p, &c.x, &t), "licq")?.holds {
                continue;
            }
            let pair = PrimalPair::new(c.x.clone(), complete_y(p, &c.x, &t).unwrap());
            let verdict = ok(check_cc_sosc(p, &pair, MultiplierMode::Forall, &Default::default()), "sosc")?;
            if verdict.status != VerdictStatus::Certified {
                continue;
            }
            checked += 1;
            let near = r.m_points_in_ball(&c.x, 1e-2);
            if near.len() != 1 {
                for other in near.iter().filter(|o| **o != c.x) {
                    nearest = nearest.min((other - &c.x).norm());
                }
                crowded.push(format!("instance {k} support {:?}", c.support));
            }
        }
    }
    ensure!(checked > 0, "no point qualified");
    ensure!(
        crowded.is_empty(),
        "{} of {checked} certified M-points have another M-point within 1e-2 (closest at {nearest:.2e}): {}",
        crowded.len(),
        crowded.join(", ")
    );
    Ok(format!("{checked} certified M-points isolated"))
}

struct PathRun {
    objective: Option<f64>,
    best_f: f64,
    failure: Option<String>,
}

fn convex_runs() -> std::result::Result<Vec<PathRun>, String> {
    let t = tols();
    let mut runs = Vec::new();
    for (k, p) in convex_instances().iter().enumerate() {
        let oracle = ok(brute_force_solve(p, &OracleOptions::default()), "oracle")?;
        let mut rng = ChaCha8Rng::seed_from_u64(500 + k as u64);
        let start = gaussian(&mut rng, p.n());
        let run = match solve_path(p, &PathStart::X(start), &PathOptions::default(), &NlpOptions::default()) {
            Ok(path) => {
                let cert = ok(certify_s_stationary(p, &path.final_point, &t), "certify")?;
                let mfcq = ok(check_cc_mfcq(p, &path.final_point.x, &t), "mfcq")?;
                let failure = if cert.kind != StationarityKind::S || cert.residual > 1e-6 {
                    Some(format!("instance {k}: kind {:?}, residual {:e}", cert.kind, cert.residual))
                } else if !mfcq.holds {
                    Some(format!("instance {k}: CC-MFCQ fails"))
                } else {
                    None
                };
                PathRun { objective: Some(path.final_objective), best_f: oracle.best_f.unwrap(), failure }
            }
            Err(e) => PathRun { objective: None, best_f: oracle.best_f.unwrap(), failure: Some(format!("instance {k}: {e}")) },
        };
        runs.push(run);
    }
    Ok(runs)
}

fn scholtes_convergence(runs: &[PathRun]) -> Outcome {
    let converged: Vec<_> = runs.iter().filter(|r| r.objective.is_some()).collect();
    for r in &converged {
        if let Some(f) = &r.failure {
            return Err(f.clone());
        }
    }
    Ok(format!("{}/{} paths converged, all S-stationary with CC-MFCQ", converged.len(), runs.len()))
}

fn oracle_equivalence(runs: &[PathRun]) -> Outcome {
    let mut matched = 0;
    for (k, r) in runs.iter().enumerate() {
        if let Some(f) = r.objective {
            ensure!(f >= r.best_f - 1e-6, "instance {k}: path objective {f} below oracle {}", r.best_f);
            if (f - r.best_f).abs() <= 1e-5 {
                matched += 1;
            }
        }
    }
    ensure!(matched >= 18, "only {matched}/20 matched the oracle");
    Ok(format!("{matched}/20 matched the oracle"))
}

fn invariant_suites() -> Outcome {
    let t = tols();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for p in builtin_problems() {
        for _ in 0..5 {
            let x = gaussian(&mut rng, p.n());
            let report = ok(check_derivatives(&p, &x, 1e-6, 1e-5), "derivatives")?;
            ensure!(report.passed, "{}: {:?}", p.name(), report.blocks);
        }
    }

    let opts = SecondOrderOptions::default();
    let mut directions = 0;
    for pt in builtin_points() {
        let (p, pair) = (&pt.problem, &pt.pair);
        let m = ok(certify_m_stationary(p, &pair.x, &t), "certify")?;
        let xb = ok(critical_cone_branches(p, &pair.x, None, m.multipliers.as_ref().unwrap(), ConeMode::XUnion, &opts), "x branches")?;
        let s = ok(certify_s_stationary(p, pair, &t), "certify")?;
        let pb = match (&s.kind, &s.multipliers) {
            (StationarityKind::S, Some(mult)) => {
                Some(ok(critical_cone_branches(p, &pair.x, Some(&pair.y), mult, ConeMode::Pair, &opts), "pair branches")?)
            }
            _ => None,
        };
        for _ in 0..10_000 {
            let d = sample_direction(&mut rng, p.n(), &xb);
            let direct = ok(x_critical_cone_member(p, &pair.x, &d, &t), "member")?;
            let union = xb.iter().any(|b| b.contains(&d, t.act_tol));
            ensure!(direct == union, "{}: x-union disagreement at {:?}", pt.label, d.as_slice());
            if let Some(pb) = &pb {
                let d = sample_direction(&mut rng, p.n(), pb);
                let direct = ok(critical_cone_member(p, pair, &d, &t), "member")?;
                let union = pb.iter().any(|b| b.contains(&d, t.act_tol));
                ensure!(direct == union, "{}: pair disagreement at {:?}", pt.label, d.as_slice());
            }
            directions += 1;
        }
    }

    let problems = builtin_problems();
    for k in 0..1000 {
        let p = &problems[k % problems.len()];
        let pair = random_feasible_pair(p, &mut rng);
        ensure!(cardopt::reformulation::is_feasible_reformulation(p, &pair, &t).unwrap(), "sampler produced an infeasible pair");
        let s = ok(index_sets(p, &pair, &t), "index sets")?;
        let mut seen = vec![0; p.n()];
        for i in s.i_pm0.iter().chain(&s.i_00).chain(&s.i_0plus).chain(&s.i_01) {
            seen[*i] += 1;
        }
        ensure!(seen.iter().all(|&c| c == 1), "not a partition: {s:?}");
        let mut zero: Vec<usize> = s.i_00.iter().chain(&s.i_0plus).chain(&s.i_01).copied().collect();
        zero.sort_unstable();
        ensure!(zero == s.i_0, "I_0 mismatch: {s:?}");
    }
    Ok(format!("{directions} directions, 1000 pairs"))
}

fn same_multipliers(a: &Multipliers, b: &Multipliers) -> bool {
    (&a.lambda - &b.lambda).amax() <= 1e-8 && (&a.mu - &b.mu).amax() <= 1e-8 && (&a.gamma - &b.gamma).amax() <= 1e-8
}

fn single_vertex(set: &MultiplierSet) -> Option<&Multipliers> {
    (set.vertices.len() == 1 && !set.unbounded).then(|| &set.vertices[0])
}

fn multiplier_uniqueness() -> Outcome {
    let t = tols();
    let mut checked = 0;
    let points = builtin_points();
    for pt in &points {
        let (p, pair) = (&pt.problem, &pt.pair);
        let s = ok(certify_s_stationary(p, pair, &t), "certify")?;
        if s.kind != StationarityKind::S || !ok(check_cc_licq(p, &pair.x, &t), "licq")?.holds {
            continue;
        }
        checked += 1;
        let strong = ok(multiplier_set_vertices(p, &pair.x, &MultiplierKind::Strong(pair.y.clone()), &t, 10_000), "vertices")?;
        let m_set = ok(multiplier_set_vertices(p, &pair.x, &MultiplierKind::Mordukhovich, &t, 10_000), "vertices")?;
        let (Some(a), Some(b)) = (single_vertex(&strong), single_vertex(&m_set)) else {
            return Err(format!("{}: {} strong, {} M vertices", pt.label, strong.vertices.len(), m_set.vertices.len()));
        };
        ensure!(same_multipliers(a, b), "{}: strong and M multipliers differ", pt.label);
        let first = ok(certify_m_stationary(p, &pair.x, &t), "certify")?;
        for other in points.iter().filter(|o| o.problem.name() == p.name() && o.pair.x == pair.x && o.pair.y != pair.y) {
            let again = ok(certify_m_stationary(&other.problem, &other.pair.x, &t), "certify")?;
            ensure!(again.kind == first.kind && again.residual == first.residual, "{}: M certificate depends on y", pt.label);
            if let Ok(set) = multiplier_set_vertices(p, &pair.x, &MultiplierKind::Strong(other.pair.y.clone()), &t, 10_000) {
                if let Some(c) = single_vertex(&set) {
                    ensure!(same_multipliers(a, c), "{}: multiplier depends on y", pt.label);
                }
            }
        }
    }
    ensure!(checked > 0, "no S-stationary point with CC-LICQ");
    Ok(format!("{checked} points with a unique multiplier"))
}

fn report(id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(_), Some(l)) if elapsed > l => Err(format!("took {elapsed:.2?}, limit {l:?}")),
        (o, _) => o,
    };
    match &outcome {
        Ok(msg) => println!("PASS  criterion {id}: {name} ({msg}) [{elapsed:.2?}]"),
        Err(msg) => println!("FAIL  criterion {id}: {name}: {msg} [{elapsed:.2?}]"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, "disk2d reference point", Some(Duration::from_secs(1)), disk_example);
    all &= report(2, "dist3d oracle and paths", Some(Duration::from_secs(30)), dist3d_example);
    all &= report(3, "strict local minimum under CC-SOSC", None, strict_minimum);
    all &= report(4, "isolated M-stationary points", Some(Duration::from_secs(60)), m_uniqueness);
    let start = Instant::now();
    let runs = convex_runs();
    let runs_time = start.elapsed();
    match runs {
        Ok(runs) => {
            println!("      20 convex paths solved in {runs_time:.2?}");
            all &= report(5, "regularization limits are S-stationary", None, || scholtes_convergence(&runs));
            all &= report(6, "path objective matches oracle", None, || oracle_equivalence(&runs));
        }
        Err(e) => {
            println!("FAIL  criterion 5: regularization limits are S-stationary: {e}");
            println!("FAIL  criterion 6: path objective matches oracle: {e}");
            all = false;
        }
    }
    all &= report(7, "derivative, cone and index-set invariants", None, invariant_suites);
    all &= report(8, "multiplier uniqueness under CC-LICQ", None, multiplier_uniqueness);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
