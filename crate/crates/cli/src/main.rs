mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use cardopt::{Error, MultiplierMode, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use commands::{exit_code, Report};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "cardopt", version, about = "Solve and certify cardinality-constrained nonlinear programs")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Built-in problem name (dist3d, disk2d, sparse_lsq, portfolio).
    #[arg(long, global = true)]
    builtin: Option<String>,
    /// Problem file in JSON form.
    #[arg(long, global = true)]
    problem: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    kappa: Option<usize>,
    /// Run seed; also seeds generated problems.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    rows: Option<usize>,
    #[arg(long, global = true)]
    noise: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Follow the regularization path from a starting point.
    Solve {
        /// Comma-separated start vector (default: zero).
        #[arg(long, value_parser = parse_vector)]
        start: Option<DVector<f64>>,
    },
    /// Certify M- and S-stationarity and constraint qualifications.
    Certify(PointArgs),
    /// Check the second-order sufficient condition.
    SecondOrder {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, value_enum, default_value = "exists")]
        mode: Mode,
    },
    /// Enumerate supports and solve each restricted problem.
    Oracle,
    /// Compare analytic derivatives with finite differences.
    CheckDerivatives {
        /// Evaluation point (default: seeded Gaussian).
        #[arg(long, value_parser = parse_vector)]
        x: Option<DVector<f64>>,
    },
}

#[derive(Args)]
struct PointArgs {
    #[arg(long, value_parser = parse_vector)]
    x: DVector<f64>,
    /// Complementarity variable (default: maximal completion of x).
    #[arg(long, value_parser = parse_vector)]
    y: Option<DVector<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exists,
    Forall,
}

fn parse_vector(s: &str) -> std::result::Result<DVector<f64>, String> {
    let vals = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(DVector::from_vec(vals))
}

fn build_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let p = &mut cfg.problem;
    if g.builtin.is_some() || g.problem.is_some() {
        p.builtin = g.builtin.clone();
        p.file = g.problem.clone();
    }
    p.n = g.n.or(p.n);
    p.kappa = g.kappa.or(p.kappa);
    p.rows = g.rows.or(p.rows);
    p.noise = g.noise.or(p.noise);
    p.rho = g.rho.or(p.rho);
    cfg.seed = g.seed.or(cfg.seed);
    cfg.out = g.out.clone().or(cfg.out);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(Report, Option<PathBuf>)> {
    let cfg = build_config(&cli.global)?;
    let report = match cli.command {
        Command::Solve { start } => commands::solve(&cfg, start)?,
        Command::Certify(pt) => commands::certify(&cfg, pt.x, pt.y)?,
        Command::SecondOrder { point, mode } => {
            let mode = match mode {
                Mode::Exists => MultiplierMode::Exists,
                Mode::Forall => MultiplierMode::Forall,
            };
            commands::second_order(&cfg, point.x, point.y, mode)?
        }
        Command::Oracle => commands::oracle(&cfg)?,
        Command::CheckDerivatives { x } => commands::derivatives(&cfg, x)?,
    };
    Ok((report, cfg.out))
}

fn emit(report: &Report, out: Option<PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&report.body).map_err(|e| Error::parse("report", e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_INPUT } else { commands::EXIT_OK });
        }
    };
    match run(cli).and_then(|(report, out)| emit(&report, out).map(|_| report.code)) {
        Ok(code) => {
            if code != commands::EXIT_OK {
                eprintln!("cardopt: finished with exit code {code}");
            }
            ExitCode::from(code)
        }
        Err(err) => {
            eprintln!("cardopt: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
