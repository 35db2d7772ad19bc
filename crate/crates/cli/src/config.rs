//! Run configuration: an optional TOML file merged with command-line flags.

use std::path::{Path, PathBuf};

use cardopt::problems::load;
use cardopt::{builtin, BuiltinParams, Error, NlpOptions, OracleOptions, PathOptions, Problem, Result, SecondOrderOptions, Tolerances};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSource {
    pub builtin: Option<String>,
    pub file: Option<PathBuf>,
    pub n: Option<usize>,
    pub kappa: Option<usize>,
    /// Generator seed; falls back to the run seed.
    pub seed: Option<u64>,
    pub rows: Option<usize>,
    pub noise: Option<f64>,
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSection {
    pub t0: f64,
    pub sigma: f64,
    pub t_min: f64,
    pub comp_tol: f64,
    pub rounding_tol: f64,
    pub polish: bool,
}

impl Default for PathSection {
    fn default() -> Self {
        let d = PathOptions::default();
        PathSection { t0: d.t0, sigma: d.sigma, t_min: d.t_min, comp_tol: d.comp_tol, rounding_tol: d.rounding_tol, polish: d.polish }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub starts_per_support: usize,
    pub support_cap: u128,
    pub dedup_tol: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        let d = OracleOptions::default();
        OracleSection { starts_per_support: d.starts_per_support, support_cap: d.support_cap, dedup_tol: d.dedup_tol }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecondOrderSection {
    pub samples_per_branch: usize,
    pub branch_cap: u128,
    pub vertex_cap: usize,
}

impl Default for SecondOrderSection {
    fn default() -> Self {
        let d = SecondOrderOptions::default();
        SecondOrderSection { samples_per_branch: d.samples_per_branch, branch_cap: d.branch_cap, vertex_cap: d.vertex_cap }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivativeSection {
    pub step: f64,
    pub tol: f64,
}

impl Default for DerivativeSection {
    fn default() -> Self {
        DerivativeSection { step: 1e-6, tol: 1e-5 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tolerances: Tolerances,
    pub nlp: NlpOptions,
    pub path: PathSection,
    pub oracle: OracleSection,
    pub second_order: SecondOrderSection,
    pub derivatives: DerivativeSection,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::parse("config", e.message().to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn load_problem(&self) -> Result<Problem> {
        let src = &self.problem;
        match (&src.builtin, &src.file) {
            (Some(_), Some(_)) => Err(Error::parse("problem", "give either a built-in name or a problem file, not both")),
            (None, None) => Err(Error::parse("problem", "no problem given; use --builtin or --problem")),
            (None, Some(file)) => {
                if src.n.is_some() || src.kappa.is_some() || src.rows.is_some() || src.noise.is_some() || src.rho.is_some() {
                    return Err(Error::parse("problem", "generator parameters only apply to built-in problems"));
                }
                load(file)
            }
            (Some(name), None) => {
                let params = BuiltinParams {
                    n: src.n,
                    kappa: src.kappa,
                    seed: src.seed.or(self.seed),
                    rows: src.rows,
                    noise: src.noise,
                    rho: src.rho,
                };
                builtin(name, &params)
            }
        }
    }

    pub fn path_options(&self) -> PathOptions {
        let p = &self.path;
        PathOptions {
            t0: p.t0,
            sigma: p.sigma,
            t_min: p.t_min,
            comp_tol: p.comp_tol,
            rounding_tol: p.rounding_tol,
            seed: self.seed(),
            polish: p.polish,
            tolerances: self.tolerances,
        }
    }

    pub fn oracle_options(&self) -> OracleOptions {
        OracleOptions {
            starts_per_support: self.oracle.starts_per_support,
            seed: self.seed(),
            support_cap: self.oracle.support_cap,
            dedup_tol: self.oracle.dedup_tol,
            tolerances: self.tolerances,
            nlp: self.nlp.clone(),
        }
    }

    /// Keeps the library's sampling seed unless a run seed is given.
    pub fn second_order_options(&self) -> SecondOrderOptions {
        SecondOrderOptions {
            tolerances: self.tolerances,
            samples_per_branch: self.second_order.samples_per_branch,
            seed: self.seed.unwrap_or(SecondOrderOptions::default().seed),
            branch_cap: self.second_order.branch_cap,
            vertex_cap: self.second_order.vertex_cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("[path]\nsigmaa = 0.5\n").unwrap_err();
        assert!(err.message().contains("sigmaa"));
        assert!(toml::from_str::<RunConfig>("color = 1\n").is_err());
    }

    #[test]
    fn sections_fill_defaults() {
        let cfg: RunConfig = toml::from_str("seed = 3\n[path]\nsigma = 0.5\n[problem]\nbuiltin = \"dist3d\"\n").unwrap();
        let p = cfg.path_options();
        assert_eq!(p.sigma, 0.5);
        assert_eq!(p.t0, PathOptions::default().t0);
        assert_eq!(p.seed, 3);
        assert_eq!(cfg.load_problem().unwrap().n(), 3);
    }

    #[test]
    fn exactly_one_problem_source() {
        let both = RunConfig {
            problem: ProblemSource { builtin: Some("dist3d".into()), file: Some("p.json".into()), ..Default::default() },
            ..Default::default()
        };
        assert!(matches!(both.load_problem(), Err(Error::Parse { .. })));
        assert!(matches!(RunConfig::default().load_problem(), Err(Error::Parse { .. })));
    }
}
