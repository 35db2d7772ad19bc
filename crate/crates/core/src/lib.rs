//! Cardinality-constrained nonlinear programming via a continuous
//! complementarity-type reformulation.
//!
//! The crate provides problem models, index-set classification, first and
//! second order certification, a Scholtes-type regularization path and a
//! brute-force support enumeration oracle.

pub mod error;
pub mod linalg;
pub mod model;
pub mod nlp;
pub mod oracle;
pub mod problems;
pub mod reformulation;
pub mod scholtes;
mod serde_util;
pub mod secondorder;
pub mod stationarity;

pub use error::{Error, Result};
pub use model::{check_derivatives, DerivativeReport, EvalBundle, Problem, ProblemFunctions, QuadraticData};
pub use problems::{builtin, BuiltinParams};
pub use reformulation::{complete_y, index_sets, IndexSets, PrimalPair, Tolerances};
pub use stationarity::{
    certify_m_stationary, certify_s_stationary, check_cc_licq, check_cc_mfcq, cq_report, multiplier_set_vertices,
    Multipliers, MultiplierKind, StationarityCertificate, StationarityKind, Uniqueness,
};
pub use secondorder::{
    check_cc_sosc, check_sonc, critical_cone_branches, lagrangian_hessian, ConeBranch, ConeMode, MultiplierMode,
    SecondOrderOptions, SecondOrderVerdict, VerdictStatus,
};
pub use nlp::{solve_nlp, solve_restricted, NlpOptions, NlpResult, NlpSpec, NlpStatus};
pub use scholtes::{build_nlpt, solve_path, PathOptions, PathStart, RegularizationPath};
pub use oracle::{brute_force_solve, enumerate_supports, m_points_in_ball, Candidate, OracleOptions, OracleResult};
