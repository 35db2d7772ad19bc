//! Fixed instances shared by the benchmarks.

use cardopt::{builtin, BuiltinParams, PrimalPair, Problem};
use nalgebra::DVector;

pub fn sparse_lsq(n: usize, kappa: usize) -> Problem {
    let params = BuiltinParams { n: Some(n), kappa: Some(kappa), seed: Some(1), ..Default::default() };
    builtin("sparse_lsq", &params).expect("valid sparse_lsq instance")
}

pub fn dist3d() -> Problem {
    builtin("dist3d", &BuiltinParams::default()).expect("dist3d exists")
}

/// The global minimiser of `dist3d` with its maximal completion.
pub fn dist3d_minimiser() -> PrimalPair {
    PrimalPair::new(DVector::from_vec(vec![0.0, 0.0, 2.0]), DVector::from_vec(vec![1.0, 1.0, 0.0]))
}
