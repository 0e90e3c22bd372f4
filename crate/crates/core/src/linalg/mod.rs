//! Sparse and dense linear algebra used by the solvers.

pub mod banded;
pub mod dense;
pub mod pcg;
pub mod sparse;
pub mod tridiag;

pub use banded::BandedCholesky;
pub use pcg::{pcg, Jacobi, LineJacobi, Preconditioner, SolveStats};
pub use sparse::CsrMatrix;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
