//! Dense symmetric helpers built on nalgebra.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Symmetrizes and applies `f` to the eigenvalues: `V f(Λ) Vᵀ`.
pub fn sym_fn(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let v = &eig.eigenvectors;
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    v * DMatrix::from_diagonal(&d) * v.transpose()
}

/// Sorted ascending eigenvalues of the symmetric part.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Sorted eigenpairs of the symmetric part (ascending).
pub fn sym_eigen_sorted(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Inverse square root of an SPD matrix; fails when an eigenvalue is not
/// positive relative to the largest.
pub fn spd_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ev = sym_eigenvalues(a);
    let top = ev.last().copied().unwrap_or(0.0);
    if ev.first().is_none_or(|&l| l <= 1e-14 * top.abs()) {
        return Err(Error::Numeric("matrix is not positive definite".into()));
    }
    Ok(sym_fn(a, |l| 1.0 / l.sqrt()))
}

pub fn spd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(a, |l| l.max(0.0).sqrt())
}

/// Generalized symmetric eigenproblem `A x = λ B x` with SPD `B`.
/// Returns ascending eigenvalues and B-orthonormal eigenvectors.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let bis = spd_inv_sqrt(b)?;
    let c = &bis * a * &bis;
    let (vals, vecs) = sym_eigen_sorted(&c);
    Ok((vals, bis * vecs))
}

/// Largest singular value.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    a.singular_values().iter().copied().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_sqrt_roundtrip() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let r = spd_inv_sqrt(&a).unwrap();
        let id = &r * &a * &r;
        assert!((id - DMatrix::identity(3, 3)).abs().max() < 1e-12);
    }

    #[test]
    fn generalized_is_b_orthonormal() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let (l, v) = generalized_eigen(&a, &b).unwrap();
        let g = v.transpose() * &b * &v;
        assert!((g - DMatrix::identity(2, 2)).abs().max() < 1e-12);
        for k in 0..2 {
            let x = v.column(k);
            let r = &a * x - &b * x * l[k];
            assert!(r.norm() < 1e-12);
        }
    }
}
