use super::sparse::CsrMatrix;
use super::tridiag::Tridiagonal;
use super::{axpy, dot};
use crate::{Error, Result};

pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Diagonal scaling.
pub struct Jacobi {
    inv: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Self {
        let inv = a
            .diagonal()
            .into_iter()
            .map(|d| if d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Jacobi { inv }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv) {
            *zi = ri * di;
        }
    }
}

/// Block Jacobi over contiguous lines of `line_len` unknowns, keeping the
/// tridiagonal couplings inside each line. With vertical-fastest ordering this
/// inverts the stiff direction of the graded mesh exactly.
pub struct LineJacobi {
    line_len: usize,
    blocks: Vec<Tridiagonal>,
}

impl LineJacobi {
    pub fn new(a: &CsrMatrix, line_len: usize) -> Result<Self> {
        let n = a.n_rows();
        if line_len == 0 || !n.is_multiple_of(line_len) {
            return Err(Error::Input(format!("line length {line_len} does not divide {n}")));
        }
        let mut blocks = Vec::with_capacity(n / line_len);
        for b in 0..n / line_len {
            let o = b * line_len;
            let diag: Vec<f64> = (0..line_len).map(|k| a.get(o + k, o + k)).collect();
            let sub: Vec<f64> = (1..line_len).map(|k| a.get(o + k, o + k - 1)).collect();
            let sup: Vec<f64> = (1..line_len).map(|k| a.get(o + k - 1, o + k)).collect();
            let t = Tridiagonal::factor(&sub, &diag, &sup)
                .ok_or_else(|| Error::Numeric(format!("singular line block {b}")))?;
            blocks.push(t);
        }
        Ok(LineJacobi { line_len, blocks })
    }
}

impl Preconditioner for LineJacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
        for (b, blk) in self.blocks.iter().enumerate() {
            let o = b * self.line_len;
            blk.solve_in_place(&mut z[o..o + self.line_len]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Preconditioned conjugate gradients from the initial guess in `x`.
/// Stops when `||b - A x|| <= tol * ||b||`.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    prec: &dyn Preconditioner,
    tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = a.matvec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z = vec![0.0; n];
    prec.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    for it in 0..max_iter {
        if rel <= tol {
            return Ok(SolveStats {
                iterations: it,
                relative_residual: rel,
            });
        }
        a.matvec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver {
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        rel = dot(&r, &r).sqrt() / bnorm;
        prec.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if rel <= tol {
        Ok(SolveStats {
            iterations: max_iter,
            relative_residual: rel,
        })
    } else {
        Err(Error::Solver {
            iterations: max_iter,
            residual: rel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_2d(m: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let g = i * m + j;
                t.push((g, g, 4.0));
                if j + 1 < m {
                    t.push((g, g + 1, -1.0));
                    t.push((g + 1, g, -1.0));
                }
                if i + 1 < m {
                    t.push((g, g + m, -1.0));
                    t.push((g + m, g, -1.0));
                }
            }
        }
        CsrMatrix::from_triplets(m * m, m * m, t)
    }

    #[test]
    fn both_preconditioners_converge() {
        let a = laplace_2d(12);
        let b: Vec<f64> = (0..144).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        for prec in [
            Box::new(Jacobi::new(&a)) as Box<dyn Preconditioner>,
            Box::new(LineJacobi::new(&a, 12).unwrap()),
        ] {
            let mut x = vec![0.0; 144];
            let st = pcg(&a, &b, &mut x, prec.as_ref(), 1e-12, 500).unwrap();
            assert!(st.relative_residual <= 1e-12);
            let r = a.matvec(&x);
            let err: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let a = laplace_2d(12);
        let b = vec![1.0; 144];
        let mut x = vec![0.0; 144];
        let e = pcg(&a, &b, &mut x, &Jacobi::new(&a), 1e-14, 2).unwrap_err();
        assert!(matches!(e, Error::Solver { iterations: 2, .. }));
    }
}
