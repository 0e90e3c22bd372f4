//! Thomas algorithm with a reusable factorization.

/// LU factorization of a tridiagonal matrix without pivoting (valid for the
/// diagonally dominant / SPD blocks used here).
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    inv_diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    /// `sub[i]` couples rows i+1 and i, `sup[i]` couples rows i and i+1.
    pub fn factor(sub: &[f64], diag: &[f64], sup: &[f64]) -> Option<Self> {
        let n = diag.len();
        let mut lower = vec![0.0; n.saturating_sub(1)];
        let mut inv_diag = vec![0.0; n];
        let mut d = diag[0];
        if d.abs() < f64::MIN_POSITIVE {
            return None;
        }
        inv_diag[0] = 1.0 / d;
        for i in 1..n {
            let l = sub[i - 1] * inv_diag[i - 1];
            lower[i - 1] = l;
            d = diag[i] - l * sup[i - 1];
            if d.abs() < f64::MIN_POSITIVE || !d.is_finite() {
                return None;
            }
            inv_diag[i] = 1.0 / d;
        }
        Some(Tridiagonal {
            lower,
            inv_diag,
            upper: sup.to_vec(),
        })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.inv_diag.len();
        for i in 1..n {
            x[i] -= self.lower[i - 1] * x[i - 1];
        }
        x[n - 1] *= self.inv_diag[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) * self.inv_diag[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] -> x = [1 1 1]
        let t = Tridiagonal::factor(&[-1.0, -1.0], &[2.0, 2.0, 2.0], &[-1.0, -1.0]).unwrap();
        let mut x = vec![1.0, 0.0, 1.0];
        t.solve_in_place(&mut x);
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }
}
