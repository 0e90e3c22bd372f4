use super::sparse::CsrMatrix;

/// Cholesky factor of a symmetric positive definite banded matrix, stored
/// row-wise as the lower band `L[i, i-bw..=i]`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    fn idx(&self, i: usize, j: usize) -> usize {
        // requires i - bw <= j <= i
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Factors `a`. Returns `None` when a non-positive pivot appears.
    pub fn factor(a: &CsrMatrix) -> Option<Self> {
        let n = a.n_rows();
        let bw = a.bandwidth();
        let mut f = BandedCholesky {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        };
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    let k = f.idx(i, j);
                    f.band[k] = v;
                }
            }
        }
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = f.band[f.idx(i, j)];
                for k in k0..j {
                    s -= f.band[f.idx(i, k)] * f.band[f.idx(j, k)];
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    let k = f.idx(i, i);
                    f.band[k] = s.sqrt();
                } else {
                    let k = f.idx(i, j);
                    f.band[k] = s / f.band[f.idx(j, j)];
                }
            }
        }
        Some(f)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[self.idx(i, k)] * x[k];
            }
            x[i] = s / self.band[self.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.band[self.idx(k, i)] * x[k];
            }
            x[i] = s / self.band[self.idx(i, i)];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_dense_solve() {
        let n = 9;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0 + i as f64 * 0.1));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
            if i + 3 < n {
                t.push((i, i + 3, -0.5));
                t.push((i + 3, i, -0.5));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = BandedCholesky::factor(&a).unwrap().solve(&b);
        let r = a.matvec(&x);
        for i in 0..n {
            assert!((r[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(BandedCholesky::factor(&a).is_none());
    }
}
