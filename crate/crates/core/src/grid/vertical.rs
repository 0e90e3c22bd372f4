use crate::{Error, Result};

/// `∫_a^b y^{1-2s} dy` for `0 <= a <= b`.
pub fn weighted_integral(s: f64, a: f64, b: f64) -> f64 {
    let p = 2.0 - 2.0 * s;
    (b.powf(p) - a.powf(p)) / p
}

/// Geometrically graded vertical nodes `0 = y_0 < ... < y_M = Y`,
/// `y_j = Y (ρ^j - 1) / (ρ^M - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalMesh {
    pub y: Vec<f64>,
    pub ratio: f64,
}

impl VerticalMesh {
    pub fn new(height: f64, nodes: usize, ratio: f64) -> Result<Self> {
        if nodes < 3 || !(ratio > 1.0) || !(height > 0.0) {
            return Err(Error::Config("vertical mesh needs >= 3 nodes, ratio > 1, height > 0".into()));
        }
        let m = (nodes - 1) as i32;
        let denom = ratio.powi(m) - 1.0;
        let mut y: Vec<f64> = (0..nodes).map(|j| height * (ratio.powi(j as i32) - 1.0) / denom).collect();
        y[nodes - 1] = height;
        Ok(VerticalMesh { y, ratio })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn height(&self) -> f64 {
        *self.y.last().unwrap()
    }

    /// Rejects meshes whose first layer is too thin for the `y^{2s}` fit.
    pub fn check_first_layer(&self, s: f64) -> Result<()> {
        if self.y[1].powf(2.0 * s) < 1e-8 {
            return Err(Error::Config(format!(
                "first vertical layer y1 = {:.3e} gives y1^(2s) < 1e-8; lower the grading ratio",
                self.y[1]
            )));
        }
        Ok(())
    }

    /// Dual cell `[y_{k-1/2}, y_{k+1/2}]` clipped to `[0, Y]`.
    pub fn dual_cell(&self, k: usize) -> (f64, f64) {
        let n = self.y.len();
        let lo = if k == 0 { 0.0 } else { 0.5 * (self.y[k - 1] + self.y[k]) };
        let hi = if k + 1 == n { self.y[n - 1] } else { 0.5 * (self.y[k] + self.y[k + 1]) };
        (lo, hi)
    }

    /// Exact weighted measure of each dual cell.
    pub fn dual_weights(&self, s: f64) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let (a, b) = self.dual_cell(k);
                weighted_integral(s, a, b)
            })
            .collect()
    }

    /// Weighted measure of each dual cell intersected with `[lo, hi]`.
    pub fn window_weights(&self, s: f64, lo: f64, hi: f64) -> Vec<f64> {
        (0..self.len())
            .map(|k| {
                let (a, b) = self.dual_cell(k);
                let (a, b) = (a.max(lo), b.min(hi));
                if b > a {
                    weighted_integral(s, a, b)
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Exact conductance of each primal cell for `(y^{1-2s} u')' = 0`:
    /// `2s / (y_{k+1}^{2s} - y_k^{2s})`.
    pub fn conductances(&self, s: f64) -> Vec<f64> {
        self.y
            .windows(2)
            .map(|w| 2.0 * s / (w[1].powf(2.0 * s) - w[0].powf(2.0 * s)))
            .collect()
    }

    /// Weighted measure of each primal cell `[y_k, y_{k+1}]`.
    pub fn cell_weights(&self, s: f64) -> Vec<f64> {
        self.y.windows(2).map(|w| weighted_integral(s, w[0], w[1])).collect()
    }

    /// Index of the last node with `y <= v`.
    pub fn locate(&self, v: f64) -> usize {
        match self.y.binary_search_by(|p| p.total_cmp(&v)) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_closed_form() {
        let m = VerticalMesh::new(8.0, 65, 1.1).unwrap();
        for s in [0.25, 0.5, 0.75] {
            let total: f64 = m.dual_weights(s).iter().sum();
            let exact = weighted_integral(s, 0.0, 8.0);
            assert!((total - exact).abs() <= 1e-12 * exact);
            let cells: f64 = m.cell_weights(s).iter().sum();
            assert!((cells - exact).abs() <= 1e-12 * exact);
        }
    }

    #[test]
    fn window_weights_cover_window() {
        let m = VerticalMesh::new(8.0, 41, 1.12).unwrap();
        let s = 0.75;
        let w: f64 = m.window_weights(s, 0.3, 4.1).iter().sum();
        let exact = weighted_integral(s, 0.3, 4.1);
        assert!((w - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn grading_is_geometric() {
        let m = VerticalMesh::new(1.0, 9, 1.5).unwrap();
        for k in 1..7 {
            let r = (m.y[k + 1] - m.y[k]) / (m.y[k] - m.y[k - 1]);
            assert!((r - 1.5).abs() < 1e-12);
        }
    }
}
