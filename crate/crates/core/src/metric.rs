//! Tangential conductivity fields `a(x')`.

use crate::grid::{DomainLayout, RegionName, TangentialGrid};
use crate::{Error, Result};
use sha2::{Digest, Sha256};

/// Symmetric tensor stored as `[a11, a12, a22]` (only `a11` used for n = 1).
pub type Tensor = [f64; 3];

pub const IDENTITY: Tensor = [1.0, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    dim: usize,
    values: Vec<Tensor>,
    pub theta1: f64,
    pub c2_bound: f64,
    pub isotropic: bool,
    gamma: Option<Vec<f64>>,
    /// Ricci lower bound; recorded only.
    pub theta2: Option<f64>,
}

fn eig2(a: &Tensor) -> (f64, f64) {
    let m = 0.5 * (a[0] + a[2]);
    let d = (0.25 * (a[0] - a[2]).powi(2) + a[1] * a[1]).sqrt();
    (m - d, m + d)
}

/// C² bump supported in the bounding box of the first box of `Ω'`:
/// `Π (1 - ξ_i²)³` with `ξ_i = (x_i - c_i) / w_i`.
pub fn omega_prime_bump(layout: &DomainLayout, x: &[f64]) -> f64 {
    let b = &layout.regions.omega_prime.boxes[0];
    let mut v = 1.0;
    for i in 0..layout.dim() {
        let c = 0.5 * (b.lo[i] + b.hi[i]);
        let w = 0.5 * (b.hi[i] - b.lo[i]);
        let xi = (x[i] - c) / w;
        if xi.abs() >= 1.0 {
            return 0.0;
        }
        v *= (1.0 - xi * xi).powi(3);
    }
    v
}

impl Metric {
    pub fn identity(layout: &DomainLayout) -> Self {
        Self::identity_on(&layout.tangential)
    }

    /// Identity metric on a bare tangential grid.
    pub fn identity_on(tg: &TangentialGrid) -> Self {
        let n = tg.n_nodes();
        Metric {
            dim: tg.dim,
            values: vec![IDENTITY; n],
            theta1: 1.0,
            c2_bound: 0.0,
            isotropic: true,
            gamma: Some(vec![1.0; n]),
            theta2: None,
        }
    }

    /// Scalar conductivity `a = γ I`.
    pub fn isotropic(layout: &DomainLayout, gamma: Vec<f64>, theta1: f64) -> Result<Self> {
        if gamma.len() != layout.n_tangential_nodes() {
            return Err(Error::Input("gamma length does not match the tangential grid".into()));
        }
        let values = gamma.iter().map(|&g| [g, 0.0, g]).collect();
        let mut m = Metric {
            dim: layout.dim(),
            values,
            theta1,
            c2_bound: 0.0,
            isotropic: true,
            gamma: Some(gamma),
            theta2: None,
        };
        m.validate(layout)?;
        m.c2_bound = m.estimate_c2(layout);
        Ok(m)
    }

    pub fn anisotropic(layout: &DomainLayout, values: Vec<Tensor>, theta1: f64) -> Result<Self> {
        if values.len() != layout.n_tangential_nodes() {
            return Err(Error::Input("metric length does not match the tangential grid".into()));
        }
        let mut m = Metric {
            dim: layout.dim(),
            values,
            theta1,
            c2_bound: 0.0,
            isotropic: false,
            gamma: None,
            theta2: None,
        };
        m.validate(layout)?;
        m.c2_bound = m.estimate_c2(layout);
        Ok(m)
    }

    /// `γ = 1 + θ · bump` with the bump inside `Ω'`.
    pub fn isotropic_bump(layout: &DomainLayout, theta: f64, theta1: f64) -> Result<Self> {
        let tg = &layout.tangential;
        let gamma = (0..tg.n_nodes())
            .map(|t| 1.0 + theta * omega_prime_bump(layout, &tg.coords(t)[..layout.dim()]))
            .collect();
        Metric::isotropic(layout, gamma, theta1)
    }

    /// `a = I + θ · bump · A0` for a symmetric `A0`.
    pub fn anisotropic_bump(layout: &DomainLayout, theta: f64, a0: Tensor, theta1: f64) -> Result<Self> {
        let tg = &layout.tangential;
        let values = (0..tg.n_nodes())
            .map(|t| {
                let b = theta * omega_prime_bump(layout, &tg.coords(t)[..layout.dim()]);
                [1.0 + b * a0[0], b * a0[1], 1.0 + b * a0[2]]
            })
            .collect();
        Metric::anisotropic(layout, values, theta1)
    }

    fn validate(&self, layout: &DomainLayout) -> Result<()> {
        if !(self.theta1 > 0.0 && self.theta1 <= 1.0) {
            return Err(Error::Metric(format!("theta1 must lie in (0, 1], got {}", self.theta1)));
        }
        let lo = self.theta1 * (1.0 - 1e-12);
        let hi = 1.0 / self.theta1 * (1.0 + 1e-12);
        for (t, a) in self.values.iter().enumerate() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Metric(format!("non-finite metric at node {t}")));
            }
            let (l1, l2) = if self.dim == 1 { (a[0], a[0]) } else { eig2(a) };
            if l1 <= 0.0 {
                return Err(Error::Metric(format!("metric not positive definite at node {t}")));
            }
            if l1 < lo || l2 > hi {
                return Err(Error::Metric(format!(
                    "ellipticity bounds violated at node {t}: eigenvalues ({l1:.4}, {l2:.4}) vs theta1 {}",
                    self.theta1
                )));
            }
            if !layout.node_is_interior(RegionName::Omega, t) {
                let dev = if self.dim == 1 {
                    (a[0] - 1.0).abs()
                } else {
                    (a[0] - 1.0).abs().max(a[1].abs()).max((a[2] - 1.0).abs())
                };
                if dev > 1e-14 {
                    return Err(Error::Metric(format!("metric differs from the identity outside omega at node {t}")));
                }
            }
        }
        Ok(())
    }

    fn estimate_c2(&self, layout: &DomainLayout) -> f64 {
        let tg = &layout.tangential;
        let h2 = tg.h * tg.h;
        let n = tg.nodes_x;
        let mut worst = 0.0_f64;
        for t in 0..tg.n_nodes() {
            let (i, j) = tg.split(t);
            let mut axes = vec![(i, true)];
            if self.dim == 2 {
                axes.push((j, false));
            }
            for (k, along_i) in axes {
                if k == 0 || k + 1 >= n {
                    continue;
                }
                let (a, b) = if along_i {
                    (tg.index(i - 1, j), tg.index(i + 1, j))
                } else {
                    (tg.index(i, j - 1), tg.index(i, j + 1))
                };
                for c in 0..3 {
                    let d2 = (self.values[a][c] - 2.0 * self.values[t][c] + self.values[b][c]) / h2;
                    worst = worst.max(d2.abs());
                }
            }
        }
        worst
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, t: usize) -> Tensor {
        self.values[t]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn gamma(&self) -> Option<&[f64]> {
        self.gamma.as_deref()
    }

    /// Average of the corner tensors of a tangential cell.
    pub fn cell_tensor(&self, corners: &[usize]) -> Tensor {
        let mut acc = [0.0; 3];
        for &t in corners {
            for c in 0..3 {
                acc[c] += self.values[t][c];
            }
        }
        let k = corners.len() as f64;
        [acc[0] / k, acc[1] / k, acc[2] / k]
    }

    /// Pointwise difference `self - other`, for Alessandrini integrands.
    pub fn difference(&self, other: &Metric) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect()
    }

    /// Max-norm of `self - other` over nodes and entries.
    pub fn sup_distance(&self, other: &Metric) -> f64 {
        self.difference(other)
            .iter()
            .flat_map(|d| d.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }

    /// Hex SHA-256 of the nodal tensors.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for a in &self.values {
            for v in a {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec, Region, RegionSpec};

    fn layout() -> DomainLayout {
        let spec = GridSpec {
            n_tangential: 2,
            extent_x: 2.0,
            nodes_x: 33,
            height_y: 4.0,
            nodes_y: 9,
            grading_ratio: 1.2,
            periodic: false,
        };
        let regions = RegionSpec {
            omega_prime: Region::single(&[-0.4, -0.4], &[0.4, 0.4]),
            omega: Region::single(&[-0.6, -0.6], &[0.6, 0.6]),
            omega_one: Region::single(&[-0.9, -0.9], &[0.9, 0.9]),
            window_w: Region::single(&[1.2, -0.5], &[1.8, 0.5]),
        };
        build_grid(&spec, &regions).unwrap()
    }

    #[test]
    fn bump_family_is_admissible() {
        let l = layout();
        let m = Metric::isotropic_bump(&l, 0.2, 0.5).unwrap();
        assert!(m.c2_bound.is_finite() && m.c2_bound > 0.0);
        assert_eq!(Metric::isotropic_bump(&l, 0.0, 0.5).unwrap().fingerprint(), Metric::identity(&l).fingerprint());
    }

    #[test]
    fn rejects_non_identity_outside_omega() {
        let l = layout();
        let mut g = vec![1.0; l.n_tangential_nodes()];
        g[0] = 1.1;
        assert!(matches!(Metric::isotropic(&l, g, 0.5), Err(Error::Metric(_))));
    }

    #[test]
    fn rejects_ellipticity_violation() {
        let l = layout();
        assert!(matches!(Metric::isotropic_bump(&l, 2.0, 0.5), Err(Error::Metric(_))));
        assert!(matches!(
            Metric::anisotropic_bump(&l, 1.0, [0.0, 2.0, 0.0], 0.5),
            Err(Error::Metric(_))
        ));
    }
}
