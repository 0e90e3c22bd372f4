//! Discrete fractional Sobolev Gram matrices on node sets.
//!
//! For a node set with lumped mass `M` and graph Laplacian `K`,
//! `G_r = M^{1/2} (I + Ł)^r M^{1/2}` with `Ł = M^{-1/2} K M^{-1/2}`.
//! `G_0 = M`, and `G_r M^{-1} G_{-r} = M` exactly in the eigenbasis.

use crate::grid::{NodeSet, NodeSetKind};
use crate::linalg::dense::{spd_inv_sqrt, spectral_norm, sym_eigen_sorted};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::io::Write;

#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub order: f64,
    pub matrix: DMatrix<f64>,
    pub kind: NodeSetKind,
}

/// Spectral data of a node set, reusable across orders.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub kind: NodeSetKind,
    /// Eigenvalues of `Ł`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors of `Ł` (columns).
    pub eigenvectors: DMatrix<f64>,
    pub sqrt_mass: Vec<f64>,
    pub mass: Vec<f64>,
}

fn check_connected(set: &NodeSet) -> Result<()> {
    let n = set.len();
    if n == 0 {
        return Err(Error::Domain("empty node set".into()));
    }
    if set.kind == NodeSetKind::BoundaryPoints {
        return Ok(());
    }
    let mut adj = vec![Vec::new(); n];
    for &(a, b, w) in &set.edges {
        if w > 0.0 {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    if seen.iter().all(|&b| b) {
        Ok(())
    } else {
        Err(Error::Input("node set is not connected".into()))
    }
}

/// Graph Laplacian `K` of the node set (edge conductances from the set).
pub fn graph_laplacian(set: &NodeSet) -> DMatrix<f64> {
    let n = set.len();
    let mut k = DMatrix::zeros(n, n);
    for &(a, b, w) in &set.edges {
        k[(a, a)] += w;
        k[(b, b)] += w;
        k[(a, b)] -= w;
        k[(b, a)] -= w;
    }
    k
}

impl SpectralBasis {
    pub fn new(set: &NodeSet) -> Result<Self> {
        check_connected(set)?;
        if set.masses.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Input("node masses must be positive".into()));
        }
        let n = set.len();
        let sqrt_mass: Vec<f64> = set.masses.iter().map(|m| m.sqrt()).collect();
        let (eigenvalues, eigenvectors) = if set.kind == NodeSetKind::BoundaryPoints {
            (vec![0.0; n], DMatrix::identity(n, n))
        } else {
            let k = graph_laplacian(set);
            let l = DMatrix::from_fn(n, n, |i, j| k[(i, j)] / (sqrt_mass[i] * sqrt_mass[j]));
            let (mut vals, vecs) = sym_eigen_sorted(&l);
            for v in vals.iter_mut() {
                *v = v.max(0.0);
            }
            (vals, vecs)
        };
        Ok(SpectralBasis {
            kind: set.kind,
            eigenvalues,
            eigenvectors,
            sqrt_mass,
            mass: set.masses.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.sqrt_mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_mass.is_empty()
    }

    /// `M^{1/2} V diag(g(λ)) Vᵀ M^{1/2}`.
    fn weighted(&self, g: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let n = self.len();
        let v = &self.eigenvectors;
        let d = DVector::from_iterator(n, self.eigenvalues.iter().map(|&l| g(l)));
        let mut core = v * DMatrix::from_diagonal(&d) * v.transpose();
        for i in 0..n {
            for j in 0..n {
                core[(i, j)] *= self.sqrt_mass[i] * self.sqrt_mass[j];
            }
        }
        (&core + core.transpose()) * 0.5
    }

    pub fn gram(&self, r: f64) -> Result<GramMatrix> {
        if !(r.abs() <= 2.0) {
            return Err(Error::Input(format!("Sobolev order must satisfy |r| <= 2, got {r}")));
        }
        let matrix = if r == 0.0 {
            let n = self.len();
            DMatrix::from_fn(n, n, |i, j| if i == j { self.mass[i] } else { 0.0 })
        } else {
            self.weighted(|l| (1.0 + l).powf(r))
        };
        Ok(GramMatrix {
            order: r,
            matrix,
            kind: self.kind,
        })
    }
}

/// Gram matrix of order `r` on the node set.
pub fn gram_matrix(set: &NodeSet, r: f64) -> Result<GramMatrix> {
    SpectralBasis::new(set)?.gram(r)
}

/// Largest singular value of `G_tgt^{-1/2} M G_src^{-1/2}`.
pub fn dual_operator_norm(m: &DMatrix<f64>, g_src: &GramMatrix, g_tgt: &GramMatrix) -> Result<f64> {
    if m.ncols() != g_src.matrix.nrows() || m.nrows() != g_tgt.matrix.nrows() {
        return Err(Error::Input("operator and Gram shapes are incompatible".into()));
    }
    if m.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let a = spd_inv_sqrt(&g_tgt.matrix)?;
    let b = spd_inv_sqrt(&g_src.matrix)?;
    Ok(spectral_norm(&(a * m * b)))
}

/// `sqrt(wᵀ G w)` for nodal values `w`.
pub fn gram_norm(g: &GramMatrix, w: &[f64]) -> f64 {
    let v = DVector::from_column_slice(w);
    (v.dot(&(&g.matrix * &v))).max(0.0).sqrt()
}

/// Dual norm `‖w‖_{H^{-1}}` of a density `w` given at the interior nodes of
/// a region.
pub fn h_minus_one_norm(w: &[f64], region: &NodeSet) -> Result<f64> {
    if region.is_empty() {
        return Err(Error::Domain("empty region".into()));
    }
    if w.len() != region.len() {
        return Err(Error::Input("functional length does not match the region".into()));
    }
    if w.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    Ok(gram_norm(&gram_matrix(region, -1.0)?, w))
}

/// CSV dump of a Gram matrix (`i,j,value`).
pub fn write_gram_csv(g: &GramMatrix, out: &mut impl Write) -> Result<()> {
    writeln!(out, "i,j,value")?;
    for i in 0..g.matrix.nrows() {
        for j in 0..g.matrix.ncols() {
            writeln!(out, "{i},{j},{:.15e}", g.matrix[(i, j)])?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> NodeSet {
        NodeSet {
            kind: NodeSetKind::RegionInterior,
            nodes: vec![0, 1, 2],
            masses: vec![1.0, 1.0, 1.0],
            edges: vec![(0, 1, 1.0), (1, 2, 1.0)],
        }
    }

    #[test]
    fn path_graph_by_hand() {
        // I + L for the unit path: [[2,-1,0],[-1,3,-1],[0,-1,2]], eigenvalues 1, 2, 4
        let g = gram_matrix(&path3(), 1.0).unwrap();
        let expect = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.0, -1.0, 3.0, -1.0, 0.0, -1.0, 2.0]);
        assert!((g.matrix.clone() - expect).abs().max() < 1e-12);
        let mut ev: Vec<f64> = g.matrix.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (a, b) in ev.iter().zip([1.0, 2.0, 4.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn order_zero_is_mass_and_orders_pair() {
        let mut set = path3();
        set.masses = vec![0.5, 1.0, 2.0];
        let b = SpectralBasis::new(&set).unwrap();
        let g0 = b.gram(0.0).unwrap();
        assert_eq!(g0.matrix, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0, 2.0])));
        let gp = b.gram(0.7).unwrap().matrix;
        let gm = b.gram(-0.7).unwrap().matrix;
        let minv = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.5]));
        let prod = &gp * minv * &gm;
        assert!((prod - g0.matrix).abs().max() < 1e-10);
    }

    #[test]
    fn disconnected_set_is_rejected() {
        let mut set = path3();
        set.edges.pop();
        assert!(matches!(gram_matrix(&set, 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn dual_norm_cases() {
        let id = GramMatrix {
            order: 0.0,
            matrix: DMatrix::identity(2, 2),
            kind: NodeSetKind::WindowTrace,
        };
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        assert!((dual_operator_norm(&m, &id, &id).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(dual_operator_norm(&DMatrix::zeros(2, 2), &id, &id).unwrap(), 0.0);
        let g = gram_matrix(&path3(), 0.5).unwrap();
        assert!((dual_operator_norm(&g.matrix, &g, &g).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn highest_mode_h_minus_one() {
        let mut set = path3();
        set.masses = vec![0.25, 0.25, 0.25];
        let b = SpectralBasis::new(&set).unwrap();
        let top = b.eigenvalues[2];
        let v = b.eigenvectors.column(2);
        // density w with M^{1/2} w = v
        let w: Vec<f64> = (0..3).map(|i| v[i] / b.sqrt_mass[i]).collect();
        let l2 = w.iter().zip(&set.masses).map(|(x, m)| x * x * m).sum::<f64>().sqrt();
        let hm1 = h_minus_one_norm(&w, &set).unwrap();
        assert!((hm1 - l2 / (1.0 + top).sqrt()).abs() < 1e-10);
        assert!(hm1 <= l2);
    }
}
