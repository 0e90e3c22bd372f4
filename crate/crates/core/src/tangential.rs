//! Tangential finite elements: P1 (n = 1) and Q1 (n = 2) on the uniform grid.

use crate::grid::TangentialGrid;
use crate::linalg::CsrMatrix;
use crate::metric::{Metric, Tensor};

const GAUSS: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

/// Element stiffness of the bilinear element on a square for a constant
/// tensor (independent of the side length in 2D). Local order: (0,0), (1,0), (0,1), (1,1).
pub fn q1_element(a: &Tensor) -> [[f64; 4]; 4] {
    let mut k = [[0.0; 4]; 4];
    for &gx in &GAUSS {
        for &gy in &GAUSS {
            // reference gradients on the unit square
            let g = [
                [-(1.0 - gy), -(1.0 - gx)],
                [1.0 - gy, -gx],
                [-gy, 1.0 - gx],
                [gy, gx],
            ];
            for i in 0..4 {
                let ai = [a[0] * g[i][0] + a[1] * g[i][1], a[1] * g[i][0] + a[2] * g[i][1]];
                for j in 0..4 {
                    // Jacobian 1/h per derivative, area h²: factors cancel
                    k[i][j] += 0.25 * (ai[0] * g[j][0] + ai[1] * g[j][1]);
                }
            }
        }
    }
    k
}

pub fn p1_element(a: f64, h: f64) -> [[f64; 2]; 2] {
    let c = a / h;
    [[c, -c], [-c, c]]
}

/// Triplets of `∫ ∇φ_i · a ∇φ_j` over the cells selected by `mask`
/// (all cells when `None`), with cellwise-averaged tensors.
pub fn stiffness_triplets(tg: &TangentialGrid, metric: &Metric, mask: Option<&[bool]>) -> Vec<(usize, usize, f64)> {
    let mut t = Vec::with_capacity(tg.n_cells() * (1 << (2 * tg.dim)));
    for c in 0..tg.n_cells() {
        if mask.is_some_and(|m| !m[c]) {
            continue;
        }
        let nodes = tg.cell_nodes(c);
        let a = metric.cell_tensor(&nodes);
        if tg.dim == 1 {
            let k = p1_element(a[0], tg.h);
            for i in 0..2 {
                for j in 0..2 {
                    t.push((nodes[i], nodes[j], k[i][j]));
                }
            }
        } else {
            let k = q1_element(&a);
            for i in 0..4 {
                for j in 0..4 {
                    t.push((nodes[i], nodes[j], k[i][j]));
                }
            }
        }
    }
    t
}

pub fn stiffness(tg: &TangentialGrid, metric: &Metric, mask: Option<&[bool]>) -> CsrMatrix {
    let n = tg.n_nodes();
    CsrMatrix::from_triplets(n, n, stiffness_triplets(tg, metric, mask))
}

/// Lumped mass of `∫ q φ_i φ_j` restricted to masked cells, nodal `q`.
pub fn lumped_weighted_mass(tg: &TangentialGrid, q: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let share = tg.cell_volume() / (1usize << tg.dim) as f64;
    let mut m = vec![0.0; tg.n_nodes()];
    for c in 0..tg.n_cells() {
        if mask.is_some_and(|mk| !mk[c]) {
            continue;
        }
        for t in tg.cell_nodes(c) {
            m[t] += share * q[t];
        }
    }
    m
}

/// `Σ_cells u_cᵀ K_c(ā) v_c` for an arbitrary (not necessarily elliptic)
/// nodal tensor field, cellwise averaged as in [`stiffness`].
pub fn bilinear_form(tg: &TangentialGrid, values: &[Tensor], mask: Option<&[bool]>, u: &[f64], v: &[f64]) -> f64 {
    let mut acc = 0.0;
    for c in 0..tg.n_cells() {
        if mask.is_some_and(|m| !m[c]) {
            continue;
        }
        let nodes = tg.cell_nodes(c);
        let mut a = [0.0; 3];
        for &t in &nodes {
            for k in 0..3 {
                a[k] += values[t][k] / nodes.len() as f64;
            }
        }
        if tg.dim == 1 {
            let k = p1_element(a[0], tg.h);
            for i in 0..2 {
                for j in 0..2 {
                    acc += u[nodes[i]] * k[i][j] * v[nodes[j]];
                }
            }
        } else {
            let k = q1_element(&a);
            for i in 0..4 {
                for j in 0..4 {
                    acc += u[nodes[i]] * k[i][j] * v[nodes[j]];
                }
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q1_identity_element_matches_closed_form() {
        let k = q1_element(&[1.0, 0.0, 1.0]);
        // classical bilinear Laplacian element: 2/3 diagonal, -1/6 edge, -1/3 diagonal neighbour
        assert!((k[0][0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((k[0][1] + 1.0 / 6.0).abs() < 1e-14);
        assert!((k[0][2] + 1.0 / 6.0).abs() < 1e-14);
        assert!((k[0][3] + 1.0 / 3.0).abs() < 1e-14);
        for row in k {
            assert!(row.iter().sum::<f64>().abs() < 1e-14);
        }
    }

    #[test]
    fn q1_is_exact_on_linear_functions() {
        // energy of u = x for a = diag(2, 1) on the unit element is 2
        let k = q1_element(&[2.0, 0.3, 1.0]);
        let u = [0.0, 1.0, 0.0, 1.0];
        let mut e = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                e += u[i] * k[i][j] * u[j];
            }
        }
        assert!((e - 2.0).abs() < 1e-14);
        // cross term: u = x, v = y gives a12
        let v = [0.0, 0.0, 1.0, 1.0];
        let mut x = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                x += u[i] * k[i][j] * v[j];
            }
        }
        assert!((x - 0.3).abs() < 1e-14);
    }
}
