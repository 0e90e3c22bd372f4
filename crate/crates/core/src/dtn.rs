//! Finite Dirichlet-to-Neumann maps on hat-function bases.
//!
//! Every map is stored twice: as nodal densities (`values`, what the map
//! returns at target nodes) and as the pairing matrix
//! `pairing = diag(m_target) · values`, which is the bilinear form the
//! operator induces on hats. Operator norms use the pairing with the order-`r`
//! Gram on both sides, so `‖Λ‖ = ‖G^{-1/2} B G^{-1/2}‖`.

use crate::elliptic::{assemble_extension_operator, solve_mixed_problem, BottomCondition, SolverOptions};
use crate::grid::{build_grid, DomainLayout, GridSpec, NodeSet, RegionName, RegionSpec, AxisBox, Region};
use crate::linalg::{dense::sym_eigenvalues, BandedCholesky, CsrMatrix};
use crate::metric::{Metric, Tensor};
use crate::par::{try_map_indexed, Execution};
use crate::sobolev::{dual_operator_norm, SpectralBasis};
use crate::tangential;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtnKind {
    Fractional,
    Local,
    Schrodinger,
}

#[derive(Debug, Clone)]
pub struct DtnMatrix {
    pub kind: DtnKind,
    /// Densities at target nodes, one column per source hat.
    pub values: DMatrix<f64>,
    pub pairing: DMatrix<f64>,
    pub source_order: f64,
    pub target_order: f64,
    pub nodes: NodeSet,
    pub metric_fingerprint: String,
    pub c_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtnSidecar {
    pub kind: DtnKind,
    pub rows: usize,
    pub cols: usize,
    pub source_order: f64,
    pub target_order: f64,
    pub basis: String,
    pub nodes: Vec<usize>,
    pub metric_fingerprint: String,
    pub c_s: Option<f64>,
}

impl DtnMatrix {
    fn new(kind: DtnKind, pairing: DMatrix<f64>, nodes: NodeSet, order: f64, fingerprint: String, c_s: Option<f64>) -> Self {
        let values = DMatrix::from_fn(pairing.nrows(), pairing.ncols(), |i, j| pairing[(i, j)] / nodes.masses[i]);
        DtnMatrix {
            kind,
            values,
            pairing,
            source_order: order,
            target_order: -order,
            nodes,
            metric_fingerprint: fingerprint,
            c_s,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// Densities `Λ g` at the target nodes.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        (&self.values * DVector::from_column_slice(g)).iter().copied().collect()
    }

    /// `(Λ g1, g2)`.
    pub fn pair(&self, g1: &[f64], g2: &[f64]) -> f64 {
        let a = DVector::from_column_slice(g1);
        let b = DVector::from_column_slice(g2);
        b.dot(&(&self.pairing * a))
    }

    /// `‖B - Bᵀ‖_F / ‖B‖_F`.
    pub fn symmetry_defect(&self) -> f64 {
        let b = &self.pairing;
        let n = b.norm();
        if n == 0.0 {
            0.0
        } else {
            (b - b.transpose()).norm() / n
        }
    }

    /// Gram-weighted operator norm `H^r → H^{-r}` on the node set.
    pub fn operator_norm(&self, basis: &SpectralBasis) -> Result<f64> {
        let g = basis.gram(self.source_order)?;
        dual_operator_norm(&self.pairing, &g, &g)
    }

    /// Gram-weighted norm of `self - other`.
    pub fn distance(&self, other: &DtnMatrix, basis: &SpectralBasis) -> Result<f64> {
        if self.pairing.shape() != other.pairing.shape() || self.nodes.nodes != other.nodes.nodes {
            return Err(Error::Input("DtN matrices live on different bases".into()));
        }
        let g = basis.gram(self.source_order)?;
        dual_operator_norm(&(&self.pairing - &other.pairing), &g, &g)
    }

    pub fn sidecar(&self) -> DtnSidecar {
        DtnSidecar {
            kind: self.kind,
            rows: self.values.nrows(),
            cols: self.values.ncols(),
            source_order: self.source_order,
            target_order: self.target_order,
            basis: format!("{:?}", self.nodes.kind),
            nodes: self.nodes.nodes.clone(),
            metric_fingerprint: self.metric_fingerprint.clone(),
            c_s: self.c_s,
        }
    }

    /// Densities as `row,col,node_row,node_col,value`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "row,col,node_row,node_col,value")?;
        for i in 0..self.values.nrows() {
            for j in 0..self.values.ncols() {
                writeln!(
                    out,
                    "{i},{j},{},{},{:.15e}",
                    self.nodes.nodes[i], self.nodes.nodes[j], self.values[(i, j)]
                )?;
            }
        }
        Ok(())
    }
}

/// Fractional DtN on the W hats: column `j` is `c_s` times the bottom flux of
/// the mixed solve with `f = φ_j`, restricted to W.
pub fn fractional_dtn_matrix(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    c_s: f64,
    opts: &SolverOptions,
    exec: Execution,
) -> Result<DtnMatrix> {
    if !(c_s > 0.0) {
        return Err(Error::Input("c_s must be positive".into()));
    }
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let w = layout.window_nodes();
    if w.is_empty() {
        return Err(Error::Domain("W has no interior trace nodes".into()));
    }
    let nt = layout.n_tangential_nodes();
    let cols = try_map_indexed(w.len(), exec, |j| {
        let mut f = vec![0.0; nt];
        f[w.nodes[j]] = 1.0;
        let u = solve_mixed_problem(&op, &f, None).map_err(|e| e.in_column(j))?;
        let flux = op.bottom_flux(&u, None);
        Ok(w.nodes.iter().map(|&t| c_s * flux[t]).collect::<Vec<f64>>())
    })?;
    let m = w.len();
    let pairing = DMatrix::from_fn(m, m, |i, j| cols[j][i]);
    Ok(DtnMatrix::new(DtnKind::Fractional, pairing, w, s, metric.fingerprint(), Some(c_s)))
}

/// `2^{2s-1} Γ(s) / Γ(1-s)`.
pub fn closed_form_cs(s: f64) -> f64 {
    2f64.powf(2.0 * s - 1.0) * gamma(s) / gamma(1.0 - s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub s: f64,
    pub c_s: f64,
    pub closed_form: f64,
    pub modes: Vec<usize>,
    pub wavenumbers: Vec<f64>,
    /// Raw symbols `flux / (mass · mode)` before scaling.
    pub raw_symbols: Vec<f64>,
    pub relative_errors: Vec<f64>,
}

/// Periodic n = 1 layout on `(-π, π)` used for calibration and symbol tests.
pub fn periodic_symbol_layout(nodes_x: usize, height: f64, nodes_y: usize, ratio: f64) -> Result<DomainLayout> {
    let pi = std::f64::consts::PI;
    let spec = GridSpec {
        n_tangential: 1,
        extent_x: pi,
        nodes_x,
        height_y: height,
        nodes_y,
        grading_ratio: ratio,
        periodic: true,
    };
    let b = |lo: f64, hi: f64| Region {
        boxes: vec![AxisBox { lo: vec![lo], hi: vec![hi] }],
    };
    let regions = RegionSpec {
        omega_prime: b(-0.3, 0.3),
        omega: b(-0.6, 0.6),
        omega_one: b(-1.0, 1.0),
        window_w: b(1.5, 2.5),
    };
    build_grid(&spec, &regions)
}

/// `c_s Λ_raw g / m` with Dirichlet data `g` on every trace node and `a = I`.
pub fn apply_dirichlet_symbol(layout: &DomainLayout, s: f64, c_s: f64, g: &[f64], opts: &SolverOptions) -> Result<Vec<f64>> {
    let metric = Metric::identity(layout);
    let op = assemble_extension_operator(layout, &metric, s, BottomCondition::Dirichlet, opts)?;
    let (u, _) = op.solve(g, None)?;
    Ok(op.flux_trace(&u, None).values.iter().map(|v| c_s * v).collect())
}

/// Fits `c_s` so that the lowest mode reproduces `ξ^{2s}` and reports the
/// symbol error on the modes `k ∈ modes`.
pub fn symbol_calibration(s: f64, layout: &DomainLayout, modes: &[usize], opts: &SolverOptions) -> Result<CalibrationReport> {
    if layout.dim() != 1 || !layout.tangential.periodic {
        return Err(Error::Precondition("calibration needs a periodic one-dimensional layout".into()));
    }
    if modes.is_empty() {
        return Err(Error::Input("no calibration modes".into()));
    }
    let metric = Metric::identity(layout);
    let op = assemble_extension_operator(layout, &metric, s, BottomCondition::Dirichlet, opts)?;
    let tg = &layout.tangential;
    let x_ext = tg.extent;
    let mass = tg.lumped_mass();
    let mut raw = Vec::new();
    let mut xis = Vec::new();
    for &k in modes {
        let xi = std::f64::consts::PI * k as f64 / x_ext;
        let g: Vec<f64> = (0..tg.n_nodes()).map(|t| (xi * tg.coords(t)[0]).sin()).collect();
        let (u, _) = op.solve(&g, None)?;
        let flux = op.bottom_flux(&u, None);
        let num: f64 = flux.iter().zip(&g).map(|(a, b)| a * b).sum();
        let den: f64 = g.iter().zip(&mass).map(|(a, m)| a * a * m).sum();
        raw.push(num / den);
        xis.push(xi);
    }
    let c_s = xis[0].powf(2.0 * s) / raw[0];
    let relative_errors: Vec<f64> = raw
        .iter()
        .zip(&xis)
        .map(|(d, xi)| (c_s * d - xi.powf(2.0 * s)).abs() / xi.powf(2.0 * s))
        .collect();
    if !(c_s > 0.0) || relative_errors.iter().any(|&e| !(e <= 0.1)) {
        return Err(Error::Calibration(format!(
            "symbol fit residual too large: {relative_errors:?} (c_s = {c_s:.4})"
        )));
    }
    Ok(CalibrationReport {
        s,
        c_s,
        closed_form: closed_form_cs(s),
        modes: modes.to_vec(),
        wavenumbers: xis,
        raw_symbols: raw,
        relative_errors,
    })
}

/// Default calibration: periodic grid with 256 nodes, `Y = 40`, 72 layers.
pub fn calibrate_cs(s: f64, opts: &SolverOptions) -> Result<CalibrationReport> {
    let layout = periodic_symbol_layout(256, 40.0, 72, 1.15)?;
    symbol_calibration(s, &layout, &[1, 2, 4], opts)
}

enum InteriorSolver {
    Banded(BandedCholesky),
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl InteriorSolver {
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match self {
            InteriorSolver::Banded(f) => f.solve(b),
            InteriorSolver::Dense(lu) => lu
                .solve(&DVector::from_column_slice(b))
                .map(|x| x.iter().copied().collect())
                .unwrap_or_else(|| vec![f64::NAN; b.len()]),
        }
    }
}

/// Discrete Dirichlet problem on the closure of Ω₁ for the form
/// `K + diag(qm)`, with boundary values on the Ω₁ loop.
pub struct LocalProblem {
    pub boundary: NodeSet,
    /// Closure nodes (global tangential indices).
    pub closure: Vec<usize>,
    interior: Vec<usize>,
    /// Global index → position in `interior`.
    slot: Vec<Option<usize>>,
    form: CsrMatrix,
    solver: InteriorSolver,
    n_total: usize,
    /// Smallest generalized eigenvalue of the interior block against the mass.
    pub lambda_min: f64,
}

fn interior_eigen_guard(
    form_ii: &CsrMatrix,
    mass_ii: &[f64],
    factor: Option<&BandedCholesky>,
) -> f64 {
    match factor {
        Some(f) => {
            // inverse iteration: smallest eigenvalue of M^{-1} A
            let n = mass_ii.len();
            let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
            let mut lambda = f64::NAN;
            for _ in 0..200 {
                let mx: Vec<f64> = x.iter().zip(mass_ii).map(|(a, m)| a * m).collect();
                let y = f.solve(&mx);
                let ay = form_ii.matvec(&y);
                let num: f64 = ay.iter().zip(&y).map(|(a, b)| a * b).sum();
                let den: f64 = y.iter().zip(mass_ii).map(|(a, m)| a * a * m).sum();
                let next = num / den;
                let norm = den.sqrt();
                x = y.iter().map(|v| v / norm).collect();
                if (next - lambda).abs() <= 1e-12 * next.abs() {
                    lambda = next;
                    break;
                }
                lambda = next;
            }
            lambda
        }
        None => {
            let n = mass_ii.len();
            let a = form_ii.to_dense();
            let c = DMatrix::from_fn(n, n, |i, j| a[(i, j)] / (mass_ii[i] * mass_ii[j]).sqrt());
            sym_eigenvalues(&c)
                .into_iter()
                .map(f64::abs)
                .fold(f64::INFINITY, f64::min)
        }
    }
}

impl LocalProblem {
    /// `potential_mass` is the lumped `q`-weighted mass on Ω₁ (zero for the
    /// conductivity problem).
    fn build(
        layout: &DomainLayout,
        region: RegionName,
        metric: &Metric,
        potential_mass: Option<&[f64]>,
        guard: Option<f64>,
    ) -> Result<Self> {
        let tg = &layout.tangential;
        let mask = layout.cell_mask(region);
        let boundary = layout.boundary_loop(region)?;
        let closure_set = layout.closure_nodes(region);
        let n = tg.n_nodes();
        let mut on_boundary = vec![false; n];
        for &t in &boundary.nodes {
            on_boundary[t] = true;
        }
        let interior: Vec<usize> = closure_set.nodes.iter().copied().filter(|&t| !on_boundary[t]).collect();
        let mut slot = vec![None; n];
        for (i, &t) in interior.iter().enumerate() {
            slot[t] = Some(i);
        }
        let mut trip = tangential::stiffness_triplets(tg, metric, Some(mask));
        if let Some(qm) = potential_mass {
            for &t in &closure_set.nodes {
                if qm[t] != 0.0 {
                    trip.push((t, t, qm[t]));
                }
            }
        }
        let form = CsrMatrix::from_triplets(n, n, trip);
        let mut itrip = Vec::new();
        for (i, &t) in interior.iter().enumerate() {
            for (t2, v) in form.row(t) {
                if let Some(j) = slot[t2] {
                    itrip.push((i, j, v));
                }
            }
        }
        let ni = interior.len();
        let form_ii = CsrMatrix::from_triplets(ni, ni, itrip);
        let mass_full = tangential::lumped_weighted_mass(tg, &vec![1.0; n], Some(mask));
        let mass_ii: Vec<f64> = interior.iter().map(|&t| mass_full[t]).collect();
        let (solver, lambda_min) = match BandedCholesky::factor(&form_ii) {
            Some(f) => {
                let l = if guard.is_some() {
                    interior_eigen_guard(&form_ii, &mass_ii, Some(&f))
                } else {
                    f64::NAN
                };
                (InteriorSolver::Banded(f), l)
            }
            None => {
                if potential_mass.is_none() {
                    return Err(Error::Numeric("interior stiffness is singular".into()));
                }
                let l = interior_eigen_guard(&form_ii, &mass_ii, None);
                (InteriorSolver::Dense(form_ii.to_dense().lu()), l)
            }
        };
        if let Some(threshold) = guard {
            if !(lambda_min.abs() > threshold) {
                return Err(Error::EigenvalueCollision(format!(
                    "smallest Dirichlet eigenvalue {lambda_min:.3e} is within {threshold:.1e} of zero"
                )));
            }
        }
        Ok(LocalProblem {
            boundary,
            closure: closure_set.nodes,
            interior,
            slot,
            form,
            solver,
            n_total: n,
            lambda_min,
        })
    }

    pub fn conductivity(layout: &DomainLayout, metric: &Metric) -> Result<Self> {
        Self::build(layout, RegionName::OmegaOne, metric, None, None)
    }

    /// Conductivity problem on another region (used for the Cauchy graph on Ω).
    pub fn conductivity_on(layout: &DomainLayout, region: RegionName, metric: &Metric) -> Result<Self> {
        Self::build(layout, region, metric, None, None)
    }

    /// `-Δ + q` with nodal potential `q`; rejects near-zero Dirichlet eigenvalues.
    pub fn schrodinger(layout: &DomainLayout, q: &[f64], threshold: f64) -> Result<Self> {
        if q.len() != layout.n_tangential_nodes() {
            return Err(Error::Input("potential does not match the layout".into()));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("potential must be bounded".into()));
        }
        let tg = &layout.tangential;
        let qm = tangential::lumped_weighted_mass(tg, q, Some(layout.cell_mask(RegionName::OmegaOne)));
        Self::build(layout, RegionName::OmegaOne, &Metric::identity(layout), Some(&qm), Some(threshold))
    }

    /// Discrete solution with boundary values `g` (on the loop), as a full
    /// tangential vector that vanishes off the closure of Ω₁.
    pub fn extend(&self, g: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.n_total];
        for (k, &t) in self.boundary.nodes.iter().enumerate() {
            v[t] = g[k];
        }
        let kv = self.form.matvec(&v);
        let rhs: Vec<f64> = self.interior.iter().map(|&t| -kv[t]).collect();
        let x = self.solver.solve(&rhs);
        for (i, &t) in self.interior.iter().enumerate() {
            v[t] = x[i];
        }
        v
    }

    /// The form applied to two full vectors.
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let kv = self.form.matvec(v);
        u.iter().zip(&kv).map(|(a, b)| a * b).sum()
    }

    pub fn is_interior(&self, t: usize) -> bool {
        self.slot[t].is_some()
    }

    /// Schur complement on the boundary loop.
    pub fn schur(&self) -> DMatrix<f64> {
        let m = self.boundary.len();
        let mut cols = Vec::with_capacity(m);
        for j in 0..m {
            let mut g = vec![0.0; m];
            g[j] = 1.0;
            let v = self.extend(&g);
            let kv = self.form.matvec(&v);
            cols.push(self.boundary.nodes.iter().map(|&t| kv[t]).collect::<Vec<f64>>());
        }
        let s = DMatrix::from_fn(m, m, |i, j| cols[j][i]);
        (&s + s.transpose()) * 0.5
    }
}

/// Local DtN `Λ_{1,Ω₁}^a` on the Ω₁ boundary hats.
pub fn local_dtn_matrix(layout: &DomainLayout, metric: &Metric) -> Result<DtnMatrix> {
    let p = LocalProblem::conductivity(layout, metric)?;
    let s = p.schur();
    Ok(DtnMatrix::new(DtnKind::Local, s, p.boundary, 0.5, metric.fingerprint(), None))
}

/// Local DtN of `a` on an arbitrary region of the layout.
pub fn local_dtn_matrix_on(layout: &DomainLayout, region: RegionName, metric: &Metric) -> Result<DtnMatrix> {
    let p = LocalProblem::conductivity_on(layout, region, metric)?;
    let s = p.schur();
    Ok(DtnMatrix::new(DtnKind::Local, s, p.boundary, 0.5, metric.fingerprint(), None))
}

/// Threshold for the zero-eigenvalue guard of the Schrödinger problem.
pub const EIGEN_GUARD: f64 = 1e-6;

/// DtN of `-Δ + q` on Ω₁.
pub fn schrodinger_dtn_matrix(layout: &DomainLayout, q: &[f64]) -> Result<DtnMatrix> {
    let p = LocalProblem::schrodinger(layout, q, EIGEN_GUARD)?;
    let s = p.schur();
    let mut h = sha2::Sha256::default();
    sha2::Digest::update(&mut h, b"q");
    for v in q {
        sha2::Digest::update(&mut h, v.to_le_bytes());
    }
    let fp = hex::encode(sha2::Digest::finalize(h));
    Ok(DtnMatrix::new(DtnKind::Schrodinger, s, p.boundary, 0.5, fp, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlessandriniReport {
    /// `((Λ^{a1} - Λ^{a2}) g1, g2)`.
    pub lhs: f64,
    /// `∫ ∇v1 · (a1 - a2) ∇v2`.
    pub rhs: f64,
    pub scale: f64,
    pub residual: f64,
}

fn report(lhs: f64, rhs: f64, scale: f64) -> AlessandriniReport {
    let diff = (lhs - rhs).abs();
    AlessandriniReport {
        lhs,
        rhs,
        scale,
        residual: if scale > 0.0 { diff / scale } else { diff },
    }
}

/// Alessandrini identity for two conductivities that agree outside Ω. `g1`
/// and `g2` are given on the Ω₁ loop. The scale is
/// `‖Λ^{a1} g1‖·‖g2‖ + ‖Λ^{a2} g1‖·‖g2‖` in the loop mass norm.
pub fn alessandrini_residual(layout: &DomainLayout, a1: &Metric, a2: &Metric, g1: &[f64], g2: &[f64]) -> Result<AlessandriniReport> {
    for t in 0..layout.n_tangential_nodes() {
        if !layout.node_is_interior(RegionName::Omega, t) && a1.at(t) != a2.at(t) {
            return Err(Error::Metric(format!("conductivities differ outside omega at node {t}")));
        }
    }
    let p1 = LocalProblem::conductivity(layout, a1)?;
    let p2 = LocalProblem::conductivity(layout, a2)?;
    let m = p1.boundary.len();
    if g1.len() != m || g2.len() != m {
        return Err(Error::Input("boundary data do not match the loop".into()));
    }
    let s1 = p1.schur();
    let s2 = p2.schur();
    let v1 = p1.extend(g1);
    let v2 = p2.extend(g2);
    let (x1, x2) = (DVector::from_column_slice(g1), DVector::from_column_slice(g2));
    let lhs = x2.dot(&((&s1 - &s2) * &x1));
    let diff: Vec<Tensor> = a1.difference(a2);
    let rhs = tangential::bilinear_form(&layout.tangential, &diff, Some(layout.cell_mask(RegionName::OmegaOne)), &v1, &v2);
    let scale = x2.dot(&(&s1 * &x2)).abs().sqrt() * x1.dot(&(&s1 * &x1)).abs().sqrt()
        + x2.dot(&(&s2 * &x2)).abs().sqrt() * x1.dot(&(&s2 * &x1)).abs().sqrt();
    Ok(report(lhs, rhs, scale))
}

/// Schrödinger variant: `((Λ_{q1} - Λ_{q2}) g1, g2) = ∫ (q1 - q2) w1 w2`.
pub fn schrodinger_alessandrini(layout: &DomainLayout, q1: &[f64], q2: &[f64], g1: &[f64], g2: &[f64]) -> Result<AlessandriniReport> {
    let p1 = LocalProblem::schrodinger(layout, q1, EIGEN_GUARD)?;
    let p2 = LocalProblem::schrodinger(layout, q2, EIGEN_GUARD)?;
    let m = p1.boundary.len();
    if g1.len() != m || g2.len() != m {
        return Err(Error::Input("boundary data do not match the loop".into()));
    }
    let s1 = p1.schur();
    let s2 = p2.schur();
    let w1 = p1.extend(g1);
    let w2 = p2.extend(g2);
    let (x1, x2) = (DVector::from_column_slice(g1), DVector::from_column_slice(g2));
    let lhs = x2.dot(&((&s1 - &s2) * &x1));
    let dq: Vec<f64> = q1.iter().zip(q2).map(|(a, b)| a - b).collect();
    let dm = tangential::lumped_weighted_mass(&layout.tangential, &dq, Some(layout.cell_mask(RegionName::OmegaOne)));
    let rhs: f64 = (0..w1.len()).map(|t| dm[t] * w1[t] * w2[t]).sum();
    let scale = x2.dot(&(&s1 * &x2)).abs().sqrt() * x1.dot(&(&s1 * &x1)).abs().sqrt()
        + x2.dot(&(&s2 * &x2)).abs().sqrt() * x1.dot(&(&s2 * &x1)).abs().sqrt();
    Ok(report(lhs, rhs, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridSpec, RegionSpec};

    fn layout_2d(nodes: usize) -> DomainLayout {
        let b = |lo: [f64; 2], hi: [f64; 2]| Region::single(&lo, &hi);
        let spec = GridSpec {
            n_tangential: 2,
            extent_x: 3.0,
            nodes_x: nodes,
            height_y: 6.0,
            nodes_y: 16,
            grading_ratio: 1.3,
            periodic: false,
        };
        let regions = RegionSpec {
            omega_prime: b([-0.4, -0.4], [0.4, 0.4]),
            omega: b([-0.75, -0.75], [0.75, 0.75]),
            omega_one: b([-1.1, -1.1], [1.1, 1.1]),
            window_w: b([1.5, -0.6], [2.3, 0.6]),
        };
        build_grid(&spec, &regions).unwrap()
    }

    #[test]
    fn closed_form_at_one_half() {
        assert!((closed_form_cs(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn local_dtn_kills_constants_and_is_symmetric() {
        let l = layout_2d(32);
        let m = Metric::isotropic_bump(&l, 0.3, 0.5).unwrap();
        let d = local_dtn_matrix(&l, &m).unwrap();
        let ones = vec![1.0; d.dim()];
        let r = d.apply(&ones);
        assert!(r.iter().all(|v| v.abs() < 1e-9), "{:?}", &r[..4]);
        assert!(d.symmetry_defect() < 1e-12);
    }

    #[test]
    fn schrodinger_with_zero_potential_is_local() {
        let l = layout_2d(32);
        let a = local_dtn_matrix(&l, &Metric::identity(&l)).unwrap();
        let b = schrodinger_dtn_matrix(&l, &vec![0.0; l.n_tangential_nodes()]).unwrap();
        let gap = (&a.pairing - &b.pairing).abs().max();
        assert!(gap < 1e-9 * a.pairing.abs().max());
    }

    #[test]
    fn eigenvalue_guard_fires_near_a_dirichlet_eigenvalue() {
        let l = layout_2d(24);
        let n = l.n_tangential_nodes();
        // shift by the smallest eigenvalue of the Laplacian on Ω₁
        let p = LocalProblem::schrodinger(&l, &vec![0.0; n], 0.0).unwrap();
        let q = vec![-p.lambda_min; n];
        assert!(matches!(schrodinger_dtn_matrix(&l, &q), Err(Error::EigenvalueCollision(_))));
    }

    #[test]
    fn alessandrini_same_metric_is_zero() {
        let l = layout_2d(24);
        let a = Metric::isotropic_bump(&l, 0.2, 0.5).unwrap();
        let m = l.boundary_loop(RegionName::OmegaOne).unwrap().len();
        let g: Vec<f64> = (0..m).map(|k| (k as f64 * 0.3).sin()).collect();
        let r = alessandrini_residual(&l, &a, &a, &g, &g).unwrap();
        assert!(r.lhs.abs() < 1e-10 && r.rhs.abs() < 1e-10);
    }

    #[test]
    fn fractional_dtn_is_symmetric_and_deterministic() {
        let l = layout_2d(24);
        let m = Metric::identity(&l);
        let opts = SolverOptions::default();
        let a = fractional_dtn_matrix(&l, &m, 0.75, 1.0, &opts, Execution::Parallel).unwrap();
        let b = fractional_dtn_matrix(&l, &m, 0.75, 1.0, &opts, Execution::Sequential).unwrap();
        assert!(a.symmetry_defect() < 1e-6, "{}", a.symmetry_defect());
        assert_eq!(a.pairing, b.pairing);
        // off-diagonal entries of the nonlocal operator are negative
        assert!(a.pairing[(0, 1)] < 0.0 && a.pairing[(0, 0)] > 0.0);
    }
}
