//! The vertical-integral reduction `v^f = ∫ t^{1-2s} ũ^f(·, t) dt` and its
//! diagnostics.
//!
//! The `t`-quadrature reuses the graded vertical mesh: layer `k` carries the
//! exact weight `∫ y^{1-2s}` of its dual cell clipped to the window. With
//! these weights the discrete extension equation telescopes, so
//! `K_a v` at Ω nodes only sees the window edges (and the top face when the
//! window reaches it).

use crate::dtn::LocalProblem;
use crate::elliptic::{
    assemble_extension_operator, solve_mixed_problem, weighted_neumann_trace, BottomCondition, ExtensionField,
    SolverOptions,
};
use crate::grid::{DomainLayout, NodeSet, NodeSetKind, Region, RegionName, VerticalMesh};
use crate::heat::linear_fit;
use crate::linalg::CsrMatrix;
use crate::metric::Metric;
use crate::sobolev::{gram_matrix, gram_norm, h_minus_one_norm, SpectralBasis};
use crate::tangential;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Margin required above `n + 2s = 2` (tail integrability).
pub const INTEGRABILITY_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub window: (f64, f64),
    pub s: f64,
    pub quadrature: String,
}

/// `n + 2s > 2 + margin`, otherwise the `L`-tail does not decay.
pub fn check_integrability(n: usize, s: f64) -> Result<()> {
    if !(n as f64 + 2.0 * s > 2.0 + INTEGRABILITY_MARGIN) {
        return Err(Error::Precondition(format!(
            "n + 2s = {:.3} must exceed 2 + {INTEGRABILITY_MARGIN}: the tail bound decays like L^(2-n-2s)",
            n as f64 + 2.0 * s
        )));
    }
    Ok(())
}

/// Per-layer quadrature weights for `∫_lo^hi t^{1-2s} · dt`.
pub fn vertical_weights(mesh: &VerticalMesh, s: f64, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo >= 0.0 && lo < hi && hi <= mesh.height() * (1.0 + 1e-12)) {
        return Err(Error::Input(format!(
            "window [{lo}, {hi}] must satisfy 0 <= h < L <= Y = {}",
            mesh.height()
        )));
    }
    Ok(mesh.window_weights(s, lo, hi.min(mesh.height())))
}

fn integrate(field: &ExtensionField, w: &[f64]) -> Vec<f64> {
    let ny = field.ny();
    let nt = field.values.len() / ny;
    (0..nt)
        .map(|t| (0..ny).map(|k| w[k] * field.values[t * ny + k]).sum())
        .collect()
}

/// Truncated vertical integral without the integrability check (used for
/// tails and for `n = 1` diagnostics).
pub fn vertical_integral_unchecked(layout: &DomainLayout, field: &ExtensionField, s: f64, lo: f64, hi: f64) -> Result<PotentialField> {
    if !field.on_layout(layout) {
        return Err(Error::Input("field does not live on this layout".into()));
    }
    let w = vertical_weights(&layout.vertical, s, lo, hi)?;
    Ok(PotentialField {
        values: integrate(field, &w),
        window: (lo, hi),
        s,
        quadrature: "dual-cell exact weights on the graded mesh".into(),
    })
}

pub fn vertical_integral(layout: &DomainLayout, field: &ExtensionField, s: f64, lo: f64, hi: f64) -> Result<PotentialField> {
    check_integrability(layout.dim(), s)?;
    vertical_integral_unchecked(layout, field, s, lo, hi)
}

/// Cells whose center lies in `region`.
pub fn region_cell_mask(layout: &DomainLayout, region: &Region) -> Vec<bool> {
    let tg = &layout.tangential;
    let n = layout.dim();
    (0..tg.n_cells()).map(|c| region.contains(&tg.cell_center(c)[..n])).collect()
}

/// `‖v‖_{H¹(D)}` with lumped mass and the `a = I` stiffness on the masked cells.
pub fn h1_norm(layout: &DomainLayout, v: &[f64], mask: &[bool]) -> f64 {
    let tg = &layout.tangential;
    let m = tangential::lumped_weighted_mass(tg, &vec![1.0; tg.n_nodes()], Some(mask));
    let l2: f64 = v.iter().zip(&m).map(|(a, b)| a * a * b).sum();
    let grad = tangential::bilinear_form(tg, &vec![crate::metric::IDENTITY; tg.n_nodes()], Some(mask), v, v);
    (l2 + grad).max(0.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub x: Vec<f64>,
    pub norms: Vec<f64>,
    pub slope: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// `‖∫_L^Y t^{1-2s} ũ‖_{H¹(D)}` against `L`.
    pub tail: SlopeFit,
    /// `‖∫_0^h t^{1-2s} ũ‖_{H¹(D)}` against `h`.
    pub lower: SlopeFit,
    pub reference_tail: f64,
    pub reference_lower: f64,
}

fn fit(x: &[f64], norms: &[f64]) -> Result<SlopeFit> {
    if let Some(v) = norms.iter().find(|&&v| !(v >= 1e-14)) {
        return Err(Error::Underflow(format!("norm {v:.3e} below 1e-14")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = norms.iter().map(|v| v.ln()).collect();
    let (slope, _, r2) = linear_fit(&lx, &ly);
    Ok(SlopeFit {
        x: x.to_vec(),
        norms: norms.to_vec(),
        slope,
        r2,
    })
}

/// Slopes of the two truncation pieces of the vertical integral for an
/// already solved extension. The upper piece runs to the top face.
pub fn tail_slopes(layout: &DomainLayout, field: &ExtensionField, s: f64, l_list: &[f64], h_list: &[f64], d: &Region) -> Result<TailReport> {
    check_integrability(layout.dim(), s)?;
    let y_top = layout.vertical.height();
    if l_list.len() < 2 || h_list.len() < 2 {
        return Err(Error::Input("need at least two L and two h values".into()));
    }
    if l_list.iter().any(|&l| !(1.0..=0.5 * y_top * (1.0 + 1e-12)).contains(&l)) {
        return Err(Error::Input("L values must lie in [1, Y/2]".into()));
    }
    if h_list.iter().any(|&h| !(h > 0.0 && h <= 1.0)) {
        return Err(Error::Input("h values must lie in (0, 1]".into()));
    }
    let mask = region_cell_mask(layout, d);
    if !mask.iter().any(|&b| b) {
        return Err(Error::Domain("norm region D contains no cell".into()));
    }
    let mut tails = Vec::new();
    for &l in l_list {
        let p = vertical_integral_unchecked(layout, field, s, l, y_top)?;
        tails.push(h1_norm(layout, &p.values, &mask));
    }
    let mut lowers = Vec::new();
    for &h in h_list {
        let p = vertical_integral_unchecked(layout, field, s, 0.0, h)?;
        lowers.push(h1_norm(layout, &p.values, &mask));
    }
    let n = layout.dim() as f64;
    Ok(TailReport {
        tail: fit(l_list, &tails)?,
        lower: fit(h_list, &lowers)?,
        reference_tail: 2.0 - n - 2.0 * s,
        reference_lower: 1.0 - s,
    })
}

/// Solves the mixed problem for `f` and fits both tail slopes.
#[allow(clippy::too_many_arguments)]
pub fn tail_bound_experiment(
    layout: &DomainLayout,
    metric: &Metric,
    f: &[f64],
    s: f64,
    l_list: &[f64],
    h_list: &[f64],
    d: &Region,
    opts: &SolverOptions,
) -> Result<TailReport> {
    check_integrability(layout.dim(), s)?;
    if f.iter().all(|&v| v == 0.0) {
        return Err(Error::Underflow("zero datum: every tail norm vanishes".into()));
    }
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let u = solve_mixed_problem(&op, f, None)?;
    tail_slopes(layout, &u, s, l_list, h_list, d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyPair {
    pub nodes: Vec<usize>,
    pub g: Vec<f64>,
    /// Outward conormal derivative `ν · a ∇v`.
    pub flux: Vec<f64>,
}

impl CauchyPair {
    pub fn write_csv(&self, layout: &DomainLayout, out: &mut impl Write) -> Result<()> {
        writeln!(out, "node,x1,x2,g,flux")?;
        for (k, &t) in self.nodes.iter().enumerate() {
            let c = layout.tangential.coords(t);
            writeln!(out, "{t},{:.10e},{:.10e},{:.15e},{:.15e}", c[0], c[1], self.g[k], self.flux[k])?;
        }
        Ok(())
    }
}

/// Second-order one-sided derivative along the inward direction `(di, dj)`:
/// returns the outward normal derivative `-(−3v0 + 4v1 − v2)/(2h)`.
fn one_sided(layout: &DomainLayout, v: &[f64], t: usize, di: isize, dj: isize) -> Result<f64> {
    let tg = &layout.tangential;
    let (i, j) = tg.split(t);
    let n = tg.nodes_x as isize;
    let at = |k: isize| -> Result<f64> {
        let (a, b) = (i as isize + k * di, j as isize + k * dj);
        if a < 0 || b < 0 || a >= n || b >= n || (layout.dim() == 1 && b != 0) {
            return Err(Error::Domain("one-sided stencil leaves the grid".into()));
        }
        Ok(v[tg.index(a as usize, b as usize)])
    };
    let (v0, v1, v2) = (at(0)?, at(1)?, at(2)?);
    Ok((3.0 * v0 - 4.0 * v1 + v2) / (2.0 * tg.h))
}

/// Cauchy data of `v` on the boundary loop of `region`. At each loop node the
/// outward normals of the adjacent faces are averaged.
pub fn cauchy_data(layout: &DomainLayout, v: &[f64], metric: &Metric, region: RegionName) -> Result<CauchyPair> {
    let set = layout.boundary_loop(region)?;
    let tg = &layout.tangential;
    let mask = layout.cell_mask(region);
    let mut flux = Vec::with_capacity(set.len());
    for &t in &set.nodes {
        let a = metric.at(t);
        if layout.dim() == 1 {
            let cells = tg.node_cells(t);
            let inside_right = cells.iter().any(|&c| mask[c] && tg.cell_center(c)[0] > tg.coords(t)[0]);
            let d = if inside_right { 1 } else { -1 };
            flux.push(a[0] * one_sided(layout, v, t, d, 0)?);
            continue;
        }
        // per axis, the inward side is the one with more inside cells; ties
        // mean the axis is tangential at t. Corners average their two faces.
        let p = tg.coords(t);
        let cells = tg.node_cells(t);
        let mut acc = 0.0;
        let mut faces = 0.0;
        for axis in 0..2 {
            let (mut plus, mut minus) = (0, 0);
            for &c in &cells {
                if mask[c] {
                    if tg.cell_center(c)[axis] > p[axis] {
                        plus += 1;
                    } else {
                        minus += 1;
                    }
                }
            }
            if plus == minus {
                continue;
            }
            let d = if plus > minus { 1 } else { -1 };
            let (di, dj) = if axis == 0 { (d, 0) } else { (0, d) };
            // a is the identity on the loop (admissibility), so the conormal
            // derivative is a_νν ∂_ν v
            acc += a[2 * axis] * one_sided(layout, v, t, di, dj)?;
            faces += 1.0;
        }
        if faces == 0.0 {
            return Err(Error::Domain(format!("cannot orient the boundary at node {t}")));
        }
        flux.push(acc / faces);
    }
    let g = set.nodes.iter().map(|&t| v[t]).collect();
    Ok(CauchyPair {
        nodes: set.nodes,
        g,
        flux,
    })
}

/// `K_a v` (the weak form of `-∇'·a∇'v`) as a nodal functional.
pub fn weak_divergence(layout: &DomainLayout, metric: &Metric, v: &[f64]) -> Vec<f64> {
    tangential::stiffness(&layout.tangential, metric, None).matvec(v)
}

/// `‖∇'·a∇'v‖_{H^{-1}(Ω)}`: the functional at interior Ω nodes, converted
/// to a density and measured with the order −1 Gram.
pub fn reduction_residual(layout: &DomainLayout, metric: &Metric, v: &PotentialField) -> Result<f64> {
    let r = weak_divergence(layout, metric, &v.values);
    let set = layout.interior_nodes(RegionName::Omega);
    let dens: Vec<f64> = set.nodes.iter().zip(&set.masses).map(|(&t, m)| r[t] / m).collect();
    h_minus_one_norm(&dens, &set)
}

/// Interior nodes of Ω₁ that are not in the closure of Ω.
pub fn annulus_nodes(layout: &DomainLayout) -> NodeSet {
    let full = layout.interior_nodes(RegionName::OmegaOne);
    let keep: Vec<bool> = full.nodes.iter().map(|&t| !layout.node_in_closure(RegionName::Omega, t)).collect();
    let mut local = vec![usize::MAX; full.nodes.len()];
    let mut nodes = Vec::new();
    let mut masses = Vec::new();
    for (k, &t) in full.nodes.iter().enumerate() {
        if keep[k] {
            local[k] = nodes.len();
            nodes.push(t);
            masses.push(full.masses[k]);
        }
    }
    let edges = full
        .edges
        .iter()
        .filter(|&&(a, b, _)| keep[a] && keep[b])
        .map(|&(a, b, w)| (local[a], local[b], w))
        .collect();
    NodeSet {
        kind: NodeSetKind::RegionInterior,
        nodes,
        masses,
        edges,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExteriorResidual {
    /// `‖∇'·a∇'v + T‖_{H^{-1}}` with `T = -lim y^{1-2s}∂_y ũ`.
    pub absolute: f64,
    pub trace_norm: f64,
    pub relative: f64,
}

/// Exterior source identity on Ω₁∖Ω. The trace comes from the two-layer fit
/// of the field, independent of the discrete flux. `c_s` converts the
/// calibrated fractional trace back to the raw weighted Neumann trace:
/// `T = (c_s T_raw) / c_s`, so it only enters through the calibration
/// consistency of the reported values.
pub fn exterior_source_residual(
    layout: &DomainLayout,
    field: &ExtensionField,
    v: &PotentialField,
    metric: &Metric,
    c_s: f64,
) -> Result<ExteriorResidual> {
    let set = annulus_nodes(layout);
    if set.is_empty() {
        return Err(Error::Domain("annulus has no interior nodes".into()));
    }
    let trace = weighted_neumann_trace(field, v.s)?;
    let frac: Vec<f64> = trace.values.iter().map(|t| c_s * t).collect();
    let r = weak_divergence(layout, metric, &v.values);
    let dens: Vec<f64> = set
        .nodes
        .iter()
        .zip(&set.masses)
        .map(|(&t, m)| -r[t] / m + frac[t] / c_s)
        .collect();
    let tr: Vec<f64> = set.nodes.iter().map(|&t| frac[t] / c_s).collect();
    let absolute = h_minus_one_norm(&dens, &set)?;
    let trace_norm = h_minus_one_norm(&tr, &set)?;
    Ok(ExteriorResidual {
        absolute,
        trace_norm,
        relative: if trace_norm > 0.0 { absolute / trace_norm } else { absolute },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiouvilleResult {
    pub q: Vec<f64>,
    pub w: Vec<f64>,
}

/// `q = γ^{-1/2} Δ_h γ^{1/2}` (centered second differences) and `w = γ^{1/2} v`.
pub fn liouville_reduce(layout: &DomainLayout, gamma: &[f64], theta1: f64, v: &[f64]) -> Result<LiouvilleResult> {
    let tg = &layout.tangential;
    let n = tg.n_nodes();
    if gamma.len() != n || v.len() != n {
        return Err(Error::Input("gamma and v must live on the tangential grid".into()));
    }
    if let Some(t) = (0..n).find(|&t| !(gamma[t] >= theta1 * (1.0 - 1e-12))) {
        return Err(Error::Admissibility(format!("gamma {} below theta1 {theta1} at node {t}", gamma[t])));
    }
    let loop_nodes = layout.boundary_loop(RegionName::OmegaOne)?;
    if loop_nodes.nodes.iter().any(|&t| gamma[t] != 1.0) {
        return Err(Error::Admissibility("gamma must equal 1 near the boundary of omega_1".into()));
    }
    let root: Vec<f64> = gamma.iter().map(|g| g.sqrt()).collect();
    let lap = grid_laplacian(layout, &root);
    let q = (0..n).map(|t| lap[t] / root[t]).collect();
    let w = v.iter().zip(&root).map(|(a, b)| a * b).collect();
    Ok(LiouvilleResult { q, w })
}

/// Centered `Δ_h` (3- or 5-point); zero on lateral nodes.
pub fn grid_laplacian(layout: &DomainLayout, u: &[f64]) -> Vec<f64> {
    let tg = &layout.tangential;
    let h2 = tg.h * tg.h;
    let nx = tg.nodes_x;
    (0..tg.n_nodes())
        .map(|t| {
            if tg.is_lateral(t) {
                return 0.0;
            }
            let (i, j) = tg.split(t);
            let mut acc = u[tg.index(i - 1, j)] + u[tg.index(i + 1, j)] - 2.0 * u[t];
            if layout.dim() == 2 && j > 0 && j + 1 < nx {
                acc += u[tg.index(i, j - 1)] + u[tg.index(i, j + 1)] - 2.0 * u[t];
            }
            acc / h2
        })
        .collect()
}

/// Max of `|(-Δ_h + q) w|` over Ω₁ nodes at least two cells from its boundary,
/// relative to `max |w|`.
pub fn schrodinger_residual(layout: &DomainLayout, q: &[f64], w: &[f64]) -> f64 {
    let lap = grid_laplacian(layout, w);
    let tg = &layout.tangential;
    let region = layout.region(RegionName::OmegaOne);
    let n = layout.dim();
    let scale = w.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    (0..tg.n_nodes())
        .filter(|&t| {
            let x = tg.coords(t);
            region.contains(&x[..n]) && boundary_distance(region, &x[..n]) >= 2.0 * tg.h * (1.0 - 1e-9)
        })
        .map(|t| (-lap[t] + q[t] * w[t]).abs())
        .fold(0.0, f64::max)
        / scale
}

fn boundary_distance(region: &Region, x: &[f64]) -> f64 {
    region
        .boxes
        .iter()
        .filter(|b| b.contains(x))
        .map(|b| (0..x.len()).map(|i| (x[i] - b.lo[i]).min(b.hi[i] - x[i])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiouvilleGap {
    pub gap: f64,
    pub reference: f64,
    pub relative: f64,
}

/// Gram-weighted gap between `Λ_q` (Liouville potential of `γ`) and `Λ₁^{γI}`.
pub fn liouville_consistency(layout: &DomainLayout, gamma_metric: &Metric) -> Result<LiouvilleGap> {
    let gamma = gamma_metric
        .gamma()
        .ok_or_else(|| Error::Admissibility("Liouville reduction needs an isotropic metric".into()))?
        .to_vec();
    let zero = vec![0.0; gamma.len()];
    let red = liouville_reduce(layout, &gamma, gamma_metric.theta1, &zero)?;
    let lq = crate::dtn::schrodinger_dtn_matrix(layout, &red.q)?;
    let lg = crate::dtn::local_dtn_matrix(layout, gamma_metric)?;
    let basis = SpectralBasis::new(&lg.nodes)?;
    let gap = lq.distance(&lg, &basis)?;
    let reference = lg.operator_norm(&basis)?;
    Ok(LiouvilleGap {
        gap,
        reference,
        relative: gap / reference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedBound {
    pub ratios: Vec<f64>,
    pub max: f64,
}

/// `‖f‖_{H̃^s(W)}` with the order-`s` Gram on the window nodes.
pub fn datum_norm(layout: &DomainLayout, f: &[f64], s: f64) -> Result<f64> {
    let set = layout.window_nodes();
    let g = gram_matrix(&set, s)?;
    Ok(gram_norm(&g, &set.restrict(f)))
}

/// Ratios `‖v^f‖_{H¹(Ω)} / ‖f‖_{H̃^s(W)}` over a family of data.
pub fn integrated_bound_check(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    f_list: &[Vec<f64>],
    window: (f64, f64),
    opts: &SolverOptions,
) -> Result<IntegratedBound> {
    check_integrability(layout.dim(), s)?;
    if f_list.is_empty() || f_list.iter().any(|f| f.iter().all(|&v| v == 0.0)) {
        return Err(Error::Precondition("every datum must be nontrivial".into()));
    }
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let set = layout.window_nodes();
    let g = gram_matrix(&set, s)?;
    let mask = layout.cell_mask(RegionName::Omega).to_vec();
    let mut ratios = Vec::with_capacity(f_list.len());
    for f in f_list {
        let u = solve_mixed_problem(&op, f, None)?;
        let v = vertical_integral(layout, &u, s, window.0, window.1)?;
        ratios.push(h1_norm(layout, &v.values, &mask) / gram_norm(&g, &set.restrict(f)));
    }
    let max = ratios.iter().copied().fold(0.0, f64::max);
    Ok(IntegratedBound { ratios, max })
}

/// Error budget of one reduction run, persisted as JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub window_h: f64,
    pub window_l: f64,
    /// Cauchy-graph gap produced by the `[0, h]` piece.
    pub tail_h: f64,
    /// Cauchy-graph gap produced by the `[L, Y]` piece.
    pub tail_l: f64,
    /// Gap of the discrete harmonic extension of the same boundary data
    /// (stencil flux against the weak-form DtN).
    pub discretization: f64,
    pub solver_residual: f64,
    pub mesh_level: u32,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ReductionOutcome {
    pub field: ExtensionField,
    pub potential: PotentialField,
    pub cauchy: CauchyPair,
    pub residual: f64,
    /// `‖Λ_{1,Ω}(g) - ∂_ν v‖_{H^{-1/2}(∂Ω)}`.
    pub graph_gap: f64,
    pub budget: ErrorBudget,
}

/// Full reduction pipeline for one datum.
pub fn reduce(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    f: &[f64],
    window: (f64, f64),
    opts: &SolverOptions,
    mesh_level: u32,
) -> Result<ReductionOutcome> {
    check_integrability(layout.dim(), s)?;
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let u = solve_mixed_problem(&op, f, None)?;
    let solver_residual = op.residual_norm(&u, f, None);
    let (h, l) = window;
    let y_top = layout.vertical.height();
    let v = vertical_integral(layout, &u, s, h, l)?;
    let residual = reduction_residual(layout, metric, &v)?;

    let local = LocalProblem::conductivity_on(layout, RegionName::Omega, metric)?;
    let dtn = local.schur();
    let loop_set = local.boundary.clone();
    let g_minus = gram_matrix(&loop_set, -0.5)?;
    let gap_of = |values: &[f64]| -> Result<(CauchyPair, f64)> {
        let cp = cauchy_data(layout, values, metric, RegionName::Omega)?;
        let lg = &dtn * nalgebra::DVector::from_column_slice(&cp.g);
        let diff: Vec<f64> = (0..cp.g.len()).map(|k| lg[k] / loop_set.masses[k] - cp.flux[k]).collect();
        Ok((cp, gram_norm(&g_minus, &diff)))
    };
    let (cauchy, graph_gap) = gap_of(&v.values)?;
    let tail_h = if h > 0.0 {
        gap_of(&vertical_integral_unchecked(layout, &u, s, 0.0, h)?.values)?.1
    } else {
        0.0
    };
    let tail_l = if l < y_top {
        gap_of(&vertical_integral_unchecked(layout, &u, s, l, y_top)?.values)?.1
    } else {
        0.0
    };
    let harmonic = local.extend(&cauchy.g);
    let discretization = gap_of(&harmonic)?.1;
    let budget = ErrorBudget {
        window_h: h,
        window_l: l,
        tail_h,
        tail_l,
        discretization,
        solver_residual,
        mesh_level,
        total: tail_h + tail_l + discretization,
    };
    Ok(ReductionOutcome {
        field: u,
        potential: v,
        cauchy,
        residual,
        graph_gap,
        budget,
    })
}

/// Sparse `K_a` restricted to the given cell mask (for external checks).
pub fn masked_stiffness(layout: &DomainLayout, metric: &Metric, mask: &[bool]) -> CsrMatrix {
    tangential::stiffness(&layout.tangential, metric, Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec, RegionSpec};

    fn layout(n: usize, nodes: usize) -> DomainLayout {
        let spec = GridSpec {
            n_tangential: n,
            extent_x: 3.0,
            nodes_x: nodes,
            height_y: 8.0,
            nodes_y: 24,
            grading_ratio: 1.3,
            periodic: false,
        };
        let r = |lo: &[f64], hi: &[f64]| Region::single(lo, hi);
        let regions = if n == 2 {
            RegionSpec {
                omega_prime: r(&[-0.4, -0.4], &[0.4, 0.4]),
                omega: r(&[-0.75, -0.75], &[0.75, 0.75]),
                omega_one: r(&[-1.1, -1.1], &[1.1, 1.1]),
                window_w: r(&[1.5, -0.6], &[2.3, 0.6]),
            }
        } else {
            RegionSpec {
                omega_prime: r(&[-0.4], &[0.4]),
                omega: r(&[-0.75], &[0.75]),
                omega_one: r(&[-1.1], &[1.1]),
                window_w: r(&[1.5], &[2.3]),
            }
        };
        build_grid(&spec, &regions).unwrap()
    }

    #[test]
    fn constant_field_integrates_in_closed_form() {
        let l = layout(2, 16);
        let s = 0.75;
        let f = ExtensionField::from_fn(&l, s, |_, _| 1.0);
        let (h, big_l) = (0.05, 3.3);
        let v = vertical_integral(&l, &f, s, h, big_l).unwrap();
        let exact = (big_l.powf(2.0 - 2.0 * s) - h.powf(2.0 - 2.0 * s)) / (2.0 - 2.0 * s);
        assert!(v.values.iter().all(|x| (x - exact).abs() < 1e-10 * exact));
        let z = vertical_integral(&l, &ExtensionField::zeros(&l, s), s, h, big_l).unwrap();
        assert!(z.values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn borderline_integrability_is_rejected() {
        let l = layout(1, 64);
        let f = ExtensionField::zeros(&l, 0.5);
        assert!(matches!(vertical_integral(&l, &f, 0.5, 0.1, 2.0), Err(Error::Precondition(_))));
        assert!(vertical_integral(&layout(2, 16), &ExtensionField::zeros(&layout(2, 16), 0.75), 0.75, 0.1, 20.0).is_err());
    }

    #[test]
    fn cauchy_data_of_linear_functions() {
        let l = layout(2, 32);
        let m = Metric::identity(&l);
        let tg = &l.tangential;
        let c: Vec<f64> = vec![2.5; tg.n_nodes()];
        let cp = cauchy_data(&l, &c, &m, RegionName::OmegaOne).unwrap();
        assert!(cp.flux.iter().all(|f| f.abs() < 1e-9));
        let lin: Vec<f64> = (0..tg.n_nodes()).map(|t| 0.7 * tg.coords(t)[0] - 0.2 * tg.coords(t)[1]).collect();
        let cp = cauchy_data(&l, &lin, &m, RegionName::Omega).unwrap();
        // on straight faces the conormal derivative is ν·∇ℓ
        let region = l.region(RegionName::Omega);
        let b = &region.boxes[0];
        for (k, &t) in cp.nodes.iter().enumerate() {
            let x = tg.coords(t);
            let on_right = (x[0] - b.hi[0]).abs() < 0.5 * tg.h;
            let on_top = (x[1] - b.hi[1]).abs() < 0.5 * tg.h;
            let on_left = (x[0] - b.lo[0]).abs() < 0.5 * tg.h;
            let on_bottom = (x[1] - b.lo[1]).abs() < 0.5 * tg.h;
            let count = [on_right, on_top, on_left, on_bottom].iter().filter(|&&v| v).count();
            if count == 1 {
                let expect = if on_right {
                    0.7
                } else if on_left {
                    -0.7
                } else if on_top {
                    -0.2
                } else {
                    0.2
                };
                assert!((cp.flux[k] - expect).abs() < 1e-8, "{} vs {expect}", cp.flux[k]);
            }
        }
    }

    #[test]
    fn liouville_of_constant_gamma_is_trivial() {
        let l = layout(2, 24);
        let n = l.n_tangential_nodes();
        let v: Vec<f64> = (0..n).map(|t| t as f64 * 0.01).collect();
        let r = liouville_reduce(&l, &vec![1.0; n], 0.5, &v).unwrap();
        assert!(r.q.iter().all(|&q| q == 0.0));
        assert_eq!(r.w, v);
        assert!(matches!(
            liouville_reduce(&l, &vec![0.1; n], 0.5, &v),
            Err(Error::Admissibility(_))
        ));
    }

    #[test]
    fn synthetic_constant_in_y_residual_matches_direct_evaluation() {
        let l = layout(2, 24);
        let s = 0.75;
        let m = Metric::identity(&l);
        let tg = &l.tangential;
        let trace = |x: &[f64]| (x[0] * x[0] + 0.5 * x[1]).sin();
        let f = ExtensionField::from_fn(&l, s, |x, _| trace(x));
        let (h, big_l) = (0.1, 2.0);
        let v = vertical_integral(&l, &f, s, h, big_l).unwrap();
        let res = reduction_residual(&l, &m, &v).unwrap();
        let u0: Vec<f64> = (0..tg.n_nodes()).map(|t| trace(&tg.coords(t))).collect();
        let set = l.interior_nodes(RegionName::Omega);
        let k = weak_divergence(&l, &m, &u0);
        let dens: Vec<f64> = set.nodes.iter().zip(&set.masses).map(|(&t, mm)| k[t] / mm).collect();
        let direct = h_minus_one_norm(&dens, &set).unwrap() * crate::grid::weighted_integral(s, h, big_l);
        assert!((res - direct).abs() < 1e-8 * direct, "{res} vs {direct}");
    }

    #[test]
    fn zero_datum_tail_experiment_underflows() {
        let l = layout(2, 16);
        let m = Metric::identity(&l);
        let f = vec![0.0; l.n_tangential_nodes()];
        let d = l.region(RegionName::Omega).clone();
        let r = tail_bound_experiment(&l, &m, &f, 0.75, &[1.0, 2.0], &[0.1, 0.2], &d, &SolverOptions::default());
        assert!(matches!(r, Err(Error::Underflow(_))));
    }
}
