//! The degenerate extension equation `-∇·y^{1-2s} ã ∇ũ = rhs` on the
//! truncated half-space.
//!
//! The operator is the tensor product
//! `A = K_a ⊗ D_w + diag(m) ⊗ S_y`, with `K_a` the tangential stiffness,
//! `m` its lumped mass, `D_w` the exact weighted measures of the vertical
//! dual cells and `S_y` the vertical stiffness built from the exact
//! conductances `2s / (y_{k+1}^{2s} - y_k^{2s})`. Dirichlet rows and columns
//! are replaced by the identity; the unconstrained matrix is kept so that
//! bottom fluxes can be read off as `A u - b`.

use crate::grid::{weighted_integral, AxisBox, DomainLayout, Region, RegionName, TraceTag};
use crate::linalg::{pcg, BandedCholesky, CsrMatrix, Jacobi, LineJacobi, Preconditioner, SolveStats};
use crate::metric::Metric;
use crate::tangential;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BottomCondition {
    /// Zero weighted flux on Ω-interior trace nodes, Dirichlet elsewhere.
    Mixed,
    /// Dirichlet on every trace node.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Banded Cholesky when the band is narrow, line-preconditioned CG otherwise.
    #[default]
    Auto,
    Direct,
    LineCg,
    JacobiCg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub backend: Backend,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 20_000,
            backend: Backend::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    EllipticSolve,
    PoissonRepresentation,
    Synthetic,
}

/// Nodal values on `tangential nodes × heights`, vertical index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionField {
    pub values: Vec<f64>,
    pub heights: Vec<f64>,
    pub s: f64,
    pub provenance: Provenance,
}

impl ExtensionField {
    pub fn zeros(layout: &DomainLayout, s: f64) -> Self {
        ExtensionField {
            values: vec![0.0; layout.n_nodes()],
            heights: layout.vertical.y.clone(),
            s,
            provenance: Provenance::Synthetic,
        }
    }

    /// Samples `f(x', y)` on the layout nodes.
    pub fn from_fn(layout: &DomainLayout, s: f64, f: impl Fn(&[f64], f64) -> f64) -> Self {
        let n = layout.dim();
        let values = (0..layout.n_nodes())
            .map(|g| {
                let p = layout.coords(g);
                f(&p[..n], p[n])
            })
            .collect();
        ExtensionField {
            values,
            heights: layout.vertical.y.clone(),
            s,
            provenance: Provenance::Synthetic,
        }
    }

    pub fn ny(&self) -> usize {
        self.heights.len()
    }

    pub fn at(&self, t: usize, k: usize) -> f64 {
        self.values[t * self.ny() + k]
    }

    /// Values of layer `k` over all tangential nodes.
    pub fn layer(&self, k: usize) -> Vec<f64> {
        let ny = self.ny();
        self.values.iter().skip(k).step_by(ny).copied().collect()
    }

    pub fn on_layout(&self, layout: &DomainLayout) -> bool {
        self.heights == layout.vertical.y && self.values.len() == layout.n_nodes()
    }
}

/// Values on the `y = 0` trace nodes with the semantic
/// `-lim y^{1-2s} ∂_y ũ` (before any calibration constant).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceField {
    pub values: Vec<f64>,
    pub s: f64,
}

enum SolverBackend {
    Direct(BandedCholesky),
    Pcg(Box<dyn Preconditioner + Send>),
}

/// Assembled extension operator with its factorization or preconditioner.
pub struct ExtensionOperator<'a> {
    pub layout: &'a DomainLayout,
    pub s: f64,
    pub bottom: BottomCondition,
    full: CsrMatrix,
    constrained: CsrMatrix,
    dirichlet: Vec<bool>,
    mass: Vec<f64>,
    dual: Vec<f64>,
    backend: SolverBackend,
    opts: SolverOptions,
}

fn check_s(s: f64) -> Result<()> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Input(format!("s must lie in (0, 1), got {s}")));
    }
    Ok(())
}

/// Builds `A` for the given bottom condition.
pub fn assemble_extension_operator<'a>(
    layout: &'a DomainLayout,
    metric: &Metric,
    s: f64,
    bottom: BottomCondition,
    opts: &SolverOptions,
) -> Result<ExtensionOperator<'a>> {
    check_s(s)?;
    if metric.len() != layout.n_tangential_nodes() || metric.dim() != layout.dim() {
        return Err(Error::Metric("metric does not match the layout".into()));
    }
    layout.vertical.check_first_layer(s)?;
    let tg = &layout.tangential;
    let ny = layout.ny();
    let nt = tg.n_nodes();
    let k_t = tangential::stiffness(tg, metric, None);
    let mass = tg.lumped_mass();
    let dual = layout.vertical.dual_weights(s);
    let cond = layout.vertical.conductances(s);

    let mut trip = Vec::with_capacity(nt * ny * (k_t.nnz() / nt + 3));
    for t in 0..nt {
        for (t2, v) in k_t.row(t) {
            for k in 0..ny {
                trip.push((t * ny + k, t2 * ny + k, v * dual[k]));
            }
        }
        for k in 0..ny - 1 {
            let c = mass[t] * cond[k];
            let (a, b) = (t * ny + k, t * ny + k + 1);
            trip.push((a, a, c));
            trip.push((b, b, c));
            trip.push((a, b, -c));
            trip.push((b, a, -c));
        }
    }
    let n = nt * ny;
    let full = CsrMatrix::from_triplets(n, n, trip);

    let mut dirichlet = vec![false; n];
    for t in 0..nt {
        let lateral = tg.is_lateral(t);
        for k in 0..ny {
            let g = t * ny + k;
            dirichlet[g] = lateral || k + 1 == ny;
        }
        let neumann = bottom == BottomCondition::Mixed && layout.node_is_interior(RegionName::Omega, t) && !lateral;
        if !neumann {
            dirichlet[t * ny] = true;
        }
    }
    let mut ctrip = Vec::with_capacity(full.nnz());
    for i in 0..n {
        if dirichlet[i] {
            ctrip.push((i, i, 1.0));
            continue;
        }
        for (j, v) in full.row(i) {
            if !dirichlet[j] {
                ctrip.push((i, j, v));
            }
        }
    }
    let constrained = CsrMatrix::from_triplets(n, n, ctrip);

    let backend = match opts.backend {
        Backend::Direct => direct(&constrained)?,
        Backend::LineCg => SolverBackend::Pcg(Box::new(LineJacobi::new(&constrained, ny)?)),
        Backend::JacobiCg => SolverBackend::Pcg(Box::new(Jacobi::new(&constrained))),
        Backend::Auto => {
            if constrained.bandwidth() <= 2 * ny && constrained.bandwidth() * constrained.bandwidth() * n < 4_000_000_000 {
                direct(&constrained)?
            } else {
                SolverBackend::Pcg(Box::new(LineJacobi::new(&constrained, ny)?))
            }
        }
    };
    Ok(ExtensionOperator {
        layout,
        s,
        bottom,
        full,
        constrained,
        dirichlet,
        mass,
        dual,
        backend,
        opts: *opts,
    })
}

fn direct(a: &CsrMatrix) -> Result<SolverBackend> {
    BandedCholesky::factor(a)
        .map(SolverBackend::Direct)
        .ok_or_else(|| Error::Numeric("extension operator is not positive definite".into()))
}

impl<'a> ExtensionOperator<'a> {
    pub fn full_matrix(&self) -> &CsrMatrix {
        &self.full
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.constrained
    }

    pub fn is_dirichlet(&self, g: usize) -> bool {
        self.dirichlet[g]
    }

    /// Lumped tangential mass.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Weighted vertical dual measures.
    pub fn dual_weights(&self) -> &[f64] {
        &self.dual
    }

    pub fn options(&self) -> SolverOptions {
        self.opts
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.backend, SolverBackend::Direct(_))
    }

    /// Solves with prescribed bottom values on Dirichlet trace nodes (zero on
    /// top and lateral faces) and an optional volume load `rhs` (already
    /// integrated against the basis).
    pub fn solve(&self, bottom_values: &[f64], rhs: Option<&[f64]>) -> Result<(ExtensionField, SolveStats)> {
        self.solve_with_tol(bottom_values, rhs, self.opts.tol)
    }

    pub fn solve_with_tol(
        &self,
        bottom_values: &[f64],
        rhs: Option<&[f64]>,
        tol: f64,
    ) -> Result<(ExtensionField, SolveStats)> {
        let layout = self.layout;
        let nt = layout.n_tangential_nodes();
        let ny = layout.ny();
        let n = nt * ny;
        if bottom_values.len() != nt {
            return Err(Error::Input("bottom data must have one value per tangential node".into()));
        }
        if let Some(r) = rhs {
            if r.len() != n {
                return Err(Error::Input("volume load has the wrong length".into()));
            }
        }
        let mut ud = vec![0.0; n];
        for t in 0..nt {
            let g = t * ny;
            if self.dirichlet[g] {
                ud[g] = bottom_values[t];
            } else if bottom_values[t] != 0.0 && self.bottom == BottomCondition::Mixed {
                return Err(Error::Input(format!(
                    "bottom data is nonzero at Neumann node {t}; exterior data must vanish on omega"
                )));
            }
        }
        let coupling = self.full.matvec(&ud);
        let mut b = vec![0.0; n];
        for g in 0..n {
            b[g] = if self.dirichlet[g] {
                ud[g]
            } else {
                rhs.map_or(0.0, |r| r[g]) - coupling[g]
            };
        }
        let (x, stats) = match &self.backend {
            SolverBackend::Direct(f) => {
                let x = f.solve(&b);
                let r = self.constrained.matvec(&x);
                let bn = crate::linalg::norm2(&b);
                let rn = r.iter().zip(&b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                let rel = if bn > 0.0 { rn / bn } else { 0.0 };
                (
                    x,
                    SolveStats {
                        iterations: 1,
                        relative_residual: rel,
                    },
                )
            }
            SolverBackend::Pcg(p) => {
                let mut x = ud.clone();
                let st = pcg(&self.constrained, &b, &mut x, p.as_ref(), tol, self.opts.max_iter)?;
                (x, st)
            }
        };
        Ok((
            ExtensionField {
                values: x,
                heights: layout.vertical.y.clone(),
                s: self.s,
                provenance: Provenance::EllipticSolve,
            },
            stats,
        ))
    }

    /// `(A u - rhs)` on the bottom layer, one value per tangential node.
    /// Divided by the lumped mass this approximates `-y^{1-2s} ∂_y ũ` at 0.
    pub fn bottom_flux(&self, field: &ExtensionField, rhs: Option<&[f64]>) -> Vec<f64> {
        let ny = self.layout.ny();
        (0..self.layout.n_tangential_nodes())
            .map(|t| {
                let g = t * ny;
                self.full.row_dot(g, &field.values) - rhs.map_or(0.0, |r| r[g])
            })
            .collect()
    }

    /// Trace from the discrete flux: `(A u - rhs)_t / m_t`.
    pub fn flux_trace(&self, field: &ExtensionField, rhs: Option<&[f64]>) -> TraceField {
        let f = self.bottom_flux(field, rhs);
        TraceField {
            values: f.iter().zip(&self.mass).map(|(v, m)| v / m).collect(),
            s: self.s,
        }
    }

    /// Weighted Dirichlet energy `uᵀ A u` of the unconstrained operator.
    pub fn energy(&self, field: &ExtensionField) -> f64 {
        let au = self.full.matvec(&field.values);
        crate::linalg::dot(&au, &field.values)
    }

    /// Load vector of a volume source given by nodal values `h`:
    /// `b_g = m_t · D_w(k) · h_g`.
    pub fn load(&self, h: &[f64]) -> Vec<f64> {
        let ny = self.layout.ny();
        h.iter()
            .enumerate()
            .map(|(g, v)| self.mass[g / ny] * self.dual[g % ny] * v)
            .collect()
    }

    /// Free-block residual `‖b - A u‖ / ‖b‖` in the constrained system, for
    /// audit.
    pub fn residual_norm(&self, field: &ExtensionField, bottom_values: &[f64], rhs: Option<&[f64]>) -> f64 {
        let ny = self.layout.ny();
        let au = self.full.matvec(&field.values);
        let mut num = 0.0;
        let mut den = 0.0;
        for g in 0..au.len() {
            if self.dirichlet[g] {
                let target = if g % ny == 0 { bottom_values[g / ny] } else { 0.0 };
                num += (field.values[g] - target).powi(2);
                den += target * target;
            } else {
                let r = rhs.map_or(0.0, |r| r[g]);
                num += (r - au[g]).powi(2);
                den += r * r;
            }
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }
}

/// Solves the mixed problem: `ũ = f` on exterior trace nodes, zero weighted
/// flux on Ω, homogeneous Dirichlet on the truncation faces.
pub fn solve_mixed_problem(op: &ExtensionOperator, f: &[f64], rhs: Option<&[f64]>) -> Result<ExtensionField> {
    if op.bottom != BottomCondition::Mixed {
        return Err(Error::Input("operator was not assembled for the mixed problem".into()));
    }
    let layout = op.layout;
    for (t, &v) in f.iter().enumerate() {
        if v != 0.0 && layout.trace_tag(t) != TraceTag::Window {
            return Err(Error::Input(format!("exterior datum is nonzero outside W at node {t}")));
        }
    }
    Ok(op.solve(f, rhs)?.0)
}

/// Trace `-lim y^{1-2s} ∂_y ũ` from the two-layer fit
/// `ũ(y) ≈ ũ(0) + c y^{2s}` through the first two layers above the bottom:
/// the value is `-2s c`.
pub fn weighted_neumann_trace(field: &ExtensionField, s: f64) -> Result<TraceField> {
    check_s(s)?;
    if field.ny() < 3 {
        return Err(Error::Trace("need at least three layers".into()));
    }
    let (y1, y2) = (field.heights[1], field.heights[2]);
    let d = y2.powf(2.0 * s) - y1.powf(2.0 * s);
    if !(d > 1e-14 * y2.powf(2.0 * s)) {
        return Err(Error::Trace("layers y1 and y2 are indistinguishable in y^(2s)".into()));
    }
    let nt = field.values.len() / field.ny();
    let values = (0..nt)
        .map(|t| -2.0 * s * (field.at(t, 2) - field.at(t, 1)) / d)
        .collect();
    Ok(TraceField { values, s })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    L2Weighted,
    H1Weighted,
}

/// Squared weighted norms accumulated over bricks `cell × [y_k, y_{k+1}]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BrickNorms {
    /// `∫ y^{1-2s} ũ²`
    pub l2_sq: f64,
    /// `∫ y^{1-2s} |∇ũ|²`
    pub grad_sq: f64,
    /// `∫ y^{1-2s}` over the covered part
    pub weight: f64,
}

fn cell_grad_energy(layout: &DomainLayout, nodes: &[usize], u: impl Fn(usize) -> f64) -> f64 {
    // mean of |∇'u|² over the cell for the P1 / Q1 interpolant
    let h = layout.tangential.h;
    if layout.dim() == 1 {
        let d = (u(nodes[1]) - u(nodes[0])) / h;
        d * d
    } else {
        let k = tangential::q1_element(&crate::metric::IDENTITY);
        let v: Vec<f64> = nodes.iter().map(|&t| u(t)).collect();
        let mut e = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                e += v[i] * k[i][j] * v[j];
            }
        }
        e / (h * h)
    }
}

/// Accumulates brick norms with a per-brick covered fraction
/// `fraction(cell, k) ∈ [0, 1]` (weighted by `y^{1-2s}`).
pub fn brick_norms(
    layout: &DomainLayout,
    field: &ExtensionField,
    fraction: impl Fn(usize, usize) -> f64,
) -> BrickNorms {
    let s = field.s;
    let tg = &layout.tangential;
    let ny = layout.ny();
    let cw = layout.vertical.cell_weights(s);
    let cond = layout.vertical.conductances(s);
    let vol = tg.cell_volume();
    let corners = 1usize << layout.dim();
    let mut out = BrickNorms::default();
    for c in 0..tg.n_cells() {
        let nodes = tg.cell_nodes(c);
        for k in 0..ny - 1 {
            let f = fraction(c, k);
            if f <= 0.0 {
                continue;
            }
            let mu = vol * cw[k];
            let mut sq = 0.0;
            let mut vert = 0.0;
            for &t in &nodes {
                let (a, b) = (field.at(t, k), field.at(t, k + 1));
                sq += a * a + b * b;
                vert += cond[k] * (b - a) * (b - a);
            }
            sq /= (2 * corners) as f64;
            vert *= vol / corners as f64;
            let tang = 0.5
                * (cell_grad_energy(layout, &nodes, |t| field.at(t, k))
                    + cell_grad_energy(layout, &nodes, |t| field.at(t, k + 1)));
            out.l2_sq += f * mu * sq;
            out.grad_sq += f * (mu * tang + vert);
            out.weight += f * mu;
        }
    }
    out
}

/// Weighted-measure fraction of brick `(cell, k)` lying in the ball, exact
/// when the brick is fully inside or outside, otherwise from `4` subsamples
/// per axis.
pub fn ball_fraction(layout: &DomainLayout, s: f64, center: &[f64], radius: f64, cell: usize, k: usize) -> f64 {
    let n = layout.dim();
    let tg = &layout.tangential;
    let cc = tg.cell_center(cell);
    let h = tg.h;
    let (y0, y1) = (layout.vertical.y[k], layout.vertical.y[k + 1]);
    let mut lo = vec![0.0; n + 1];
    let mut hi = vec![0.0; n + 1];
    for i in 0..n {
        lo[i] = cc[i] - 0.5 * h;
        hi[i] = cc[i] + 0.5 * h;
    }
    lo[n] = y0;
    hi[n] = y1;
    let bx = AxisBox { lo: lo.clone(), hi: hi.clone() };
    if bx.distance(center) >= radius {
        return 0.0;
    }
    let mut far = 0.0;
    for i in 0..=n {
        let e = (center[i] - lo[i]).abs().max((center[i] - hi[i]).abs());
        far += e * e;
    }
    if far.sqrt() <= radius {
        return 1.0;
    }
    const SUB: usize = 4;
    let total = weighted_integral(s, y0, y1);
    let mut acc = 0.0;
    let tangential_count = SUB.pow(n as u32);
    for ky in 0..SUB {
        let a = y0 + (y1 - y0) * ky as f64 / SUB as f64;
        let b = y0 + (y1 - y0) * (ky + 1) as f64 / SUB as f64;
        let wy = weighted_integral(s, a, b) / total;
        let ym = 0.5 * (a + b);
        for m in 0..tangential_count {
            let mut d2 = (ym - center[n]).powi(2);
            let mut idx = m;
            for i in 0..n {
                let j = idx % SUB;
                idx /= SUB;
                let x = lo[i] + h * (j as f64 + 0.5) / SUB as f64;
                d2 += (x - center[i]).powi(2);
            }
            if d2 < radius * radius {
                acc += wy / tangential_count as f64;
            }
        }
    }
    acc
}

/// Norms over the ball `B_r(center)` in `ℝ^{n+1}_+`.
pub fn ball_norms(layout: &DomainLayout, field: &ExtensionField, center: &[f64], radius: f64) -> BrickNorms {
    let s = field.s;
    brick_norms(layout, field, |c, k| ball_fraction(layout, s, center, radius, c, k))
}

/// Norms over `region × [y_lo, y_hi]`; a tangential cell counts when its
/// center lies in the region.
pub fn region_norms(layout: &DomainLayout, field: &ExtensionField, region: &Region, y_lo: f64, y_hi: f64) -> BrickNorms {
    let s = field.s;
    let tg = &layout.tangential;
    let n = layout.dim();
    let inside: Vec<bool> = (0..tg.n_cells()).map(|c| region.contains(&tg.cell_center(c)[..n])).collect();
    let y = &layout.vertical.y;
    brick_norms(layout, field, |c, k| {
        if !inside[c] {
            return 0.0;
        }
        let (a, b) = (y[k].max(y_lo), y[k + 1].min(y_hi));
        if b <= a {
            0.0
        } else {
            weighted_integral(s, a, b) / weighted_integral(s, y[k], y[k + 1])
        }
    })
}

/// `‖y^{(1-2s)/2} ũ‖` (or its H¹ analogue including the gradient) over
/// `region × (0, Y)`.
pub fn weighted_norm(layout: &DomainLayout, field: &ExtensionField, region: &Region, order: NormOrder) -> Result<f64> {
    weighted_norm_in(layout, field, region, 0.0, layout.vertical.height(), order)
}

pub fn weighted_norm_in(
    layout: &DomainLayout,
    field: &ExtensionField,
    region: &Region,
    y_lo: f64,
    y_hi: f64,
    order: NormOrder,
) -> Result<f64> {
    if !field.on_layout(layout) {
        return Err(Error::Input("field does not live on this layout".into()));
    }
    let b = region_norms(layout, field, region, y_lo, y_hi);
    if b.weight <= 0.0 {
        return Err(Error::Domain("region covers no grid cell".into()));
    }
    Ok(match order {
        NormOrder::L2Weighted => b.l2_sq.sqrt(),
        NormOrder::H1Weighted => (b.l2_sq + b.grad_sq).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, zero when both vanish.
    pub constant: f64,
    pub passed: bool,
}

/// Caccioppoli comparison on `B_r ⊂ B_2r`: `lhs = ‖y^{(1-2s)/2}∇ũ‖²_{B_r}`,
/// `rhs = r^{-2}‖ũ‖²_{B_2r} + ‖h‖²_{B_2r} + ‖H‖²_{B_2r}`. `rhs_h` and
/// `rhs_big_h` are nodal fields (the latter with n + 1 components).
pub fn caccioppoli_check(
    layout: &DomainLayout,
    field: &ExtensionField,
    center: &[f64],
    radius: f64,
    rhs_h: Option<&[f64]>,
    rhs_big_h: Option<&[Vec<f64>]>,
    ceiling: f64,
) -> Result<CheckReport> {
    let n = layout.dim();
    let r2 = 2.0 * radius;
    if center.len() != n + 1 || radius <= 0.0 {
        return Err(Error::Input("ball needs n + 1 coordinates and a positive radius".into()));
    }
    let big_x = layout.spec.extent_x;
    let touches = center[n] - r2 <= 0.0
        || center[n] + r2 >= layout.vertical.height()
        || center[..n].iter().any(|&x| x.abs() + r2 >= big_x);
    if touches {
        return Err(Error::Domain("doubled ball touches the boundary of the solve domain".into()));
    }
    let inner = ball_norms(layout, field, center, radius);
    let outer = ball_norms(layout, field, center, r2);
    let mut rhs = outer.l2_sq / (radius * radius);
    let s = field.s;
    if let Some(hv) = rhs_h {
        let f = ExtensionField {
            values: hv.to_vec(),
            heights: field.heights.clone(),
            s,
            provenance: Provenance::Synthetic,
        };
        rhs += ball_norms(layout, &f, center, r2).l2_sq;
    }
    if let Some(hv) = rhs_big_h {
        for comp in 0..=n {
            let f = ExtensionField {
                values: hv.iter().map(|v| v[comp]).collect(),
                heights: field.heights.clone(),
                s,
                provenance: Provenance::Synthetic,
            };
            rhs += ball_norms(layout, &f, center, r2).l2_sq;
        }
    }
    let lhs = inner.grad_sq;
    let constant = if lhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(CheckReport {
        lhs,
        rhs,
        constant,
        passed: constant.is_finite() && constant <= ceiling,
    })
}

/// CSV with coordinates and value; header `x1[,x2],y,value`.
pub fn write_field_csv(layout: &DomainLayout, field: &ExtensionField, out: &mut impl Write) -> Result<()> {
    let n = layout.dim();
    let head = if n == 1 { "x1,y,value" } else { "x1,x2,y,value" };
    writeln!(out, "{head}")?;
    let ny = field.ny();
    for (g, v) in field.values.iter().enumerate() {
        let (t, k) = (g / ny, g % ny);
        let x = layout.tangential.coords(t);
        if n == 1 {
            writeln!(out, "{:.12e},{:.12e},{:.12e}", x[0], field.heights[k], v)?;
        } else {
            writeln!(out, "{:.12e},{:.12e},{:.12e},{:.12e}", x[0], x[1], field.heights[k], v)?;
        }
    }
    Ok(())
}

pub const FIELD_MAGIC: &[u8; 8] = b"FRXFLD01";

/// Binary dump: magic (8 bytes), tangential dimension (u32), tangential
/// node count (u64), vertical node count (u64), s (f64), heights (f64 × ny),
/// values (f64 × nt·ny). Everything little-endian.
pub fn write_field_binary(layout: &DomainLayout, field: &ExtensionField, out: &mut impl Write) -> Result<()> {
    let ny = field.ny();
    let nt = field.values.len() / ny;
    out.write_all(FIELD_MAGIC)?;
    out.write_all(&(layout.dim() as u32).to_le_bytes())?;
    out.write_all(&(nt as u64).to_le_bytes())?;
    out.write_all(&(ny as u64).to_le_bytes())?;
    out.write_all(&field.s.to_le_bytes())?;
    for v in field.heights.iter().chain(&field.values) {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field_binary(input: &mut impl Read) -> Result<(usize, ExtensionField)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Input("not a field dump".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    input.read_exact(&mut b8)?;
    let nt = u64::from_le_bytes(b8) as usize;
    input.read_exact(&mut b8)?;
    let ny = u64::from_le_bytes(b8) as usize;
    input.read_exact(&mut b8)?;
    let s = f64::from_le_bytes(b8);
    let mut read = |count: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(count);
        for _ in 0..count {
            input.read_exact(&mut b8)?;
            v.push(f64::from_le_bytes(b8));
        }
        Ok(v)
    };
    let heights = read(ny)?;
    let values = read(nt * ny)?;
    Ok((
        dim,
        ExtensionField {
            values,
            heights,
            s,
            provenance: Provenance::Synthetic,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, GridSpec, RegionSpec};

    pub(crate) fn layout1(nodes_x: usize, nodes_y: usize) -> DomainLayout {
        let spec = GridSpec {
            n_tangential: 1,
            extent_x: 4.0,
            nodes_x,
            height_y: 8.0,
            nodes_y,
            grading_ratio: 1.15,
            periodic: false,
        };
        let regions = RegionSpec {
            omega_prime: Region::single(&[-0.5], &[0.5]),
            omega: Region::single(&[-1.0], &[1.0]),
            omega_one: Region::single(&[-1.5], &[1.5]),
            window_w: Region::single(&[2.0], &[3.0]),
        };
        build_grid(&spec, &regions).unwrap()
    }

    fn window_datum(layout: &DomainLayout) -> Vec<f64> {
        (0..layout.n_tangential_nodes())
            .map(|t| {
                if layout.trace_tag(t) == TraceTag::Window {
                    let x = layout.tangential.coords(t)[0];
                    (std::f64::consts::PI * (x - 2.0)).sin()
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn constants_lie_in_the_kernel() {
        let l = layout1(41, 17);
        let m = Metric::identity(&l);
        let op = assemble_extension_operator(&l, &m, 0.6, BottomCondition::Mixed, &SolverOptions::default()).unwrap();
        let ones = vec![1.0; l.n_nodes()];
        let r = op.full_matrix().matvec(&ones);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(op.full_matrix().asymmetry(), 0.0);
        assert_eq!(op.matrix().asymmetry(), 0.0);
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let l = layout1(41, 17);
        let m = Metric::identity(&l);
        let op = assemble_extension_operator(&l, &m, 0.6, BottomCondition::Mixed, &SolverOptions::default()).unwrap();
        let u = solve_mixed_problem(&op, &vec![0.0; l.n_tangential_nodes()], None).unwrap();
        assert!(u.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn maximum_principle_and_backends_agree() {
        let l = layout1(41, 17);
        let m = Metric::identity(&l);
        let f: Vec<f64> = window_datum(&l).iter().map(|v| v.abs()).collect();
        let mut fields = Vec::new();
        for backend in [Backend::Direct, Backend::LineCg, Backend::JacobiCg] {
            let opts = SolverOptions {
                backend,
                tol: 1e-12,
                ..Default::default()
            };
            let op = assemble_extension_operator(&l, &m, 0.6, BottomCondition::Mixed, &opts).unwrap();
            let u = solve_mixed_problem(&op, &f, None).unwrap();
            assert!(u.values.iter().all(|&v| v >= -1e-10));
            assert!(op.residual_norm(&u, &f, None) < 1e-9);
            fields.push(u);
        }
        for u in &fields[1..] {
            let d = u.values.iter().zip(&fields[0].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < 1e-8, "{d}");
        }
    }

    #[test]
    fn neumann_flux_vanishes_on_omega() {
        let l = layout1(41, 17);
        let m = Metric::identity(&l);
        let op = assemble_extension_operator(&l, &m, 0.4, BottomCondition::Mixed, &SolverOptions::default()).unwrap();
        let u = solve_mixed_problem(&op, &window_datum(&l), None).unwrap();
        let tr = op.flux_trace(&u, None);
        for t in 0..l.n_tangential_nodes() {
            if l.node_is_interior(RegionName::Omega, t) {
                assert!(tr.values[t].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn two_layer_fit_is_exact_for_power_profile() {
        let l = layout1(17, 17);
        let s = 0.3;
        let u = ExtensionField::from_fn(&l, s, |_, y| y.powf(2.0 * s));
        let tr = weighted_neumann_trace(&u, s).unwrap();
        assert!(tr.values.iter().all(|v| (v + 2.0 * s).abs() < 1e-12));
        let c = ExtensionField::from_fn(&l, s, |_, _| 3.0);
        assert!(weighted_neumann_trace(&c, s).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_field_norm_is_closed_form() {
        let l = layout1(41, 17);
        let s = 0.75;
        let u = ExtensionField::from_fn(&l, s, |_, _| 1.0);
        let d = Region::single(&[-1.0], &[1.0]);
        let v = weighted_norm(&l, &u, &d, NormOrder::L2Weighted).unwrap();
        let exact = 2.0 * weighted_integral(s, 0.0, 8.0);
        assert!((v * v - exact).abs() < 1e-10 * exact);
        let g = weighted_norm(&l, &u, &d, NormOrder::H1Weighted).unwrap();
        assert!((g - v).abs() < 1e-12);
    }

    #[test]
    fn binary_roundtrip() {
        let l = layout1(17, 9);
        let u = ExtensionField::from_fn(&l, 0.5, |x, y| x[0] + y);
        let mut buf = Vec::new();
        write_field_binary(&l, &u, &mut buf).unwrap();
        let (dim, back) = read_field_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(dim, 1);
        assert_eq!(back.values, u.values);
        assert_eq!(back.heights, u.heights);
    }
}
