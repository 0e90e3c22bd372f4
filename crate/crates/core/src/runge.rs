//! Quantitative Runge approximation: the operator `T f = v^f|_Ω`, its
//! adjoint through the inhomogeneous extension problem, the generalized SVD
//! and the spectral-cutoff controls.

use crate::elliptic::{assemble_extension_operator, solve_mixed_problem, BottomCondition, ExtensionField, SolverOptions};
use crate::grid::{DomainLayout, NodeSet, RegionName};
use crate::heat::linear_fit;
use crate::linalg::dense::{spd_inv_sqrt, spd_sqrt};
use crate::metric::Metric;
use crate::par::{try_map_indexed, Execution};
use crate::reduction::{check_integrability, vertical_weights};
use crate::sobolev::gram_matrix;
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone)]
pub struct OperatorMatrixT {
    /// Ω interior nodes × W hats.
    pub matrix: DMatrix<f64>,
    pub omega: NodeSet,
    pub window_nodes: NodeSet,
    pub s: f64,
    pub window: (f64, f64),
    /// Order-`s` Gram on W.
    pub source_gram: DMatrix<f64>,
    pub metric_fingerprint: String,
}

impl OperatorMatrixT {
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.matrix * DVector::from_column_slice(f)).iter().copied().collect()
    }

    /// Mass inner product on Ω.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.omega.masses).map(|((x, y), m)| x * y * m).sum()
    }

    pub fn source_norm(&self, f: &[f64]) -> f64 {
        let v = DVector::from_column_slice(f);
        v.dot(&(&self.source_gram * &v)).max(0.0).sqrt()
    }
}

/// Column `j`: vertical integral of the mixed solve with `f = φ_j`, at the
/// interior nodes of Ω.
pub fn assemble_t(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    window: (f64, f64),
    opts: &SolverOptions,
    exec: Execution,
) -> Result<OperatorMatrixT> {
    check_integrability(layout.dim(), s)?;
    let weights = vertical_weights(&layout.vertical, s, window.0, window.1)?;
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let w = layout.window_nodes();
    let omega = layout.interior_nodes(RegionName::Omega);
    let nt = layout.n_tangential_nodes();
    let ny = layout.ny();
    let cols = try_map_indexed(w.len(), exec, |j| {
        let mut f = vec![0.0; nt];
        f[w.nodes[j]] = 1.0;
        let u = solve_mixed_problem(&op, &f, None).map_err(|e| e.in_column(j))?;
        Ok(omega
            .nodes
            .iter()
            .map(|&t| (0..ny).map(|k| weights[k] * u.values[t * ny + k]).sum())
            .collect::<Vec<f64>>())
    })?;
    let matrix = DMatrix::from_fn(omega.len(), w.len(), |i, j| cols[j][i]);
    let source_gram = gram_matrix(&w, s)?.matrix;
    Ok(OperatorMatrixT {
        matrix,
        omega,
        window_nodes: w,
        s,
        window,
        source_gram,
        metric_fingerprint: metric.fingerprint(),
    })
}

/// Solves `-∇·y^{1-2s} ã ∇h̃ = y^{1-2s} w χ_Ω` with the same window weights
/// used by `T`, zero Dirichlet data on the exterior trace and zero flux on Ω.
/// `w` is given at the interior nodes of Ω.
pub fn solve_adjoint(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    w: &[f64],
    window: (f64, f64),
    opts: &SolverOptions,
) -> Result<(ExtensionField, Vec<f64>)> {
    let omega = layout.interior_nodes(RegionName::Omega);
    if w.len() != omega.len() {
        return Err(Error::Input("w must be given at the interior nodes of omega".into()));
    }
    let weights = vertical_weights(&layout.vertical, s, window.0, window.1)?;
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let ny = layout.ny();
    let nt = layout.n_tangential_nodes();
    let mut rhs = vec![0.0; nt * ny];
    for (i, &t) in omega.nodes.iter().enumerate() {
        for k in 0..ny {
            let g = t * ny + k;
            if !op.is_dirichlet(g) {
                rhs[g] = omega.masses[i] * weights[k] * w[i];
            }
        }
    }
    let (field, _) = op.solve(&vec![0.0; nt], Some(&rhs))?;
    // T'w = -flux on the Dirichlet trace
    let flux = op.bottom_flux(&field, Some(&rhs));
    let trace = flux.iter().map(|v| -v).collect();
    Ok((field, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointCheck {
    pub forward: f64,
    pub adjoint: f64,
    /// `|forward - adjoint| / (‖f‖_{H̃^s} ‖w‖_{L²})`.
    pub mismatch: f64,
}

/// Compares `(Tf, w)_{L²(Ω)}` with `⟨f, T'w⟩` on W.
pub fn adjoint_consistency(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    f: &[f64],
    w: &[f64],
    window: (f64, f64),
    opts: &SolverOptions,
) -> Result<AdjointCheck> {
    check_integrability(layout.dim(), s)?;
    let omega = layout.interior_nodes(RegionName::Omega);
    let wset = layout.window_nodes();
    if f.iter().all(|&v| v == 0.0) || w.iter().all(|&v| v == 0.0) {
        return Ok(AdjointCheck {
            forward: 0.0,
            adjoint: 0.0,
            mismatch: 0.0,
        });
    }
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let u = solve_mixed_problem(&op, f, None)?;
    let weights = vertical_weights(&layout.vertical, s, window.0, window.1)?;
    let ny = layout.ny();
    let forward: f64 = omega
        .nodes
        .iter()
        .enumerate()
        .map(|(i, &t)| omega.masses[i] * w[i] * (0..ny).map(|k| weights[k] * u.values[t * ny + k]).sum::<f64>())
        .sum();
    let (_, trace) = solve_adjoint(layout, metric, s, w, window, opts)?;
    let adjoint: f64 = wset.nodes.iter().map(|&t| f[t] * trace[t]).sum();
    let g = gram_matrix(&wset, s)?;
    let fw = DVector::from_iterator(wset.len(), wset.nodes.iter().map(|&t| f[t]));
    let fnorm = fw.dot(&(&g.matrix * &fw)).sqrt();
    let wnorm = w.iter().zip(&omega.masses).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
    Ok(AdjointCheck {
        forward,
        adjoint,
        mismatch: (forward - adjoint).abs() / (fnorm * wnorm),
    })
}

#[derive(Debug, Clone)]
pub struct SvdSystem {
    /// Descending, positive.
    pub sigma: Vec<f64>,
    /// Columns orthonormal in the source Gram.
    pub phi: DMatrix<f64>,
    /// Columns orthonormal in the Ω mass.
    pub psi: DMatrix<f64>,
    pub mass: Vec<f64>,
    pub gram: DMatrix<f64>,
}

impl SvdSystem {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// `max |Φᵀ G Φ - I|`.
    pub fn phi_orthonormality(&self) -> f64 {
        let g = self.phi.transpose() * &self.gram * &self.phi;
        (g - DMatrix::identity(self.len(), self.len())).abs().max()
    }

    /// `max |Ψᵀ M Ψ - I|`.
    pub fn psi_orthonormality(&self) -> f64 {
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.mass));
        let g = self.psi.transpose() * m * &self.psi;
        (g - DMatrix::identity(self.len(), self.len())).abs().max()
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "j,sigma")?;
        for (j, s) in self.sigma.iter().enumerate() {
            writeln!(out, "{j},{s:.15e}")?;
        }
        Ok(())
    }
}

/// SVD of `M^{1/2} T G^{-1/2}` mapped back to Gram-orthonormal systems.
pub fn generalized_svd(t: &DMatrix<f64>, mass: &[f64], gram: &DMatrix<f64>) -> Result<SvdSystem> {
    if t.nrows() != mass.len() || t.ncols() != gram.nrows() {
        return Err(Error::Input("T, mass and Gram shapes disagree".into()));
    }
    if mass.iter().any(|&m| !(m > 0.0)) {
        return Err(Error::Numeric("mass must be positive".into()));
    }
    let g_is = spd_inv_sqrt(gram).map_err(|_| Error::Numeric("source Gram is not positive definite".into()))?;
    let sm: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let mut mt = t * &g_is;
    for i in 0..mt.nrows() {
        for j in 0..mt.ncols() {
            mt[(i, j)] *= sm[i];
        }
    }
    let svd = mt.svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numeric("SVD failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numeric("SVD failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > 1e-15 * top && svd.singular_values[i] > 0.0)
        .collect();
    let sigma: Vec<f64> = keep.iter().map(|&i| svd.singular_values[i]).collect();
    let v = DMatrix::from_fn(vt.ncols(), keep.len(), |r, c| vt[(keep[c], r)]);
    let phi = &g_is * v;
    let psi = DMatrix::from_fn(u.nrows(), keep.len(), |r, c| u[(r, keep[c])] / sm[r]);
    Ok(SvdSystem {
        sigma,
        phi,
        psi,
        mass: mass.to_vec(),
        gram: gram.clone(),
    })
}

pub fn svd_of(t: &OperatorMatrixT) -> Result<SvdSystem> {
    generalized_svd(&t.matrix, &t.omega.masses, &t.source_gram)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungeResult {
    pub f: Vec<f64>,
    pub tau: f64,
    pub achieved: f64,
    pub cost: f64,
    pub modes: usize,
}

/// `f = Σ_{σ_j ≥ τ} (β_j / σ_j) φ_j` with `β_j = (v, ψ_j)_M`. The achieved
/// error is `‖v - T f‖_M` with `T f` evaluated through the singular system.
pub fn runge_approximate(v: &[f64], svd: &SvdSystem, tau: f64) -> Result<RungeResult> {
    if !(tau > 0.0) {
        return Err(Error::Input(format!("tau must be positive, got {tau}")));
    }
    if v.len() != svd.mass.len() {
        return Err(Error::Input("target length does not match omega".into()));
    }
    let mv: Vec<f64> = v.iter().zip(&svd.mass).map(|(a, m)| a * m).collect();
    let mv = DVector::from_vec(mv);
    let mut coef = DVector::zeros(svd.phi.ncols());
    let mut tf = DVector::zeros(v.len());
    let mut modes = 0;
    let mut cost2 = 0.0;
    for j in 0..svd.len() {
        if svd.sigma[j] < tau {
            break;
        }
        let beta = svd.psi.column(j).dot(&mv);
        let c = beta / svd.sigma[j];
        coef[j] = c;
        cost2 += c * c;
        tf += svd.psi.column(j) * beta;
        modes += 1;
    }
    let f = &svd.phi * coef;
    let achieved = v
        .iter()
        .zip(tf.iter())
        .zip(&svd.mass)
        .map(|((a, b), m)| (a - b) * (a - b) * m)
        .sum::<f64>()
        .sqrt();
    let cost = cost2.sqrt();
    let vnorm = v.iter().zip(&svd.mass).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
    if cost * tau > vnorm * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::Numeric(format!("control cost bound violated: {cost} * {tau} > {vnorm}")));
    }
    Ok(RungeResult {
        f: f.iter().copied().collect(),
        tau,
        achieved,
        cost,
        modes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub tau: f64,
    pub achieved: f64,
    pub cost: f64,
    pub modes: usize,
    /// `cost · τ / ‖v‖` (at most one).
    pub bound_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCurve {
    pub rows: Vec<CostRow>,
    pub target_norm: f64,
    pub cost_monotone: bool,
    pub error_monotone: bool,
    pub bound_holds: bool,
    /// Exponent with the best linear fit of `ln cost` against `ε^{-μ}`.
    pub mu_hat: Option<f64>,
    pub mu_r2: Option<f64>,
}

impl CostCurve {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "tau,achieved,cost,modes,bound_ratio")?;
        for r in &self.rows {
            writeln!(out, "{:.15e},{:.15e},{:.15e},{},{:.15e}", r.tau, r.achieved, r.cost, r.modes, r.bound_ratio)?;
        }
        Ok(())
    }
}

fn fit_mu(rows: &[CostRow]) -> (Option<f64>, Option<f64>) {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.cost > 0.0 && r.achieved > 0.0)
        .map(|r| (r.achieved, r.cost.ln()))
        .collect();
    let distinct = pts.windows(2).filter(|w| w[0] != w[1]).count();
    if pts.len() < 3 || distinct < 2 {
        return (None, None);
    }
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=198 {
        let mu = 0.05 + 0.025 * i as f64;
        let x: Vec<f64> = pts.iter().map(|p| p.0.powf(-mu)).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (a, _, r2) = linear_fit(&x, &y);
        if a > 0.0 && r2.is_finite() && best.is_none_or(|b| r2 > b.1) {
            best = Some((mu, r2));
        }
    }
    (best.map(|b| b.0), best.map(|b| b.1))
}

pub fn cost_curve(v: &[f64], svd: &SvdSystem, taus: &[f64]) -> Result<CostCurve> {
    if taus.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Input("tau ladder must be strictly decreasing".into()));
    }
    let vnorm = v.iter().zip(&svd.mass).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let r = runge_approximate(v, svd, tau)?;
        rows.push(CostRow {
            tau,
            achieved: r.achieved,
            cost: r.cost,
            modes: r.modes,
            bound_ratio: if vnorm > 0.0 { r.cost * tau / vnorm } else { 0.0 },
        });
    }
    let cost_monotone = rows.windows(2).all(|w| w[1].cost >= w[0].cost);
    let error_monotone = rows.windows(2).all(|w| w[1].achieved <= w[0].achieved * (1.0 + 1e-12) + 1e-300);
    let bound_holds = rows.iter().all(|r| r.bound_ratio <= 1.0 + 1e-12);
    let (mu_hat, mu_r2) = fit_mu(&rows);
    Ok(CostCurve {
        rows,
        target_norm: vnorm,
        cost_monotone,
        error_monotone,
        bound_holds,
        mu_hat,
        mu_r2,
    })
}

/// Geometric ladder from just above `σ_1` down to `σ_min / 2`.
pub fn default_tau_ladder(svd: &SvdSystem, points: usize) -> Vec<f64> {
    let hi = svd.sigma[0] * 1.01;
    let lo = svd.sigma[svd.len() - 1] * 0.5;
    (0..points)
        .map(|i| hi * (lo / hi).powf(i as f64 / (points - 1).max(1) as f64))
        .collect()
}

/// Smooth step on `[0, 1]`: `ψ(t) / (ψ(t) + ψ(1-t))`, `ψ(t) = e^{-1/t}`.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / t).exp();
        let b = (-1.0 / (1.0 - t)).exp();
        a / (a + b)
    }
}

/// `γ_b(t) = b S(t) S(R' + 1 - t)`, `R' = 1/(1-b)`: equal to `b` on
/// `[1, R']`, supported in `[0, R' + 1]`, with `∫ γ_b = b / (1-b)`.
pub fn gamma_b(b: f64, t: f64) -> f64 {
    let r = 1.0 / (1.0 - b);
    b * smooth_step(t) * smooth_step(r + 1.0 - t)
}

const GL16: [(f64, f64); 8] = [
    (0.095_012_509_837_637_44, 0.189_450_610_455_068_5),
    (0.281_603_550_779_258_9, 0.182_603_415_044_923_6),
    (0.458_016_777_657_227_4, 0.169_156_519_395_002_5),
    (0.617_876_244_402_643_7, 0.149_595_988_816_576_7),
    (0.755_404_408_355_003, 0.124_628_971_255_533_9),
    (0.865_631_202_387_831_7, 0.095_158_511_682_492_78),
    (0.944_575_023_073_232_6, 0.062_253_523_938_647_89),
    (0.989_400_934_991_649_9, 0.027_152_459_411_754_09),
];

/// Composite 16-point Gauss–Legendre on `[a, b]` with `m` panels.
fn gauss(a: f64, b: f64, m: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / m as f64;
    let mut acc = 0.0;
    for p in 0..m {
        let c = a + (p as f64 + 0.5) * h;
        for &(x, w) in &GL16 {
            acc += w * (f(c - 0.5 * h * x) + f(c + 0.5 * h * x));
        }
    }
    acc * 0.5 * h
}

/// `∫_0^∞ (t + k)^{1-2s} γ_b(t) dt`: ramps by quadrature, plateau in closed form.
pub fn cutoff_normalization(k: f64, s: f64, b: f64) -> f64 {
    let r = 1.0 / (1.0 - b);
    let p = 2.0 - 2.0 * s;
    let w = |t: f64| (t + k).powf(1.0 - 2.0 * s);
    let up = gauss(0.0, 1.0, 16, |t| w(t) * b * smooth_step(t));
    let down = gauss(r, r + 1.0, 16, |t| w(t) * b * smooth_step(r + 1.0 - t));
    let flat = b * ((r + k).powf(p) - (1.0 + k).powf(p)) / p;
    up + flat + down
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffFunction {
    pub k: usize,
    pub s: f64,
    pub b: f64,
    /// `R_{k,s} = k + 1/(1-b)`.
    pub r: f64,
    pub normalization: f64,
    /// Sampled `(t, β_k(t))`.
    pub profile: Vec<(f64, f64)>,
}

impl CutoffFunction {
    pub fn eval(&self, t: f64) -> f64 {
        gamma_b(self.b, t - self.k as f64)
    }

    pub fn support_max(&self) -> f64 {
        self.r + 1.0
    }
}

/// Bisection tolerance on `b`.
pub const BISECTION_TOL: f64 = 1e-12;

/// `β_k(t) = γ_{b_{k,s}}(t - k)` with `b_{k,s}` fixed by
/// `∫ t^{1-2s} β_k = 1`.
pub fn beta_cutoff(k: usize, s: f64) -> Result<CutoffFunction> {
    if k < 1 {
        return Err(Error::Input("k must be at least 1".into()));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Input("s must lie in (0, 1)".into()));
    }
    let kf = k as f64;
    let g = |b: f64| cutoff_normalization(kf, s, b) - 1.0;
    let mut lo = 0.0;
    let mut hi = 0.5;
    while g(hi) < 0.0 {
        lo = hi;
        hi = 1.0 - 0.5 * (1.0 - hi);
        if 1.0 - hi < 1e-14 {
            return Err(Error::Construction(format!("no bracket for b at k = {k}, s = {s}")));
        }
    }
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let r = kf + 1.0 / (1.0 - b);
    let samples = 400;
    let profile = (0..=samples)
        .map(|i| {
            let t = kf + (r + 1.0 - kf) * i as f64 / samples as f64;
            (t, gamma_b(b, t - kf))
        })
        .collect();
    Ok(CutoffFunction {
        k,
        s,
        b,
        r,
        normalization: cutoff_normalization(kf, s, b),
        profile,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportFit {
    pub ks: Vec<usize>,
    pub support: Vec<f64>,
    pub c: f64,
    pub p2: f64,
    pub max_normalization_error: f64,
}

/// Fits `R_{k,s} + 1 ≈ C k^{p₂}` over the given `k`.
pub fn support_fit(ks: &[usize], s: f64) -> Result<SupportFit> {
    let mut support = Vec::with_capacity(ks.len());
    let mut err = 0.0_f64;
    for &k in ks {
        let c = beta_cutoff(k, s)?;
        err = err.max((c.normalization - 1.0).abs());
        support.push(c.support_max());
    }
    let x: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let y: Vec<f64> = support.iter().map(|v| v.ln()).collect();
    let (p2, lc, _) = linear_fit(&x, &y);
    // smallest C with the bound holding at every k for the fitted exponent
    let c = ks
        .iter()
        .zip(&support)
        .map(|(&k, &r)| r / (k as f64).powf(p2))
        .fold(lc.exp(), f64::max);
    Ok(SupportFit {
        ks: ks.to_vec(),
        support,
        c,
        p2,
        max_normalization_error: err,
    })
}

/// `‖T‖`-independent range residual: `‖v - P_range v‖_M`.
pub fn range_distance(v: &[f64], svd: &SvdSystem) -> f64 {
    let mv = DVector::from_iterator(v.len(), v.iter().zip(&svd.mass).map(|(a, m)| a * m));
    let mut p = DVector::zeros(v.len());
    for j in 0..svd.len() {
        p += svd.psi.column(j) * svd.psi.column(j).dot(&mv);
    }
    v.iter()
        .zip(p.iter())
        .zip(&svd.mass)
        .map(|((a, b), m)| (a - b) * (a - b) * m)
        .sum::<f64>()
        .sqrt()
}

/// Symmetric square root of the Gram (exposed for exports).
pub fn gram_sqrt(g: &DMatrix<f64>) -> DMatrix<f64> {
    spd_sqrt(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mode() -> SvdSystem {
        let t = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.1]);
        generalized_svd(&t, &[1.0, 1.0], &DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn hand_two_by_two() {
        let s = two_mode();
        assert!((s.sigma[0] - 1.0).abs() < 1e-14 && (s.sigma[1] - 0.1).abs() < 1e-14);
        assert!(s.phi_orthonormality() < 1e-12 && s.psi_orthonormality() < 1e-12);
    }

    #[test]
    fn two_mode_synthetic_control() {
        let s = two_mode();
        let v: Vec<f64> = (0..2).map(|i| s.psi[(i, 0)] + s.psi[(i, 1)]).collect();
        let r = runge_approximate(&v, &s, 0.5).unwrap();
        let phi1: Vec<f64> = (0..2).map(|i| s.phi[(i, 0)]).collect();
        assert!(r.f.iter().zip(&phi1).all(|(a, b)| (a - b).abs() < 1e-14));
        assert!((r.achieved - 1.0).abs() < 1e-14 && (r.cost - 1.0).abs() < 1e-14);
        let none = runge_approximate(&v, &s, 2.0).unwrap();
        assert!(none.f.iter().all(|&x| x == 0.0));
        assert!((none.achieved - 2f64.sqrt()).abs() < 1e-14);
        assert!(runge_approximate(&v, &s, 0.0).is_err());
    }

    #[test]
    fn generalized_svd_reconstructs_with_nontrivial_grams() {
        let t = DMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let g = DMatrix::from_fn(3, 3, |i, j| if i == j { 2.0 } else { 0.3 });
        let mass = [0.5, 1.0, 1.5, 0.7, 0.9];
        let s = generalized_svd(&t, &mass, &g).unwrap();
        // T = Σ σ_j ψ_j φ_jᵀ G
        let mut rec = DMatrix::zeros(5, 3);
        for j in 0..s.len() {
            rec += s.psi.column(j) * (s.phi.column(j).transpose() * &g) * s.sigma[j];
        }
        assert!((rec - t).abs().max() < 1e-10);
        assert!(s.phi_orthonormality() < 1e-10 && s.psi_orthonormality() < 1e-10);
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn cutoff_properties() {
        for k in [1, 5, 20] {
            for s in [0.3, 0.75] {
                let c = beta_cutoff(k, s).unwrap();
                assert!((c.normalization - 1.0).abs() < 1e-8);
                assert!(c.b > 0.0 && c.b < 1.0);
                assert!(c.profile.iter().all(|&(_, v)| (0.0..=c.b).contains(&v)));
                assert_eq!(c.eval(k as f64), 0.0);
            }
        }
    }

    #[test]
    fn gamma_b_integral_matches() {
        let b = 0.6;
        let r = 1.0 / (1.0 - b);
        let total = gauss(0.0, r + 1.0, 64, |t| gamma_b(b, t));
        assert!((total - b / (1.0 - b)).abs() < 1e-10);
    }
}
