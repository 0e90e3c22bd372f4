//! Heat semigroup on the tangential grid and the Poisson-type
//! representation of the extension
//! `ũ(x', y) = y^{2s} / (4^s Γ(s)) ∫_0^∞ (e^{tL} u)(x') e^{-y²/4t} t^{-1-s} dt`.

use crate::elliptic::{
    assemble_extension_operator, BottomCondition, ExtensionField, Provenance, SolverOptions,
};
use crate::grid::{weighted_integral, DomainLayout, Region, TangentialGrid};
use crate::linalg::{pcg, BandedCholesky, CsrMatrix, Jacobi};
use crate::metric::Metric;
use crate::par::{try_map_indexed, Execution};
use crate::tangential;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr, gamma_ur};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatOptions {
    /// Target relative energy change per step.
    pub step_energy: f64,
    pub max_steps: usize,
    /// Evolution stops once `wᵀMw` falls below this fraction of its start.
    pub energy_floor: f64,
}

impl Default for HeatOptions {
    fn default() -> Self {
        HeatOptions {
            step_energy: 1e-3,
            max_steps: 2_000_000,
            energy_floor: 1e-30,
        }
    }
}

/// Crank–Nicolson integrator for `∂_t w = ∇'·a∇' w` with homogeneous
/// Dirichlet data on the lateral faces.
pub struct HeatPropagator {
    tg: TangentialGrid,
    k: CsrMatrix,
    mass: Vec<f64>,
    fixed: Vec<bool>,
    opts: HeatOptions,
}

impl HeatPropagator {
    pub fn new(tg: &TangentialGrid, metric: &Metric, opts: HeatOptions) -> Result<Self> {
        if metric.len() != tg.n_nodes() {
            return Err(Error::Metric("metric does not match the tangential grid".into()));
        }
        let fixed: Vec<bool> = (0..tg.n_nodes()).map(|t| tg.is_lateral(t)).collect();
        let full = tangential::stiffness(tg, metric, None);
        let mut trip = Vec::with_capacity(full.nnz());
        for i in 0..tg.n_nodes() {
            if fixed[i] {
                continue;
            }
            for (j, v) in full.row(i) {
                if !fixed[j] {
                    trip.push((i, j, v));
                }
            }
        }
        let k = CsrMatrix::from_triplets(tg.n_nodes(), tg.n_nodes(), trip);
        Ok(HeatPropagator {
            tg: tg.clone(),
            k,
            mass: tg.lumped_mass(),
            fixed,
            opts,
        })
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    fn energy(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.mass).map(|(v, m)| v * v * m).sum()
    }

    fn rate(&self, w: &[f64]) -> f64 {
        let kw = self.k.matvec(w);
        let e = self.energy(w);
        if e == 0.0 {
            0.0
        } else {
            2.0 * crate::linalg::dot(&kw, w) / e
        }
    }

    /// One Crank–Nicolson step `(M + dt/2 K) w⁺ = (M - dt/2 K) w`.
    fn step(&self, w: &[f64], dt: f64) -> Result<Vec<f64>> {
        let n = w.len();
        let kw = self.k.matvec(w);
        let rhs: Vec<f64> = (0..n)
            .map(|i| if self.fixed[i] { 0.0 } else { self.mass[i] * w[i] - 0.5 * dt * kw[i] })
            .collect();
        let mut trip = Vec::with_capacity(self.k.nnz() + n);
        for i in 0..n {
            if self.fixed[i] {
                trip.push((i, i, 1.0));
                continue;
            }
            trip.push((i, i, self.mass[i]));
            for (j, v) in self.k.row(i) {
                trip.push((i, j, 0.5 * dt * v));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, trip);
        if self.tg.dim == 1 && !self.tg.periodic {
            let f = BandedCholesky::factor(&a).ok_or_else(|| Error::Numeric("heat step not SPD".into()))?;
            Ok(f.solve(&rhs))
        } else {
            let mut x = w.to_vec();
            pcg(&a, &rhs, &mut x, &Jacobi::new(&a), 1e-14, 10_000)?;
            Ok(x)
        }
    }

    /// Evolves `u0` and returns the state at each requested time.
    pub fn evolve(&self, u0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        if u0.len() != self.tg.n_nodes() {
            return Err(Error::Input("initial datum has the wrong length".into()));
        }
        if times.iter().any(|t| !(*t >= 0.0)) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("time grid must be nonnegative and strictly increasing".into()));
        }
        let mut w: Vec<f64> = u0
            .iter()
            .zip(&self.fixed)
            .map(|(&v, &f)| if f { 0.0 } else { v })
            .collect();
        let e0 = self.energy(&w);
        let mut t = 0.0;
        let mut out = Vec::with_capacity(times.len());
        let mut steps = 0usize;
        let mut dead = e0 == 0.0;
        for &target in times {
            while t < target && !dead {
                let rate = self.rate(&w);
                let mut dt = if rate > 0.0 { self.opts.step_energy / rate } else { target - t };
                if t + dt > target {
                    dt = target - t;
                }
                w = self.step(&w, dt)?;
                t += dt;
                if (target - t).abs() <= 1e-14 * target.max(1.0) {
                    t = target;
                }
                steps += 1;
                if steps > self.opts.max_steps {
                    return Err(Error::Solver {
                        iterations: steps,
                        residual: f64::NAN,
                    });
                }
                if self.energy(&w) < self.opts.energy_floor * e0 {
                    dead = true;
                }
            }
            if dead {
                out.push(vec![0.0; w.len()]);
            } else {
                out.push(w.clone());
            }
        }
        Ok(out)
    }
}

/// Evolved fields `w(t_k)` for one initial datum.
pub fn heat_semigroup(tg: &TangentialGrid, metric: &Metric, u0: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    HeatPropagator::new(tg, metric, HeatOptions::default())?.evolve(u0, times)
}

/// Kernel columns `K_t(·, z)` for a set of source nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatKernelSamples {
    pub dim: usize,
    pub times: Vec<f64>,
    pub sources: Vec<usize>,
    /// Source coordinates.
    pub source_points: Vec<[f64; 2]>,
    /// `columns[j][k][t]` is `K_{t_k}(x_t, z_j)`.
    pub columns: Vec<Vec<Vec<f64>>>,
    /// Node coordinates.
    pub points: Vec<[f64; 2]>,
}

/// Evolves unit-mass discrete deltas at `sources`.
pub fn heat_kernel(
    tg: &TangentialGrid,
    metric: &Metric,
    sources: &[usize],
    times: &[f64],
    exec: Execution,
) -> Result<HeatKernelSamples> {
    let prop = HeatPropagator::new(tg, metric, HeatOptions::default())?;
    let columns = try_map_indexed(sources.len(), exec, |j| {
        let z = sources[j];
        let mut u0 = vec![0.0; tg.n_nodes()];
        u0[z] = 1.0 / prop.mass[z];
        prop.evolve(&u0, times).map_err(|e| e.in_column(j))
    })?;
    Ok(HeatKernelSamples {
        dim: tg.dim,
        times: times.to_vec(),
        sources: sources.to_vec(),
        source_points: sources.iter().map(|&z| tg.coords(z)).collect(),
        columns,
        points: (0..tg.n_nodes()).map(|t| tg.coords(t)).collect(),
    })
}

impl HeatKernelSamples {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let head = if self.dim == 1 { "source,t,x1,value" } else { "source,t,x1,x2,value" };
        writeln!(out, "{head}")?;
        for (j, col) in self.columns.iter().enumerate() {
            for (k, vals) in col.iter().enumerate() {
                for (p, v) in self.points.iter().zip(vals) {
                    if self.dim == 1 {
                        writeln!(out, "{j},{:.10e},{:.10e},{:.12e}", self.times[k], p[0], v)?;
                    } else {
                        writeln!(out, "{j},{:.10e},{:.10e},{:.10e},{:.12e}", self.times[k], p[0], p[1], v)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Total mass `Σ m_t K_t(x_t, z)` per source and time.
    pub fn masses(&self, mass: &[f64]) -> Vec<Vec<f64>> {
        self.columns
            .iter()
            .map(|col| col.iter().map(|v| v.iter().zip(mass).map(|(a, b)| a * b).sum()).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonOptions {
    pub points_per_decade: usize,
    pub t_max: f64,
    pub heat: HeatOptions,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        PoissonOptions {
            points_per_decade: 48,
            t_max: 1e3,
            heat: HeatOptions::default(),
        }
    }
}

/// `1 / (4^s Γ(s))`.
pub fn poisson_constant(s: f64) -> f64 {
    1.0 / (4f64.powf(s) * gamma(s))
}

fn log_grid(t_min: f64, t_max: f64, per_decade: usize) -> Vec<f64> {
    let decades = (t_max / t_min).log10();
    let mut m = (decades * per_decade as f64).ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    let (a, b) = (t_min.ln(), t_max.ln());
    (0..=m).map(|i| (a + (b - a) * i as f64 / m as f64).exp()).collect()
}

/// Composite Simpson weights for `∫ F(t) dt` on a uniform grid in `ln t`.
fn simpson_log_weights(t: &[f64]) -> Vec<f64> {
    let m = t.len() - 1;
    let dl = (t[m].ln() - t[0].ln()) / m as f64;
    (0..=m)
        .map(|i| {
            let c = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * dl / 3.0 * t[i]
        })
        .collect()
}

/// `∫_0^∞ e^{-1/(4τ)} τ^{-1-s} dτ` by the same log-grid Simpson rule used in
/// [`poisson_extend`] on `[1e-4, 1e3]` with incomplete-gamma tails.
pub fn poisson_normalization_integral(s: f64, points_per_decade: usize) -> f64 {
    let (lo, hi) = (1e-4, 1e3);
    let t = log_grid(lo, hi, points_per_decade);
    let w = simpson_log_weights(&t);
    let body: f64 = t.iter().zip(&w).map(|(&x, &wi)| wi * (-0.25 / x).exp() * x.powf(-1.0 - s)).sum();
    let g = gamma(s);
    let left = 4f64.powf(s) * g * gamma_ur(s, 0.25 / lo);
    let right = 4f64.powf(s) * g * gamma_lr(s, 0.25 / hi);
    body + left + right
}

/// Poisson-type extension of the trace `u` at the requested heights (all
/// positive). Returns a field on `tangential nodes × heights`.
pub fn poisson_extend(
    tg: &TangentialGrid,
    metric: &Metric,
    u: &[f64],
    s: f64,
    heights: &[f64],
    opts: &PoissonOptions,
) -> Result<ExtensionField> {
    if !(s > 0.0 && s < 1.0) {
        return Err(Error::Input(format!("s must lie in (0, 1), got {s}")));
    }
    if heights.is_empty() || heights.iter().any(|&y| !(y > 0.0)) {
        return Err(Error::Input("Poisson representation needs strictly positive heights".into()));
    }
    let nt = tg.n_nodes();
    let ny = heights.len();
    if u.iter().all(|&v| v == 0.0) {
        return Ok(ExtensionField {
            values: vec![0.0; nt * ny],
            heights: heights.to_vec(),
            s,
            provenance: Provenance::PoissonRepresentation,
        });
    }
    let y_min = heights.iter().copied().fold(f64::INFINITY, f64::min);
    let t_min = (1e-4f64).min(y_min * y_min / 400.0);
    let times = log_grid(t_min, opts.t_max, opts.points_per_decade);
    let weights = simpson_log_weights(&times);
    let prop = HeatPropagator::new(tg, metric, opts.heat)?;
    let states = prop.evolve(u, &times)?;
    let w_last = states.last().unwrap();
    let c = poisson_constant(s);
    let g = gamma(s);
    let mut values = vec![0.0; nt * ny];
    for (k, &y) in heights.iter().enumerate() {
        let y2 = y * y;
        let pref = c * y.powf(2.0 * s);
        let tail_scale = (4.0 / y2).powf(s) * g;
        let left = tail_scale * gamma_ur(s, y2 / (4.0 * t_min));
        let right = tail_scale * gamma_lr(s, y2 / (4.0 * opts.t_max));
        let kern: Vec<f64> = times
            .iter()
            .zip(&weights)
            .map(|(&t, &w)| w * (-y2 / (4.0 * t)).exp() * t.powf(-1.0 - s))
            .collect();
        for p in 0..nt {
            let mut acc = left * u[p] + right * w_last[p];
            for (i, st) in states.iter().enumerate() {
                acc += kern[i] * st[p];
            }
            values[p * ny + k] = pref * acc;
        }
    }
    Ok(ExtensionField {
        values,
        heights: heights.to_vec(),
        s,
        provenance: Provenance::PoissonRepresentation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub discrepancy: f64,
    pub elliptic_norm: f64,
}

/// Relative weighted-L² difference between the mixed elliptic solve with
/// exterior datum `f` and the Poisson representation of its full trace, on
/// `(Ω₁ ∪ W) × (0.2, 2)`.
pub fn cross_validate_extensions(
    layout: &DomainLayout,
    metric: &Metric,
    f: &[f64],
    s: f64,
    solver: &SolverOptions,
    poisson: &PoissonOptions,
) -> Result<CrossValidation> {
    if f.len() != layout.n_tangential_nodes() {
        return Err(Error::Input("datum does not match the layout".into()));
    }
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, solver)?;
    let u = crate::elliptic::solve_mixed_problem(&op, f, None)?;
    let trace = u.layer(0);
    let ks: Vec<usize> = (0..layout.ny())
        .filter(|&k| {
            let y = layout.vertical.y[k];
            (0.2..=2.0).contains(&y)
        })
        .collect();
    if ks.is_empty() {
        return Err(Error::Input("no vertical node in (0.2, 2)".into()));
    }
    let heights: Vec<f64> = ks.iter().map(|&k| layout.vertical.y[k]).collect();
    let p = poisson_extend(&layout.tangential, metric, &trace, s, &heights, poisson)?;
    let mut region = layout.regions.omega_one.clone();
    region.boxes.extend(layout.regions.window_w.boxes.iter().cloned());
    let (num, den) = node_weighted_l2(layout, &region, s, &ks, |t, j| u.at(t, ks[j]) - p.at(t, j), |t, j| u.at(t, ks[j]));
    Ok(CrossValidation {
        discrepancy: if den > 0.0 { (num / den).sqrt() } else { 0.0 },
        elliptic_norm: den.sqrt(),
    })
}

/// Nodal weighted L² sums over `region × {heights ks}` using the lumped
/// region mass and trapezoid weights `∫ y^{1-2s}` between the selected
/// layers.
fn node_weighted_l2(
    layout: &DomainLayout,
    region: &Region,
    s: f64,
    ks: &[usize],
    diff: impl Fn(usize, usize) -> f64,
    base: impl Fn(usize, usize) -> f64,
) -> (f64, f64) {
    let y: Vec<f64> = ks.iter().map(|&k| layout.vertical.y[k]).collect();
    let m = y.len();
    let wy: Vec<f64> = (0..m)
        .map(|j| {
            let lo = if j == 0 { y[0] } else { 0.5 * (y[j - 1] + y[j]) };
            let hi = if j + 1 == m { y[m - 1] } else { 0.5 * (y[j] + y[j + 1]) };
            if m == 1 {
                1.0
            } else {
                weighted_integral(s, lo, hi)
            }
        })
        .collect();
    let tg = &layout.tangential;
    let n = layout.dim();
    let share = tg.cell_volume() / (1usize << n) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..tg.n_nodes() {
        let inside = tg
            .node_cells(t)
            .iter()
            .filter(|&&c| region.contains(&tg.cell_center(c)[..n]))
            .count() as f64;
        if inside == 0.0 {
            continue;
        }
        for j in 0..m {
            let w = inside * share * wy[j];
            num += w * diff(t, j).powi(2);
            den += w * base(t, j).powi(2);
        }
    }
    (num, den)
}

/// Least-squares slope of `log sup_window |ũ(·, y)|` against `log y` over the
/// layers with `y ∈ [y_lo, y_hi]`.
pub fn vertical_decay_fit(layout: &DomainLayout, field: &ExtensionField, window: &Region, y_lo: f64, y_hi: f64) -> Result<f64> {
    if !(y_lo >= 1.0 && y_hi <= 0.5 * layout.vertical.height() * (1.0 + 1e-12) && y_lo < y_hi) {
        return Err(Error::Input("decay fit needs 1 <= y_lo < y_hi <= Y/2".into()));
    }
    let n = layout.dim();
    let nodes: Vec<usize> = (0..layout.n_tangential_nodes())
        .filter(|&t| window.contains_closed(&layout.tangential.coords(t)[..n]))
        .collect();
    if nodes.is_empty() {
        return Err(Error::Input("decay window contains no node".into()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &y) in field.heights.iter().enumerate() {
        if y < y_lo || y > y_hi {
            continue;
        }
        let sup = nodes.iter().map(|&t| field.at(t, k).abs()).fold(0.0, f64::max);
        if sup < 1e-14 {
            return Err(Error::Underflow(format!("field below 1e-14 at y = {y}")));
        }
        xs.push(y.ln());
        ys.push(sup.ln());
    }
    if xs.len() < 2 {
        return Err(Error::Input("fewer than two layers in the decay range".into()));
    }
    Ok(linear_fit(&xs, &ys).0)
}

/// Ordinary least squares `y ≈ a x + b`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return (f64::NAN, my, 0.0);
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (a, b, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBoundReport {
    /// Smallest `c` with `K ≤ c t^{-n/2} exp(-|x-z|²/(4(1+δ)θ₁⁻¹ t))`.
    pub constant: f64,
    pub min_value: f64,
    pub nonnegative: bool,
}

/// Pointwise Gaussian upper bound check; entries below `1e-13 · max` are
/// skipped in the ratio (they carry no information and underflow).
pub fn gaussian_bound_check(samples: &HeatKernelSamples, theta1: f64, delta: f64) -> Result<GaussianBoundReport> {
    let n = samples.dim as i32;
    let spread = 4.0 * (1.0 + delta) / theta1;
    let mut c = 0.0_f64;
    let mut min_value = f64::INFINITY;
    for (j, col) in samples.columns.iter().enumerate() {
        let z = samples.source_points[j];
        for (k, vals) in col.iter().enumerate() {
            let t = samples.times[k];
            let top = vals.iter().copied().fold(0.0, f64::max);
            for (p, &v) in samples.points.iter().zip(vals) {
                min_value = min_value.min(v);
                if v <= 1e-13 * top {
                    continue;
                }
                let r2 = (p[0] - z[0]).powi(2) + if n == 2 { (p[1] - z[1]).powi(2) } else { 0.0 };
                let g = t.powf(-(n as f64) / 2.0) * (-r2 / (spread * t)).exp();
                c = c.max(v / g);
            }
        }
    }
    if min_value < -1e-10 {
        return Err(Error::Discretization(format!("negative kernel value {min_value:.3e}")));
    }
    Ok(GaussianBoundReport {
        constant: c,
        min_value,
        nonnegative: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_matches_gamma() {
        for s in [0.25, 0.5, 0.75] {
            let v = poisson_normalization_integral(s, 48);
            let exact = 4f64.powf(s) * gamma(s);
            assert!((v - exact).abs() < 1e-6 * exact, "{s}: {v} vs {exact}");
        }
    }

    #[test]
    fn constants_are_preserved_away_from_the_boundary() {
        let tg = TangentialGrid::new(1, 201, 10.0, false);
        let m = Metric::identity_on(&tg);
        let w = heat_semigroup(&tg, &m, &vec![1.0; 201], &[0.1, 0.5]).unwrap();
        let mid = 100;
        assert!((w[1][mid] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn semigroup_and_mass_decay() {
        let tg = TangentialGrid::new(1, 129, 4.0, false);
        let m = Metric::identity_on(&tg);
        let u0: Vec<f64> = (0..129).map(|t| (-(tg.coords(t)[0]).powi(2) * 4.0).exp()).collect();
        let prop = HeatPropagator::new(&tg, &m, HeatOptions::default()).unwrap();
        let direct = prop.evolve(&u0, &[0.3]).unwrap().pop().unwrap();
        let half = prop.evolve(&u0, &[0.1]).unwrap().pop().unwrap();
        let composed = prop.evolve(&half, &[0.2]).unwrap().pop().unwrap();
        let scale = direct.iter().copied().fold(0.0, f64::max);
        let err = direct.iter().zip(&composed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6 * scale, "{err}");
        let states = prop.evolve(&u0, &[0.5, 1.0, 2.0, 4.0]).unwrap();
        let masses: Vec<f64> = states.iter().map(|w| w.iter().zip(prop.mass()).map(|(a, b)| a * b).sum()).collect();
        assert!(masses.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn zero_trace_gives_zero_extension() {
        let tg = TangentialGrid::new(1, 33, 2.0, false);
        let m = Metric::identity_on(&tg);
        let p = poisson_extend(&tg, &m, &vec![0.0; 33], 0.5, &[0.5, 1.0], &PoissonOptions::default()).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        assert!(poisson_extend(&tg, &m, &vec![1.0; 33], 0.5, &[0.0], &PoissonOptions::default()).is_err());
    }
}
