//! Propagation of smallness: the Carleman weight, three-balls exponents,
//! boundary-to-bulk transfer and chain propagation.

use crate::elliptic::{
    assemble_extension_operator, ball_norms, solve_mixed_problem, BottomCondition, ExtensionField, SolverOptions,
};
use crate::grid::{admissible_radius, BallChain, DomainLayout, TraceTag};
use crate::heat::linear_fit;
use crate::metric::Metric;
use crate::par::{try_map_indexed, Execution};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

/// `φ̃(t) = -t + (t arctan t - ln(1 + t²)/2) / 10`.
pub fn carleman_weight(t: f64) -> f64 {
    -t + (t * t.atan() - 0.5 * t.mul_add(t, 1.0).ln()) / 10.0
}

pub fn carleman_weight_derivative(t: f64) -> f64 {
    -1.0 + t.atan() / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightCheck {
    pub samples: usize,
    pub max_derivative: f64,
    pub min_derivative: f64,
    /// Every sample strictly negative and inside `-1 ± π/20`.
    pub within_band: bool,
    pub max_fd_error: f64,
}

/// Samples `φ̃'` on `points` and compares it with a central difference.
pub fn check_carleman_weight(points: &[f64]) -> WeightCheck {
    let mut hi = f64::NEG_INFINITY;
    let mut lo = f64::INFINITY;
    let mut fd = 0.0_f64;
    let mut ok = true;
    for &t in points {
        let d = carleman_weight_derivative(t);
        hi = hi.max(d);
        lo = lo.min(d);
        ok &= d < 0.0 && d > -1.0 - PI / 20.0 && d < -1.0 + PI / 20.0;
        let e = 1e-5 * t.abs().max(1.0);
        let num = (carleman_weight(t + e) - carleman_weight(t - e)) / (2.0 * e);
        fd = fd.max((num - d).abs());
    }
    WeightCheck {
        samples: points.len(),
        max_derivative: hi,
        min_derivative: lo,
        within_band: ok,
        max_fd_error: fd,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallTriple {
    /// `(x', y)`.
    pub center: Vec<f64>,
    pub r: f64,
}

impl BallTriple {
    /// `B_4r` inside the exterior slab with `r <= Q y` over it.
    pub fn validate(&self, layout: &DomainLayout, q: f64) -> Result<()> {
        if self.center.len() != layout.dim() + 1 || !(self.r > 0.0) {
            return Err(Error::Input("triple needs n + 1 coordinates and a positive radius".into()));
        }
        let lim = admissible_radius(layout, &self.center, q);
        if self.r > lim * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "B_4r(z) with r = {:.4e} leaves the exterior slab (limit {:.4e})",
                self.r, lim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentReport {
    /// Weighted L² norms on `B_r`, `B_2r`, `B_4r`.
    pub norms: [f64; 3],
    pub alpha: Option<f64>,
    pub valid: bool,
}

impl ExponentReport {
    pub fn from_norms(norms: [f64; 3]) -> Self {
        let [n1, n2, n4] = norms;
        let valid = n1 > 0.0 && n1 < n2 && n2 < n4 && n4.is_finite();
        let alpha = valid.then(|| (n4 / n2).ln() / (n4 / n1).ln());
        ExponentReport { norms, alpha, valid }
    }
}

/// Exponent from a norm oracle `N(r)`.
pub fn exponent_from(norm: impl Fn(f64) -> f64, r: f64) -> ExponentReport {
    ExponentReport::from_norms([norm(r), norm(2.0 * r), norm(4.0 * r)])
}

/// Height ratio bound used when the caller does not supply one.
pub const DEFAULT_Q: f64 = 1.0;

pub fn three_balls_exponent(
    layout: &DomainLayout,
    field: &ExtensionField,
    triple: &BallTriple,
    q: f64,
) -> Result<ExponentReport> {
    if !field.on_layout(layout) {
        return Err(Error::Input("field does not match the layout".into()));
    }
    triple.validate(layout, q)?;
    Ok(exponent_from(
        |rad| ball_norms(layout, field, &triple.center, rad).l2_sq.sqrt(),
        triple.r,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub index: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub norms: [f64; 3],
    pub alpha: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTable {
    pub rows: Vec<ChainRow>,
    /// `Π α_j` over valid rows.
    pub cumulative: f64,
    pub flagged: usize,
}

impl ChainTable {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let n = self.rows.first().map_or(0, |r| r.center.len());
        let coords: Vec<String> = (0..n).map(|i| if i + 1 == n { "y".into() } else { format!("x{i}") }).collect();
        writeln!(out, "index,{},radius,n1,n2,n4,alpha,valid", coords.join(","))?;
        for r in &self.rows {
            let c: Vec<String> = r.center.iter().map(|v| format!("{v:.10e}")).collect();
            let a = r.alpha.map_or(String::new(), |a| format!("{a:.10e}"));
            writeln!(
                out,
                "{},{},{:.10e},{:.10e},{:.10e},{:.10e},{},{}",
                r.index,
                c.join(","),
                r.radius,
                r.norms[0],
                r.norms[1],
                r.norms[2],
                a,
                r.valid
            )?;
        }
        Ok(())
    }
}

/// One triple per chain ball; chain validity already keeps every `B_4r`
/// admissible.
pub fn propagate_chain(layout: &DomainLayout, field: &ExtensionField, chain: &BallChain, exec: Execution) -> Result<ChainTable> {
    chain.validate(layout)?;
    let rows = try_map_indexed(chain.len(), exec, |j| {
        let b = &chain.balls[j];
        let triple = BallTriple {
            center: b.center.clone(),
            r: b.radius,
        };
        let rep = three_balls_exponent(layout, field, &triple, chain.q)?;
        Ok(ChainRow {
            index: j,
            center: b.center.clone(),
            radius: b.radius,
            norms: rep.norms,
            alpha: rep.alpha,
            valid: rep.valid,
        })
    })?;
    let cumulative = rows.iter().filter_map(|r| r.alpha).product();
    let flagged = rows.iter().filter(|r| !r.valid).count();
    Ok(ChainTable {
        rows,
        cumulative,
        flagged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferFit {
    pub eps: Vec<f64>,
    /// `‖trace‖ + ‖weighted Neumann‖` on `B'_3r(x⁰)`.
    pub data_norms: Vec<f64>,
    pub interior_norms: Vec<f64>,
    pub global_norms: Vec<f64>,
    pub slope: f64,
    pub r2: f64,
    pub warning: Option<String>,
}

/// Fits `log ‖ũ‖_{B⁺_r(x⁰)}` against `log ε` for the family
/// `ũ_ε = ε ũ_φ + b ũ_ψ`: `φ` is a bump on `B'_3r(x⁰) ⊂ W` and `ψ` lives on
/// the rest of W, scaled to unit energy so the global energy stays near `b`.
/// With `b = 0` the family is pure data and the slope is one.
#[allow(clippy::too_many_arguments)]
pub fn boundary_bulk_transfer(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    x0: &[f64],
    r: f64,
    eps: &[f64],
    background: f64,
    opts: &SolverOptions,
) -> Result<TransferFit> {
    let n = layout.dim();
    if x0.len() != n || !(r > 0.0) {
        return Err(Error::Input("x0 needs n coordinates and r must be positive".into()));
    }
    if eps.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Input("eps ladder must be positive".into()));
    }
    let w = &layout.regions.window_w;
    let tg = &layout.tangential;
    let dist = |x: &[f64]| x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    // B'_3r must sit inside W
    let probe_ok = (0..64).all(|i| {
        let ang = 2.0 * PI * i as f64 / 64.0;
        let mut p = x0.to_vec();
        p[0] += 3.0 * r * ang.cos();
        if n == 2 {
            p[1] += 3.0 * r * ang.sin();
        }
        w.contains_closed(&p)
    }) && (n == 2 || (w.contains_closed(&[x0[0] - 3.0 * r]) && w.contains_closed(&[x0[0] + 3.0 * r])));
    if !probe_ok {
        return Err(Error::Domain("B'_3r(x0) is not inside W".into()));
    }
    let nt = layout.n_tangential_nodes();
    let mut phi = vec![0.0; nt];
    let mut psi = vec![0.0; nt];
    let mut local = Vec::new();
    for t in 0..nt {
        if layout.trace_tag(t) != TraceTag::Window {
            continue;
        }
        let x = &tg.coords(t)[..n];
        let d = dist(x);
        if d < 3.0 * r {
            local.push(t);
        }
        let q = d / (3.0 * r);
        if q < 1.0 {
            phi[t] = (1.0 - q * q).powi(2);
        } else {
            psi[t] = (q - 1.0).min(1.0);
        }
    }
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let u_phi = solve_mixed_problem(&op, &phi, None)?;
    let u_psi = if background != 0.0 {
        let mut u = solve_mixed_problem(&op, &psi, None)?;
        let e = op.energy(&u).sqrt();
        if e > 0.0 {
            u.values.iter_mut().for_each(|v| *v /= e);
            psi.iter_mut().for_each(|v| *v /= e);
        }
        Some(u)
    } else {
        None
    };
    let mass = tg.lumped_mass();
    let flux_phi = op.bottom_flux(&u_phi, None);
    let flux_psi = u_psi.as_ref().map(|u| op.bottom_flux(u, None));
    let mut center = x0.to_vec();
    center.push(0.0);
    let mut data_norms = Vec::new();
    let mut interior = Vec::new();
    let mut global = Vec::new();
    for &e in eps {
        let mut u = u_phi.clone();
        for v in u.values.iter_mut() {
            *v *= e;
        }
        if let Some(up) = &u_psi {
            for (a, b) in u.values.iter_mut().zip(&up.values) {
                *a += background * b;
            }
        }
        let g = op.energy(&u);
        let mut tr = 0.0;
        let mut fl = 0.0;
        for &t in &local {
            let val = e * phi[t] + background * psi[t];
            let f = e * flux_phi[t] + flux_psi.as_ref().map_or(0.0, |fp| background * fp[t]);
            tr += mass[t] * val * val;
            fl += f * f / mass[t];
        }
        data_norms.push(tr.sqrt() + fl.sqrt());
        interior.push(ball_norms(layout, &u, &center, r).l2_sq.sqrt());
        global.push(g.sqrt());
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = interior.iter().map(|v| v.max(1e-300).ln()).collect();
    let distinct = eps.windows(2).any(|p| p[0] != p[1]);
    let (slope, r2, warning) = if !distinct || eps.len() < 2 {
        (0.0, 0.0, Some("eps ladder is degenerate".to_string()))
    } else {
        let (a, _, r2) = linear_fit(&x, &y);
        let r2 = if r2.is_finite() { r2 } else { 0.0 };
        let warn = (r2 < 0.9).then(|| format!("ill-conditioned transfer fit (R² = {r2:.3})"));
        (a, r2, warn)
    };
    Ok(TransferFit {
        eps: eps.to_vec(),
        data_norms,
        interior_norms: interior,
        global_norms: global,
        slope,
        r2,
        warning,
    })
}

/// Candidate triple centers above the exterior: over W and between W and Ω.
pub fn default_triples(layout: &DomainLayout, q: f64) -> Vec<BallTriple> {
    let n = layout.dim();
    let wc = layout.regions.window_w.boxes[0].center();
    let oc = layout.regions.omega.boxes[0].center();
    let mut out = Vec::new();
    for frac in [0.0, 0.25, 0.5] {
        for y in [0.6, 1.0, 1.6] {
            let mut c: Vec<f64> = wc.iter().zip(&oc).map(|(w, o)| w + frac * (o - w)).collect();
            c.truncate(n);
            c.push(y);
            let r = admissible_radius(layout, &c, q);
            if r > 1.5 * layout.tangential.h {
                out.push(BallTriple { center: c, r });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub seeds: Vec<u64>,
    /// Valid exponents per seed.
    pub alphas: Vec<Vec<f64>>,
    pub invalid: usize,
    pub min: f64,
    pub max: f64,
}

/// Exponents over mixed solves with seeded random W data.
#[allow(clippy::too_many_arguments)]
pub fn random_exterior_alphas(
    layout: &DomainLayout,
    metric: &Metric,
    s: f64,
    seeds: &[u64],
    triples: &[BallTriple],
    q: f64,
    opts: &SolverOptions,
    exec: Execution,
) -> Result<AlphaSweep> {
    for t in triples {
        t.validate(layout, q)?;
    }
    let op = assemble_extension_operator(layout, metric, s, BottomCondition::Mixed, opts)?;
    let nt = layout.n_tangential_nodes();
    let per = try_map_indexed(seeds.len(), exec, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
        let f: Vec<f64> = (0..nt)
            .map(|t| {
                if layout.trace_tag(t) == TraceTag::Window {
                    rng.gen_range(-1.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        let u = solve_mixed_problem(&op, &f, None).map_err(|e| e.in_column(i))?;
        let mut a = Vec::new();
        let mut bad = 0;
        for t in triples {
            let rep = three_balls_exponent(layout, &u, t, q)?;
            match rep.alpha {
                Some(x) => a.push(x),
                None => bad += 1,
            }
        }
        Ok((a, bad))
    })?;
    let invalid = per.iter().map(|p| p.1).sum();
    let alphas: Vec<Vec<f64>> = per.into_iter().map(|p| p.0).collect();
    let all = alphas.iter().flatten();
    let min = all.clone().copied().fold(f64::INFINITY, f64::min);
    let max = all.copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(AlphaSweep {
        seeds: seeds.to_vec(),
        alphas,
        invalid,
        min,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_values() {
        assert_eq!(carleman_weight(0.0), 0.0);
        let pts: Vec<f64> = (0..=2000).map(|i| -1e6 + 1e3 * i as f64).collect();
        let c = check_carleman_weight(&pts);
        assert!(c.within_band && c.max_derivative < 0.0);
    }

    #[test]
    fn exponent_definition() {
        let r = ExponentReport::from_norms([1.0, 2.0, 8.0]);
        let a = r.alpha.unwrap();
        assert!((2.0 - 1f64.powf(a) * 8f64.powf(1.0 - a)).abs() < 1e-12);
        assert!(!ExponentReport::from_norms([1.0, 1.0, 1.0]).valid);
        let s = ExponentReport::from_norms([3.0, 6.0, 24.0]);
        assert!((s.alpha.unwrap() - a).abs() < 1e-14);
    }

    #[test]
    fn linear_field_closed_form() {
        // s = 1/2, w = y on B_R((x, c)) in ℝ³: ∫ y² = c² 4πR³/3 + 4πR⁵/15
        let c = 5.0;
        let n = |r: f64| (c * c * 4.0 * PI * r.powi(3) / 3.0 + 4.0 * PI * r.powi(5) / 15.0).sqrt();
        let rep = exponent_from(n, 1.0);
        let (n1, n2, n4) = (n(1.0), n(2.0), n(4.0));
        let oracle = (n4 / n2).ln() / (n4 / n1).ln();
        assert!((rep.alpha.unwrap() - oracle).abs() < 1e-12);
        assert!(rep.alpha.unwrap() > 0.0 && rep.alpha.unwrap() < 1.0);
    }
}
