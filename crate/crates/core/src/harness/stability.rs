use super::config::ExperimentConfig;
use crate::dtn::{calibrate_cs, fractional_dtn_matrix, local_dtn_matrix_on, DtnMatrix};
use crate::grid::{DomainLayout, RegionName};
use crate::heat::linear_fit;
use crate::par::{map_indexed, Execution};
use crate::sobolev::SpectralBasis;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulusFamily {
    /// `δ₁ ≈ a + b ln δ_s`.
    Log,
    /// `ln δ₁ ≈ a + b ln δ_s`.
    Loglog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulusFit {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub family: ModulusFamily,
    /// `(intercept, slope)`.
    pub params: (f64, f64),
    pub r2: f64,
    pub spearman: f64,
    pub monotone: bool,
}

impl ModulusFit {
    /// Fits the better of the two families on the positive points and sets
    /// the co-monotonicity verdict.
    pub fn fit(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Input("x and y lengths differ".into()));
        }
        let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (*a, *b)).collect();
        let lx: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
        let ly: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        let py: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (family, params, r2) = if pts.len() >= 2 {
            let (b1, a1, r1) = linear_fit(&lx, &ly);
            let (b2, a2, r2) = linear_fit(&lx, &py);
            if r1 >= r2 {
                (ModulusFamily::Loglog, (a1, b1), r1)
            } else {
                (ModulusFamily::Log, (a2, b2), r2)
            }
        } else {
            (ModulusFamily::Loglog, (f64::NAN, f64::NAN), 0.0)
        };
        Ok(ModulusFit {
            x: x.to_vec(),
            y: y.to_vec(),
            family,
            params,
            r2,
            spearman: spearman(x, y),
            monotone: verdict(x, y),
        })
    }

    pub fn recompute_verdict(&self) -> bool {
        verdict(&self.x, &self.y)
    }
}

/// Both sequences strictly increasing and perfectly rank-correlated.
pub fn verdict(x: &[f64], y: &[f64]) -> bool {
    let inc = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    inc(x) && inc(y) && spearman(x, y) == 1.0
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = 0.5 * (i + j) as f64 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties. Perfectly
/// co-ordered sequences give exactly one.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    if rx == ry {
        return 1.0;
    }
    let m = (n as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (rx[i] - m, ry[i] - m);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub theta: f64,
    pub delta_s: f64,
    pub delta_1: f64,
    pub metric_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySweep {
    pub rows: Vec<StabilityRow>,
    pub c_s: f64,
    pub fit: ModulusFit,
}

impl StabilitySweep {
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "theta,delta_s,delta_1,metric_sup")?;
        for r in &self.rows {
            writeln!(out, "{:.6e},{:.15e},{:.15e},{:.15e}", r.theta, r.delta_s, r.delta_1, r.metric_sup)?;
        }
        Ok(())
    }
}

/// Reads the rows back from the CSV written by [`StabilitySweep::write_csv`].
pub fn read_stability_csv(input: impl BufRead) -> Result<Vec<StabilityRow>> {
    let mut rows = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Serde(format!("line {}: {e}", i + 1)))?;
        if v.len() != 4 {
            return Err(Error::Serde(format!("line {}: expected 4 columns", i + 1)));
        }
        rows.push(StabilityRow {
            theta: v[0],
            delta_s: v[1],
            delta_1: v[2],
            metric_sup: v[3],
        });
    }
    Ok(rows)
}

/// The verdict recomputed from persisted rows (θ = 0 excluded).
pub fn verdict_from_rows(rows: &[StabilityRow]) -> bool {
    let pos: Vec<&StabilityRow> = rows.iter().filter(|r| r.theta > 0.0).collect();
    let x: Vec<f64> = pos.iter().map(|r| r.delta_s).collect();
    let y: Vec<f64> = pos.iter().map(|r| r.delta_1).collect();
    verdict(&x, &y)
}

struct Operators {
    frac: DtnMatrix,
    local: DtnMatrix,
}

fn operators(cfg: &ExperimentConfig, layout: &DomainLayout, theta: f64, c_s: f64, exec: Execution) -> Result<Operators> {
    let metric = cfg.metric.at(layout, theta)?;
    Ok(Operators {
        frac: fractional_dtn_matrix(layout, &metric, cfg.physics.s, c_s, &cfg.solver, exec)?,
        local: local_dtn_matrix_on(layout, RegionName::OmegaOne, &metric)?,
    })
}

/// `δ_s(θ) = ‖Λ_s^{a_θ} - Λ_s^{a_0}‖`, `δ₁(θ)` likewise on the Ω₁ loop, and
/// `‖a_θ - a_0‖_∞` over the ladder (θ = 0 is always included first).
/// Rows computed before a failure are returned through `partial`.
pub fn stability_sweep(cfg: &ExperimentConfig, exec: Execution, partial: &mut Vec<StabilityRow>) -> Result<StabilitySweep> {
    partial.clear();
    let layout = cfg.layout()?;
    let mut thetas = vec![0.0];
    thetas.extend(cfg.metric.thetas().iter().copied().filter(|&t| t > 0.0));
    if thetas.len() < 3 {
        return Err(Error::Config("metric.thetas needs at least two positive amplitudes".into()));
    }
    let c_s = calibrate_cs(cfg.physics.s, &cfg.solver)?.c_s;
    let base = operators(cfg, &layout, 0.0, c_s, exec)?;
    let a0 = cfg.metric.at(&layout, 0.0)?;
    let w_basis = SpectralBasis::new(&base.frac.nodes)?;
    let loop_basis = SpectralBasis::new(&base.local.nodes)?;
    let inner = Execution::Sequential;
    // θ = 0 is recomputed rather than assumed
    let results = map_indexed(thetas.len(), exec, |i| -> Result<StabilityRow> {
        let theta = thetas[i];
        let ops = operators(cfg, &layout, theta, c_s, inner).map_err(|e| e.in_column(i))?;
        let a = cfg.metric.at(&layout, theta)?;
        Ok(StabilityRow {
            theta,
            delta_s: ops.frac.distance(&base.frac, &w_basis)?,
            delta_1: ops.local.distance(&base.local, &loop_basis)?,
            metric_sup: a.sup_distance(&a0),
        })
    });
    for r in results {
        partial.push(r?);
    }
    let all = partial.clone();
    let x: Vec<f64> = all[1..].iter().map(|r| r.delta_s).collect();
    let y: Vec<f64> = all[1..].iter().map(|r| r.delta_1).collect();
    let fit = ModulusFit::fit(&x, &y)?;
    Ok(StabilitySweep { rows: all, c_s, fit })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]), 1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) < 1.0);
    }

    #[test]
    fn verdict_roundtrips_through_csv() {
        let rows: Vec<StabilityRow> = (0..5)
            .map(|i| StabilityRow {
                theta: 0.05 * i as f64,
                delta_s: 0.01 * (i * i) as f64,
                delta_1: 0.3 * i as f64,
                metric_sup: 0.05 * i as f64,
            })
            .collect();
        let fit = ModulusFit::fit(
            &rows[1..].iter().map(|r| r.delta_s).collect::<Vec<_>>(),
            &rows[1..].iter().map(|r| r.delta_1).collect::<Vec<_>>(),
        )
        .unwrap();
        let sweep = StabilitySweep { rows, c_s: 1.0, fit };
        let mut buf = Vec::new();
        sweep.write_csv(&mut buf).unwrap();
        let back = read_stability_csv(&buf[..]).unwrap();
        assert_eq!(verdict_from_rows(&back), sweep.fit.monotone);
        assert!(sweep.fit.monotone);
        assert_eq!(sweep.fit.family, ModulusFamily::Loglog);
        assert!((sweep.fit.params.1 - 0.5).abs() < 1e-9);
    }
}
