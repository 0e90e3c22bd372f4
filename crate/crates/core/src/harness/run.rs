//! One function per experiment kind. Every run writes its CSV and JSON
//! outputs through a [`RunWriter`] and finishes with `manifest.json`.

use super::config::{datum_values, ExperimentConfig, ExperimentKind};
use super::manifest::{RunManifest, RunWriter};
use super::stability::stability_sweep;
use crate::dtn::{calibrate_cs, fractional_dtn_matrix, local_dtn_matrix_on, DtnMatrix, LocalProblem};
use crate::elliptic::{
    assemble_extension_operator, solve_mixed_problem, weighted_neumann_trace, write_field_csv, BottomCondition,
};
use crate::grid::{admissible_radius, ball_chain, ChainPolicy, ChainTarget, DomainLayout, RegionName};
use crate::heat::{cross_validate_extensions, vertical_decay_fit, PoissonOptions};
use crate::metric::Metric;
use crate::par::Execution;
use crate::reduction::{reduce, tail_slopes};
use crate::runge::{
    adjoint_consistency, assemble_t, cost_curve, default_tau_ladder, support_fit, svd_of,
};
use crate::smallness::{
    boundary_bulk_transfer, check_carleman_weight, default_triples, propagate_chain, random_exterior_alphas,
};
use crate::sobolev::SpectralBasis;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Runs `cfg` (at `refine` levels of tangential refinement) into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, refine: u32, exec: Execution) -> Result<RunManifest> {
    let cfg = if refine > 0 { cfg.refined(refine) } else { cfg.clone() };
    cfg.validate()?;
    let mut w = RunWriter::create(out)?;
    w.json("config.json", &cfg)?;
    let layout = w.stage("grid", |_| cfg.layout())?;
    w.param("n", layout.dim() as f64);
    w.param("s", cfg.physics.s);
    w.param("nodes_x", cfg.grid.nodes_x as f64);
    w.param("nodes_y", cfg.grid.nodes_y as f64);
    match cfg.experiment.kind {
        ExperimentKind::SolveExtension => solve_extension(&cfg, &layout, &mut w)?,
        ExperimentKind::Dtn => dtn(&cfg, &layout, &mut w, exec)?,
        ExperimentKind::Reduce => reduction(&cfg, &layout, &mut w, refine)?,
        ExperimentKind::Tails => tails(&cfg, &layout, &mut w)?,
        ExperimentKind::Runge => runge(&cfg, &layout, &mut w, exec)?,
        ExperimentKind::Smallness => smallness(&cfg, &layout, &mut w, exec)?,
        ExperimentKind::Stability => stability(&cfg, &mut w, exec)?,
        ExperimentKind::Selftest => selftest(&cfg, &layout, &mut w, exec)?,
    }
    w.finish(cfg.hash(), cfg.experiment.kind.name(), cfg.experiment.seed, refine)
}

fn metric(cfg: &ExperimentConfig, layout: &DomainLayout) -> Result<Metric> {
    cfg.metric.build(layout)
}

fn solve_extension(cfg: &ExperimentConfig, layout: &DomainLayout, w: &mut RunWriter) -> Result<()> {
    let s = cfg.physics.s;
    let a = metric(cfg, layout)?;
    let f = datum_values(layout, &cfg.datum, cfg.experiment.seed);
    let (u, residual, energy) = w.stage("solve", |_| {
        let op = assemble_extension_operator(layout, &a, s, BottomCondition::Mixed, &cfg.solver)?;
        let u = solve_mixed_problem(&op, &f, None)?;
        let r = op.residual_norm(&u, &f, None);
        let e = op.energy(&u);
        Ok((u, r, e))
    })?;
    let trace = weighted_neumann_trace(&u, s)?;
    w.file("field.csv", |b| write_field_csv(layout, &u, b))?;
    w.file("trace.csv", |b| {
        writeln!(b, "node,x1,x2,datum,trace,weighted_neumann")?;
        for t in 0..layout.n_tangential_nodes() {
            let c = layout.tangential.coords(t);
            writeln!(b, "{t},{:.10e},{:.10e},{:.15e},{:.15e},{:.15e}", c[0], c[1], f[t], u.at(t, 0), trace.values[t])?;
        }
        Ok(())
    })?;
    let cv = w.stage("cross_validate", |_| {
        cross_validate_extensions(layout, &a, &f, s, &cfg.solver, &PoissonOptions::default())
    })?;
    w.budget("solver_residual", residual);
    w.budget("energy", energy);
    w.budget("poisson_discrepancy", cv.discrepancy);
    Ok(())
}

fn write_dtn(w: &mut RunWriter, stem: &str, m: &DtnMatrix) -> Result<()> {
    w.file(&format!("{stem}.csv"), |b| m.write_csv(b))?;
    w.json(&format!("{stem}.json"), &m.sidecar())
}

fn dtn(cfg: &ExperimentConfig, layout: &DomainLayout, w: &mut RunWriter, exec: Execution) -> Result<()> {
    let s = cfg.physics.s;
    let a = metric(cfg, layout)?;
    let cal = w.stage("calibrate", |_| calibrate_cs(s, &cfg.solver))?;
    w.file("calibration.csv", |b| {
        writeln!(b, "mode,wavenumber,raw_symbol,relative_error")?;
        for i in 0..cal.modes.len() {
            writeln!(
                b,
                "{},{:.15e},{:.15e},{:.6e}",
                cal.modes[i], cal.wavenumbers[i], cal.raw_symbols[i], cal.relative_errors[i]
            )?;
        }
        Ok(())
    })?;
    let frac = w.stage("fractional", |_| fractional_dtn_matrix(layout, &a, s, cal.c_s, &cfg.solver, exec))?;
    let local = w.stage("local", |_| local_dtn_matrix_on(layout, RegionName::OmegaOne, &a))?;
    write_dtn(w, "dtn_fractional", &frac)?;
    write_dtn(w, "dtn_local", &local)?;
    let fb = SpectralBasis::new(&frac.nodes)?;
    let lb = SpectralBasis::new(&local.nodes)?;
    w.budget("c_s", cal.c_s);
    w.budget("c_s_closed_form", cal.closed_form);
    w.budget("fractional_symmetry_defect", frac.symmetry_defect());
    w.budget("local_symmetry_defect", local.symmetry_defect());
    w.budget("fractional_norm", frac.operator_norm(&fb)?);
    w.budget("local_norm", local.operator_norm(&lb)?);
    Ok(())
}

fn reduction(cfg: &ExperimentConfig, layout: &DomainLayout, w: &mut RunWriter, refine: u32) -> Result<()> {
    let s = cfg.physics.s;
    let a = metric(cfg, layout)?;
    let f = datum_values(layout, &cfg.datum, cfg.experiment.seed);
    let window = (cfg.reduce.h, cfg.reduce.l);
    let r = w.stage("reduce", |_| reduce(layout, &a, s, &f, window, &cfg.solver, refine))?;
    w.file("potential.csv", |b| {
        writeln!(b, "node,x1,x2,v")?;
        for (t, v) in r.potential.values.iter().enumerate() {
            let c = layout.tangential.coords(t);
            writeln!(b, "{t},{:.10e},{:.10e},{v:.15e}", c[0], c[1])?;
        }
        Ok(())
    })?;
    w.file("cauchy.csv", |b| r.cauchy.write_csv(layout, b))?;
    w.file("summary.csv", |b| {
        writeln!(b, "h,L,residual,graph_gap,tail_h,tail_l,discretization,solver_residual,total")?;
        let e = &r.budget;
        writeln!(
            b,
            "{:.6e},{:.6e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
            e.window_h, e.window_l, r.residual, r.graph_gap, e.tail_h, e.tail_l, e.discretization, e.solver_residual, e.total
        )?;
        Ok(())
    })?;
    w.json("budget.json", &r.budget)?;
    let e = r.budget;
    w.budget("residual", r.residual);
    w.budget("graph_gap", r.graph_gap);
    w.budget("tail_h", e.tail_h);
    w.budget("tail_l", e.tail_l);
    w.budget("discretization", e.discretization);
    w.budget("solver_residual", e.solver_residual);
    w.budget("total", e.total);
    Ok(())
}

fn tails(cfg: &ExperimentConfig, layout: &DomainLayout, w: &mut RunWriter) -> Result<()> {
    let s = cfg.physics.s;
    let a = metric(cfg, layout)?;
    let f = datum_values(layout, &cfg.datum, cfg.experiment.seed);
    let u = w.stage("solve", |_| {
        let op = assemble_extension_operator(layout, &a, s, BottomCondition::Mixed, &cfg.solver)?;
        solve_mixed_problem(&op, &f, None)
    })?;
    let d = cfg.tails.d.clone().unwrap_or_else(|| layout.regions.omega.clone());
    let rep = w.stage("slopes", |_| tail_slopes(layout, &u, s, &cfg.tails.l, &cfg.tails.h, &d))?;
    let [y_lo, y_hi] = cfg.tails.decay;
    let win = &layout.regions.window_w;
    let decay = w.stage("decay", |_| vertical_decay_fit(layout, &u, win, y_lo, y_hi))?;
    w.file("tails_upper.csv", |b| {
        writeln!(b, "L,norm")?;
        for (x, v) in rep.tail.x.iter().zip(&rep.tail.norms) {
            writeln!(b, "{x:.10e},{v:.15e}")?;
        }
        Ok(())
    })?;
    w.file("tails_lower.csv", |b| {
        writeln!(b, "h,norm")?;
        for (x, v) in rep.lower.x.iter().zip(&rep.lower.norms) {
            writeln!(b, "{x:.10e},{v:.15e}")?;
        }
        Ok(())
    })?;
    let n = layout.dim();
    let w_nodes: Vec<usize> = (0..layout.n_tangential_nodes())
        .filter(|&t| win.contains_closed(&layout.tangential.coords(t)[..n]))
        .collect();
    w.file("decay.csv", |b| {
        writeln!(b, "y,sup,in_fit")?;
        for k in 1..u.ny() {
            let y = u.heights[k];
            let sup = w_nodes.iter().map(|&t| u.at(t, k).abs()).fold(0.0, f64::max);
            writeln!(b, "{y:.10e},{sup:.15e},{}", (y_lo..=y_hi).contains(&y))?;
        }
        Ok(())
    })?;
    w.file("slopes.csv", |b| {
        writeln!(b, "quantity,measured,reference,r2")?;
        writeln!(b, "upper_tail,{:.6},{:.6},{:.6}", rep.tail.slope, rep.reference_tail, rep.tail.r2)?;
        writeln!(b, "lower_piece,{:.6},{:.6},{:.6}", rep.lower.slope, rep.reference_lower, rep.lower.r2)?;
        writeln!(b, "decay,{decay:.6},{:.6},", -(n as f64))?;
        Ok(())
    })?;
    w.budget("tail_slope", rep.tail.slope);
    w.budget("lower_slope", rep.lower.slope);
    w.budget("decay_slope", decay);
    Ok(())
}

/// a-harmonic target on Ω: the discrete solution on Ω₁ with a quadratic
/// boundary datum, restricted to the interior nodes of Ω.
pub fn runge_target(layout: &DomainLayout, a: &Metric) -> Result<Vec<f64>> {
    let local = LocalProblem::conductivity_on(layout, RegionName::OmegaOne, a)?;
    let n = layout.dim();
    let g: Vec<f64> = local
        .boundary
        .nodes
        .iter()
        .map(|&t| {
            let x = layout.tangential.coords(t);
            let x1 = if n > 1 { x[1] } else { 0.0 };
            1.0 + 0.5 * x[0] + 0.3 * (x[0] * x[0] - x1 * x1)
        })
        .collect();
    let full = local.extend(&g);
    Ok(layout.interior_nodes(RegionName::Omega).restrict(&full))
}

/// Seeded test vectors for the adjoint check: `f` on the trace (zero off W)
/// and `w` at the interior nodes of Ω.
pub fn adjoint_probes(layout: &DomainLayout, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = (0..layout.n_tangential_nodes())
        .map(|t| {
            if layout.window_nodes().position(t).is_some() {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect();
    let m = layout.interior_nodes(RegionName::Omega).len();
    let w = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (f, w)
}

fn runge(cfg: &ExperimentConfig, layout: &DomainLayout, w: &mut RunWriter, exec: Execution) -> Result<()> {
    let s = cfg.physics.s;
    let a = metric(cfg, layout)?;
    let window = (cfg.runge.window[0], cfg.runge.window[1]);
    let t = w.stage("assemble_t", |_| assemble_t(layout, &a, s, window, &cfg.solver, exec))?;
    let svd = w.stage("svd", |_| svd_of(&t))?;
    let v = runge_target(layout, &a)?;
    let taus = default_tau_ladder(&svd, cfg.runge.tau_points);
    let curve = w.stage("cost_curve", |_| cost_curve(&v, &svd, &taus))?;
    let (f, wv) = adjoint_probes(layout, cfg.experiment.seed);
    let adj = w.stage("adjoint", |_| adjoint_consistency(layout, &a, s, &f, &wv, window, &cfg.solver))?;
    let ks = [1usize, 2, 4, 8, 16, 32, 64];
    let beta = w.stage("cutoffs", |_| support_fit(&ks, s))?;
    w.file("singular_values.csv", |b| svd.write_csv(b))?;
    w.file("cost_curve.csv", |b| curve.write_csv(b))?;
    w.file("adjoint.csv", |b| {
        writeln!(b, "forward,adjoint,mismatch")?;
        writeln!(b, "{:.15e},{:.15e},{:.6e}", adj.forward, adj.adjoint, adj.mismatch)?;
        Ok(())
    })?;
    w.file("cutoff_support.csv", |b| {
        writeln!(b, "k,support")?;
        for (k, r) in beta.ks.iter().zip(&beta.support) {
            writeln!(b, "{k},{r:.12e}")?;
        }
        Ok(())
    })?;
    w.json("cost_summary.json", &curve)?;
    w.budget("sigma_max", svd.sigma[0]);
    w.budget("sigma_min", *svd.sigma.last().unwrap_or(&f64::NAN));
    w.budget("phi_orthonormality", svd.phi_orthonormality());
    w.budget("adjoint_mismatch", adj.mismatch);
    w.budget("cutoff_p2", beta.p2);
    w.budget("cutoff_normalization_error", beta.max_normalization_error);
    if let Some(mu) = curve.mu_hat {
        w.budget("mu_hat", mu);
    }
    w.budget("cost_monotone", curve.cost_monotone as u8 as f64);
    w.budget("error_monotone", curve.error_monotone as u8 as f64);
    Ok(())
}

/// Chain from above the W center to a ball midway between Ω and W.
pub fn default_chain_endpoints(layout: &DomainLayout, q: f64) -> (Vec<f64>, ChainTarget) {
    let n = layout.dim();
    let wc = layout.regions.window_w.boxes[0].center();
    let ob = &layout.regions.omega.boxes[0];
    let wb = &layout.regions.window_w.boxes[0];
    let mut start: Vec<f64> = wc[..n].to_vec();
    start.push(1.0);
    let mut c = vec![0.0; n + 1];
    c[0] = 0.5 * (ob.hi[0] + wb.lo[0]);
    c[n] = 1.0;
    let radius = 0.9 * admissible_radius(layout, &c, q);
    (start, ChainTarget { center: c, radius })
}

fn smallness(cfg: &ExperimentConfig, layout: &DomainLayout, w: &mut RunWriter, exec: Execution) -> Result<()> {
    let s = cfg.physics.s;
    let a = metric(cfg, layout)?;
    let sm = &cfg.smallness;
    let pts: Vec<f64> = (0..=2000).map(|i| -1e6 + 1e3 * i as f64).collect();
    let wc = check_carleman_weight(&pts);
    w.file("carleman.csv", |b| {
        writeln!(b, "samples,max_derivative,min_derivative,within_band,max_fd_error")?;
        writeln!(
            b,
            "{},{:.15e},{:.15e},{},{:.6e}",
            wc.samples, wc.max_derivative, wc.min_derivative, wc.within_band, wc.max_fd_error
        )?;
        Ok(())
    })?;
    let triples = default_triples(layout, sm.q);
    if triples.is_empty() {
        return Err(Error::Domain("no admissible ball triple in this layout".into()));
    }
    let seeds: Vec<u64> = (0..sm.samples as u64).map(|i| cfg.experiment.seed.wrapping_add(i)).collect();
    let sweep = w.stage("alphas", |_| {
        random_exterior_alphas(layout, &a, s, &seeds, &triples, sm.q, &cfg.solver, exec)
    })?;
    w.file("alphas.csv", |b| {
        writeln!(b, "seed,triple,alpha")?;
        for (seed, al) in sweep.seeds.iter().zip(&sweep.alphas) {
            for (j, x) in al.iter().enumerate() {
                writeln!(b, "{seed},{j},{x:.15e}")?;
            }
        }
        Ok(())
    })?;
    let x0 = layout.regions.window_w.boxes[0].center();
    let fit = w.stage("transfer", |_| {
        boundary_bulk_transfer(layout, &a, s, &x0, sm.r, &sm.eps, sm.background, &cfg.solver)
    })?;
    w.file("transfer.csv", |b| {
        writeln!(b, "eps,data_norm,interior_norm,global_norm")?;
        for i in 0..fit.eps.len() {
            writeln!(
                b,
                "{:.10e},{:.15e},{:.15e},{:.15e}",
                fit.eps[i], fit.data_norms[i], fit.interior_norms[i], fit.global_norms[i]
            )?;
        }
        Ok(())
    })?;
    let f = datum_values(layout, &cfg.datum, cfg.experiment.seed);
    let table = w.stage("chain", |_| {
        let op = assemble_extension_operator(layout, &a, s, BottomCondition::Mixed, &cfg.solver)?;
        let u = solve_mixed_problem(&op, &f, None)?;
        let (start, target) = default_chain_endpoints(layout, sm.q);
        let policy = ChainPolicy {
            q: sm.q,
            kappa: sm.kappa,
            ..ChainPolicy::default()
        };
        let chain = ball_chain(layout, &start, &target, &policy)?;
        Ok((propagate_chain(layout, &u, &chain, exec)?, chain.required_kappa()))
    })?;
    let (table, kappa_needed) = table;
    w.file("chain.csv", |b| table.write_csv(b))?;
    w.budget("alpha_min", sweep.min);
    w.budget("alpha_max", sweep.max);
    w.budget("alpha_invalid", sweep.invalid as f64);
    w.budget("transfer_slope", fit.slope);
    w.budget("transfer_r2", fit.r2);
    w.budget("chain_cumulative", table.cumulative);
    w.budget("chain_flagged", table.flagged as f64);
    w.budget("chain_kappa_needed", kappa_needed);
    w.budget("carleman_band", wc.within_band as u8 as f64);
    Ok(())
}

fn stability(cfg: &ExperimentConfig, w: &mut RunWriter, exec: Execution) -> Result<()> {
    let mut partial = Vec::new();
    let res = w.stage("sweep", |_| stability_sweep(cfg, exec, &mut partial));
    let sweep = match res {
        Ok(sw) => sw,
        Err(e) => {
            // keep whatever was computed before the failure
            w.file("stability_partial.csv", |b| {
                writeln!(b, "theta,delta_s,delta_1,metric_sup")?;
                for r in &partial {
                    writeln!(b, "{:.6e},{:.15e},{:.15e},{:.15e}", r.theta, r.delta_s, r.delta_1, r.metric_sup)?;
                }
                Ok(())
            })?;
            return Err(e);
        }
    };
    w.file("stability.csv", |b| sweep.write_csv(b))?;
    w.json("modulus.json", &sweep.fit)?;
    w.budget("c_s", sweep.c_s);
    w.budget("spearman", sweep.fit.spearman);
    w.budget("modulus_r2", sweep.fit.r2);
    w.budget("monotone", sweep.fit.monotone as u8 as f64);
    Ok(())
}

/// Cheap invariants on a small grid; fails the run if any is violated.
fn selftest(cfg: &ExperimentConfig, layout: &DomainLayout, w: &mut RunWriter, exec: Execution) -> Result<()> {
    let s = cfg.physics.s;
    let a = metric(cfg, layout)?;
    let mut rows: Vec<(&str, f64, f64)> = Vec::new();

    let cal = calibrate_cs(s, &cfg.solver)?;
    rows.push(("calibration_error", cal.relative_errors.iter().copied().fold(0.0, f64::max), 0.05));
    let frac = fractional_dtn_matrix(layout, &a, s, cal.c_s, &cfg.solver, exec)?;
    rows.push(("fractional_symmetry", frac.symmetry_defect(), 1e-6));
    let local = local_dtn_matrix_on(layout, RegionName::OmegaOne, &a)?;
    rows.push(("local_symmetry", local.symmetry_defect(), 1e-10));
    let ones = vec![1.0; local.dim()];
    let l1 = local.apply(&ones).iter().map(|v| v.abs()).fold(0.0, f64::max);
    rows.push(("local_constants", l1, 1e-8));

    let (f, wv) = adjoint_probes(layout, cfg.experiment.seed);
    let window = (cfg.runge.window[0], cfg.runge.window[1]);
    let adj = adjoint_consistency(layout, &a, s, &f, &wv, window, &cfg.solver)?;
    rows.push(("adjoint_mismatch", adj.mismatch, 1e-6));

    let pts: Vec<f64> = (0..=200).map(|i| -1e4 + 1e2 * i as f64).collect();
    let wc = check_carleman_weight(&pts);
    rows.push(("carleman_band", if wc.within_band { 0.0 } else { 1.0 }, 0.5));

    let beta = support_fit(&[1, 2, 4], s)?;
    rows.push(("cutoff_normalization", beta.max_normalization_error, 1e-8));

    let text = cfg.to_toml_string()?;
    let back = ExperimentConfig::from_toml_str(&text)?;
    rows.push(("config_roundtrip", if back == *cfg { 0.0 } else { 1.0 }, 0.5));

    w.file("selftest.csv", |b| {
        writeln!(b, "check,value,limit,pass")?;
        for (name, v, lim) in &rows {
            writeln!(b, "{name},{v:.6e},{lim:.1e},{}", *v <= *lim)?;
        }
        Ok(())
    })?;
    let failed: Vec<&str> = rows.iter().filter(|r| !(r.1 <= r.2)).map(|r| r.0).collect();
    w.budget("checks", rows.len() as f64);
    w.budget("failed", failed.len() as f64);
    if !failed.is_empty() {
        return Err(Error::Numeric(format!("selftest failed: {}", failed.join(", "))));
    }
    Ok(())
}
