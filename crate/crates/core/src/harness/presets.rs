//! Default configurations. `fraclab <kind>` without `--config` runs these,
//! and the acceptance suite uses them as its "default resolution".

use super::config::*;
use crate::elliptic::SolverOptions;
use crate::grid::{GridSpec, Region, RegionSpec};

pub const ALL_KINDS: [ExperimentKind; 8] = [
    ExperimentKind::SolveExtension,
    ExperimentKind::Dtn,
    ExperimentKind::Reduce,
    ExperimentKind::Tails,
    ExperimentKind::Runge,
    ExperimentKind::Smallness,
    ExperimentKind::Stability,
    ExperimentKind::Selftest,
];

fn square(a: f64) -> Region {
    Region::single(&[-a, -a], &[a, a])
}

fn grid(n: usize, x: f64, nodes: usize, y: f64, ny: usize, ratio: f64) -> GridSpec {
    GridSpec {
        n_tangential: n,
        extent_x: x,
        nodes_x: nodes,
        height_y: y,
        nodes_y: ny,
        grading_ratio: ratio,
        periodic: false,
    }
}

/// `X = 3`: Ω = (-0.75, 0.75)², W = (1.5, 2.3) × (-0.6, 0.6).
pub fn standard_regions() -> RegionSpec {
    RegionSpec {
        omega_prime: square(0.4),
        omega: square(0.75),
        omega_one: square(1.1),
        window_w: Region::single(&[1.5, -0.6], &[2.3, 0.6]),
    }
}

/// Unit-scale regions for the wide tail boxes, `n = 1` or `2`.
pub fn compact_regions(n: usize) -> RegionSpec {
    if n == 1 {
        RegionSpec {
            omega_prime: Region::single(&[-0.25], &[0.25]),
            omega: Region::single(&[-0.5], &[0.5]),
            omega_one: Region::single(&[-0.75], &[0.75]),
            window_w: Region::single(&[1.0], &[2.0]),
        }
    } else {
        RegionSpec {
            omega_prime: square(0.25),
            omega: square(0.5),
            omega_one: square(0.75),
            window_w: Region::single(&[1.0, -0.5], &[2.0, 0.5]),
        }
    }
}

fn base(kind: ExperimentKind, grid: GridSpec, regions: RegionSpec, s: f64, metric: MetricFamily) -> ExperimentConfig {
    ExperimentConfig {
        experiment: ExperimentSection {
            kind,
            seed: 20240607,
            out: None,
        },
        grid,
        regions,
        physics: PhysicsSection { s },
        metric,
        solver: SolverOptions::default(),
        datum: DatumSpec::Bump,
        tails: TailsSection::default(),
        reduce: ReduceSection::default(),
        runge: RungeSection::default(),
        smallness: SmallnessSection::default(),
    }
}

fn bump(theta: f64) -> MetricFamily {
    MetricFamily::IsotropicBump {
        theta,
        thetas: Vec::new(),
        theta1: 0.5,
    }
}

pub fn preset(kind: ExperimentKind) -> ExperimentConfig {
    let std_grid = grid(2, 3.0, 49, 8.0, 32, 1.3);
    match kind {
        ExperimentKind::SolveExtension | ExperimentKind::Dtn | ExperimentKind::Runge | ExperimentKind::Smallness => {
            base(kind, std_grid, standard_regions(), 0.75, bump(0.2))
        }
        ExperimentKind::Reduce => reduction_level(0),
        ExperimentKind::Tails => tails_upper(),
        ExperimentKind::Stability => stability(),
        ExperimentKind::Selftest => {
            let mut c = base(kind, grid(2, 2.0, 17, 4.0, 12, 1.3), compact_regions(2), 0.75, bump(0.1));
            c.regions.window_w = Region::single(&[1.0, -0.5], &[1.5, 0.5]);
            c
        }
    }
}

/// Wide box for the upper tail and the decay fit: `X = 16`, `Y = 64`.
pub fn tails_upper() -> ExperimentConfig {
    let mut c = base(
        ExperimentKind::Tails,
        grid(2, 16.0, 129, 64.0, 48, 1.12),
        compact_regions(2),
        0.75,
        MetricFamily::Identity,
    );
    c.tails.l = vec![2.0, 2.8, 4.0, 5.6, 8.0];
    c.tails.decay = [2.0, 8.0];
    c
}

/// Fine small box for the lower piece, with a datum of borderline
/// regularity `d^{s-1/2}` at the W faces. The fit runs over
/// `h ∈ [4 h_x, diam_1(W) / 4]`, the range where the grid and the finite
/// width of W do not interfere.
pub fn tails_lower() -> ExperimentConfig {
    let regions = RegionSpec {
        omega_prime: Region::single(&[-1.0, -0.25], &[-0.5, 0.25]),
        omega: Region::single(&[-1.125, -0.375], &[-0.375, 0.375]),
        omega_one: Region::single(&[-1.25, -0.5], &[-0.25, 0.5]),
        window_w: Region::single(&[0.0, -0.5], &[1.0, 0.5]),
    };
    let s = 0.75;
    let mut c = base(ExperimentKind::Tails, grid(2, 1.5, 193, 3.0, 48, 1.12), regions, s, MetricFamily::Identity);
    c.datum = DatumSpec::Edge { exponent: s - 0.5 };
    let hx = 2.0 * c.grid.extent_x / (c.grid.nodes_x - 1) as f64;
    let (lo, hi) = (4.0 * hx, 0.25);
    c.tails.h = (0..5).map(|k| lo * (hi / lo).powf(k as f64 / 4.0)).collect();
    c.tails.l = vec![1.0, 1.5];
    c.tails.d = Some(Region::single(&[-0.125, -0.625], &[1.125, 0.625]));
    c.tails.decay = [1.0, 1.5];
    c
}

/// Decay box for `n = 1` (`X = 40`) and `n = 2` (the upper tail box).
pub fn decay(n: usize) -> ExperimentConfig {
    if n == 2 {
        return tails_upper();
    }
    let mut c = base(
        ExperimentKind::Tails,
        grid(1, 40.0, 321, 64.0, 48, 1.12),
        compact_regions(1),
        0.75,
        MetricFamily::Identity,
    );
    c.tails.l = vec![2.0, 2.8, 4.0, 5.6, 8.0];
    c.tails.decay = [2.0, 8.0];
    c
}

/// Reduction refinement ladder: Ω-aligned meshes (`h_x` = 1/4, 1/8, 1/16)
/// with the window `(h, L)` widened at each level.
pub fn reduction_level(level: u32) -> ExperimentConfig {
    let nodes = 24 * (1usize << level) + 1;
    let mut c = base(
        ExperimentKind::Reduce,
        grid(2, 3.0, nodes, 8.0, 40, 1.3),
        standard_regions(),
        0.75,
        bump(0.2),
    );
    c.reduce = ReduceSection {
        h: 0.1 * 10f64.powi(-(level as i32)),
        l: 2.0 + level as f64,
    };
    c
}

/// Small `n = 2` layout and the ten-point bump ladder.
pub fn stability() -> ExperimentConfig {
    let regions = RegionSpec {
        omega_prime: square(0.375),
        omega: square(0.5),
        omega_one: square(0.75),
        window_w: Region::single(&[1.0, -0.5], &[1.5, 0.5]),
    };
    base(
        ExperimentKind::Stability,
        grid(2, 2.0, 33, 8.0, 32, 1.3),
        regions,
        0.75,
        MetricFamily::IsotropicBump {
            theta: 0.2,
            thetas: (1..=10).map(|i| 0.02 * i as f64).collect(),
            theta1: 0.5,
        },
    )
}

/// Grids for the adjoint check: `24 (ℓ + 2)` tangential nodes per axis
/// (48² at level 0) with the solver tolerance tied to the level.
pub fn adjoint_level(level: u32) -> ExperimentConfig {
    let mut c = preset(ExperimentKind::Runge);
    c.grid.nodes_x = 24 * (level as usize + 2);
    c.solver.tol = 1e-8 * 10f64.powi(-(level as i32));
    c
}

/// Elliptic against Poisson ladder (`n = 1`, `a = I`, `s = 1/2`): every level
/// halves the tangential step and splits each vertical cell in two.
pub fn cross_validation_level(level: u32) -> ExperimentConfig {
    let f = 1usize << level;
    let ratio = 1.2f64.powf(1.0 / f as f64);
    base(
        ExperimentKind::SolveExtension,
        grid(1, 8.0, 64 * f + 1, 64.0, 24 * f, ratio),
        compact_regions(1),
        0.5,
        MetricFamily::Identity,
    )
}
