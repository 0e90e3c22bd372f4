//! TOML experiment configuration.
//!
//! One file describes one run. Sections:
//!
//! ```toml
//! [experiment]
//! kind = "stability"        # solve-extension | dtn | reduce | tails | runge | smallness | stability | selftest
//! seed = 7
//!
//! [grid]                    # GridSpec
//! [regions]                 # omega_prime, omega, omega_one, window_w: lists of {lo, hi} boxes
//! [physics]                 # s
//! [metric]                  # kind = "identity" | "isotropic_bump" | "anisotropic_bump"
//! [solver]                  # tol, max_iter, backend
//! [datum]                   # kind = "bump" | "edge" | "random"
//! [tails] [reduce] [runge] [smallness]
//! ```
//!
//! Every section except `experiment`, `grid`, `regions` and `physics` has
//! defaults.

use crate::elliptic::SolverOptions;
use crate::grid::{build_grid, DomainLayout, GridSpec, Region, RegionSpec, TraceTag};
use crate::metric::{Metric, Tensor};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SolveExtension,
    Dtn,
    Reduce,
    Tails,
    Runge,
    Smallness,
    Stability,
    Selftest,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SolveExtension => "solve-extension",
            ExperimentKind::Dtn => "dtn",
            ExperimentKind::Reduce => "reduce",
            ExperimentKind::Tails => "tails",
            ExperimentKind::Runge => "runge",
            ExperimentKind::Smallness => "smallness",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Selftest => "selftest",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum MetricFamily {
    #[default]
    Identity,
    IsotropicBump {
        theta: f64,
        /// Ladder for stability sweeps.
        #[serde(default)]
        thetas: Vec<f64>,
        #[serde(default = "default_theta1")]
        theta1: f64,
    },
    AnisotropicBump {
        theta: f64,
        #[serde(default)]
        thetas: Vec<f64>,
        a0: Tensor,
        #[serde(default = "default_theta1")]
        theta1: f64,
    },
}

fn default_theta1() -> f64 {
    0.5
}


impl MetricFamily {
    pub fn theta(&self) -> f64 {
        match self {
            MetricFamily::Identity => 0.0,
            MetricFamily::IsotropicBump { theta, .. } | MetricFamily::AnisotropicBump { theta, .. } => *theta,
        }
    }

    pub fn thetas(&self) -> &[f64] {
        match self {
            MetricFamily::Identity => &[],
            MetricFamily::IsotropicBump { thetas, .. } | MetricFamily::AnisotropicBump { thetas, .. } => thetas,
        }
    }

    pub fn theta1(&self) -> f64 {
        match self {
            MetricFamily::Identity => 1.0,
            MetricFamily::IsotropicBump { theta1, .. } | MetricFamily::AnisotropicBump { theta1, .. } => *theta1,
        }
    }

    /// Member of the family at amplitude `theta`.
    pub fn at(&self, layout: &DomainLayout, theta: f64) -> Result<Metric> {
        match self {
            MetricFamily::Identity => Ok(Metric::identity(layout)),
            MetricFamily::IsotropicBump { theta1, .. } => Metric::isotropic_bump(layout, theta, *theta1),
            MetricFamily::AnisotropicBump { a0, theta1, .. } => Metric::anisotropic_bump(layout, theta, *a0, *theta1),
        }
    }

    pub fn build(&self, layout: &DomainLayout) -> Result<Metric> {
        self.at(layout, self.theta())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum DatumSpec {
    /// `Π (1 - ξ_i²)²` over the first box of W.
    #[default]
    Bump,
    /// `d^p` in the distance to the W faces along the first axis, with a
    /// `cos²` profile across the other axis.
    Edge { exponent: f64 },
    /// Uniform on `[-1, 1]` at W nodes, from the run seed.
    Random,
}


/// Exterior datum on the trace, zero off W.
pub fn datum_values(layout: &DomainLayout, spec: &DatumSpec, seed: u64) -> Vec<f64> {
    let tg = &layout.tangential;
    let n = layout.dim();
    let b = &layout.regions.window_w.boxes[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..tg.n_nodes())
        .map(|t| {
            if layout.trace_tag(t) != TraceTag::Window {
                return 0.0;
            }
            let x = tg.coords(t);
            let xi: Vec<f64> = (0..n)
                .map(|i| (2.0 * x[i] - b.lo[i] - b.hi[i]) / (b.hi[i] - b.lo[i]))
                .collect();
            match spec {
                DatumSpec::Bump => xi.iter().map(|v| (1.0 - v * v).max(0.0).powi(2)).product(),
                DatumSpec::Edge { exponent } => {
                    let d = (1.0 - xi[0].abs()).max(0.0);
                    let across: f64 = xi[1..]
                        .iter()
                        .map(|v| (0.5 * std::f64::consts::PI * v.clamp(-1.0, 1.0)).cos().powi(2))
                        .product();
                    d.powf(*exponent) * across
                }
                DatumSpec::Random => rng.gen_range(-1.0..1.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailsSection {
    pub l: Vec<f64>,
    pub h: Vec<f64>,
    /// Norm region; defaults to Ω.
    pub d: Option<Region>,
    /// `[y_lo, y_hi]` of the decay fit.
    pub decay: [f64; 2],
}

impl Default for TailsSection {
    fn default() -> Self {
        TailsSection {
            l: vec![2.0, 2.8, 4.0, 5.6, 8.0],
            h: vec![0.0625, 0.088, 0.125, 0.177, 0.25],
            d: None,
            decay: [2.0, 8.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceSection {
    pub h: f64,
    pub l: f64,
}

impl Default for ReduceSection {
    fn default() -> Self {
        ReduceSection { h: 0.01, l: 3.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RungeSection {
    /// Vertical window `(h, L)` defining `T`.
    pub window: [f64; 2],
    pub tau_points: usize,
}

impl Default for RungeSection {
    fn default() -> Self {
        RungeSection {
            window: [0.1, 2.0],
            tau_points: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallnessSection {
    pub samples: usize,
    pub q: f64,
    pub eps: Vec<f64>,
    pub background: f64,
    /// Transfer ball radius; the center is the W center.
    pub r: f64,
    /// Chain balls must fit in `B'_{κL} × (0, κL)`, L the chain height.
    pub kappa: f64,
}

impl Default for SmallnessSection {
    fn default() -> Self {
        SmallnessSection {
            samples: 50,
            q: 1.0,
            eps: vec![1.0, 0.3, 0.1, 0.03, 0.01],
            background: 1.0,
            r: 0.12,
            kappa: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub grid: GridSpec,
    pub regions: RegionSpec,
    pub physics: PhysicsSection,
    #[serde(default)]
    pub metric: MetricFamily,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub datum: DatumSpec,
    #[serde(default)]
    pub tails: TailsSection,
    #[serde(default)]
    pub reduce: ReduceSection,
    #[serde(default)]
    pub runge: RungeSection,
    #[serde(default)]
    pub smallness: SmallnessSection,
}

impl ExperimentConfig {
    /// Parses and validates; schema errors carry the offending field path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner().message().trim()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.regions.validate(self.grid.n_tangential, self.grid.extent_x)?;
        let s = self.physics.s;
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Config(format!("physics.s must lie in (0, 1), got {s}")));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::Config("solver.tol must be positive".into()));
        }
        if self.metric.thetas().iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("metric.thetas must be finite and non-negative".into()));
        }
        let [h, l] = self.runge.window;
        if !(h >= 0.0 && l > h) {
            return Err(Error::Config("runge.window must satisfy 0 <= h < L".into()));
        }
        if !(self.reduce.h >= 0.0 && self.reduce.l > self.reduce.h) {
            return Err(Error::Config("reduce.h and reduce.l must satisfy 0 <= h < l".into()));
        }
        if self.runge.tau_points < 2 {
            return Err(Error::Config("runge.tau_points must be at least 2".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Doubles the tangential resolution `level` times and tightens the
    /// solver tolerance tenfold per level.
    pub fn refined(&self, level: u32) -> Self {
        let mut c = self.clone();
        let f = 1usize << level;
        c.grid.nodes_x = (self.grid.nodes_x - 1) * f + 1;
        c.solver.tol = self.solver.tol * 10f64.powi(-(level as i32));
        c
    }

    pub fn layout(&self) -> Result<DomainLayout> {
        build_grid(&self.grid, &self.regions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::presets;

    #[test]
    fn presets_roundtrip_through_toml() {
        for kind in presets::ALL_KINDS {
            let c = presets::preset(kind);
            let text = c.to_toml_string().unwrap();
            let back = ExperimentConfig::from_toml_str(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn unknown_kind_is_a_config_error() {
        let mut text = presets::preset(ExperimentKind::Dtn).to_toml_string().unwrap();
        text = text.replace("kind = \"dtn\"", "kind = \"teleport\"");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config(m)) => assert!(m.contains("experiment.kind"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_field_reports_path() {
        let text = presets::preset(ExperimentKind::Dtn)
            .to_toml_string()
            .unwrap()
            .replace("nodes_x = ", "nodes_x = \"many\" #");
        match ExperimentConfig::from_toml_str(&text) {
            Err(Error::Config(m)) => assert!(m.starts_with("grid.nodes_x"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn refinement_doubles_nodes() {
        let c = presets::preset(ExperimentKind::Reduce);
        let r = c.refined(2);
        assert_eq!(r.grid.nodes_x - 1, 4 * (c.grid.nodes_x - 1));
    }
}
