use super::DomainLayout;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    /// Point `(x', y)` of the upper half-space, length n + 1.
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn height(&self) -> f64 {
        *self.center.last().unwrap()
    }

    pub fn distance_to(&self, p: &[f64]) -> f64 {
        self.center.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }

    /// `B_r(c) ⊂ B_R(C)` for the given outer radius.
    pub fn nested_in(&self, outer: &Ball, outer_radius: f64) -> bool {
        self.distance_to(&outer.center) + self.radius <= outer_radius * (1.0 + 1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallChain {
    pub balls: Vec<Ball>,
    /// Height ratio bound: `r <= Q · min_{B_4r} y`.
    pub q: f64,
    /// Every quadruple ball lies in `B'_{κL} × (0, κL)` with `L` the
    /// largest center height.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
}

fn default_kappa() -> f64 {
    4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainPolicy {
    /// Largest radius growth between consecutive balls, ρ₁ ∈ (1, 2).
    pub growth: f64,
    /// Largest radius shrink between consecutive balls, ρ₂ ∈ (1, 2).
    pub shrink: f64,
    pub q: f64,
    pub kappa: f64,
    /// Fraction of the admissible radius actually used.
    pub fill: f64,
    /// Height of the lateral leg; defaults to the higher endpoint.
    pub cruise_height: Option<f64>,
    pub max_len: usize,
}

impl Default for ChainPolicy {
    fn default() -> Self {
        ChainPolicy {
            growth: 1.15,
            shrink: 1.5,
            q: 1.0,
            kappa: default_kappa(),
            fill: 0.9,
            cruise_height: None,
            max_len: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTarget {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BallChain {
    pub fn len(&self) -> usize {
        self.balls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.balls.is_empty()
    }

    /// Largest center height, the `L` of the containing box.
    pub fn height(&self) -> f64 {
        self.balls.iter().map(Ball::height).fold(0.0, f64::max)
    }

    /// Smallest κ with every `B_4r` inside `B'_{κL} × (0, κL)`.
    pub fn required_kappa(&self) -> f64 {
        let l = self.height();
        self.balls
            .iter()
            .map(|b| {
                let (y, x) = b.center.split_last().unwrap();
                let lateral = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                (lateral.max(*y) + 4.0 * b.radius) / l
            })
            .fold(0.0, f64::max)
    }

    /// Checks every chain invariant against the layout.
    pub fn validate(&self, layout: &DomainLayout) -> Result<()> {
        for (j, b) in self.balls.iter().enumerate() {
            let lim = admissible_radius(layout, &b.center, self.q);
            if b.radius > lim * (1.0 + 1e-12) || b.radius <= 0.0 {
                return Err(Error::Chain(format!(
                    "ball {j}: radius {:.4e} exceeds admissible {:.4e}",
                    b.radius, lim
                )));
            }
            if j > 0 && !b.nested_in(&self.balls[j - 1], 2.0 * self.balls[j - 1].radius) {
                return Err(Error::Chain(format!("ball {j} is not inside the doubled ball {}", j - 1)));
            }
        }
        let need = self.required_kappa();
        if !(need <= self.kappa) {
            return Err(Error::Chain(format!(
                "quadruple balls need kappa {need:.3}, more than {:.3}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// Largest `r` with `B_4r(c)` inside the exterior slab, clear of `Ω × ℝ₊`,
/// and `r <= Q · (y - 4r)`.
pub fn admissible_radius(layout: &DomainLayout, c: &[f64], q: f64) -> f64 {
    let n = layout.dim();
    let y = c[n];
    let x = &c[..n];
    let big_x = layout.spec.extent_x;
    let mut r = q * y / (1.0 + 4.0 * q);
    r = r.min((layout.vertical.height() - y) / 4.0);
    r = r.min(layout.distance_to_omega(x) / 4.0);
    for &xi in x {
        r = r.min((big_x - xi.abs()) / 4.0);
    }
    r.max(0.0)
}

struct Polyline {
    pts: Vec<Vec<f64>>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(mut pts: Vec<Vec<f64>>) -> Self {
        pts.dedup_by(|a, b| dist(a, b) < 1e-14);
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + dist(&w[0], &w[1]));
        }
        Polyline { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    fn at(&self, s: f64) -> Vec<f64> {
        let s = s.clamp(0.0, self.length());
        for k in 0..self.pts.len().saturating_sub(1) {
            if s <= self.cum[k + 1] || k + 2 == self.pts.len() {
                let seg = self.cum[k + 1] - self.cum[k];
                let t = if seg > 0.0 { ((s - self.cum[k]) / seg).clamp(0.0, 1.0) } else { 0.0 };
                return self.pts[k].iter().zip(&self.pts[k + 1]).map(|(a, b)| a + t * (b - a)).collect();
            }
        }
        self.pts[0].clone()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Greedy chain from a point above W to a target ball: up, across at the
/// cruise height, then down, growing by at most ρ₁ and shrinking by at most
/// ρ₂ per step.
pub fn ball_chain(
    layout: &DomainLayout,
    start: &[f64],
    target: &ChainTarget,
    policy: &ChainPolicy,
) -> Result<BallChain> {
    let n = layout.dim();
    if start.len() != n + 1 || target.center.len() != n + 1 {
        return Err(Error::Input("chain points need n + 1 coordinates".into()));
    }
    if !(policy.growth > 1.0 && policy.growth < 2.0 && policy.shrink > 1.0 && policy.shrink < 2.0) {
        return Err(Error::Input("chain growth and shrink factors must lie in (1, 2)".into()));
    }
    if !(policy.q > 0.0 && policy.kappa > 0.0 && policy.fill > 0.0 && policy.fill <= 1.0) {
        return Err(Error::Input("chain q and kappa must be positive and fill in (0, 1]".into()));
    }
    if layout.regions.omega.contains_closed(&start[..n]) {
        return Err(Error::Precondition("chain start lies above omega".into()));
    }
    if !layout.regions.window_w.contains_closed(&start[..n]) {
        return Err(Error::Precondition("chain start must lie above W".into()));
    }
    let q = policy.q;
    let t_lim = admissible_radius(layout, &target.center, q);
    if !(target.radius > 0.0 && target.radius <= t_lim) {
        return Err(Error::Chain(format!(
            "target radius {:.4e} not admissible (limit {:.4e})",
            target.radius, t_lim
        )));
    }
    let r0 = policy.fill * admissible_radius(layout, start, q);
    if r0 <= 0.0 {
        return Err(Error::Chain("no admissible ball at the start point".into()));
    }
    let cruise = policy
        .cruise_height
        .unwrap_or_else(|| start[n].max(target.center[n]));
    let mut up = start.to_vec();
    up[n] = cruise;
    let mut over = target.center.clone();
    over[n] = cruise;
    let path = Polyline::new(vec![start.to_vec(), up, over, target.center.clone()]);
    let total = path.length();

    let mut balls = vec![Ball {
        center: start.to_vec(),
        radius: r0,
    }];
    let mut pos = 0.0;
    let target_ball = Ball {
        center: target.center.clone(),
        radius: target.radius,
    };
    loop {
        let cur = balls.last().unwrap().clone();
        if target_ball.nested_in(&cur, 2.0 * cur.radius) {
            if dist(&cur.center, &target.center) > 0.0 || cur.radius != target.radius {
                balls.push(target_ball);
            }
            break;
        }
        if balls.len() >= policy.max_len {
            return Err(Error::Chain(format!("no admissible chain within {} balls", policy.max_len)));
        }
        let next_radius = |p: &[f64]| -> f64 {
            (policy.fill * admissible_radius(layout, p, q)).min(policy.growth * cur.radius)
        };
        let feasible = |d: f64| -> Option<(Vec<f64>, f64)> {
            let p = path.at(pos + d);
            let r = next_radius(&p);
            let ok = r >= cur.radius / policy.shrink && dist(&p, &cur.center) + r <= 2.0 * cur.radius;
            ok.then_some((p, r))
        };
        let remaining = total - pos;
        let mut hi = remaining.min(2.0 * cur.radius);
        let mut best = None;
        if let Some(v) = feasible(hi) {
            best = Some((hi, v));
        } else {
            let mut lo = 0.0;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                match feasible(mid) {
                    Some(v) => {
                        lo = mid;
                        best = Some((mid, v));
                    }
                    None => hi = mid,
                }
            }
        }
        match best {
            Some((d, (p, r))) if d > 1e-12 * cur.radius => {
                pos += d;
                balls.push(Ball { center: p, radius: r });
            }
            _ => return Err(Error::Chain("chain stalled: no admissible next ball".into())),
        }
    }
    let chain = BallChain {
        balls,
        q,
        kappa: policy.kappa,
    };
    chain.validate(layout)?;
    Ok(chain)
}
