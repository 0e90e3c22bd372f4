//! Truncated half-space tensor grids, region masks and ball chains.

mod chain;
mod region;
mod vertical;

pub use chain::{admissible_radius, ball_chain, Ball, BallChain, ChainPolicy, ChainTarget};
pub use region::{AxisBox, Region, RegionSpec};
pub use vertical::{weighted_integral, VerticalMesh};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Parameters of the truncated half-space `[-X, X]^n × [0, Y]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n_tangential: usize,
    pub extent_x: f64,
    pub nodes_x: usize,
    pub height_y: f64,
    pub nodes_y: usize,
    pub grading_ratio: f64,
    /// Periodic wrap in the tangential directions (used by symbol tests).
    #[serde(default)]
    pub periodic: bool,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.n_tangential) {
            return Err(Error::Config(format!(
                "grid.n_tangential must be 1 or 2, got {}",
                self.n_tangential
            )));
        }
        if self.nodes_x < 8 || self.nodes_y < 8 {
            return Err(Error::Config("grid.nodes_x and grid.nodes_y must be at least 8".into()));
        }
        if !(self.grading_ratio > 1.0 && self.grading_ratio <= 2.0) {
            return Err(Error::Config(format!(
                "grid.grading_ratio must lie in (1, 2], got {}",
                self.grading_ratio
            )));
        }
        if !(self.extent_x > 0.0 && self.extent_x.is_finite()) || !(self.height_y > 0.0 && self.height_y.is_finite()) {
            return Err(Error::Config("grid.extent_x and grid.height_y must be positive".into()));
        }
        Ok(())
    }
}

/// Classification of a node on the bottom face `y = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceTag {
    OmegaPrime,
    OmegaAnnulus,
    Omega1Annulus,
    Window,
    FarExterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeTag {
    Trace(TraceTag),
    Bulk,
    Top,
    Lateral,
}

/// Uniform tangential grid, one or two axes.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentialGrid {
    pub dim: usize,
    pub nodes_x: usize,
    pub extent: f64,
    pub h: f64,
    pub periodic: bool,
}

impl TangentialGrid {
    pub fn new(dim: usize, nodes_x: usize, extent: f64, periodic: bool) -> Self {
        let h = if periodic {
            2.0 * extent / nodes_x as f64
        } else {
            2.0 * extent / (nodes_x - 1) as f64
        };
        TangentialGrid {
            dim,
            nodes_x,
            extent,
            h,
            periodic,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes_x.pow(self.dim as u32)
    }

    pub fn cells_per_axis(&self) -> usize {
        if self.periodic {
            self.nodes_x
        } else {
            self.nodes_x - 1
        }
    }

    pub fn n_cells(&self) -> usize {
        self.cells_per_axis().pow(self.dim as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.extent + i as f64 * self.h
    }

    /// Multi-index `(i, j)` of node `t` (j = 0 when n = 1).
    pub fn split(&self, t: usize) -> (usize, usize) {
        (t % self.nodes_x, t / self.nodes_x)
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.nodes_x * j
    }

    pub fn coords(&self, t: usize) -> [f64; 2] {
        let (i, j) = self.split(t);
        if self.dim == 1 {
            [self.axis_coord(i), 0.0]
        } else {
            [self.axis_coord(i), self.axis_coord(j)]
        }
    }

    pub fn is_lateral(&self, t: usize) -> bool {
        if self.periodic {
            return false;
        }
        let (i, j) = self.split(t);
        let last = self.nodes_x - 1;
        i == 0 || i == last || (self.dim == 2 && (j == 0 || j == last))
    }

    fn wrap(&self, i: usize) -> usize {
        if i >= self.nodes_x {
            i - self.nodes_x
        } else {
            i
        }
    }

    /// Corner nodes of cell `c`, in lexicographic order (2 or 4 of them).
    pub fn cell_nodes(&self, c: usize) -> Vec<usize> {
        let m = self.cells_per_axis();
        let (ci, cj) = (c % m, c / m);
        if self.dim == 1 {
            vec![ci, self.wrap(ci + 1)]
        } else {
            let (i1, j1) = (self.wrap(ci + 1), self.wrap(cj + 1));
            vec![
                self.index(ci, cj),
                self.index(i1, cj),
                self.index(ci, j1),
                self.index(i1, j1),
            ]
        }
    }

    pub fn cell_center(&self, c: usize) -> [f64; 2] {
        let m = self.cells_per_axis();
        let (ci, cj) = (c % m, c / m);
        let x = self.axis_coord(ci) + 0.5 * self.h;
        if self.dim == 1 {
            [x, 0.0]
        } else {
            [x, self.axis_coord(cj) + 0.5 * self.h]
        }
    }

    /// Cells incident to node `t`.
    pub fn node_cells(&self, t: usize) -> Vec<usize> {
        let m = self.cells_per_axis() as isize;
        let n = self.nodes_x as isize;
        let (i, j) = self.split(t);
        let per_axis = |k: usize| -> Vec<isize> {
            let k = k as isize;
            let mut v = Vec::with_capacity(2);
            for c in [k - 1, k] {
                if self.periodic {
                    v.push(c.rem_euclid(n));
                } else if c >= 0 && c < m {
                    v.push(c);
                }
            }
            v
        };
        let ci = per_axis(i);
        if self.dim == 1 {
            return ci.into_iter().map(|c| c as usize).collect();
        }
        let cj = per_axis(j);
        let mut out = Vec::with_capacity(4);
        for &b in &cj {
            for &a in &ci {
                out.push((a + m * b) as usize);
            }
        }
        out
    }

    /// Lumped (row-sum) mass of the bilinear/linear elements.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let share = self.cell_volume() / (1usize << self.dim) as f64;
        (0..self.n_nodes())
            .map(|t| self.node_cells(t).len() as f64 * share)
            .collect()
    }

    /// Nearest-neighbour edges `(t, t')` with `t < t'` in lexicographic order
    /// of the axis step.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for t in 0..self.n_nodes() {
            let (i, j) = self.split(t);
            if self.periodic || i + 1 < self.nodes_x {
                out.push((t, self.index(self.wrap(i + 1), j)));
            }
            if self.dim == 2 && (self.periodic || j + 1 < self.nodes_x) {
                out.push((t, self.index(i, self.wrap(j + 1))));
            }
        }
        out
    }

    /// Cells containing edge `(a, b)` (1 for n = 1; 1 or 2 for n = 2).
    pub fn edge_cells(&self, a: usize, b: usize) -> Vec<usize> {
        let ca = self.node_cells(a);
        let cb = self.node_cells(b);
        ca.into_iter().filter(|c| cb.contains(c)).collect()
    }
}

/// A weighted set of tangential nodes with its graph structure.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    pub kind: NodeSetKind,
    /// Tangential node indices.
    pub nodes: Vec<usize>,
    /// Lumped measure per node.
    pub masses: Vec<f64>,
    /// Graph edges in local indices with conductance weights.
    pub edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSetKind {
    WindowTrace,
    BoundaryLoop,
    /// Isolated boundary points (n = 1).
    BoundaryPoints,
    RegionInterior,
    RegionClosure,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Local position of tangential node `t`, if present.
    pub fn position(&self, t: usize) -> Option<usize> {
        self.nodes.iter().position(|&v| v == t)
    }

    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&t| full[t]).collect()
    }

    pub fn extend(&self, local: &[f64], n_total: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_total];
        for (k, &t) in self.nodes.iter().enumerate() {
            out[t] = local[k];
        }
        out
    }
}

/// Which region a node set is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionName {
    OmegaPrime,
    Omega,
    OmegaOne,
    Window,
}

/// The discretized truncated half-space with its region masks.
#[derive(Debug, Clone)]
pub struct DomainLayout {
    pub spec: GridSpec,
    pub regions: RegionSpec,
    pub tangential: TangentialGrid,
    pub vertical: VerticalMesh,
    trace_tags: Vec<TraceTag>,
    cells_in: [Vec<bool>; 4],
}

/// Builds the layout and checks the region geometry.
pub fn build_grid(spec: &GridSpec, regions: &RegionSpec) -> Result<DomainLayout> {
    spec.validate()?;
    regions.validate(spec.n_tangential, spec.extent_x)?;
    let tangential = TangentialGrid::new(spec.n_tangential, spec.nodes_x, spec.extent_x, spec.periodic);
    let vertical = VerticalMesh::new(spec.height_y, spec.nodes_y, spec.grading_ratio)?;
    let dim = spec.n_tangential;
    let mask = |r: &Region| -> Vec<bool> {
        (0..tangential.n_cells())
            .map(|c| r.contains(&tangential.cell_center(c)[..dim]))
            .collect()
    };
    let cells_in = [
        mask(&regions.omega_prime),
        mask(&regions.omega),
        mask(&regions.omega_one),
        mask(&regions.window_w),
    ];
    let mut layout = DomainLayout {
        spec: spec.clone(),
        regions: regions.clone(),
        tangential,
        vertical,
        trace_tags: Vec::new(),
        cells_in,
    };
    for (name, r) in [
        (RegionName::Omega, &regions.omega),
        (RegionName::Window, &regions.window_w),
    ] {
        if layout.interior_nodes(name).is_empty() {
            return Err(Error::Geometry(format!(
                "region {r:?} contains no interior grid node; refine the grid"
            )));
        }
    }
    let tags = (0..layout.tangential.n_nodes())
        .map(|t| {
            if layout.node_is_interior(RegionName::OmegaPrime, t) {
                TraceTag::OmegaPrime
            } else if layout.node_is_interior(RegionName::Omega, t) {
                TraceTag::OmegaAnnulus
            } else if layout.node_is_interior(RegionName::OmegaOne, t) {
                TraceTag::Omega1Annulus
            } else if layout.node_is_interior(RegionName::Window, t) {
                TraceTag::Window
            } else {
                TraceTag::FarExterior
            }
        })
        .collect();
    layout.trace_tags = tags;
    Ok(layout)
}

impl DomainLayout {
    pub fn dim(&self) -> usize {
        self.spec.n_tangential
    }

    pub fn n_tangential_nodes(&self) -> usize {
        self.tangential.n_nodes()
    }

    pub fn ny(&self) -> usize {
        self.vertical.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_tangential_nodes() * self.ny()
    }

    /// Global index, vertical index fastest.
    pub fn global(&self, t: usize, k: usize) -> usize {
        t * self.ny() + k
    }

    pub fn split(&self, g: usize) -> (usize, usize) {
        (g / self.ny(), g % self.ny())
    }

    /// Coordinates `(x', y)` of a global node; length n + 1.
    pub fn coords(&self, g: usize) -> Vec<f64> {
        let (t, k) = self.split(g);
        let x = self.tangential.coords(t);
        let mut p = x[..self.dim()].to_vec();
        p.push(self.vertical.y[k]);
        p
    }

    pub fn trace_tag(&self, t: usize) -> TraceTag {
        self.trace_tags[t]
    }

    pub fn trace_tags(&self) -> &[TraceTag] {
        &self.trace_tags
    }

    pub fn node_tag(&self, g: usize) -> NodeTag {
        let (t, k) = self.split(g);
        if k == 0 {
            NodeTag::Trace(self.trace_tags[t])
        } else if k + 1 == self.ny() {
            NodeTag::Top
        } else if self.tangential.is_lateral(t) {
            NodeTag::Lateral
        } else {
            NodeTag::Bulk
        }
    }

    pub fn region(&self, name: RegionName) -> &Region {
        match name {
            RegionName::OmegaPrime => &self.regions.omega_prime,
            RegionName::Omega => &self.regions.omega,
            RegionName::OmegaOne => &self.regions.omega_one,
            RegionName::Window => &self.regions.window_w,
        }
    }

    pub fn cell_mask(&self, name: RegionName) -> &[bool] {
        let i = match name {
            RegionName::OmegaPrime => 0,
            RegionName::Omega => 1,
            RegionName::OmegaOne => 2,
            RegionName::Window => 3,
        };
        &self.cells_in[i]
    }

    fn inside_count(&self, name: RegionName, t: usize) -> (usize, usize) {
        let mask = self.cell_mask(name);
        let cells = self.tangential.node_cells(t);
        (cells.iter().filter(|&&c| mask[c]).count(), cells.len())
    }

    /// Node with every incident cell inside the region (and not on the
    /// lateral boundary).
    pub fn node_is_interior(&self, name: RegionName, t: usize) -> bool {
        let (inside, total) = self.inside_count(name, t);
        inside == total && total == (1 << self.dim()) && !self.tangential.is_lateral(t)
    }

    pub fn node_in_closure(&self, name: RegionName, t: usize) -> bool {
        self.inside_count(name, t).0 > 0
    }

    fn node_set(&self, name: RegionName, closure: bool) -> NodeSet {
        let tg = &self.tangential;
        let share = tg.cell_volume() / (1usize << self.dim()) as f64;
        let nodes: Vec<usize> = (0..tg.n_nodes())
            .filter(|&t| {
                if closure {
                    self.node_in_closure(name, t)
                } else {
                    self.node_is_interior(name, t)
                }
            })
            .collect();
        let masses = nodes
            .iter()
            .map(|&t| self.inside_count(name, t).0 as f64 * share)
            .collect();
        let mask = self.cell_mask(name);
        let cells_per_edge = (1usize << (self.dim() - 1)) as f64;
        let mut edges = Vec::new();
        let mut local = std::collections::HashMap::new();
        for (k, &t) in nodes.iter().enumerate() {
            local.insert(t, k);
        }
        for (a, b) in tg.edges() {
            if let (Some(&la), Some(&lb)) = (local.get(&a), local.get(&b)) {
                let inside = tg.edge_cells(a, b).iter().filter(|&&c| mask[c]).count() as f64;
                if inside > 0.0 {
                    let w = tg.h.powi(self.dim() as i32 - 2) * inside / cells_per_edge;
                    edges.push((la.min(lb), la.max(lb), w));
                }
            }
        }
        NodeSet {
            kind: if closure {
                NodeSetKind::RegionClosure
            } else if name == RegionName::Window {
                NodeSetKind::WindowTrace
            } else {
                NodeSetKind::RegionInterior
            },
            nodes,
            masses,
            edges,
        }
    }

    pub fn interior_nodes(&self, name: RegionName) -> NodeSet {
        self.node_set(name, false)
    }

    pub fn closure_nodes(&self, name: RegionName) -> NodeSet {
        self.node_set(name, true)
    }

    /// Trace nodes carrying exterior data: interior nodes of W.
    pub fn window_nodes(&self) -> NodeSet {
        self.node_set(RegionName::Window, false)
    }

    /// Ordered boundary of the cell set of a region. For n = 2 this is a
    /// closed polygon traversed once; for n = 1 the two end points.
    pub fn boundary_loop(&self, name: RegionName) -> Result<NodeSet> {
        let tg = &self.tangential;
        let mask = self.cell_mask(name);
        if self.dim() == 1 {
            let nodes: Vec<usize> = (0..tg.n_nodes())
                .filter(|&t| {
                    let (inside, total) = self.inside_count(name, t);
                    inside > 0 && (inside < total || tg.is_lateral(t))
                })
                .collect();
            if nodes.iter().any(|&t| tg.is_lateral(t)) {
                return Err(Error::Domain("region boundary touches the grid edge".into()));
            }
            return Ok(NodeSet {
                kind: NodeSetKind::BoundaryPoints,
                masses: vec![1.0; nodes.len()],
                nodes,
                edges: Vec::new(),
            });
        }
        let mut adj: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
        for (a, b) in tg.edges() {
            let cells = tg.edge_cells(a, b);
            let inside = cells.iter().filter(|&&c| mask[c]).count();
            let on_boundary = (inside == 1 && cells.len() == 2) || (inside == 1 && cells.len() == 1);
            if on_boundary {
                if tg.is_lateral(a) && tg.is_lateral(b) {
                    return Err(Error::Domain("region boundary touches the grid edge".into()));
                }
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
        }
        if adj.is_empty() {
            return Err(Error::Domain("region has no boundary on this grid".into()));
        }
        if adj.values().any(|v| v.len() != 2) {
            return Err(Error::Domain("region boundary is not a simple closed curve on this grid".into()));
        }
        let start = *adj.keys().next().unwrap();
        let mut nodes = vec![start];
        let mut prev = start;
        let mut cur = adj[&start][0];
        while cur != start {
            nodes.push(cur);
            let nb = &adj[&cur];
            let next = if nb[0] == prev { nb[1] } else { nb[0] };
            prev = cur;
            cur = next;
            if nodes.len() > adj.len() {
                return Err(Error::Domain("boundary walk did not close".into()));
            }
        }
        if nodes.len() != adj.len() {
            return Err(Error::Domain("region boundary has several components".into()));
        }
        let m = nodes.len();
        let h = tg.h;
        let edges = (0..m).map(|k| (k.min((k + 1) % m), k.max((k + 1) % m), 1.0 / h)).collect();
        Ok(NodeSet {
            kind: NodeSetKind::BoundaryLoop,
            nodes,
            masses: vec![h; m],
            edges,
        })
    }

    /// Euclidean distance from a tangential point to the closure of Ω.
    pub fn distance_to_omega(&self, x: &[f64]) -> f64 {
        self.regions.omega.distance(x)
    }
}
