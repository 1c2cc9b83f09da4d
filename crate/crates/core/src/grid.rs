//! Grid road network: node lattice, symmetric distance matrix and the
//! velocity-density travel-time model.
//!
//! A network of `W x H` cells has `(W+1) x (H+1)` nodes. Nodes are indexed
//! row-major, `index = y * nodes_x + x`, with `y` growing downward so that
//! `Up` decreases `y`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DarpError, Result};

/// Free-flow pedestrian walking speed in m/s.
pub const FREE_SPEED: f64 = 1.34;

/// Sentinel stored in the distance and flow matrices where no edge exists.
pub const NO_EDGE: f64 = -1.0;

/// Exponent of the velocity-density model `x = x0 * rho^-0.8`.
const DENSITY_EXPONENT: f64 = 0.8;

/// Index of a node in the row-major lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

/// Column/row position of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridCoord {
    pub x: usize,
    pub y: usize,
}

impl GridCoord {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

/// Movement direction, encoded `{up, down, right, left} = {0, 1, 2, 3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Up = 0,
    Down = 1,
    Right = 2,
    Left = 3,
}

impl Action {
    pub const COUNT: usize = 4;
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Right, Action::Left];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Self::ALL.get(index).copied()
    }

    /// Column/row offset of the move.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (0, -1),
            Action::Down => (0, 1),
            Action::Right => (1, 0),
            Action::Left => (-1, 0),
        }
    }
}

/// Static road network on a rectangular lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    width_cells: usize,
    height_cells: usize,
    seed: Option<u64>,
    free_speed: f64,
    dist: Vec<f64>,
}

/// Serialized form of a [`RoadNetwork`]: dimensions plus an explicit edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkDocument {
    pub schema_version: u32,
    pub width_cells: usize,
    pub height_cells: usize,
    pub seed: Option<u64>,
    pub free_speed: f64,
    /// `(i, j, d_ij)` with `i < j`.
    pub edges: Vec<(usize, usize, f64)>,
}

pub const NETWORK_SCHEMA_VERSION: u32 = 1;

impl RoadNetwork {
    /// Builds a `width_cells x height_cells` grid whose adjacent node pairs get
    /// independent uniform distances drawn from `dist_range`.
    pub fn build_grid(
        width_cells: usize,
        height_cells: usize,
        dist_range: [f64; 2],
        seed: u64,
    ) -> Result<Self> {
        check_dims(width_cells, height_cells)?;
        let [lo, hi] = dist_range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 {
            return Err(invalid("distance_range", "bounds must be finite and non-negative"));
        }
        if lo > hi {
            return Err(invalid("distance_range", format!("inverted range [{lo}, {hi}]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::empty(width_cells, height_cells, Some(seed));
        let pairs: Vec<_> = net.lattice_pairs().collect();
        for (i, j) in pairs {
            let d = if lo == hi { lo } else { rng.random_range(lo..hi) };
            if d <= 0.0 {
                return Err(DarpError::NonPositiveLength(d));
            }
            net.set_distance(i, j, d);
        }
        Ok(net)
    }

    /// Builds a network from explicit lengths for every lattice edge.
    pub fn from_edges(
        width_cells: usize,
        height_cells: usize,
        edges: &[(usize, usize, f64)],
    ) -> Result<Self> {
        check_dims(width_cells, height_cells)?;
        let mut net = Self::empty(width_cells, height_cells, None);
        for &(i, j, d) in edges {
            net.check_node(i)?;
            net.check_node(j)?;
            if !net.are_adjacent(i, j) {
                return Err(invalid("edges", format!("nodes {i} and {j} are not lattice neighbours")));
            }
            if !(d > 0.0 && d.is_finite()) {
                return Err(DarpError::NonPositiveLength(d));
            }
            net.set_distance(i, j, d);
        }
        let expected = net.lattice_pairs().count();
        if net.edge_count() != expected {
            return Err(invalid(
                "edges",
                format!("expected {expected} lattice edges, got {}", net.edge_count()),
            ));
        }
        Ok(net)
    }

    /// Grid with every edge set to `length`.
    pub fn uniform(width_cells: usize, height_cells: usize, length: f64) -> Result<Self> {
        Self::build_grid(width_cells, height_cells, [length, length], 0)
    }

    fn empty(width_cells: usize, height_cells: usize, seed: Option<u64>) -> Self {
        let n = (width_cells + 1) * (height_cells + 1);
        Self {
            width_cells,
            height_cells,
            seed,
            free_speed: FREE_SPEED,
            dist: vec![NO_EDGE; n * n],
        }
    }

    pub fn with_free_speed(mut self, free_speed: f64) -> Result<Self> {
        if !(free_speed > 0.0 && free_speed.is_finite()) {
            return Err(invalid("free_speed", "must be positive"));
        }
        self.free_speed = free_speed;
        Ok(self)
    }

    fn set_distance(&mut self, i: usize, j: usize, d: f64) {
        let n = self.node_count();
        self.dist[i * n + j] = d;
        self.dist[j * n + i] = d;
    }

    /// Unordered lattice neighbour pairs `(i, j)` with `i < j`, in index order.
    fn lattice_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (nx, ny) = (self.nodes_x(), self.nodes_y());
        (0..nx * ny).flat_map(move |i| {
            let (x, y) = (i % nx, i / nx);
            let right = (x + 1 < nx).then_some((i, i + 1));
            let down = (y + 1 < ny).then_some((i, i + nx));
            right.into_iter().chain(down)
        })
    }

    fn are_adjacent(&self, i: usize, j: usize) -> bool {
        let (a, b) = (self.coord(NodeId(i)), self.coord(NodeId(j)));
        a.x.abs_diff(b.x) + a.y.abs_diff(b.y) == 1
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i < self.node_count() {
            Ok(())
        } else {
            Err(DarpError::NodeOutOfRange { node: i, count: self.node_count() })
        }
    }

    pub fn width_cells(&self) -> usize {
        self.width_cells
    }

    pub fn height_cells(&self) -> usize {
        self.height_cells
    }

    pub fn nodes_x(&self) -> usize {
        self.width_cells + 1
    }

    pub fn nodes_y(&self) -> usize {
        self.height_cells + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_x() * self.nodes_y()
    }

    pub fn free_speed(&self) -> f64 {
        self.free_speed
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// Raw `n x n` distance matrix, row-major, [`NO_EDGE`] where no edge exists.
    pub fn distance_matrix(&self) -> &[f64] {
        &self.dist
    }

    /// Length of edge `(i, j)`, or `None` when the nodes are not adjacent.
    pub fn distance(&self, i: NodeId, j: NodeId) -> Option<f64> {
        let n = self.node_count();
        if i.0 >= n || j.0 >= n {
            return None;
        }
        let d = self.dist[i.0 * n + j.0];
        (d >= 0.0).then_some(d)
    }

    pub fn coord(&self, node: NodeId) -> GridCoord {
        GridCoord::new(node.0 % self.nodes_x(), node.0 / self.nodes_x())
    }

    pub fn node(&self, coord: GridCoord) -> Result<NodeId> {
        if coord.x < self.nodes_x() && coord.y < self.nodes_y() {
            Ok(NodeId(coord.y * self.nodes_x() + coord.x))
        } else {
            Err(DarpError::InvalidConfig {
                field: "coord".into(),
                message: format!("({}, {}) lies outside the grid", coord.x, coord.y),
            })
        }
    }

    /// Node reached by moving from `coord` in direction `action`, if it exists.
    pub fn step_coord(&self, coord: GridCoord, action: Action) -> Option<GridCoord> {
        let (dx, dy) = action.delta();
        let x = coord.x.checked_add_signed(dx)?;
        let y = coord.y.checked_add_signed(dy)?;
        (x < self.nodes_x() && y < self.nodes_y()).then_some(GridCoord::new(x, y))
    }

    /// Adjacent nodes of `node` with the direction leading to each, in action order.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<(NodeId, Action)>> {
        self.check_node(node.0)?;
        let here = self.coord(node);
        Ok(Action::ALL
            .iter()
            .filter_map(|&a| {
                self.step_coord(here, a)
                    .map(|c| (NodeId(c.y * self.nodes_x() + c.x), a))
            })
            .collect())
    }

    /// Directions that stay on the grid from `coord`.
    pub fn valid_actions(&self, coord: GridCoord) -> Vec<Action> {
        Action::ALL
            .iter()
            .copied()
            .filter(|&a| self.step_coord(coord, a).is_some())
            .collect()
    }

    /// Undirected edges `(i, j, d_ij)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.node_count();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let d = self.dist[i * n + j];
                if d >= 0.0 {
                    out.push((i, j, d));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.dist.iter().filter(|&&d| d >= 0.0).count() / 2
    }

    pub fn mean_edge_length(&self) -> f64 {
        let edges = self.edges();
        edges.iter().map(|e| e.2).sum::<f64>() / edges.len() as f64
    }

    pub fn min_edge_length(&self) -> f64 {
        self.edges().iter().map(|e| e.2).fold(f64::INFINITY, f64::min)
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            schema_version: NETWORK_SCHEMA_VERSION,
            width_cells: self.width_cells,
            height_cells: self.height_cells,
            seed: self.seed,
            free_speed: self.free_speed,
            edges: self.edges(),
        }
    }

    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.schema_version != NETWORK_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}", doc.schema_version),
            ));
        }
        let mut net = Self::from_edges(doc.width_cells, doc.height_cells, &doc.edges)?
            .with_free_speed(doc.free_speed)?;
        net.seed = doc.seed;
        Ok(net)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }
}

fn check_dims(width_cells: usize, height_cells: usize) -> Result<()> {
    if width_cells == 0 || height_cells == 0 {
        return Err(DarpError::InvalidGrid(format!(
            "grid needs at least one cell per side, got {width_cells}x{height_cells}"
        )));
    }
    Ok(())
}

fn check_edge_inputs(p: f64, d: f64) -> Result<()> {
    if !(d > 0.0) {
        return Err(DarpError::NonPositiveLength(d));
    }
    if !(p >= 0.0) {
        return Err(DarpError::NegativeFlow(p));
    }
    Ok(())
}

/// Walking speed `x0 * rho^-0.8` with `rho = p / d`; an empty road walks at `x0`.
pub fn velocity(p: f64, d: f64, free_speed: f64) -> Result<f64> {
    check_edge_inputs(p, d)?;
    if p == 0.0 {
        return Ok(free_speed);
    }
    Ok(free_speed * (p / d).powf(-DENSITY_EXPONENT))
}

/// Seconds needed to walk an edge of length `d` carrying `p` pedestrians:
/// `d^0.2 * p^0.8 / x0`, or `d / x0` on an empty road.
pub fn edge_travel_time(d: f64, p: f64, free_speed: f64) -> Result<f64> {
    check_edge_inputs(p, d)?;
    if p == 0.0 {
        return Ok(d / free_speed);
    }
    Ok(d.powf(1.0 - DENSITY_EXPONENT) * p.powf(DENSITY_EXPONENT) / free_speed)
}
