//! Comparison planners: random walk, distance-optimal paths and an exact
//! oracle for minimum realised travel time on a known flow trace.
//!
//! Every method is timed through [`execute`], which drives the same
//! [`Env`] the learning agents train in.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Env, FlowTrace};
use crate::error::{DarpError, Result};
use crate::grid::{edge_travel_time, Action, GridCoord, NodeId, RoadNetwork};
use crate::seed;

/// Anything that picks the next move of a running episode.
pub trait Policy {
    fn act(&mut self, env: &Env<'_>) -> Result<Action>;
}

/// Uniform choice among the moves that stay on the grid.
pub fn random_policy_step<R: Rng + ?Sized>(net: &RoadNetwork, pos: GridCoord, rng: &mut R) -> Result<Action> {
    net.valid_actions(pos).choose(rng).copied().ok_or(DarpError::NoValidActions)
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: seed::stream(seed, "random-policy", 0) }
    }
}

impl Policy for RandomPolicy {
    fn act(&mut self, env: &Env<'_>) -> Result<Action> {
        random_policy_step(env.scenario().network(), env.position(), &mut self.rng)
    }
}

/// A node sequence from origin towards destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedRoute {
    pub nodes: Vec<usize>,
    /// Summed edge length in meters.
    pub distance: f64,
    /// Predicted travel time, when the planner knows it.
    pub seconds: Option<f64>,
    pub complete: bool,
}

impl PlannedRoute {
    fn from_nodes(net: &RoadNetwork, nodes: Vec<usize>, destination: NodeId) -> Self {
        let distance = nodes
            .windows(2)
            .map(|w| net.distance(NodeId(w[0]), NodeId(w[1])).expect("route follows edges"))
            .sum();
        let complete = nodes.last() == Some(&destination.0);
        Self { nodes, distance, seconds: None, complete }
    }

    /// Moves that walk the route on the lattice.
    pub fn actions(&self, net: &RoadNetwork) -> Result<Vec<Action>> {
        self.nodes
            .windows(2)
            .map(|w| action_between(net, NodeId(w[0]), NodeId(w[1])))
            .collect()
    }
}

fn action_between(net: &RoadNetwork, from: NodeId, to: NodeId) -> Result<Action> {
    let c = net.coord(from);
    let target = net.coord(to);
    Action::ALL
        .into_iter()
        .find(|&a| net.step_coord(c, a) == Some(target))
        .ok_or_else(|| DarpError::InvalidGrid(format!("nodes {} and {} are not adjacent", from.0, to.0)))
}

/// Replays a fixed route. Fails if the episode drifts off it.
#[derive(Debug, Clone)]
pub struct RoutePolicy {
    nodes: Vec<usize>,
}

impl RoutePolicy {
    pub fn new(route: &PlannedRoute) -> Self {
        Self { nodes: route.nodes.clone() }
    }
}

impl Policy for RoutePolicy {
    fn act(&mut self, env: &Env<'_>) -> Result<Action> {
        let here = env.node().0;
        let at = self.nodes.iter().position(|&n| n == here).ok_or(DarpError::Unreachable(here))?;
        let next = *self.nodes.get(at + 1).ok_or(DarpError::Unreachable(here))?;
        action_between(env.scenario().network(), NodeId(here), NodeId(next))
    }
}

/// Outcome of driving a policy through one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub seconds: f64,
    pub reward: f64,
    pub steps: usize,
    pub reached: bool,
    pub path: Vec<usize>,
}

/// Runs `policy` until the episode ends. The single timing path for all methods.
pub fn execute<P: Policy + ?Sized>(policy: &mut P, mut env: Env<'_>) -> Result<Execution> {
    let mut path = vec![env.node().0];
    while !env.is_done() {
        let a = policy.act(&env)?;
        env.step(a)?;
        path.push(env.node().0);
    }
    Ok(Execution {
        seconds: env.elapsed_seconds(),
        reward: env.cumulative_reward(),
        steps: env.slot(),
        reached: env.arrived(),
        path,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    node: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // reversed: BinaryHeap pops the smallest key, then the smallest node
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.total_cmp(&self.key).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest-path labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPaths {
    pub origin: NodeId,
    pub dist: Vec<f64>,
    pub pred: Vec<Option<usize>>,
}

impl ShortestPaths {
    pub fn path_to(&self, target: NodeId) -> Option<Vec<usize>> {
        if !self.dist.get(target.0)?.is_finite() {
            return None;
        }
        let mut nodes = vec![target.0];
        let mut cur = target.0;
        while let Some(p) = self.pred[cur] {
            nodes.push(p);
            cur = p;
        }
        nodes.reverse();
        Some(nodes)
    }
}

/// Dijkstra with edge weights `cost(i, j, d_ij)`.
pub fn dijkstra_by<F>(net: &RoadNetwork, origin: NodeId, mut cost: F) -> Result<ShortestPaths>
where
    F: FnMut(usize, usize, f64) -> f64,
{
    let n = net.node_count();
    if origin.0 >= n {
        return Err(DarpError::NodeOutOfRange { node: origin.0, count: n });
    }
    let mut dist = vec![f64::INFINITY; n];
    let mut pred = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[origin.0] = 0.0;
    heap.push(Entry { key: 0.0, node: origin.0 });
    while let Some(Entry { key, node }) = heap.pop() {
        if done[node] {
            continue;
        }
        done[node] = true;
        for (next, _) in net.neighbors(NodeId(node))? {
            let d = net.distance(NodeId(node), next).expect("neighbours share an edge");
            let cand = key + cost(node, next.0, d);
            if cand < dist[next.0] {
                dist[next.0] = cand;
                pred[next.0] = Some(node);
                heap.push(Entry { key: cand, node: next.0 });
            }
        }
    }
    Ok(ShortestPaths { origin, dist, pred })
}

/// Dijkstra on edge lengths.
pub fn dijkstra(net: &RoadNetwork, origin: NodeId) -> Result<ShortestPaths> {
    dijkstra_by(net, origin, |_, _, d| d)
}

/// Minimum-distance route. The heuristic is the straight-line lattice
/// distance times the shortest edge, which never overestimates.
pub fn a_star(net: &RoadNetwork, origin: NodeId, destination: NodeId) -> Result<PlannedRoute> {
    let n = net.node_count();
    for node in [origin, destination] {
        if node.0 >= n {
            return Err(DarpError::NodeOutOfRange { node: node.0, count: n });
        }
    }
    let goal = net.coord(destination);
    let scale = net.min_edge_length();
    let h = |node: usize| {
        let c = net.coord(NodeId(node));
        let dx = c.x as f64 - goal.x as f64;
        let dy = c.y as f64 - goal.y as f64;
        dx.hypot(dy) * scale
    };
    let mut g = vec![f64::INFINITY; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    g[origin.0] = 0.0;
    open.push(Entry { key: h(origin.0), node: origin.0 });
    while let Some(Entry { node, .. }) = open.pop() {
        if closed[node] {
            continue;
        }
        if node == destination.0 {
            let paths = ShortestPaths { origin, dist: g, pred };
            let nodes = paths.path_to(destination).expect("goal was reached");
            return Ok(PlannedRoute::from_nodes(net, nodes, destination));
        }
        closed[node] = true;
        for (next, _) in net.neighbors(NodeId(node))? {
            let d = net.distance(NodeId(node), next).expect("neighbours share an edge");
            let cand = g[node] + d;
            if cand < g[next.0] {
                g[next.0] = cand;
                pred[next.0] = Some(node);
                open.push(Entry { key: cand + h(next.0), node: next.0 });
            }
        }
    }
    Err(DarpError::Unreachable(origin.0))
}

/// Best route for a known flow trace, plus whether the horizon allows one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRoute {
    pub route: PlannedRoute,
    pub feasible: bool,
}

/// Exact minimum realised travel time over (node, slot) states. Leaving along
/// `(i, j)` at slot `t` costs `edge_travel_time(d_ij, p_ij(t))` and takes one
/// slot; there is no waiting move. Ties go to the lowest action index.
pub fn time_expanded_optimal(
    net: &RoadNetwork,
    trace: &FlowTrace,
    origin: NodeId,
    destination: NodeId,
) -> Result<OracleRoute> {
    let n = net.node_count();
    for node in [origin, destination] {
        if node.0 >= n {
            return Err(DarpError::NodeOutOfRange { node: node.0, count: n });
        }
    }
    let horizon = trace.len();
    let neighbors: Vec<Vec<(NodeId, Action)>> =
        (0..n).map(|i| net.neighbors(NodeId(i))).collect::<Result<_>>()?;
    // cost_to_go[t][i]: least seconds from node i departing at slot t
    let mut cost_to_go = vec![vec![f64::INFINITY; n]; horizon + 1];
    let mut choice = vec![vec![None::<usize>; n]; horizon];
    cost_to_go[horizon][destination.0] = 0.0;
    for t in (0..horizon).rev() {
        let (now, later) = cost_to_go.split_at_mut(t + 1);
        let (now, later) = (&mut now[t], &later[0]);
        now[destination.0] = 0.0;
        for i in 0..n {
            if i == destination.0 {
                continue;
            }
            let mut nbrs = neighbors[i].clone();
            nbrs.sort_by_key(|&(_, a)| a);
            for (j, _) in nbrs {
                if !later[j.0].is_finite() {
                    continue;
                }
                let d = net.distance(NodeId(i), j).expect("neighbours share an edge");
                let c = edge_travel_time(d, trace.flow(t, i, j.0), net.free_speed())? + later[j.0];
                if c < now[i] {
                    now[i] = c;
                    choice[t][i] = Some(j.0);
                }
            }
        }
    }

    let feasible = cost_to_go[0][origin.0].is_finite();
    let mut nodes = vec![origin.0];
    let mut seconds = 0.0;
    if feasible {
        let mut cur = origin.0;
        let mut t = 0;
        while cur != destination.0 {
            let next = choice[t][cur].expect("finite cost has a successor");
            let d = net.distance(NodeId(cur), NodeId(next)).expect("neighbours share an edge");
            // summed forwards, in the same order the environment accumulates
            seconds += edge_travel_time(d, trace.flow(t, cur, next), net.free_speed())?;
            nodes.push(next);
            cur = next;
            t += 1;
        }
    }
    let mut route = PlannedRoute::from_nodes(net, nodes, destination);
    route.seconds = feasible.then_some(seconds);
    Ok(OracleRoute { route, feasible })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn unit(w: usize, h: usize) -> RoadNetwork {
        RoadNetwork::uniform(w, h, 100.0).unwrap()
    }

    #[test]
    fn adjacent_route_is_one_edge() {
        let net = unit(3, 3);
        let r = a_star(&net, NodeId(0), NodeId(1)).unwrap();
        assert_eq!(r.nodes, vec![0, 1]);
        assert_eq!(r.distance, 100.0);
        assert!(r.complete);
    }

    #[test]
    fn uniform_grid_gives_staircase() {
        let net = unit(4, 3);
        let dest = NodeId(net.node_count() - 1);
        let r = a_star(&net, NodeId(0), dest).unwrap();
        assert_eq!(r.nodes.len(), 4 + 3 + 1);
        for a in r.actions(&net).unwrap() {
            assert!(matches!(a, Action::Down | Action::Right));
        }
    }

    #[test]
    fn dijkstra_labels() {
        let net = RoadNetwork::build_grid(3, 3, [50.0, 150.0], 9).unwrap();
        let sp = dijkstra(&net, NodeId(4)).unwrap();
        assert_eq!(sp.dist[4], 0.0);
        for (i, j, d) in net.edges() {
            assert!(sp.dist[j] <= sp.dist[i] + d + 1e-9);
            assert!(sp.dist[i] <= sp.dist[j] + d + 1e-9);
        }
        assert_eq!(sp.path_to(NodeId(4)), Some(vec![4]));
    }

    #[test]
    fn random_step_at_corner() {
        let net = unit(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut down = 0;
        let draws = 10_000;
        for _ in 0..draws {
            match random_policy_step(&net, GridCoord::new(0, 0), &mut rng).unwrap() {
                Action::Down => down += 1,
                Action::Right => {}
                other => panic!("off-grid move {other:?}"),
            }
        }
        let sd = (draws as f64 * 0.25).sqrt();
        assert!((down as f64 - draws as f64 / 2.0).abs() < 3.0 * sd);
    }

    #[test]
    fn oracle_on_single_cell() {
        let net = unit(1, 1);
        let flows = vec![vec![0.0; 16]; 4];
        let trace = FlowTrace::from_slots(4, flows);
        let o = time_expanded_optimal(&net, &trace, NodeId(0), NodeId(3)).unwrap();
        assert!(o.feasible);
        // two free-flow edges of 100 m
        let expected = 2.0 * 100.0 / crate::grid::FREE_SPEED;
        assert!((o.route.seconds.unwrap() - expected).abs() < 1e-12);
        // tie between down and right goes to down
        assert_eq!(o.route.nodes, vec![0, 2, 3]);
    }

    #[test]
    fn oracle_flags_short_horizon() {
        let net = unit(2, 2);
        let trace = FlowTrace::from_slots(9, vec![vec![0.0; 81]; 3]);
        let o = time_expanded_optimal(&net, &trace, NodeId(0), NodeId(8)).unwrap();
        assert!(!o.feasible);
        assert!(!o.route.complete);
        assert_eq!(o.route.seconds, None);
    }
}
