//! Episodic route-planning MDP over a grid with evolving pedestrian flows.
//!
//! The observation is the agent's grid position. Each action moves the agent
//! along one edge, costs the edge's travel time at the departure slot, and
//! advances every flow by one slot.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, DarpError, Result};
use crate::flow::{init_flows, step_flows, ArimaParams, FlowConfig, FlowState};
use crate::grid::{edge_travel_time, Action, GridCoord, NodeId, RoadNetwork};

/// Direction convention of the distance-shaping term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shaping {
    /// `w_r * (phi(t-1) - phi(t))`: moving closer is rewarded.
    TowardPositive,
    /// `w_r * (phi(t) - phi(t-1))` exactly as the reward formula is printed.
    AwayPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Shaping weight, reward units per meter.
    pub w_r: f64,
    pub goal_bonus: f64,
    pub shaping: Shaping,
    /// Seconds per reward unit for the travel-time term.
    pub time_unit: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { w_r: 1e-3, goal_bonus: 1.0, shaping: Shaping::TowardPositive, time_unit: 600.0 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_r >= 0.0 && self.w_r.is_finite()) {
            return Err(invalid("reward.w_r", "must be finite and non-negative"));
        }
        if !(self.time_unit > 0.0 && self.time_unit.is_finite()) {
            return Err(invalid("reward.time_unit", "must be positive"));
        }
        if !self.goal_bonus.is_finite() {
            return Err(invalid("reward.goal_bonus", "must be finite"));
        }
        Ok(())
    }
}

/// Route endpoints and episode limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub origin: GridCoord,
    pub destination: GridCoord,
    pub t_max: usize,
    pub reward: RewardConfig,
}

impl EnvConfig {
    pub fn corner_to_corner(net: &RoadNetwork) -> Self {
        Self {
            origin: GridCoord::new(0, 0),
            destination: GridCoord::new(net.width_cells(), net.height_cells()),
            t_max: 100,
            reward: RewardConfig::default(),
        }
    }

    pub fn validate(&self, net: &RoadNetwork) -> Result<()> {
        let origin = net.node(self.origin).map_err(|_| invalid("route.origin", "outside the grid"))?;
        let dest = net
            .node(self.destination)
            .map_err(|_| invalid("route.destination", "outside the grid"))?;
        if origin == dest {
            return Err(invalid("route", "origin and destination coincide"));
        }
        if self.t_max == 0 {
            return Err(invalid("env.t_max", "must be at least 1"));
        }
        self.reward.validate()
    }
}

/// A fully resolved environment definition: network, initial flows, flow
/// dynamics and route. Episodes differ only in their flow-noise seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    net: Arc<RoadNetwork>,
    initial_flows: FlowState,
    arima: ArimaParams,
    config: EnvConfig,
    congested: Vec<usize>,
    pitch: f64,
}

impl Scenario {
    /// Resolves congested nodes (never the route endpoints) and initial flows from `seed`.
    pub fn new(net: Arc<RoadNetwork>, flows: &FlowConfig, config: EnvConfig, seed: u64) -> Result<Self> {
        config.validate(&net)?;
        let (origin, destination) = (net.node(config.origin)?, net.node(config.destination)?);
        let congested = flows.congested_nodes(&net, seed, origin, destination)?;
        let initial_flows = init_flows(&net, flows, seed, &congested)?;
        let pitch = net.mean_edge_length();
        Ok(Self { net, initial_flows, arima: flows.arima.clone(), config, congested, pitch })
    }

    /// Scenario over explicitly supplied initial flows.
    pub fn with_flows(net: Arc<RoadNetwork>, initial_flows: FlowState, arima: ArimaParams, config: EnvConfig) -> Result<Self> {
        config.validate(&net)?;
        let pitch = net.mean_edge_length();
        Ok(Self { net, initial_flows, arima, config, congested: Vec::new(), pitch })
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn shared_network(&self) -> Arc<RoadNetwork> {
        Arc::clone(&self.net)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn arima(&self) -> &ArimaParams {
        &self.arima
    }

    pub fn initial_flows(&self) -> &FlowState {
        &self.initial_flows
    }

    pub fn congested_nodes(&self) -> &[usize] {
        &self.congested
    }

    pub fn origin(&self) -> NodeId {
        self.net.node(self.config.origin).expect("validated")
    }

    pub fn destination(&self) -> NodeId {
        self.net.node(self.config.destination).expect("validated")
    }

    pub fn t_max(&self) -> usize {
        self.config.t_max
    }

    /// Straight-line distance in meters to the destination on a lattice
    /// whose pitch is the mean edge length.
    pub fn potential(&self, pos: GridCoord) -> f64 {
        potential(pos, self.config.destination, self.pitch)
    }

    /// Network input for a position: `(x / W, y / H)`.
    pub fn encode(&self, pos: GridCoord) -> [f64; 2] {
        encode_position(&self.net, pos)
    }

    /// Starts an episode at the origin; `noise_seed` drives the flow innovations.
    pub fn reset(&self, noise_seed: u64) -> Env<'_> {
        Env {
            scenario: self,
            flow: self.initial_flows.clone(),
            rng: ChaCha8Rng::seed_from_u64(noise_seed),
            pos: self.config.origin,
            t: 0,
            done: false,
            seconds: 0.0,
            reward: 0.0,
            trace: None,
        }
    }

    /// Flow matrices an episode with `noise_seed` sees at departure slots `0..t_max`.
    pub fn realize_trace(&self, noise_seed: u64) -> FlowTrace {
        let mut flow = self.initial_flows.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let mut slots = Vec::with_capacity(self.config.t_max);
        for _ in 0..self.config.t_max {
            slots.push(flow.matrix().to_vec());
            step_flows(&mut flow, &self.arima, &mut rng);
        }
        FlowTrace { n: self.net.node_count(), slots }
    }
}

pub fn encode_position(net: &RoadNetwork, pos: GridCoord) -> [f64; 2] {
    [pos.x as f64 / net.width_cells() as f64, pos.y as f64 / net.height_cells() as f64]
}

pub fn potential(pos: GridCoord, destination: GridCoord, pitch: f64) -> f64 {
    let dx = pos.x as f64 - destination.x as f64;
    let dy = pos.y as f64 - destination.y as f64;
    pitch * dx.hypot(dy)
}

/// Realised flow matrices, one per departure slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    n: usize,
    slots: Vec<Vec<f64>>,
}

impl FlowTrace {
    pub fn from_slots(n: usize, slots: Vec<Vec<f64>>) -> Self {
        Self { n, slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn flow(&self, slot: usize, i: usize, j: usize) -> f64 {
        self.slots[slot][i * self.n + j]
    }

    /// SHA-256 of all slots as little-endian floats, hex encoded.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for slot in &self.slots {
            for v in slot {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

/// One transition as stored for replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub s: GridCoord,
    pub a: Action,
    pub r: f64,
    pub s_next: GridCoord,
    /// The episode ended with this transition (arrival or step budget).
    pub done: bool,
    /// The transition reached the destination; no bootstrapping past it.
    pub arrived: bool,
}

/// Outcome of a single [`Env::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: GridCoord,
    pub reward: f64,
    pub done: bool,
    pub arrived: bool,
    /// Travel time of the traversed edge.
    pub seconds: f64,
    /// Flow on the traversed edge at departure.
    pub flow: f64,
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub x: usize,
    pub y: usize,
    pub action: usize,
    pub reward: f64,
    pub flow: f64,
    pub seconds: f64,
}

/// A running episode.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    scenario: &'a Scenario,
    flow: FlowState,
    rng: ChaCha8Rng,
    pos: GridCoord,
    t: usize,
    done: bool,
    seconds: f64,
    reward: f64,
    trace: Option<Vec<TraceRow>>,
}

impl<'a> Env<'a> {
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn scenario(&self) -> &'a Scenario {
        self.scenario
    }

    pub fn position(&self) -> GridCoord {
        self.pos
    }

    pub fn node(&self) -> NodeId {
        self.scenario.net.node(self.pos).expect("position stays on the grid")
    }

    pub fn slot(&self) -> usize {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn arrived(&self) -> bool {
        self.pos == self.scenario.config.destination
    }

    /// Travel time accumulated so far.
    pub fn elapsed_seconds(&self) -> f64 {
        self.seconds
    }

    pub fn cumulative_reward(&self) -> f64 {
        self.reward
    }

    pub fn flows(&self) -> &FlowState {
        &self.flow
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    pub fn valid_actions(&self) -> Vec<Action> {
        self.scenario.net.valid_actions(self.pos)
    }

    pub fn observation(&self) -> [f64; 2] {
        self.scenario.encode(self.pos)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.done {
            return Err(DarpError::EpisodeOver);
        }
        let sc = self.scenario;
        let net = &sc.net;
        let next = net
            .step_coord(self.pos, action)
            .ok_or(DarpError::InvalidAction { action, x: self.pos.x, y: self.pos.y })?;
        let (i, j) = (net.node(self.pos)?, net.node(next)?);
        let d = net.distance(i, j).expect("lattice neighbours share an edge");
        let p = self.flow.flow(i.0, j.0);
        let seconds = edge_travel_time(d, p, net.free_speed())?;

        let rc = &sc.config.reward;
        let progress = sc.potential(self.pos) - sc.potential(next);
        let shaping = match rc.shaping {
            Shaping::TowardPositive => rc.w_r * progress,
            Shaping::AwayPositive => -rc.w_r * progress,
        };
        let arrived = next == sc.config.destination;
        let bonus = if arrived { rc.goal_bonus } else { 0.0 };
        let reward = -seconds / rc.time_unit + shaping + bonus;

        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRow {
                t: self.t,
                x: self.pos.x,
                y: self.pos.y,
                action: action.index(),
                reward,
                flow: p,
                seconds,
            });
        }

        step_flows(&mut self.flow, &sc.arima, &mut self.rng);
        self.t += 1;
        self.pos = next;
        self.seconds += seconds;
        self.reward += reward;
        self.done = arrived || self.t >= sc.config.t_max;
        Ok(StepOutcome { next, reward, done: self.done, arrived, seconds, flow: p })
    }
}

/// Renders trace rows as CSV with a header.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut out = String::from("t,x,y,action,reward,flow,seconds\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{},{}", r.t, r.x, r.y, r.action, r.reward, r.flow, r.seconds);
    }
    out
}
