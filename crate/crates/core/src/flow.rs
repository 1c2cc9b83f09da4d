//! Per-edge pedestrian-flow dynamics: differencing, AR fitting on the
//! differenced series, forecasting, and the slot-by-slot flow matrix update.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, DarpError, Result};
use crate::grid::{NodeId, RoadNetwork, NO_EDGE};
use crate::seed;

/// ARIMA(O1, d, O2) parameters. Differenced flows follow
/// `w(t) = c + sum_k lambda_k w(t-k) + eps(t)` with `Var[eps] = noise_var`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArimaParams {
    pub ar_order: usize,
    pub ma_order: usize,
    pub diff_order: usize,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub noise_var: f64,
    pub mean_drift: f64,
}

impl Default for ArimaParams {
    /// Synthetic stand-in used by the benchmark scenarios.
    fn default() -> Self {
        Self::ar1(1, 0.6, 0.0, 400.0)
    }
}

impl ArimaParams {
    pub fn ar1(diff_order: usize, lambda: f64, mean_drift: f64, noise_var: f64) -> Self {
        Self {
            ar_order: 1,
            ma_order: 0,
            diff_order,
            lambda: vec![lambda],
            mu: Vec::new(),
            noise_var,
            mean_drift,
        }
    }

    /// Zero noise, zero drift, zero increments: flows never change.
    ///
    /// With `d = 0` the recursion would pull every level to `c`, so the
    /// frozen process is a driftless random walk without innovations.
    pub fn frozen() -> Self {
        Self::ar1(1, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda.len() != self.ar_order {
            return Err(invalid("arima.lambda", format!("expected {} coefficients", self.ar_order)));
        }
        if self.mu.len() != self.ma_order {
            return Err(invalid("arima.mu", format!("expected {} coefficients", self.ma_order)));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(invalid("arima.noise_var", "must be finite and non-negative"));
        }
        if !self.mean_drift.is_finite() || self.lambda.iter().any(|l| !l.is_finite()) {
            return Err(invalid("arima", "coefficients must be finite"));
        }
        Ok(())
    }

    fn check_simulable(&self) -> Result<()> {
        self.validate()?;
        if self.ma_order > 0 {
            return Err(invalid("arima.ma_order", "moving-average terms are not simulated"));
        }
        Ok(())
    }

    /// Number of past levels the recursion reads.
    pub fn history_len(&self) -> usize {
        (self.ar_order + self.diff_order).max(1)
    }

    pub fn is_stationary(&self) -> bool {
        match self.lambda.as_slice() {
            [] => true,
            [l] => l.abs() < 1.0,
            // sufficient condition for higher orders
            ls => ls.iter().map(|l| l.abs()).sum::<f64>() < 1.0,
        }
    }

    fn noise(&self) -> Option<Normal<f64>> {
        (self.noise_var > 0.0).then(|| Normal::new(0.0, self.noise_var.sqrt()).expect("finite std"))
    }

    /// Next flow level given past levels (oldest first) and an innovation.
    fn next_level(&self, levels: &VecDeque<f64>, innovation: f64) -> f64 {
        let d = self.diff_order;
        let mut diffs: Vec<f64> = levels.iter().copied().collect();
        // sum_{k<d} of the latest k-th difference rebuilds the level from the new d-th difference
        let mut carry = 0.0;
        for _ in 0..d {
            carry += *diffs.last().expect("history_len >= d");
            diffs = diffs.windows(2).map(|w| w[1] - w[0]).collect();
        }
        let ar: f64 = self
            .lambda
            .iter()
            .zip(diffs.iter().rev())
            .map(|(l, w)| l * w)
            .sum();
        let w = self.mean_drift + ar + innovation;
        (carry + w).max(0.0)
    }
}

/// Applies the difference operator `d` times.
pub fn difference(series: &[f64], d: usize) -> Result<Vec<f64>> {
    if series.len() <= d {
        return Err(DarpError::SeriesTooShort { needed: d + 1, got: series.len() });
    }
    let mut out = series.to_vec();
    for _ in 0..d {
        out = out.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok(out)
}

/// First value of each intermediate difference level `0..d`, which together
/// with the `d`-th differences determines the original series.
pub fn difference_heads(series: &[f64], d: usize) -> Result<Vec<f64>> {
    (0..d).map(|k| difference(series, k).map(|s| s[0])).collect()
}

/// Inverse of [`difference`] given the heads from [`difference_heads`].
pub fn integrate(diffs: &[f64], heads: &[f64]) -> Vec<f64> {
    let mut out = diffs.to_vec();
    for &head in heads.iter().rev() {
        let mut level = Vec::with_capacity(out.len() + 1);
        let mut acc = head;
        level.push(acc);
        for w in &out {
            acc += w;
            level.push(acc);
        }
        out = level;
    }
    out
}

/// Result of an AR(1) least-squares fit on a differenced series.
#[derive(Debug, Clone, PartialEq)]
pub struct ArimaFit {
    pub params: ArimaParams,
    /// OLS standard error of the AR coefficient.
    pub lambda_std_error: f64,
    pub observations: usize,
    pub stationary: bool,
}

/// Differences `series` `d` times and fits `w(t) = c + lambda w(t-1) + eps`
/// by ordinary least squares.
pub fn fit_ar(series: &[f64], d: usize) -> Result<ArimaFit> {
    if series.len() < d + 10 {
        return Err(DarpError::SeriesTooShort { needed: d + 10, got: series.len() });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(DarpError::DegenerateSeries("series contains non-finite values".into()));
    }
    let w = difference(series, d)?;
    let x = &w[..w.len() - 1];
    let y = &w[1..];
    let m = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / m;
    let mean_y = y.iter().sum::<f64>() / m;
    let sxx: f64 = x.iter().map(|v| (v - mean_x).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - mean_y).powi(2)).sum();
    let scale = w.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
    let tiny = 1e-12 * scale * scale * m;
    if sxx <= tiny || syy <= tiny {
        return Err(DarpError::DegenerateSeries(format!(
            "differenced series (d = {d}) has zero variance"
        )));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mean_x) * (b - mean_y)).sum();
    let lambda = sxy / sxx;
    let c = mean_y - lambda * mean_x;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - c - lambda * a).powi(2)).sum();
    let noise_var = rss / (m - 2.0);
    let params = ArimaParams::ar1(d, lambda, c, noise_var);
    Ok(ArimaFit {
        stationary: params.is_stationary(),
        lambda_std_error: (noise_var / sxx).sqrt(),
        observations: x.len(),
        params,
    })
}

/// Iterates the recursion `horizon` steps past `history` (oldest first).
/// With `noise_seed = None` this is the conditional-mean forecast; otherwise
/// Gaussian innovations are drawn from the seeded stream. Levels are clamped at 0.
pub fn forecast(
    params: &ArimaParams,
    history: &[f64],
    horizon: usize,
    noise_seed: Option<u64>,
) -> Result<Vec<f64>> {
    params.check_simulable()?;
    let needed = params.diff_order.max(params.ar_order) + params.diff_order;
    let needed = needed.max(params.history_len());
    if history.len() < needed {
        return Err(DarpError::SeriesTooShort { needed, got: history.len() });
    }
    let keep = params.history_len();
    let mut levels: VecDeque<f64> = history[history.len() - keep..].iter().copied().collect();
    let mut rng = noise_seed.map(ChaCha8Rng::seed_from_u64);
    let normal = params.noise();
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let eps = match (&mut rng, &normal) {
            (Some(r), Some(n)) => n.sample(r),
            _ => 0.0,
        };
        let next = params.next_level(&levels, eps);
        levels.pop_front();
        levels.push_back(next);
        out.push(next);
    }
    Ok(out)
}

/// Draws a series of `len` levels from the process, starting from a flat
/// history at `start`. Used to produce synthetic inputs for fitting.
pub fn simulate_series(params: &ArimaParams, start: f64, len: usize, seed: u64) -> Result<Vec<f64>> {
    params.check_simulable()?;
    let history = vec![start; params.history_len()];
    forecast(params, &history, len, Some(seed))
}

/// How congested nodes are chosen for a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Congestion {
    /// Explicit node indices.
    Nodes(Vec<usize>),
    /// This many nodes drawn uniformly, excluding the route endpoints.
    Count(usize),
    /// This fraction of all nodes (rounded), excluding the route endpoints.
    Fraction(f64),
    /// This many interior nodes of the distance-shortest route, evenly spaced.
    Route(usize),
}

impl Default for Congestion {
    fn default() -> Self {
        Congestion::Count(0)
    }
}

/// Initial-flow and dynamics configuration of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub base_range: [f64; 2],
    #[serde(default)]
    pub congestion: Congestion,
    pub congested_mean: f64,
    /// Variance of congested draws, or their standard deviation when
    /// `spread_is_std` is set.
    pub congested_spread: f64,
    #[serde(default)]
    pub spread_is_std: bool,
    pub arima: ArimaParams,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            base_range: [200.0, 1000.0],
            congestion: Congestion::default(),
            congested_mean: 5000.0,
            congested_spread: 1000.0,
            spread_is_std: false,
            arima: ArimaParams::default(),
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.base_range;
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 {
            return Err(invalid("flows.base_range", "bounds must be finite and non-negative"));
        }
        if lo > hi {
            return Err(invalid("flows.base_range", format!("inverted range [{lo}, {hi}]")));
        }
        if let Congestion::Fraction(f) = self.congestion {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid("flows.congestion.fraction", "must lie in [0, 1]"));
            }
        }
        if !(self.congested_mean.is_finite() && self.congested_mean >= 0.0) {
            return Err(invalid("flows.congested_mean", "must be finite and non-negative"));
        }
        if !(self.congested_spread.is_finite() && self.congested_spread >= 0.0) {
            return Err(invalid("flows.congested_spread", "must be finite and non-negative"));
        }
        self.arima.check_simulable()
    }

    pub fn congested_std(&self) -> f64 {
        if self.spread_is_std {
            self.congested_spread
        } else {
            self.congested_spread.sqrt()
        }
    }

    /// Resolves the congested node set. Only explicit lists may include the endpoints.
    pub fn congested_nodes(&self, net: &RoadNetwork, seed: u64, origin: NodeId, destination: NodeId) -> Result<Vec<usize>> {
        let n = net.node_count();
        let pool: Vec<usize> = (0..n).filter(|&i| i != origin.0 && i != destination.0).collect();
        let count = match &self.congestion {
            Congestion::Nodes(nodes) => {
                for &i in nodes {
                    if i >= n {
                        return Err(DarpError::NodeOutOfRange { node: i, count: n });
                    }
                }
                let mut nodes = nodes.clone();
                nodes.sort_unstable();
                nodes.dedup();
                return Ok(nodes);
            }
            Congestion::Count(k) => *k,
            Congestion::Fraction(f) => (f * n as f64).round() as usize,
            Congestion::Route(k) => {
                let route = crate::baselines::a_star(net, origin, destination)?;
                let inner = &route.nodes[1..route.nodes.len().saturating_sub(1).max(1)];
                if *k > inner.len() {
                    return Err(invalid(
                        "flows.congestion",
                        format!("{k} route nodes requested, the route has {} interior nodes", inner.len()),
                    ));
                }
                let mut picked: Vec<usize> = (1..=*k).map(|j| inner[j * inner.len() / (k + 1)]).collect();
                picked.sort_unstable();
                return Ok(picked);
            }
        };
        if count > pool.len() {
            return Err(invalid(
                "flows.congestion",
                format!("{count} congested nodes requested, only {} eligible", pool.len()),
            ));
        }
        let mut rng = seed::stream(seed, "congested-nodes", 0);
        let mut picked: Vec<usize> = sample(&mut rng, pool.len(), count).into_iter().map(|k| pool[k]).collect();
        picked.sort_unstable();
        Ok(picked)
    }
}

/// Directional flow matrix plus per-edge level history.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    n: usize,
    flows: Vec<f64>,
    edges: Vec<(usize, usize)>,
    history: Vec<VecDeque<f64>>,
    t: usize,
}

impl FlowState {
    /// State with the given initial level on every directed edge; history is
    /// back-cast as constant.
    pub fn from_levels(
        net: &RoadNetwork,
        params: &ArimaParams,
        mut level: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let n = net.node_count();
        let mut flows = vec![NO_EDGE; n * n];
        let mut edges = Vec::new();
        let mut history = Vec::new();
        let dist = net.distance_matrix();
        for i in 0..n {
            for j in 0..n {
                if dist[i * n + j] >= 0.0 {
                    let p = level(i, j).max(0.0);
                    flows[i * n + j] = p;
                    edges.push((i, j));
                    history.push(std::iter::repeat_n(p, params.history_len()).collect());
                }
            }
        }
        Self { n, flows, edges, history, t: 0 }
    }

    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.flows[i * self.n + j]
    }

    pub fn matrix(&self) -> &[f64] {
        &self.flows
    }

    pub fn slot(&self) -> usize {
        self.t
    }

    pub fn directed_edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Level history of a directed edge, oldest first.
    pub fn history(&self, i: usize, j: usize) -> Option<Vec<f64>> {
        self.edges
            .iter()
            .position(|&e| e == (i, j))
            .map(|k| self.history[k].iter().copied().collect())
    }

    /// Overrides the level history of a directed edge (oldest first); the last
    /// value becomes the current flow.
    pub fn set_history(&mut self, i: usize, j: usize, levels: &[f64]) -> Result<()> {
        let k = self
            .edges
            .iter()
            .position(|&e| e == (i, j))
            .ok_or_else(|| invalid("edge", format!("({i}, {j}) is not an edge")))?;
        let want = self.history[k].len();
        if levels.len() != want {
            return Err(DarpError::SeriesTooShort { needed: want, got: levels.len() });
        }
        self.history[k] = levels.iter().copied().collect();
        self.flows[i * self.n + j] = *levels.last().expect("non-empty history");
        Ok(())
    }
}

/// Initial flows: uniform in the base range on every directed edge, Gaussian
/// congested levels on edges touching a congested node.
pub fn init_flows(net: &RoadNetwork, cfg: &FlowConfig, seed: u64, congested: &[usize]) -> Result<FlowState> {
    cfg.validate()?;
    let [lo, hi] = cfg.base_range;
    let mut base_rng = seed::stream(seed, "flow-base", 0);
    let mut jam_rng = seed::stream(seed, "flow-congested", 0);
    let jam = Normal::new(cfg.congested_mean, cfg.congested_std())
        .map_err(|e| invalid("flows.congested_spread", e.to_string()))?;
    let mut is_jammed = vec![false; net.node_count()];
    for &c in congested {
        is_jammed[c] = true;
    }
    Ok(FlowState::from_levels(net, &cfg.arima, |i, j| {
        let base = if lo == hi { lo } else { base_rng.random_range(lo..hi) };
        if is_jammed[i] || is_jammed[j] {
            jam.sample(&mut jam_rng).max(0.0)
        } else {
            base
        }
    }))
}

/// Advances every directed edge one slot. Edges are visited in a fixed order
/// so the innovations drawn from `rng` are reproducible.
pub fn step_flows<R: Rng + ?Sized>(state: &mut FlowState, params: &ArimaParams, rng: &mut R) {
    let normal = params.noise();
    for (k, &(i, j)) in state.edges.iter().enumerate() {
        let eps = normal.as_ref().map_or(0.0, |n| n.sample(rng));
        let hist = &mut state.history[k];
        let next = params.next_level(hist, eps);
        hist.pop_front();
        hist.push_back(next);
        state.flows[i * state.n + j] = next;
    }
    state.t += 1;
}

/// Parses a single-column count series; a non-numeric first row is a header.
pub fn parse_series_csv(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (row, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(DarpError::Parse(format!("row {}: non-finite value", row + 1))),
            Err(_) if out.is_empty() && row == 0 => {} // header
            Err(_) => return Err(DarpError::Parse(format!("row {}: `{field}` is not a number", row + 1))),
        }
    }
    if out.is_empty() {
        return Err(DarpError::Parse("no data rows".into()));
    }
    Ok(out)
}
