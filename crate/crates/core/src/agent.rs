//! Dueling deep-Q route planner and a tabular Q-learning reference.
//!
//! Training follows the usual loop: act epsilon-greedily over the valid
//! moves, store the transition, and once the buffer holds a batch, regress
//! the online network towards targets computed with a periodically synced
//! target network.

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::baselines::{execute, Policy};
use crate::env::{Env, Experience, Scenario};
use crate::error::{invalid, DarpError, Result};
use crate::grid::{Action, GridCoord, RoadNetwork};
use crate::neural::{DuelingNet, NetDims, RmsProp, RmsVariant, TrainSample};
use crate::replay::{ReplayBuffer, ReplayMode, Sampled};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    /// Exploration rate once annealing ends.
    pub epsilon: f64,
    /// Exploration rate at episode 0, annealed linearly to `epsilon`.
    #[serde(default)]
    pub epsilon_start: Option<f64>,
    #[serde(default)]
    pub epsilon_decay_episodes: usize,
    pub batch: usize,
    pub buffer_capacity: usize,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub rms_variant: RmsVariant,
    /// Environment steps between target-network syncs.
    pub target_sync: usize,
    pub episodes: usize,
    pub hidden: usize,
    pub replay: ReplayMode,
    /// Greedy evaluation every this many episodes (0 disables).
    pub eval_every: usize,
    pub eval_runs: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            epsilon: 0.1,
            epsilon_start: Some(1.0),
            epsilon_decay_episodes: 100,
            batch: 32,
            buffer_capacity: 10_000,
            learning_rate: 1e-4,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            rms_variant: RmsVariant::Sqrt,
            target_sync: 200,
            episodes: 500,
            hidden: 50,
            replay: ReplayMode::default(),
            eval_every: 10,
            eval_runs: 10,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("agent.gamma", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("agent.epsilon", "must lie in [0, 1]"));
        }
        if let Some(e0) = self.epsilon_start {
            if !(0.0..=1.0).contains(&e0) {
                return Err(invalid("agent.epsilon_start", "must lie in [0, 1]"));
            }
        }
        if self.target_sync == 0 {
            return Err(invalid("agent.target_sync", "must be at least 1"));
        }
        if self.batch == 0 || self.buffer_capacity < self.batch {
            return Err(invalid("agent.batch", "must be positive and fit in the buffer"));
        }
        if self.hidden == 0 {
            return Err(invalid("agent.hidden", "must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("agent.learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return Err(invalid("agent.rms_decay", "must lie in [0, 1)"));
        }
        if !(self.rms_eps > 0.0) {
            return Err(invalid("agent.rms_eps", "must be positive"));
        }
        if self.eval_every > 0 && self.eval_runs == 0 {
            return Err(invalid("agent.eval_runs", "must be positive when evaluation is enabled"));
        }
        if let ReplayMode::Prioritized(p) = &self.replay {
            if !(p.alpha >= 0.0 && p.eps > 0.0) {
                return Err(invalid("agent.replay", "alpha must be >= 0 and eps > 0"));
            }
        }
        Ok(())
    }

    /// Exploration rate used during training episode `epi`.
    pub fn epsilon_at(&self, epi: usize) -> f64 {
        match self.epsilon_start {
            Some(e0) if epi < self.epsilon_decay_episodes => {
                e0 + (self.epsilon - e0) * epi as f64 / self.epsilon_decay_episodes as f64
            }
            _ => self.epsilon,
        }
    }

    pub fn dims(&self) -> NetDims {
        NetDims { hidden1: self.hidden, hidden2: self.hidden, ..NetDims::DEFAULT }
    }

    fn optimizer(&self, param_count: usize) -> RmsProp {
        RmsProp::new(param_count, self.learning_rate, self.rms_decay, self.rms_eps, self.rms_variant)
    }
}

/// Index of the largest value among `valid` actions; ties go to the lowest index.
fn masked_argmax(q: &[f64], valid: &[Action]) -> Option<Action> {
    valid.iter().copied().fold(None, |best: Option<Action>, a| match best {
        Some(b) if q[b.index()] > q[a.index()] || (q[b.index()] == q[a.index()] && b < a) => Some(b),
        _ => Some(a),
    })
}

fn masked_max(q: &[f64], valid: &[Action]) -> f64 {
    valid.iter().map(|a| q[a.index()]).fold(f64::NEG_INFINITY, f64::max)
}

/// Epsilon-greedy choice restricted to `valid`.
pub fn select_action<R: Rng + ?Sized>(
    net: &DuelingNet,
    input: [f64; 2],
    valid: &[Action],
    epsilon: f64,
    rng: &mut R,
) -> Result<Action> {
    if valid.is_empty() {
        return Err(DarpError::NoValidActions);
    }
    if rng.random::<f64>() < epsilon {
        return Ok(*valid.choose(rng).expect("non-empty"));
    }
    Ok(masked_argmax(&net.forward(&input), valid).expect("non-empty"))
}

/// `y = r` for transitions that reach the destination, otherwise
/// `r + gamma * max_{a' valid at s'} Q_target(s', a')`.
pub fn compute_targets(target: &DuelingNet, batch: &[Experience], gamma: f64, grid: &RoadNetwork) -> Vec<f64> {
    batch
        .iter()
        .map(|e| {
            if e.arrived || gamma == 0.0 {
                e.r
            } else {
                let q = target.forward(&crate::env::encode_position(grid, e.s_next));
                e.r + gamma * masked_max(&q, &grid.valid_actions(e.s_next))
            }
        })
        .collect()
}

/// Online network, target network and optimizer state of one training run.
#[derive(Debug, Clone)]
pub struct Learner {
    pub online: DuelingNet,
    pub target: DuelingNet,
    pub optimizer: RmsProp,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(cfg: &AgentConfig, rng: &mut R) -> Self {
        let online = DuelingNet::new(cfg.dims(), rng);
        let optimizer = cfg.optimizer(online.params().len());
        Self { target: online.clone(), online, optimizer }
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

/// One gradient step on a replayed batch; returns the batch loss.
pub fn train_step<R: Rng + ?Sized>(
    learner: &mut Learner,
    buffer: &mut ReplayBuffer,
    cfg: &AgentConfig,
    grid: &RoadNetwork,
    progress: f64,
    rng: &mut R,
) -> Result<f64> {
    let batch: Vec<Sampled> = buffer.sample(cfg.batch, progress, rng)?;
    let experiences: Vec<Experience> = batch.iter().map(|s| s.experience).collect();
    let targets = compute_targets(&learner.target, &experiences, cfg.gamma, grid);
    let samples: Vec<TrainSample> = batch
        .iter()
        .zip(&targets)
        .map(|(s, &y)| TrainSample {
            input: crate::env::encode_position(grid, s.experience.s),
            action: s.experience.a.index(),
            target: y,
            weight: s.weight,
        })
        .collect();
    let (grads, loss, td) = learner.online.backward(&samples)?;
    learner.optimizer.update(&mut learner.online, &grads)?;
    let indices: Vec<usize> = batch.iter().map(|s| s.index).collect();
    buffer.update_priorities(&indices, &td)?;
    Ok(loss)
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub reward: f64,
    pub seconds: f64,
    pub steps: usize,
    pub reached: bool,
}

/// Greedy evaluation taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// 1-based index of the evaluation checkpoint.
    pub checkpoint: usize,
    /// Number of training episodes completed.
    pub episode: usize,
    pub mean_seconds: Option<f64>,
    pub mean_reward: f64,
    pub failure_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub episodes: Vec<EpisodeMetrics>,
    pub evaluations: Vec<EvalPoint>,
    pub total_steps: usize,
}

impl TrainOutcome {
    pub fn net(&self) -> &DuelingNet {
        &self.learner.online
    }
}

/// Trains a dueling DQN on `scenario`. Fully determined by `(scenario, cfg, seed)`.
pub fn train(scenario: &Scenario, cfg: &AgentConfig, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let grid = scenario.network();
    let mut init_rng = seed::stream(seed, "init", 0);
    let mut act_rng = seed::stream(seed, "act", 0);
    let mut replay_rng = seed::stream(seed, "replay", 0);
    let mut learner = Learner::new(cfg, &mut init_rng);
    let mut buffer = ReplayBuffer::new(cfg.buffer_capacity, cfg.replay);
    let mut episodes = Vec::with_capacity(cfg.episodes);
    let mut evaluations = Vec::new();
    let mut total_steps = 0usize;
    let planned_steps = (cfg.episodes * scenario.t_max()).max(1) as f64;

    for epi in 0..cfg.episodes {
        let mut env = scenario.reset(seed::derive_seed(seed, "episode", epi as u64));
        let epsilon = cfg.epsilon_at(epi);
        while !env.is_done() {
            let s = env.position();
            let a = select_action(&learner.online, env.observation(), &env.valid_actions(), epsilon, &mut act_rng)?;
            let out = env.step(a)?;
            buffer.push(Experience { s, a, r: out.reward, s_next: out.next, done: out.done, arrived: out.arrived });
            total_steps += 1;
            if buffer.len() >= cfg.batch {
                let progress = total_steps as f64 / planned_steps;
                train_step(&mut learner, &mut buffer, cfg, grid, progress, &mut replay_rng)?;
            }
            if total_steps.is_multiple_of(cfg.target_sync) {
                learner.sync_target();
            }
        }
        episodes.push(EpisodeMetrics {
            episode: epi,
            reward: env.cumulative_reward(),
            seconds: env.elapsed_seconds(),
            steps: env.slot(),
            reached: env.arrived(),
        });
        if cfg.eval_every > 0 && (epi + 1) % cfg.eval_every == 0 {
            let k = evaluations.len() + 1;
            let ev = evaluate(
                &mut GreedyNet::new(&learner.online),
                scenario,
                cfg.eval_runs,
                seed::derive_seed(seed, "checkpoint-eval", k as u64),
            )?;
            evaluations.push(EvalPoint {
                checkpoint: k,
                episode: epi + 1,
                mean_seconds: ev.mean_seconds,
                mean_reward: ev.mean_reward,
                failure_rate: ev.failure_rate,
            });
        }
    }
    Ok(TrainOutcome { learner, episodes, evaluations, total_steps })
}

/// Greedy (epsilon = 0) policy over a Q-network.
#[derive(Debug, Clone)]
pub struct GreedyNet<'n> {
    net: &'n DuelingNet,
}

impl<'n> GreedyNet<'n> {
    pub fn new(net: &'n DuelingNet) -> Self {
        Self { net }
    }
}

impl Policy for GreedyNet<'_> {
    fn act(&mut self, env: &Env<'_>) -> Result<Action> {
        masked_argmax(&self.net.forward(&env.observation()), &env.valid_actions()).ok_or(DarpError::NoValidActions)
    }
}

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub noise_seed: u64,
    /// Realised travel time; partial when the run failed.
    pub seconds: f64,
    pub reward: f64,
    pub steps: usize,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub runs: Vec<RunRecord>,
    /// Mean travel time over runs that reached the destination.
    pub mean_seconds: Option<f64>,
    pub mean_reward: f64,
    pub failure_rate: f64,
}

impl Evaluation {
    pub fn from_runs(runs: Vec<RunRecord>) -> Self {
        let ok: Vec<f64> = runs.iter().filter(|r| r.reached).map(|r| r.seconds).collect();
        let mean_seconds = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        let n = runs.len().max(1) as f64;
        let failure_rate = runs.iter().filter(|r| !r.reached).count() as f64 / n;
        let mean_reward = runs.iter().map(|r| r.reward).sum::<f64>() / n;
        Self { runs, mean_seconds, mean_reward, failure_rate }
    }
}

/// Runs `n_runs` episodes of `policy` on freshly seeded environments.
pub fn evaluate<P: Policy + ?Sized>(policy: &mut P, scenario: &Scenario, n_runs: usize, seed: u64) -> Result<Evaluation> {
    let mut runs = Vec::with_capacity(n_runs);
    for k in 0..n_runs {
        let noise_seed = seed::derive_seed(seed, "run", k as u64);
        let exec = execute(policy, scenario.reset(noise_seed))?;
        runs.push(RunRecord {
            noise_seed,
            seconds: exec.seconds,
            reward: exec.reward,
            steps: exec.steps,
            reached: exec.reached,
        });
    }
    Ok(Evaluation::from_runs(runs))
}

/// Largest state space the tabular learner accepts.
pub const TABULAR_STATE_LIMIT: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularConfig {
    pub alpha_lr: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub episodes: usize,
}

impl Default for TabularConfig {
    fn default() -> Self {
        Self { alpha_lr: 0.1, gamma: 0.95, epsilon: 0.1, episodes: 2000 }
    }
}

impl TabularConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_lr >= 0.0 && self.alpha_lr <= 1.0) {
            return Err(invalid("tabular.alpha_lr", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(invalid("tabular.gamma", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("tabular.epsilon", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Q-table indexed by node, one entry per action.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularQ {
    nodes_x: usize,
    q: Vec<[f64; Action::COUNT]>,
}

impl TabularQ {
    pub fn new(grid: &RoadNetwork) -> Result<Self> {
        let n = grid.node_count();
        if n > TABULAR_STATE_LIMIT {
            return Err(DarpError::TooManyStates(n));
        }
        Ok(Self { nodes_x: grid.nodes_x(), q: vec![[0.0; Action::COUNT]; n] })
    }

    fn slot(&self, s: GridCoord) -> usize {
        s.y * self.nodes_x + s.x
    }

    pub fn values(&self, s: GridCoord) -> &[f64; Action::COUNT] {
        &self.q[self.slot(s)]
    }

    pub fn get(&self, s: GridCoord, a: Action) -> f64 {
        self.q[self.slot(s)][a.index()]
    }

    /// `Q(s,a) += alpha [r + gamma max_{a'} Q(s',a') - Q(s,a)]`, without the
    /// bootstrap term when the transition reached the destination.
    pub fn update(&mut self, e: &Experience, valid_next: &[Action], alpha: f64, gamma: f64) {
        let next = if e.arrived { 0.0 } else { masked_max(&self.q[self.slot(e.s_next)], valid_next) };
        let k = self.slot(e.s);
        let q = &mut self.q[k][e.a.index()];
        *q += alpha * (e.r + gamma * next - *q);
    }

    pub fn greedy(&self, s: GridCoord, valid: &[Action]) -> Option<Action> {
        masked_argmax(&self.q[self.slot(s)], valid)
    }
}

/// Greedy policy over a Q-table.
#[derive(Debug, Clone)]
pub struct GreedyTable<'t> {
    table: &'t TabularQ,
}

impl<'t> GreedyTable<'t> {
    pub fn new(table: &'t TabularQ) -> Self {
        Self { table }
    }
}

impl Policy for GreedyTable<'_> {
    fn act(&mut self, env: &Env<'_>) -> Result<Action> {
        self.table.greedy(env.position(), &env.valid_actions()).ok_or(DarpError::NoValidActions)
    }
}

/// Tabular Q-learning with the same masking, exploration and episode seeding
/// as [`train`].
pub fn tabular_q_train(scenario: &Scenario, cfg: &TabularConfig, seed: u64) -> Result<(TabularQ, Vec<EpisodeMetrics>)> {
    cfg.validate()?;
    let grid = scenario.network();
    let mut table = TabularQ::new(grid)?;
    let mut act_rng = seed::stream(seed, "act", 0);
    let mut metrics = Vec::with_capacity(cfg.episodes);
    for epi in 0..cfg.episodes {
        let mut env = scenario.reset(seed::derive_seed(seed, "episode", epi as u64));
        while !env.is_done() {
            let s = env.position();
            let valid = env.valid_actions();
            let a = if act_rng.random::<f64>() < cfg.epsilon {
                *valid.choose(&mut act_rng as &mut dyn RngCore).expect("non-empty")
            } else {
                table.greedy(s, &valid).expect("non-empty")
            };
            let out = env.step(a)?;
            let e = Experience { s, a, r: out.reward, s_next: out.next, done: out.done, arrived: out.arrived };
            table.update(&e, &grid.valid_actions(out.next), cfg.alpha_lr, cfg.gamma);
        }
        metrics.push(EpisodeMetrics {
            episode: epi,
            reward: env.cumulative_reward(),
            seconds: env.elapsed_seconds(),
            steps: env.slot(),
            reached: env.arrived(),
        });
    }
    Ok((table, metrics))
}
