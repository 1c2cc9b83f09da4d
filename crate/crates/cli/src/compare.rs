//! Head-to-head evaluation of planners on shared flow traces.

use std::fmt;
use std::str::FromStr;

use darp_core::agent::{evaluate, tabular_q_train, train, Evaluation, GreedyNet, GreedyTable, RunRecord};
use darp_core::baselines::{a_star, execute, Execution, time_expanded_optimal, RandomPolicy, RoutePolicy};
use darp_core::env::Scenario;
use darp_core::neural::DuelingNet;
use darp_core::{seed, DarpError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::document::ScenarioDocument;

pub const RESULTS_SCHEMA_VERSION: u32 = 1;

/// JSON Schema that every results document satisfies.
pub const RESULTS_SCHEMA: &str = include_str!("../schema/results.schema.json");

/// Reference savings of the learned planner on the congested benchmark.
pub const REFERENCE_SAVING_VS_SHORTEST: f64 = 0.521;
pub const REFERENCE_SAVING_VS_RANDOM: f64 = 0.653;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Darp,
    Shortest,
    Random,
    Oracle,
    Tabular,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Darp, Method::Shortest, Method::Random, Method::Oracle, Method::Tabular];

    pub fn name(self) -> &'static str {
        match self {
            Method::Darp => "darp",
            Method::Shortest => "shortest",
            Method::Random => "random",
            Method::Oracle => "oracle",
            Method::Tabular => "tabular",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected darp, shortest, random, oracle or tabular)"))
    }
}

/// Where the learned policy comes from.
#[derive(Debug, Clone)]
pub enum DarpSource {
    Checkpoint(DuelingNet),
    /// Train per comparison seed with the document's agent settings.
    Train,
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub methods: Vec<Method>,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub darp: Option<DarpSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub seed: u64,
    pub run: usize,
    pub noise_seed: u64,
    pub seconds: f64,
    pub steps: usize,
    pub reached: bool,
    pub reward: f64,
    /// Visited node indices, for fixed routes only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Mean over runs that reached the destination.
    pub mean_seconds: Option<f64>,
    pub failure_rate: f64,
    pub runs: Vec<MethodRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Saving {
    pub baseline: Method,
    /// `(t_base - t_darp) / t_base` on mean travel times.
    pub saving: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_saving: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seed: u64,
    pub run: usize,
    pub noise_seed: u64,
    /// SHA-256 of the flow matrices every method saw in this run.
    pub digest: String,
}

/// One point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub seed: u64,
    pub checkpoint: usize,
    pub episode: usize,
    pub mean_seconds: Option<f64>,
    pub failure_rate: f64,
    pub mean_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub schema_version: u32,
    pub tool_version: String,
    pub scenario: ScenarioDocument,
    pub congested_nodes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub runs_per_seed: usize,
    pub methods: Vec<MethodResult>,
    pub savings: Vec<Saving>,
    pub traces: Vec<TraceRecord>,
    pub curves: Vec<CurvePoint>,
}

impl ResultsDocument {
    pub fn method(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }

    pub fn mean(&self, m: Method) -> Option<f64> {
        self.method(m).and_then(|r| r.mean_seconds)
    }

    pub fn saving_vs(&self, baseline: Method) -> Option<f64> {
        self.savings.iter().find(|s| s.baseline == baseline).and_then(|s| s.saving)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("results serialise");
        s.push('\n');
        s
    }
}

struct SeedOutcome {
    runs: Vec<(Method, Vec<MethodRun>)>,
    traces: Vec<TraceRecord>,
    curve: Vec<CurvePoint>,
}

fn records(seed: u64, ev: Evaluation) -> Vec<MethodRun> {
    ev.runs
        .into_iter()
        .enumerate()
        .map(|(run, r): (usize, RunRecord)| MethodRun {
            seed,
            run,
            noise_seed: r.noise_seed,
            seconds: r.seconds,
            steps: r.steps,
            reached: r.reached,
            reward: r.reward,
            route: None,
        })
        .collect()
}

fn noise_seeds(seed: u64, runs: usize) -> Vec<u64> {
    (0..runs).map(|k| seed::derive_seed(seed, "run", k as u64)).collect()
}

fn run_seed(sc: &Scenario, doc: &ScenarioDocument, opts: &CompareOptions, s: u64) -> Result<SeedOutcome, DarpError> {
    let noise = noise_seeds(s, opts.runs);
    let traces = noise
        .iter()
        .enumerate()
        .map(|(run, &n)| TraceRecord { seed: s, run, noise_seed: n, digest: sc.realize_trace(n).digest() })
        .collect();
    let mut runs = Vec::new();
    let mut curve = Vec::new();
    for &m in &opts.methods {
        let rec = match m {
            Method::Darp => {
                let trained;
                let net = match &opts.darp {
                    Some(DarpSource::Checkpoint(net)) => net,
                    Some(DarpSource::Train) => {
                        trained = train(sc, &doc.agent, s)?;
                        curve = trained
                            .evaluations
                            .iter()
                            .map(|e| CurvePoint {
                                seed: s,
                                checkpoint: e.checkpoint,
                                episode: e.episode,
                                mean_seconds: e.mean_seconds,
                                failure_rate: e.failure_rate,
                                mean_reward: e.mean_reward,
                            })
                            .collect();
                        trained.net()
                    }
                    None => {
                        return Err(DarpError::InvalidConfig {
                            field: "checkpoint".into(),
                            message: "the darp method needs a checkpoint (or training enabled)".into(),
                        })
                    }
                };
                records(s, evaluate(&mut GreedyNet::new(net), sc, opts.runs, s)?)
            }
            Method::Shortest => {
                let route = a_star(sc.network(), sc.origin(), sc.destination())?;
                let mut r = records(s, evaluate(&mut RoutePolicy::new(&route), sc, opts.runs, s)?);
                r.iter_mut().for_each(|x| x.route = Some(route.nodes.clone()));
                r
            }
            Method::Random => {
                let mut policy = RandomPolicy::new(seed::derive_seed(s, "random", 0));
                records(s, evaluate(&mut policy, sc, opts.runs, s)?)
            }
            Method::Oracle => {
                let mut out = Vec::with_capacity(opts.runs);
                for (run, &n) in noise.iter().enumerate() {
                    let oracle = time_expanded_optimal(sc.network(), &sc.realize_trace(n), sc.origin(), sc.destination())?;
                    let exec = if oracle.feasible {
                        execute(&mut RoutePolicy::new(&oracle.route), sc.reset(n))?
                    } else {
                        // no route fits the horizon
                        Execution { seconds: 0.0, reward: 0.0, steps: 0, reached: false, path: vec![] }
                    };
                    out.push(MethodRun {
                        seed: s,
                        run,
                        noise_seed: n,
                        seconds: exec.seconds,
                        steps: exec.steps,
                        reached: exec.reached,
                        reward: exec.reward,
                        route: Some(exec.path),
                    });
                }
                out
            }
            Method::Tabular => {
                let (table, _) = tabular_q_train(sc, &doc.tabular, s)?;
                records(s, evaluate(&mut GreedyTable::new(&table), sc, opts.runs, s)?)
            }
        };
        runs.push((m, rec));
    }
    Ok(SeedOutcome { runs, traces, curve })
}

fn summarise(method: Method, runs: Vec<MethodRun>) -> MethodResult {
    let ok: Vec<f64> = runs.iter().filter(|r| r.reached).map(|r| r.seconds).collect();
    let mean_seconds = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
    let failure_rate = runs.iter().filter(|r| !r.reached).count() as f64 / runs.len().max(1) as f64;
    MethodResult { method, mean_seconds, failure_rate, runs }
}

/// Evaluates every requested method on identical per-seed traces. Seeds run
/// in parallel; results are merged in seed order.
pub fn run_compare(doc: &ScenarioDocument, opts: &CompareOptions) -> Result<ResultsDocument, DarpError> {
    if opts.runs == 0 {
        return Err(DarpError::InvalidConfig { field: "runs".into(), message: "must be at least 1".into() });
    }
    if opts.seeds.is_empty() {
        return Err(DarpError::InvalidConfig { field: "seeds".into(), message: "at least one seed is required".into() });
    }
    let mut methods = opts.methods.clone();
    methods.sort();
    methods.dedup();
    let opts = CompareOptions { methods, ..opts.clone() };
    let sc = doc.scenario()?;
    let outcomes: Vec<SeedOutcome> =
        opts.seeds.par_iter().map(|&s| run_seed(&sc, doc, &opts, s)).collect::<Result<_, _>>()?;

    let mut per_method: Vec<(Method, Vec<MethodRun>)> = opts.methods.iter().map(|&m| (m, Vec::new())).collect();
    let mut traces = Vec::new();
    let mut curves = Vec::new();
    for o in outcomes {
        for (m, runs) in o.runs {
            per_method.iter_mut().find(|(k, _)| *k == m).expect("requested method").1.extend(runs);
        }
        traces.extend(o.traces);
        curves.extend(o.curve);
    }
    let methods: Vec<MethodResult> = per_method.into_iter().map(|(m, r)| summarise(m, r)).collect();

    let congested = !sc.congested_nodes().is_empty();
    let darp_mean = methods.iter().find(|r| r.method == Method::Darp).and_then(|r| r.mean_seconds);
    let savings = if methods.iter().any(|r| r.method == Method::Darp) {
        methods
            .iter()
            .filter(|r| r.method != Method::Darp)
            .map(|r| Saving {
                baseline: r.method,
                saving: match (r.mean_seconds, darp_mean) {
                    (Some(base), Some(d)) => Some((base - d) / base),
                    _ => None,
                },
                reference_saving: match (congested, r.method) {
                    (true, Method::Shortest) => Some(REFERENCE_SAVING_VS_SHORTEST),
                    (true, Method::Random) => Some(REFERENCE_SAVING_VS_RANDOM),
                    _ => None,
                },
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(ResultsDocument {
        schema_version: RESULTS_SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario: doc.clone(),
        congested_nodes: sc.congested_nodes().to_vec(),
        seeds: opts.seeds.clone(),
        runs_per_seed: opts.runs,
        methods,
        savings,
        traces,
        curves,
    })
}
