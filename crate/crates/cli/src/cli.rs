//! Argument parsing and command handlers for the `darp` binary.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use darp_core::agent::{evaluate, train, GreedyNet};
use darp_core::flow::{fit_ar, parse_series_csv, Congestion};
use darp_core::grid::GridCoord;
use darp_core::neural::Checkpoint;
use darp_core::replay::ReplayMode;
use darp_core::DarpError;
use serde_json::Value;

use crate::compare::{run_compare, CompareOptions, DarpSource, Method, ResultsDocument};
use crate::document::ScenarioDocument;
use crate::report;

pub const OUT_DIR_ENV: &str = "DARP_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "darp", version, about = "Dynamic route planning under pedestrian congestion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a validated scenario document.
    GenScenario(Box<GenScenario>),
    /// Fit an AR(1) flow model to a CSV series.
    FitFlow(FitFlow),
    /// Train the dueling DQN planner.
    Train(TrainCmd),
    /// Evaluate a trained checkpoint.
    Eval(EvalCmd),
    /// Compare planners on identical flow traces.
    Compare(CompareCmd),
    /// Regenerate CSV and SVG reports from a results document.
    Report(ReportCmd),
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Output directory.
    #[arg(long, env = OUT_DIR_ENV, default_value = "darp-out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Congestion-free map.
    Unblocked,
    /// Two congested nodes placed on the distance-shortest route.
    Congested,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplayChoice {
    Uniform,
    Prioritized,
}

#[derive(Debug, Args)]
pub struct GenScenario {
    #[command(flatten)]
    pub out: OutDir,
    /// Output file (defaults to scenario.json in the output directory).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Edge length range in meters, as `MIN,MAX`.
    #[arg(long, value_parser = parse_pair)]
    pub distance_range: Option<[f64; 2]>,
    /// Base pedestrian flow range, as `MIN,MAX`.
    #[arg(long, value_parser = parse_pair)]
    pub flow_range: Option<[f64; 2]>,
    /// Congest this many random nodes.
    #[arg(long, group = "congestion")]
    pub congested_nodes: Option<usize>,
    /// Congest this fraction of nodes.
    #[arg(long, group = "congestion")]
    pub congested_fraction: Option<f64>,
    /// Congest this many nodes along the distance-shortest route.
    #[arg(long, group = "congestion")]
    pub congested_route: Option<usize>,
    /// Congest these node indices, comma separated.
    #[arg(long, group = "congestion", value_delimiter = ',')]
    pub congested_list: Option<Vec<usize>>,
    #[arg(long)]
    pub congested_mean: Option<f64>,
    #[arg(long)]
    pub congested_spread: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub diff_order: Option<usize>,
    #[arg(long)]
    pub noise_var: Option<f64>,
    /// Origin as `X,Y`.
    #[arg(long, value_parser = parse_coord)]
    pub origin: Option<GridCoord>,
    /// Destination as `X,Y`.
    #[arg(long, value_parser = parse_coord)]
    pub destination: Option<GridCoord>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub w_r: Option<f64>,
    #[arg(long)]
    pub goal_bonus: Option<f64>,
    #[arg(long)]
    pub time_unit: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub buffer_capacity: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub target_sync: Option<usize>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub replay: Option<ReplayChoice>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub eval_runs: Option<usize>,
    #[arg(long)]
    pub tabular_episodes: Option<usize>,
    /// Set any field by dotted path, e.g. `agent.rms_decay=0.9`. Values are JSON.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitFlow {
    /// Series CSV; the first column is read, an optional header is skipped.
    #[arg(long)]
    pub csv: PathBuf,
    /// Differencing order.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Scenario document to update with the fitted model.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Training seed (defaults to the scenario seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct EvalCmd {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct CompareCmd {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "darp,shortest,random,oracle")]
    pub methods: Vec<Method>,
    /// Evaluation runs per seed.
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Comparison seeds (defaults to the scenario seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Trained network for the darp method.
    #[arg(long, conflicts_with = "train")]
    pub checkpoint: Option<PathBuf>,
    /// Train a fresh network per seed instead of loading a checkpoint.
    #[arg(long)]
    pub train: bool,
    #[command(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Args)]
pub struct ReportCmd {
    #[arg(long)]
    pub results: PathBuf,
    #[command(flatten)]
    pub out: OutDir,
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [a, b] = parts[..] else { return Err(format!("expected MIN,MAX, got `{s}`")) };
    let a: f64 = a.trim().parse().map_err(|_| format!("`{a}` is not a number"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("`{b}` is not a number"))?;
    Ok([a, b])
}

fn parse_coord(s: &str) -> Result<GridCoord, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [x, y] = parts[..] else { return Err(format!("expected X,Y, got `{s}`")) };
    let x = x.trim().parse().map_err(|_| format!("`{x}` is not a column index"))?;
    let y = y.trim().parse().map_err(|_| format!("`{y}` is not a row index"))?;
    Ok(GridCoord::new(x, y))
}

/// Process outcome: 0 ok, 1 usage or invalid input, 2 runtime failure.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let usage = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<DarpError>(),
                Some(DarpError::InvalidConfig { .. } | DarpError::InvalidGrid(_))
            )
        });
        if usage {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<DarpError> for Failure {
    fn from(e: DarpError) -> Self {
        anyhow::Error::from(e).into()
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            f.code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenScenario(a) => gen_scenario(*a),
        Command::FitFlow(a) => fit_flow(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Report(a) => report_cmd(a),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Runtime)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display())).map_err(Failure::Runtime)
}

fn load_scenario(path: &Path) -> Result<ScenarioDocument, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Runtime)?;
    let doc = ScenarioDocument::from_json(&text)
        .map_err(|e| Failure::Usage(anyhow!(e).context(format!("parsing {}", path.display()))))?;
    doc.validate()?;
    Ok(doc)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(Failure::Runtime)?;
    Checkpoint::from_bytes(&bytes).with_context(|| format!("loading {}", path.display())).map_err(Failure::Runtime)
}

/// Applies a `path=value` override; the value is read as JSON, falling back to a string.
pub fn apply_override(doc: &ScenarioDocument, assignment: &str) -> Result<ScenarioDocument, DarpError> {
    let invalid = |field: &str, message: String| DarpError::InvalidConfig { field: field.into(), message };
    let (path, raw) = assignment.split_once('=').ok_or_else(|| invalid(assignment, "expected PATH=VALUE".into()))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut tree = serde_json::to_value(doc)?;
    let mut slot = &mut tree;
    for key in path.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| invalid(path, "no such field".into()))?;
    }
    *slot = value;
    serde_json::from_value(tree).map_err(|e| invalid(path, e.to_string()))
}

fn gen_scenario(a: GenScenario) -> Result<(), Failure> {
    let mut doc = ScenarioDocument::default();
    match a.preset {
        Some(Preset::Congested) => doc.flows.congestion = Congestion::Route(2),
        Some(Preset::Unblocked) | None => {}
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+;)*) => {
            $(if let Some(v) = a.$flag.clone() { doc.$($field).+ = v; })*
        };
    }
    set! {
        seed => seed;
        width => grid.width_cells;
        height => grid.height_cells;
        distance_range => grid.distance_range;
        flow_range => flows.base_range;
        congested_mean => flows.congested_mean;
        congested_spread => flows.congested_spread;
        diff_order => flows.arima.diff_order;
        noise_var => flows.arima.noise_var;
        origin => route.origin;
        destination => route.destination;
        t_max => route.t_max;
        w_r => reward.w_r;
        goal_bonus => reward.goal_bonus;
        time_unit => reward.time_unit;
        gamma => agent.gamma;
        epsilon => agent.epsilon;
        batch => agent.batch;
        buffer_capacity => agent.buffer_capacity;
        learning_rate => agent.learning_rate;
        target_sync => agent.target_sync;
        episodes => agent.episodes;
        hidden => agent.hidden;
        eval_every => agent.eval_every;
        eval_runs => agent.eval_runs;
        tabular_episodes => tabular.episodes;
    }
    if (a.width.is_some() || a.height.is_some()) && a.destination.is_none() {
        doc.route.destination = GridCoord::new(doc.grid.width_cells, doc.grid.height_cells);
    }
    if let Some(l) = a.lambda {
        doc.flows.arima.lambda = vec![l];
    }
    if let Some(r) = a.replay {
        doc.agent.replay = match r {
            ReplayChoice::Uniform => ReplayMode::Uniform,
            ReplayChoice::Prioritized => ReplayMode::default(),
        };
    }
    if let Some(k) = a.congested_nodes {
        doc.flows.congestion = Congestion::Count(k);
    }
    if let Some(f) = a.congested_fraction {
        doc.flows.congestion = Congestion::Fraction(f);
    }
    if let Some(k) = a.congested_route {
        doc.flows.congestion = Congestion::Route(k);
    }
    if let Some(list) = a.congested_list {
        doc.flows.congestion = Congestion::Nodes(list);
    }
    for assignment in &a.set {
        doc = apply_override(&doc, assignment)?;
    }
    doc.validate()?;
    doc.resolve_congestion()?;
    doc.validate()?;
    let path = a.output.unwrap_or_else(|| a.out.out_dir.join("scenario.json"));
    write_file(&path, doc.to_json())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn fit_flow(a: FitFlow) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.csv).with_context(|| format!("reading {}", a.csv.display())).map_err(Failure::Runtime)?;
    let series = parse_series_csv(&text).with_context(|| format!("parsing {}", a.csv.display())).map_err(Failure::Runtime)?;
    let fit = fit_ar(&series, a.d).with_context(|| format!("fitting {}", a.csv.display())).map_err(Failure::Runtime)?;
    let p = &fit.params;
    println!("lambda_1 = {} (standard error {})", p.lambda[0], fit.lambda_std_error);
    println!("c = {}", p.mean_drift);
    println!("noise variance = {}", p.noise_var);
    println!("observations = {}, stationary = {}", fit.observations, fit.stationary);
    if let Some(path) = a.scenario {
        let mut doc = load_scenario(&path)?;
        doc.flows.arima = fit.params.clone();
        doc.validate()?;
        write_file(&path, doc.to_json())?;
        println!("updated {}", path.display());
    }
    Ok(())
}

fn train_cmd(a: TrainCmd) -> Result<(), Failure> {
    let doc = load_scenario(&a.scenario)?;
    let seed = a.seed.unwrap_or(doc.seed);
    let sc = doc.scenario()?;
    let out = train(&sc, &doc.agent, seed).map_err(|e| Failure::Runtime(e.into()))?;
    let dir = &a.out.out_dir;
    let ck = Checkpoint { net: out.learner.online.clone(), optimizer: Some(out.learner.optimizer.clone()) };
    write_file(&dir.join("checkpoint.bin"), ck.to_bytes())?;
    write_file(&dir.join("metrics.csv"), report::metrics_csv(&out.episodes))?;
    write_file(&dir.join("evals.csv"), report::evals_csv(&out.evaluations))?;

    let n = out.episodes.len();
    let tail = &out.episodes[n.saturating_sub(50)..];
    let reached = tail.iter().filter(|e| e.reached).count();
    println!("trained {n} episodes, {} environment steps", out.total_steps);
    println!("last {} episodes: {reached} reached the destination", tail.len());
    if let Some(last) = out.evaluations.last() {
        match last.mean_seconds {
            Some(s) => println!("final greedy evaluation: {s:.1} s mean, failure rate {}", last.failure_rate),
            None => println!("final greedy evaluation: no run reached the destination"),
        }
    }
    println!("wrote checkpoint.bin, metrics.csv, evals.csv to {}", dir.display());
    Ok(())
}

fn eval_cmd(a: EvalCmd) -> Result<(), Failure> {
    let doc = load_scenario(&a.scenario)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    if ck.net.dims() != doc.agent.dims() {
        return Err(Failure::Usage(anyhow!("checkpoint dimensions do not match the scenario's agent settings")));
    }
    let sc = doc.scenario()?;
    let ev = evaluate(&mut GreedyNet::new(&ck.net), &sc, a.runs, a.seed.unwrap_or(doc.seed))?;
    let path = a.out.out_dir.join("eval.json");
    let mut text = serde_json::to_string_pretty(&ev).map_err(|e| Failure::Runtime(e.into()))?;
    text.push('\n');
    write_file(&path, text)?;
    match ev.mean_seconds {
        Some(s) => println!("mean travel time {s:.1} s over {} runs, failure rate {}", a.runs, ev.failure_rate),
        None => println!("no run reached the destination ({} runs)", a.runs),
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn compare_cmd(a: CompareCmd) -> Result<(), Failure> {
    let doc = load_scenario(&a.scenario)?;
    let darp = match (&a.checkpoint, a.train) {
        (Some(p), _) => {
            let ck = load_checkpoint(p)?;
            if ck.net.dims() != doc.agent.dims() {
                return Err(Failure::Usage(anyhow!("checkpoint dimensions do not match the scenario's agent settings")));
            }
            Some(DarpSource::Checkpoint(ck.net))
        }
        (None, true) => Some(DarpSource::Train),
        (None, false) if a.methods.contains(&Method::Darp) => {
            return Err(Failure::Usage(anyhow!("the darp method needs --checkpoint PATH or --train")));
        }
        (None, false) => None,
    };
    let seeds = if a.seeds.is_empty() { vec![doc.seed] } else { a.seeds.clone() };
    let opts = CompareOptions { methods: a.methods.clone(), runs: a.runs, seeds, darp };
    let res = run_compare(&doc, &opts)?;
    write_results(&res, &a.out.out_dir)?;

    let mut stdout = std::io::stdout().lock();
    for m in &res.methods {
        let mean = m.mean_seconds.map(|s| format!("{s:.1} s")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(stdout, "{:<9} mean {mean:>12}  failure rate {:.3}", m.method.name(), m.failure_rate);
    }
    for s in &res.savings {
        let value = s.saving.map(|v| format!("{:.1}%", 100.0 * v)).unwrap_or_else(|| "n/a".into());
        let reference = s.reference_saving.map(|v| format!(" (reference {:.1}%)", 100.0 * v)).unwrap_or_default();
        let _ = writeln!(stdout, "saving vs {:<9} {value}{reference}", s.baseline.name());
    }
    let _ = writeln!(stdout, "wrote results to {}", a.out.out_dir.display());
    Ok(())
}

fn write_results(res: &ResultsDocument, dir: &Path) -> Result<(), Failure> {
    write_file(&dir.join("results.json"), res.to_json())?;
    write_file(&dir.join("runs.csv"), report::runs_csv(res))?;
    if !res.curves.is_empty() {
        write_file(&dir.join("curves.csv"), report::curves_csv(res))?;
    }
    if let Some(svg) = report::curves_svg(res) {
        write_file(&dir.join("curves.svg"), svg)?;
    }
    Ok(())
}

fn report_cmd(a: ReportCmd) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.results).with_context(|| format!("reading {}", a.results.display())).map_err(Failure::Runtime)?;
    let res: ResultsDocument = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(anyhow!(e).context(format!("parsing {}", a.results.display()))))?;
    write_results(&res, &a.out.out_dir)?;
    println!("wrote reports to {}", a.out.out_dir.display());
    Ok(())
}
