//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion prints exactly one PASS/FAIL line; the process fails if any does.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use darp_cli::compare::{run_compare, CompareOptions, DarpSource, Method};
use darp_cli::document::ScenarioDocument;
use darp_core::agent::{tabular_q_train, train, AgentConfig, GreedyNet, GreedyTable, TabularConfig};
use darp_core::baselines::{dijkstra_by, execute, time_expanded_optimal};
use darp_core::env::{EnvConfig, Scenario};
use darp_core::flow::{fit_ar, ArimaParams, Congestion, FlowConfig};
use darp_core::grid::{edge_travel_time, GridCoord, RoadNetwork, FREE_SPEED};
use darp_core::neural::{DuelingNet, NetDims, TrainSample};
use darp_core::replay::{PrioritizedBuffer, PriorityConfig, SumTree};
use darp_core::env::Experience;
use darp_core::grid::Action;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use tempfile::TempDir;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn within_budget(v: Verdict, took: Duration, budget: Duration) -> Verdict {
    if took > budget {
        verdict(false, format!("{}; over the {}s budget", v.detail, budget.as_secs()))
    } else {
        v
    }
}

fn c1_travel_time_formula() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let d: f64 = rng.random_range(1.0..2000.0);
        let p: f64 = rng.random_range(1e-3..1e4);
        let rho = p / d;
        let speed = FREE_SPEED * rho.powf(-0.8);
        let expected = d / speed;
        let got = edge_travel_time(d, p, FREE_SPEED).unwrap();
        worst = worst.max((got - expected).abs() / expected);
    }
    verdict(worst <= 1e-12, format!("max relative error {worst:.2e} over 10^4 pairs"))
}

fn c2_gradients() -> Verdict {
    const H: f64 = 1e-5;
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, batch) = loop {
            let dims = NetDims { input: 2, hidden1: rng.random_range(2..7), hidden2: rng.random_range(2..7), actions: 4 };
            let mut net = DuelingNet::new(dims, &mut rng);
            for p in net.params_mut() {
                *p += rng.random_range(-0.3..0.3);
            }
            let n = rng.random_range(1..6);
            let batch: Vec<TrainSample> = (0..n)
                .map(|_| TrainSample {
                    input: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
                    action: rng.random_range(0..4),
                    target: rng.random_range(-3.0..3.0),
                    weight: rng.random_range(0.1..2.0),
                })
                .collect();
            // keep every pre-activation clear of the ReLU kink
            let margin = batch
                .iter()
                .flat_map(|s| {
                    let f = net.forward_pass(&s.input);
                    f.z1.into_iter().chain(f.z2)
                })
                .fold(f64::INFINITY, |m, z| m.min(z.abs()));
            if margin > 1e3 * H {
                break (net, batch);
            }
        };
        let (grads, _, _) = net.backward(&batch).unwrap();
        for (k, &g) in grads.0.iter().enumerate() {
            let mut plus = net.clone();
            plus.params_mut()[k] += H;
            let mut minus = net.clone();
            minus.params_mut()[k] -= H;
            let fd = (plus.loss(&batch).unwrap() - minus.loss(&batch).unwrap()) / (2.0 * H);
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1e-6));
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 100 fixtures"))
}

fn c3_dueling_identifiability() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let mut net = DuelingNet::new(NetDims { input: 2, hidden1: 8, hidden2: 8, actions: 4 }, &mut rng);
        let input = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
        let shift = rng.random_range(-1e3..1e3);
        let before = net.forward(&input);
        for b in net.advantage_bias_mut() {
            *b += shift;
        }
        let after = net.forward(&input);
        for (a, b) in before.iter().zip(&after) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(worst <= 1e-9, format!("max |dQ| {worst:.2e} over 10^3 trials"))
}

fn c4_arima_round_trip() -> Verdict {
    let lambda = 0.7;
    let covered = (0..100u64)
        .filter(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
            let noise = Normal::new(0.0, 5.0).unwrap();
            let (mut w, mut level) = (0.0, 500.0);
            let mut series = vec![level];
            for _ in 1..1000 {
                w = lambda * w + noise.sample(&mut rng);
                level += w;
                series.push(level);
            }
            let fit = fit_ar(&series, 1).unwrap();
            (fit.params.lambda[0] - lambda).abs() <= 3.0 * fit.lambda_std_error
        })
        .count();
    verdict(covered >= 95, format!("{covered}/100 seeds within 3 standard errors"))
}

fn c5_sum_tree() -> Verdict {
    let mut buf = PrioritizedBuffer::new(4, PriorityConfig::default());
    for (k, p) in [1.0, 1.0, 1.0, 5.0].into_iter().enumerate() {
        let e = Experience { s: GridCoord::new(k, 0), a: Action::Right, r: 0.0, s_next: GridCoord::new(k + 1, 0), done: false, arrived: false };
        buf.push(e, Some(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 100_000;
    let hits = (0..draws).filter(|_| buf.sample(1, 0.4, &mut rng).unwrap()[0].index == 3).count();
    let freq = hits as f64 / draws as f64;

    let mut tree = SumTree::new(101);
    let mut shadow = vec![0.0; 101];
    for _ in 0..10_000 {
        let leaf = rng.random_range(0..101);
        let p = rng.random_range(0.0..50.0);
        tree.set(leaf, p);
        shadow[leaf] = p;
    }
    let total: f64 = shadow.iter().sum();
    let consistent = tree.is_consistent() && (tree.total() - total).abs() <= 1e-9 * total;
    verdict((freq - 0.625).abs() <= 0.01 && consistent, format!("leaf-4 frequency {freq:.4}; tree consistent after 10^4 writes: {consistent}"))
}

fn c6_oracle_soundness() -> Verdict {
    let results: Vec<(usize, usize, f64)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut doc = ScenarioDocument { seed, ..ScenarioDocument::default() };
            doc.flows.congestion = Congestion::Count(3);
            let opts = CompareOptions { methods: Method::ALL.to_vec(), runs: 2, seeds: vec![seed], darp: Some(DarpSource::Train) };
            let res = run_compare(&doc, &opts).unwrap();
            let oracle = &res.method(Method::Oracle).unwrap().runs;
            let mut checked = 0;
            let mut violations = 0;
            for m in res.methods.iter().filter(|m| m.method != Method::Oracle) {
                for (o, r) in oracle.iter().zip(&m.runs) {
                    assert_eq!(o.noise_seed, r.noise_seed);
                    if r.reached {
                        checked += 1;
                        if !(o.reached && o.seconds <= r.seconds + 1e-9 * r.seconds) {
                            violations += 1;
                        }
                    }
                }
            }

            let mut frozen = doc.clone();
            frozen.flows.arima = ArimaParams::frozen();
            let sc = frozen.scenario().unwrap();
            let net = sc.network();
            let trace = sc.realize_trace(seed);
            let best = time_expanded_optimal(net, &trace, sc.origin(), sc.destination()).unwrap().route.seconds.unwrap();
            let flows = sc.initial_flows();
            let labels =
                dijkstra_by(net, sc.origin(), |i, j, d| edge_travel_time(d, flows.flow(i, j), net.free_speed()).unwrap()).unwrap();
            let reference = labels.dist[sc.destination().0];
            (checked, violations, (best - reference).abs() / reference)
        })
        .collect();
    let checked: usize = results.iter().map(|r| r.0).sum();
    let violations: usize = results.iter().map(|r| r.1).sum();
    let frozen_gap = results.iter().map(|r| r.2).fold(0.0, f64::max);
    verdict(
        violations == 0 && frozen_gap <= 1e-9,
        format!("{violations} bound violations in {checked} completed runs; frozen-flow gap to Dijkstra {frozen_gap:.1e}"),
    )
}

fn small_frozen(seed: u64) -> Scenario {
    let net = Arc::new(RoadNetwork::build_grid(2, 2, [100.0, 1000.0], seed).unwrap());
    let env = EnvConfig::corner_to_corner(&net);
    let flows = FlowConfig { arima: ArimaParams::frozen(), ..FlowConfig::default() };
    Scenario::new(net, &flows, env, seed).unwrap()
}

fn c7_small_instance_optimality() -> Verdict {
    let cfg = AgentConfig { episodes: 1000, eval_every: 0, ..AgentConfig::default() };
    let hits: Vec<(bool, bool)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let sc = small_frozen(seed);
            let oracle =
                time_expanded_optimal(sc.network(), &sc.realize_trace(0), sc.origin(), sc.destination()).unwrap().route.seconds.unwrap();
            let optimal = |run: darp_core::baselines::Execution| run.reached && (run.seconds - oracle).abs() <= 1e-9 * oracle;
            let out = train(&sc, &cfg, seed).unwrap();
            let darp = optimal(execute(&mut GreedyNet::new(out.net()), sc.reset(0)).unwrap());
            let (table, _) = tabular_q_train(&sc, &TabularConfig::default(), seed).unwrap();
            let tab = optimal(execute(&mut GreedyTable::new(&table), sc.reset(0)).unwrap());
            (darp, tab)
        })
        .collect();
    let darp = hits.iter().filter(|h| h.0).count();
    let tab = hits.iter().filter(|h| h.1).count();
    verdict(darp >= 16 && tab == 20, format!("DARP optimal on {darp}/20 maps, tabular on {tab}/20"))
}

fn c8_congested_savings() -> Verdict {
    let mut doc = ScenarioDocument::default();
    doc.flows.congestion = Congestion::Route(2);
    doc.resolve_congestion().unwrap();
    let opts = CompareOptions {
        methods: vec![Method::Darp, Method::Shortest, Method::Random, Method::Oracle],
        runs: 10,
        seeds: vec![doc.seed],
        darp: Some(DarpSource::Train),
    };
    let res = run_compare(&doc, &opts).unwrap();
    let mean = |m| res.mean(m).unwrap_or(f64::INFINITY);
    let (o, d, s, r) = (mean(Method::Oracle), mean(Method::Darp), mean(Method::Shortest), mean(Method::Random));
    let vs_short = res.saving_vs(Method::Shortest).unwrap_or(f64::NEG_INFINITY);
    let vs_random = res.saving_vs(Method::Random).unwrap_or(f64::NEG_INFINITY);
    let ordered = o <= d && d <= s && s <= r;
    verdict(
        vs_short >= 0.30 && vs_random >= 0.50 && ordered,
        format!(
            "saving {:.1}% vs shortest, {:.1}% vs random; means oracle {o:.0} <= darp {d:.0} <= shortest {s:.0} <= random {r:.0}: {ordered}",
            100.0 * vs_short,
            100.0 * vs_random
        ),
    )
}

fn c9_unblocked_parity() -> Verdict {
    let ratios: Vec<(u64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let mut doc = ScenarioDocument { seed, ..ScenarioDocument::default() };
            doc.resolve_congestion().unwrap();
            let opts = CompareOptions { methods: vec![Method::Darp, Method::Shortest], runs: 10, seeds: vec![seed], darp: Some(DarpSource::Train) };
            let res = run_compare(&doc, &opts).unwrap();
            (seed, res.mean(Method::Darp).unwrap_or(f64::INFINITY) / res.mean(Method::Shortest).unwrap())
        })
        .collect();
    let (worst_seed, worst) = ratios.iter().copied().fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let best = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    verdict(
        worst <= 1.10,
        format!("darp/shortest time over 10 scenarios: worst {worst:.3} (seed {worst_seed}), best {best:.3}"),
    )
}

fn c10_determinism() -> Verdict {
    let dir = TempDir::new().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_darp")).args(args).current_dir(dir.path()).env_remove("DARP_OUT_DIR").output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["gen-scenario", "--preset", "congested", "-o", "s.json"]);
    for tag in ["a", "b"] {
        run(&["train", "--scenario", "s.json", "--seed", "7", "--out-dir", &format!("train-{tag}")]);
        run(&["compare", "--scenario", "s.json", "--train", "--methods", "darp,shortest,random,oracle,tabular", "--seeds", "0,1", "--runs", "10", "--out-dir", &format!("cmp-{tag}")]);
    }
    let same = |a: &Path, b: &Path| fs::read(dir.path().join(a)).unwrap() == fs::read(dir.path().join(b)).unwrap();
    let files = [
        ("train", "metrics.csv"),
        ("train", "evals.csv"),
        ("train", "checkpoint.bin"),
        ("cmp", "results.json"),
        ("cmp", "runs.csv"),
        ("cmp", "curves.csv"),
    ];
    let differing: Vec<String> = files
        .iter()
        .filter(|(cmd, f)| !same(&Path::new(&format!("{cmd}-a")).join(f), &Path::new(&format!("{cmd}-b")).join(f)))
        .map(|(cmd, f)| format!("{cmd}/{f}"))
        .collect();
    verdict(differing.is_empty(), if differing.is_empty() { format!("{} output files byte-identical across reruns", files.len()) } else { format!("differ: {}", differing.join(", ")) })
}

fn main() {
    // the harness passes libtest flags through; a filter that excludes us means skip
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    type Check = fn() -> Verdict;
    let criteria: [(&str, Check, u64); 10] = [
        ("travel-time closed form", c1_travel_time_formula, 1),
        ("backprop gradients", c2_gradients, 30),
        ("dueling identifiability", c3_dueling_identifiability, 60),
        ("ARIMA round trip", c4_arima_round_trip, 10),
        ("sum-tree statistics", c5_sum_tree, 60),
        ("oracle soundness", c6_oracle_soundness, 900),
        ("small-instance optimality", c7_small_instance_optimality, 300),
        ("congested-scenario savings", c8_congested_savings, 900),
        ("unblocked-scenario parity", c9_unblocked_parity, 900),
        ("determinism", c10_determinism, 900),
    ];
    let mut failed = 0;
    for (k, (name, check, budget)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let v = within_budget(v, took, Duration::from_secs(budget));
        println!("criterion {:>2} {}: {name}: {} [{:.1}s]", k + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail, took.as_secs_f64());
        failed += usize::from(!v.pass);
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 10 criteria passed");
}
