use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use darp_cli::compare::{Method, ResultsDocument, RESULTS_SCHEMA};
use darp_cli::document::ScenarioDocument;
use darp_cli::report;
use darp_core::flow::{fit_ar, parse_series_csv, Congestion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

fn darp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_darp"))
        .args(args)
        .current_dir(dir)
        .env_remove("DARP_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read_doc(path: &Path) -> ScenarioDocument {
    ScenarioDocument::from_json(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Tiny, fast scenario written through the CLI.
fn tiny_scenario(dir: &Path) -> PathBuf {
    let args = [
        "gen-scenario", "-o", "tiny.json", "--width", "2", "--height", "2", "--episodes", "40",
        "--eval-every", "10", "--eval-runs", "2", "--tabular-episodes", "100", "--congested-nodes", "1",
        "--set", "agent.epsilon_decay_episodes=10",
    ];
    ok(&darp(dir, &args));
    dir.join("tiny.json")
}

/// AR(1) on the first difference, generated independently of the library.
fn ar1_integrated(lambda: f64, var: f64, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, var.sqrt()).unwrap();
    let (mut w, mut level) = (0.0, 1000.0);
    let mut out = vec![level];
    for _ in 1..len {
        w = lambda * w + noise.sample(&mut rng);
        level += w;
        out.push(level);
    }
    out
}

#[test]
fn default_scenario_carries_the_benchmark_defaults() {
    let dir = TempDir::new().unwrap();
    ok(&darp(dir.path(), &["gen-scenario"]));
    let doc = read_doc(&dir.path().join("darp-out/scenario.json"));
    assert_eq!((doc.grid.width_cells, doc.grid.height_cells), (5, 5));
    assert_eq!(doc.flows.base_range, [200.0, 1000.0]);
    assert_eq!(doc.reward.w_r, 1e-3);
    assert_eq!(doc.flows.congestion, Congestion::Nodes(vec![]));
    assert_eq!(doc, {
        let mut d = ScenarioDocument::default();
        d.resolve_congestion().unwrap();
        d
    });
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_darp"))
        .arg("gen-scenario")
        .current_dir(dir.path())
        .env("DARP_OUT_DIR", "elsewhere")
        .output()
        .unwrap();
    ok(&out);
    assert!(dir.path().join("elsewhere/scenario.json").exists());
}

#[test]
fn congested_node_count_is_listed() {
    let dir = TempDir::new().unwrap();
    ok(&darp(dir.path(), &["gen-scenario", "--congested-nodes", "4", "-o", "s.json"]));
    let Congestion::Nodes(nodes) = read_doc(&dir.path().join("s.json")).flows.congestion else {
        panic!("congestion not resolved to a list")
    };
    assert_eq!(nodes.len(), 4);
}

#[test]
fn congested_preset_blocks_the_shortest_route() {
    let dir = TempDir::new().unwrap();
    ok(&darp(dir.path(), &["gen-scenario", "--preset", "congested", "-o", "s.json"]));
    let doc = read_doc(&dir.path().join("s.json"));
    let Congestion::Nodes(nodes) = &doc.flows.congestion else { panic!("unresolved") };
    assert_eq!(nodes.len(), 2);
    let sc = doc.scenario().unwrap();
    let route = darp_core::baselines::a_star(sc.network(), sc.origin(), sc.destination()).unwrap();
    assert!(nodes.iter().all(|n| route.nodes.contains(n)));
}

#[test]
fn invalid_overrides_exit_nonzero_without_writing() {
    let dir = TempDir::new().unwrap();
    for args in [
        &["gen-scenario", "-o", "s.json", "--distance-range", "900,100"][..],
        &["gen-scenario", "-o", "s.json", "--flow-range", "-5,100"],
        &["gen-scenario", "-o", "s.json", "--set", "agent.gamma=3"],
        &["gen-scenario", "-o", "s.json", "--set", "agent.nonsense=1"],
        &["gen-scenario", "-o", "s.json", "--congested-list", "0,99"],
        &["gen-scenario", "-o", "s.json", "--distance-range", "abc"],
    ] {
        let out = darp(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(!dir.path().join("s.json").exists(), "{args:?} wrote a file");
    }
    let msg = String::from_utf8_lossy(&darp(dir.path(), &["gen-scenario", "-o", "s.json", "--set", "agent.gamma=3"]).stderr)
        .into_owned();
    assert!(msg.contains("agent.gamma"), "{msg}");
}

#[test]
fn fit_flow_recovers_a_synthetic_series_and_stores_it_losslessly() {
    let dir = TempDir::new().unwrap();
    let series = ar1_integrated(0.7, 25.0, 1000, 17);
    let csv: String = std::iter::once("pedestrians".to_string()).chain(series.iter().map(|v| v.to_string())).collect::<Vec<_>>().join("\n");
    fs::write(dir.path().join("flow.csv"), &csv).unwrap();
    ok(&darp(dir.path(), &["gen-scenario", "-o", "s.json"]));
    let out = darp(dir.path(), &["fit-flow", "--csv", "flow.csv", "--d", "1", "--scenario", "s.json"]);
    ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("lambda_1") && stdout.contains("noise variance"), "{stdout}");

    let stored = read_doc(&dir.path().join("s.json")).flows.arima;
    let fit = fit_ar(&parse_series_csv(&csv).unwrap(), 1).unwrap();
    assert_eq!(stored, fit.params);
    assert!((stored.lambda[0] - 0.7).abs() < 3.0 * fit.lambda_std_error);
    assert!((stored.noise_var - 25.0).abs() < 5.0);
}

#[test]
fn fit_flow_rejects_empty_and_malformed_files() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    fs::write(dir.path().join("bad.csv"), "1\n2\nthree\n").unwrap();
    for file in ["empty.csv", "bad.csv", "missing.csv"] {
        let out = darp(dir.path(), &["fit-flow", "--csv", file]);
        assert_eq!(out.status.code(), Some(2), "{file}");
        assert!(!out.stderr.is_empty());
    }
    let out = darp(dir.path(), &["fit-flow", "--csv", "empty.csv"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no data rows"));
}

#[test]
fn training_writes_one_metrics_row_per_episode_and_repeats_exactly() {
    let dir = TempDir::new().unwrap();
    let scenario = tiny_scenario(dir.path());
    let s = scenario.to_str().unwrap();
    ok(&darp(dir.path(), &["train", "--scenario", s, "--seed", "3", "--out-dir", "a"]));
    ok(&darp(dir.path(), &["train", "--scenario", s, "--seed", "3", "--out-dir", "b"]));
    for file in ["metrics.csv", "evals.csv", "checkpoint.bin"] {
        assert_eq!(fs::read(dir.path().join("a").join(file)).unwrap(), fs::read(dir.path().join("b").join(file)).unwrap(), "{file}");
    }
    let metrics = fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 40);
    assert_eq!(fs::read_to_string(dir.path().join("a/evals.csv")).unwrap().lines().count(), 1 + 4);

    let out = darp(dir.path(), &["eval", "--scenario", s, "--checkpoint", "a/checkpoint.bin", "--runs", "3", "--out-dir", "e"]);
    ok(&out);
    assert!(dir.path().join("e/eval.json").exists());
}

#[test]
fn compare_reports_a_lower_bounding_oracle_and_regenerates_curves() {
    let dir = TempDir::new().unwrap();
    let scenario = tiny_scenario(dir.path());
    let s = scenario.to_str().unwrap();
    ok(&darp(dir.path(), &["compare", "--scenario", s, "--train", "--methods", "darp,shortest,random,oracle,tabular", "--seeds", "1,2", "--runs", "3", "--out-dir", "c"]));
    let text = fs::read_to_string(dir.path().join("c/results.json")).unwrap();
    let res: ResultsDocument = serde_json::from_str(&text).unwrap();

    let oracle = res.mean(Method::Oracle).unwrap();
    for m in &res.methods {
        if let Some(mean) = m.mean_seconds {
            assert!(mean >= oracle - 1e-9, "{} mean {mean} below oracle {oracle}", m.method);
        }
    }
    let darp_mean = res.mean(Method::Darp).unwrap();
    for s in &res.savings {
        let base = res.mean(s.baseline).unwrap();
        assert_eq!(s.saving, Some((base - darp_mean) / base));
    }
    assert_eq!(res.traces.len(), 2 * 3);
    for m in &res.methods {
        for (r, t) in m.runs.iter().zip(&res.traces) {
            assert_eq!((r.seed, r.run, r.noise_seed), (t.seed, t.run, t.noise_seed));
        }
    }

    let schema: serde_json::Value = serde_json::from_str(RESULTS_SCHEMA).unwrap();
    let instance: serde_json::Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    assert_eq!(fs::read_to_string(dir.path().join("c/curves.csv")).unwrap(), report::curves_csv(&res));
    ok(&darp(dir.path(), &["report", "--results", "c/results.json", "--out-dir", "r"]));
    for file in ["curves.csv", "runs.csv", "curves.svg"] {
        assert_eq!(fs::read(dir.path().join("c").join(file)).unwrap(), fs::read(dir.path().join("r").join(file)).unwrap(), "{file}");
    }
}

#[test]
fn compare_uses_a_saved_checkpoint_or_refuses() {
    let dir = TempDir::new().unwrap();
    let scenario = tiny_scenario(dir.path());
    let s = scenario.to_str().unwrap();
    let out = darp(dir.path(), &["compare", "--scenario", s, "--methods", "darp,shortest", "--out-dir", "c"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checkpoint"));
    assert!(!dir.path().join("c").exists());

    ok(&darp(dir.path(), &["train", "--scenario", s, "--out-dir", "t"]));
    ok(&darp(dir.path(), &["compare", "--scenario", s, "--checkpoint", "t/checkpoint.bin", "--methods", "darp,shortest", "--runs", "2", "--out-dir", "c"]));
    let res: ResultsDocument = serde_json::from_str(&fs::read_to_string(dir.path().join("c/results.json")).unwrap()).unwrap();
    assert_eq!(res.methods.len(), 2);
    assert!(res.curves.is_empty());

    let out = darp(dir.path(), &["compare", "--scenario", s, "--checkpoint", "nowhere.bin", "--out-dir", "d"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_flags_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    assert_eq!(darp(dir.path(), &["train", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(darp(dir.path(), &["compare", "--scenario", "x.json", "--methods", "dijkstra"]).status.code(), Some(1));
    assert_eq!(darp(dir.path(), &["--version"]).status.code(), Some(0));
}
