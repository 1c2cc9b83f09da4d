use std::sync::Arc;

use darp_core::env::{EnvConfig, Scenario};
use darp_core::flow::{
    difference, difference_heads, fit_ar, forecast, integrate, init_flows, step_flows, ArimaParams, Congestion,
    FlowConfig,
};
use darp_core::grid::{edge_travel_time, velocity, Action, GridCoord, NodeId, RoadNetwork, FREE_SPEED, NO_EDGE};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Independent generator: AR(1) increments with Gaussian noise, cumulated once.
fn ar1_levels(lambda: f64, var: f64, len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, var.sqrt()).unwrap();
    let mut w = 0.0;
    let mut level = 1000.0;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        w = lambda * w + noise.sample(&mut rng);
        level += w;
        out.push(level);
    }
    out
}

#[test]
fn fit_recovers_ar_coefficient() {
    let series = ar1_levels(0.7, 25.0, 1000, 1);
    let fit = fit_ar(&series, 1).unwrap();
    let lambda = fit.params.lambda[0];
    assert!((0.65..=0.75).contains(&lambda), "lambda {lambda}");
    assert!((fit.params.noise_var - 25.0).abs() < 5.0, "var {}", fit.params.noise_var);
    assert!(fit.stationary);
    assert_eq!(fit.observations, 998);
}

#[test]
fn fit_on_white_noise_finds_no_memory() {
    let series = ar1_levels(0.0, 25.0, 1000, 2);
    let fit = fit_ar(&series, 1).unwrap();
    assert!(fit.params.lambda[0].abs() < 0.1);
}

#[test]
fn fit_coverage_over_seeds() {
    let covered = (0..100)
        .filter(|&seed| {
            let fit = fit_ar(&ar1_levels(0.7, 25.0, 1000, 100 + seed), 1).unwrap();
            (fit.params.lambda[0] - 0.7).abs() <= 3.0 * fit.lambda_std_error
        })
        .count();
    assert!(covered >= 95, "{covered}/100 within 3 SE");
}

#[test]
fn mean_forecast_of_fitted_model_is_hand_recursion() {
    let series = ar1_levels(0.5, 4.0, 300, 4);
    let p = fit_ar(&series, 1).unwrap().params;
    let f = forecast(&p, &series, 3, None).unwrap();
    let (c, l) = (p.mean_drift, p.lambda[0]);
    let mut level = series[series.len() - 1];
    let mut w = level - series[series.len() - 2];
    for v in f {
        w = c + l * w;
        level = (level + w).max(0.0);
        assert!((v - level).abs() < 1e-9);
    }
}

#[test]
fn flows_evolve_only_on_edges_and_stay_non_negative() {
    let net = RoadNetwork::build_grid(3, 3, [100.0, 1000.0], 8).unwrap();
    let cfg = FlowConfig { congestion: Congestion::Count(2), ..FlowConfig::default() };
    let congested = cfg.congested_nodes(&net, 8, NodeId(0), NodeId(15)).unwrap();
    let mut state = init_flows(&net, &cfg, 8, &congested).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ArimaParams::ar1(1, 0.6, 0.0, 1e6);
    let n = net.node_count();
    for _ in 0..200 {
        step_flows(&mut state, &params, &mut rng);
        for i in 0..n {
            for j in 0..n {
                let p = state.flow(i, j);
                if net.distance(NodeId(i), NodeId(j)).is_some() {
                    assert!(p >= 0.0);
                } else {
                    assert_eq!(p, NO_EDGE);
                }
            }
        }
    }
}

#[test]
fn congestion_is_fixed_by_scenario_seed() {
    let net = Arc::new(RoadNetwork::build_grid(5, 5, [100.0, 1000.0], 3).unwrap());
    let cfg = FlowConfig { congestion: Congestion::Count(4), ..FlowConfig::default() };
    let env = EnvConfig::corner_to_corner(&net);
    let a = Scenario::new(Arc::clone(&net), &cfg, env.clone(), 3).unwrap();
    let b = Scenario::new(Arc::clone(&net), &cfg, env, 3).unwrap();
    assert_eq!(a.congested_nodes(), b.congested_nodes());
    assert_eq!(a.initial_flows(), b.initial_flows());
    assert_eq!(a.realize_trace(5).digest(), b.realize_trace(5).digest());
    assert_ne!(a.realize_trace(5).digest(), a.realize_trace(6).digest());
}

proptest! {
    #[test]
    fn closed_form_travel_time_matches_density_form(d in 1e-3f64..1e4, p in 1e-3f64..1e5) {
        let c = edge_travel_time(d, p, FREE_SPEED).unwrap();
        let rho = p / d;
        let oracle = d / (FREE_SPEED * rho.powf(-0.8));
        prop_assert!((c - oracle).abs() <= 1e-12 * oracle);
        let v = velocity(p, d, FREE_SPEED).unwrap();
        prop_assert!((d / v - c).abs() <= 1e-12 * c);
    }

    #[test]
    fn travel_time_increases_with_flow(d in 1.0f64..1e4, p in 1e-3f64..1e5, dp in 1e-3f64..1e3) {
        prop_assert!(edge_travel_time(d, p + dp, FREE_SPEED).unwrap() > edge_travel_time(d, p, FREE_SPEED).unwrap());
    }

    #[test]
    fn built_grids_are_symmetric_lattices(w in 1usize..7, h in 1usize..7, lo in 1.0f64..500.0, span in 0.0f64..500.0, seed in any::<u64>()) {
        let net = RoadNetwork::build_grid(w, h, [lo, lo + span], seed).unwrap();
        let n = net.node_count();
        prop_assert_eq!(n, (w + 1) * (h + 1));
        prop_assert_eq!(net.edge_count(), w * (h + 1) + h * (w + 1));
        for i in 0..n {
            for j in 0..n {
                let dij = net.distance(NodeId(i), NodeId(j));
                prop_assert_eq!(dij, net.distance(NodeId(j), NodeId(i)));
                let (a, b) = (net.coord(NodeId(i)), net.coord(NodeId(j)));
                let adjacent = a.x.abs_diff(b.x) + a.y.abs_diff(b.y) == 1;
                prop_assert_eq!(dij.is_some(), adjacent);
                if let Some(d) = dij {
                    prop_assert!(d >= lo && d <= lo + span);
                }
            }
        }
        prop_assert_eq!(RoadNetwork::from_json(&net.to_json().unwrap()).unwrap(), net.clone());
        prop_assert_eq!(RoadNetwork::build_grid(w, h, [lo, lo + span], seed).unwrap(), net);
    }

    #[test]
    fn valid_actions_never_leave_the_grid(w in 1usize..8, h in 1usize..8, x in 0usize..8, y in 0usize..8) {
        let net = RoadNetwork::uniform(w, h, 100.0).unwrap();
        let c = GridCoord::new(x.min(w), y.min(h));
        let valid = net.valid_actions(c);
        for a in Action::ALL {
            prop_assert_eq!(valid.contains(&a), net.step_coord(c, a).is_some());
        }
    }

    #[test]
    fn differencing_round_trips(series in prop::collection::vec(-1e3f64..1e3, 5..60), d in 0usize..4) {
        let diffs = difference(&series, d).unwrap();
        let heads = difference_heads(&series, d).unwrap();
        let back = integrate(&diffs, &heads);
        prop_assert_eq!(back.len(), series.len());
        for (a, b) in back.iter().zip(&series) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn seeded_simulation_is_reproducible(seed in any::<u64>()) {
        let p = ArimaParams::default();
        let hist = vec![500.0; p.history_len()];
        let a = forecast(&p, &hist, 50, Some(seed)).unwrap();
        let b = forecast(&p, &hist, 50, Some(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.iter().all(|v| *v >= 0.0));
    }
}
