//! Scenario documents: a self-contained JSON description of one experiment.

use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use darp_core::agent::{AgentConfig, TabularConfig};
use darp_core::env::{EnvConfig, RewardConfig, Scenario};
use darp_core::flow::{Congestion, FlowConfig};
use darp_core::grid::{GridCoord, RoadNetwork};
use darp_core::{seed, DarpError};
use serde::{Deserialize, Serialize};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub width_cells: usize,
    pub height_cells: usize,
    pub distance_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub origin: GridCoord,
    pub destination: GridCoord,
    pub t_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub schema_version: u32,
    /// Fixes the road lengths, congested nodes and initial flows.
    pub seed: u64,
    pub grid: GridSpec,
    pub flows: FlowConfig,
    pub route: RouteSpec,
    pub reward: RewardConfig,
    pub agent: AgentConfig,
    pub tabular: TabularConfig,
}

impl Default for ScenarioDocument {
    fn default() -> Self {
        Self {
            schema_version: SCENARIO_SCHEMA_VERSION,
            seed: 0,
            grid: GridSpec { width_cells: 5, height_cells: 5, distance_range: [100.0, 1000.0] },
            flows: FlowConfig::default(),
            route: RouteSpec { origin: GridCoord::new(0, 0), destination: GridCoord::new(5, 5), t_max: 100 },
            reward: RewardConfig::default(),
            agent: AgentConfig::default(),
            tabular: TabularConfig::default(),
        }
    }
}

impl ScenarioDocument {
    pub fn network(&self) -> Result<RoadNetwork, DarpError> {
        let g = &self.grid;
        RoadNetwork::build_grid(g.width_cells, g.height_cells, g.distance_range, seed::derive_seed(self.seed, "grid", 0))
            .map_err(|e| match e {
                DarpError::InvalidGrid(m) => DarpError::InvalidConfig { field: "grid".into(), message: m },
                other => other,
            })
    }

    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            origin: self.route.origin,
            destination: self.route.destination,
            t_max: self.route.t_max,
            reward: self.reward.clone(),
        }
    }

    fn flow_seed(&self) -> u64 {
        seed::derive_seed(self.seed, "flows", 0)
    }

    /// Checks every section; errors name the offending field.
    pub fn validate(&self) -> Result<(), DarpError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(DarpError::InvalidConfig {
                field: "schema_version".into(),
                message: format!("expected {SCENARIO_SCHEMA_VERSION}, found {}", self.schema_version),
            });
        }
        let net = self.network()?;
        self.flows.validate()?;
        self.env_config().validate(&net)?;
        self.agent.validate()?;
        self.tabular.validate()?;
        if let Congestion::Nodes(nodes) = &self.flows.congestion {
            if let Some(&bad) = nodes.iter().find(|&&i| i >= net.node_count()) {
                return Err(DarpError::InvalidConfig {
                    field: "flows.congestion.nodes".into(),
                    message: format!("node {bad} outside a network of {} nodes", net.node_count()),
                });
            }
        }
        Ok(())
    }

    /// Replaces random or route-relative congestion with the explicit node list it resolves to.
    pub fn resolve_congestion(&mut self) -> Result<(), DarpError> {
        let net = self.network()?;
        let env = self.env_config();
        env.validate(&net)?;
        let nodes = self
            .flows
            .congested_nodes(&net, self.flow_seed(), net.node(env.origin)?, net.node(env.destination)?)?;
        self.flows.congestion = Congestion::Nodes(nodes);
        Ok(())
    }

    pub fn scenario(&self) -> Result<Scenario, DarpError> {
        self.validate()?;
        Scenario::new(Arc::new(self.network()?), &self.flows, self.env_config(), self.flow_seed())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("documents serialise");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DarpError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let doc = Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        doc.validate()?;
        Ok(doc)
    }
}
