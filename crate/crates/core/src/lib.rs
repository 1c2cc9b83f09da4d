//! Dynamic pedestrian route planning on a grid road network.
//!
//! The crate models a grid of roads whose pedestrian flows evolve as
//! per-edge ARIMA processes, wraps it in an episodic MDP, and trains a
//! dueling deep-Q agent to minimise realised travel time. Comparison
//! planners (random walk, A*, an exact time-expanded oracle) share one
//! timing path so results are directly comparable.

pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod flow;
pub mod grid;
pub mod neural;
pub mod replay;
pub mod seed;

pub use error::{DarpError, Result};
