//! Distributed online trust learning for simulated marketplaces.

pub mod baselines;
pub mod config;
pub mod engine;
pub mod error;
pub mod fmt;
pub mod graphgen;
pub mod marketplace;
pub mod metrics;
pub mod replay;
pub mod rng;
pub mod trust;

pub use baselines::{FrequencyModel, ModelKind, RandomModel, TrustModel};
pub use config::SimConfig;
pub use engine::{monte_carlo, run_episode, Episode, EpisodeResult};
pub use error::{Error, Result};
pub use graphgen::{Graph, NetworkSpec};
pub use trust::{Dol3Params, ObserverTrustState};
