//! Simulation configuration, read from and written to JSON.
//!
//! Observer and provider ids in JSON are 1-based.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::ModelKind;
use crate::error::{Error, Result};
use crate::fmt::{one_based, one_based_vec};
use crate::graphgen::{ConsumerAttach, NetworkSpec, Visibility};
use crate::marketplace::{QualityProcess, UNLIMITED_STOCK};
use crate::trust::{Dol3Params, DEFAULT_LOG_CLAMP};

/// Exploration probability standing in for a boolean `explore = true`.
pub const EXPLORE_TRUE: f64 = 0.1;

/// How a malicious observer rewrites the weights it broadcasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    /// `w ← w_bound / w`, reversing the ranking within the weight bound.
    #[default]
    Invert,
    /// `w ← uniform(0, w_bound]`.
    Random,
    /// `w ← w_bound`.
    ConstantHigh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarySpec {
    /// Observers that are malicious regardless of `malicious_fraction`.
    #[serde(with = "one_based_vec")]
    pub malicious: Vec<usize>,
    /// Fraction of all observers to make malicious; the shortfall over the
    /// explicit list is drawn from the adversary stream.
    pub malicious_fraction: f64,
    /// Malicious observers corrupt during the first `on_len` interactions
    /// of every `on_len + off_len` cycle.
    pub on_len: u64,
    pub off_len: u64,
    pub mode: CorruptionMode,
    /// Probability that any broadcast weight is replaced by noise.
    pub noisy_data_rate: f64,
    /// Overrides the seed of the adversary stream.
    pub seed: Option<u64>,
}

impl Default for AdversarySpec {
    fn default() -> Self {
        AdversarySpec {
            malicious: Vec::new(),
            malicious_fraction: 0.0,
            on_len: 1,
            off_len: 0,
            mode: CorruptionMode::Invert,
            noisy_data_rate: 0.0,
            seed: None,
        }
    }
}

impl AdversarySpec {
    /// Whether malicious observers corrupt at interaction `t`.
    pub fn is_on(&self, t: u64) -> bool {
        let cycle = self.on_len + self.off_len;
        cycle > 0 && (t - 1) % cycle < self.on_len
    }
}

/// A provider joining the market at interaction `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrivalSpec {
    pub t: u64,
    pub process: QualityProcess,
    /// Observers that watch the newcomer; empty means the configured
    /// visibility rule decides.
    #[serde(default, with = "one_based_vec")]
    pub observers: Vec<usize>,
}

/// Blind trust of `observer` toward its neighbor `neighbor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlindTrustOverride {
    #[serde(with = "one_based")]
    pub observer: usize,
    #[serde(with = "one_based")]
    pub neighbor: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub consumers: usize,
    pub providers: usize,
    pub observers: usize,
    /// Total interactions N.
    pub iterations: u64,
    /// T_p; `null` disables periodic resets.
    pub reset_period: Option<u64>,
    pub explore_prob: f64,
    /// n^max; `null` means unlimited stock.
    pub stock_max: Option<u64>,
    /// τ_r, idle ticks after selling out.
    pub refill: u64,
    pub eta_w: f64,
    /// Defaults to `eta_w`.
    pub eta_alpha: Option<f64>,
    pub gamma: f64,
    pub epsilon_trust: f64,
    pub epsilon_overrides: Vec<BlindTrustOverride>,
    pub log_clamp: f64,
    pub network: NetworkSpec,
    pub visibility: Visibility,
    pub consumer_attach: ConsumerAttach,
    /// One process for all providers, one per provider, or none for
    /// evenly spaced constants from 0.9 down to 0.1.
    pub provider_processes: Vec<QualityProcess>,
    pub adversary: Option<AdversarySpec>,
    pub arrivals: Vec<ArrivalSpec>,
    pub model: ModelKind,
    /// Per-observer models, overriding `model`.
    pub observer_models: Option<Vec<ModelKind>>,
    /// Sliding window for the frequency baseline.
    pub frequency_window: Option<usize>,
    pub base_seed: u64,
    pub runs: u64,
    /// Snapshot trust scores every this many interactions; 0 disables.
    pub trace_stride: u64,
    /// Keep per-interaction quality and availability for regret.
    pub record_oracle: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            consumers: 10,
            providers: 5,
            observers: 4,
            iterations: 1000,
            reset_period: Some(100),
            explore_prob: EXPLORE_TRUE,
            stock_max: None,
            refill: 0,
            eta_w: 0.1,
            eta_alpha: None,
            gamma: 0.9,
            epsilon_trust: 0.5,
            epsilon_overrides: Vec::new(),
            log_clamp: DEFAULT_LOG_CLAMP,
            network: NetworkSpec::Complete,
            visibility: Visibility::Full,
            consumer_attach: ConsumerAttach::RoundRobin,
            provider_processes: Vec::new(),
            adversary: None,
            arrivals: Vec::new(),
            model: ModelKind::Dol3,
            observer_models: None,
            frequency_window: None,
            base_seed: 0,
            runs: 1,
            trace_stride: 0,
            record_oracle: false,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn dol3_params(&self) -> Dol3Params {
        Dol3Params {
            gamma: self.gamma,
            eta_w: self.eta_w,
            eta_alpha: self.eta_alpha.unwrap_or(self.eta_w),
            reset_period: self.reset_period,
            epsilon_trust: self.epsilon_trust,
            log_clamp: self.log_clamp,
        }
    }

    pub fn stock_limit(&self) -> u64 {
        self.stock_max.unwrap_or(UNLIMITED_STOCK)
    }

    /// Process of initial provider `j`.
    pub fn provider_process(&self, j: usize) -> QualityProcess {
        match self.provider_processes.len() {
            0 => {
                let p = if self.providers <= 1 {
                    0.9
                } else {
                    0.9 - 0.8 * j as f64 / (self.providers - 1) as f64
                };
                QualityProcess::Constant { p }
            }
            1 => self.provider_processes[0].clone(),
            _ => self.provider_processes[j].clone(),
        }
    }

    pub fn model_of(&self, observer: usize) -> ModelKind {
        self.observer_models
            .as_ref()
            .and_then(|m| m.get(observer).copied())
            .unwrap_or(self.model)
    }

    /// Every constraint violation, or `Ok` for a runnable config.
    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for (name, n) in [
            ("consumers", self.consumers),
            ("providers", self.providers),
            ("observers", self.observers),
        ] {
            if n < 1 {
                v.push(format!("{name} must be >= 1"));
            }
        }
        if self.iterations < 1 {
            v.push("iterations must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.explore_prob) {
            v.push(format!("explore_prob must lie in [0,1], got {}", self.explore_prob));
        }
        if self.stock_max == Some(0) {
            v.push("stock_max must be >= 1 (use null for unlimited)".into());
        }
        v.extend(self.dol3_params().violations());
        for o in &self.epsilon_overrides {
            if o.observer >= self.observers || o.neighbor >= self.observers {
                v.push(format!(
                    "epsilon override ({}, {}) names an unknown observer",
                    o.observer + 1,
                    o.neighbor + 1
                ));
            }
            if !(0.0..=1.0).contains(&o.value) {
                v.push(format!("epsilon override value must lie in [0,1], got {}", o.value));
            }
        }
        if self.observers >= 1 {
            v.extend(self.network.violations(self.observers));
            v.extend(self.visibility.violations(self.observers, self.providers));
        }
        match self.provider_processes.len() {
            0 | 1 => {}
            n if n == self.providers => {}
            n => v.push(format!(
                "provider_processes has {n} entries; expected 0, 1 or {}",
                self.providers
            )),
        }
        for p in &self.provider_processes {
            v.extend(p.violations());
        }
        if let Some(a) = &self.adversary {
            if a.malicious.iter().any(|&i| i >= self.observers) {
                v.push("adversary.malicious names an unknown observer".into());
            }
            for (name, r) in [
                ("malicious_fraction", a.malicious_fraction),
                ("noisy_data_rate", a.noisy_data_rate),
            ] {
                if !(0.0..=1.0).contains(&r) {
                    v.push(format!("adversary.{name} must lie in [0,1], got {r}"));
                }
            }
            if a.on_len + a.off_len == 0 {
                v.push("adversary on_len + off_len must be >= 1".into());
            }
        }
        let mut last = 0;
        for a in &self.arrivals {
            if a.t <= last {
                v.push(format!("arrival times must be strictly increasing and >= 1 (at t={})", a.t));
            }
            last = a.t;
            v.extend(a.process.violations());
            if a.observers.iter().any(|&i| i >= self.observers) {
                v.push(format!("arrival at t={} names an unknown observer", a.t));
            }
        }
        if let Some(m) = &self.observer_models {
            if m.len() != self.observers {
                v.push(format!(
                    "observer_models has {} entries for {} observers",
                    m.len(),
                    self.observers
                ));
            }
        }
        if self.frequency_window == Some(0) {
            v.push("frequency_window must be >= 1 (use null for no window)".into());
        }
        if self.runs < 1 {
            v.push("runs must be >= 1".into());
        }
        v
    }
}
