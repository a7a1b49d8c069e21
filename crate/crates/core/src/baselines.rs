//! The pluggable observer-model interface and the reference recommenders
//! DOL3 is compared against.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marketplace::SaleRecord;
use crate::rng::StreamRng;
use crate::trust::{argmax_by, ObserverTrustState, TrustMessage};

/// Which recommender an observer runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Dol3,
    Random,
    Frequency,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dol3 => "dol3",
            ModelKind::Random => "random",
            ModelKind::Frequency => "frequency",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dol3" => Ok(ModelKind::Dol3),
            "random" => Ok(ModelKind::Random),
            "frequency" => Ok(ModelKind::Frequency),
            other => Err(Error::Parameter(format!(
                "unknown model {other:?} (expected dol3, random or frequency)"
            ))),
        }
    }
}

/// Contract every observer-side trust model fulfils. The engine calls the
/// hooks once per interaction in this order: `begin_interaction`, `emit`,
/// `exchange`, scoring, `observe`.
pub trait TrustModel: Send {
    fn kind(&self) -> ModelKind;

    /// Start of interaction `t`. Returns true if the model reset itself.
    fn begin_interaction(&mut self, _t: u64) -> bool {
        false
    }

    /// Summaries broadcast to neighbors.
    fn emit(&self, _t: u64) -> Vec<TrustMessage> {
        Vec::new()
    }

    /// Summaries received from neighbors.
    fn exchange(&mut self, _t: u64, _inbox: &[TrustMessage]) -> Result<()> {
        Ok(())
    }

    /// Outcome of interaction `t`, or `None` if it was skipped. Models
    /// ignore sales of providers they do not watch.
    fn observe(&mut self, t: u64, sale: Option<&SaleRecord>);

    /// Finite, non-negative score of `provider`.
    fn score(&self, provider: usize) -> f64;

    /// Scores of every provider the model knows about.
    fn scores(&self) -> BTreeMap<usize, f64>;

    fn recommend(&self, available: &BTreeSet<usize>, rng: &mut StreamRng) -> Result<usize>;

    /// A provider joined the market, watched by the observers in
    /// `observed_by`.
    fn add_provider(&mut self, provider: usize, observed_by: &BTreeSet<usize>);

    /// First-hand weights, for traces. Empty for models without them.
    fn local_weights(&self) -> BTreeMap<usize, f64> {
        BTreeMap::new()
    }

    /// The underlying trust state, for DOL3 observers.
    fn as_dol3(&self) -> Option<&ObserverTrustState> {
        None
    }
}

/// Uniform draw from `available`.
pub fn random_recommend(available: &BTreeSet<usize>, rng: &mut StreamRng) -> Result<usize> {
    available.iter().copied().choose(rng).ok_or(Error::Availability)
}

/// Randomized baseline: reassigns uniform random scores to its providers
/// at the start of every interaction.
#[derive(Debug, Clone)]
pub struct RandomModel {
    providers: BTreeSet<usize>,
    scores: BTreeMap<usize, f64>,
    rng: StreamRng,
}

impl RandomModel {
    pub fn new(providers: BTreeSet<usize>, rng: StreamRng) -> Self {
        let mut m = RandomModel {
            providers,
            scores: BTreeMap::new(),
            rng,
        };
        m.redraw();
        m
    }

    fn redraw(&mut self) {
        let rng = &mut self.rng;
        self.scores = self
            .providers
            .iter()
            .map(|&j| (j, rng.random::<f64>()))
            .collect();
    }
}

impl TrustModel for RandomModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Random
    }

    fn begin_interaction(&mut self, _t: u64) -> bool {
        self.redraw();
        false
    }

    fn observe(&mut self, _t: u64, _sale: Option<&SaleRecord>) {}

    fn score(&self, provider: usize) -> f64 {
        self.scores.get(&provider).copied().unwrap_or(0.0)
    }

    fn scores(&self) -> BTreeMap<usize, f64> {
        self.scores.clone()
    }

    fn recommend(&self, available: &BTreeSet<usize>, rng: &mut StreamRng) -> Result<usize> {
        random_recommend(available, rng)
    }

    fn add_provider(&mut self, provider: usize, observed_by: &BTreeSet<usize>) {
        if observed_by.is_empty() {
            return;
        }
        self.providers.insert(provider);
        self.scores.insert(provider, 0.0);
    }
}

/// Score given to a provider with no witnessed sales.
pub const UNSEEN_PRIOR: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq)]
struct Tally {
    successes: u64,
    trials: u64,
    recent: VecDeque<u8>,
}

/// Expert-opinion baseline: the empirical success rate of each provider
/// among the sales this observer witnessed, optionally over a sliding
/// window of the last `W` witnessed sales per provider.
#[derive(Debug, Clone)]
pub struct FrequencyModel {
    providers: BTreeSet<usize>,
    window: Option<usize>,
    tallies: BTreeMap<usize, Tally>,
}

impl FrequencyModel {
    pub fn new(providers: BTreeSet<usize>, window: Option<usize>) -> Self {
        FrequencyModel {
            providers,
            window: window.filter(|&w| w > 0),
            tallies: BTreeMap::new(),
        }
    }

    pub fn observe_record(&mut self, record: &SaleRecord) {
        if !self.providers.contains(&record.provider) {
            return;
        }
        let tally = self.tallies.entry(record.provider).or_default();
        tally.trials += 1;
        tally.successes += u64::from(record.outcome);
        if let Some(w) = self.window {
            tally.recent.push_back(record.outcome);
            if tally.recent.len() > w {
                let dropped = tally.recent.pop_front().expect("window nonempty");
                tally.trials -= 1;
                tally.successes -= u64::from(dropped);
            }
        }
    }

    /// `(successes, trials)` over the counted observations.
    pub fn counts(&self, provider: usize) -> (u64, u64) {
        self.tallies
            .get(&provider)
            .map_or((0, 0), |t| (t.successes, t.trials))
    }

    /// Empirical mean, or the uninformed prior for unseen providers.
    pub fn mean(&self, provider: usize) -> f64 {
        match self.counts(provider) {
            (_, 0) => UNSEEN_PRIOR,
            (s, n) => s as f64 / n as f64,
        }
    }
}

/// Argmax of the empirical mean over `available`, lowest index on ties.
pub fn freq_recommend(model: &FrequencyModel, available: &BTreeSet<usize>) -> Result<usize> {
    argmax_by(available.iter().copied(), |j| model.mean(j)).ok_or(Error::Availability)
}

impl TrustModel for FrequencyModel {
    fn kind(&self) -> ModelKind {
        ModelKind::Frequency
    }

    fn observe(&mut self, _t: u64, sale: Option<&SaleRecord>) {
        if let Some(r) = sale {
            self.observe_record(r);
        }
    }

    fn score(&self, provider: usize) -> f64 {
        self.mean(provider)
    }

    fn scores(&self) -> BTreeMap<usize, f64> {
        self.providers.iter().map(|&j| (j, self.mean(j))).collect()
    }

    fn recommend(&self, available: &BTreeSet<usize>, _rng: &mut StreamRng) -> Result<usize> {
        freq_recommend(self, available)
    }

    fn add_provider(&mut self, provider: usize, observed_by: &BTreeSet<usize>) {
        if !observed_by.is_empty() {
            self.providers.insert(provider);
        }
    }
}
