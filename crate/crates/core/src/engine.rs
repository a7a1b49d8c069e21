//! Episode orchestration.
//!
//! One interaction `t` runs these phases in order:
//!
//! 1. periodic reset of every observer model,
//! 2. communication: emit, corrupt (adversary and noise), deliver along Λ,
//! 3. trust fusion (social update, normalization, fusion),
//! 4. purchase by `consumer_at(t)`, guided by the mean score of its
//!    observers over the active providers it can reach,
//! 5. learning from the outcome,
//! 6. stock bookkeeping: idle ticks, then the sale,
//! 7. providers scheduled to arrive at `t + 1` join.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IteratorRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{FrequencyModel, ModelKind, RandomModel, TrustModel};
use crate::config::{AdversarySpec, ArrivalSpec, BlindTrustOverride, CorruptionMode, SimConfig};
use crate::error::{Error, Result};
use crate::fmt::{one_based, one_based_opt, one_based_sets};
use crate::graphgen::{build_interaction_network, InteractionNetwork, Visibility};
use crate::marketplace::{consumer_at, outcome_from_draw, ProviderState, SaleRecord};
use crate::rng::{self, StreamRng};
use crate::trust::{argmax_by, Dol3Model, Dol3Params, ObserverTrustState, TrustMessage};

/// What happened at one interaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub t: u64,
    #[serde(with = "one_based")]
    pub consumer: usize,
    /// `None` when no active provider was reachable.
    #[serde(with = "one_based_opt")]
    pub provider: Option<usize>,
    pub outcome: u8,
    pub skipped: bool,
    pub explored: bool,
}

impl InteractionRecord {
    pub fn sale(&self) -> Option<SaleRecord> {
        self.provider.map(|provider| SaleRecord {
            t: self.t,
            consumer: self.consumer,
            provider,
            outcome: self.outcome,
        })
    }
}

/// Scores and first-hand weights of one observer at one interaction,
/// indexed by provider (0 where unknown).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustSnapshot {
    pub t: u64,
    #[serde(with = "one_based")]
    pub observer: usize,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
}

/// Per-interaction ground truth for regret.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleTrace {
    /// `quality[t-1][j]` = p_j(t) for providers present at `t`.
    pub quality: Vec<Vec<f64>>,
    /// Active providers reachable by the consumer at `t`.
    #[serde(with = "one_based_sets")]
    pub available: Vec<BTreeSet<usize>>,
    /// All active providers at `t`.
    #[serde(with = "one_based_sets")]
    pub active: Vec<BTreeSet<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub run: u64,
    pub seed: u64,
    /// Label of the model mix, e.g. `dol3`.
    pub model: String,
    pub config: SimConfig,
    pub records: Vec<InteractionRecord>,
    pub rewards: Vec<u8>,
    pub cumulative_reward: u64,
    pub skipped: u64,
    /// Interactions at which a periodic reset fired.
    pub resets: Vec<u64>,
    pub traces: Vec<TrustSnapshot>,
    pub oracle: Option<OracleTrace>,
}

impl EpisodeResult {
    pub fn sales(&self) -> impl Iterator<Item = SaleRecord> + '_ {
        self.records.iter().filter_map(InteractionRecord::sale)
    }
}

/// Rewrites a malicious broadcast. `w_bound` is the largest honest
/// weight.
pub fn corrupt_message(
    msg: TrustMessage,
    mode: CorruptionMode,
    rng: &mut StreamRng,
    w_bound: f64,
) -> TrustMessage {
    let w = match mode {
        CorruptionMode::Invert => w_bound / msg.w,
        CorruptionMode::Random => w_bound * (1.0 - rng.random::<f64>()),
        CorruptionMode::ConstantHigh => w_bound,
    };
    TrustMessage { w, ..msg }
}

fn model_label(config: &SimConfig) -> String {
    match &config.observer_models {
        Some(models) if models.iter().any(|&m| m != models[0]) => "mixed".into(),
        Some(models) if !models.is_empty() => models[0].to_string(),
        _ => config.model.to_string(),
    }
}

/// A running episode. Drive it with [`Episode::step`] or [`Episode::run`].
pub struct Episode {
    config: SimConfig,
    seed: u64,
    run: u64,
    t: u64,
    network: InteractionNetwork,
    providers: Vec<ProviderState>,
    models: Vec<Box<dyn TrustModel>>,
    malicious: BTreeSet<usize>,
    consumer_observers: Vec<Vec<usize>>,
    reachable: Vec<BTreeSet<usize>>,
    next_arrival: usize,
    w_bound: f64,
    outcome_rng: StreamRng,
    explore_rng: StreamRng,
    adversary_rng: StreamRng,
    quality_rng: StreamRng,
    netgen_rng: StreamRng,
    quality_now: Vec<f64>,
    records: Vec<InteractionRecord>,
    resets: Vec<u64>,
    traces: Vec<TrustSnapshot>,
    oracle: Option<OracleTrace>,
}

impl Episode {
    pub fn new(config: &SimConfig, seed: u64) -> Result<Self> {
        Self::with_run(config, seed, 0)
    }

    pub fn with_run(config: &SimConfig, seed: u64, run: u64) -> Result<Self> {
        config.validate()?;
        let config = config.clone();
        let mut netgen_rng = rng::stream(seed, rng::NETGEN);
        let graph = config.network.generate(config.observers, netgen_rng.random())?;
        let network = build_interaction_network(
            config.observers,
            config.providers,
            config.consumers,
            &graph,
            &config.visibility,
            config.consumer_attach,
            netgen_rng.random(),
        )?;
        let adversary_seed = config
            .adversary
            .as_ref()
            .and_then(|a| a.seed)
            .unwrap_or(seed);
        let mut adversary_rng = rng::stream(adversary_seed, rng::ADVERSARY);
        let malicious = match &config.adversary {
            Some(a) => pick_malicious(a, config.observers, &mut adversary_rng),
            None => BTreeSet::new(),
        };

        let params = config.dol3_params();
        let providers = (0..config.providers)
            .map(|j| {
                ProviderState::new(j, config.provider_process(j), config.stock_limit(), config.refill)
            })
            .collect();
        let models = build_models(
            &network,
            |i| config.model_of(i),
            &params,
            &config.epsilon_overrides,
            config.frequency_window,
            seed,
        )?;
        let consumer_observers = (0..config.consumers)
            .map(|c| network.observers_of_consumer(c))
            .collect();

        let mut episode = Episode {
            w_bound: params.weight_bound(),
            oracle: config.record_oracle.then(OracleTrace::default),
            seed,
            run,
            t: 0,
            network,
            providers,
            models,
            malicious,
            consumer_observers,
            reachable: Vec::new(),
            next_arrival: 0,
            outcome_rng: rng::stream(seed, rng::OUTCOME),
            explore_rng: rng::stream(seed, rng::EXPLORE),
            adversary_rng,
            quality_rng: rng::stream(seed, rng::QUALITY),
            netgen_rng,
            quality_now: Vec::new(),
            records: Vec::new(),
            resets: Vec::new(),
            traces: Vec::new(),
            config,
        };
        episode.process_arrivals(1);
        episode.refresh_reachable();
        Ok(episode)
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.config.iterations
    }

    pub fn network(&self) -> &InteractionNetwork {
        &self.network
    }

    pub fn providers(&self) -> &[ProviderState] {
        &self.providers
    }

    pub fn models(&self) -> &[Box<dyn TrustModel>] {
        &self.models
    }

    pub fn malicious(&self) -> &BTreeSet<usize> {
        &self.malicious
    }

    /// p_j(t) of every provider at the last completed interaction.
    pub fn current_quality(&self) -> &[f64] {
        &self.quality_now
    }

    fn refresh_reachable(&mut self) {
        let known: Vec<BTreeSet<usize>> = (0..self.network.observers)
            .map(|i| self.network.known_providers(i))
            .collect();
        self.reachable = self
            .consumer_observers
            .iter()
            .map(|obs| obs.iter().flat_map(|&i| known[i].iter().copied()).collect())
            .collect();
    }

    /// Adds every provider scheduled for interaction `t`.
    pub fn process_arrivals(&mut self, t: u64) {
        let mut changed = false;
        while let Some(arrival) = self.config.arrivals.get(self.next_arrival) {
            if arrival.t > t {
                break;
            }
            let arrival: ArrivalSpec = arrival.clone();
            self.next_arrival += 1;
            let j = self.providers.len();
            self.providers.push(ProviderState::new(
                j,
                arrival.process,
                self.config.stock_limit(),
                self.config.refill,
            ));
            if let Some(p) = self.providers.last_mut() {
                p.active_since = arrival.t;
            }
            let observed_by: BTreeSet<usize> = if !arrival.observers.is_empty() {
                arrival.observers.iter().copied().collect()
            } else {
                match self.config.visibility {
                    Visibility::Full => (0..self.network.observers).collect(),
                    Visibility::Random(_) | Visibility::Explicit(_) => {
                        [self.netgen_rng.random_range(0..self.network.observers)].into()
                    }
                }
            };
            self.network.providers += 1;
            for &i in &observed_by {
                self.network.omega[i].insert(j);
            }
            for m in &mut self.models {
                m.add_provider(j, &observed_by);
            }
            changed = true;
        }
        if changed {
            self.refresh_reachable();
        }
    }

    fn communicate(&mut self, t: u64) -> Result<()> {
        let Some(a) = self.config.adversary.clone() else {
            return exchange_round(&mut self.models, &self.network.lambda, t, |_, _| {});
        };
        let corrupting = a.is_on(t);
        let (malicious, rng, w_bound) = (&self.malicious, &mut self.adversary_rng, self.w_bound);
        exchange_round(&mut self.models, &self.network.lambda, t, |i, m| {
            if corrupting && malicious.contains(&i) {
                *m = corrupt_message(*m, a.mode, rng, w_bound);
            }
            if a.noisy_data_rate > 0.0 && rng.random::<f64>() < a.noisy_data_rate {
                *m = corrupt_message(*m, CorruptionMode::Random, rng, w_bound);
            }
        })
    }

    /// Runs interaction `t + 1`.
    pub fn step(&mut self) -> Result<InteractionRecord> {
        let t = self.t + 1;

        // Reset.
        let mut reset = false;
        for m in &mut self.models {
            reset |= m.begin_interaction(t);
        }
        if reset {
            self.resets.push(t);
        }

        // Communication and fusion.
        self.communicate(t)?;

        // Purchase.
        self.quality_now = self
            .providers
            .iter_mut()
            .map(|p| p.quality.quality_at(t, &mut self.quality_rng))
            .collect();
        let consumer = consumer_at(t, self.config.consumers);
        let available: BTreeSet<usize> = self.reachable[consumer]
            .iter()
            .copied()
            .filter(|&j| self.providers[j].is_active())
            .collect();
        let explore_draw: f64 = self.explore_rng.random();
        let outcome_draw: f64 = self.outcome_rng.random();
        let (chosen, explored) = choose_provider(
            &self.models,
            &self.consumer_observers[consumer],
            &available,
            explore_draw < self.config.explore_prob,
            &mut self.explore_rng,
        );
        let outcome = chosen.map_or(0, |j| outcome_from_draw(self.quality_now[j], outcome_draw));
        let record = InteractionRecord {
            t,
            consumer,
            provider: chosen,
            outcome,
            skipped: chosen.is_none(),
            explored,
        };

        if let Some(oracle) = &mut self.oracle {
            oracle.quality.push(self.quality_now.clone());
            oracle.available.push(available);
            oracle
                .active
                .push((0..self.providers.len()).filter(|&j| self.providers[j].is_active()).collect());
        }
        if self.config.trace_stride > 0 && t.is_multiple_of(self.config.trace_stride) {
            self.snapshot(t);
        }

        // Learning.
        let sale = record.sale();
        for m in &mut self.models {
            m.observe(t, sale.as_ref());
        }

        // Stock.
        for p in &mut self.providers {
            p.tick_idle(t);
        }
        if let Some(j) = chosen {
            self.providers[j].record_sale(t)?;
        }

        // Arrivals.
        self.process_arrivals(t + 1);

        self.t = t;
        self.records.push(record);
        Ok(record)
    }

    fn snapshot(&mut self, t: u64) {
        let n = self.providers.len();
        for (i, m) in self.models.iter().enumerate() {
            let mut z = vec![0.0; n];
            for (j, s) in m.scores() {
                z[j] = s;
            }
            let mut w = vec![0.0; n];
            for (j, v) in m.local_weights() {
                w[j] = v;
            }
            self.traces.push(TrustSnapshot { t, observer: i, z, w });
        }
    }

    pub fn run(mut self) -> Result<EpisodeResult> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> EpisodeResult {
        let rewards: Vec<u8> = self.records.iter().map(|r| r.outcome).collect();
        EpisodeResult {
            run: self.run,
            seed: self.seed,
            model: model_label(&self.config),
            cumulative_reward: rewards.iter().map(|&r| u64::from(r)).sum(),
            skipped: self.records.iter().filter(|r| r.skipped).count() as u64,
            rewards,
            records: self.records,
            resets: self.resets,
            traces: self.traces,
            oracle: self.oracle,
            config: self.config,
        }
    }
}

/// One observer model per node of `network`.
pub fn build_models(
    network: &InteractionNetwork,
    kind_of: impl Fn(usize) -> ModelKind,
    params: &Dol3Params,
    overrides: &[BlindTrustOverride],
    frequency_window: Option<usize>,
    seed: u64,
) -> Result<Vec<Box<dyn TrustModel>>> {
    let mut models: Vec<Box<dyn TrustModel>> = Vec::with_capacity(network.observers);
    for i in 0..network.observers {
        let omega = network.omega[i].clone();
        let model: Box<dyn TrustModel> = match kind_of(i) {
            ModelKind::Dol3 => {
                let neighbors = network.lambda[i]
                    .iter()
                    .map(|&l| (l, network.omega[l].clone()))
                    .collect();
                let mut state = ObserverTrustState::new(i, omega, &neighbors, params);
                for o in overrides.iter().filter(|o| o.observer == i) {
                    state.set_blind_trust(o.neighbor, o.value).map_err(|_| {
                        Error::Parameter(format!(
                            "epsilon override: observer {} is not a neighbor of observer {}",
                            o.neighbor + 1,
                            o.observer + 1
                        ))
                    })?;
                }
                Box::new(Dol3Model::new(state, params.clone()))
            }
            ModelKind::Random => Box::new(RandomModel::new(
                omega,
                rng::indexed_stream(seed, "random_model", i as u64),
            )),
            ModelKind::Frequency => Box::new(FrequencyModel::new(omega, frequency_window)),
        };
        models.push(model);
    }
    Ok(models)
}

/// Every model broadcasts to its Λ-neighbors. `tamper(sender, msg)` may
/// rewrite a message before delivery.
pub fn exchange_round(
    models: &mut [Box<dyn TrustModel>],
    lambda: &[BTreeSet<usize>],
    t: u64,
    mut tamper: impl FnMut(usize, &mut TrustMessage),
) -> Result<()> {
    let outboxes: Vec<Vec<TrustMessage>> = models
        .iter()
        .enumerate()
        .map(|(i, model)| {
            let mut msgs = model.emit(t);
            for m in &mut msgs {
                tamper(i, m);
            }
            msgs
        })
        .collect();
    for (i, model) in models.iter_mut().enumerate() {
        let inbox: Vec<TrustMessage> = lambda[i]
            .iter()
            .flat_map(|&l| outboxes[l].iter().copied())
            .collect();
        model.exchange(t, &inbox)?;
    }
    Ok(())
}

/// Mean score over `observers`, per available provider.
pub fn aggregate_scores(
    models: &[Box<dyn TrustModel>],
    observers: &[usize],
    available: &BTreeSet<usize>,
) -> BTreeMap<usize, f64> {
    available
        .iter()
        .map(|&j| {
            let total: f64 = observers.iter().map(|&i| models[i].score(j)).sum();
            (j, total / observers.len().max(1) as f64)
        })
        .collect()
}

/// The consumer's pick among `available`, and whether it was random.
/// Falls back to a uniform pick when every aggregated score is 0.
pub fn choose_provider(
    models: &[Box<dyn TrustModel>],
    observers: &[usize],
    available: &BTreeSet<usize>,
    explore: bool,
    rng: &mut StreamRng,
) -> (Option<usize>, bool) {
    if available.is_empty() {
        return (None, false);
    }
    if !explore {
        let scores = aggregate_scores(models, observers, available);
        if scores.values().any(|&s| s > 0.0) {
            return (argmax_by(available.iter().copied(), |j| scores[&j]), false);
        }
    }
    (available.iter().copied().choose(rng), true)
}

fn pick_malicious(spec: &AdversarySpec, observers: usize, rng: &mut StreamRng) -> BTreeSet<usize> {
    let mut chosen: BTreeSet<usize> = spec.malicious.iter().copied().collect();
    let target = (spec.malicious_fraction * observers as f64).round() as usize;
    if target > chosen.len() {
        let rest: Vec<usize> = (0..observers).filter(|i| !chosen.contains(i)).collect();
        chosen.extend(rest.into_iter().choose_multiple(rng, target - chosen.len()));
    }
    chosen
}

pub fn run_episode(config: &SimConfig, seed: u64) -> Result<EpisodeResult> {
    Episode::new(config, seed)?.run()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: ModelKind,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
}

impl ModelSummary {
    pub fn from_rewards(model: ModelKind, rewards: &[f64]) -> Self {
        let n = rewards.len();
        let mean = rewards.iter().sum::<f64>() / n.max(1) as f64;
        let std_dev = if n > 1 {
            (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        ModelSummary {
            model,
            runs: n,
            mean,
            std_dev,
            min: rewards.iter().copied().fold(f64::INFINITY, f64::min),
            max: rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub model: ModelKind,
    pub versus: ModelKind,
    pub rate: f64,
}

/// Fraction of paired runs where `a` beats `b`; ties count half.
pub fn win_rate(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return 0.5;
    }
    let score: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    score / n as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub models: Vec<ModelSummary>,
    pub win_rates: Vec<WinRate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub episodes: Vec<EpisodeResult>,
    pub stats: AggregateStats,
}

/// Runs every model in `models` (or the configured one, if empty) on
/// seeds `base_seed + r` for `r` in `0..runs`. Episodes run in parallel;
/// results are ordered by model, then run.
pub fn monte_carlo(
    config: &SimConfig,
    models: &[ModelKind],
    runs: u64,
    base_seed: u64,
) -> Result<MonteCarloResult> {
    if runs == 0 {
        return Err(Error::Parameter("runs must be >= 1".into()));
    }
    let models: Vec<ModelKind> = if models.is_empty() {
        vec![config.model]
    } else {
        models.to_vec()
    };
    let jobs: Vec<(ModelKind, u64)> = models
        .iter()
        .flat_map(|&m| (0..runs).map(move |r| (m, r)))
        .collect();
    let episodes = jobs
        .into_par_iter()
        .map(|(model, r)| {
            let mut cfg = config.clone();
            if models.len() > 1 || cfg.observer_models.is_none() {
                cfg.model = model;
                cfg.observer_models = None;
            }
            Episode::with_run(&cfg, base_seed.wrapping_add(r), r)?.run()
        })
        .collect::<Result<Vec<_>>>()?;

    let per_model: Vec<Vec<f64>> = episodes
        .chunks(runs as usize)
        .map(|chunk| chunk.iter().map(|e| e.cumulative_reward as f64).collect())
        .collect();
    let summaries = models
        .iter()
        .zip(&per_model)
        .map(|(&m, r)| ModelSummary::from_rewards(m, r))
        .collect();
    let mut win_rates = Vec::new();
    for (a, ra) in models.iter().zip(&per_model) {
        for (b, rb) in models.iter().zip(&per_model) {
            win_rates.push(WinRate {
                model: *a,
                versus: *b,
                rate: win_rate(ra, rb),
            });
        }
    }
    Ok(MonteCarloResult {
        episodes,
        stats: AggregateStats {
            models: summaries,
            win_rates,
        },
    })
}
