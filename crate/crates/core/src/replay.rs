//! Replays a ratings dataset through the observer network.
//!
//! Recommenders play the provider role. At row `t` every recommender
//! predicts the rating, the served user takes the prediction of the
//! recommender its observers rank highest, and the observers learn
//! `s = 1` when that prediction lands within `match_threshold` of the
//! true rating. RMSE and accuracy run over the consumed predictions.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ModelKind;
use crate::engine::{build_models, choose_provider, exchange_round};
use crate::error::{Error, Result};
use crate::fmt::g17;
use crate::graphgen::{build_interaction_network, ConsumerAttach, NetworkSpec, Visibility};
use crate::marketplace::{consumer_at, SaleRecord};
use crate::metrics::{accuracy, RunningRmse};
use crate::rng;
use crate::trust::{Dol3Params, DEFAULT_LOG_CLAMP};

pub const METRICS_CSV_HEADER: &str =
    "t,rmse,accuracy,malicious_count,noise_rate,network_type,model,run";

/// Streams used by replay on top of the shared ones.
const PREDICT: &str = "replay_predict";
const DATA_NOISE: &str = "replay_noise";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub user: String,
    pub item: String,
    pub rating: String,
    /// Rows keep file order when absent or missing from the header.
    pub timestamp: Option<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            user: "userId".into(),
            item: "movieId".into(),
            rating: "rating".into(),
            timestamp: Some("timestamp".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: String,
    pub item: String,
    /// Min-max normalized into [0, 1].
    pub rating: f64,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsTable {
    pub rows: Vec<Rating>,
    pub r_min: f64,
    pub r_max: f64,
    /// Rows dropped for unparsable fields.
    pub skipped: usize,
}

impl RatingsTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Normalized ratings in file order.
    pub fn ratings(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.rating).collect()
    }
}

pub fn load_ratings(path: &Path, columns: &ColumnMap) -> Result<RatingsTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ratings(file, columns).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        Error::Schema(m) => Error::Schema(format!("{}: {m}", path.display())),
        e => e,
    })
}

pub fn read_ratings<R: Read>(input: R, columns: &ColumnMap) -> Result<RatingsTable> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| {
        find(name).ok_or_else(|| Error::Schema(format!("missing required column {name:?}")))
    };
    let (cu, ci, cr) = (need(&columns.user)?, need(&columns.item)?, need(&columns.rating)?);
    let ct = columns.timestamp.as_deref().and_then(find);

    let mut raw = Vec::new();
    let mut skipped = 0;
    for record in reader.records() {
        let Ok(record) = record else {
            skipped += 1;
            continue;
        };
        let field = |c: usize| record.get(c).filter(|s| !s.is_empty());
        let parsed = (|| {
            let user = field(cu)?.to_string();
            let item = field(ci)?.to_string();
            let rating: f64 = field(cr)?.parse().ok().filter(|r: &f64| r.is_finite())?;
            let timestamp = match ct {
                Some(c) => Some(field(c)?.parse::<i64>().ok()?),
                None => None,
            };
            Some((user, item, rating, timestamp))
        })();
        match parsed {
            Some(row) => raw.push(row),
            None => skipped += 1,
        }
    }
    if raw.is_empty() {
        return Err(Error::Data("no rating rows".into()));
    }
    let r_min = raw.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let r_max = raw.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    if r_max <= r_min {
        return Err(Error::Data(format!(
            "cannot normalize: every rating equals {r_min}"
        )));
    }
    let rows = raw
        .into_iter()
        .map(|(user, item, r, timestamp)| Rating {
            user,
            item,
            rating: (r - r_min) / (r_max - r_min),
            timestamp,
        })
        .collect();
    Ok(RatingsTable {
        rows,
        r_min,
        r_max,
        skipped,
    })
}

/// How a recommender turns the rating it sees into a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Behavior {
    /// The rating plus Gaussian noise of std `sigma`.
    Faithful { sigma: f64 },
    /// `1 − r`.
    Malicious,
    /// Malicious for `on_len` rows, then faithful (σ = 0) for `off_len`.
    Intermittent { on_len: u64, off_len: u64 },
}

impl Behavior {
    pub fn predict(&self, r: f64, t: u64, rng: &mut rng::StreamRng) -> f64 {
        let p = match *self {
            Behavior::Faithful { sigma } if sigma > 0.0 => {
                r + sigma * rng.sample::<f64, _>(StandardNormal)
            }
            Behavior::Faithful { .. } => r,
            Behavior::Malicious => 1.0 - r,
            Behavior::Intermittent { on_len, off_len } => {
                if (t - 1) % (on_len + off_len) < on_len {
                    1.0 - r
                } else {
                    r
                }
            }
        };
        p.clamp(0.0, 1.0)
    }

    fn violations(&self) -> Vec<String> {
        match *self {
            Behavior::Faithful { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                vec![format!("faithful sigma must be finite and >= 0, got {sigma}")]
            }
            Behavior::Intermittent { on_len, off_len } if on_len + off_len == 0 => {
                vec!["intermittent on_len + off_len must be >= 1".into()]
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub recommenders: usize,
    pub malicious_count: usize,
    pub malicious_behavior: Behavior,
    /// Noise of the faithful recommenders.
    pub sigma: f64,
    /// Probability that a row's rating reaches the recommenders replaced by
    /// a uniform draw. Scoring always uses the clean rating.
    pub noise_rate: f64,
    /// Explicit per-recommender behaviors; overrides the three fields
    /// above when set.
    pub behaviors: Option<Vec<Behavior>>,
    pub observers: usize,
    pub consumers: usize,
    pub network: NetworkSpec,
    pub visibility: Visibility,
    pub model: ModelKind,
    pub match_threshold: f64,
    pub explore_prob: f64,
    pub gamma: f64,
    pub eta_w: f64,
    pub eta_alpha: Option<f64>,
    pub epsilon_trust: f64,
    pub reset_period: Option<u64>,
    pub frequency_window: Option<usize>,
    /// Keep every `metrics_stride`-th point (the last row is always kept).
    pub metrics_stride: u64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            recommenders: 5,
            malicious_count: 0,
            malicious_behavior: Behavior::Malicious,
            sigma: 0.0,
            noise_rate: 0.0,
            behaviors: None,
            observers: 4,
            consumers: 4,
            network: NetworkSpec::Complete,
            visibility: Visibility::Full,
            model: ModelKind::Dol3,
            match_threshold: 0.25,
            explore_prob: 0.1,
            gamma: 0.9,
            eta_w: 0.1,
            eta_alpha: None,
            epsilon_trust: 0.5,
            reset_period: Some(100),
            frequency_window: None,
            metrics_stride: 1,
        }
    }
}

impl ReplayConfig {
    pub fn dol3_params(&self) -> Dol3Params {
        Dol3Params {
            gamma: self.gamma,
            eta_w: self.eta_w,
            eta_alpha: self.eta_alpha.unwrap_or(self.eta_w),
            reset_period: self.reset_period,
            epsilon_trust: self.epsilon_trust,
            log_clamp: DEFAULT_LOG_CLAMP,
        }
    }

    pub fn recommender_count(&self) -> usize {
        self.behaviors.as_ref().map_or(self.recommenders, Vec::len)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.recommender_count() < 1 {
            v.push("recommenders must be >= 1".into());
        }
        if self.behaviors.is_none() && self.malicious_count > self.recommenders {
            v.push(format!(
                "malicious_count {} exceeds recommenders {}",
                self.malicious_count, self.recommenders
            ));
        }
        if self.observers < 1 {
            v.push("observers must be >= 1".into());
        }
        if self.consumers < 1 {
            v.push("consumers must be >= 1".into());
        }
        for (name, x) in [
            ("noise_rate", self.noise_rate),
            ("match_threshold", self.match_threshold),
            ("explore_prob", self.explore_prob),
        ] {
            if !(0.0..=1.0).contains(&x) {
                v.push(format!("{name} must lie in [0,1], got {x}"));
            }
        }
        let mut behaviors = vec![self.malicious_behavior, Behavior::Faithful { sigma: self.sigma }];
        behaviors.extend(self.behaviors.iter().flatten().copied());
        for b in behaviors {
            v.extend(b.violations());
        }
        if self.metrics_stride < 1 {
            v.push("metrics_stride must be >= 1".into());
        }
        v.extend(self.dol3_params().violations());
        if self.observers >= 1 {
            v.extend(self.network.violations(self.observers));
            v.extend(self.visibility.violations(self.observers, self.recommender_count()));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayPoint {
    pub t: u64,
    pub rmse: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRun {
    pub run: u64,
    pub seed: u64,
    pub malicious_count: usize,
    pub noise_rate: f64,
    pub network_type: String,
    pub model: ModelKind,
    pub points: Vec<ReplayPoint>,
    pub rmse: f64,
    pub accuracy: f64,
}

/// Per-recommender behaviors, malicious ones at adversary-chosen slots.
pub fn assign_behaviors(config: &ReplayConfig, seed: u64) -> Vec<Behavior> {
    if let Some(b) = &config.behaviors {
        return b.clone();
    }
    let mut slots: Vec<usize> = (0..config.recommenders).collect();
    slots.shuffle(&mut rng::stream(seed, rng::ADVERSARY));
    let malicious: BTreeSet<usize> = slots.into_iter().take(config.malicious_count).collect();
    (0..config.recommenders)
        .map(|j| {
            if malicious.contains(&j) {
                config.malicious_behavior
            } else {
                Behavior::Faithful {
                    sigma: config.sigma,
                }
            }
        })
        .collect()
}

/// Indices of `table.rows` in replay order.
fn replay_order(table: &RatingsTable) -> Vec<usize> {
    let mut order: Vec<usize> = (0..table.rows.len()).collect();
    if table.rows.iter().all(|r| r.timestamp.is_some()) {
        order.sort_by_key(|&k| table.rows[k].timestamp);
    }
    order
}

pub fn replay(table: &RatingsTable, config: &ReplayConfig, seed: u64) -> Result<ReplayRun> {
    replay_run(table, config, seed, 0)
}

pub fn replay_run(
    table: &RatingsTable,
    config: &ReplayConfig,
    seed: u64,
    run: u64,
) -> Result<ReplayRun> {
    config.validate()?;
    if table.is_empty() {
        return Err(Error::Data("empty ratings table".into()));
    }
    let behaviors = assign_behaviors(config, seed);
    let n_rec = behaviors.len();
    let mut netgen = rng::stream(seed, rng::NETGEN);
    let graph = config.network.generate(config.observers, netgen.random())?;
    let network = build_interaction_network(
        config.observers,
        n_rec,
        config.consumers,
        &graph,
        &config.visibility,
        ConsumerAttach::RoundRobin,
        netgen.random(),
    )?;
    let params = config.dol3_params();
    let mut models = build_models(
        &network,
        |_| config.model,
        &params,
        &[],
        config.frequency_window,
        seed,
    )?;
    let consumer_observers: Vec<Vec<usize>> = (0..config.consumers)
        .map(|c| network.observers_of_consumer(c))
        .collect();
    let reachable: Vec<BTreeSet<usize>> = consumer_observers
        .iter()
        .map(|obs| obs.iter().flat_map(|&i| network.known_providers(i)).collect())
        .collect();

    let mut predict_rng = rng::stream(seed, PREDICT);
    let mut noise_rng = rng::stream(seed, DATA_NOISE);
    let mut explore_rng = rng::stream(seed, rng::EXPLORE);
    let mut running = RunningRmse::default();
    let mut points = Vec::new();
    let order = replay_order(table);
    let last = order.len() as u64;

    for (k, &row) in order.iter().enumerate() {
        let t = k as u64 + 1;
        let actual = table.rows[row].rating;
        for m in &mut models {
            m.begin_interaction(t);
        }
        exchange_round(&mut models, &network.lambda, t, |_, _| {})?;

        let seen = if noise_rng.random::<f64>() < config.noise_rate {
            noise_rng.random::<f64>()
        } else {
            actual
        };
        let predictions: Vec<f64> = behaviors
            .iter()
            .map(|b| b.predict(seen, t, &mut predict_rng))
            .collect();

        let consumer = consumer_at(t, config.consumers);
        let explore = explore_rng.random::<f64>() < config.explore_prob;
        let (chosen, _) = choose_provider(
            &models,
            &consumer_observers[consumer],
            &reachable[consumer],
            explore,
            &mut explore_rng,
        );
        let sale = chosen.map(|j| {
            let predicted = predictions[j];
            running.push(actual, predicted);
            SaleRecord {
                t,
                consumer,
                provider: j,
                outcome: u8::from((predicted - actual).abs() <= config.match_threshold),
            }
        });
        for m in &mut models {
            m.observe(t, sale.as_ref());
        }
        if t.is_multiple_of(config.metrics_stride) || t == last {
            let rmse = running.value();
            points.push(ReplayPoint {
                t,
                rmse,
                accuracy: accuracy(rmse)?,
            });
        }
    }
    let rmse = running.value();
    Ok(ReplayRun {
        run,
        seed,
        malicious_count: behaviors
            .iter()
            .filter(|b| !matches!(b, Behavior::Faithful { .. }))
            .count(),
        noise_rate: config.noise_rate,
        network_type: config.network.kind().to_string(),
        model: config.model,
        points,
        rmse,
        accuracy: accuracy(rmse)?,
    })
}

/// Values to sweep; an empty list keeps the base config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub malicious_counts: Vec<usize>,
    pub noise_rates: Vec<f64>,
    pub networks: Vec<NetworkSpec>,
    pub models: Vec<ModelKind>,
}

impl SweepGrid {
    /// Every cell of the grid, in row-major order.
    pub fn cells(&self, base: &ReplayConfig) -> Vec<ReplayConfig> {
        fn or_base<T: Clone>(v: &[T], base: T) -> Vec<T> {
            if v.is_empty() {
                vec![base]
            } else {
                v.to_vec()
            }
        }
        let mut cells = Vec::new();
        for network in or_base(&self.networks, base.network.clone()) {
            for model in or_base(&self.models, base.model) {
                for &malicious_count in &or_base(&self.malicious_counts, base.malicious_count) {
                    for &noise_rate in &or_base(&self.noise_rates, base.noise_rate) {
                        cells.push(ReplayConfig {
                            network: network.clone(),
                            model,
                            malicious_count,
                            noise_rate,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        cells
    }
}

/// Replays every grid cell on seeds `base_seed + r`, in parallel. Output
/// is ordered by cell, then run.
pub fn sweep(
    table: &RatingsTable,
    base: &ReplayConfig,
    grid: &SweepGrid,
    runs: u64,
    base_seed: u64,
) -> Result<Vec<ReplayRun>> {
    let cells = grid.cells(base);
    for c in &cells {
        c.validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..runs).map(move |r| (c, r)))
        .collect();
    jobs.into_par_iter()
        .map(|(c, r)| replay_run(table, &cells[c], base_seed.wrapping_add(r), r))
        .collect()
}

pub fn write_replay_csv<W: Write>(runs: &[ReplayRun], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(METRICS_CSV_HEADER.split(','))?;
    for run in runs {
        for p in &run.points {
            w.write_record([
                p.t.to_string(),
                g17(p.rmse),
                g17(p.accuracy),
                run.malicious_count.to_string(),
                g17(run.noise_rate),
                run.network_type.clone(),
                run.model.to_string(),
                run.run.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
