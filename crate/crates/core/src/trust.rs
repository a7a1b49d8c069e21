//! Per-observer DOL3 state: local exponential weights over observed
//! providers, social weights over neighbors' opinions, and the fusion of
//! both into a trust score per provider.
//!
//! Both weight families are stored as natural logarithms. A local weight
//! ŵ is kept as `λ = ln ŵ`, so the multiplicative update
//! `ŵ ← ŵ^γ · exp(η_w·k·s)` becomes `λ ← γλ + η_w·k·s`. Social weights
//! use `ln α̂`, with `-inf` standing for a weight of exactly zero.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IteratorRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{ModelKind, TrustModel};
use crate::error::{Error, Result};
use crate::fmt::{g17, one_based};
use crate::marketplace::SaleRecord;
use crate::rng::StreamRng;

pub const DEFAULT_LOG_CLAMP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dol3Params {
    /// Discount factor γ in (0,1].
    pub gamma: f64,
    /// Local learning rate η_w.
    pub eta_w: f64,
    /// Social learning rate η_α.
    pub eta_alpha: f64,
    /// Reset period T_p; `None` disables resets.
    pub reset_period: Option<u64>,
    /// Blind trust granted to a neighbor unless overridden.
    pub epsilon_trust: f64,
    /// Upper bound on `ln ŵ`.
    pub log_clamp: f64,
}

impl Default for Dol3Params {
    fn default() -> Self {
        Dol3Params {
            gamma: 0.9,
            eta_w: 0.1,
            eta_alpha: 0.1,
            reset_period: None,
            epsilon_trust: 1.0,
            log_clamp: DEFAULT_LOG_CLAMP,
        }
    }
}

impl Dol3Params {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            v.push(format!("gamma must satisfy gamma ∈ (0,1], got {}", self.gamma));
        }
        if !(self.eta_w > 0.0 && self.eta_w.is_finite()) {
            v.push(format!("eta_w must be > 0, got {}", self.eta_w));
        }
        if !(self.eta_alpha > 0.0 && self.eta_alpha.is_finite()) {
            v.push(format!("eta_alpha must be > 0, got {}", self.eta_alpha));
        }
        if self.reset_period == Some(0) {
            v.push("reset_period must be >= 1 (use null to disable)".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon_trust) {
            v.push(format!("epsilon_trust must lie in [0,1], got {}", self.epsilon_trust));
        }
        if !(self.log_clamp > 0.0 && self.log_clamp.is_finite()) {
            v.push(format!("log_clamp must be finite and > 0, got {}", self.log_clamp));
        }
        v
    }

    /// Largest local weight reachable under these parameters.
    pub fn weight_bound(&self) -> f64 {
        let limit = if self.gamma < 1.0 {
            (self.eta_w / (1.0 - self.gamma)).min(self.log_clamp)
        } else {
            self.log_clamp
        };
        limit.exp()
    }
}

/// `{t, sender, provider, ŵ}` broadcast to every neighbor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustMessage {
    pub t: u64,
    #[serde(with = "one_based")]
    pub sender: usize,
    #[serde(with = "one_based")]
    pub provider: usize,
    pub w: f64,
}

impl TrustMessage {
    pub const CSV_HEADER: &'static str = "t,sender,provider,w";

    pub fn to_csv_row(&self) -> String {
        format!("{},{},{},{}", self.t, self.sender + 1, self.provider + 1, g17(self.w))
    }

    pub fn from_csv_row(row: &str) -> Result<Self> {
        let fields: Vec<&str> = row.trim_end().split(',').collect();
        let bad = || Error::Data(format!("malformed trust message row {row:?}"));
        if fields.len() != 4 {
            return Err(bad());
        }
        let index = |s: &str| s.parse::<usize>().ok().and_then(|v| v.checked_sub(1));
        let w: f64 = fields[3].parse().map_err(|_| bad())?;
        if !(w > 0.0) {
            return Err(bad());
        }
        Ok(TrustMessage {
            t: fields[0].parse().map_err(|_| bad())?,
            sender: index(fields[1]).ok_or_else(bad)?,
            provider: index(fields[2]).ok_or_else(bad)?,
            w,
        })
    }
}

/// Fused trust scores: raw ẑ and normalized z per known provider.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedScores {
    pub raw: BTreeMap<usize, f64>,
    pub normalized: BTreeMap<usize, f64>,
}

impl FusedScores {
    pub fn z(&self, j: usize) -> f64 {
        self.normalized.get(&j).copied().unwrap_or(0.0)
    }

    /// Provider with the highest z, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        argmax_by(self.normalized.keys().copied(), |j| self.z(j))
    }
}

/// Highest-scoring candidate; ties go to the lowest index.
pub fn argmax_by<I, F>(candidates: I, score: F) -> Option<usize>
where
    I: IntoIterator<Item = usize>,
    F: Fn(usize) -> f64,
{
    let mut best: Option<(usize, f64)> = None;
    for j in candidates {
        let s = score(j);
        match best {
            Some((bj, bs)) if s < bs || (s == bs && j > bj) => {}
            _ => best = Some((j, s)),
        }
    }
    best.map(|(j, _)| j)
}

/// Explore with probability `explore_prob`, otherwise the argmax of z
/// over `available`. The exploration coin is always drawn.
pub fn recommend(
    scores: &FusedScores,
    available: &BTreeSet<usize>,
    explore_prob: f64,
    rng: &mut StreamRng,
) -> Result<usize> {
    if available.is_empty() {
        return Err(Error::Availability);
    }
    if rng.random::<f64>() < explore_prob {
        return Ok(*available.iter().choose(rng).expect("nonempty"));
    }
    Ok(argmax_by(available.iter().copied(), |j| scores.z(j)).expect("nonempty"))
}

/// Trust state of one observer `i`.
///
/// Opinion sources are `i` itself followed by its neighbors Λ_i, in
/// ascending order; per-provider social weights and received messages are
/// indexed by source position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverTrustState {
    pub id: usize,
    sources: Vec<usize>,
    source_omega: Vec<BTreeSet<usize>>,
    blind_trust: Vec<f64>,
    local_logw: BTreeMap<usize, f64>,
    social_logalpha: BTreeMap<usize, Vec<f64>>,
    received: BTreeMap<usize, Vec<Option<f64>>>,
}

impl ObserverTrustState {
    /// Fresh state with every ŵ and α̂ equal to 1.
    ///
    /// `neighbors` maps each l ∈ Λ_i to its provider set Ω_l. Every
    /// neighbor starts with blind trust `params.epsilon_trust`.
    pub fn new(
        id: usize,
        omega: BTreeSet<usize>,
        neighbors: &BTreeMap<usize, BTreeSet<usize>>,
        params: &Dol3Params,
    ) -> Self {
        let mut sources = vec![id];
        let mut source_omega = vec![omega.clone()];
        let mut blind_trust = vec![1.0];
        for (&l, om) in neighbors {
            if l == id {
                continue;
            }
            sources.push(l);
            source_omega.push(om.clone());
            blind_trust.push(params.epsilon_trust);
        }
        let mut state = ObserverTrustState {
            id,
            sources,
            source_omega,
            blind_trust,
            local_logw: BTreeMap::new(),
            social_logalpha: BTreeMap::new(),
            received: BTreeMap::new(),
        };
        state.reset();
        state
    }

    pub fn omega(&self) -> &BTreeSet<usize> {
        &self.source_omega[0]
    }

    pub fn neighbors(&self) -> &[usize] {
        &self.sources[1..]
    }

    /// Ω_i ∪ Ω_l over all neighbors l.
    pub fn known_providers(&self) -> BTreeSet<usize> {
        self.source_omega.iter().flatten().copied().collect()
    }

    fn source_pos(&self, l: usize) -> Option<usize> {
        if l == self.id {
            Some(0)
        } else {
            self.sources[1..].binary_search(&l).ok().map(|p| p + 1)
        }
    }

    /// Sets ε_trst for neighbor `l`. The self entry is fixed at 1.
    pub fn set_blind_trust(&mut self, l: usize, epsilon: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Parameter(format!(
                "blind trust must lie in [0,1], got {epsilon}"
            )));
        }
        match self.source_pos(l) {
            Some(0) => Err(Error::Parameter("self blind trust is fixed at 1".into())),
            Some(p) => {
                self.blind_trust[p] = epsilon;
                Ok(())
            }
            None => Err(Error::Index {
                index: l,
                set: "neighbors of the observer",
            }),
        }
    }

    pub fn blind_trust(&self, l: usize) -> Option<f64> {
        self.source_pos(l).map(|p| self.blind_trust[p])
    }

    /// Returns every weight to 1 and forgets received messages.
    pub fn reset(&mut self) {
        self.local_logw = self.omega().iter().map(|&j| (j, 0.0)).collect();
        let n = self.sources.len();
        self.social_logalpha = self
            .known_providers()
            .into_iter()
            .map(|j| (j, vec![0.0; n]))
            .collect();
        self.received = BTreeMap::new();
    }

    /// Resets when `t` is a multiple of the reset period. Returns whether
    /// a reset happened.
    pub fn reset_if_due(&mut self, t: u64, reset_period: Option<u64>) -> bool {
        match reset_period {
            Some(tp) if tp > 0 && t.is_multiple_of(tp) => {
                self.reset();
                true
            }
            _ => false,
        }
    }

    /// λ_ij = ln ŵ_ij, for j ∈ Ω_i.
    pub fn log_weight(&self, j: usize) -> Option<f64> {
        self.local_logw.get(&j).copied()
    }

    /// ŵ_ij, for j ∈ Ω_i.
    pub fn weight(&self, j: usize) -> Option<f64> {
        self.log_weight(j).map(f64::exp)
    }

    /// ln α̂_lj^i.
    pub fn log_social(&self, l: usize, j: usize) -> Option<f64> {
        let p = self.source_pos(l)?;
        self.social_logalpha.get(&j).map(|v| v[p])
    }

    /// Last ŵ_lj received from neighbor `l`.
    pub fn received_weight(&self, l: usize, j: usize) -> Option<f64> {
        let p = self.source_pos(l)?;
        self.received.get(&j).and_then(|v| v[p])
    }

    /// One message per provider in Ω_i carrying the current ŵ_ij.
    pub fn emit_messages(&self, t: u64) -> Vec<TrustMessage> {
        self.local_logw
            .iter()
            .map(|(&j, &lw)| TrustMessage {
                t,
                sender: self.id,
                provider: j,
                w: lw.exp(),
            })
            .collect()
    }

    /// Local learning for provider `j`:
    /// `λ ← clamp(γλ + η_w·k·s, 0, log_clamp)`.
    pub fn local_update(&mut self, j: usize, s: u8, k: u32, params: &Dol3Params) -> Result<()> {
        let lw = self.local_logw.get_mut(&j).ok_or(Error::Index {
            index: j,
            set: "providers observed by the observer",
        })?;
        let gain = params.eta_w * f64::from(k) * f64::from(s);
        *lw = (params.gamma * *lw + gain).clamp(0.0, params.log_clamp);
        Ok(())
    }

    /// Learning phase for one interaction: every provider in Ω_i is
    /// discounted, and the one whose sale was observed (if any) also gains
    /// `η_w · s`.
    pub fn learn(&mut self, sale: Option<(usize, u8)>, params: &Dol3Params) {
        let observed = sale.filter(|(j, _)| self.local_logw.contains_key(j));
        let omega: Vec<usize> = self.local_logw.keys().copied().collect();
        for j in omega {
            let (s, k) = match observed {
                Some((sold, s)) if sold == j => (s, 1),
                _ => (0, 0),
            };
            self.local_update(j, s, k, params).expect("j drawn from Ω_i");
        }
    }

    /// Stores the neighbors' broadcasts for this interaction.
    pub fn ingest(&mut self, msgs: &[TrustMessage]) -> Result<()> {
        let n = self.sources.len();
        for m in msgs {
            let p = match self.source_pos(m.sender) {
                Some(p) if p > 0 => p,
                _ => {
                    return Err(Error::Protocol(format!(
                        "observer {} received a message from non-neighbor {}",
                        self.id + 1,
                        m.sender + 1
                    )))
                }
            };
            if !(m.w > 0.0) || !m.w.is_finite() {
                return Err(Error::Protocol(format!(
                    "non-positive trust weight {} from observer {}",
                    m.w,
                    m.sender + 1
                )));
            }
            if !self.source_omega[p].contains(&m.provider) {
                return Err(Error::Protocol(format!(
                    "observer {} reported on provider {} outside its provider set",
                    m.sender + 1,
                    m.provider + 1
                )));
            }
            self.received.entry(m.provider).or_insert_with(|| vec![None; n])[p] = Some(m.w);
        }
        Ok(())
    }

    /// Social learning layer. For every source l ∈ {i} ∪ Λ_i and every
    /// known provider j:
    ///
    /// * ε_l when (l = i and j ∈ Ω_i) or j is seen by l but not by i,
    /// * `α̂^γ · exp(-η_α |ŵ_ij - ŵ_lj|)` when both see j,
    /// * 0 otherwise.
    pub fn update_social(&mut self, params: &Dol3Params) {
        let own = &self.source_omega[0];
        for (&j, logs) in self.social_logalpha.iter_mut() {
            let own_sees = own.contains(&j);
            for (p, log_alpha) in logs.iter_mut().enumerate() {
                let source_sees = self.source_omega[p].contains(&j);
                *log_alpha = if p == 0 {
                    if own_sees {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else if !source_sees {
                    f64::NEG_INFINITY
                } else if !own_sees {
                    self.blind_trust[p].ln()
                } else {
                    match self.received.get(&j).and_then(|r| r[p]) {
                        Some(w_l) => {
                            let w_i = self.local_logw[&j].exp();
                            params.gamma * *log_alpha - params.eta_alpha * (w_i - w_l).abs()
                        }
                        None => *log_alpha,
                    }
                };
            }
        }
    }

    pub fn ingest_and_update_social(
        &mut self,
        msgs: &[TrustMessage],
        params: &Dol3Params,
    ) -> Result<()> {
        self.ingest(msgs)?;
        self.update_social(params);
        Ok(())
    }

    /// Normalized social weights α_lj^i for provider `j`, as
    /// `(l, α)` pairs. All zero when every α̂ is zero.
    pub fn normalize_social(&self, j: usize) -> Vec<(usize, f64)> {
        let Some(logs) = self.social_logalpha.get(&j) else {
            return Vec::new();
        };
        let alphas = normalize_logs(logs);
        self.sources.iter().copied().zip(alphas).collect()
    }

    /// Trust fusion: `ẑ_ij = Σ_l α_lj ŵ_lj` over sources, normalized over
    /// known providers. Sources without a weight for `j` contribute 0.
    pub fn fuse(&self) -> FusedScores {
        let mut raw = BTreeMap::new();
        for (&j, logs) in &self.social_logalpha {
            let alphas = normalize_logs(logs);
            let mut z = 0.0;
            for (p, a) in alphas.into_iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let w = if p == 0 {
                    self.weight(j)
                } else {
                    self.received.get(&j).and_then(|r| r[p])
                };
                z += a * w.unwrap_or(0.0);
            }
            raw.insert(j, z);
        }
        let total: f64 = raw.values().sum();
        let normalized = raw
            .iter()
            .map(|(&j, &z)| (j, if total > 0.0 { z / total } else { 0.0 }))
            .collect();
        FusedScores { raw, normalized }
    }

    /// Registers a newly arrived provider `j` observed by the sources in
    /// `observed_by`. Its weights start at 1.
    pub fn add_provider(&mut self, j: usize, observed_by: &BTreeSet<usize>) {
        let mut relevant = false;
        for (p, &l) in self.sources.iter().enumerate() {
            if observed_by.contains(&l) {
                self.source_omega[p].insert(j);
                relevant = true;
            }
        }
        if observed_by.contains(&self.id) {
            self.local_logw.insert(j, 0.0);
        }
        if relevant {
            self.social_logalpha
                .insert(j, vec![0.0; self.sources.len()]);
        }
    }
}

/// `exp(a_l) / Σ exp(a_l')` evaluated stably; all zeros when every entry
/// is `-inf`.
fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; logs.len()];
    }
    let exps: Vec<f64> = logs.iter().map(|&a| (a - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// DOL3 behind the common model interface.
#[derive(Debug, Clone)]
pub struct Dol3Model {
    pub state: ObserverTrustState,
    pub params: Dol3Params,
    fused: FusedScores,
}

impl Dol3Model {
    pub fn new(state: ObserverTrustState, params: Dol3Params) -> Self {
        let fused = state.fuse();
        Dol3Model {
            state,
            params,
            fused,
        }
    }

    pub fn fused(&self) -> &FusedScores {
        &self.fused
    }
}

impl TrustModel for Dol3Model {
    fn kind(&self) -> ModelKind {
        ModelKind::Dol3
    }

    fn begin_interaction(&mut self, t: u64) -> bool {
        let reset = self.state.reset_if_due(t, self.params.reset_period);
        if reset {
            self.fused = self.state.fuse();
        }
        reset
    }

    fn emit(&self, t: u64) -> Vec<TrustMessage> {
        self.state.emit_messages(t)
    }

    fn exchange(&mut self, _t: u64, inbox: &[TrustMessage]) -> Result<()> {
        self.state.ingest_and_update_social(inbox, &self.params)?;
        self.fused = self.state.fuse();
        Ok(())
    }

    fn observe(&mut self, _t: u64, sale: Option<&SaleRecord>) {
        self.state
            .learn(sale.map(|r| (r.provider, r.outcome)), &self.params);
    }

    fn score(&self, provider: usize) -> f64 {
        self.fused.z(provider)
    }

    fn scores(&self) -> BTreeMap<usize, f64> {
        self.fused.normalized.clone()
    }

    fn recommend(&self, available: &BTreeSet<usize>, rng: &mut StreamRng) -> Result<usize> {
        recommend(&self.fused, available, 0.0, rng)
    }

    fn add_provider(&mut self, provider: usize, observed_by: &BTreeSet<usize>) {
        self.state.add_provider(provider, observed_by);
        self.fused = self.state.fuse();
    }

    fn local_weights(&self) -> BTreeMap<usize, f64> {
        self.state
            .omega()
            .iter()
            .filter_map(|&j| self.state.weight(j).map(|w| (j, w)))
            .collect()
    }

    fn as_dol3(&self) -> Option<&ObserverTrustState> {
        Some(&self.state)
    }
}
