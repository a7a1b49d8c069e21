//! Providers, their service-quality processes and the active/idle stock
//! cycle, plus the round-robin consumer schedule.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::one_based;

/// Consumer that purchases at interaction `t` (both 0-based in, 1-based
/// time): consumer `i` buys at `t = (n-1) * N_c + i`.
pub fn consumer_at(t: u64, consumers: usize) -> usize {
    debug_assert!(t >= 1 && consumers >= 1);
    ((t - 1) % consumers as u64) as usize
}

/// Evolution of a provider's promise quotient p_j(t).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum QualityProcess {
    Constant {
        p: f64,
    },
    /// `levels[floor((t-1)/period) mod len]`.
    PeriodicSwitch {
        period: u64,
        levels: Vec<f64>,
    },
    /// Gaussian random walk clamped to [0,1], starting at `p0` at t=1.
    RandomWalk {
        p0: f64,
        sigma: f64,
    },
    /// `p_honest` for the first `on_len` ticks of every `on_len + off_len`
    /// cycle, `p_deceptive` for the rest.
    IntermittentMalicious {
        p_honest: f64,
        p_deceptive: f64,
        on_len: u64,
        off_len: u64,
    },
}

impl QualityProcess {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut prob = |name: &str, p: f64| {
            if !(0.0..=1.0).contains(&p) {
                v.push(format!("{name} must lie in [0,1], got {p}"));
            }
        };
        match self {
            QualityProcess::Constant { p } => prob("constant p", *p),
            QualityProcess::PeriodicSwitch { period, levels } => {
                levels.iter().for_each(|&p| prob("periodic_switch level", p));
                if *period == 0 {
                    v.push("periodic_switch period must be at least 1".into());
                }
                if levels.is_empty() {
                    v.push("periodic_switch needs at least one level".into());
                }
            }
            QualityProcess::RandomWalk { p0, sigma } => {
                prob("random_walk p0", *p0);
                if !(*sigma >= 0.0 && sigma.is_finite()) {
                    v.push(format!("random_walk sigma must be finite and >= 0, got {sigma}"));
                }
            }
            QualityProcess::IntermittentMalicious {
                p_honest,
                p_deceptive,
                on_len,
                off_len,
            } => {
                prob("intermittent p_honest", *p_honest);
                prob("intermittent p_deceptive", *p_deceptive);
                if on_len + off_len == 0 {
                    v.push("intermittent cycle length must be at least 1".into());
                }
            }
        }
        v
    }
}

/// A quality process together with the state needed to evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityState {
    pub process: QualityProcess,
    last_t: u64,
    value: f64,
}

impl QualityState {
    pub fn new(process: QualityProcess) -> Self {
        let value = match &process {
            QualityProcess::RandomWalk { p0, .. } => *p0,
            _ => 0.0,
        };
        QualityState {
            process,
            last_t: 1,
            value,
        }
    }

    /// p_j(t). The random walk advances once per interaction count, so
    /// `t` must be non-decreasing across calls; repeated calls with the
    /// same `t` return the same value without drawing.
    pub fn quality_at<R: Rng + ?Sized>(&mut self, t: u64, rng: &mut R) -> f64 {
        match &self.process {
            QualityProcess::Constant { p } => *p,
            QualityProcess::PeriodicSwitch { period, levels } => {
                levels[(((t - 1) / period) % levels.len() as u64) as usize]
            }
            QualityProcess::RandomWalk { sigma, .. } => {
                if *sigma > 0.0 {
                    let step = Normal::new(0.0, *sigma).expect("validated sigma");
                    while self.last_t < t {
                        self.value = (self.value + step.sample(rng)).clamp(0.0, 1.0);
                        self.last_t += 1;
                    }
                }
                self.value
            }
            QualityProcess::IntermittentMalicious {
                p_honest,
                p_deceptive,
                on_len,
                off_len,
            } => {
                if (t - 1) % (on_len + off_len) < *on_len {
                    *p_honest
                } else {
                    *p_deceptive
                }
            }
        }
    }
}

/// Realizes a promise quotient: 1 with probability `p`, else 0.
pub fn sample_sale<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<u8> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!("sale probability must lie in [0,1], got {p}")));
    }
    Ok(outcome_from_draw(p, rng.random::<f64>()))
}

/// Outcome for a uniform draw `u` in [0,1).
pub fn outcome_from_draw(p: f64, u: f64) -> u8 {
    u8::from(u < p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Active,
    Idle,
}

/// One purchase: consumer bought from provider at interaction `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaleRecord {
    pub t: u64,
    #[serde(with = "one_based")]
    pub consumer: usize,
    #[serde(with = "one_based")]
    pub provider: usize,
    pub outcome: u8,
}

/// Unlimited stock.
pub const UNLIMITED_STOCK: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderState {
    pub id: usize,
    pub quality: QualityState,
    pub mode: Mode,
    pub sales: u64,
    pub idle_steps: u64,
    pub stock_max: u64,
    pub refill: u64,
    pub active_since: u64,
}

impl ProviderState {
    pub fn new(id: usize, process: QualityProcess, stock_max: u64, refill: u64) -> Self {
        ProviderState {
            id,
            quality: QualityState::new(process),
            mode: Mode::Active,
            sales: 0,
            idle_steps: 0,
            stock_max: stock_max.max(1),
            refill,
            active_since: 1,
        }
    }

    pub fn is_active(&self) -> bool {
        self.mode == Mode::Active
    }

    /// Counts a sale at `t`. Hitting `stock_max` sends the provider idle
    /// for `refill` ticks; with `refill == 0` it restocks immediately.
    pub fn record_sale(&mut self, t: u64) -> Result<()> {
        if self.mode != Mode::Active {
            return Err(Error::State(format!(
                "provider {} sold at t={t} while idle",
                self.id + 1
            )));
        }
        self.sales += 1;
        if self.sales >= self.stock_max {
            self.sales = 0;
            self.idle_steps = 0;
            if self.refill == 0 {
                self.active_since = t;
            } else {
                self.mode = Mode::Idle;
            }
        }
        Ok(())
    }

    /// One interaction tick spent idle. No-op while active.
    pub fn tick_idle(&mut self, t: u64) {
        if self.mode != Mode::Idle {
            return;
        }
        self.idle_steps += 1;
        if self.idle_steps >= self.refill {
            self.mode = Mode::Active;
            self.sales = 0;
            self.idle_steps = 0;
            self.active_since = t + 1;
        }
    }
}

/// Members of `allowed` whose provider is currently active.
pub fn active_providers(states: &[ProviderState], allowed: &BTreeSet<usize>) -> BTreeSet<usize> {
    allowed
        .iter()
        .copied()
        .filter(|&j| states.get(j).is_some_and(ProviderState::is_active))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn consumer_schedule() {
        assert_eq!(consumer_at(1, 3), 0);
        assert_eq!(consumer_at(5, 3), 1);
        assert_eq!(consumer_at(6, 3), 2);
    }

    proptest! {
        #[test]
        fn consumer_schedule_cycles(nc in 1usize..50, n in 1u64..20) {
            let period: Vec<usize> = ((n - 1) * nc as u64 + 1..=n * nc as u64)
                .map(|t| consumer_at(t, nc))
                .collect();
            prop_assert_eq!(period, (0..nc).collect::<Vec<_>>());
        }
    }

    #[test]
    fn quality_process_values() {
        let mut r = rng::stream(0, rng::QUALITY);
        let mut c = QualityState::new(QualityProcess::Constant { p: 0.7 });
        assert_eq!(c.quality_at(999, &mut r), 0.7);
        let mut s = QualityState::new(QualityProcess::PeriodicSwitch {
            period: 100,
            levels: vec![0.9, 0.1],
        });
        assert_eq!(s.quality_at(100, &mut r), 0.9);
        assert_eq!(s.quality_at(150, &mut r), 0.1);
        assert_eq!(s.quality_at(201, &mut r), 0.9);
        let mut m = QualityState::new(QualityProcess::IntermittentMalicious {
            p_honest: 0.8,
            p_deceptive: 0.2,
            on_len: 2,
            off_len: 1,
        });
        let seq: Vec<f64> = (1..=6).map(|t| m.quality_at(t, &mut r)).collect();
        assert_eq!(seq, vec![0.8, 0.8, 0.2, 0.8, 0.8, 0.2]);
    }

    #[test]
    fn random_walk_stays_in_unit_interval() {
        let mut r = rng::stream(1, rng::QUALITY);
        let mut w = QualityState::new(QualityProcess::RandomWalk { p0: 0.5, sigma: 0.05 });
        assert_eq!(w.quality_at(1, &mut r), 0.5);
        for t in 2..=100_000 {
            let p = w.quality_at(t, &mut r);
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn random_walk_is_a_function_of_t() {
        let mut a = QualityState::new(QualityProcess::RandomWalk { p0: 0.5, sigma: 0.1 });
        let mut b = a.clone();
        let (mut ra, mut rb) = (rng::stream(3, rng::QUALITY), rng::stream(3, rng::QUALITY));
        // Querying intermediate steps, or the same step twice, must not
        // change the trajectory.
        for t in 1..=50 {
            a.quality_at(t, &mut ra);
            a.quality_at(t, &mut ra);
        }
        assert_eq!(a.quality_at(50, &mut ra), b.quality_at(50, &mut rb));
    }

    #[test]
    fn sale_sampling() {
        let mut r = rng::stream(2, rng::OUTCOME);
        assert!((0..1000).all(|_| sample_sale(1.0, &mut r).unwrap() == 1));
        assert!((0..1000).all(|_| sample_sale(0.0, &mut r).unwrap() == 0));
        assert!(sample_sale(1.2, &mut r).is_err());
        assert!(sample_sale(-0.01, &mut r).is_err());

        let n = 100_000;
        let hits: u32 = (0..n).map(|_| u32::from(sample_sale(0.5, &mut r).unwrap())).sum();
        assert!((f64::from(hits) / f64::from(n) - 0.5).abs() < 0.01);

        let n = 1_000_000;
        let hits: u32 = (0..n).map(|_| u32::from(sample_sale(0.3, &mut r).unwrap())).sum();
        let freq = f64::from(hits) / f64::from(n);
        assert!((0.2986..=0.3014).contains(&freq), "freq={freq}");
    }

    fn provider(stock: u64, refill: u64) -> ProviderState {
        ProviderState::new(0, QualityProcess::Constant { p: 1.0 }, stock, refill)
    }

    #[test]
    fn record_sale_threshold() {
        let mut p = provider(2, 3);
        p.record_sale(1).unwrap();
        assert_eq!((p.sales, p.mode), (1, Mode::Active));
        p.record_sale(2).unwrap();
        assert_eq!((p.mode, p.idle_steps, p.sales), (Mode::Idle, 0, 0));
        assert!(matches!(p.record_sale(3), Err(Error::State(_))));
    }

    #[test]
    fn idle_ticks_until_refilled() {
        let mut p = provider(1, 3);
        p.record_sale(1).unwrap();
        p.tick_idle(2);
        p.tick_idle(3);
        assert_eq!(p.mode, Mode::Idle);
        p.tick_idle(4);
        assert_eq!(p.mode, Mode::Active);

        let mut instant = provider(1, 0);
        instant.record_sale(1).unwrap();
        assert_eq!(instant.mode, Mode::Active);

        let mut active = provider(5, 1);
        active.tick_idle(1);
        assert_eq!((active.mode, active.idle_steps), (Mode::Active, 0));
    }

    #[test]
    fn active_idle_full_trace() {
        // Engine order per tick: idle ticks first, then the sale.
        let mut p = provider(2, 3);
        let mut modes = Vec::new();
        for t in 1..=12 {
            modes.push(p.mode);
            p.tick_idle(t);
            if modes.last() == Some(&Mode::Active) {
                p.record_sale(t).unwrap();
            }
        }
        use Mode::*;
        assert_eq!(
            modes,
            vec![Active, Active, Idle, Idle, Idle, Active, Active, Idle, Idle, Idle, Active, Active]
        );
    }

    #[test]
    fn active_provider_filter() {
        let mut states: Vec<ProviderState> = (0..3)
            .map(|j| ProviderState::new(j, QualityProcess::Constant { p: 0.5 }, 1, 5))
            .collect();
        let all: BTreeSet<usize> = (0..3).collect();
        assert_eq!(active_providers(&states, &all), all);
        states[1].record_sale(1).unwrap();
        assert_eq!(
            active_providers(&states, &[1, 2].into_iter().collect()),
            [2].into_iter().collect()
        );
        for s in &mut states {
            if s.is_active() {
                s.record_sale(1).unwrap();
            }
        }
        assert!(active_providers(&states, &all).is_empty());
    }

    proptest! {
        #[test]
        fn quality_always_in_unit_interval(
            p in 0.0..=1.0f64,
            q in 0.0..=1.0f64,
            period in 1u64..50,
            on in 0u64..10,
            off in 1u64..10,
            sigma in 0.0..0.5f64,
            t in 1u64..2000,
        ) {
            let mut r = rng::stream(t, rng::QUALITY);
            for proc in [
                QualityProcess::Constant { p },
                QualityProcess::PeriodicSwitch { period, levels: vec![p, q] },
                QualityProcess::RandomWalk { p0: p, sigma },
                QualityProcess::IntermittentMalicious { p_honest: p, p_deceptive: q, on_len: on, off_len: off },
            ] {
                prop_assert!(proc.violations().is_empty());
                let v = QualityState::new(proc).quality_at(t, &mut r);
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }

        #[test]
        fn stock_cycle_is_exact(stock in 1u64..6, refill in 0u64..6, cycles in 1u64..5) {
            let mut p = provider(stock, refill);
            let mut trace = Vec::new();
            let horizon = cycles * (stock + refill);
            for t in 1..=horizon {
                let active = p.is_active();
                trace.push(active);
                p.tick_idle(t);
                if active {
                    p.record_sale(t).unwrap();
                }
            }
            let expected: Vec<bool> = (0..horizon)
                .map(|k| k % (stock + refill) < stock)
                .collect();
            prop_assert_eq!(trace, expected);
        }
    }
}
