//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach the output.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dol3::config::{AdversarySpec, ArrivalSpec, BlindTrustOverride, CorruptionMode, SimConfig};
use dol3::engine::{run_episode, Episode};
use dol3::graphgen::{NetworkSpec, Visibility};
use dol3::marketplace::QualityProcess;
use dol3::metrics::{accuracy, rmse};
use dol3::trust::{Dol3Params, ObserverTrustState, TrustMessage};
use dol3::ModelKind;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit: Duration) -> (bool, String) {
    let dt = start.elapsed();
    (dt < limit, format!("{:.2}s (limit {}s)", dt.as_secs_f64(), limit.as_secs()))
}

// 1 ---------------------------------------------------------------------

fn random_config(rng: &mut StdRng) -> SimConfig {
    let observers = rng.random_range(1..=10);
    let providers = rng.random_range(1..=8);
    let network = match rng.random_range(0..6) {
        0 => NetworkSpec::Empty,
        1 => NetworkSpec::Complete,
        2 => NetworkSpec::ErdosRenyi { p: rng.random() },
        3 if observers >= 3 => NetworkSpec::WattsStrogatz { k: 2, beta: rng.random() },
        4 if observers >= 2 => NetworkSpec::BarabasiAlbert { m: 1 },
        5 if observers >= 3 => NetworkSpec::RegularHomophily {
            d: 2,
            groups: rng.random_range(1..=3),
            bias: rng.random(),
        },
        _ => NetworkSpec::Complete,
    };
    let visibility = if rng.random_bool(0.5) {
        Visibility::Full
    } else {
        Visibility::Random(rng.random_range(1..=providers))
    };
    let adversary = rng.random_bool(0.4).then(|| AdversarySpec {
        malicious_fraction: rng.random_range(0.0..0.5),
        on_len: rng.random_range(1..10),
        off_len: rng.random_range(0..10),
        mode: [CorruptionMode::Invert, CorruptionMode::Random, CorruptionMode::ConstantHigh]
            [rng.random_range(0..3)],
        noisy_data_rate: rng.random_range(0.0..0.3),
        ..AdversarySpec::default()
    });
    let arrivals = if rng.random_bool(0.3) {
        vec![ArrivalSpec {
            t: rng.random_range(1..=100),
            process: QualityProcess::Constant { p: rng.random() },
            observers: Vec::new(),
        }]
    } else {
        Vec::new()
    };
    SimConfig {
        observers,
        providers,
        consumers: rng.random_range(1..=12),
        iterations: 100,
        reset_period: rng.random_bool(0.7).then(|| rng.random_range(1..=50)),
        explore_prob: rng.random_range(0.0..0.3),
        stock_max: rng.random_bool(0.5).then(|| rng.random_range(1..=4)),
        refill: rng.random_range(0..=4),
        eta_w: rng.random_range(0.01..1.0),
        eta_alpha: Some(rng.random_range(0.01..1.0)),
        gamma: rng.random_range(0.5..=1.0),
        epsilon_trust: rng.random(),
        network,
        visibility,
        provider_processes: vec![QualityProcess::RandomWalk { p0: rng.random(), sigma: 0.05 }],
        adversary,
        arrivals,
        ..SimConfig::default()
    }
}

fn normalization() -> Outcome {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(1);
    let (mut social_checks, mut fused_checks, mut worst) = (0u64, 0u64, 0.0f64);
    for seed in 0..1000 {
        let cfg = random_config(&mut rng);
        cfg.validate().map_err(|e| format!("generated invalid config: {e}"))?;
        let mut ep = Episode::new(&cfg, seed).map_err(|e| e.to_string())?;
        while !ep.is_done() {
            ep.step().map_err(|e| e.to_string())?;
            for m in ep.models() {
                let s = m.as_dol3().expect("all observers run DOL3");
                for j in s.known_providers() {
                    let alphas = s.normalize_social(j);
                    let sum: f64 = alphas.iter().map(|(_, a)| a).sum();
                    if alphas.iter().any(|&(_, a)| a > 0.0) {
                        worst = worst.max((sum - 1.0).abs());
                        social_checks += 1;
                    }
                }
                let fused = s.fuse();
                if fused.raw.values().sum::<f64>() > 0.0 {
                    worst = worst.max((fused.normalized.values().sum::<f64>() - 1.0).abs());
                    fused_checks += 1;
                }
            }
        }
    }
    let (fast, time) = within(start, Duration::from_secs(10));
    check(
        worst <= 1e-9 && fast && social_checks > 0 && fused_checks > 0,
        format!("{social_checks} social and {fused_checks} fused sums, max |sum-1| = {worst:.1e}, {time}"),
    )
}

// 2 ---------------------------------------------------------------------

/// Multiplicative-domain observer used as the reference.
struct Direct {
    omega: BTreeSet<usize>,
    sources: Vec<(usize, BTreeSet<usize>, f64)>,
    w: BTreeMap<usize, f64>,
    alpha: BTreeMap<(usize, usize), f64>,
    heard: BTreeMap<(usize, usize), f64>,
}

impl Direct {
    fn new(omega: &BTreeSet<usize>, sources: Vec<(usize, BTreeSet<usize>, f64)>) -> Self {
        let mut d = Direct {
            omega: omega.clone(),
            sources,
            w: BTreeMap::new(),
            alpha: BTreeMap::new(),
            heard: BTreeMap::new(),
        };
        d.reset();
        d
    }

    fn known(&self) -> BTreeSet<usize> {
        self.sources.iter().flat_map(|(_, om, _)| om.iter().copied()).collect()
    }

    fn reset(&mut self) {
        self.w = self.omega.iter().map(|&j| (j, 1.0)).collect();
        self.alpha = self
            .known()
            .into_iter()
            .flat_map(|j| self.sources.iter().map(move |(l, _, _)| ((*l, j), 1.0)))
            .collect();
        self.heard.clear();
    }

    fn learn(&mut self, sale: Option<(usize, u8)>, p: &Dol3Params) {
        for (&j, w) in self.w.iter_mut() {
            let ks = match sale {
                Some((sold, s)) if sold == j => f64::from(s),
                _ => 0.0,
            };
            *w = (w.powf(p.gamma) * (p.eta_w * ks).exp()).clamp(1.0, p.log_clamp.exp());
        }
    }

    fn social(&mut self, p: &Dol3Params) {
        let me = self.sources[0].0;
        for j in self.known() {
            for (l, om, eps) in &self.sources {
                let a = self.alpha.get_mut(&(*l, j)).unwrap();
                let mine = self.omega.contains(&j);
                *a = if *l == me {
                    if mine {
                        1.0
                    } else {
                        0.0
                    }
                } else if !om.contains(&j) {
                    0.0
                } else if !mine {
                    *eps
                } else if let Some(&wl) = self.heard.get(&(*l, j)) {
                    a.powf(p.gamma) * (-p.eta_alpha * (self.w[&j] - wl).abs()).exp()
                } else {
                    *a
                };
            }
        }
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

fn oracle_sequence(rng: &mut StdRng) -> Result<(), String> {
    let n_prov = rng.random_range(1..=6);
    let pick = |rng: &mut StdRng| -> BTreeSet<usize> {
        let s: BTreeSet<usize> = (0..n_prov).filter(|_| rng.random_bool(0.5)).collect();
        if s.is_empty() {
            BTreeSet::from([rng.random_range(0..n_prov)])
        } else {
            s
        }
    };
    let params = Dol3Params {
        gamma: rng.random_range(0.3..=1.0),
        eta_w: rng.random_range(0.01..2.0),
        eta_alpha: rng.random_range(0.01..2.0),
        reset_period: None,
        epsilon_trust: rng.random(),
        log_clamp: if rng.random_bool(0.3) { rng.random_range(0.1..1.0) } else { 50.0 },
    };
    let omega = pick(rng);
    let neighbors: BTreeMap<usize, BTreeSet<usize>> =
        (1..=rng.random_range(0..=3)).map(|l| (l, pick(rng))).collect();
    let mut state = ObserverTrustState::new(0, omega.clone(), &neighbors, &params);
    let mut sources = vec![(0, omega.clone(), 1.0)];
    for (&l, om) in &neighbors {
        let eps = if rng.random_bool(0.5) { rng.random() } else { params.epsilon_trust };
        state.set_blind_trust(l, eps).map_err(|e| e.to_string())?;
        sources.push((l, om.clone(), eps));
    }
    let mut direct = Direct::new(&omega, sources);

    for step in 0..rng.random_range(1..=12) {
        match rng.random_range(0..10) {
            0 => {
                state.reset();
                direct.reset();
            }
            1..=5 => {
                let sale = rng
                    .random_bool(0.8)
                    .then(|| (rng.random_range(0..n_prov), u8::from(rng.random_bool(0.6))));
                state.learn(sale, &params);
                direct.learn(sale, &params);
            }
            _ => {
                let mut msgs = Vec::new();
                for (&l, om) in &neighbors {
                    for &j in om {
                        if rng.random_bool(0.7) {
                            let w = rng.random_range(0.05..4.0);
                            msgs.push(TrustMessage { t: step, sender: l, provider: j, w });
                            direct.heard.insert((l, j), w);
                        }
                    }
                }
                state.ingest_and_update_social(&msgs, &params).map_err(|e| e.to_string())?;
                direct.social(&params);
            }
        }
        for (&j, &w) in &direct.w {
            let got = state.weight(j).ok_or("missing local weight")?;
            if !close(got, w) {
                return Err(format!("w[{j}] log-domain {got} vs direct {w}"));
            }
        }
        for (&(l, j), &a) in &direct.alpha {
            let got = state.log_social(l, j).ok_or("missing social weight")?.exp();
            if !close(got, a) {
                return Err(format!("alpha[{l}][{j}] log-domain {got} vs direct {a}"));
            }
        }
    }
    Ok(())
}

fn log_domain_oracle() -> Outcome {
    let mut rng = StdRng::seed_from_u64(2);
    for n in 0..10_000 {
        oracle_sequence(&mut rng).map_err(|e| format!("sequence {n}: {e}"))?;
    }
    Ok("10000 sequences agree within relative 1e-9".into())
}

// 3 ---------------------------------------------------------------------

/// Top provider by the scores the model fused this interaction, lowest
/// index on ties.
fn argmax_score(ep: &Episode, n: usize) -> Option<usize> {
    let m = &ep.models()[0];
    (0..n).fold(None, |b, j| match b {
        Some(k) if m.score(k) >= m.score(j) => Some(k),
        _ => Some(j),
    })
}

fn stationary_identification() -> Outcome {
    let start = Instant::now();
    let ps = [0.9, 0.7, 0.5, 0.3, 0.1];
    let best = (0..ps.len()).fold(0, |b, j| if ps[j] > ps[b] { j } else { b });
    let cfg = SimConfig {
        providers: 5,
        observers: 1,
        iterations: 500,
        visibility: Visibility::Full,
        gamma: 0.9,
        eta_w: 0.1,
        reset_period: None,
        explore_prob: 0.05,
        provider_processes: ps.iter().map(|&p| QualityProcess::Constant { p }).collect(),
        ..SimConfig::default()
    };
    let hits = (0..100u64)
        .into_par_iter()
        .filter(|&seed| {
            let mut ep = Episode::new(&cfg, seed).unwrap();
            while !ep.is_done() {
                ep.step().unwrap();
            }
            argmax_score(&ep, ps.len()) == Some(best)
        })
        .count();
    let (fast, time) = within(start, Duration::from_secs(5));
    check(hits >= 95 && fast, format!("argmax = provider {} in {hits}/100 seeds, {time}", best + 1))
}

// 4 ---------------------------------------------------------------------

fn recovery() -> Outcome {
    let start = Instant::now();
    let base = SimConfig {
        providers: 2,
        observers: 1,
        consumers: 1,
        iterations: 1000,
        reset_period: Some(100),
        explore_prob: 0.1,
        gamma: 0.9,
        eta_w: 0.1,
        provider_processes: vec![
            QualityProcess::PeriodicSwitch { period: 500, levels: vec![0.9, 0.1] },
            QualityProcess::PeriodicSwitch { period: 500, levels: vec![0.1, 0.9] },
        ],
        ..SimConfig::default()
    };
    let run = |model, seed| {
        let mut ep = Episode::new(&SimConfig { model, ..base.clone() }, seed).unwrap();
        let mut found = false;
        while !ep.is_done() {
            ep.step().unwrap();
            if (501..=700).contains(&ep.t()) && argmax_score(&ep, 2) == Some(1) {
                found = true;
            }
        }
        (found, ep.finish().cumulative_reward)
    };
    let per_seed: Vec<((bool, u64), (bool, u64))> = (0..100u64)
        .into_par_iter()
        .map(|seed| (run(ModelKind::Dol3, seed), run(ModelKind::Frequency, seed)))
        .collect();
    let dol3 = per_seed.iter().filter(|((f, _), _)| *f).count();
    let freq = per_seed.iter().filter(|(_, (f, _))| *f).count();
    let wins = per_seed.iter().filter(|((_, a), (_, b))| a > b).count();
    let (fast, time) = within(start, Duration::from_secs(30));
    check(
        dol3 >= 90 && freq < 50 && wins >= 80 && fast,
        format!("re-identified: dol3 {dol3}/100, frequency {freq}/100; reward wins {wins}/100, {time}"),
    )
}

// 5 ---------------------------------------------------------------------

fn win_rate_grid() -> Outcome {
    let start = Instant::now();
    let ladder = [0.9, 0.6, 0.3, 0.1];
    let processes: Vec<QualityProcess> = (0..ladder.len())
        .map(|j| QualityProcess::PeriodicSwitch {
            period: 200,
            levels: (0..ladder.len()).map(|k| ladder[(j + k) % ladder.len()]).collect(),
        })
        .collect();
    let cells = [
        (NetworkSpec::WattsStrogatz { k: 2, beta: 0.2 }, 8),
        (NetworkSpec::WattsStrogatz { k: 4, beta: 0.2 }, 16),
        (NetworkSpec::BarabasiAlbert { m: 2 }, 8),
        (NetworkSpec::BarabasiAlbert { m: 2 }, 16),
        (NetworkSpec::ErdosRenyi { p: 0.3 }, 12),
    ];
    let mut jobs = Vec::new();
    for (net, n) in &cells {
        for frac in [0.0, 0.2] {
            for seed in 0..30u64 {
                jobs.push((net.clone(), *n, frac, seed));
            }
        }
    }
    let wins = jobs
        .par_iter()
        .filter(|(net, n, frac, seed)| {
            let base = SimConfig {
                observers: *n,
                consumers: 2 * n,
                providers: ladder.len(),
                iterations: 1000,
                network: net.clone(),
                visibility: Visibility::Random(3),
                provider_processes: processes.clone(),
                explore_prob: 0.1,
                reset_period: Some(100),
                adversary: (*frac > 0.0).then(|| AdversarySpec {
                    malicious_fraction: *frac,
                    mode: CorruptionMode::Invert,
                    ..AdversarySpec::default()
                }),
                ..SimConfig::default()
            };
            let reward = |model| {
                run_episode(&SimConfig { model, ..base.clone() }, *seed).unwrap().cumulative_reward
            };
            let d = reward(ModelKind::Dol3);
            d > reward(ModelKind::Random) && d > reward(ModelKind::Frequency)
        })
        .count();
    let pct = 100.0 * wins as f64 / jobs.len() as f64;
    let (fast, time) = within(start, Duration::from_secs(120));
    check(
        pct >= 90.0 && fast,
        format!("DOL3 beats both baselines in {wins}/{} pairs ({pct:.1}%), {time}", jobs.len()),
    )
}

// 6 ---------------------------------------------------------------------

/// The two-state machine: sell `stock` times, then sit idle `refill` ticks.
fn expected_trace(stock: u64, refill: u64, n: u64) -> String {
    let (mut sold, mut idle, mut out) = (0, 0, String::new());
    for _ in 0..n {
        if idle > 0 {
            out.push('I');
            idle -= 1;
        } else {
            out.push('A');
            sold += 1;
            if sold == stock {
                sold = 0;
                idle = refill;
            }
        }
    }
    out
}

fn active_idle() -> Outcome {
    let cfg = SimConfig {
        providers: 1,
        observers: 1,
        consumers: 1,
        iterations: 50,
        stock_max: Some(2),
        refill: 3,
        ..SimConfig::default()
    };
    let r = run_episode(&cfg, 0).map_err(|e| e.to_string())?;
    let got: String = r.records.iter().map(|rec| if rec.skipped { 'I' } else { 'A' }).collect();
    let want = expected_trace(2, 3, 50);
    check(
        got == want && want.starts_with("AAIIIAAIII"),
        format!("trace {}...", &got[..15]),
    )
}

// 7 ---------------------------------------------------------------------

fn metric_vectors() -> Outcome {
    let m = |a: &[f64], p: &[f64]| -> Result<(f64, f64), String> {
        let r = rmse(a, p).map_err(|e| e.to_string())?;
        Ok((r, accuracy(r).map_err(|e| e.to_string())?))
    };
    let same = m(&[0.2, 0.5, 1.0], &[0.2, 0.5, 1.0])?;
    let unit = m(&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0])?;
    let mixed = m(&[1.0, 0.0], &[0.0, 0.0])?;
    let h = 0.5f64.sqrt();
    let ok = same == (0.0, 100.0)
        && unit == (1.0, 50.0)
        && (mixed.0 - h).abs() < 1e-12
        && (mixed.1 - 100.0 / (1.0 + h)).abs() < 1e-9;
    check(ok, format!("{same:?} {unit:?} ({:.6}, {:.4})", mixed.0, mixed.1))
}

// 8 ---------------------------------------------------------------------

fn containment() -> Outcome {
    let ps = [0.8, 0.3, 0.7, 0.2];
    let with_eps = |eps: f64| SimConfig {
        observers: 2,
        providers: 4,
        consumers: 2,
        iterations: 1000,
        network: NetworkSpec::Complete,
        visibility: Visibility::Explicit(vec![BTreeSet::from([0, 1]), BTreeSet::from([2, 3])]),
        provider_processes: ps.iter().map(|&p| QualityProcess::Constant { p }).collect(),
        epsilon_overrides: vec![BlindTrustOverride { observer: 0, neighbor: 1, value: eps }],
        ..SimConfig::default()
    };
    let attacked = |cfg: &SimConfig| SimConfig {
        adversary: Some(AdversarySpec {
            malicious: vec![1],
            on_len: 20,
            off_len: 20,
            mode: CorruptionMode::Invert,
            ..AdversarySpec::default()
        }),
        ..cfg.clone()
    };

    let clean = with_eps(0.0);
    let dirty = attacked(&clean);
    let mut exact = true;
    for seed in 0..10 {
        let mut a = Episode::new(&clean, seed).map_err(|e| e.to_string())?;
        let mut b = Episode::new(&dirty, seed).map_err(|e| e.to_string())?;
        while !a.is_done() {
            a.step().map_err(|e| e.to_string())?;
            b.step().map_err(|e| e.to_string())?;
            let (sa, sb) = (a.models()[0].scores(), b.models()[0].scores());
            exact &= [0, 1].iter().all(|j| sa.get(j) == sb.get(j));
        }
    }

    let clean = with_eps(0.5);
    let dirty = attacked(&clean);
    let mut loss: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|s| {
            let a = run_episode(&clean, s).unwrap().cumulative_reward as f64;
            let b = run_episode(&dirty, s).unwrap().cumulative_reward as f64;
            (a - b) / a
        })
        .collect();
    loss.sort_by(f64::total_cmp);
    let median = 0.5 * (loss[24] + loss[25]);
    check(
        exact && median < 0.2,
        format!("eps=0 scores identical: {exact}; eps=0.5 median reward loss {:.1}%", 100.0 * median),
    )
}

// 9 ---------------------------------------------------------------------

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ratings = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ratings_200.csv");
    let invocations: Vec<Vec<String>> = vec![
        "simulate --iterations 300 --runs 3 --model dol3,random,frequency --network barabasi_albert(n=10,m=2) --explore-prob 0.1 --seed 5",
        "simulate --iterations 200 --format json --stock-max 3 --refill 2 --seed 9",
        "sweep --iterations 100 --grid gamma=0.8,1.0 --grid explore_prob=0,0.2",
        "netgen --network watts_strogatz(n=30,k=4,beta=0.3) --seed 4",
    ]
    .into_iter()
    .map(|s| s.split(' ').map(String::from).collect())
    .chain([vec![
        "replay".to_string(),
        "--ratings".into(),
        ratings.display().to_string(),
        "--malicious-count".into(),
        "0,2".into(),
        "--noise-rate".into(),
        "0,0.2".into(),
        "--sigma".into(),
        "0.1".into(),
        "--runs".into(),
        "2".into(),
    ]])
    .collect();
    for (k, args) in invocations.iter().enumerate() {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let path = dir.path().join(format!("{k}-{rep}.out"));
            let status = Command::new(env!("CARGO_BIN_EXE_dol3"))
                .args(args)
                .arg("--output")
                .arg(&path)
                .env_remove("DOL3_LOG")
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("`dol3 {}` failed with {status}", args.join(" ")));
            }
            outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        if outputs[0] != outputs[1] || outputs[0].is_empty() {
            return Err(format!("`dol3 {}` output differs between runs", args.join(" ")));
        }
    }
    Ok(format!("{} invocations byte-identical on repeat", invocations.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("normalization sums", normalization),
        ("log-domain oracle equivalence", log_domain_oracle),
        ("stationary identification", stationary_identification),
        ("non-stationarity recovery", recovery),
        ("win rate over network grid", win_rate_grid),
        ("active-idle bookkeeping", active_idle),
        ("rmse/accuracy vectors", metric_vectors),
        ("malicious-observer containment", containment),
        ("byte-identical CLI output", cli_determinism),
    ];
    let mut failed = 0;
    for (n, (name, f)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", n + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
