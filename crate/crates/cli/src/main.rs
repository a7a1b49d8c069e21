use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dol3::config::{SimConfig, EXPLORE_TRUE};
use dol3::engine::{monte_carlo, EpisodeResult};
use dol3::graphgen::{NetworkArg, NetworkSpec};
use dol3::metrics::{self, Format, SweepCell, SweepDocument, SCHEMA_VERSION};
use dol3::replay::{self, ColumnMap, ReplayConfig, SweepGrid};
use dol3::ModelKind;
use serde_json::Value;

#[derive(Parser, Debug)]
#[command(name = "dol3", version, about = "Distributed online trust learning marketplace simulator")]
struct Cli {
    /// Worker threads for multi-run work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one or more episodes.
    #[command(allow_negative_numbers = true)]
    Simulate(SimulateArgs),
    /// Run every cell of a parameter grid.
    #[command(allow_negative_numbers = true)]
    Sweep(SweepArgs),
    /// Replay a ratings dataset through the observer network.
    #[command(allow_negative_numbers = true)]
    Replay(ReplayArgs),
    /// Generate an observer graph as an edge list.
    Netgen(NetgenArgs),
    /// Check a configuration and print it in normalized form.
    #[command(allow_negative_numbers = true)]
    ValidateConfig(ValidateArgs),
}

/// A count that can be switched off. Wrapped so clap does not read
/// `Option<Option<_>>` as a flag with an optional value.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Limit(Option<u64>);

impl From<Limit> for Option<u64> {
    fn from(l: Limit) -> Self {
        l.0
    }
}

/// "none", "off" and 0 disable the setting.
fn optional_count(s: &str) -> Result<Limit, String> {
    match s {
        "none" | "off" | "0" => Ok(Limit(None)),
        _ => s
            .parse::<u64>()
            .map(|n| Limit(Some(n)))
            .map_err(|e| format!("{e} (use a positive integer or none)")),
    }
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    consumers: Option<usize>,
    #[arg(long)]
    providers: Option<usize>,
    #[arg(long)]
    observers: Option<usize>,
    #[arg(long)]
    iterations: Option<u64>,
    /// Reset period T_p; `none` disables resets.
    #[arg(long, value_parser = optional_count)]
    reset_period: Option<Limit>,
    #[arg(long)]
    explore_prob: Option<f64>,
    /// Boolean form of --explore-prob (true = 0.1, false = 0).
    #[arg(long, conflicts_with = "explore_prob")]
    explore: Option<bool>,
    /// Sales before a provider goes idle; `none` means unlimited.
    #[arg(long, value_parser = optional_count)]
    stock_max: Option<Limit>,
    #[arg(long)]
    refill: Option<u64>,
    #[arg(long)]
    eta_w: Option<f64>,
    #[arg(long)]
    eta_alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon_trust: Option<f64>,
    /// e.g. `watts_strogatz(k=4,beta=0.1)`; `n=` sets the observer count.
    #[arg(long)]
    network: Option<NetworkArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<u64>,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output path, `-` for stdout.
    #[arg(long, default_value = "-")]
    output: PathBuf,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Observer model; a comma list runs each on the same seeds.
    #[arg(long, value_delimiter = ',')]
    model: Vec<ModelKind>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_delimiter = ',')]
    model: Vec<ModelKind>,
    /// `key=v1,v2,...` over any config field; repeat for a cartesian grid.
    #[arg(long, required = true)]
    grid: Vec<String>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// Ratings CSV with a header row.
    #[arg(long)]
    ratings: PathBuf,
    /// JSON replay config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    recommenders: Option<usize>,
    /// One or more malicious recommender counts to sweep.
    #[arg(long, value_delimiter = ',')]
    malicious_count: Vec<usize>,
    /// One or more data noise rates to sweep.
    #[arg(long, value_delimiter = ',')]
    noise_rate: Vec<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    observers: Option<usize>,
    #[arg(long)]
    consumers: Option<usize>,
    /// Repeat to sweep several network types.
    #[arg(long)]
    network: Vec<NetworkArg>,
    #[arg(long, value_delimiter = ',')]
    model: Vec<ModelKind>,
    #[arg(long)]
    match_threshold: Option<f64>,
    #[arg(long)]
    explore_prob: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    eta_w: Option<f64>,
    #[arg(long, value_parser = optional_count)]
    reset_period: Option<Limit>,
    #[arg(long)]
    metrics_stride: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    runs: u64,
    #[arg(long, default_value = "userId")]
    user_col: String,
    #[arg(long, default_value = "movieId")]
    item_col: String,
    #[arg(long, default_value = "rating")]
    rating_col: String,
    /// Empty string to ignore timestamps.
    #[arg(long, default_value = "timestamp")]
    timestamp_col: String,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct NetgenArgs {
    /// e.g. `watts_strogatz(n=20,k=4,beta=0)`.
    #[arg(long)]
    network: NetworkArg,
    /// Node count, if not given as `n=` in --network.
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "-")]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, value_delimiter = ',')]
    model: Vec<ModelKind>,
}

/// Usage problems exit with 2, everything else with 1.
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: dol3::Error) -> Failure {
    Failure::Usage(format!("{:#}", anyhow::Error::from(e)))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DOL3_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Replay(a) => replay(a),
        Command::Netgen(a) => netgen(a),
        Command::ValidateConfig(a) => validate(a),
    }
}

fn effective_config(o: &Overrides, models: &[ModelKind]) -> Result<SimConfig, Failure> {
    let mut c = match &o.config {
        Some(path) => SimConfig::load(path).map_err(usage)?,
        None => SimConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = o.$field.clone() {
                c.$field = v.into();
            }
        )*};
    }
    set!(consumers, providers, observers, iterations, reset_period, explore_prob, refill, eta_w, gamma, epsilon_trust, runs);
    if let Some(v) = o.stock_max {
        c.stock_max = v.into();
    }
    if let Some(v) = o.eta_alpha {
        c.eta_alpha = Some(v);
    }
    if let Some(e) = o.explore {
        c.explore_prob = if e { EXPLORE_TRUE } else { 0.0 };
    }
    if let Some(seed) = o.seed {
        c.base_seed = seed;
    }
    if let Some(net) = &o.network {
        c.network = net.spec.clone();
        if let Some(n) = net.nodes {
            match o.observers {
                Some(m) if m != n => {
                    return Err(Failure::Usage(format!(
                        "--network n={n} disagrees with --observers {m}"
                    )))
                }
                _ => c.observers = n,
            }
        }
    }
    if let [m] = models {
        c.model = *m;
    }
    c.validate().map_err(usage)?;
    log::info!("effective config:\n{}", c.to_json());
    Ok(c)
}

fn open_output(path: &Path) -> anyhow::Result<Box<dyn Write>> {
    if path == Path::new("-") {
        Ok(Box::new(BufWriter::new(io::stdout().lock())))
    } else {
        let file =
            File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Box::new(BufWriter::new(file)))
    }
}

fn parse_format(s: &str) -> Result<Format, Failure> {
    s.parse().map_err(usage)
}

fn run_models(config: &SimConfig, models: &[ModelKind]) -> anyhow::Result<Vec<EpisodeResult>> {
    let mc = monte_carlo(config, models, config.runs, config.base_seed)?;
    for m in &mc.stats.models {
        log::info!(
            "{}: mean {:.3} sd {:.3} min {} max {} over {} runs",
            m.model,
            m.mean,
            m.std_dev,
            m.min,
            m.max,
            m.runs
        );
    }
    Ok(mc.episodes)
}

fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let format = parse_format(&a.output.format)?;
    let config = effective_config(&a.overrides, &a.model)?;
    let results = run_models(&config, &a.model)?;
    let path = &a.output.output;
    let mut out = open_output(path)?;
    metrics::write_results_to(&results, &mut out, format, path).map_err(anyhow::Error::from)?;
    out.flush().context("flushing output")?;
    Ok(())
}

/// Splits on commas outside parentheses.
fn split_values(s: &str) -> Vec<String> {
    let mut parts = vec![String::new()];
    let mut depth = 0i32;
    for ch in s.chars() {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(String::new());
                continue;
            }
            _ => {}
        }
        parts.last_mut().expect("non-empty").push(ch);
    }
    parts.into_iter().map(|p| p.trim().to_string()).collect()
}

fn grid_value(key: &str, raw: &str) -> Result<Value, Failure> {
    match key {
        "network" => {
            let net: NetworkArg = raw.parse().map_err(usage)?;
            if net.nodes.is_some() {
                return Err(Failure::Usage(
                    "grid network values take no n=; set observers instead".into(),
                ));
            }
            serde_json::to_value(net.spec).map_err(|e| Failure::Runtime(e.into()))
        }
        _ => Ok(serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))),
    }
}

fn sweep(a: SweepArgs) -> Result<(), Failure> {
    let format = parse_format(&a.output.format)?;
    let base = effective_config(&a.overrides, &a.model)?;
    let base_json = serde_json::to_value(&base).map_err(|e| Failure::Runtime(e.into()))?;

    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for g in &a.grid {
        let (key, values) = g
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--grid expects key=v1,v2,..., got {g:?}")))?;
        let key = key.trim().to_string();
        if base_json.get(&key).is_none() {
            return Err(Failure::Usage(format!("--grid: unknown config field {key:?}")));
        }
        let values = split_values(values);
        if values.iter().any(String::is_empty) {
            return Err(Failure::Usage(format!("--grid {key}: empty value")));
        }
        axes.push((key, values));
    }

    // Cartesian product, first axis slowest.
    let mut cells: Vec<Vec<String>> = vec![Vec::new()];
    for (_, values) in &axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(v.clone());
                    c
                })
            })
            .collect();
    }

    let mut configs = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut json = base_json.clone();
        let mut params = std::collections::BTreeMap::new();
        for ((key, _), raw) in axes.iter().zip(cell) {
            let v = grid_value(key, raw)?;
            params.insert(key.clone(), v.clone());
            json[key.as_str()] = v;
        }
        let config: SimConfig = serde_json::from_value(json)
            .map_err(|e| Failure::Usage(format!("--grid cell {cell:?}: {e}")))?;
        config.validate().map_err(|e| {
            Failure::Usage(format!("--grid cell {cell:?}: {e}"))
        })?;
        configs.push((params, config));
    }

    let mut groups = Vec::with_capacity(configs.len());
    for (params, config) in configs {
        let results = run_models(&config, &a.model)?;
        groups.push(SweepCell { params, results });
    }

    let path = &a.output.output;
    let mut out = open_output(path)?;
    match format {
        Format::Csv => {
            let keys: Vec<String> = axes.iter().map(|(k, _)| k.clone()).collect();
            let tagged: Vec<(Vec<String>, &[EpisodeResult])> = cells
                .into_iter()
                .zip(&groups)
                .map(|(tags, g)| (tags, g.results.as_slice()))
                .collect();
            metrics::write_tagged_csv(&keys, &tagged, &mut out)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        Format::Json => {
            let doc = SweepDocument {
                schema_version: SCHEMA_VERSION,
                cells: groups,
            };
            serde_json::to_writer_pretty(&mut out, &doc)
                .with_context(|| format!("writing {}", path.display()))?;
            out.write_all(b"\n").context("writing output")?;
        }
    }
    out.flush().context("flushing output")?;
    Ok(())
}

fn replay(a: ReplayArgs) -> Result<(), Failure> {
    let format = parse_format(&a.output.format)?;
    let mut base = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ReplayConfig>(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ReplayConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field.clone() {
                base.$field = v.into();
            }
        )*};
    }
    set!(recommenders, sigma, observers, consumers, match_threshold, explore_prob, gamma, eta_w, reset_period, metrics_stride);
    let mut networks: Vec<NetworkSpec> = Vec::new();
    for net in &a.network {
        if let Some(n) = net.nodes {
            match a.observers {
                Some(m) if m != n => {
                    return Err(Failure::Usage(format!(
                        "--network n={n} disagrees with --observers {m}"
                    )))
                }
                _ => base.observers = n,
            }
        }
        networks.push(net.spec.clone());
    }
    let grid = SweepGrid {
        malicious_counts: a.malicious_count.clone(),
        noise_rates: a.noise_rate.clone(),
        networks,
        models: a.model.clone(),
    };
    for cell in grid.cells(&base) {
        cell.validate().map_err(usage)?;
    }
    if log::log_enabled!(log::Level::Info) {
        let echo = serde_json::json!({ "replay": base, "grid": grid });
        log::info!("effective config:\n{echo:#}");
    }

    let columns = ColumnMap {
        user: a.user_col,
        item: a.item_col,
        rating: a.rating_col,
        timestamp: (!a.timestamp_col.is_empty()).then_some(a.timestamp_col),
    };
    let table = replay::load_ratings(&a.ratings, &columns).map_err(anyhow::Error::from)?;
    if table.skipped > 0 {
        log::warn!("skipped {} malformed rows", table.skipped);
    }
    let runs = replay::sweep(&table, &base, &grid, a.runs, a.seed).map_err(anyhow::Error::from)?;

    let path = &a.output.output;
    let mut out = open_output(path)?;
    match format {
        Format::Csv => replay::write_replay_csv(&runs, &mut out)
            .with_context(|| format!("writing {}", path.display()))?,
        Format::Json => {
            let doc = serde_json::json!({ "schema_version": SCHEMA_VERSION, "runs": runs });
            serde_json::to_writer_pretty(&mut out, &doc)
                .with_context(|| format!("writing {}", path.display()))?;
            out.write_all(b"\n").context("writing output")?;
        }
    }
    out.flush().context("flushing output")?;
    Ok(())
}

fn netgen(a: NetgenArgs) -> Result<(), Failure> {
    let n = match (a.network.nodes, a.nodes) {
        (Some(x), Some(y)) if x != y => {
            return Err(Failure::Usage(format!("n={x} disagrees with --nodes {y}")))
        }
        (Some(n), _) | (None, Some(n)) => n,
        (None, None) => {
            return Err(Failure::Usage(
                "node count required: give n= in --network or --nodes".into(),
            ))
        }
    };
    let problems = a.network.spec.violations(n);
    if !problems.is_empty() {
        return Err(usage(dol3::Error::Config(problems)));
    }
    let graph = a.network.spec.generate(n, a.seed).map_err(anyhow::Error::from)?;
    let mut out = open_output(&a.output)?;
    out.write_all(graph.to_edge_list().as_bytes())
        .with_context(|| format!("writing {}", a.output.display()))?;
    out.flush().context("flushing output")?;
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<(), Failure> {
    let config = effective_config(&a.overrides, &a.model)?;
    println!("{}", config.to_json());
    Ok(())
}
