//! Random graph topologies and the observer/provider/consumer interaction
//! network built on top of them.
//!
//! Every generator is a pure function of its parameters and seed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simple undirected graph over nodes `0..node_count`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Graph {
    node_count: usize,
    /// Each edge stored once as `(min, max)`.
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn empty(node_count: usize) -> Self {
        Graph {
            node_count,
            edges: BTreeSet::new(),
        }
    }

    pub fn complete(node_count: usize) -> Self {
        let mut g = Graph::empty(node_count);
        for u in 0..node_count {
            for v in u + 1..node_count {
                g.edges.insert((u, v));
            }
        }
        g
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    fn key(u: usize, v: usize) -> (usize, usize) {
        if u < v {
            (u, v)
        } else {
            (v, u)
        }
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&Self::key(u, v))
    }

    /// Inserts `{u, v}`; returns false for self-loops, duplicates and
    /// out-of-range endpoints.
    pub fn add_edge(&mut self, u: usize, v: usize) -> bool {
        if u == v || u >= self.node_count || v >= self.node_count {
            return false;
        }
        self.edges.insert(Self::key(u, v))
    }

    pub fn remove_edge(&mut self, u: usize, v: usize) -> bool {
        self.edges.remove(&Self::key(u, v))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn degree(&self, u: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == u || b == u).count()
    }

    pub fn adjacency(&self) -> Vec<BTreeSet<usize>> {
        let mut adj = vec![BTreeSet::new(); self.node_count];
        for &(u, v) in &self.edges {
            adj[u].insert(v);
            adj[v].insert(u);
        }
        adj
    }

    pub fn neighbors(&self, u: usize) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == u {
                    Some(b)
                } else if b == u {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Number of connected components (isolated nodes count as one each).
    pub fn component_count(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.node_count];
        let mut components = 0;
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            components += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        components
    }

    /// Edge-list text: a `# nodes=<n>` header, then one 1-based `u v` pair
    /// per line.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes={}\n", self.node_count);
        for &(u, v) in &self.edges {
            out.push_str(&format!("{} {}\n", u + 1, v + 1));
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data("empty edge list".into()))?;
        let n: usize = header
            .trim()
            .strip_prefix("# nodes=")
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Data(format!("bad edge-list header {header:?}")))?;
        let mut g = Graph::empty(n);
        for (lineno, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse = |s: Option<&str>| -> Option<usize> {
                s?.parse::<usize>().ok()?.checked_sub(1)
            };
            let mut parts = line.split_whitespace();
            let (u, v) = match (parse(parts.next()), parse(parts.next())) {
                (Some(u), Some(v)) => (u, v),
                _ => return Err(Error::Data(format!("bad edge on line {}", lineno + 2))),
            };
            if !g.add_edge(u, v) {
                return Err(Error::Data(format!(
                    "invalid or duplicate edge on line {}",
                    lineno + 2
                )));
            }
        }
        Ok(g)
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must lie in [0,1], got {p}")))
    }
}

/// Erdős–Rényi G(n, p).
pub fn gen_random(n: usize, p_edge: f64, seed: u64) -> Result<Graph> {
    if n == 0 {
        return Err(Error::Parameter("node count must be at least 1".into()));
    }
    check_probability("p_edge", p_edge)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(n);
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p_edge) {
                g.edges.insert((u, v));
            }
        }
    }
    Ok(g)
}

/// Watts–Strogatz small world: a ring lattice of even degree `k` whose
/// edges are each rewired with probability `beta`. The edge count stays
/// at `n * k / 2`.
pub fn gen_small_world(n: usize, k: usize, beta: f64, seed: u64) -> Result<Graph> {
    if !k.is_multiple_of(2) || k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "small-world degree k must be even with 0 < k < n (k={k}, n={n})"
        )));
    }
    check_probability("beta", beta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::empty(n);
    for u in 0..n {
        for offset in 1..=k / 2 {
            g.add_edge(u, (u + offset) % n);
        }
    }
    let mut degree = g.degrees();
    for offset in 1..=k / 2 {
        for u in 0..n {
            let v = (u + offset) % n;
            if !g.has_edge(u, v) || !rng.random_bool(beta) {
                continue;
            }
            if degree[u] >= n - 1 {
                continue;
            }
            let w = loop {
                let w = rng.random_range(0..n);
                if w != u && !g.has_edge(u, w) {
                    break w;
                }
            };
            g.remove_edge(u, v);
            g.add_edge(u, w);
            degree[v] -= 1;
            degree[w] += 1;
        }
    }
    Ok(g)
}

/// Barabási–Albert preferential attachment seeded with a complete graph on
/// `m + 1` nodes.
pub fn gen_scale_free(n: usize, m: usize, seed: u64) -> Result<Graph> {
    if m == 0 || m >= n {
        return Err(Error::Parameter(format!(
            "attachment count must satisfy 1 <= m < n (m={m}, n={n})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Graph::complete(m + 1);
    g.node_count = n;
    // Each node appears once per incident edge end, so a uniform pick from
    // this list is a degree-proportional pick.
    let mut ends: Vec<usize> = g.edges.iter().flat_map(|&(u, v)| [u, v]).collect();
    for new in m + 1..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            targets.insert(*ends.choose(&mut rng).expect("seed graph has edges"));
        }
        for &t in &targets {
            g.edges.insert((t, new));
            ends.push(t);
            ends.push(new);
        }
    }
    Ok(g)
}

const HOMOPHILY_MAX_ATTEMPTS: usize = 2000;

/// Group of node `u` under round-robin partitioning.
pub fn homophily_group(u: usize, n_groups: usize) -> usize {
    u % n_groups
}

/// `d`-regular simple graph built by biased stub pairing. Nodes are split
/// round-robin into `n_groups`; a cross-group pairing has weight
/// `1 - bias` relative to a same-group pairing. If no weighted candidate
/// remains, any valid partner is accepted. Attempts that dead-end restart.
pub fn gen_regular_homophily(
    n: usize,
    d: usize,
    n_groups: usize,
    bias: f64,
    seed: u64,
) -> Result<Graph> {
    if n == 0 || d >= n || !(n * d).is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "regular graph needs d < n and n*d even (n={n}, d={d})"
        )));
    }
    if n_groups == 0 {
        return Err(Error::Parameter("group count must be at least 1".into()));
    }
    check_probability("bias", bias)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'attempt: for _ in 0..HOMOPHILY_MAX_ATTEMPTS {
        let mut g = Graph::empty(n);
        let mut stubs: Vec<usize> = (0..n).flat_map(|u| std::iter::repeat_n(u, d)).collect();
        stubs.shuffle(&mut rng);
        while let Some(u) = stubs.pop() {
            let valid: Vec<usize> = (0..stubs.len())
                .filter(|&s| stubs[s] != u && !g.has_edge(u, stubs[s]))
                .collect();
            if valid.is_empty() {
                continue 'attempt;
            }
            let weight = |s: usize| {
                if homophily_group(stubs[s], n_groups) == homophily_group(u, n_groups) {
                    1.0
                } else {
                    1.0 - bias
                }
            };
            let total: f64 = valid.iter().map(|&s| weight(s)).sum();
            let pick = if total > 0.0 {
                let mut target = rng.random::<f64>() * total;
                let mut chosen = *valid.last().expect("nonempty");
                for &s in &valid {
                    target -= weight(s);
                    if target < 0.0 {
                        chosen = s;
                        break;
                    }
                }
                chosen
            } else {
                *valid.choose(&mut rng).expect("nonempty")
            };
            let v = stubs.swap_remove(pick);
            g.add_edge(u, v);
        }
        return Ok(g);
    }
    Err(Error::Construction(format!(
        "stub pairing for a {d}-regular graph on {n} nodes failed after {HOMOPHILY_MAX_ATTEMPTS} attempts"
    )))
}

/// Topology of the observer-observer graph. Node count comes from the
/// number of observers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    Empty,
    Complete,
    ErdosRenyi { p: f64 },
    WattsStrogatz { k: usize, beta: f64 },
    BarabasiAlbert { m: usize },
    RegularHomophily { d: usize, groups: usize, bias: f64 },
}

impl NetworkSpec {
    pub fn generate(&self, n: usize, seed: u64) -> Result<Graph> {
        match *self {
            NetworkSpec::Empty => Ok(Graph::empty(n)),
            NetworkSpec::Complete => Ok(Graph::complete(n)),
            NetworkSpec::ErdosRenyi { p } => gen_random(n, p, seed),
            NetworkSpec::WattsStrogatz { k, beta } => gen_small_world(n, k, beta, seed),
            NetworkSpec::BarabasiAlbert { m } => gen_scale_free(n, m, seed),
            NetworkSpec::RegularHomophily { d, groups, bias } => {
                gen_regular_homophily(n, d, groups, bias, seed)
            }
        }
    }

    /// Short name used to tag result rows.
    pub fn kind(&self) -> &'static str {
        match self {
            NetworkSpec::Empty => "empty",
            NetworkSpec::Complete => "complete",
            NetworkSpec::ErdosRenyi { .. } => "erdos_renyi",
            NetworkSpec::WattsStrogatz { .. } => "watts_strogatz",
            NetworkSpec::BarabasiAlbert { .. } => "barabasi_albert",
            NetworkSpec::RegularHomophily { .. } => "regular_homophily",
        }
    }

    /// Parameter violations for a graph on `n` nodes, without generating.
    pub fn violations(&self, n: usize) -> Vec<String> {
        let mut v = Vec::new();
        match *self {
            NetworkSpec::Empty | NetworkSpec::Complete => {}
            NetworkSpec::ErdosRenyi { p } => {
                if !(0.0..=1.0).contains(&p) {
                    v.push(format!("network.p must lie in [0,1], got {p}"));
                }
            }
            NetworkSpec::WattsStrogatz { k, beta } => {
                if k % 2 != 0 || k == 0 || k >= n {
                    v.push(format!(
                        "network.k must be even with 0 < k < observers (k={k}, observers={n})"
                    ));
                }
                if !(0.0..=1.0).contains(&beta) {
                    v.push(format!("network.beta must lie in [0,1], got {beta}"));
                }
            }
            NetworkSpec::BarabasiAlbert { m } => {
                if m == 0 || m >= n {
                    v.push(format!(
                        "network.m must satisfy 1 <= m < observers (m={m}, observers={n})"
                    ));
                }
            }
            NetworkSpec::RegularHomophily { d, groups, bias } => {
                if d >= n || !(n * d).is_multiple_of(2) {
                    v.push(format!(
                        "network.d must satisfy d < observers with observers*d even (d={d}, observers={n})"
                    ));
                }
                if groups == 0 {
                    v.push("network.groups must be at least 1".into());
                }
                if !(0.0..=1.0).contains(&bias) {
                    v.push(format!("network.bias must lie in [0,1], got {bias}"));
                }
            }
        }
        v
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkSpec::Empty | NetworkSpec::Complete => write!(f, "{}", self.kind()),
            NetworkSpec::ErdosRenyi { p } => write!(f, "erdos_renyi(p={p})"),
            NetworkSpec::WattsStrogatz { k, beta } => {
                write!(f, "watts_strogatz(k={k},beta={beta})")
            }
            NetworkSpec::BarabasiAlbert { m } => write!(f, "barabasi_albert(m={m})"),
            NetworkSpec::RegularHomophily { d, groups, bias } => {
                write!(f, "regular_homophily(d={d},groups={groups},bias={bias})")
            }
        }
    }
}

/// A network spec parsed from `name(key=value,...)` text, with the
/// optional node count `n` kept aside.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkArg {
    pub spec: NetworkSpec,
    pub nodes: Option<usize>,
}

impl FromStr for NetworkArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, body) = match s.split_once('(') {
            Some((name, rest)) => {
                let body = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Parameter(format!("unclosed parameter list in {s:?}")))?;
                (name.trim(), body)
            }
            None => (s, ""),
        };
        let mut params = std::collections::BTreeMap::new();
        for kv in body.split(',').map(str::trim).filter(|kv| !kv.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("expected key=value, got {kv:?}")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::Parameter(format!("non-numeric value in {kv:?}")))?;
            params.insert(k.trim().to_string(), v);
        }
        let mut take = |key: &str| -> Result<f64> {
            params
                .remove(key)
                .ok_or_else(|| Error::Parameter(format!("{name} requires parameter {key}")))
        };
        let count = |key: &str, v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Parameter(format!("{key} must be a non-negative integer")))
            }
        };
        let nodes = match take("n") {
            Ok(v) => Some(count("n", v)?),
            Err(_) => None,
        };
        let spec = match name {
            "empty" => NetworkSpec::Empty,
            "complete" => NetworkSpec::Complete,
            "erdos_renyi" | "random" => NetworkSpec::ErdosRenyi { p: take("p")? },
            "watts_strogatz" | "small_world" => NetworkSpec::WattsStrogatz {
                k: count("k", take("k")?)?,
                beta: take("beta")?,
            },
            "barabasi_albert" | "scale_free" => NetworkSpec::BarabasiAlbert {
                m: count("m", take("m")?)?,
            },
            "regular_homophily" | "homophily" => NetworkSpec::RegularHomophily {
                d: count("d", take("d")?)?,
                groups: count("groups", take("groups")?)?,
                bias: take("bias")?,
            },
            other => return Err(Error::Parameter(format!("unknown network type {other:?}"))),
        };
        if let Some(extra) = params.keys().next() {
            return Err(Error::Parameter(format!("unknown network parameter {extra:?}")));
        }
        Ok(NetworkArg { spec, nodes })
    }
}

/// How an observer's provider set Ω is drawn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    #[default]
    Full,
    /// `k` providers drawn uniformly without replacement per observer.
    Random(usize),
    /// Ω given per observer.
    Explicit(#[serde(with = "crate::fmt::one_based_sets")] Vec<BTreeSet<usize>>),
}

impl Visibility {
    pub fn violations(&self, observers: usize, providers: usize) -> Vec<String> {
        let mut v = Vec::new();
        if let Visibility::Explicit(sets) = self {
            if sets.len() != observers {
                v.push(format!(
                    "explicit visibility lists {} provider sets for {observers} observers",
                    sets.len()
                ));
            }
            if sets.iter().flatten().any(|&j| j >= providers) {
                v.push(format!("explicit visibility names a provider beyond {providers}"));
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConsumerAttach {
    /// Consumer `c` is served by observer `c mod N_o`.
    #[default]
    RoundRobin,
    /// Each consumer is served by one uniformly drawn observer.
    Random,
}

/// Who watches whom: Ω (providers per observer), Λ (neighbor observers)
/// and Γ (consumers per observer). All indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionNetwork {
    pub observers: usize,
    pub providers: usize,
    pub consumers: usize,
    pub omega: Vec<BTreeSet<usize>>,
    pub lambda: Vec<BTreeSet<usize>>,
    pub gamma: Vec<BTreeSet<usize>>,
}

impl InteractionNetwork {
    /// Observers that serve consumer `c`.
    pub fn observers_of_consumer(&self, c: usize) -> Vec<usize> {
        (0..self.observers)
            .filter(|&i| self.gamma[i].contains(&c))
            .collect()
    }

    /// Observers whose Ω contains provider `j`.
    pub fn observers_of_provider(&self, j: usize) -> Vec<usize> {
        (0..self.observers)
            .filter(|&i| self.omega[i].contains(&j))
            .collect()
    }

    /// Ω_i together with the Ω of every neighbor of `i`.
    pub fn known_providers(&self, i: usize) -> BTreeSet<usize> {
        let mut known = self.omega[i].clone();
        for &l in &self.lambda[i] {
            known.extend(self.omega[l].iter().copied());
        }
        known
    }
}

pub fn build_interaction_network(
    observers: usize,
    providers: usize,
    consumers: usize,
    observer_graph: &Graph,
    visibility: &Visibility,
    consumer_attach: ConsumerAttach,
    seed: u64,
) -> Result<InteractionNetwork> {
    if observers == 0 || providers == 0 || consumers == 0 {
        return Err(Error::Parameter(
            "observer, provider and consumer counts must be at least 1".into(),
        ));
    }
    if observer_graph.node_count() != observers {
        return Err(Error::Parameter(format!(
            "observer graph has {} nodes but there are {observers} observers",
            observer_graph.node_count()
        )));
    }
    if let Some(v) = visibility.violations(observers, providers).into_iter().next() {
        return Err(Error::Parameter(v));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lambda = observer_graph.adjacency();

    let mut omega: Vec<BTreeSet<usize>> = match visibility {
        Visibility::Full => vec![(0..providers).collect(); observers],
        Visibility::Explicit(sets) => sets.clone(),
        Visibility::Random(k) => {
            let k = *k;
            let all: Vec<usize> = (0..providers).collect();
            (0..observers)
                .map(|_| {
                    all.choose_multiple(&mut rng, k.min(providers))
                        .copied()
                        .collect()
                })
                .collect()
        }
    };
    let mut gamma: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); observers];
    for c in 0..consumers {
        let i = match consumer_attach {
            ConsumerAttach::RoundRobin => c % observers,
            ConsumerAttach::Random => rng.random_range(0..observers),
        };
        gamma[i].insert(c);
    }

    // Nobody goes unobserved.
    for j in 0..providers {
        if !omega.iter().any(|o| o.contains(&j)) {
            omega[rng.random_range(0..observers)].insert(j);
        }
    }
    for c in 0..consumers {
        if !gamma.iter().any(|g| g.contains(&c)) {
            gamma[rng.random_range(0..observers)].insert(c);
        }
    }

    Ok(InteractionNetwork {
        observers,
        providers,
        consumers,
        omega,
        lambda,
        gamma,
    })
}
