use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dol3(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dol3"))
        .args(args)
        .env_remove("DOL3_LOG")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn ratings() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/ratings_200.csv")
}

#[test]
fn simulate_writes_one_row_per_run_model_and_step() {
    let out = stdout(&dol3(&["simulate", "--iterations", "20", "--runs", "2", "--model", "dol3,random"]));
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("run,model,t,consumer,provider,outcome,cum_reward"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2 * 2 * 20);
    for run in ["0", "1"] {
        for model in ["dol3", "random"] {
            let n = rows.iter().filter(|r| r[0] == run && r[1] == model).count();
            assert_eq!(n, 20, "run {run} model {model}");
        }
    }
    // stdout carries data only.
    assert!(!out.contains('{'));
}

#[test]
fn simulate_json_has_schema_version() {
    let out = stdout(&dol3(&["simulate", "--iterations", "5", "--format", "json"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn simulate_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let o = dol3(&[
            "simulate",
            "--iterations",
            "200",
            "--runs",
            "3",
            "--network",
            "watts_strogatz(n=8,k=2,beta=0.3)",
            "--model",
            "dol3,frequency",
            "--seed",
            "11",
            "--output",
            path.to_str().unwrap(),
        ]);
        stdout(&o);
        std::fs::read(path).unwrap()
    };
    assert_eq!(run("a.csv"), run("b.csv"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"observers": 3, "gamma": 0.5, "iterations": 7}"#).unwrap();
    let out = stdout(&dol3(&["validate-config", "--config", cfg.to_str().unwrap(), "--gamma", "0.8"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["observers"], 3);
    assert_eq!(v["iterations"], 7);
    assert_eq!(v["gamma"], 0.8);
}

#[test]
fn counts_can_be_disabled() {
    let out = stdout(&dol3(&["validate-config", "--reset-period", "off", "--stock-max", "none"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["reset_period"].is_null());
    assert!(v["stock_max"].is_null());
    let out = stdout(&dol3(&["validate-config", "--reset-period", "25", "--stock-max", "3"]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["reset_period"], 25);
    assert_eq!(v["stock_max"], 3);
}

#[test]
fn sweep_tags_rows_with_grid_values() {
    let out = stdout(&dol3(&["sweep", "--iterations", "4", "--grid", "gamma=0.8,0.9,1.0"]));
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "gamma,run,model,t,consumer,provider,outcome,cum_reward");
    let tags: std::collections::BTreeSet<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(tags.into_iter().collect::<Vec<_>>(), ["0.8", "0.9", "1.0"]);
}

#[test]
fn sweep_over_networks() {
    let out = stdout(&dol3(&[
        "sweep",
        "--iterations",
        "3",
        "--observers",
        "6",
        "--grid",
        "network=complete,barabasi_albert(m=2)",
        "--format",
        "json",
    ]));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn netgen_writes_a_one_based_edge_list() {
    let out = stdout(&dol3(&["netgen", "--network", "watts_strogatz(n=20,k=4,beta=0)"]));
    let edges: Vec<(usize, usize)> = out
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let (a, b) = l.split_once(' ').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(edges.len(), 40);
    assert!(edges.iter().all(|&(a, b)| (1..=20).contains(&a) && (1..=20).contains(&b)));
}

#[test]
fn replay_writes_metric_rows() {
    let path = ratings();
    let out = stdout(&dol3(&[
        "replay",
        "--ratings",
        path.to_str().unwrap(),
        "--malicious-count",
        "0,2",
        "--metrics-stride",
        "50",
    ]));
    let mut lines = out.lines();
    assert_eq!(
        lines.next(),
        Some("t,rmse,accuracy,malicious_count,noise_rate,network_type,model,run")
    );
    assert_eq!(lines.count(), 2 * 4);
}

#[test]
fn replay_output_is_reproducible() {
    let path = ratings();
    let run = || {
        stdout(&dol3(&[
            "replay",
            "--ratings",
            path.to_str().unwrap(),
            "--malicious-count",
            "2",
            "--noise-rate",
            "0.1",
            "--sigma",
            "0.05",
            "--runs",
            "2",
            "--seed",
            "3",
        ]))
    };
    assert_eq!(run(), run());
}

#[test]
fn exit_codes() {
    assert_eq!(dol3(&["simulate", "--gamma", "1.5"]).status.code(), Some(2));
    assert_eq!(dol3(&["simulate", "--gamma", "abc"]).status.code(), Some(2));
    assert_eq!(dol3(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(dol3(&["sweep", "--grid", "nonsense=1"]).status.code(), Some(2));
    assert_eq!(dol3(&["replay", "--ratings", "/no/such/file.csv"]).status.code(), Some(1));
    let o = dol3(&["simulate", "--iterations", "2", "--output", "/no/such/dir/out.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/no/such/dir/out.csv"));
}

#[test]
fn usage_errors_explain_themselves() {
    let o = dol3(&["simulate", "--gamma", "1.5"]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("gamma"), "{err}");
    assert!(o.stdout.is_empty());
}
