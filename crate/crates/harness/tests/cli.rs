use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_rlqn");

const TWO_NODE: &str = r#"
seeds = [1, 2]
stride = 10

[env]
kind = "server_allocation"
lambda = [0.3, 0.2]
p = [0.9, 0.6]

[algo]
kind = "rlqn"
threshold = 5
budget_scale = 10
episodes = 40
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn rlqn(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("RLQN_WORKERS").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn run_writes_four_files_per_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    let out = tmp.path().join("out");
    let o = rlqn(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [1, 2] {
        let dir = out.join(format!("seed-{seed}"));
        let mut names: Vec<String> = fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(names, ["episodes.csv", "manifest.toml", "metrics.csv", "policy.csv"]);
        let manifest: toml::Table = fs::read_to_string(dir.join("manifest.toml")).unwrap().parse().unwrap();
        assert_eq!(manifest["seed"].as_integer(), Some(seed));
        assert_eq!(manifest["config_digest"].as_str().unwrap().len(), 64);
        let episodes = fs::read_to_string(dir.join("episodes.csv")).unwrap();
        assert_eq!(episodes.lines().count(), 41);
        assert!(!episodes.contains('\r'));
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&rlqn(&["run", "--config", s(&cfg), "--out", s(&a)])), 0);
    assert_eq!(code(&rlqn(&["run", "--config", s(&cfg), "--out", s(&b)])), 0);
    assert_eq!(files_under(&a), files_under(&b));
}

#[test]
fn seed_and_override_flags_reach_the_manifest() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    let out = tmp.path().join("out");
    let o = rlqn(&[
        "run",
        "--config",
        s(&cfg),
        "--out",
        s(&out),
        "--seed",
        "7",
        "--override",
        "algo.episodes=5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("seed-1").exists());
    let manifest: toml::Table = fs::read_to_string(out.join("seed-7/manifest.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["episodes"].as_integer(), Some(5));
    assert_eq!(manifest["config"]["algo"]["episodes"].as_integer(), Some(5));
}

#[test]
fn digest_depends_on_the_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    let digest = |extra: &[&str], name: &str| {
        let out = tmp.path().join(name);
        let mut args = vec!["run", "--config", s(&cfg), "--out", s(&out), "--seed", "1"];
        args.extend_from_slice(extra);
        assert_eq!(code(&rlqn(&args)), 0);
        let m: toml::Table = fs::read_to_string(out.join("seed-1/manifest.toml")).unwrap().parse().unwrap();
        m["config_digest"].as_str().unwrap().to_string()
    };
    let base = digest(&[], "a");
    assert_eq!(base, digest(&[], "b"));
    assert_ne!(base, digest(&["--override", "algo.budget_scale=11"], "c"));
    assert_ne!(base, digest(&["--override", "env.p=[0.9, 0.7]"], "d"));
}

#[test]
fn running_average_column_recomputes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    for stride in ["1", "7"] {
        let out = tmp.path().join(format!("s{stride}"));
        let o = rlqn(&["run", "--config", s(&cfg), "--out", s(&out), "--stride", stride, "--seed", "3"]);
        assert_eq!(code(&o), 0);
        let mut r = csv::Reader::from_path(out.join("seed-3/metrics.csv")).unwrap();
        let mut cumulative = 0u64;
        let mut last_t = 0u64;
        for rec in r.records() {
            let rec = rec.unwrap();
            let t: u64 = rec[0].parse().unwrap();
            let backlog: u64 = rec[1].parse().unwrap();
            let cum: u64 = rec[2].parse().unwrap();
            let avg: f64 = rec[3].parse().unwrap();
            if stride == "1" {
                assert_eq!(t, last_t + 1);
                cumulative += backlog;
                assert_eq!(cum, cumulative);
            }
            assert!((avg - cum as f64 / t as f64).abs() < 1e-9);
            last_t = t;
        }
        let m: toml::Table = fs::read_to_string(out.join("seed-3/manifest.toml")).unwrap().parse().unwrap();
        assert_eq!(m["total_slots"].as_integer(), Some(last_t as i64));
        let mut r = csv::Reader::from_path(out.join("seed-3/episodes.csv")).unwrap();
        assert_eq!(
            r.headers().unwrap().iter().collect::<Vec<_>>(),
            [
                "k",
                "mode",
                "length",
                "inner_visits",
                "backlog_sum",
                "episodic_avg_backlog",
                "running_avg_backlog",
                "epsilon",
                "policy_changed",
                "resolve_ms"
            ]
        );
        let (mut slots, mut sum) = (0u64, 0u64);
        for rec in r.records() {
            let rec = rec.unwrap();
            slots += rec[2].parse::<u64>().unwrap();
            sum += rec[4].parse::<u64>().unwrap();
            let running: f64 = rec[6].parse().unwrap();
            assert!((running - sum as f64 / slots as f64).abs() < 1e-9);
        }
        assert_eq!(slots, last_t);
    }
}

#[test]
fn missing_key_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &TWO_NODE.replace("budget_scale = 10\n", ""));
    let o = rlqn(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget_scale"));
    let o = rlqn(&["run", "--config", s(&tmp.path().join("absent.toml"))]);
    assert_eq!(code(&o), 2);
    let o = rlqn(&["run", "--config", s(&cfg), "--override", "nonsense"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn sweep_covers_the_grid_with_a_baseline_arm() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "{}\n[grid]\nthresholds = [5, 10]\narms = [\"algo\", \"pi0\"]\nbaseline_slots = 5000\n",
        TWO_NODE.replace("seeds = [1, 2]", "seeds = [1, 2, 3]")
    );
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = tmp.path().join("out");
    let o = rlqn(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let algo = rows.iter().filter(|r| &r[0] == "algo").count();
    let pi0 = rows.iter().filter(|r| &r[0] == "pi0").count();
    assert_eq!(algo, 6);
    assert_eq!(pi0, 3);
    assert!(rows.iter().all(|r| &r[3] == "ok"));
    let aggregate = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 4);

    // plot data: one column per arm, idempotent
    let o = rlqn(&["emit-plot-data", s(&out), "--points", "50"]);
    assert_eq!(code(&o), 0);
    let first = fs::read(out.join("plot/running_avg.csv")).unwrap();
    let header = String::from_utf8_lossy(&first).lines().next().unwrap().to_string();
    assert_eq!(header, "t,algo-U10,algo-U5,pi0");
    assert!(String::from_utf8_lossy(&first).lines().count() <= 51);
    assert_eq!(code(&rlqn(&["emit-plot-data", s(&out), "--points", "50"])), 0);
    assert_eq!(first, fs::read(out.join("plot/running_avg.csv")).unwrap());
}

#[test]
fn workers_do_not_change_bytes() {
    let tmp = TempDir::new().unwrap();
    let text = format!("{TWO_NODE}\n[grid]\nthresholds = [4, 6]\narms = [\"algo\", \"oracle\"]\nbaseline_slots = 3000\n");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&rlqn(&["sweep", "--config", s(&cfg), "--out", s(&a), "--workers", "1"])), 0);
    let o = Command::new(BIN)
        .args(["sweep", "--config", s(&cfg), "--out", s(&b)])
        .env("RLQN_WORKERS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(files_under(&a), files_under(&b));
}

#[test]
fn failed_cell_leaves_the_rest_and_exits_four() {
    let tmp = TempDir::new().unwrap();
    // the U=10 space has 121 states, above the cap
    let text = format!("{}state_cap = 40\n\n[grid]\nthresholds = [5, 10]\n", TWO_NODE);
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let out = tmp.path().join("out");
    let o = rlqn(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 4);
    for seed in [1, 2] {
        assert!(out.join(format!("algo-U5/seed-{seed}/manifest.toml")).exists());
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().filter(|l| l.contains(",failed,")).count(), 2);
    assert_eq!(summary.lines().filter(|l| l.contains(",ok,")).count(), 2);
}

#[test]
fn plot_data_needs_an_existing_run() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&rlqn(&["emit-plot-data", s(&tmp.path().join("nope"))])), 2);
    assert_eq!(code(&rlqn(&["emit-plot-data", s(tmp.path())])), 2);
}

#[test]
fn single_run_gives_a_single_curve() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    let out = tmp.path().join("out");
    assert_eq!(code(&rlqn(&["run", "--config", s(&cfg), "--out", s(&out), "--seed", "1"])), 0);
    assert_eq!(code(&rlqn(&["emit-plot-data", s(&out)])), 0);
    let text = fs::read_to_string(out.join("plot/running_avg.csv")).unwrap();
    assert_eq!(text.lines().next(), Some("t,run"));
}

#[test]
fn solve_and_diagnose_write_their_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", TWO_NODE);
    let out = tmp.path().join("solve");
    let o = rlqn(&["solve", "--config", s(&cfg), "--out", s(&out), "--threshold", "4"]);
    assert_eq!(code(&o), 0);
    let policy = fs::read_to_string(out.join("policy.csv")).unwrap();
    assert_eq!(policy.lines().count(), 26);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("rho_tilde_star "));
    assert_eq!(code(&rlqn(&["solve", "--config", s(&cfg), "--solver", "magic"])), 2);

    let o = rlqn(&[
        "diagnose",
        "sample-requirement",
        "--delta-p",
        "0.1",
        "--reach",
        "4",
        "--threshold",
        "5",
        "--queues",
        "2",
        "--actions",
        "2",
        "--delta",
        "0.1",
    ]);
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "2009");

    let b = tmp.path().join("b");
    let o = rlqn(&[
        "diagnose",
        "boundary",
        "--config",
        s(&cfg),
        "--out",
        s(&b),
        "--thresholds",
        "3,4,5",
        "--slots",
        "20000",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(b.join("boundary.csv")).unwrap().lines().count(), 4);

    let h = tmp.path().join("h");
    let o = rlqn(&[
        "diagnose", "hitting", "--config", s(&cfg), "--out", s(&h), "--threshold", "3", "--pairs", "50",
    ]);
    assert_eq!(code(&o), 0);
    assert!(fs::read_to_string(h.join("hitting.csv")).unwrap().starts_with("l1_distance,"));
}
