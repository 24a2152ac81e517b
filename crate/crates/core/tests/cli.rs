mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::manifest_path;

fn cacq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cacq"))
        .args(args)
        .env("CACQ_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

const DEGENERATE: &str = r#"
channel = "deterministic(1)"

[arrival]
process = "poisson(600, 1)"

[connections]
arrival_rate = 0.0
mean_duration = 1.0

[policy]
rule = "threshold(1)"

[queue]
capacity = 0
max_batch = 1
frame_length_ms = 1.0
"#;

#[test]
fn validate_accepts_the_full_scenario() {
    let o = cacq(&["validate", &manifest_path("scenarios/full.toml")]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s = stdout(&o);
    assert!(s.contains("states 42742"), "{s}");
    assert!(s.contains("fingerprint"));
}

#[test]
fn short_alpha_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let bad = std::fs::read_to_string(manifest_path("scenarios/small.toml"))
        .unwrap()
        .replace("rule = \"threshold(8)\"", "rule = \"queue_aware_vector\"\nalpha = [1.0, 0.5]");
    assert!(bad.contains("queue_aware_vector"));
    let path = write(dir.path(), "bad.toml", &bad);
    let o = cacq(&["validate", &path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("policy.alpha"), "{}", stderr(&o));
}

#[test]
fn empty_and_missing_files_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write(dir.path(), "empty.toml", "");
    assert_eq!(cacq(&["validate", &empty]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(cacq(&["solve", missing.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(cacq(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn solve_emits_one_row_per_policy() {
    let cfg = manifest_path("scenarios/small.toml");
    let o = cacq(&["solve", &cfg, "--policy", "threshold:6", "--policy", "none:10"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with(cacq::metrics::CSV_HEADER));
    let r = rows(&out);
    assert_eq!(r.len(), 2);
    assert_eq!(r[0][0], "threshold(6)");
    assert_eq!(r[1][0], "none(10)");
    for row in &r {
        assert_eq!(row.len(), cacq::metrics::CSV_HEADER.split(',').count());
    }
}

#[test]
fn solve_output_is_reproducible_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = manifest_path("scenarios/small.toml");
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = cacq(&["solve", &cfg, "--policy", "queue_aware:20", "--out", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    // A second run appends without repeating the header.
    cacq(&["solve", &cfg, "--out", a.to_str().unwrap()]);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert_eq!(text.matches("policy,").count(), 1);
}

#[test]
fn single_point_sweep_equals_solve() {
    let cfg = manifest_path("scenarios/small.toml");
    let solve = cacq(&["solve", &cfg]);
    let sweep = cacq(&["sweep", &cfg, "--vary", "rho=180:180:1"]);
    assert_eq!(sweep.status.code(), Some(0), "{}", stderr(&sweep));
    assert_eq!(stdout(&solve), stdout(&sweep));
}

#[test]
fn sweep_covers_the_grid_for_every_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = manifest_path("scenarios/small.toml");
    let gp = dir.path().join("plot.gp");
    let o = cacq(&[
        "sweep",
        &cfg,
        "--vary",
        "snr=0:10:5",
        "--policies",
        "threshold:8,none:12",
        "--gnuplot",
        gp.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 6);
    let snrs: Vec<&str> = r.iter().map(|row| row[2].as_str()).collect();
    assert_eq!(snrs, ["0", "5", "10", "0", "5", "10"]);
    let script = std::fs::read_to_string(gp).unwrap();
    assert!(script.contains("none(12)"));
    assert_eq!(cacq(&["sweep", &cfg, "--vary", "load=0:1:1"]).status.code(), Some(2));
}

#[test]
fn compare_passes_on_the_tiny_scenario_and_catches_tampering() {
    let cfg = manifest_path("scenarios/tiny.toml");
    let o = cacq(&["compare", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}\n{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("p_block"));
    let o = cacq(&["compare", &cfg, "--tamper-sigma", "10"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn simulate_needs_a_sim_section() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "nosim.toml", DEGENERATE);
    assert_eq!(cacq(&["simulate", &cfg]).status.code(), Some(2));
    assert_eq!(cacq(&["compare", &cfg]).status.code(), Some(2));
}

#[test]
fn simulate_writes_raw_counts() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    let o = cacq(&["simulate", &manifest_path("scenarios/tiny.toml"), "--raw", raw.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(raw).unwrap();
    // Policy comment, header and one line per replication.
    assert_eq!(text.lines().count(), 12);
}

#[test]
fn degenerate_scenario_solves_to_an_empty_system() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "degenerate.toml", DEGENERATE);
    let o = cacq(&["solve", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = &rows(&stdout(&o))[0];
    // policy,rho,snr_db,p_block,n_conn,n_queue,n_drop,lambda_bar,p_drop,throughput,delay
    let num = |i: usize| r[i].parse::<f64>().unwrap();
    assert_eq!(num(3), 0.0);
    assert_eq!(num(4), 0.0);
    assert_eq!(num(5), 0.0);
    assert_eq!(num(6), 0.0);
    assert_eq!(num(9), 0.0);
    assert!(num(10).is_nan());
}

#[test]
fn dumps_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = manifest_path("scenarios/tiny.toml");
    let pi = dir.path().join("pi.txt");
    let mat = dir.path().join("p.txt");
    let o = cacq(&[
        "solve",
        &cfg,
        "--dump-pi",
        pi.to_str().unwrap(),
        "--dump-matrix",
        mat.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let p = cacq::chain::TransitionMatrix::read_coordinates(&mut std::io::BufReader::new(
        std::fs::File::open(&mat).unwrap(),
    ))
    .unwrap();
    let pi: Vec<f64> = std::fs::read_to_string(&pi)
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(pi.len(), p.dim());
    assert!(cacq::solver::residual(&p, &pi) < 1e-10);
    let two = cacq(&["solve", &cfg, "--policy", "threshold:1", "--policy", "threshold:2", "--dump-pi", "x"]);
    assert_eq!(two.status.code(), Some(2));
}
