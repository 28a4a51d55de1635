use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--rounds=2",
    "--partition.clients=4",
    "--data.samples_per_class=60",
    "--partition.k=20",
    "--model.hidden=16",
    "--model.embedding_dim=8",
];

fn pfpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfpl")).args(args).output().unwrap()
}

/// Append the small preset; overrides later in `args` win.
fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let split = args.iter().position(|a| a.starts_with("--") && a.contains('=')).unwrap_or(args.len());
    let mut all = args[..split].to_vec();
    all.extend_from_slice(SMALL);
    all.extend_from_slice(&args[split..]);
    all
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn count_dirs(dir: &Path) -> usize {
    std::fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count()
}

#[test]
fn validate_empty_config_prints_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    std::fs::write(&cfg, "").unwrap();
    let o = pfpl(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("alpha = 0.5"));
}

#[test]
fn out_of_range_alpha_is_a_config_error() {
    let o = pfpl(&["validate", "--alpha=1.5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"));
}

#[test]
fn unknown_key_is_a_config_error() {
    let o = pfpl(&["validate", "--beta=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beta"));
}

#[test]
fn command_line_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a.cfg");
    std::fs::write(&cfg, "lambda = 1\nseed = 4\n").unwrap();
    let o = pfpl(&["validate", "-c", cfg.to_str().unwrap(), "--lambda=2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("\nlambda = 2"), "{text}");
    assert!(text.contains("seed = 4"), "{text}");
    let o = pfpl(&["validate", "-c", cfg.to_str().unwrap(), "--seed", "9"]);
    assert!(stdout(&o).contains("seed = 9"));
}

#[test]
fn run_writes_one_directory_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = pfpl(&with_small(&["run", "--out", out.to_str().unwrap(), "--rounds=1"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(count_dirs(&out.join("rounds")), 2);
    for f in ["resolved-config.json", "metrics.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn non_empty_output_requires_force() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let out = dir.path().to_str().unwrap();
    let o = pfpl(&with_small(&["run", "--out", out]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("output_dir"));
    let o = pfpl(&with_small(&["run", "--force", "--out", out]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn missing_output_is_a_config_error() {
    let o = pfpl(&with_small(&["run"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_replay_gives_identical_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = pfpl(&with_small(&["run", "--out", out.to_str().unwrap(), "--seed=5"]));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    // A third run from the echoed config alone.
    let c = dir.path().join("c");
    let echo = a.join("resolved-config.json");
    let o = pfpl(&["run", "-c", echo.to_str().unwrap(), "--out", c.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap();
    assert_eq!(m(&a), m(&b));
    assert_eq!(m(&a), m(&c));
}

#[test]
fn sweep_over_unsweepable_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = pfpl(&with_small(&["sweep", "--grid", "model.hidden=8,16", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.hidden"));
}

#[test]
fn alpha_sweep_writes_one_tree_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let o = pfpl(&with_small(&["sweep", "--grid", "alpha=0,0.5,1", "--out", out.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(count_dirs(&out.join("points")), 3);
    let fin = std::fs::read_to_string(out.join("final.csv")).unwrap();
    assert_eq!(fin.lines().count(), 4, "{fin}");
    assert!(out.join("sweep.csv").is_file());
}

#[test]
fn single_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let sweep = dir.path().join("sweep");
    let o = pfpl(&with_small(&["run", "--out", run.to_str().unwrap(), "--lambda=2"]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = pfpl(&with_small(&["sweep", "--grid", "lambda=2", "--out", sweep.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(run.join("metrics.csv")).unwrap(),
        std::fs::read(sweep.join("points/p000/metrics.csv")).unwrap()
    );
}

#[test]
fn report_rebuilds_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = pfpl(&with_small(&["run", "--out", out.to_str().unwrap()]));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let metrics = std::fs::read(out.join("metrics.csv")).unwrap();
    std::fs::remove_file(out.join("metrics.csv")).unwrap();
    let o = pfpl(&["report", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read(out.join("metrics.csv")).unwrap(), metrics);
    assert!(stdout(&o).contains("final macro accuracy"));
}

#[test]
fn report_on_missing_directory_fails() {
    let o = pfpl(&["report", "/nonexistent/pfpl-run"]);
    assert_eq!(o.status.code(), Some(1));
}
