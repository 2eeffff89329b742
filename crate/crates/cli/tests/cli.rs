use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_queuenet"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn objective_line(o: &Output) -> f64 {
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix("objective "))
        .expect("objective printed")
        .parse()
        .unwrap()
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_policy(dir: &Path, late: f64, extra: &str) -> PathBuf {
    let path = dir.join(format!("policy_{late}.json"));
    std::fs::write(
        &path,
        format!(
            r#"{{"initial_splits":{{"f2":{{"q2-q3-q5":{},"q2-q4-q5":{late}}}}}{extra}}}"#,
            1.0 - late
        ),
    )
    .unwrap();
    path
}

#[test]
fn optimize_then_cdf_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("opt");
    let o = run(&["optimize", s(&data("fig2.topo")), "--engine", "md1", "--out-dir", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let reported = objective_line(&o);

    let policy = out.join("policy.json");
    let text = std::fs::read_to_string(&policy).unwrap();
    assert!(text.contains("\"alphas\"") && text.contains("\"engine\": \"md1\""));

    let cdf_out = dir.path().join("cdf");
    let c = run(&["cdf", s(&data("fig2.topo")), s(&policy), "--out-dir", s(&cdf_out)]);
    assert!(c.status.success());
    assert!((objective_line(&c) - reported).abs() <= 1e-9);

    // the policy also works as a starting point
    let again = run(&[
        "optimize",
        s(&data("fig2.topo")),
        "--engine",
        "md1",
        "--init",
        s(&policy),
        "--out-dir",
        s(&dir.path().join("again")),
    ]);
    assert!(again.status.success());
    assert!(objective_line(&again) <= reported + 1e-12);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "optimize");
    for f in manifest["outputs"].as_array().unwrap() {
        assert!(Path::new(f.as_str().unwrap()).exists(), "{f}");
    }
    let (header, rows) = read_csv(&out.join("trace.csv"));
    assert_eq!(header[0], "iteration");
    assert!(!rows.is_empty());
}

#[test]
fn optimize_without_degrees_of_freedom() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["optimize", s(&data("single_path.topo")), "--out-dir", s(dir.path())]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("no degrees of freedom"));
}

#[test]
fn sweep_both_engines() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        s(&data("fig2.topo")),
        "--flow",
        "f2",
        "--path",
        "q2-q4-q5",
        "--engine",
        "both",
        "--out-dir",
        s(dir.path()),
    ]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 19);
    for column in ["objective_mm1", "objective_md1"] {
        let i = header.iter().position(|h| h == column).unwrap();
        let values: Vec<f64> = rows.iter().map(|r| r[i].parse().unwrap()).collect();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let at = values.iter().position(|&v| v == min).unwrap();
        assert!(at > 0 && at < 18, "{column}");
    }
}

#[test]
fn sweep_boundary_and_bad_flow() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep", s(&data("fig2.topo")), "--flow", "f2", "--from", "0", "--to", "1", "--steps", "2",
        "--out-dir", s(dir.path()),
    ]);
    assert!(o.status.success());
    let (_, rows) = read_csv(&dir.path().join("sweep.csv"));
    assert_eq!(rows.len(), 2);
    let bad = run(&["sweep", s(&data("fig2.topo")), "--flow", "f1", "--out-dir", s(dir.path())]);
    assert_eq!(bad.status.code(), Some(2));
}

/// F_late(ω) − F_early(ω) for flow 2 under the given late split.
fn late_minus_early(dir: &Path, late: f64) -> f64 {
    let policy = write_policy(dir, late, r#","engine":"md1""#);
    let out = dir.join(format!("cdf_{late}"));
    let o = run(&["cdf", s(&data("fig2.topo")), s(&policy), "--out-dir", s(&out)]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&out.join("cdf.csv"));
    for col in 1..header.len() {
        let v: Vec<f64> = rows.iter().map(|r| r[col].parse().unwrap()).collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0]), "{}", header[col]);
    }
    let (_, summary) = read_csv(&out.join("cdf_summary.csv"));
    let delta = |sig: &str| -> f64 {
        summary.iter().find(|r| r[2] == sig).unwrap()[4].parse().unwrap()
    };
    delta("q2-q3-q5") - delta("q2-q4-q5")
}

#[test]
fn cdf_ordering_flips_with_split() {
    let dir = tempfile::tempdir().unwrap();
    assert!(late_minus_early(dir.path(), 0.1) > 0.0);
    assert!(late_minus_early(dir.path(), 0.9) < 0.0);
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let policy = write_policy(dir.path(), 0.3, "");
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&[
            "simulate", s(&data("fig2.topo")), s(&policy), "--n-vehicles", "20000", "--seed", "42",
            "--out-dir", s(&out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("PASS flow f2 delta"));
        files.push(std::fs::read(out.join("samples.csv")).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.topo");
    std::fs::write(&broken, "{ not json").unwrap();
    assert_eq!(run(&["optimize", s(&broken), "--out-dir", s(dir.path())]).status.code(), Some(2));

    let unstable = write_policy(dir.path(), 1.0, r#","service_rates":{"q4":0.5}"#);
    let o = run(&["simulate", s(&data("fig2.topo")), s(&unstable), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(3));

    let infeasible = dir.path().join("half.json");
    std::fs::write(&infeasible, r#"{"initial_splits":{"f2":{"q2-q3-q5":0.25,"q2-q4-q5":0.25}}}"#).unwrap();
    let o = run(&["cdf", s(&data("fig2.topo")), s(&infeasible), "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(4));

    let o = run(&["optimize", s(&data("fig2.topo")), "--phi0", "0.0001", "--out-dir", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn validate_fig2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "validate", s(&data("fig2.topo")), "--n-vehicles", "50000", "--out-dir", s(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    assert!(dir.path().join("checks.csv").exists());
}
