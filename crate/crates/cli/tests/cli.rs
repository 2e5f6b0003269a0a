use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_daedvfs"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = run(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
}

fn network() -> String {
    fixture("network20.json").display().to_string()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn explore_clocks_lists_every_config() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["explore-clocks"], dir.path());
    let rows = csv_rows(&dir.path().join("clocks.csv"));
    assert_eq!(rows.len(), 14);
    // one selected config per distinct frequency
    let selected = rows.iter().filter(|r| &r[8] == "true").count();
    let mut freqs: Vec<&str> = rows.iter().map(|r| r.get(5).unwrap()).collect();
    freqs.dedup();
    assert_eq!(selected, freqs.len());
    assert!(rows.iter().any(|r| &r[5] == "216.000"));

    ok(&["explore-clocks", "--max-sysclk-mhz", "216"], dir.path());
    assert_eq!(csv_rows(&dir.path().join("clocks.csv")).len(), 12);
}

#[test]
fn compare_writes_three_rows_per_slack() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["compare", "--network", &network()], dir.path());
    let rows = csv_rows(&dir.path().join("comparison.csv"));
    assert_eq!(rows.len(), 9);
    for chunk in rows.chunks(3) {
        assert!(chunk[0][0].starts_with("baseline_slack"));
        assert_eq!(&chunk[0][2], "1.0");
        let gated: f64 = chunk[1][2].parse().unwrap();
        let planned: f64 = chunk[2][2].parse().unwrap();
        assert!(planned <= gated && gated <= 1.0, "{planned} {gated}");
        assert_eq!(&chunk[2][4], "true");
    }
    assert!(dir.path().join("manifest.json").exists());

    ok(&["compare", "--network", &network(), "--slack", "50"], dir.path());
    assert_eq!(csv_rows(&dir.path().join("comparison.csv")).len(), 3);
}

#[test]
fn optimize_then_simulate_reproduces_report() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["optimize", "--network", &network(), "--qos-slack-pct", "30"], dir.path());
    let schedule = dir.path().join("schedule.json");
    let o = run(&["simulate", "--schedule", schedule.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let report = fs::read(dir.path().join("report.json")).unwrap();
    let sim = fs::read(dir.path().join("simulation.json")).unwrap();
    assert_eq!(report, sim);
    let v: serde_json::Value = serde_json::from_slice(&report).unwrap();
    assert_eq!(v["qos_met"], true);
    assert_eq!(v["per_layer"].as_array().unwrap().len(), 20);
}

#[test]
fn infeasible_budget_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["optimize", "--network", &network(), "--qos-us", "100"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("schedule.json")).unwrap()).unwrap();
    assert_eq!(v["feasible"], false);
}

#[test]
fn invalid_input_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{not json}\n").unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["pareto".into(), "--profiles".into(), bad.display().to_string()],
        vec!["optimize".into(), "--network".into(), network(), "--profiles".into(), bad.display().to_string(), "--qos-us".into(), "1".into()],
        vec!["optimize".into(), "--network".into(), network()],
        vec!["optimize".into(), "--network".into(), network(), "--qos-us".into(), "-5".into()],
        vec!["compare".into(), "--network".into(), network(), "--quantum-us".into(), "0".into()],
        vec!["no-such-command".into()],
    ];
    for args in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        assert_eq!(run(&args, dir.path()).status.code(), Some(3), "{args:?}");
    }
    let missing = dir.path().join("missing.json");
    let o = run(&["pareto", "--network", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn ingest_and_pareto_on_measured_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = fixture("profiles3.jsonl").display().to_string();
    ok(&["ingest", "--profiles", &profiles], dir.path());
    let normalized = dir.path().join("profiles.jsonl");
    assert_eq!(fs::read_to_string(&normalized).unwrap().lines().count(), 13);
    ok(&["pareto", "--profiles", normalized.to_str().unwrap()], dir.path());
    let rows = csv_rows(&dir.path().join("pareto.csv"));
    let layers: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(layers.len(), 3);
}

#[test]
fn runs_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["synth-profiles", "--network", &network(), "--seed", "42", "--jitter-pct", "10"];
    ok(&args, a.path());
    ok(&args, b.path());
    for f in ["profiles.jsonl", "manifest.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let args = ["compare", "--network", &network(), "--seed", "42", "--jitter-pct", "10"];
    ok(&args, a.path());
    ok(&args, b.path());
    assert_eq!(
        fs::read(a.path().join("comparison.csv")).unwrap(),
        fs::read(b.path().join("comparison.csv")).unwrap()
    );
    let other = tempfile::tempdir().unwrap();
    ok(&["synth-profiles", "--network", &network(), "--seed", "43", "--jitter-pct", "10"], other.path());
    assert_ne!(fs::read(a.path().join("profiles.jsonl")).unwrap(), fs::read(other.path().join("profiles.jsonl")).unwrap());
}
