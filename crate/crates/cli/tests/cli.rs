use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rfspin"))
}

#[test]
fn malformed_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"mode": "simulate", "params": {"m_star": 10, "dim": 1}, "unknown": true}"#).unwrap();
    let out = dir.path().join("out");
    let status = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_volume_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bin().args(["--mode", "simulate", "--out"]).arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("volume"));
    assert!(!out.exists());
}

#[test]
fn bad_tolerance_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bin().args(["--mode", "verify", "--tolerance", "beta"]).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = bin().args(["--mode", "verify", "--tolerance", "nonsense=1"]).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn constants_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"mode": "constants", "params": {"eps0": 0.1, "m_star": 100, "dim": 3}}"#).unwrap();
    let out = dir.path().join("out");
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("constants.csv")).unwrap();
    for name in ["a,", "q0,", "delta0,", "b,", "epsilon_measured,", "beta,", "beta_tilde,", "r,"] {
        assert!(table.lines().any(|l| l.starts_with(name)), "{name}");
    }
    let record: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("record.json")).unwrap()).unwrap();
    assert_eq!(record["config"]["mode"], "constants");
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
}

fn simulate(dir: &std::path::Path, name: &str, delta: f64) -> std::path::PathBuf {
    let cfg = dir.join(format!("{name}.json"));
    fs::write(
        &cfg,
        format!(
            r#"{{"mode": "simulate", "params": {{"m_star": 20, "dim": 2, "delta": {delta}}},
               "volume": {{"extents": [3, 3]}}, "seeds": {{"base": 5, "realizations": 3}},
               "simulation": {{"sweeps": 40, "burn_in": 20, "batches": 4}}}}"#
        ),
    )
    .unwrap();
    let out = dir.join(name);
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).args(["--threads", "2"]).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a", 0.05);
    let b = simulate(dir.path(), "b", 0.05);
    let ra = fs::read(a.join("realizations.csv")).unwrap();
    assert_eq!(ra, fs::read(b.join("realizations.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.csv")).unwrap(), fs::read(b.join("summary.csv")).unwrap());
    assert_eq!(String::from_utf8(ra).unwrap().lines().count(), 4);
    assert!(!a.join("progress.jsonl").exists());
}

#[test]
fn zero_disorder_has_no_spread() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "z", 0.0);
    let s = fs::read_to_string(out.join("summary.csv")).unwrap();
    let row: Vec<&str> = s.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[3].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn verify_subset_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("v.json");
    fs::write(&cfg, r#"{"mode": "verify", "effort": "quick", "checks": ["resolvent_identity", "energy_split"]}"#).unwrap();
    let out = dir.path().join("out");
    let o = bin().arg("--config").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("checks.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().skip(1).all(|l| l.contains(",pass,")));
}
