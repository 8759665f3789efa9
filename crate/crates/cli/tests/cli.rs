use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use platoon_core::config::REFERENCE_CONFIG;

fn platoon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_platoon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn simulate_writes_per_range_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REFERENCE_CONFIG);
    let out = dir.path().join("out");
    let o = platoon(&["simulate", &cfg, "--horizon", "5", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for r in [1, 3, 10] {
        let traj = fs::read_to_string(out.join(format!("trajectory_r{r}.csv"))).unwrap();
        assert!(traj.starts_with("t,x_1,"));
        assert_eq!(traj.lines().count(), 502);
        assert!(out.join(format!("certificate_r{r}.txt")).exists());
    }
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(out.join("plot.py").exists());
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn seed_override_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REFERENCE_CONFIG);
    let read = |name: &str| {
        let out = dir.path().join(name);
        let o = platoon(&["simulate", &cfg, "--horizon", "3", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        fs::read(out.join("trajectory_r3.csv")).unwrap()
    };
    assert_eq!(read("a"), read("b"));
}

#[test]
fn certify_prints_each_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REFERENCE_CONFIG);
    let out = dir.path().join("out");
    let o = platoon(&["certify", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("r =   1  m =  10"));
    assert!(text.contains("r =  10  m =   1"));
    let cert = fs::read_to_string(out.join("certificate_r3.txt")).unwrap();
    assert!(cert.contains("eta2"));
}

#[test]
fn string_stability_reports_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), REFERENCE_CONFIG);
    let out = dir.path().join("out");
    let o = platoon(&["string-stability", &cfg, "--horizon", "20", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("all within bound: true"));
    let table = fs::read_to_string(out.join("string_stability.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
}

#[test]
fn malformed_config_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[platoon]\nn = \"ten\"\n");
    let o = platoon(&["simulate", &cfg]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("experiment.toml"), "{err}");
}

#[test]
fn invalid_range_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = REFERENCE_CONFIG.replace("r_list = [1, 3, 10]", "r_list = [1, 11]");
    assert_ne!(text, REFERENCE_CONFIG);
    let cfg = write_config(dir.path(), &text);
    let o = platoon(&["certify", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("r_list"));
}

#[test]
fn missing_config_fails() {
    let o = platoon(&["verify", "/nonexistent/platoon.toml"]);
    assert!(!o.status.success());
}
