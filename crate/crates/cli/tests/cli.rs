use pointsim::harness::{run_scenario, scenarios, Mode, RunOptions};
use pointsim_cli::{run_status, EXIT_CONFIG, EXIT_OK, EXIT_VIOLATION};
use std::path::Path;
use std::process::{Command, Output};

fn pointsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pointsim")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> u8 {
    o.status.code().expect("exited") as u8
}

fn run(dir: &Path, mode: &str, seed: &str) -> Output {
    pointsim(&["run", "--scenario", "trial_topology", "--mode", mode, "--seed", seed, "--out", dir.to_str().unwrap()])
}

#[test]
fn run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("icn");
    let o = run(&dir, "icn", "7");
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["effective_config.json", "events.jsonl", "metrics.csv", "summary.txt"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("effective_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["mode"], "icn");
    let summary = std::fs::read_to_string(dir.join("summary.txt")).unwrap();
    assert!(summary.contains("invariants   ok"));
    assert_eq!(String::from_utf8_lossy(&o.stdout), summary);
}

#[test]
fn compare_pairs_modes_and_rejects_other_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let (icn, ip, other) = (tmp.path().join("icn"), tmp.path().join("ip"), tmp.path().join("other"));
    assert_eq!(code(&run(&icn, "icn", "3")), EXIT_OK);
    assert_eq!(code(&run(&ip, "ip", "3")), EXIT_OK);
    assert_eq!(code(&run(&other, "ip", "4")), EXIT_OK);

    let o = pointsim(&["compare", icn.to_str().unwrap(), ip.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(report.contains("bytes.chunk"), "{report}");

    let o = pointsim(&["compare", icn.to_str().unwrap(), other.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_CONFIG);
}

#[test]
fn bad_inputs_exit_with_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"name": "x", "duration_ms": 0}"#).unwrap();
    let bad = bad.to_str().unwrap();
    assert_eq!(code(&pointsim(&["validate", bad])), EXIT_CONFIG);
    let out = tmp.path().join("out");
    let o = pointsim(&["run", "--scenario", bad, "--mode", "icn", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(!out.join("events.jsonl").exists());
    assert_eq!(code(&pointsim(&["validate", "no_such_scenario"])), EXIT_CONFIG);
    let missing = tmp.path().join("missing");
    assert_eq!(code(&pointsim(&["compare", missing.to_str().unwrap(), missing.to_str().unwrap()])), EXIT_CONFIG);
}

#[test]
fn validate_prints_the_effective_config() {
    let o = pointsim(&["validate", "iptv_failover"]);
    assert_eq!(code(&o), EXIT_OK);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("config hash"));
    assert!(text.contains("detection_delay_ms"));
}

#[test]
fn violations_map_to_exit_one() {
    let cfg = scenarios::shipped("trial_topology").unwrap().unwrap();
    let mut out = run_scenario(&cfg, Mode::Ip, RunOptions::default()).unwrap();
    assert_eq!(run_status(&out), EXIT_OK);
    out.violations.push("conservation: forced".into());
    assert_eq!(run_status(&out), EXIT_VIOLATION);
}
