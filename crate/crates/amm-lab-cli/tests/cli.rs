//! End-to-end checks of the command-line surface: exit codes, artifact
//! wiring, and byte-level reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_amm-lab"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn tmp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("amm-lab-cli-test-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Deterministic tick fixture drawn from the intensity model at
/// (a1, a3) = (142.7, 13.6) with ten-minute windows.
fn write_fixture(path: &Path, windows: usize) {
    let mut state = 0x853c49e6748fea9bu64;
    let mut next = move || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut rows = String::from("timestamp,s,z,side,size\n");
    let mut t: i64 = 1_600_000_000_000;
    for _ in 0..windows {
        let gap = (next() - 0.5) * 18.0;
        let lam_m = (142.7 + 13.6 * gap) / 144.0;
        let lam_p = (142.7 - 13.6 * gap) / 144.0;
        let (s, z) = (2820.0 + gap, 2820.0);
        rows.push_str(&format!("{t},{s:.4},{z:.4},none,0\n"));
        // thinned Bernoulli draws approximate the within-window Poisson count
        for i in 0..10 {
            if next() < lam_m / 10.0 {
                rows.push_str(&format!("{},{s:.4},{z:.4},buy,300\n", t + 1000 + i));
            }
            if next() < lam_p / 10.0 {
                rows.push_str(&format!("{},{s:.4},{z:.4},sell,300\n", t + 2000 + i));
            }
        }
        t += 600_000;
    }
    fs::write(path, rows).unwrap();
}

#[test]
fn calibrate_recovers_fixture_parameters() {
    let dir = tmp_dir("calibrate");
    let ticks = dir.join("ticks.csv");
    write_fixture(&ticks, 3_000);
    let out = run(&["calibrate", "--ticks", ticks.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("calibration.json")).unwrap()).unwrap();
    let a1 = json["a1_hat"].as_f64().unwrap();
    let a3 = json["a3_hat"].as_f64().unwrap();
    let a1_se = json["a1_se"].as_f64().unwrap();
    let a3_se = json["a3_se"].as_f64().unwrap();
    assert!((a1 - 142.7).abs() <= 2.0 * a1_se, "a1 = {a1} ± {a1_se}");
    assert!((a3 - 13.6).abs() <= 2.0 * a3_se, "a3 = {a3} ± {a3_se}");
    assert!(dir.join("calibration_residuals.csv").exists());
}

#[test]
fn calibrate_input_errors_exit_two() {
    let dir = tmp_dir("calibrate-err");
    let missing = dir.join("nope.csv");
    let out = run(&["calibrate", "--ticks", missing.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let empty = dir.join("empty.csv");
    fs::write(&empty, "timestamp,s,z,side,size\n").unwrap();
    let out = run(&["calibrate", "--ticks", empty.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty.csv"));
}

#[test]
fn solve_then_simulate_is_reproducible() {
    let dir = tmp_dir("pipeline");
    let out_arg = dir.to_str().unwrap();

    // risk-averse simulation demands the solve artifact first
    let out = run(&["simulate", "--out", out_arg, "--paths", "5", "--steps", "1000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("amm-lab solve"));

    let out = run(&["solve", "--out", out_arg, "--steps", "4000"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("existence: PASS"));
    assert!(dir.join("riccati.csv").exists());

    let args = [
        "simulate", "--out", out_arg, "--paths", "40", "--steps", "4000", "--seed", "9",
        "--equal-split",
    ];
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(dir.join("summary.json")).unwrap();
    let out = run(&args);
    assert!(out.status.success());
    let second = fs::read(dir.join("summary.json")).unwrap();
    assert_eq!(first, second, "summary.json must be byte-identical across reruns");

    let json: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert!(json["mean_reward"].as_f64().unwrap() > 0.0);
    assert!(json["mean_venue_pnl"].as_f64().unwrap() > 0.0);
    assert!(json["equal_split_p0"].is_number());
}

#[test]
fn verify_passes_on_shipped_defaults() {
    let dir = tmp_dir("verify");
    let out = run(&[
        "verify", "--out", dir.to_str().unwrap(), "--paths", "300", "--steps", "4000", "--seed", "2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("all oracles PASS"));
    assert!(dir.join("verify.jsonl").exists());
}

#[test]
fn config_errors_exit_two() {
    let dir = tmp_dir("config-err");
    let cfg = dir.join("bad.cfg");
    fs::write(&cfg, "sigma = 160\nnot_a_key = 5\n").unwrap();
    let out = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_key"));
}
