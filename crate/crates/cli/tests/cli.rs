use std::fs;
use std::process::Command;

fn jumpflock() -> Command {
    Command::new(env!("CARGO_BIN_EXE_jumpflock"))
}

#[test]
fn travelwave_prints_profile() {
    let out = jumpflock().args(["travelwave", "--rate", "step:2,1"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().next(), Some("x,density"));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let c: f64 = stderr.split("c = ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((c - 1.5).abs() < 1e-12);
}

#[test]
fn gap_pmf_sums_to_one() {
    let out = jumpflock().args(["gap", "--rate", "step:2,1"]).output().unwrap();
    assert!(out.status.success());
    let total: f64 = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn simulate_writes_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "scenario = \"cli\"\nn = 50\nrate = \"exp:1\"\nhorizon = 5.0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = jumpflock()
        .args(["simulate", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--seed", "4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.snapshot", "summary.json", "hist_timeavg.csv", "hist_snapshot.csv", "mean_path.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    assert!(fs::read_to_string(out_dir.join("config.snapshot")).unwrap().contains("seed = 4"));
}

#[test]
fn bad_input_fails_cleanly() {
    let out = jumpflock().args(["simulate", "no_such_preset"]).output().unwrap();
    assert!(!out.status.success());
    let out = jumpflock().args(["extremes", "--beta", "0.4", "--T", "3"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("positive integer"));
}
