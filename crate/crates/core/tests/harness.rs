use std::fs;
use std::path::Path;

use jumpflock::harness::{load_config, parse_config, parse_pde_config, preset, run_pde_to, run_scenario_to};

fn small_config(seed: u64) -> jumpflock::harness::ExperimentConfig {
    let mut cfg = parse_config(
        r#"
scenario = "determinism"
n = 200
rate = "step:2,1"
horizon = 30.0
record_events = true
[histogram]
bins = 40
snapshot_time = 20.0
"#,
    )
    .unwrap();
    cfg.seed = seed;
    cfg
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_scenario_to(&small_config(9), a.path()).unwrap();
    run_scenario_to(&small_config(9), b.path()).unwrap();
    run_scenario_to(&small_config(10), c.path()).unwrap();
    let (fa, fb, fc) = (files(a.path()), files(b.path()), files(c.path()));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["config.snapshot", "events.csv", "hist_snapshot.csv", "hist_timeavg.csv", "mean_path.csv", "summary.json"]
    );
    assert_eq!(fa, fb);
    let differ = fa.iter().zip(&fc).filter(|(x, y)| x.1 != y.1).count();
    assert!(differ >= 4, "only {differ} files changed with the seed");
}

#[test]
fn snapshot_reloads_to_the_same_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(3);
    run_scenario_to(&cfg, dir.path()).unwrap();
    let path = dir.path().join("config.snapshot");
    let back = load_config(&path).unwrap();
    assert_eq!(back, cfg);
    let again = dir.path().join("again.toml");
    back.save(&again).unwrap();
    assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn presets_save_and_load_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["fig4_6", "fig4_6_small", "fig7_9", "fig7_9_small"] {
        let cfg = preset(name).unwrap();
        let path = dir.path().join(format!("{name}.toml"));
        cfg.save(&path).unwrap();
        assert_eq!(load_config(&path).unwrap(), cfg, "{name}");
    }
}

#[test]
fn events_file_has_one_line_per_event() {
    let dir = tempfile::tempdir().unwrap();
    let bundle = run_scenario_to(&small_config(4), dir.path()).unwrap();
    let text = fs::read_to_string(dir.path().join("events.csv")).unwrap();
    assert_eq!(text.lines().count() as u64, bundle.summary.events + 1);
    assert_eq!(bundle.monotone_violations, 0);
}

#[test]
fn pde_run_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_pde_config("rate = \"step:2,1\"\nduration = 2.0\nh = 0.02\ndt = 0.005\n").unwrap();
    let (rho, samples) = run_pde_to(&cfg, dir.path()).unwrap();
    assert!((rho.mass() + rho.dropped_mass - 1.0).abs() < 1e-10);
    let diag = fs::read_to_string(dir.path().join("pde_diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().next(), Some("t,mass,mean,speed,w1"));
    assert_eq!(diag.lines().count(), samples.len() + 1);
    assert!(dir.path().join("density_final.csv").exists());
}
