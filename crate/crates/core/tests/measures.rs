use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use jumpflock::measures::{residual_a, residual_path, TestFunction};
use jumpflock::sim::{ObservationSchedule, SimConfig, Trajectory};
use jumpflock::{LengthSpec, RateSpec, SystemState};

fn record(count: usize) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut state = SystemState::zeros(30).unwrap();
    let mut cfg = SimConfig::new(8.0);
    cfg.schedule = ObservationSchedule::Grid { count };
    Trajectory::record(&mut state, &RateSpec::step(2.0, 1.0).unwrap(), &LengthSpec::Exponential, &cfg, &mut rng)
        .unwrap()
        .0
}

#[test]
fn residual_does_not_depend_on_the_observation_schedule() {
    let (coarse, fine) = (record(4), record(4000));
    assert_eq!(coarse.events, fine.events);
    let w = RateSpec::step(2.0, 1.0).unwrap();
    let z = LengthSpec::Exponential;
    for t in [1.0, 3.7, 8.0] {
        let a = residual_a(&coarse, &TestFunction::Identity, &w, &z, t).unwrap();
        let b = residual_a(&fine, &TestFunction::Identity, &w, &z, t).unwrap();
        assert_eq!(a, b, "t = {t}");
    }
    let p = residual_path(&fine, &TestFunction::Identity, &w, &z, 8.0).unwrap();
    let end = residual_a(&fine, &TestFunction::Identity, &w, &z, 8.0).unwrap();
    assert!(p.sup_abs >= end.abs());
}
