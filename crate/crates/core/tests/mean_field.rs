use jumpflock::harness::fit_speed;
use jumpflock::mean_field::{pde_integrate, pde_window, DensityField, Grid, PdeOptions, StationaryLaw, WaveProfile};
use jumpflock::measures::wasserstein1_weighted_vs_cdf;
use jumpflock::{LengthSpec, RateSpec};

fn field<F: Fn(f64) -> f64>(w: &RateSpec, h: f64, dt: f64, f: F) -> (DensityField, f64) {
    let (left, right) = pde_window(w, dt, h).unwrap();
    let grid = Grid::new((left / h).ceil() * h, (right / h).floor() * h, h).unwrap();
    let mut rho = DensityField::from_fn(grid, f);
    rho.normalize();
    (rho, left)
}

/// W₁ between the field after `t_end` and the profile moved by c·t_end.
fn stationarity_error(w: &RateSpec, h: f64, t_end: f64) -> f64 {
    let dt = h / 10.0;
    let profile = WaveProfile::traveling(w).unwrap();
    let law = StationaryLaw::for_rate(w).unwrap();
    let (rho0, left) = field(w, h, dt, |x| profile.density(x));
    let opts = PdeOptions {
        sample_every: t_end,
        comoving_offset: Some(left),
        reference: None,
    };
    let (rho, _) = pde_integrate(&rho0, w, &LengthSpec::Exponential, t_end, dt, &opts).unwrap();
    let (xs, ws) = rho.atoms();
    wasserstein1_weighted_vs_cdf(&xs, &ws, &|x| law.cdf(x - profile.c * t_end), 1.0).unwrap()
}

#[test]
fn halving_h_halves_the_stationarity_error() {
    for w in [RateSpec::exponential(1.0).unwrap(), RateSpec::step(2.0, 1.0).unwrap()] {
        let errs: Vec<f64> = [0.04, 0.02, 0.01].iter().map(|&h| stationarity_error(&w, h, 5.0)).collect();
        eprintln!("{w}: {errs:?}");
        for pair in errs.windows(2) {
            let ratio = pair[0] / pair[1];
            assert!((1.7..=2.3).contains(&ratio), "{w}: errors {errs:?}, ratio {ratio}");
        }
    }
}

#[test]
fn step_rate_mean_moves_at_the_average_rate() {
    let w = RateSpec::step(2.0, 1.0).unwrap();
    let dt = 1e-3;
    let (rho0, left) = field(&w, 0.01, dt, |x| (-0.5 * (x / 0.1).powi(2)).exp());
    let opts = PdeOptions {
        sample_every: 0.5,
        comoving_offset: Some(left),
        reference: None,
    };
    let (_, samples) = pde_integrate(&rho0, &w, &LengthSpec::Exponential, 50.0, dt, &opts).unwrap();
    let path: Vec<(f64, f64)> = samples.iter().map(|s| (s.t, s.mean)).collect();
    let (slope, _) = fit_speed(&path, 0.5).unwrap();
    assert!((slope - 1.5).abs() < 0.01, "slope {slope}");
}
