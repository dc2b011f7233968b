//! Record process of a growing pool of unit exponentials. With k = 1/β and
//! N(t) = ⌈e^{βct}/(βc)⌉ pool members, Y = k·(k-th largest) minus k·ln N
//! follows the generalized Gumbel law of the exponential-rate traveling wave.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::measures::ols;
use crate::special::{digamma, gamma_q, ln_gamma};

/// Largest pool size before the horizon error.
pub const MAX_POOL: u64 = 1 << 62;

pub fn pool_size(beta: f64, c: f64, t: f64) -> Result<u64> {
    if !(t >= 0.0) || !(beta * c > 0.0) {
        return Err(Error::Domain(format!("pool size needs t ≥ 0 and βc > 0, got t = {t}, βc = {}", beta * c)));
    }
    let x = (beta * c * t).exp() / (beta * c);
    if !(x <= MAX_POOL as f64) {
        return Err(Error::Horizon(format!("pool size e^{{βct}}/(βc) = {x:e} at t = {t} exceeds 2^62")));
    }
    // Absorb rounding in exp(ln n) so exact integers are not pushed up.
    Ok(((x * (1.0 - 4.0 * f64::EPSILON)).ceil() as u64).max(1))
}

/// Wave speed of the exponential rate with β = 1/k, (1/β)e^{−ψ(1/β)}.
pub fn exponential_wave_speed(beta: f64) -> Result<f64> {
    Ok((-digamma(1.0 / beta)?).exp() / beta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordPool {
    pub k: usize,
    pub beta: f64,
    pub c: f64,
    /// The k+1 largest values, descending. Zeros stand in for members that
    /// have not arrived yet (all values are positive).
    pub top_values: Vec<f64>,
    /// Arrivals so far.
    pub pool_count: u64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordJump {
    pub t: f64,
    /// Y after the jump.
    pub y: f64,
    /// Increase of the k-th maximum.
    pub jump: f64,
}

impl RecordPool {
    /// Empty pool at t = 0 with the exponential-rate wave speed.
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Domain("k = 1/β must be a positive integer".into()));
        }
        let beta = 1.0 / k as f64;
        Self::with_speed(k, exponential_wave_speed(beta)?)
    }

    pub fn with_speed(k: usize, c: f64) -> Result<Self> {
        if k == 0 || !(c > 0.0) {
            return Err(Error::Domain(format!("need k ≥ 1 and c > 0, got k = {k}, c = {c}")));
        }
        Ok(RecordPool {
            k,
            beta: 1.0 / k as f64,
            c,
            top_values: vec![0.0; k + 1],
            pool_count: 0,
            t: 0.0,
        })
    }

    pub fn y_k(&self) -> f64 {
        self.top_values[self.k - 1]
    }

    pub fn y(&self) -> f64 {
        self.k as f64 * self.y_k()
    }

    /// Y − (1/β)·ln N.
    pub fn rescaled(&self) -> f64 {
        self.y() - self.k as f64 * (self.pool_count.max(1) as f64).ln()
    }

    /// Time at which the n-th member arrives.
    fn arrival_time(&self, n: u64) -> f64 {
        let bc = self.beta * self.c;
        (((n - 1) as f64 * bc).ln() / bc).max(0.0)
    }

    /// Advances to time `t_end`, reporting every change of Y. Arrivals that
    /// stay below the (k+1)-st maximum are skipped in one geometric draw.
    pub fn advance<R: Rng + ?Sized, F: FnMut(RecordJump)>(&mut self, t_end: f64, rng: &mut R, mut on_jump: F) -> Result<()> {
        if t_end < self.t {
            return Err(Error::Domain(format!("cannot go back from t = {} to {t_end}", self.t)));
        }
        let target = pool_size(self.beta, self.c, t_end)?;
        loop {
            let floor = self.top_values[self.k];
            let skipped = failures_before_exceedance(floor, rng);
            let n = self.pool_count.saturating_add(skipped).saturating_add(1);
            if n > target {
                break;
            }
            self.pool_count = n;
            let e: f64 = Exp1.sample(rng);
            let v = floor + e;
            let old = self.y_k();
            let pos = self.top_values.partition_point(|x| *x > v);
            self.top_values.insert(pos, v);
            self.top_values.pop();
            if self.y_k() > old {
                on_jump(RecordJump {
                    t: self.arrival_time(n),
                    y: self.y(),
                    jump: self.y_k() - old,
                });
            }
        }
        self.pool_count = target;
        self.t = t_end;
        Ok(())
    }
}

/// Number of unit exponentials drawn before one exceeds `level`, by
/// inversion of the geometric law with success probability e^{−level}.
fn failures_before_exceedance<R: Rng + ?Sized>(level: f64, rng: &mut R) -> u64 {
    if level <= 0.0 {
        return 0;
    }
    let u: f64 = rng.random();
    let g = (1.0 - u).ln() / (-(-level).exp()).ln_1p();
    if g >= u64::MAX as f64 { u64::MAX } else { g.floor() as u64 }
}

/// Path (t, Y) starting with the current state, then at every jump epoch up
/// to T, ending with (T, Y(T)).
pub fn simulate_record<R: Rng + ?Sized>(pool: &mut RecordPool, t_end: f64, rng: &mut R) -> Result<Vec<(f64, f64)>> {
    let mut path = vec![(pool.t, pool.y())];
    pool.advance(t_end, rng, |j| path.push((j.t, j.y)))?;
    path.push((pool.t, pool.y()));
    Ok(path)
}

pub fn write_path_csv<W: Write>(path: &[(f64, f64)], mut out: W) -> Result<()> {
    writeln!(out, "t,Y")?;
    for (t, y) in path {
        writeln!(out, "{},{}", fmt17(*t), fmt17(*y))?;
    }
    Ok(())
}

/// β/Γ(1/β)·exp(−x − e^{−βx}), the limit law of Y − (1/β)ln N.
pub fn generalized_gumbel_pdf(beta: f64, x: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("β must be positive, got {beta}")));
    }
    Ok((beta.ln() - ln_gamma(1.0 / beta)? - x - (-beta * x).exp()).exp())
}

/// Q(1/β, e^{−βx}).
pub fn generalized_gumbel_cdf(beta: f64, x: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("β must be positive, got {beta}")));
    }
    let z = (-beta * x).exp();
    if !z.is_finite() {
        return Ok(0.0);
    }
    gamma_q(1.0 / beta, z)
}

/// Shift that centers the limit law: adding ψ(1/β)/β gives mean zero.
pub fn centering_shift(beta: f64) -> Result<f64> {
    Ok(digamma(1.0 / beta)? / beta)
}

/// Y(T) − k·ln N(T) over independent runs; run i uses `make_rng(i)`.
pub fn terminal_sample<R, G>(k: usize, t_end: f64, runs: usize, make_rng: G) -> Result<Vec<f64>>
where
    R: Rng,
    G: Fn(u64) -> R + Sync,
{
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut pool = RecordPool::new(k)?;
            let mut rng = make_rng(i as u64);
            pool.advance(t_end, &mut rng, |_| {})?;
            Ok(pool.rescaled())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntensityFit {
    pub slope: f64,
    pub stderr: f64,
    /// (bin center of β(ct − Y), jumps, occupation time)
    pub bins: Vec<(f64, u64, f64)>,
}

/// Regresses the log jump intensity of Y on u = β(ct − Y) using exact
/// occupation times: between jumps u grows linearly at rate βc, and each
/// jump is counted in the bin of its pre-jump u. Only times after `t_min`
/// enter; bins with fewer than `min_count` jumps are dropped.
pub fn intensity_regression(
    paths: &[Vec<(f64, f64)>],
    beta: f64,
    c: f64,
    t_min: f64,
    bin_width: f64,
    min_count: u64,
) -> Result<IntensityFit> {
    let u_of = |t: f64, y: f64| beta * (c * t - y);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for path in paths {
        for w in path.windows(2) {
            if w[1].0 > t_min {
                let t0 = w[0].0.max(t_min);
                lo = lo.min(u_of(t0, w[0].1));
                hi = hi.max(u_of(w[1].0, w[0].1));
            }
        }
    }
    if !(lo < hi) {
        return Err(Error::Fit("no occupation time after t_min".into()));
    }
    let origin = (lo / bin_width).floor() * bin_width;
    let nbins = ((hi - origin) / bin_width).ceil() as usize + 1;
    let mut counts = vec![0u64; nbins];
    let mut time = vec![0.0; nbins];
    let speed = beta * c;
    for path in paths {
        let last = path.len().saturating_sub(1);
        for (i, w) in path.windows(2).enumerate() {
            if w[1].0 <= t_min {
                continue;
            }
            let (u0, u1) = (u_of(w[0].0.max(t_min), w[0].1), u_of(w[1].0, w[0].1));
            // Walk bins by index; stepping by computed edges can stall on rounding.
            let bin_of = |u: f64| (((u - origin) / bin_width).floor().max(0.0) as usize).min(nbins - 1);
            let (j0, j1) = (bin_of(u0), bin_of(u1));
            for j in j0..=j1 {
                let a = if j == j0 { u0 } else { origin + j as f64 * bin_width };
                let b = if j == j1 { u1 } else { origin + (j + 1) as f64 * bin_width };
                if b > a {
                    time[j] += (b - a) / speed;
                }
            }
            // The final entry closes the path at T without a jump.
            if i + 1 < last && w[1].1 > w[0].1 {
                let j = (((u1 - origin) / bin_width).floor() as usize).min(nbins - 1);
                counts[j] += 1;
            }
        }
    }
    let bins: Vec<(f64, u64, f64)> = (0..nbins)
        .filter(|&j| counts[j] >= min_count)
        .map(|j| (origin + (j as f64 + 0.5) * bin_width, counts[j], time[j]))
        .collect();
    let points: Vec<(f64, f64)> = bins.iter().map(|(u, n, s)| (*u, (*n as f64 / s).ln())).collect();
    let (slope, stderr) = ols(&points)?;
    Ok(IntensityFit { slope, stderr, bins })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Quad;
    use crate::special::EULER_GAMMA;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_size_examples() {
        assert_eq!(pool_size(1.0, 1.0, 0.0).unwrap(), 1);
        assert_eq!(pool_size(1.0, 1.0, 10f64.ln()).unwrap(), 10);
        assert!(pool_size(1.0, 1.0, 3.0).unwrap() >= pool_size(1.0, 1.0, 2.0).unwrap());
        assert!(matches!(pool_size(1.0, 1.0, 60.0), Err(Error::Horizon(_))));
        assert!(pool_size(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn gumbel_values_and_mass() {
        assert!((generalized_gumbel_pdf(1.0, 0.0).unwrap() - (-1f64).exp()).abs() < 1e-15);
        let q = Quad::with_tol(1e-13, 1e-12);
        for beta in [1.0, 0.5, 1.0 / 3.0] {
            let f = |x: f64| generalized_gumbel_pdf(beta, x).unwrap();
            let mass = q.integrate_line(&f, &[0.0], 1.0, 1.0).unwrap();
            assert!((mass - 1.0).abs() < 1e-8, "β = {beta}: {mass}");
            let mean = q.integrate_line(&|x| x * f(x), &[0.0], 1.0, 1.0).unwrap();
            assert!((mean + centering_shift(beta).unwrap()).abs() < 1e-8, "β = {beta}: {mean}");
        }
        let f = |x: f64| x * generalized_gumbel_pdf(1.0, x).unwrap();
        assert!((q.integrate_line(&f, &[0.0], 1.0, 1.0).unwrap() - EULER_GAMMA).abs() < 1e-10);
        assert!((generalized_gumbel_cdf(1.0, 0.0).unwrap() - (-1f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn speed_for_k_one_is_exp_gamma() {
        assert!((exponential_wave_speed(1.0).unwrap() - EULER_GAMMA.exp()).abs() < 1e-11);
    }

    #[test]
    fn record_path_is_monotone_and_pool_tracks_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pool = RecordPool::new(2).unwrap();
        let path = simulate_record(&mut pool, 12.0, &mut rng).unwrap();
        assert!(path.windows(2).all(|w| w[1].1 >= w[0].1 && w[1].0 >= w[0].0));
        assert_eq!(pool.pool_count, pool_size(pool.beta, pool.c, 12.0).unwrap());
        assert!(pool.top_values.windows(2).all(|w| w[0] >= w[1]));
    }

    fn jump_mean(k: usize, jumps: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut total = 0.0;
        let mut count = 0usize;
        while count < jumps {
            let mut pool = RecordPool::new(k).unwrap();
            // Skip the start-up phase where the pool holds fewer than k+1 members.
            pool.advance(2.0 * k as f64, &mut rng, |_| {}).unwrap();
            pool.advance(20.0 * k as f64, &mut rng, |j| {
                if count < jumps {
                    total += j.jump;
                    count += 1;
                }
            })
            .unwrap();
        }
        total / jumps as f64
    }

    #[test]
    fn jump_lengths_are_exponential_with_rate_k() {
        assert!((jump_mean(1, 100_000) - 1.0).abs() < 0.01);
        assert!((jump_mean(2, 100_000) - 0.5).abs() < 0.005);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        write_path_csv(&[(0.0, 1.0)], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,Y\n"));
        assert_eq!(s.lines().count(), 2);
    }
}
