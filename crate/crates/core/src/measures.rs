//! Empirical-measure tools: centered histograms and their time averages,
//! the 1-Wasserstein and Kolmogorov–Smirnov distances, and the martingale
//! residual A_{t,f} of the particle system against test functions.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::model::{LengthSpec, RateSpec, SystemState};
use crate::numeric::{gk15, Quad};
use crate::sim::{ObservationSchedule, SimConfig, Trajectory};

/// ⌈2√n⌉ bins.
pub fn default_bins(n: usize) -> usize {
    ((2.0 * (n as f64).sqrt()).ceil() as usize).max(1)
}

/// Weighted counts on half-open bins [a0 + jh, a0 + (j+1)h).
///
/// For a snapshot the weights are integer counts, so
/// Σ counts + below + above = total holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub a0: f64,
    pub a1: f64,
    pub counts: Vec<f64>,
    pub below: f64,
    pub above: f64,
    pub total: f64,
}

impl Histogram {
    pub fn empty(a0: f64, a1: f64, nbins: usize) -> Result<Self> {
        if !(a0 < a1) || !a0.is_finite() || !a1.is_finite() {
            return Err(Error::Domain(format!("histogram window needs a0 < a1, got [{a0}, {a1})")));
        }
        if nbins == 0 {
            return Err(Error::Domain("histogram needs at least one bin".into()));
        }
        Ok(Histogram {
            a0,
            a1,
            counts: vec![0.0; nbins],
            below: 0.0,
            above: 0.0,
            total: 0.0,
        })
    }

    pub fn nbins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.a1 - self.a0) / self.nbins() as f64
    }

    pub fn edges(&self, j: usize) -> (f64, f64) {
        let h = self.width();
        (self.a0 + j as f64 * h, self.a0 + (j + 1) as f64 * h)
    }

    pub fn add(&mut self, x: f64) {
        self.total += 1.0;
        if x < self.a0 {
            self.below += 1.0;
        } else if x >= self.a1 || x.is_nan() {
            self.above += 1.0;
        } else {
            let j = (((x - self.a0) / self.width()) as usize).min(self.nbins() - 1);
            self.counts[j] += 1.0;
        }
    }

    /// Density value of bin j, counts/(total·h).
    pub fn density(&self, j: usize) -> f64 {
        if self.total == 0.0 {
            0.0
        } else {
            self.counts[j] / (self.total * self.width())
        }
    }

    pub fn densities(&self) -> Vec<f64> {
        (0..self.nbins()).map(|j| self.density(j)).collect()
    }

    pub fn below_fraction(&self) -> f64 {
        self.below / self.total
    }

    pub fn above_fraction(&self) -> f64 {
        self.above / self.total
    }

    pub fn outside_fraction(&self) -> f64 {
        (self.below + self.above) / self.total
    }

    /// Empirical CDF at the left edge of bin j (j = nbins gives a1).
    pub fn cdf_at_edge(&self, j: usize) -> f64 {
        (self.below + self.counts[..j].iter().sum::<f64>()) / self.total
    }

    /// Mean of the in-window mass, taking bin midpoints.
    pub fn mean(&self) -> f64 {
        let inside: f64 = self.counts.iter().sum();
        let s: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let (l, r) = self.edges(j);
                c * 0.5 * (l + r)
            })
            .sum();
        s / inside
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "bin_left,bin_right,density")?;
        for j in 0..self.nbins() {
            let (l, r) = self.edges(j);
            writeln!(out, "{},{},{}", fmt17(l), fmt17(r), fmt17(self.density(j)))?;
        }
        Ok(())
    }
}

/// Histogram of xᵢ − m.
pub fn build_histogram(positions: &[f64], m: f64, a0: f64, a1: f64, nbins: usize) -> Result<Histogram> {
    let mut h = Histogram::empty(a0, a1, nbins)?;
    for &x in positions {
        h.add(x - m);
    }
    Ok(h)
}

/// Streaming time average of histograms observed at increasing times.
/// Each sample stands for the state until the next one (or the end time);
/// time before `burn_in` is dropped.
#[derive(Debug, Clone)]
pub struct TimeAverage {
    burn_in: f64,
    acc: Option<Histogram>,
    pending: Option<(f64, Histogram)>,
}

impl TimeAverage {
    pub fn new(burn_in: f64) -> Self {
        TimeAverage {
            burn_in,
            acc: None,
            pending: None,
        }
    }

    fn flush(&mut self, until: f64) -> Result<()> {
        if let Some((t, h)) = self.pending.take() {
            let span = until - t.max(self.burn_in);
            if span > 0.0 && h.total > 0.0 {
                let acc = match &mut self.acc {
                    Some(acc) => acc,
                    None => self.acc.insert(Histogram::empty(h.a0, h.a1, h.nbins())?),
                };
                if acc.nbins() != h.nbins() || acc.a0 != h.a0 || acc.a1 != h.a1 {
                    return Err(Error::Domain("time average over histograms with different bins".into()));
                }
                // Normalize each sample to unit total so that every instant has equal weight.
                let s = span / h.total;
                for (a, c) in acc.counts.iter_mut().zip(&h.counts) {
                    *a += s * c;
                }
                acc.below += s * h.below;
                acc.above += s * h.above;
                acc.total += span;
            }
        }
        Ok(())
    }

    pub fn push(&mut self, t: f64, h: Histogram) -> Result<()> {
        if let Some((t_prev, _)) = &self.pending {
            if t < *t_prev {
                return Err(Error::Domain(format!("sample time {t} precedes {t_prev}")));
            }
        }
        self.flush(t)?;
        self.pending = Some((t, h));
        Ok(())
    }

    /// Closes the last interval at `end` and returns the average.
    pub fn finish(mut self, end: f64) -> Result<Histogram> {
        let last = self.pending.clone();
        self.flush(end)?;
        match (self.acc, last) {
            (Some(acc), _) => Ok(acc),
            // A lone sample with no elapsed time is its own average.
            (None, Some((_, h))) => Ok(h),
            (None, None) => Err(Error::Domain("time average of an empty stream".into())),
        }
    }
}

/// Time average of (time, histogram) samples up to `end`.
pub fn time_average(samples: &[(f64, Histogram)], end: f64, burn_in: f64) -> Result<Histogram> {
    let mut avg = TimeAverage::new(burn_in);
    for (t, h) in samples {
        avg.push(*t, h.clone())?;
    }
    avg.finish(end)
}

fn check_samples(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Domain(format!("{name} is empty")));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn sorted_weighted(xs: &[f64], ws: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if xs.len() != ws.len() {
        return Err(Error::Domain("atoms and weights differ in length".into()));
    }
    let total: f64 = ws.iter().sum();
    if !(total > 0.0) || ws.iter().any(|w| *w < 0.0) {
        return Err(Error::Domain("weights must be non-negative with positive sum".into()));
    }
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    Ok((idx.iter().map(|&i| xs[i]).collect(), idx.iter().map(|&i| ws[i] / total).collect()))
}

/// W₁ = ∫|F_μ − F_ν| between two weighted atom sets.
pub fn wasserstein1_weighted(xa: &[f64], wa: &[f64], xb: &[f64], wb: &[f64]) -> Result<f64> {
    check_samples("first measure", xa)?;
    check_samples("second measure", xb)?;
    let (xa, wa) = sorted_weighted(xa, wa)?;
    let (xb, wb) = sorted_weighted(xb, wb)?;
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut total = 0.0;
    let mut x_prev = f64::NAN;
    while i < xa.len() || j < xb.len() {
        let x = match (xa.get(i), xb.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        if x_prev.is_finite() {
            total += (fa - fb).abs() * (x - x_prev);
        }
        while i < xa.len() && xa[i] == x {
            fa += wa[i];
            i += 1;
        }
        while j < xb.len() && xb[j] == x {
            fb += wb[j];
            j += 1;
        }
        x_prev = x;
    }
    Ok(total)
}

/// W₁ between two empirical samples.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    wasserstein1_weighted(a, &vec![1.0; a.len()], b, &vec![1.0; b.len()])
}

/// W₁ between weighted atoms and a continuous law given by its CDF, by
/// quadrature of |F_atoms − F| between atoms and over both tails.
pub fn wasserstein1_weighted_vs_cdf<F: Fn(f64) -> f64>(xs: &[f64], ws: &[f64], cdf: &F, tail_scale: f64) -> Result<f64> {
    check_samples("sample", xs)?;
    let (xs, ws) = sorted_weighted(xs, ws)?;
    let quad = Quad::with_tol(1e-12, 1e-10);
    let mut total = quad.integrate_lower(cdf, xs[0], tail_scale)?;
    let mut level = 0.0;
    for k in 0..xs.len() {
        level += ws[k];
        if k + 1 < xs.len() && xs[k + 1] > xs[k] {
            let (a, b) = (xs[k], xs[k + 1]);
            let g = |x: f64| (level - cdf(x)).abs();
            // Short cells are smooth enough for one panel unless the CDF crosses `level` inside.
            let crosses = (level - cdf(a)).signum() != (level - cdf(b)).signum();
            total += if crosses { quad.integrate(&g, a, b)? } else { gk15(&g, a, b).0 };
        }
    }
    total += quad.integrate_upper(&|x| 1.0 - cdf(x), xs[xs.len() - 1], tail_scale)?;
    Ok(total)
}

pub fn wasserstein1_vs_cdf<F: Fn(f64) -> f64>(samples: &[f64], cdf: &F, tail_scale: f64) -> Result<f64> {
    wasserstein1_weighted_vs_cdf(samples, &vec![1.0; samples.len()], cdf, tail_scale)
}

/// sup |F_emp − F| over the sample points (both one-sided limits).
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: &F) -> Result<f64> {
    check_samples("sample", samples)?;
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs()).max((j as f64 / n - f).abs());
        i = j;
    }
    Ok(d)
}

/// sup over bin edges of |F_hist − F|, with the below-window mass included.
pub fn ks_histogram<F: Fn(f64) -> f64>(hist: &Histogram, cdf: &F) -> f64 {
    let mut d = 0.0f64;
    let mut cum = hist.below / hist.total;
    for j in 0..=hist.nbins() {
        let edge = if j == hist.nbins() { hist.a1 } else { hist.edges(j).0 };
        d = d.max((cum - cdf(edge)).abs());
        if j < hist.nbins() {
            cum += hist.counts[j] / hist.total;
        }
    }
    d
}

/// W₁ between the histogram (each bin's mass spread uniformly) and a
/// continuous law; out-of-window mass is placed at the window edges.
pub fn wasserstein1_histogram<F: Fn(f64) -> f64>(hist: &Histogram, cdf: &F, tail_scale: f64) -> Result<f64> {
    let quad = Quad::with_tol(1e-12, 1e-10);
    let below = hist.below / hist.total;
    let mut total = quad.integrate_lower(cdf, hist.a0, tail_scale)?;
    let mut cum = below;
    for j in 0..hist.nbins() {
        let (l, r) = hist.edges(j);
        let m = hist.counts[j] / hist.total;
        let c0 = cum;
        let g = |x: f64| (c0 + m * (x - l) / (r - l) - cdf(x)).abs();
        total += quad.integrate(&g, l, r)?;
        cum += m;
    }
    total += quad.integrate_upper(&|x| 1.0 - cdf(x), hist.a1, tail_scale)?;
    Ok(total)
}

/// CDF tabulated from a density on [lo, hi] with per-cell Gauss–Kronrod
/// cumulative sums; exact to quadrature precision between knots.
#[derive(Clone)]
pub struct TabulatedCdf<D: Fn(f64) -> f64> {
    density: D,
    lo: f64,
    cell: f64,
    cumulative: Vec<f64>,
    mass: f64,
}

impl<D: Fn(f64) -> f64> TabulatedCdf<D> {
    /// Kinks of the density should sit on cell knots lo + j·cell.
    pub fn new(density: D, lo: f64, hi: f64, cell: f64) -> Result<Self> {
        if !(lo < hi) || !(cell > 0.0) {
            return Err(Error::Domain(format!("bad CDF table [{lo}, {hi}] cell {cell}")));
        }
        let cells = ((hi - lo) / cell).ceil() as usize;
        let mut cumulative = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for j in 0..cells {
            let a = lo + j as f64 * cell;
            acc += gk15(&density, a, a + cell).0;
            cumulative.push(acc);
        }
        if !(acc > 0.0) || !acc.is_finite() {
            return Err(Error::Numeric(format!("tabulated mass is {acc}")));
        }
        Ok(TabulatedCdf {
            density,
            lo,
            cell,
            cumulative,
            mass: acc,
        })
    }

    /// Integral of the density over the table range.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 0.0;
        }
        let j = ((x - self.lo) / self.cell).floor() as usize;
        if j + 1 >= self.cumulative.len() {
            return 1.0;
        }
        let a = self.lo + j as f64 * self.cell;
        ((self.cumulative[j] + gk15(&self.density, a, x).0) / self.mass).clamp(0.0, 1.0)
    }
}

/// Members of the test-function family; all but the identity satisfy |f| ≤ 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TestFunction {
    Identity,
    Tanh { scale: f64 },
    Bump { center: f64, scale: f64 },
}

impl TestFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            TestFunction::Identity => x,
            TestFunction::Tanh { scale } => (x / scale).tanh(),
            TestFunction::Bump { center, scale } => {
                let u = (x - center) / scale;
                (-0.5 * u * u).exp().min(1.0)
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, TestFunction::Identity)
    }

    /// E f(x + Z) − f(x).
    pub fn generator_term(&self, z: &LengthSpec, x: f64) -> f64 {
        match self {
            TestFunction::Identity => 1.0,
            f => z.expect_shifted(&|y| f.eval(y), x) - f.eval(x),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TestFunction::Identity => "id".into(),
            TestFunction::Tanh { scale } => format!("tanh(x/{scale})"),
            TestFunction::Bump { center, scale } => format!("bump({center},{scale})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestFunctionSet(pub Vec<TestFunction>);

impl Default for TestFunctionSet {
    fn default() -> Self {
        let mut fs = vec![
            TestFunction::Identity,
            TestFunction::Tanh { scale: 1.0 },
            TestFunction::Tanh { scale: 3.0 },
        ];
        fs.extend([-4.0, -2.0, 0.0, 2.0, 4.0].map(|c| TestFunction::Bump { center: c, scale: 1.0 }));
        TestFunctionSet(fs)
    }
}

/// A_{s,f} along a trajectory: its value at t and its sup over s ∈ [0, t].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPath {
    pub value: f64,
    pub sup_abs: f64,
}

/// A_{t,f} = ⟨f, μ(t)⟩ − ⟨f, μ(0)⟩ − ∫₀ᵗ ⟨(E f(·+Z) − f)·w(· − m(s)), μ(s)⟩ ds,
/// with the time integral summed exactly over inter-event intervals.
pub fn residual_path(traj: &Trajectory, f: &TestFunction, w: &RateSpec, z: &LengthSpec, t: f64) -> Result<ResidualPath> {
    let t0 = traj.start_time;
    if t > traj.end_time || t < t0 {
        return Err(Error::Coverage {
            covered: traj.end_time,
            requested: t,
        });
    }
    let mut state = SystemState::new(traj.initial.clone())?;
    let n = state.len() as f64;
    let mut g: Vec<f64> = if f.is_identity() {
        Vec::new()
    } else {
        state.positions().iter().map(|&x| f.generator_term(z, x)).collect()
    };
    let f0: f64 = state.positions().iter().map(|&x| f.eval(x)).sum::<f64>() / n;
    let mut f_now = f0;
    let drift = |state: &SystemState, g: &[f64]| -> f64 {
        let m = state.center_of_mass();
        let s: f64 = if g.is_empty() {
            state.positions().iter().map(|&x| w.value(x - m)).sum()
        } else {
            state.positions().iter().zip(g).map(|(&x, gi)| gi * w.value(x - m)).sum()
        };
        s / n
    };
    let mut integral = 0.0;
    let mut t_prev = t0;
    let mut sup = 0.0f64;
    for e in &traj.events {
        if e.time > t {
            break;
        }
        integral += (e.time - t_prev) * drift(&state, &g);
        sup = sup.max((f_now - f0 - integral).abs());
        let i = e.particle_index;
        let old = state.positions()[i];
        state.jump(i, e.jump_length);
        let new = state.positions()[i];
        if f.is_identity() {
            f_now = state.center_of_mass();
        } else {
            f_now += (f.eval(new) - f.eval(old)) / n;
            g[i] = f.generator_term(z, new);
        }
        sup = sup.max((f_now - f0 - integral).abs());
        t_prev = e.time;
    }
    integral += (t - t_prev) * drift(&state, &g);
    let value = f_now - f0 - integral;
    Ok(ResidualPath {
        value,
        sup_abs: sup.max(value.abs()),
    })
}

pub fn residual_a(traj: &Trajectory, f: &TestFunction, w: &RateSpec, z: &LengthSpec, t: f64) -> Result<f64> {
    Ok(residual_path(traj, f, w, z, t)?.value)
}

/// One (n, seed) run of the residual experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualRun {
    pub n: usize,
    pub seed: u64,
    pub sup_residual: f64,
    pub final_residual: f64,
}

#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub runs: Vec<ResidualRun>,
    /// (n, RMS of sup residual, sample variance of the final residual)
    pub per_n: Vec<(usize, f64, f64)>,
    pub slope: f64,
}

impl ScalingReport {
    /// For each n: (sample variance, its 3σ lower confidence edge, bound bound_coef·t/n).
    pub fn variance_check(&self, bound_coef: f64, t: f64) -> Vec<(usize, f64, f64, f64)> {
        self.per_n
            .iter()
            .map(|&(n, _, var)| {
                let k = self.runs.iter().filter(|r| r.n == n).count() as f64;
                let lower = var - 3.0 * var * (2.0 / (k - 1.0)).sqrt();
                (n, var, lower, bound_coef * t / n as f64)
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "n,seed,sup_residual")?;
        for r in &self.runs {
            writeln!(out, "{},{},{}", r.n, r.seed, fmt17(r.sup_residual))?;
        }
        Ok(())
    }
}

/// Least-squares slope of log RMS(sup_{s≤t}|A_{s,f}|) against log n, from all-zero starts.
pub fn residual_scaling(
    ns: &[usize],
    seeds: &[u64],
    f: &TestFunction,
    w: &RateSpec,
    z: &LengthSpec,
    t: f64,
) -> Result<ScalingReport> {
    let jobs: Vec<(usize, u64)> = ns.iter().flat_map(|&n| seeds.iter().map(move |&s| (n, s))).collect();
    let runs: Vec<ResidualRun> = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(n as u64);
            let mut state = SystemState::zeros(n)?;
            let mut cfg = SimConfig::new(t);
            cfg.schedule = ObservationSchedule::Times(Vec::new());
            let (traj, _) = Trajectory::record(&mut state, w, z, &cfg, &mut rng)?;
            let path = residual_path(&traj, f, w, z, t)?;
            Ok(ResidualRun {
                n,
                seed,
                sup_residual: path.sup_abs,
                final_residual: path.value,
            })
        })
        .collect::<Result<_>>()?;
    let mut per_n = Vec::new();
    for &n in ns {
        let sel: Vec<&ResidualRun> = runs.iter().filter(|r| r.n == n).collect();
        let k = sel.len() as f64;
        let rms = (sel.iter().map(|r| r.sup_residual.powi(2)).sum::<f64>() / k).sqrt();
        let mean = sel.iter().map(|r| r.final_residual).sum::<f64>() / k;
        let var = sel.iter().map(|r| (r.final_residual - mean).powi(2)).sum::<f64>() / (k - 1.0);
        per_n.push((n, rms, var));
    }
    let pts: Vec<(f64, f64)> = per_n.iter().map(|&(n, rms, _)| ((n as f64).ln(), rms.ln())).collect();
    let (slope, _) = ols(&pts)?;
    Ok(ScalingReport { runs, per_n, slope })
}

/// Ordinary least squares y = α + βx; returns (β, stderr of β).
pub fn ols(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let k = points.len();
    if k < 2 {
        return Err(Error::Fit(format!("need at least 2 points, got {k}")));
    }
    let kf = k as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / kf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / kf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let stderr = if k > 2 {
        let rss: f64 = points.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
        (rss / (kf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok((slope, stderr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::EventRecord;
    use rand::Rng;

    #[test]
    fn default_bin_rule() {
        assert_eq!(default_bins(10_000), 200);
        assert_eq!(default_bins(1000), 64);
        assert_eq!(default_bins(1), 2);
    }

    #[test]
    fn single_bin_mass() {
        let h = build_histogram(&[0.32, 0.35, 0.38], 0.0, 0.0, 1.0, 10).unwrap();
        assert!((h.density(3) - 1.0 / h.width()).abs() < 1e-12);
        assert_eq!(h.densities().iter().filter(|d| **d != 0.0).count(), 1);
    }

    #[test]
    fn out_of_window_and_edges() {
        let h = build_histogram(&[-2.0, -1.0, 0.999_999, 1.0, 5.0], 0.0, -1.0, 1.0, 4).unwrap();
        assert_eq!(h.below, 1.0);
        assert_eq!(h.above, 2.0);
        assert_eq!(h.counts, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(h.counts.iter().sum::<f64>() + h.below + h.above, h.total);
        assert!(Histogram::empty(1.0, 1.0, 3).is_err());
        assert!(Histogram::empty(0.0, 1.0, 0).is_err());
        let h = build_histogram(&[3.0], 3.0, -1.0, 1.0, 2).unwrap();
        assert_eq!(h.counts, vec![0.0, 1.0]);
    }

    #[test]
    fn time_average_weights_by_holding_time() {
        let a = build_histogram(&[0.1], 0.0, 0.0, 1.0, 2).unwrap();
        let b = build_histogram(&[0.9], 0.0, 0.0, 1.0, 2).unwrap();
        let single = time_average(&[(0.0, a.clone())], 5.0, 0.0).unwrap();
        assert_eq!(single.densities(), a.densities());
        let avg = time_average(&[(0.0, a.clone()), (1.0, b.clone())], 2.0, 0.0).unwrap();
        assert_eq!(avg.densities(), vec![1.0, 1.0]);
        let avg = time_average(&[(0.0, a.clone()), (1.0, b.clone())], 4.0, 0.0).unwrap();
        assert!((avg.density(1) / avg.density(0) - 3.0).abs() < 1e-12);
        // Burn-in past the first sample leaves only b.
        let avg = time_average(&[(0.0, a), (1.0, b.clone())], 4.0, 1.5).unwrap();
        assert_eq!(avg.densities(), b.densities());
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1(&[0.0, 1.0], &[0.0, 3.0]).unwrap(), 1.0);
        let a = [3.0, -1.0, 2.5, 0.0];
        let mut sorted = a;
        sorted.sort_by(f64::total_cmp);
        assert_eq!(wasserstein1(&a, &sorted).unwrap(), 0.0);
        // Unequal sizes: {0} vs {0, 2} moves half the mass by 2.
        assert_eq!(wasserstein1(&[0.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert!(wasserstein1(&[], &[1.0]).is_err());
        assert!(wasserstein1(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn equal_size_matches_sorted_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 4.0).collect();
        let b: Vec<f64> = (0..500).map(|_| rng.random::<f64>().powi(2) * 3.0).collect();
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let direct = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 500.0;
        assert!((wasserstein1(&a, &b).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_against_cdf() {
        // Point mass at 0 vs unit exponential: W₁ = E Z = 1.
        let cdf = |x: f64| if x <= 0.0 { 0.0 } else { -(-x).exp_m1() };
        assert!((wasserstein1_vs_cdf(&[0.0], &cdf, 1.0).unwrap() - 1.0).abs() < 1e-10);
        // Point mass at 0.5 vs uniform [0,1]: 1/4.
        let u = |x: f64| x.clamp(0.0, 1.0);
        assert!((wasserstein1_vs_cdf(&[0.5], &u, 1.0).unwrap() - 0.25).abs() < 1e-10);
    }

    #[test]
    fn ks_examples() {
        let cdf = |x: f64| x.clamp(0.0, 1.0);
        assert!((ks_distance(&[0.5], &cdf).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(ks_distance(&[-5.0, -4.0], &cdf).unwrap(), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_distance(&xs, &cdf).unwrap() < 0.006);
    }

    #[test]
    fn histogram_ks_and_w1_against_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let h = build_histogram(&xs, 0.0, -2.0, 2.0, 80).unwrap();
        let cdf = |x: f64| ((x + 1.0) / 2.0).clamp(0.0, 1.0);
        assert!(ks_histogram(&h, &cdf) < 0.01);
        assert!(wasserstein1_histogram(&h, &cdf, 1.0).unwrap() < 0.01);
    }

    #[test]
    fn tabulated_cdf_of_laplace() {
        let t = TabulatedCdf::new(|x: f64| 0.5 * (-x.abs()).exp(), -40.0, 40.0, 0.5).unwrap();
        assert!((t.mass() - 1.0).abs() < 1e-12);
        for x in [-3.0, -0.2, 0.0, 0.7, 5.0] {
            let exact = if x < 0.0 { 0.5 * f64::exp(x) } else { 1.0 - 0.5 * f64::exp(-x) };
            assert!((t.cdf(x) - exact).abs() < 1e-12, "{x}");
        }
    }

    #[test]
    fn test_functions_bounded() {
        let set = TestFunctionSet::default();
        assert_eq!(set.0.len(), 8);
        for f in set.0.iter().filter(|f| !f.is_identity()) {
            for k in -200..200 {
                assert!(f.eval(k as f64 * 0.1).abs() <= 1.0);
            }
        }
        let f = TestFunction::Tanh { scale: 1.0 };
        let z = LengthSpec::Deterministic;
        assert!((f.generator_term(&z, 0.3) - (1.3f64.tanh() - 0.3f64.tanh())).abs() < 1e-15);
    }

    fn toy_trajectory() -> Trajectory {
        Trajectory {
            initial: vec![0.0, 0.0],
            start_time: 0.0,
            events: vec![
                EventRecord {
                    time: 0.5,
                    particle_index: 0,
                    jump_length: 1.0,
                    new_center: 0.5,
                },
                EventRecord {
                    time: 1.5,
                    particle_index: 1,
                    jump_length: 1.0,
                    new_center: 1.0,
                },
            ],
            end_time: 2.0,
        }
    }

    #[test]
    fn residual_by_hand() {
        let w = RateSpec::constant(1.5).unwrap();
        let z = LengthSpec::Deterministic;
        let traj = toy_trajectory();
        assert_eq!(residual_a(&traj, &TestFunction::Identity, &w, &z, 0.0).unwrap(), 0.0);
        // Constant rate: A = m(t) − m(0) − a·t.
        let a = residual_a(&traj, &TestFunction::Identity, &w, &z, 2.0).unwrap();
        assert!((a - (1.0 - 3.0)).abs() < 1e-15);
        let a = residual_a(&traj, &TestFunction::Identity, &w, &z, 1.0).unwrap();
        assert!((a - (0.5 - 1.5)).abs() < 1e-15);
        assert!(matches!(
            residual_a(&traj, &TestFunction::Identity, &w, &z, 3.0),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn residual_sup_sees_event_edges() {
        let w = RateSpec::constant(0.1).unwrap();
        let z = LengthSpec::Deterministic;
        let p = residual_path(&toy_trajectory(), &TestFunction::Identity, &w, &z, 2.0).unwrap();
        // Largest excursion is right after the second jump: 1 − 0.15.
        assert!((p.sup_abs - 0.85).abs() < 1e-12);
    }

    #[test]
    fn residual_of_bounded_function_by_hand() {
        // Two particles at 0, constant rate 1, f = tanh, unit jumps: before any jump
        // A(s) = −s·(tanh 1 − tanh 0).
        let traj = Trajectory {
            initial: vec![0.0, 0.0],
            start_time: 0.0,
            events: vec![],
            end_time: 1.0,
        };
        let w = RateSpec::constant(1.0).unwrap();
        let f = TestFunction::Tanh { scale: 1.0 };
        let a = residual_a(&traj, &f, &w, &LengthSpec::Deterministic, 0.7).unwrap();
        assert!((a + 0.7 * 1f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn ols_cases() {
        let line: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 3.0 * i as f64 + 1.0)).collect();
        let (s, e) = ols(&line).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && e < 1e-12);
        let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 2.0)).collect();
        assert_eq!(ols(&flat).unwrap().0, 0.0);
        assert!(ols(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }
}
