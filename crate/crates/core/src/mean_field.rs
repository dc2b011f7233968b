//! Mean-field limit: traveling-wave profiles for exponential jump lengths,
//! the wave speed, closed-form stationary laws, and an explicit integrator
//! for the mean-field equation
//!
//! ∂ρ/∂t = −w(x−m)ρ + ∫ w(y−m)ρ(y)φ(x−y) dy.
//!
//! With φ(u) = e^{−u} on u ≥ 0 the centered profile is
//! ρ(x) = K·exp(W(x)/c − x) with W(x) = ∫₀ˣ w, and c is fixed by ∫xρ = 0.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::measures::{wasserstein1_weighted_vs_cdf, TabulatedCdf};
use crate::model::{LengthSpec, RateSpec};
use crate::numeric::{bisect, Quad};
use crate::special::{digamma, gamma_q, ln_gamma};

fn quad() -> Quad {
    Quad {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_panels: 20000,
    }
}

/// log of the unnormalized profile, W(x)/c − x.
pub fn log_profile(w: &RateSpec, c: f64, x: f64) -> f64 {
    w.integral(x) / c - x
}

fn check_bracket(w: &RateSpec, c: f64) -> Result<()> {
    let (lo, hi) = (w.right_limit(), w.left_limit());
    if !(c > lo && c < hi) || !c.is_finite() {
        return Err(Error::NonNormalizable(format!(
            "speed {c} must lie strictly inside ({lo}, {hi}) for {w}"
        )));
    }
    Ok(())
}

/// Unnormalized profile integrals ∫ g(x)·exp(L(x) − L(x*)) dx, with x* the
/// mode of the profile.
struct ProfileFrame<'a> {
    w: &'a RateSpec,
    c: f64,
    peak: f64,
    log_peak: f64,
    breaks: Vec<f64>,
    left_scale: f64,
    right_scale: f64,
}

impl<'a> ProfileFrame<'a> {
    fn new(w: &'a RateSpec, c: f64) -> Result<Self> {
        check_bracket(w, c)?;
        let peak = w.level_crossing(c)?;
        let mut breaks = w.breakpoints();
        breaks.push(peak);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let right_rate = 1.0 - w.right_limit() / c;
        let left_rate = w.left_limit() / c - 1.0;
        Ok(ProfileFrame {
            w,
            c,
            peak,
            log_peak: log_profile(w, c, peak),
            breaks,
            left_scale: if left_rate.is_finite() { (1.0 / left_rate).clamp(0.1, 1e4) } else { 1.0 },
            right_scale: (1.0 / right_rate).clamp(0.1, 1e4),
        })
    }

    fn unnormalized(&self, x: f64) -> f64 {
        (log_profile(self.w, self.c, x) - self.log_peak).exp()
    }

    fn integrate<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        let f = |x: f64| {
            let p = self.unnormalized(x);
            if p == 0.0 { 0.0 } else { g(x) * p }
        };
        quad().integrate_line(&f, &self.breaks, self.left_scale, self.right_scale)
    }

    /// (mass, mean) of the profile.
    fn moments(&self) -> Result<(f64, f64)> {
        let mass = self.integrate(|_| 1.0)?;
        let offset = self.integrate(|x| x - self.peak)?;
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(Error::NonNormalizable(format!("profile mass is {mass} at c = {}", self.c)));
        }
        Ok((mass, self.peak + offset / mass))
    }
}

/// Mean of the normalized profile at speed c.
pub fn profile_mean(w: &RateSpec, c: f64) -> Result<f64> {
    Ok(ProfileFrame::new(w, c)?.moments()?.1)
}

/// ∫ w(y)ρ(y) dy for the normalized profile at speed c, by quadrature.
pub fn profile_mean_speed(w: &RateSpec, c: f64) -> Result<f64> {
    let frame = ProfileFrame::new(w, c)?;
    let (mass, _) = frame.moments()?;
    Ok(frame.integrate(|x| w.value(x))? / mass)
}

/// Evenly spaced grid lo, lo + h, …, hi.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub h: f64,
    pub len: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, h: f64) -> Result<Self> {
        if !(lo < hi) || !(h > 0.0) {
            return Err(Error::Domain(format!("bad grid [{lo}, {hi}] with spacing {h}")));
        }
        Ok(Grid {
            lo,
            h,
            len: ((hi - lo) / h).round() as usize + 1,
        })
    }

    pub fn x(&self, j: usize) -> f64 {
        self.lo + j as f64 * self.h
    }

    pub fn hi(&self) -> f64 {
        self.x(self.len - 1)
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.len).map(|j| self.x(j)).collect()
    }
}

/// Normalized traveling-wave profile sampled on a grid, plus the exact
/// continuous density it was sampled from.
#[derive(Debug, Clone)]
pub struct WaveProfile {
    pub w: RateSpec,
    pub c: f64,
    pub grid: Grid,
    pub values: Vec<f64>,
    /// log K relative to exp(W(x)/c − x).
    pub log_k: f64,
}

/// Profile exp(W(x)/c − x), normalized by quadrature over the whole line.
pub fn wave_profile(w: &RateSpec, c: f64, grid: Grid) -> Result<WaveProfile> {
    if w.is_constant() {
        return Err(Error::NonNormalizable(format!("profile of the constant rate {w} is flat")));
    }
    let frame = ProfileFrame::new(w, c)?;
    let (mass, _) = frame.moments()?;
    let log_k = -frame.log_peak - mass.ln();
    let values = (0..grid.len).map(|j| (log_profile(w, c, grid.x(j)) + log_k).exp()).collect();
    Ok(WaveProfile {
        w: w.clone(),
        c,
        grid,
        values,
        log_k,
    })
}

impl WaveProfile {
    /// Centered profile at the wave speed on the default grid.
    pub fn traveling(w: &RateSpec) -> Result<Self> {
        let c = wave_speed(w)?;
        wave_profile(w, c, default_grid(w, c)?)
    }

    pub fn density(&self, x: f64) -> f64 {
        (log_profile(&self.w, self.c, x) + self.log_k).exp()
    }

    /// (Σ h·ρ with trapezoid ends, first moment likewise).
    pub fn trapezoid_moments(&self) -> (f64, f64) {
        let h = self.grid.h;
        let n = self.values.len();
        let mut mass = 0.0;
        let mut first = 0.0;
        for (j, v) in self.values.iter().enumerate() {
            let wt = if j == 0 || j + 1 == n { 0.5 * h } else { h };
            mass += wt * v;
            first += wt * v * self.grid.x(j);
        }
        (mass, first)
    }

    /// −cρ′ + wρ − ∫_{−∞}^x w(y)ρ(y)e^{−(x−y)} dy, with ρ′ by a five-point
    /// difference and the integral by adaptive quadrature. Zero for a
    /// stationary profile; x should be at least 0.01 away from kinks of w.
    pub fn residual(&self, x: f64) -> Result<f64> {
        let d = 1e-3;
        let f = |y: f64| self.density(y);
        let deriv = (f(x - 2.0 * d) - 8.0 * f(x - d) + 8.0 * f(x + d) - f(x + 2.0 * d)) / (12.0 * d);
        let g = |y: f64| {
            let p = self.density(y);
            if p == 0.0 { 0.0 } else { self.w.value(y) * p * (y - x).exp() }
        };
        let mut breaks: Vec<f64> = self.w.breakpoints().into_iter().filter(|b| *b < x).collect();
        breaks.push(x);
        let q = Quad::with_tol(1e-13, 1e-12);
        let inflow = q.integrate_lower(&g, breaks[0], 1.0)? + q.integrate_breaks(&g, &breaks)?;
        Ok(-self.c * deriv + self.w.value(x) * self.density(x) - inflow)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,density")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt17(self.grid.x(j)), fmt17(*v))?;
        }
        Ok(())
    }
}

/// Grid whose ends carry negligible mass: tails are cut where the density
/// has dropped by e^{−30} from its mode. Rates with jumps get a finer mesh
/// so that trapezoid sums stay accurate across the kink of ρ′.
pub fn default_grid(w: &RateSpec, c: f64) -> Result<Grid> {
    check_bracket(w, c)?;
    let peak = w.level_crossing(c)?;
    let right_rate = 1.0 - w.right_limit() / c;
    let left_rate = w.left_limit() / c - 1.0;
    let h = match w {
        RateSpec::Step { .. } => 0.001,
        _ => 0.005,
    };
    let (lo, hi) = match *w {
        RateSpec::Exponential { beta } => (peak - 8.0 / beta, peak + 30.0 / right_rate),
        _ => (peak - 30.0 / left_rate, peak + 30.0 / right_rate),
    };
    let lo = (lo / h).floor() * h;
    let hi = (hi / h).ceil() * h;
    Grid::new(lo, hi, h)
}

/// Speed c solving ∫xρ_c = 0, by bisection on the (decreasing) profile mean.
pub fn wave_speed(w: &RateSpec) -> Result<f64> {
    w.validate()?;
    if w.is_constant() {
        return Err(Error::NonNormalizable(format!("no traveling wave for the constant rate {w}")));
    }
    let lo_limit = w.right_limit();
    let hi_limit = w.left_limit();
    let (mut lo, mut hi) = if hi_limit.is_finite() {
        let span = hi_limit - lo_limit;
        (lo_limit + 1e-3 * span, hi_limit - 1e-3 * span)
    } else {
        (lo_limit + 1e-3, lo_limit + 1.0)
    };
    let mean = |c: f64| profile_mean(w, c);
    let mut m_lo = mean(lo)?;
    let mut m_hi = mean(hi)?;
    if !hi_limit.is_finite() {
        while m_hi >= 0.0 && hi < 1e12 {
            lo = hi;
            m_lo = m_hi;
            hi *= 2.0;
            m_hi = mean(hi)?;
        }
    }
    if !(m_lo > 0.0 && m_hi < 0.0) {
        return Err(Error::Solver(format!(
            "profile mean does not change sign on [{lo}, {hi}]: mean(lo) = {m_lo}, mean(hi) = {m_hi}"
        )));
    }
    bisect(mean, lo, hi, 1e-15)
}

/// Stationary shapes with a closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedForm {
    /// β/Γ(1/β)·exp(−y − e^{−βy}), y = x − ψ(1/β)/β.
    GeneralizedGumbel { beta: f64 },
    /// (a−b)/(2(a+b))·e^{−|x|(a−b)/(a+b)}
    Laplace { a: f64, b: f64 },
    /// Gaussian core on [−1, 1] with exponential tails.
    PiecewiseGaussianExp { a: f64, b: f64 },
    /// K·exp(x((2/π)arccot x − 1) + (1/π)ln(1+x²))
    Arccot,
}

impl ClosedForm {
    pub fn for_rate(w: &RateSpec) -> Option<Self> {
        match *w {
            RateSpec::Exponential { beta } => Some(ClosedForm::GeneralizedGumbel { beta }),
            RateSpec::Step { a, b } => Some(ClosedForm::Laplace { a, b }),
            RateSpec::PiecewiseLinear { a, b } => Some(ClosedForm::PiecewiseGaussianExp { a, b }),
            RateSpec::Arccot => Some(ClosedForm::Arccot),
            RateSpec::TabulatedBounded { .. } => None,
        }
    }

    /// Log of the density up to the normalizer (exact for the first two).
    fn log_shape(&self, x: f64) -> f64 {
        match *self {
            ClosedForm::GeneralizedGumbel { beta } => {
                let shift = digamma(1.0 / beta).unwrap_or(f64::NAN) / beta;
                let y = x - shift;
                beta.ln() - ln_gamma(1.0 / beta).unwrap_or(f64::NAN) - y - (-beta * y).exp()
            }
            ClosedForm::Laplace { a, b } => {
                let lambda = (a - b) / (a + b);
                (lambda / 2.0).ln() - lambda * x.abs()
            }
            ClosedForm::PiecewiseGaussianExp { a, b } => {
                let k = (a - b) / (a + b);
                if x.abs() > 1.0 {
                    k / 2.0 - k * x.abs()
                } else {
                    -k / 2.0 * x * x
                }
            }
            ClosedForm::Arccot => x * (2.0 / PI * (0.5 * PI - x.atan()) - 1.0) + (x * x).ln_1p() / PI,
        }
    }

    /// Half-width of the CDF table: out to where the tails are below e^{−40}.
    fn table_range(&self) -> f64 {
        match *self {
            ClosedForm::PiecewiseGaussianExp { a, b } => TABLE_RANGE.max(40.0 * (a + b) / (a - b)),
            _ => TABLE_RANGE,
        }
    }

    fn needs_normalizer(&self) -> bool {
        matches!(self, ClosedForm::PiecewiseGaussianExp { .. } | ClosedForm::Arccot)
    }

    fn kinks(&self) -> Vec<f64> {
        match self {
            ClosedForm::Laplace { .. } => vec![0.0],
            ClosedForm::PiecewiseGaussianExp { .. } => vec![-1.0, 0.0, 1.0],
            _ => vec![0.0],
        }
    }
}

type BoxedPdf = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// A normalized stationary density with its CDF.
pub struct StationaryLaw {
    pub form: Option<ClosedForm>,
    profile: Option<WaveProfile>,
    log_norm: f64,
    table: Option<TabulatedCdf<BoxedPdf>>,
}

impl std::fmt::Debug for StationaryLaw {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StationaryLaw").field("form", &self.form).field("log_norm", &self.log_norm).finish()
    }
}

// CDF tables: cell width and half-range.
const TABLE_CELL: f64 = 0.05;
const TABLE_RANGE: f64 = 200.0;

impl StationaryLaw {
    pub fn closed(form: ClosedForm) -> Result<Self> {
        match form {
            ClosedForm::GeneralizedGumbel { beta } if !(beta > 0.0) => {
                return Err(Error::Domain(format!("generalized Gumbel needs β > 0, got {beta}")))
            }
            ClosedForm::Laplace { a, b } | ClosedForm::PiecewiseGaussianExp { a, b } if !(a > b && b > 0.0) => {
                return Err(Error::Domain(format!("closed form needs a > b > 0, got a = {a}, b = {b}")))
            }
            _ => {}
        }
        let log_norm = if form.needs_normalizer() {
            let f = |x: f64| form.log_shape(x).exp();
            let mass = quad().integrate_line(&f, &form.kinks(), 1.0, 1.0)?;
            -mass.ln()
        } else {
            0.0
        };
        let table = if form.needs_normalizer() {
            let pdf: BoxedPdf = Box::new(move |x| (form.log_shape(x) + log_norm).exp());
            let r = (form.table_range() / TABLE_CELL).ceil() * TABLE_CELL;
            Some(TabulatedCdf::new(pdf, -r, r, TABLE_CELL)?)
        } else {
            None
        };
        Ok(StationaryLaw {
            form: Some(form),
            profile: None,
            log_norm,
            table,
        })
    }

    /// Closed form where one exists, otherwise the numerically centered profile.
    pub fn for_rate(w: &RateSpec) -> Result<Self> {
        if let Some(form) = ClosedForm::for_rate(w) {
            return Self::closed(form);
        }
        let profile = WaveProfile::traveling(w)?;
        let p = profile.clone();
        let pdf: BoxedPdf = Box::new(move |x| p.density(x));
        let lo = (profile.grid.lo / TABLE_CELL).floor() * TABLE_CELL;
        let hi = (profile.grid.hi() / TABLE_CELL).ceil() * TABLE_CELL;
        Ok(StationaryLaw {
            form: None,
            table: Some(TabulatedCdf::new(pdf, lo, hi, TABLE_CELL)?),
            profile: Some(profile),
            log_norm: 0.0,
        })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match (&self.form, &self.profile) {
            (Some(form), _) => (form.log_shape(x) + self.log_norm).exp(),
            (None, Some(p)) => p.density(x),
            (None, None) => f64::NAN,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match (self.form, &self.table) {
            (Some(ClosedForm::GeneralizedGumbel { beta }), _) => generalized_gumbel_cdf_centered(beta, x),
            (Some(ClosedForm::Laplace { a, b }), _) => {
                let lambda = (a - b) / (a + b);
                if x < 0.0 {
                    0.5 * (lambda * x).exp()
                } else {
                    1.0 - 0.5 * (-lambda * x).exp()
                }
            }
            (_, Some(t)) => t.cdf(x),
            _ => f64::NAN,
        }
    }

    pub fn normalizer(&self) -> f64 {
        self.log_norm.exp()
    }
}

/// CDF of the centered generalized Gumbel law: Q(1/β, e^{−β(x − ψ(1/β)/β)}).
pub fn generalized_gumbel_cdf_centered(beta: f64, x: f64) -> f64 {
    let shift = digamma(1.0 / beta).unwrap_or(f64::NAN) / beta;
    let z = (-beta * (x - shift)).exp();
    if !z.is_finite() {
        return 0.0;
    }
    gamma_q(1.0 / beta, z).unwrap_or(f64::NAN)
}

/// Density of the closed-form family at x.
pub fn closed_form_density(form: ClosedForm, x: f64) -> Result<f64> {
    Ok(StationaryLaw::closed(form)?.pdf(x))
}

/// Density values and spacing of the mean-field solution on a moving window.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub x0: f64,
    pub h: f64,
    pub values: Vec<f64>,
    pub t: f64,
    /// Mass discarded when the window advanced past it.
    pub dropped_mass: f64,
}

impl DensityField {
    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F) -> Self {
        DensityField {
            x0: grid.lo,
            h: grid.h,
            values: (0..grid.len).map(|j| f(grid.x(j))).collect(),
            t: 0.0,
            dropped_mass: 0.0,
        }
    }

    /// Gaussian N(mean, sd²) sampled on the grid and normalized to unit mass.
    pub fn gaussian(grid: Grid, mean: f64, sd: f64) -> Self {
        let mut f = Self::from_fn(grid, |x| (-0.5 * ((x - mean) / sd).powi(2)).exp());
        f.normalize();
        f
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x0 + j as f64 * self.h
    }

    pub fn mass(&self) -> f64 {
        self.h * self.values.iter().sum::<f64>()
    }

    /// ∫xρ as h·Σ xⱼρⱼ.
    pub fn mean(&self) -> f64 {
        self.h * self.values.iter().enumerate().map(|(j, v)| self.x(j) * v).sum::<f64>()
    }

    /// Rescales to unit mass; only meant for preparing initial data.
    pub fn normalize(&mut self) {
        let m = self.mass();
        self.values.iter_mut().for_each(|v| *v /= m);
    }

    /// Grid atoms and their masses h·ρⱼ.
    pub fn atoms(&self) -> (Vec<f64>, Vec<f64>) {
        ((0..self.values.len()).map(|j| self.x(j)).collect(), self.values.iter().map(|v| v * self.h).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,density")?;
        for (j, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{}", fmt17(self.x(j)), fmt17(*v))?;
        }
        Ok(())
    }
}

/// ṁ = ∫ w(y − m)ρ(y) dy on the grid.
pub fn mean_speed(rho: &DensityField, w: &RateSpec) -> f64 {
    let m = rho.mean();
    rho.h * rho.values.iter().enumerate().map(|(j, v)| w.value(rho.x(j) - m) * v).sum::<f64>()
}

/// Explicit-Euler stability budget: dt·sup w(x − m) must not exceed this.
pub const STABILITY: f64 = 0.5;

enum Kernel {
    /// Exponential jumps: exact recursion over a piecewise-linear w·ρ.
    Exponential { decay: f64, alpha: f64, beta: f64 },
    /// Unit jumps landing exactly `cells` grid points ahead.
    Shift { cells: usize },
    /// Direct convolution with tabulated φ(k·h)·h.
    Direct { weights: Vec<f64> },
}

impl Kernel {
    fn new(z: &LengthSpec, h: f64) -> Result<Self> {
        match z {
            LengthSpec::Exponential => {
                let decay = (-h).exp();
                let alpha = (h - 1.0 + decay) / h;
                Ok(Kernel::Exponential {
                    decay,
                    alpha,
                    beta: 1.0 - decay - alpha,
                })
            }
            LengthSpec::Deterministic => {
                let cells = (1.0 / h).round();
                if ((cells * h) - 1.0).abs() > 1e-9 {
                    return Err(Error::Unsupported(format!("unit jumps need 1/h to be an integer, h = {h}")));
                }
                Ok(Kernel::Shift { cells: cells as usize })
            }
            LengthSpec::Custom(c) => {
                let k = (c.upper() / h).ceil() as usize;
                let weights = (0..=k).map(|i| c.density(i as f64 * h) * h).collect();
                Ok(Kernel::Direct { weights })
            }
        }
    }

    fn apply(&self, g: &[f64], out: &mut [f64]) {
        match self {
            Kernel::Exponential { decay, alpha, beta } => {
                let mut acc = 0.0;
                let mut prev = 0.0;
                for (o, &gj) in out.iter_mut().zip(g) {
                    acc = decay * acc + alpha * gj + beta * prev;
                    prev = gj;
                    *o = acc;
                }
            }
            Kernel::Shift { cells } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (j, &gj) in g.iter().enumerate() {
                    if j + cells < out.len() {
                        out[j + cells] = gj;
                    }
                }
            }
            Kernel::Direct { weights } => {
                for (j, o) in out.iter_mut().enumerate() {
                    let lo = j.saturating_sub(weights.len() - 1);
                    *o = (lo..=j).map(|k| g[k] * weights[j - k]).sum::<f64>();
                }
            }
        }
    }
}

struct Stepper {
    kernel: Kernel,
    g: Vec<f64>,
    inflow: Vec<f64>,
}

impl Stepper {
    fn new(z: &LengthSpec, h: f64, len: usize) -> Result<Self> {
        Ok(Stepper {
            kernel: Kernel::new(z, h)?,
            g: vec![0.0; len],
            inflow: vec![0.0; len],
        })
    }

    fn step(&mut self, rho: &mut DensityField, w: &RateSpec, dt: f64) -> Result<()> {
        let m = rho.mean();
        let sup = w.value(rho.x0 - m);
        if dt * sup > STABILITY {
            return Err(Error::StepSize {
                dt,
                budget: STABILITY / sup,
            });
        }
        let n = rho.values.len();
        self.g.resize(n, 0.0);
        self.inflow.resize(n, 0.0);
        for (j, (g, v)) in self.g.iter_mut().zip(&rho.values).enumerate() {
            *g = w.value(rho.x0 + j as f64 * rho.h - m) * v;
        }
        self.kernel.apply(&self.g, &mut self.inflow);
        for ((v, g), i) in rho.values.iter_mut().zip(&self.g).zip(&self.inflow) {
            *v += dt * (i - g);
        }
        rho.t += dt;
        Ok(())
    }
}

/// One explicit Euler step of the mean-field equation.
pub fn pde_step(rho: &DensityField, w: &RateSpec, z: &LengthSpec, dt: f64) -> Result<DensityField> {
    let mut next = rho.clone();
    Stepper::new(z, rho.h, rho.values.len())?.step(&mut next, w, dt)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeSample {
    pub t: f64,
    pub mass: f64,
    pub mean: f64,
    pub speed: f64,
    /// W₁ to the reference law centered at the current mean.
    pub w1: Option<f64>,
}

pub struct PdeOptions<'a> {
    /// Time between diagnostic samples.
    pub sample_every: f64,
    /// Keep the window at [m + offset, …) by whole-cell shifts.
    pub comoving_offset: Option<f64>,
    /// Centered CDF for the W₁ column.
    pub reference: Option<&'a dyn Fn(f64) -> f64>,
}

impl Default for PdeOptions<'_> {
    fn default() -> Self {
        PdeOptions {
            sample_every: 1.0,
            comoving_offset: None,
            reference: None,
        }
    }
}

fn sample(rho: &DensityField, w: &RateSpec, reference: Option<&dyn Fn(f64) -> f64>) -> Result<PdeSample> {
    let mean = rho.mean();
    let w1 = match reference {
        Some(cdf) => {
            let (xs, ws) = rho.atoms();
            Some(wasserstein1_weighted_vs_cdf(&xs, &ws, &|x| cdf(x - mean), 1.0)?)
        }
        None => None,
    };
    Ok(PdeSample {
        t: rho.t,
        mass: rho.mass(),
        mean,
        speed: mean_speed(rho, w),
        w1,
    })
}

fn shift_window(rho: &mut DensityField, offset: f64) {
    let target = rho.mean() + offset;
    let cells = ((target - rho.x0) / rho.h).floor();
    if cells >= 1.0 {
        let k = (cells as usize).min(rho.values.len());
        rho.dropped_mass += rho.h * rho.values[..k].iter().sum::<f64>();
        rho.values.drain(..k);
        rho.values.extend(std::iter::repeat_n(0.0, k));
        rho.x0 += k as f64 * rho.h;
    }
}

/// Integrates to time rho0.t + duration, sampling diagnostics on the way.
pub fn pde_integrate(
    rho0: &DensityField,
    w: &RateSpec,
    z: &LengthSpec,
    duration: f64,
    dt: f64,
    opts: &PdeOptions,
) -> Result<(DensityField, Vec<PdeSample>)> {
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Domain(format!("need dt > 0 and duration ≥ 0, got {dt}, {duration}")));
    }
    let mut rho = rho0.clone();
    let mut stepper = Stepper::new(z, rho.h, rho.values.len())?;
    let mut samples = vec![sample(&rho, w, opts.reference)?];
    let t_end = rho0.t + duration;
    let steps = (duration / dt).round() as u64;
    let per_sample = ((opts.sample_every / dt).round() as u64).max(1);
    for k in 1..=steps {
        let h = if k == steps { t_end - rho.t } else { dt };
        if h <= 0.0 {
            break;
        }
        stepper.step(&mut rho, w, h.min(dt))?;
        if let Some(offset) = opts.comoving_offset {
            shift_window(&mut rho, offset);
        }
        if k % per_sample == 0 || k == steps {
            samples.push(sample(&rho, w, opts.reference)?);
        }
    }
    Ok((rho, samples))
}

pub fn write_diagnostics_csv<W: Write>(samples: &[PdeSample], mut out: W) -> Result<()> {
    writeln!(out, "t,mass,mean,speed,w1")?;
    for s in samples {
        let w1 = s.w1.map(fmt17).unwrap_or_default();
        writeln!(out, "{},{},{},{},{}", fmt17(s.t), fmt17(s.mass), fmt17(s.mean), fmt17(s.speed), w1)?;
    }
    Ok(())
}

/// Window offsets (left of the mean, right of the mean) and spacing for
/// integrating the equation with time step dt.
pub fn pde_window(w: &RateSpec, dt: f64, h: f64) -> Result<(f64, f64)> {
    match *w {
        // Keep dt·w(x − m) ≤ STABILITY on the window; the density there is negligible.
        RateSpec::Exponential { beta } => {
            let left = -(STABILITY / dt).ln() / beta + 2.0 * h;
            Ok((left, 40.0))
        }
        _ => {
            let a = w.bound().ok_or_else(|| Error::Unsupported(format!("no window rule for {w}")))?;
            if dt * a > STABILITY {
                return Err(Error::StepSize {
                    dt,
                    budget: STABILITY / a,
                });
            }
            let c = wave_speed(w)?;
            let left_rate = w.left_limit() / c - 1.0;
            let right_rate = 1.0 - w.right_limit() / c;
            Ok((-30.0 / left_rate, 30.0 / right_rate))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::EULER_GAMMA;

    #[test]
    fn speeds_of_the_examples() {
        let c = wave_speed(&RateSpec::step(2.0, 1.0).unwrap()).unwrap();
        assert!((c - 1.5).abs() < 1e-9, "{c}");
        let c = wave_speed(&RateSpec::Arccot).unwrap();
        assert!((c - PI / 2.0).abs() < 1e-9, "{c}");
        let c = wave_speed(&RateSpec::piecewise_linear(2.0, 1.0).unwrap()).unwrap();
        assert!((c - 1.5).abs() < 1e-9, "{c}");
        let c = wave_speed(&RateSpec::exponential(1.0).unwrap()).unwrap();
        assert!((c - EULER_GAMMA.exp()).abs() < 1e-9, "{c}");
    }

    #[test]
    fn exponential_speed_formula_for_other_betas() {
        for beta in [0.5, 2.0, 1.0 / 3.0] {
            let c = wave_speed(&RateSpec::exponential(beta).unwrap()).unwrap();
            let formula = (-digamma(1.0 / beta).unwrap()).exp() / beta;
            assert!((c - formula).abs() < 1e-8 * formula, "β = {beta}: {c} vs {formula}");
        }
    }

    #[test]
    fn constant_rate_has_no_wave() {
        let w = RateSpec::constant(2.0).unwrap();
        assert!(matches!(wave_speed(&w), Err(Error::NonNormalizable(_))));
        let g = Grid::new(-1.0, 1.0, 0.1).unwrap();
        assert!(matches!(wave_profile(&w, 2.0, g), Err(Error::NonNormalizable(_))));
        let w = RateSpec::step(2.0, 1.0).unwrap();
        assert!(matches!(wave_profile(&w, 2.5, g), Err(Error::NonNormalizable(_))));
    }

    #[test]
    fn step_profile_is_laplace() {
        let w = RateSpec::step(2.0, 1.0).unwrap();
        let p = wave_profile(&w, 1.5, Grid::new(-20.0, 20.0, 0.01).unwrap()).unwrap();
        for (j, v) in p.values.iter().enumerate() {
            let x = p.grid.x(j);
            assert!((v - (-x.abs() / 3.0).exp() / 6.0).abs() < 1e-12, "x = {x}");
        }
    }

    #[test]
    fn exponential_profile_is_gumbel() {
        let w = RateSpec::exponential(1.0).unwrap();
        let p = WaveProfile::traveling(&w).unwrap();
        for x in [-3.0, -1.0, -EULER_GAMMA, 0.0, 2.0, 10.0] {
            let y = x + EULER_GAMMA;
            let expected = (-y - (-y).exp()).exp();
            assert!((p.density(x) - expected).abs() < 1e-9, "x = {x}");
        }
        assert!((p.density(-EULER_GAMMA) - (-1f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn trapezoid_moments_on_default_grids() {
        for w in [
            RateSpec::exponential(1.0).unwrap(),
            RateSpec::step(2.0, 1.0).unwrap(),
            RateSpec::piecewise_linear(2.0, 1.0).unwrap(),
            RateSpec::Arccot,
        ] {
            let p = WaveProfile::traveling(&w).unwrap();
            let (mass, first) = p.trapezoid_moments();
            assert!((mass - 1.0).abs() < 1e-8, "{w}: mass {mass}");
            assert!(first.abs() < 1e-6, "{w}: first moment {first}");
            assert!(p.values.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn profile_mean_speed_matches_wave_speed() {
        for w in [RateSpec::exponential(1.0).unwrap(), RateSpec::step(2.0, 1.0).unwrap(), RateSpec::Arccot] {
            let c = wave_speed(&w).unwrap();
            let s = profile_mean_speed(&w, c).unwrap();
            assert!((s - c).abs() < 1e-9, "{w}: {s} vs {c}");
        }
    }

    #[test]
    fn profile_mean_decreases_across_the_bracket() {
        let rates = [
            RateSpec::exponential(1.0).unwrap(),
            RateSpec::step(2.0, 1.0).unwrap(),
            RateSpec::piecewise_linear(2.0, 1.0).unwrap(),
            RateSpec::Arccot,
        ];
        for w in rates {
            let (lo, hi) = if w.left_limit().is_finite() {
                (w.right_limit(), w.left_limit())
            } else {
                (w.right_limit(), 6.0)
            };
            let means: Vec<f64> = (1..40)
                .map(|i| profile_mean(&w, lo + (hi - lo) * i as f64 / 40.0).unwrap())
                .collect();
            assert!(means.windows(2).all(|p| p[1] < p[0]), "{w}: {means:?}");
        }
    }

    #[test]
    fn closed_forms() {
        let d = closed_form_density(ClosedForm::GeneralizedGumbel { beta: 1.0 }, -EULER_GAMMA).unwrap();
        assert!((d - (-1f64).exp()).abs() < 1e-14);
        let d = closed_form_density(ClosedForm::Laplace { a: 2.0, b: 1.0 }, 0.0).unwrap();
        assert!((d - 1.0 / 6.0).abs() < 1e-15);
        let law = StationaryLaw::closed(ClosedForm::PiecewiseGaussianExp { a: 2.0, b: 1.0 }).unwrap();
        assert!((law.pdf(1.0 - 1e-15) - law.pdf(1.0 + 1e-15)).abs() < 1e-12);
        assert!((law.pdf(-1.0 - 1e-15) - law.pdf(-1.0 + 1e-15)).abs() < 1e-12);
        assert!(closed_form_density(ClosedForm::Laplace { a: 1.0, b: 2.0 }, 0.0).is_err());
    }

    #[test]
    fn closed_forms_match_numeric_profiles() {
        for w in [
            RateSpec::exponential(1.0).unwrap(),
            RateSpec::exponential(0.5).unwrap(),
            RateSpec::piecewise_linear(2.0, 1.0).unwrap(),
            RateSpec::Arccot,
        ] {
            let law = StationaryLaw::for_rate(&w).unwrap();
            let p = WaveProfile::traveling(&w).unwrap();
            for x in [-2.0, -0.5, 0.0, 0.7, 3.0] {
                assert!((law.pdf(x) - p.density(x)).abs() < 1e-7, "{w} at {x}");
            }
        }
    }

    #[test]
    fn cdfs_are_consistent_with_densities() {
        let q = Quad::with_tol(1e-13, 1e-12);
        for w in [
            RateSpec::exponential(1.0).unwrap(),
            RateSpec::exponential(0.5).unwrap(),
            RateSpec::step(2.0, 1.0).unwrap(),
            RateSpec::piecewise_linear(2.0, 1.0).unwrap(),
            RateSpec::Arccot,
            RateSpec::tabulated(vec![-1.0, 0.0, 2.0], vec![3.0, 2.0, 0.5]).unwrap(),
        ] {
            let law = StationaryLaw::for_rate(&w).unwrap();
            for x in [-1.3, 0.0, 0.4, 2.5] {
                let mass = q.integrate_lower(&|y| law.pdf(y), x, 1.0).unwrap();
                assert!((law.cdf(x) - mass).abs() < 1e-9, "{w} at {x}: {} vs {mass}", law.cdf(x));
            }
        }
    }

    #[test]
    fn gumbel_centered_cdf_at_median() {
        // Standard Gumbel median is −ln ln 2; centered by γ.
        let x = -(2f64.ln().ln()) - EULER_GAMMA;
        let v = generalized_gumbel_cdf_centered(1.0, x);
        assert!((v - 0.5).abs() < 1e-12, "{v}");
    }

    #[test]
    fn profile_residual_small() {
        for w in [
            RateSpec::exponential(1.0).unwrap(),
            RateSpec::step(2.0, 1.0).unwrap(),
            RateSpec::piecewise_linear(2.0, 1.0).unwrap(),
            RateSpec::Arccot,
        ] {
            let p = WaveProfile::traveling(&w).unwrap();
            for x in [-3.05, -0.95, -0.3, 0.45, 1.2, 4.1] {
                let r = p.residual(x).unwrap();
                assert!(r.abs() < 1e-6, "{w} at {x}: {r}");
            }
        }
    }

    #[test]
    fn mean_speed_of_constant_rate_is_the_rate() {
        let rho = DensityField::gaussian(Grid::new(-5.0, 5.0, 0.01).unwrap(), 0.3, 1.0);
        let s = mean_speed(&rho, &RateSpec::constant(1.7).unwrap());
        assert!((s - 1.7).abs() < 1e-12);
        let s = mean_speed(&rho, &RateSpec::step(2.0, 1.0).unwrap());
        assert!(s <= 2.0);
    }

    #[test]
    fn exponential_kernel_conserves_mass_and_unit_mean_jump() {
        let h = 0.05;
        let k = Kernel::new(&LengthSpec::Exponential, h).unwrap();
        let mut g = vec![0.0; 2000];
        g[10] = 1.0;
        g[11] = 0.5;
        let mut out = vec![0.0; 2000];
        k.apply(&g, &mut out);
        let total_in: f64 = g.iter().sum();
        let total_out: f64 = out.iter().sum();
        assert!((total_in - total_out).abs() < 1e-13);
        let mean_in: f64 = g.iter().enumerate().map(|(j, v)| j as f64 * h * v).sum::<f64>() / total_in;
        let mean_out: f64 = out.iter().enumerate().map(|(j, v)| j as f64 * h * v).sum::<f64>() / total_out;
        assert!((mean_out - mean_in - 1.0).abs() < 1e-12);
    }

    #[test]
    fn step_rejects_unstable_dt_and_zero_duration_is_identity() {
        let w = RateSpec::step(2.0, 1.0).unwrap();
        let rho = DensityField::gaussian(Grid::new(-5.0, 5.0, 0.01).unwrap(), 0.0, 0.3);
        assert!(matches!(pde_step(&rho, &w, &LengthSpec::Exponential, 0.3), Err(Error::StepSize { .. })));
        let (out, samples) = pde_integrate(&rho, &w, &LengthSpec::Exponential, 0.0, 1e-3, &PdeOptions::default()).unwrap();
        assert_eq!(out, rho);
        assert_eq!(samples.len(), 1);
    }

    #[test]
    fn short_run_conserves_mass_and_mean_follows_speed() {
        let w = RateSpec::step(2.0, 1.0).unwrap();
        let dt = 1e-3;
        let rho = DensityField::gaussian(Grid::new(-30.0, 40.0, 0.01).unwrap(), 0.0, 0.5);
        let opts = PdeOptions {
            sample_every: dt,
            ..PdeOptions::default()
        };
        let (_, s) = pde_integrate(&rho, &w, &LengthSpec::Exponential, 0.5, dt, &opts).unwrap();
        for pair in s.windows(2) {
            // Forward Euler moves the mean by exactly dt·ṁ.
            let slope = (pair[1].mean - pair[0].mean) / (pair[1].t - pair[0].t);
            assert!((slope - pair[0].speed).abs() < 1e-9);
        }
        assert!((s.last().unwrap().mass - 1.0).abs() < 1e-11);
    }

    #[test]
    fn unit_jump_kernel_shifts_whole_cells() {
        assert!(matches!(Kernel::new(&LengthSpec::Deterministic, 0.3), Err(Error::Unsupported(_))));
        let k = Kernel::new(&LengthSpec::Deterministic, 0.25).unwrap();
        let mut out = vec![0.0; 8];
        k.apply(&[1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], &mut out);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
    }
}
