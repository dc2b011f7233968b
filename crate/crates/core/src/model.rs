//! Jump-rate and jump-length laws, and the particle configuration.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{gauss_legendre_64, Quad};

/// Exponent arguments are clamped to this magnitude before `exp`.
pub const EXP_CLAMP: f64 = 700.0;

/// The jump rate w as a function of a particle's offset from the center of mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSpec {
    /// w(x) = e^{−βx}
    Exponential { beta: f64 },
    /// w(x) = a for x < 0, b for x ≥ 0
    Step { a: f64, b: f64 },
    /// a left of −1, b right of 1, linear in between
    PiecewiseLinear { a: f64, b: f64 },
    /// w(x) = arccot(x) ∈ (0, π)
    Arccot,
    /// Linear interpolation of a non-increasing table, flat outside the grid.
    TabulatedBounded {
        grid: Vec<f64>,
        values: Vec<f64>,
        left_limit: f64,
        right_limit: f64,
    },
}

impl RateSpec {
    pub fn exponential(beta: f64) -> Result<Self> {
        let s = RateSpec::Exponential { beta };
        s.validate()?;
        Ok(s)
    }

    pub fn step(a: f64, b: f64) -> Result<Self> {
        let s = RateSpec::Step { a, b };
        s.validate()?;
        Ok(s)
    }

    pub fn piecewise_linear(a: f64, b: f64) -> Result<Self> {
        let s = RateSpec::PiecewiseLinear { a, b };
        s.validate()?;
        Ok(s)
    }

    /// Table with the limits read off its end values.
    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let left_limit = values.first().copied().unwrap_or(f64::NAN);
        let right_limit = values.last().copied().unwrap_or(f64::NAN);
        let s = RateSpec::TabulatedBounded {
            grid,
            values,
            left_limit,
            right_limit,
        };
        s.validate()?;
        Ok(s)
    }

    /// A table that is constant `a` everywhere.
    pub fn constant(a: f64) -> Result<Self> {
        Self::tabulated(vec![0.0], vec![a])
    }

    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        match self {
            RateSpec::Exponential { beta } => {
                if !finite_pos(*beta) {
                    return Err(Error::Model(format!("exponential rate needs beta > 0, got {beta}")));
                }
            }
            RateSpec::Step { a, b } | RateSpec::PiecewiseLinear { a, b } => {
                if !(finite_pos(*a) && finite_pos(*b) && a > b) {
                    return Err(Error::Model(format!("rate needs a > b > 0, got a = {a}, b = {b}")));
                }
            }
            RateSpec::Arccot => {}
            RateSpec::TabulatedBounded {
                grid,
                values,
                left_limit,
                right_limit,
            } => {
                if grid.is_empty() || grid.len() != values.len() {
                    return Err(Error::Model("table grid and values must be non-empty and equally long".into()));
                }
                if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Model("table grid must be finite and strictly ascending".into()));
                }
                if values.iter().any(|&v| !finite_pos(v)) {
                    return Err(Error::Model("table values must be finite and positive".into()));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::Model("table values must be non-increasing".into()));
                }
                let sup = values[0];
                if (sup - left_limit).abs() > 1e-12 * sup || (values[values.len() - 1] - right_limit).abs() > 1e-12 * sup {
                    return Err(Error::Model(format!(
                        "declared limits ({left_limit}, {right_limit}) disagree with table ends ({}, {})",
                        sup,
                        values[values.len() - 1]
                    )));
                }
            }
        }
        Ok(())
    }

    /// w(x); rejects non-finite arguments.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("rate evaluated at non-finite x = {x}")));
        }
        Ok(self.value(x))
    }

    /// w(x) without the finiteness check; used on hot paths.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            RateSpec::Exponential { beta } => (-beta * x).clamp(-EXP_CLAMP, EXP_CLAMP).exp(),
            RateSpec::Step { a, b } => {
                if x < 0.0 {
                    a
                } else {
                    b
                }
            }
            RateSpec::PiecewiseLinear { a, b } => {
                if x < -1.0 {
                    a
                } else if x > 1.0 {
                    b
                } else {
                    -0.5 * (a - b) * x + 0.5 * (a + b)
                }
            }
            RateSpec::Arccot => arccot(x),
            RateSpec::TabulatedBounded {
                ref grid, ref values, ..
            } => interpolate(grid, values, x),
        }
    }

    /// w(−∞) (infinite for the exponential family).
    pub fn left_limit(&self) -> f64 {
        match *self {
            RateSpec::Exponential { .. } => f64::INFINITY,
            RateSpec::Step { a, .. } | RateSpec::PiecewiseLinear { a, .. } => a,
            RateSpec::Arccot => PI,
            RateSpec::TabulatedBounded { left_limit, .. } => left_limit,
        }
    }

    /// w(+∞).
    pub fn right_limit(&self) -> f64 {
        match *self {
            RateSpec::Exponential { .. } => 0.0,
            RateSpec::Step { b, .. } | RateSpec::PiecewiseLinear { b, .. } => b,
            RateSpec::Arccot => 0.0,
            RateSpec::TabulatedBounded { right_limit, .. } => right_limit,
        }
    }

    /// sup_x w(x) when finite.
    pub fn bound(&self) -> Option<f64> {
        let a = self.left_limit();
        a.is_finite().then_some(a)
    }

    pub fn is_constant(&self) -> bool {
        self.left_limit() == self.right_limit()
    }

    /// Points where w is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            RateSpec::Exponential { .. } | RateSpec::Arccot => Vec::new(),
            RateSpec::Step { .. } => vec![0.0],
            RateSpec::PiecewiseLinear { .. } => vec![-1.0, 1.0],
            RateSpec::TabulatedBounded { grid, .. } => grid.clone(),
        }
    }

    /// ∫_0^x w(s) ds in closed form.
    pub fn integral(&self, x: f64) -> f64 {
        match *self {
            RateSpec::Exponential { beta } => {
                // (1 − e^{−βx})/β, written to stay accurate near x = 0
                -(-beta * x).clamp(-EXP_CLAMP, EXP_CLAMP).exp_m1() / beta
            }
            RateSpec::Step { a, b } => {
                if x < 0.0 {
                    a * x
                } else {
                    b * x
                }
            }
            RateSpec::PiecewiseLinear { a, b } => {
                let inner = |s: f64| -0.25 * (a - b) * s * s + 0.5 * (a + b) * s;
                if x < -1.0 {
                    inner(-1.0) + a * (x + 1.0)
                } else if x > 1.0 {
                    inner(1.0) + b * (x - 1.0)
                } else {
                    inner(x)
                }
            }
            RateSpec::Arccot => x * arccot(x) + 0.5 * x.mul_add(x, 1.0).ln(),
            RateSpec::TabulatedBounded {
                ref grid, ref values, ..
            } => table_integral(grid, values, x),
        }
    }

    /// sup{x : w(x) ≥ level}, for level strictly between the limits.
    pub fn level_crossing(&self, level: f64) -> Result<f64> {
        if !(level > self.right_limit() && level < self.left_limit()) {
            return Err(Error::Domain(format!(
                "level {level} outside ({}, {})",
                self.right_limit(),
                self.left_limit()
            )));
        }
        match *self {
            RateSpec::Exponential { beta } => Ok(-level.ln() / beta),
            RateSpec::Step { .. } => Ok(0.0),
            RateSpec::Arccot => Ok(1.0 / level.tan()),
            _ => {
                let (mut lo, mut hi) = (-1.0, 1.0);
                while self.value(lo) < level {
                    lo *= 2.0;
                }
                while self.value(hi) >= level {
                    hi *= 2.0;
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid == lo || mid == hi {
                        break;
                    }
                    if self.value(mid) >= level {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(lo)
            }
        }
    }
}

#[inline]
fn arccot(x: f64) -> f64 {
    0.5 * PI - x.atan()
}

fn interpolate(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let last = grid.len() - 1;
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[last] {
        return values[last];
    }
    let j = grid.partition_point(|&g| g <= x) - 1;
    let t = (x - grid[j]) / (grid[j + 1] - grid[j]);
    values[j] + t * (values[j + 1] - values[j])
}

// Antiderivative of the interpolant measured from grid[0].
fn table_antiderivative(grid: &[f64], values: &[f64], x: f64) -> f64 {
    let last = grid.len() - 1;
    if x <= grid[0] {
        return values[0] * (x - grid[0]);
    }
    let mut acc = 0.0;
    for j in 0..last {
        let (x0, x1) = (grid[j], grid[j + 1]);
        if x >= x1 {
            acc += 0.5 * (values[j] + values[j + 1]) * (x1 - x0);
        } else {
            let v = interpolate(grid, values, x);
            return acc + 0.5 * (values[j] + v) * (x - x0);
        }
    }
    acc + values[last] * (x - grid[last])
}

fn table_integral(grid: &[f64], values: &[f64], x: f64) -> f64 {
    table_antiderivative(grid, values, x) - table_antiderivative(grid, values, 0.0)
}

impl fmt::Display for RateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateSpec::Exponential { beta } => write!(f, "exp:{beta}"),
            RateSpec::Step { a, b } => write!(f, "step:{a},{b}"),
            RateSpec::PiecewiseLinear { a, b } => write!(f, "pl:{a},{b}"),
            RateSpec::Arccot => write!(f, "arccot"),
            RateSpec::TabulatedBounded { grid, values, .. } => {
                write!(f, "table:")?;
                for (i, (x, v)) in grid.iter().zip(values).enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{x}:{v}")?;
                }
                Ok(())
            }
        }
    }
}

/// Parses `exp:<beta>`, `step:<a>,<b>`, `pl:<a>,<b>`, `arccot`, or
/// `table:<x>:<w>,<x>:<w>,...`.
impl FromStr for RateSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Model(format!("cannot parse rate spec `{s}`"));
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad());
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        match kind.trim() {
            "exp" | "exponential" => RateSpec::exponential(num(args)?),
            "step" | "pl" | "piecewise_linear" => {
                let (a, b) = args.split_once(',').ok_or_else(bad)?;
                if kind == "step" {
                    RateSpec::step(num(a)?, num(b)?)
                } else {
                    RateSpec::piecewise_linear(num(a)?, num(b)?)
                }
            }
            "arccot" => Ok(RateSpec::Arccot),
            "table" => {
                let mut grid = Vec::new();
                let mut values = Vec::new();
                for pair in args.split(',') {
                    let (x, v) = pair.split_once(':').ok_or_else(bad)?;
                    grid.push(num(x)?);
                    values.push(num(v)?);
                }
                RateSpec::tabulated(grid, values)
            }
            _ => Err(bad()),
        }
    }
}

pub type DensityFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type SamplerFn = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

/// A user-supplied jump-length law with unit mean, supported on `[0, upper]`.
#[derive(Clone)]
pub struct CustomLength {
    density: DensityFn,
    sampler: SamplerFn,
    upper: f64,
    third_moment: f64,
}

impl fmt::Debug for CustomLength {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLength")
            .field("upper", &self.upper)
            .field("third_moment", &self.third_moment)
            .finish_non_exhaustive()
    }
}

impl CustomLength {
    pub fn density(&self, z: f64) -> f64 {
        (self.density)(z)
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }
}

/// The jump-length law Z (always scaled to E Z = 1).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthSpec {
    /// Z ≡ 1
    Deterministic,
    /// Z ~ Exp(1)
    #[default]
    Exponential,
    #[serde(skip)]
    Custom(CustomLength),
}

impl PartialEq for LengthSpec {
    fn eq(&self, other: &Self) -> bool {
        matches!(
            (self, other),
            (LengthSpec::Deterministic, LengthSpec::Deterministic) | (LengthSpec::Exponential, LengthSpec::Exponential)
        )
    }
}

impl LengthSpec {
    /// Builds a custom law; the declared mean must be 1 and the density is
    /// checked by quadrature against the declaration.
    pub fn custom(
        density: DensityFn,
        sampler: SamplerFn,
        upper: f64,
        declared_mean: f64,
        declared_third_moment: f64,
    ) -> Result<Self> {
        if (declared_mean - 1.0).abs() > 1e-12 {
            return Err(Error::Model(format!("jump length mean must be 1, declared {declared_mean}")));
        }
        if !declared_third_moment.is_finite() || declared_third_moment <= 0.0 {
            return Err(Error::Model(format!("third moment must be finite, declared {declared_third_moment}")));
        }
        if !(upper.is_finite() && upper > 0.0) {
            return Err(Error::Model(format!("support bound must be finite and positive, got {upper}")));
        }
        let q = Quad::with_tol(1e-10, 1e-10);
        let mass = q.integrate(&|z| density(z), 0.0, upper)?;
        let mean = q.integrate(&|z| z * density(z), 0.0, upper)?;
        if (mass - 1.0).abs() > 1e-6 || (mean - 1.0).abs() > 1e-6 {
            return Err(Error::Model(format!("density has mass {mass} and mean {mean}; both must be 1")));
        }
        Ok(LengthSpec::Custom(CustomLength {
            density,
            sampler,
            upper,
            third_moment: declared_third_moment,
        }))
    }

    /// Draws one jump length.
    #[inline]
    pub fn sample<R: RngCore>(&self, rng: &mut R) -> Result<f64> {
        match self {
            LengthSpec::Deterministic => Ok(1.0),
            LengthSpec::Exponential => Ok(rng.sample(Exp1)),
            LengthSpec::Custom(c) => {
                let z = (c.sampler)(rng);
                if z >= 0.0 && z.is_finite() {
                    Ok(z)
                } else {
                    Err(Error::Model(format!("custom jump sampler returned {z}")))
                }
            }
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            LengthSpec::Deterministic => 1.0,
            LengthSpec::Exponential => 2.0,
            LengthSpec::Custom(c) => Quad::with_tol(1e-10, 1e-10)
                .integrate(&|z| z * z * (c.density)(z), 0.0, c.upper)
                .unwrap_or(f64::NAN),
        }
    }

    pub fn third_moment(&self) -> f64 {
        match self {
            LengthSpec::Deterministic => 1.0,
            LengthSpec::Exponential => 6.0,
            LengthSpec::Custom(c) => c.third_moment,
        }
    }

    /// E f(x + Z): exact for deterministic jumps, 64-point Gauss–Legendre
    /// otherwise (in the quantile variable for the exponential law).
    pub fn expect_shifted<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, x: f64) -> f64 {
        let (nodes, weights) = gauss_legendre_64();
        match self {
            LengthSpec::Deterministic => f(x + 1.0),
            LengthSpec::Exponential => nodes
                .iter()
                .zip(weights)
                .map(|(&t, &w)| {
                    let u = 0.5 * (t + 1.0);
                    0.5 * w * f(x - (-u).ln_1p())
                })
                .sum(),
            LengthSpec::Custom(c) => nodes
                .iter()
                .zip(weights)
                .map(|(&t, &w)| {
                    let z = 0.5 * c.upper * (t + 1.0);
                    0.5 * c.upper * w * (c.density)(z) * f(x + z)
                })
                .sum(),
        }
    }
}

/// Every event re-sums the cached position total after this many updates.
pub const RESUM_INTERVAL: u64 = 100_000;

/// Particle positions, clock, and the running position sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    positions: Vec<f64>,
    time: f64,
    pos_sum: f64,
    since_resum: u64,
}

impl SystemState {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("configuration has no particles".into()));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite particle position".into()));
        }
        let pos_sum = positions.iter().sum();
        Ok(SystemState {
            positions,
            time: 0.0,
            pos_sum,
            since_resum: 0,
        })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn pos_sum(&self) -> f64 {
        self.pos_sum
    }

    /// m = (1/n) Σ xᵢ from the cached sum.
    #[inline]
    pub fn center_of_mass(&self) -> f64 {
        self.pos_sum / self.positions.len() as f64
    }

    /// Moves the clock forward; time never decreases.
    pub fn advance_to(&mut self, t: f64) {
        debug_assert!(t >= self.time, "clock moved backwards: {} -> {t}", self.time);
        self.time = t;
    }

    /// Adds `dz` to particle `i` and updates the cached sum.
    #[inline]
    pub fn jump(&mut self, i: usize, dz: f64) {
        self.positions[i] += dz;
        self.pos_sum += dz;
        self.since_resum += 1;
        if self.since_resum >= RESUM_INTERVAL {
            self.resum();
        }
    }

    pub fn resum(&mut self) {
        self.pos_sum = self.positions.iter().sum();
        self.since_resum = 0;
    }

    pub fn centered(&self) -> Vec<f64> {
        let m = self.center_of_mass();
        self.positions.iter().map(|x| x - m).collect()
    }
}

/// Center of mass of a raw position list.
pub fn center_of_mass(positions: &[f64]) -> Result<f64> {
    if positions.is_empty() {
        return Err(Error::Domain("center of mass of an empty configuration".into()));
    }
    Ok(positions.iter().sum::<f64>() / positions.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn families() -> Vec<RateSpec> {
        vec![
            RateSpec::exponential(1.0).unwrap(),
            RateSpec::exponential(0.5).unwrap(),
            RateSpec::step(2.0, 1.0).unwrap(),
            RateSpec::piecewise_linear(2.0, 1.0).unwrap(),
            RateSpec::Arccot,
            RateSpec::tabulated(vec![-2.0, 0.0, 1.0, 3.0], vec![3.0, 2.0, 2.0, 0.5]).unwrap(),
        ]
    }

    #[test]
    fn rate_examples() {
        assert_eq!(RateSpec::exponential(1.0).unwrap().eval(0.0).unwrap(), 1.0);
        assert_eq!(RateSpec::step(2.0, 1.0).unwrap().eval(-0.5).unwrap(), 2.0);
        assert!((RateSpec::Arccot.eval(0.0).unwrap() - PI / 2.0).abs() < 1e-15);
        assert!((RateSpec::piecewise_linear(2.0, 1.0).unwrap().eval(0.0).unwrap() - 1.5).abs() < 1e-15);
        assert!(matches!(RateSpec::Arccot.eval(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(RateSpec::Arccot.eval(f64::INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(RateSpec::exponential(0.0).is_err());
        assert!(RateSpec::step(1.0, 2.0).is_err());
        assert!(RateSpec::piecewise_linear(1.0, 1.0).is_err());
        assert!(RateSpec::tabulated(vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
        assert!(RateSpec::tabulated(vec![1.0, 0.0], vec![2.0, 1.0]).is_err());
        let bad_limit = RateSpec::TabulatedBounded {
            grid: vec![0.0, 1.0],
            values: vec![2.0, 1.0],
            left_limit: 3.0,
            right_limit: 1.0,
        };
        assert!(bad_limit.validate().is_err());
    }

    #[test]
    fn rates_positive_and_non_increasing_on_probe_grid() {
        for spec in families() {
            let mut prev = f64::INFINITY;
            for k in -4000..=4000 {
                let x = k as f64 * 0.01;
                let w = spec.eval(x).unwrap();
                assert!(w > 0.0, "{spec}: w({x}) = {w}");
                assert!(w <= prev, "{spec} increases at {x}");
                if let Some(a) = spec.bound() {
                    assert!(w <= a);
                }
                prev = w;
            }
        }
    }

    #[test]
    fn exponential_clamps_instead_of_overflowing() {
        let w = RateSpec::exponential(1.0).unwrap();
        assert!(w.eval(-1e6).unwrap().is_finite());
        assert!(w.eval(1e6).unwrap() > 0.0);
    }

    #[test]
    fn closed_form_integral_matches_quadrature() {
        let q = Quad::default();
        for spec in families() {
            let mut breaks = spec.breakpoints();
            for &x in &[-3.7, -1.0, -0.2, 0.0, 0.4, 1.0, 2.5, 6.0] {
                breaks.push(0.0);
                breaks.push(x);
                let mut pts: Vec<f64> = breaks.iter().copied().filter(|p| *p >= x.min(0.0) && *p <= x.max(0.0)).collect();
                pts.sort_by(f64::total_cmp);
                pts.dedup();
                let sign = if x < 0.0 { -1.0 } else { 1.0 };
                let quad = sign * q.integrate_breaks(&|s| spec.value(s), &pts).unwrap();
                assert!((spec.integral(x) - quad).abs() < 1e-10, "{spec} at {x}: {} vs {quad}", spec.integral(x));
            }
        }
    }

    #[test]
    fn level_crossing_inverts_the_rate() {
        for spec in families() {
            let (lo, hi) = (spec.right_limit(), spec.left_limit().min(10.0));
            for k in 1..10 {
                let level = lo + (hi - lo) * k as f64 / 10.0;
                let x = spec.level_crossing(level).unwrap();
                assert!(spec.value(x - 1e-9) >= level - 1e-9, "{spec} level {level}");
                assert!(spec.value(x + 1e-6) <= level + 1e-6);
            }
        }
    }

    #[test]
    fn rate_spec_text_round_trip() {
        for spec in families() {
            let parsed: RateSpec = spec.to_string().parse().unwrap();
            assert_eq!(parsed, spec);
        }
        assert!("bogus:1".parse::<RateSpec>().is_err());
    }

    #[test]
    fn deterministic_jumps_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(LengthSpec::Deterministic.sample(&mut rng).unwrap(), 1.0);
        }
    }

    #[test]
    fn exponential_jump_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut s1, mut s3) = (0.0, 0.0);
        for _ in 0..n {
            let z = LengthSpec::Exponential.sample(&mut rng).unwrap();
            assert!(z >= 0.0);
            s1 += z;
            s3 += z * z * z;
        }
        let (m1, m3) = (s1 / n as f64, s3 / n as f64);
        assert!((m1 - 1.0).abs() < 0.01, "mean {m1}");
        assert!((m3 - 6.0).abs() < 0.3, "third moment {m3}");
    }

    fn uniform_02() -> Result<LengthSpec> {
        LengthSpec::custom(
            Arc::new(|z| if (0.0..=2.0).contains(&z) { 0.5 } else { 0.0 }),
            Arc::new(|rng| 2.0 * rng.random::<f64>()),
            2.0,
            1.0,
            2.0,
        )
    }

    #[test]
    fn custom_law_checks_declarations() {
        let spec = uniform_02().unwrap();
        assert!((spec.second_moment() - 4.0 / 3.0).abs() < 1e-9);
        let e = spec.expect_shifted(&|x| x * x, 0.5);
        // E (0.5 + Z)² = 0.25 + 1 + 4/3
        assert!((e - (0.25 + 1.0 + 4.0 / 3.0)).abs() < 1e-12);
        let wrong_mean = LengthSpec::custom(Arc::new(|_| 0.5), Arc::new(|_| 1.0), 2.0, 1.5, 2.0);
        assert!(wrong_mean.is_err());
        let bad_sampler =
            LengthSpec::custom(Arc::new(|z| if z <= 2.0 { 0.5 } else { 0.0 }), Arc::new(|_| -1.0), 2.0, 1.0, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(bad_sampler.sample(&mut rng), Err(Error::Model(_))));
    }

    #[test]
    fn shifted_expectation_for_exponential_law() {
        // E tanh(x + Z) against adaptive quadrature.
        let q = Quad::default();
        for &x in &[-3.0, -0.5, 0.0, 2.0] {
            let exact = q.integrate_upper(&|z: f64| (x + z).tanh() * (-z).exp(), 0.0, 1.0).unwrap();
            let gl = LengthSpec::Exponential.expect_shifted(&|y: f64| y.tanh(), x);
            assert!((exact - gl).abs() < 1e-10, "x = {x}: {exact} vs {gl}");
        }
        assert_eq!(LengthSpec::Deterministic.expect_shifted(&|y| y, 2.0), 3.0);
    }

    #[test]
    fn center_of_mass_examples() {
        assert_eq!(center_of_mass(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(center_of_mass(&[4.5]).unwrap(), 4.5);
        assert!(center_of_mass(&[]).is_err());
        assert!(SystemState::new(vec![]).is_err());
        let mut s = SystemState::new(vec![0.0, 1.0, 5.0, 2.0]).unwrap();
        let m0 = s.center_of_mass();
        s.jump(2, 0.8);
        assert!((s.center_of_mass() - m0 - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cached_sum_tracks_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1000;
        let mut s = SystemState::zeros(n).unwrap();
        for _ in 0..1_000_000 {
            let i = rng.random_range(0..n);
            s.jump(i, rng.sample::<f64, _>(Exp1));
        }
        let exact: f64 = s.positions().iter().sum::<f64>() / n as f64;
        assert!((s.center_of_mass() - exact).abs() <= 1e-9 * exact.abs());
    }
}
