//! Stationary laws of the gap between two particles.
//!
//! With unit jumps and an integer starting gap, |x₁ − x₂| is a birth–death
//! chain on {0, 1, 2, …}. With exponential jumps and w(x) = e^{−βx} the gap
//! has the density C·cosh(βg/2)^{−(1+2/β)} on [0, ∞).

use crate::error::{Error, Result};
use crate::model::RateSpec;
use crate::numeric::{gk15, Quad};

/// (up, down) rates of the gap chain at k. At k = 0 either particle may jump,
/// so up = 2w(0) and down = 0.
pub fn gap_rates(w: &RateSpec, k: usize) -> (f64, f64) {
    if k == 0 {
        (2.0 * w.value(0.0), 0.0)
    } else {
        let h = k as f64 / 2.0;
        (w.value(h), w.value(-h))
    }
}

// Product terms below this fraction of the running sum end the truncation.
const TAIL_CUTOFF: f64 = 1e-14;
const KMAX_LIMIT: usize = 1_000_000;

/// Truncated gap chain on {0, …, kmax}.
#[derive(Debug, Clone)]
pub struct GapChain {
    pub w: RateSpec,
    pub kmax: usize,
    /// up[k] = Q_{k,k+1}, k = 0..kmax
    pub up: Vec<f64>,
    /// down[k] = Q_{k,k−1}, k = 1..=kmax (down[0] = 0)
    pub down: Vec<f64>,
}

impl GapChain {
    /// Chooses kmax so that the dropped tail is negligible.
    pub fn new(w: &RateSpec) -> Result<Self> {
        w.validate()?;
        if w.is_constant() {
            return Err(Error::NonNormalizable(format!(
                "gap chain for constant rate {w} is null recurrent"
            )));
        }
        let mut log_term = 0.0f64;
        let mut sum = 1.0f64;
        let mut k = 0usize;
        loop {
            let (up, _) = gap_rates(w, k);
            let (_, down) = gap_rates(w, k + 1);
            log_term += up.ln() - down.ln();
            k += 1;
            let term = log_term.exp();
            sum += term;
            if term < TAIL_CUTOFF * sum && up < down {
                break;
            }
            if k >= KMAX_LIMIT || !sum.is_finite() {
                return Err(Error::NonNormalizable(format!(
                    "gap chain for {w} has not decayed by k = {k}"
                )));
            }
        }
        Ok(Self::with_kmax(w, k))
    }

    pub fn with_kmax(w: &RateSpec, kmax: usize) -> Self {
        let mut up = Vec::with_capacity(kmax + 1);
        let mut down = Vec::with_capacity(kmax + 1);
        for k in 0..=kmax {
            let (u, d) = gap_rates(w, k);
            up.push(if k < kmax { u } else { 0.0 });
            down.push(d);
        }
        GapChain {
            w: w.clone(),
            kmax,
            up,
            down,
        }
    }
}

/// Stationary pmf from the product formula
/// π_k ∝ 2 Π_{i<k} w(i/2) / Π_{i≤k} w(−i/2), summed in log space.
pub fn gap_stationary_pmf(chain: &GapChain) -> Result<Vec<f64>> {
    if chain.w.is_constant() {
        return Err(Error::NonNormalizable(format!(
            "gap chain for constant rate {} is null recurrent",
            chain.w
        )));
    }
    let mut logs = Vec::with_capacity(chain.kmax + 1);
    let mut acc = 0.0;
    logs.push(acc);
    for k in 0..chain.kmax {
        acc += chain.up[k].ln() - chain.down[k + 1].ln();
        logs.push(acc);
    }
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut pi: Vec<f64> = logs.iter().map(|l| (l - peak).exp()).collect();
    let total: f64 = pi.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::Numeric(format!("gap pmf normalizer is {total}")));
    }
    pi.iter_mut().for_each(|p| *p /= total);
    Ok(pi)
}

/// Stationary pmf by solving πQ = 0, Σπ = 1 with dense Gaussian elimination.
pub fn gap_stationary_linear(chain: &GapChain) -> Result<Vec<f64>> {
    let n = chain.kmax + 1;
    // a · π = rhs with a = Qᵀ, last row replaced by the normalization.
    let mut a = vec![vec![0.0; n]; n];
    for k in 0..n {
        let out = chain.up[k] + chain.down[k];
        a[k][k] -= out;
        if k + 1 < n {
            a[k + 1][k] += chain.up[k];
        }
        if k > 0 {
            a[k - 1][k] += chain.down[k];
        }
    }
    a[n - 1].iter_mut().for_each(|v| *v = 1.0);
    let mut rhs = vec![0.0; n];
    rhs[n - 1] = 1.0;
    solve_dense(a, rhs)
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot][col] == 0.0 {
            return Err(Error::Solver(format!("singular matrix at column {col}")));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for c in col..n {
                    a[row][c] -= f * a[col][c];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Ok(x)
}

fn ln_cosh(y: f64) -> f64 {
    let y = y.abs();
    y + (-2.0 * y).exp().ln_1p() - std::f64::consts::LN_2
}

// CDF table spacing.
const CDF_CELL: f64 = 0.05;

/// Normalized gap density C / cosh(βg/2)^{1+2/β} for w = e^{−βx} and
/// exponential jump lengths.
#[derive(Debug, Clone)]
pub struct GapDensity {
    pub beta: f64,
    pub normalizer: f64,
    // Unnormalized cumulative mass at the knots j·CDF_CELL.
    cumulative: Vec<f64>,
}

impl GapDensity {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Domain(format!("gap density needs β > 0, got {beta}")));
        }
        let power = 1.0 + 2.0 / beta;
        let decay = 1.0 + beta / 2.0;
        let f = |g: f64| (-power * ln_cosh(beta * g / 2.0)).exp();
        // Beyond `end` the tail is below 2^p·e^{−decay·g}/decay < 1e−17.
        let end = (40.0 + power * std::f64::consts::LN_2) / decay;
        let cells = (end / CDF_CELL).ceil() as usize;
        let mut cumulative = Vec::with_capacity(cells + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for j in 0..cells {
            let (v, _) = gk15(&f, j as f64 * CDF_CELL, (j + 1) as f64 * CDF_CELL);
            acc += v;
            cumulative.push(acc);
        }
        let quad = Quad::with_tol(1e-15, 1e-14);
        let mass = quad.integrate_upper(&f, 0.0, 1.0 / decay)?;
        Ok(GapDensity {
            beta,
            normalizer: 1.0 / mass,
            cumulative,
        })
    }

    fn unnormalized(&self, g: f64) -> f64 {
        (-(1.0 + 2.0 / self.beta) * ln_cosh(self.beta * g / 2.0)).exp()
    }

    /// Density at g (zero for g < 0).
    pub fn pdf(&self, g: f64) -> f64 {
        if g < 0.0 {
            0.0
        } else {
            self.normalizer * self.unnormalized(g)
        }
    }

    pub fn cdf(&self, g: f64) -> f64 {
        if !(g > 0.0) {
            return 0.0;
        }
        let j = (g / CDF_CELL).floor() as usize;
        if j + 1 >= self.cumulative.len() {
            return 1.0;
        }
        let f = |y: f64| self.unnormalized(y);
        let (partial, _) = gk15(&f, j as f64 * CDF_CELL, g);
        (self.normalizer * (self.cumulative[j] + partial)).min(1.0)
    }

    /// Asymptotic decay rate 1 + β/2 of the right tail.
    pub fn tail_rate(&self) -> f64 {
        1.0 + self.beta / 2.0
    }
}

/// Exponential-rate gap density at g.
pub fn gap_density_exp_rate(beta: f64, g: f64) -> Result<f64> {
    Ok(GapDensity::new(beta)?.pdf(g))
}

fn residual_quad() -> Quad {
    Quad::with_tol(1e-13, 1e-13)
}

/// Right-hand side of the stationary gap master equation
///
/// −p(g)cosh(βg/2) + e^{−g}∫₀^g p(y)cosh((β/2−1)y)dy + cosh(g)∫_g^∞ p(y)e^{(β/2−1)y}dy,
///
/// which vanishes when p is stationary.
pub fn master_residual<P: Fn(f64) -> f64 + ?Sized>(p: &P, beta: f64, g: f64) -> Result<f64> {
    if !(beta > 0.0) || !(g >= 0.0) {
        return Err(Error::Domain(format!("master residual needs β > 0, g ≥ 0; got β = {beta}, g = {g}")));
    }
    let k = beta / 2.0 - 1.0;
    let q = residual_quad();
    let inner = q.integrate(&|y: f64| p(y) * (k * y).cosh(), 0.0, g)?;
    let outer = q.integrate_upper(&|y: f64| p(y) * (k * y).exp(), g, 0.5)?;
    Ok(-p(g) * (beta * g / 2.0).cosh() + (-g).exp() * inner + g.cosh() * outer)
}

/// (p(0⁺), ∫₀^∞ p(y)e^{(β/2−1)y}dy) for the analytic density; equal when the
/// boundary condition at g = 0 holds.
pub fn boundary_limit_check(beta: f64) -> Result<(f64, f64)> {
    let d = GapDensity::new(beta)?;
    let k = beta / 2.0 - 1.0;
    let rhs = residual_quad().integrate_upper(&|y: f64| d.pdf(y) * (k * y).exp(), 0.0, 0.5)?;
    Ok((d.pdf(0.0), rhs))
}
