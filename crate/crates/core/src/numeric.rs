//! Quadrature and root-finding primitives shared by the analytic solvers.
//!
//! The adaptive integrator is a 7/15-point Gauss–Kronrod scheme with global
//! bisection of the interval carrying the largest error estimate. Infinite
//! ranges are mapped onto `[0, 1)` with `x = a + s·t/(1−t)`, where `s` is a
//! caller-supplied length scale for the tail.

use std::sync::OnceLock;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_47,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One Gauss–Kronrod panel: returns (Kronrod estimate, |Kronrod − Gauss|).
pub fn gk15<F: Fn(f64) -> f64 + ?Sized>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += wk * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod integrator settings.
#[derive(Debug, Clone, Copy)]
pub struct Quad {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for Quad {
    fn default() -> Self {
        Quad {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_panels: 4000,
        }
    }
}

impl Quad {
    pub fn with_tol(abs_tol: f64, rel_tol: f64) -> Self {
        Quad {
            abs_tol,
            rel_tol,
            ..Quad::default()
        }
    }

    /// ∫_a^b f over a finite interval.
    pub fn integrate<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, a: f64, b: f64) -> Result<f64> {
        self.integrate_breaks(f, &[a, b])
    }

    /// ∫ over the ascending list of points, with panels seeded at every
    /// interior break so that kinks of the integrand sit on panel edges.
    pub fn integrate_breaks<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, points: &[f64]) -> Result<f64> {
        if points.len() < 2 {
            return Ok(0.0);
        }
        let mut panels: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(64);
        for w in points.windows(2) {
            if w[1] > w[0] {
                let (v, e) = gk15(f, w[0], w[1]);
                panels.push((w[0], w[1], v, e));
            }
        }
        loop {
            let value: f64 = panels.iter().map(|p| p.2).sum();
            let error: f64 = panels.iter().map(|p| p.3).sum();
            let target = self.abs_tol.max(self.rel_tol * value.abs());
            if !value.is_finite() {
                return Err(Error::Numeric(format!("non-finite integrand on [{}, {}]", points[0], points[points.len() - 1])));
            }
            if error <= target {
                return Ok(value);
            }
            if panels.len() >= self.max_panels {
                return Err(Error::Quadrature {
                    value,
                    achieved: error,
                    requested: target,
                });
            }
            let (worst, _) = panels
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p.3 > acc.1 { (i, p.3) } else { acc });
            let (a, b, _, _) = panels[worst];
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                // Panel cannot be split further in double precision.
                panels[worst].3 = 0.0;
                continue;
            }
            let (v1, e1) = gk15(f, a, mid);
            let (v2, e2) = gk15(f, mid, b);
            panels[worst] = (a, mid, v1, e1);
            panels.push((mid, b, v2, e2));
        }
    }

    /// ∫_a^∞ f, mapped through `x = a + scale·t/(1−t)`.
    pub fn integrate_upper<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, a: f64, scale: f64) -> Result<f64> {
        let g = |t: f64| {
            let s = 1.0 - t;
            let x = a + scale * t / s;
            if !x.is_finite() {
                return 0.0;
            }
            let v = f(x) * scale / (s * s);
            if v.is_finite() { v } else { 0.0 }
        };
        self.integrate(&g, 0.0, 1.0)
    }

    /// ∫_{−∞}^b f, mapped through `x = b − scale·t/(1−t)`.
    pub fn integrate_lower<F: Fn(f64) -> f64 + ?Sized>(&self, f: &F, b: f64, scale: f64) -> Result<f64> {
        let g = |t: f64| {
            let s = 1.0 - t;
            let x = b - scale * t / s;
            if !x.is_finite() {
                return 0.0;
            }
            let v = f(x) * scale / (s * s);
            if v.is_finite() { v } else { 0.0 }
        };
        self.integrate(&g, 0.0, 1.0)
    }

    /// ∫ over the whole line. `breaks` (ascending, non-empty) are covered by
    /// finite panels; the two tails hang off the outermost breaks.
    pub fn integrate_line<F: Fn(f64) -> f64 + ?Sized>(
        &self,
        f: &F,
        breaks: &[f64],
        left_scale: f64,
        right_scale: f64,
    ) -> Result<f64> {
        assert!(!breaks.is_empty(), "integrate_line needs at least one break point");
        let lo = breaks[0];
        let hi = breaks[breaks.len() - 1];
        let left = self.integrate_lower(f, lo, left_scale)?;
        let middle = self.integrate_breaks(f, breaks)?;
        let right = self.integrate_upper(f, hi, right_scale)?;
        Ok(left + middle + right)
    }
}

/// Bisection for a root of `f` on `[lo, hi]`; `f(lo)` and `f(hi)` must have
/// opposite signs (or one of them be zero).
pub fn bisect<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, xtol: f64) -> Result<f64> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Solver(format!(
            "no sign change on [{lo}, {hi}]: f(lo) = {flo}, f(hi) = {fhi}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= xtol || mid == lo || mid == hi {
            return Ok(mid);
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Gauss–Legendre nodes and weights on [−1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        nodes[n - 1 - i] = -x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Cached 64-point Gauss–Legendre rule.
pub fn gauss_legendre_64() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_integrates_polynomials_exactly() {
        let (v, e) = gk15(&|x: f64| x.powi(9) + 3.0 * x * x, 0.0, 2.0);
        assert!((v - (102.4 + 8.0)).abs() < 1e-12, "{v}");
        assert!(e < 1e-10);
    }

    #[test]
    fn adaptive_handles_kinks_and_tails() {
        let q = Quad::default();
        let v = q.integrate_breaks(&|x: f64| x.abs(), &[-1.0, 0.0, 2.0]).unwrap();
        assert!((v - 2.5).abs() < 1e-13);
        let v = q.integrate_upper(&|x: f64| (-x).exp(), 0.0, 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let v = q
            .integrate_line(&|x: f64| (-x * x / 2.0).exp(), &[0.0], 1.0, 1.0)
            .unwrap();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-11);
        let v = q.integrate(&|x: f64| x.sqrt(), 0.0, 1.0).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-11);
    }

    #[test]
    fn quadrature_reports_non_convergence() {
        let q = Quad {
            abs_tol: 1e-15,
            rel_tol: 0.0,
            max_panels: 4,
        };
        let err = q.integrate(&|x: f64| (1.0 / x).sin(), 1e-3, 1.0).unwrap_err();
        assert!(matches!(err, Error::Quadrature { .. }));
    }

    #[test]
    fn legendre_rule_matches_moments() {
        let (x, w) = gauss_legendre_64();
        assert_eq!(x.len(), 64);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-13);
        let m: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(62)).sum();
        assert!((m - 2.0 / 63.0).abs() < 1e-13);
    }

    #[test]
    fn bisection_finds_root_and_rejects_bad_bracket() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(matches!(bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12), Err(Error::Solver(_))));
    }
}
