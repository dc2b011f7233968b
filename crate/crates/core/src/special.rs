//! Gamma-family special functions.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Euler–Mascheroni constant γ.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Digamma ψ(x) = Γ'(x)/Γ(x) for x > 0.
///
/// Shifts the argument above 6 with ψ(x+1) = ψ(x) + 1/x, then sums the
/// asymptotic expansion in 1/x².
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("digamma requires x > 0, got {x}")));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 6.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv2 = 1.0 / (x * x);
    // Bernoulli terms B_2k / (2k), k = 1..7
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2
                                * (1.0 / 240.0
                                    - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0 - inv2 / 12.0))))));
    Ok(shift + x.ln() - 0.5 / x - series)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("ln_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma_unchecked(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn gamma(x: f64) -> Result<f64> {
    Ok(ln_gamma(x)?.exp())
}

/// Regularized upper incomplete gamma Q(s, x) = Γ(s, x)/Γ(s).
pub fn gamma_q(s: f64, x: f64) -> Result<f64> {
    if !(s > 0.0) || x < 0.0 || !x.is_finite() {
        return Err(Error::Domain(format!("gamma_q requires s > 0, x ≥ 0; got s = {s}, x = {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let log_prefactor = s * x.ln() - x - ln_gamma_unchecked(s);
    if x < s + 1.0 {
        // Series for P(s, x).
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut a = s;
        for _ in 0..10_000 {
            a += 1.0;
            term *= x / a;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        Ok((1.0 - sum * log_prefactor.exp()).clamp(0.0, 1.0))
    } else {
        // Lentz continued fraction for Q(s, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - s;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        Ok((log_prefactor.exp() * h).clamp(0.0, 1.0))
    }
}
