//! Regularized incomplete beta function `I_x(a, b)`.

use crate::error::{Error, Result};

const MAX_ITER: usize = 20_000;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Regularized incomplete beta function `I_x(a, b)` for `x` in `[0, 1]` and `a, b > 0`.
///
/// Uses the continued-fraction expansion evaluated with the modified Lentz method,
/// switching to `1 - I_{1-x}(b, a)` past the mean so the fraction converges quickly.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && a.is_finite()) || !(b > 0.0 && b.is_finite()) {
        return Err(Error::DomainError(format!("shape parameters must be positive, got a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::DomainError(format!("x must lie in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if x < (a + 1.0) / (a + b + 2.0) {
        continued_fraction(x, a, b)
    } else {
        Ok(1.0 - continued_fraction(1.0 - x, b, a)?)
    }
}

fn continued_fraction(x: f64, a: f64, b: f64) -> Result<f64> {
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    let front = ln_front.exp() / a;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        // even step
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        // odd step
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok((front * h).clamp(0.0, 1.0));
        }
    }
    Err(Error::DomainError(format!(
        "incomplete beta continued fraction did not converge for x={x}, a={a}, b={b}"
    )))
}
