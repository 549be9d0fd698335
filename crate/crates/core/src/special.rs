//! Scalar special functions used across the crate.

use crate::error::{Error, Result};

pub use libm::erfc;

/// Natural log of the gamma function for positive arguments.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Inverse complementary error function on `(0, 2)`.
///
/// The rational approximation is only good to about 1e-10, so two Newton
/// steps against the accurate `erfc` finish the job.
pub fn erfc_inv(y: f64) -> f64 {
    let mut x = statrs::function::erf::erfc_inv(y);
    if !x.is_finite() {
        return x;
    }
    for _ in 0..2 {
        let slope = -std::f64::consts::FRAC_2_SQRT_PI * (-x * x).exp();
        if slope == 0.0 {
            break;
        }
        x -= (erfc(x) - y) / slope;
    }
    x
}

/// Hard cap on the number of series terms before giving up.
pub const HYP1F1_MAX_TERMS: usize = 10_000;
const HYP1F1_REL_TOL: f64 = 1e-12;

/// `ln(1F1(a; b; x)) - x` for `a, b > 0` and `x >= 0`.
///
/// All terms of the series are positive here, so the sum is accumulated in
/// log space and rescaled whenever a term exceeds the running maximum. The
/// `- x` shift keeps the result O(ln x) when the caller multiplies by
/// `e^{-x}` anyway.
pub fn ln_hyp1f1_scaled(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && x >= 0.0) || !x.is_finite() {
        return Err(Error::domain(format!(
            "1F1 series needs a, b > 0 and finite x >= 0 (a={a}, b={b}, x={x})"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    // Running sum is `scale_exp(ln_scale) * acc`.
    let mut ln_scale = 0.0_f64;
    let mut acc = 1.0_f64;
    let mut ln_term = 0.0_f64;
    let ln_x = x.ln();
    for k in 0..HYP1F1_MAX_TERMS {
        let kf = k as f64;
        ln_term += (a + kf).ln() + ln_x - (b + kf).ln() - (kf + 1.0).ln();
        if ln_term > ln_scale {
            acc = acc * (ln_scale - ln_term).exp() + 1.0;
            ln_scale = ln_term;
        } else {
            let rel = (ln_term - ln_scale).exp();
            acc += rel;
            // Term ratio below one and the term negligible: tail is bounded
            // by a geometric series with that ratio.
            let ratio = (a + kf + 1.0) * x / ((b + kf + 1.0) * (kf + 2.0));
            if ratio < 1.0 && rel / (1.0 - ratio) < HYP1F1_REL_TOL * acc {
                return Ok(ln_scale + acc.ln() - x);
            }
        }
    }
    Err(Error::numerical(format!(
        "1F1({a}; {b}; {x}) series did not converge in {HYP1F1_MAX_TERMS} terms"
    )))
}

/// Binary entropy in bits; 0 outside the open unit interval.
pub fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// Binary relative entropy `D(x || p)` in bits.
///
/// Uses `ln_1p` so that `x` close to `p` does not lose precision.
pub fn binary_kl(x: f64, p: f64) -> f64 {
    let term = |u: f64, v: f64| -> f64 {
        if u <= 0.0 {
            0.0
        } else {
            // u ln(u/v) with u/v = 1 + (u-v)/v
            u * ((u - v) / v).ln_1p()
        }
    };
    let d = term(x, p) + term(1.0 - x, 1.0 - p);
    (d / std::f64::consts::LN_2).max(0.0)
}

/// Natural log of `n!`.
pub fn ln_factorial(n: u32) -> f64 {
    ln_gamma(n as f64 + 1.0)
}
