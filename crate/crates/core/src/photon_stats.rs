//! Photon-number statistics of phase-randomized coherent sources, with and
//! without Gaussian fluctuations of the mean photon number.

use std::f64::consts::{LN_2, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};
use crate::special::{erfc, ln_factorial, ln_gamma, ln_hyp1f1_scaled};

/// Photon-number cutoff used for every sum over n.
pub const DEFAULT_CUTOFF: u32 = 60;

/// Half-width of the integration window, in units of sigma around the
/// integrand peak.
const QUAD_HALF_WIDTH: f64 = 12.0;

/// Below this fraction the two closed-form terms cancel too much to trust.
const CANCELLATION_LIMIT: f64 = 1e-4;

/// Mean and spread of a (pre-truncation) Gaussian intensity distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mean: f64,
    pub sigma: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, sigma: f64) -> Result<Self> {
        let p = GaussianParams { mean, sigma };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean.is_finite() && self.mean >= 0.0) {
            return Err(Error::domain(format!(
                "intensity mean must be finite and >= 0, got {}",
                self.mean
            )));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::domain(format!(
                "intensity sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Probability mass of the Gaussian on `[0, inf)`.
    pub fn truncation_mass(&self) -> f64 {
        if self.sigma == 0.0 {
            return 1.0;
        }
        0.5 * erfc(-self.mean / (SQRT_2 * self.sigma))
    }
}

/// Photon-number statistics of one intensity setting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum IntensityModel {
    Poissonian { mean: f64 },
    GaussianMixed(GaussianParams),
    VacuumOnly,
}

impl IntensityModel {
    pub fn poissonian(mean: f64) -> Result<Self> {
        let m = IntensityModel::Poissonian { mean };
        m.validate()?;
        Ok(m)
    }

    pub fn gaussian(mean: f64, sigma: f64) -> Result<Self> {
        Ok(IntensityModel::GaussianMixed(GaussianParams::new(mean, sigma)?))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IntensityModel::Poissonian { mean } => {
                if mean.is_finite() && *mean >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain(format!(
                        "Poisson mean must be finite and >= 0, got {mean}"
                    )))
                }
            }
            IntensityModel::GaussianMixed(p) => p.validate(),
            IntensityModel::VacuumOnly => Ok(()),
        }
    }

    /// Nominal mean photon number (the pre-truncation mean for Gaussian).
    pub fn mean(&self) -> f64 {
        match self {
            IntensityModel::Poissonian { mean } => *mean,
            IntensityModel::GaussianMixed(p) => p.mean,
            IntensityModel::VacuumOnly => 0.0,
        }
    }
}

/// Normal density with the given mean and standard deviation.
pub fn gaussian_pdf(x: f64, params: &GaussianParams) -> Result<f64> {
    params.validate()?;
    if params.sigma == 0.0 {
        return Err(Error::domain(
            "gaussian_pdf needs sigma > 0; use a Poissonian model for a fixed intensity",
        ));
    }
    let u = (x - params.mean) / params.sigma;
    Ok((-0.5 * u * u).exp() / ((2.0 * PI).sqrt() * params.sigma))
}

fn poisson_prob(n: u32, mean: f64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-mean + n as f64 * mean.ln() - ln_factorial(n)).exp()
}

/// Probability of emitting `n` photons.
///
/// Above this value of `(mean - sigma^2)^2 / (2 sigma^2)` the series loses
/// more than about 1e-12 relative accuracy and quadrature is used instead.
pub const CLOSED_FORM_MAX_ARG: f64 = 500.0;

/// Gaussian-mixed models use the closed form and fall back to quadrature
/// when the hypergeometric argument is large, the series is too long or
/// the two terms cancel.
pub fn photon_number_prob(n: u32, model: &IntensityModel) -> Result<f64> {
    model.validate()?;
    match model {
        IntensityModel::Poissonian { mean } => Ok(poisson_prob(n, *mean)),
        IntensityModel::VacuumOnly => Ok(if n == 0 { 1.0 } else { 0.0 }),
        IntensityModel::GaussianMixed(p) => {
            if p.sigma == 0.0 {
                return Ok(poisson_prob(n, p.mean));
            }
            let shifted = p.mean - p.sigma * p.sigma;
            if shifted * shifted / (2.0 * p.sigma * p.sigma) > CLOSED_FORM_MAX_ARG {
                return mixed_prob_quadrature(n, p);
            }
            match mixed_prob_closed_form(n, p) {
                Ok(v) => Ok(v),
                Err(Error::Numerical(msg)) => {
                    log::debug!("closed form unavailable for n={n}, {p:?}: {msg}");
                    mixed_prob_quadrature(n, p)
                }
                Err(e) => Err(e),
            }
        }
    }
}

/// Closed form of the truncated-Gaussian Poisson mixture in terms of the
/// gamma function and Kummer's function 1F1.
///
/// Returns `Error::Numerical` when the series needs too many terms or the
/// result is dominated by cancellation; callers then use quadrature.
pub fn mixed_prob_closed_form(n: u32, params: &GaussianParams) -> Result<f64> {
    params.validate()?;
    let (m, s) = (params.mean, params.sigma);
    if s == 0.0 {
        return Err(Error::domain("closed form needs sigma > 0"));
    }
    let nf = n as f64;
    let shifted = m - s * s;
    let x = shifted * shifted / (2.0 * s * s);

    let ln_t1 = s.ln() + ln_gamma((nf + 1.0) / 2.0) + ln_hyp1f1_scaled((nf + 1.0) / 2.0, 0.5, x)?;
    let ln_t2 = if shifted == 0.0 {
        f64::NEG_INFINITY
    } else {
        (SQRT_2 * shifted.abs()).ln()
            + ln_gamma((nf + 2.0) / 2.0)
            + ln_hyp1f1_scaled((nf + 2.0) / 2.0, 1.5, x)?
    };
    let ln_max = ln_t1.max(ln_t2);
    let t1 = (ln_t1 - ln_max).exp();
    let t2 = shifted.signum() * (ln_t2 - ln_max).exp();
    let bracket = t1 + t2;
    if bracket <= CANCELLATION_LIMIT * (t1.abs() + t2.abs()) {
        return Err(Error::numerical(format!(
            "closed form cancels for n={n}, mean={m}, sigma={s}"
        )));
    }

    // -m^2/(2 s^2) + x simplifies to -m + s^2/2.
    let ln_pref = (nf + 1.0) / 2.0 * LN_2 + (-m + 0.5 * s * s) + (nf - 1.0) * s.ln()
        - 0.5 * (2.0 * PI).ln()
        - ln_factorial(n)
        - (2.0 * params.truncation_mass()).ln();
    let p = (ln_pref + ln_max + bracket.ln()).exp();
    if !p.is_finite() {
        return Err(Error::numerical(format!("closed form overflowed for n={n}")));
    }
    Ok(p.min(1.0))
}

/// Direct adaptive quadrature of the Poisson probability weighted by the
/// Gaussian restricted to non-negative intensities.
pub fn mixed_prob_quadrature(n: u32, params: &GaussianParams) -> Result<f64> {
    params.validate()?;
    let (m, s) = (params.mean, params.sigma);
    if s == 0.0 {
        return Err(Error::domain("quadrature needs sigma > 0"));
    }
    let nf = n as f64;
    let ln_norm = ln_factorial(n) + ((2.0 * PI).sqrt() * s).ln();
    let integrand = |a: f64| -> f64 {
        let d = (a - m) / s;
        let ln_pow = if n == 0 {
            0.0
        } else if a <= 0.0 {
            return 0.0;
        } else {
            nf * a.ln()
        };
        (-a + ln_pow - 0.5 * d * d - ln_norm).exp()
    };
    // The log-integrand is concave with curvature at least 1/s^2, so a
    // window around its maximum captures everything that matters.
    let shifted = m - s * s;
    let peak = (0.5 * shifted + (0.25 * shifted * shifted + nf * s * s).sqrt()).max(0.0);
    let lo = (peak - QUAD_HALF_WIDTH * s).max(0.0);
    let hi = peak + QUAD_HALF_WIDTH * s;
    let points: Vec<f64> = if peak > lo { vec![lo, peak, hi] } else { vec![lo, hi] };
    let r = quad::integrate_pieces(integrand, &points, Tolerance::default())?;
    Ok((r.value / params.truncation_mass()).clamp(0.0, 1.0))
}

/// Probabilities `P(0..=cutoff)` of one intensity model.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTable {
    pub model: IntensityModel,
    probs: Vec<f64>,
}

impl PhotonTable {
    pub fn new(model: IntensityModel, cutoff: u32) -> Result<Self> {
        let probs = (0..=cutoff)
            .map(|n| photon_number_prob(n, &model))
            .collect::<Result<Vec<_>>>()?;
        Ok(PhotonTable { model, probs })
    }

    pub fn cutoff(&self) -> u32 {
        (self.probs.len() - 1) as u32
    }

    /// `P(n)`; zero beyond the cutoff.
    pub fn p(&self, n: u32) -> f64 {
        self.probs.get(n as usize).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

// Differences of products that vanish analytically are compared against
// the rounding noise of their terms.
fn tolerance_for(terms: &[f64]) -> f64 {
    8.0 * f64::EPSILON * terms.iter().map(|t| t.abs()).sum::<f64>()
}

fn require_multi_photon(n: u32) -> Result<()> {
    if n < 2 {
        return Err(Error::domain(format!("condition checks need n >= 2, got {n}")));
    }
    Ok(())
}

/// Sign condition that licenses dropping the multi-photon terms in the
/// vacuum-yield bound: `P(n|nu2) P(1|nu1) - P(n|nu1) P(1|nu2) <= 0`.
pub fn check_condition_one(n: u32, nu1: &IntensityModel, nu2: &IntensityModel) -> Result<bool> {
    require_multi_photon(n)?;
    let p = |k: u32, m: &IntensityModel| photon_number_prob(k, m);
    Ok(condition_one_holds(p(n, nu1)?, p(1, nu1)?, p(n, nu2)?, p(1, nu2)?))
}

pub(crate) fn condition_one_holds(pn_nu1: f64, p1_nu1: f64, pn_nu2: f64, p1_nu2: f64) -> bool {
    let a = pn_nu2 * p1_nu1;
    let b = pn_nu1 * p1_nu2;
    a - b <= tolerance_for(&[a, b])
}

/// Sign condition behind the single-photon yield bound.
pub fn check_condition_two(
    n: u32,
    mu: &IntensityModel,
    nu1: &IntensityModel,
    nu2: &IntensityModel,
) -> Result<bool> {
    require_multi_photon(n)?;
    let p = |m: &IntensityModel| -> Result<[f64; 3]> {
        Ok([photon_number_prob(0, m)?, photon_number_prob(2, m)?, photon_number_prob(n, m)?])
    };
    Ok(condition_two_holds(p(mu)?, p(nu1)?, p(nu2)?))
}

/// Each argument holds `[P(0), P(2), P(n)]` of one intensity setting.
pub(crate) fn condition_two_holds(mu: [f64; 3], nu1: [f64; 3], nu2: [f64; 3]) -> bool {
    let t1 = mu[2] * nu1[1] * nu2[0];
    let t2 = mu[2] * nu2[1] * nu1[0];
    let t3 = mu[1] * nu1[2] * nu2[0];
    let t4 = mu[1] * nu2[2] * nu1[0];
    t1 - t2 - t3 + t4 >= -tolerance_for(&[t1, t2, t3, t4])
}
