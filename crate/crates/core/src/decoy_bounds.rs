//! Wald-bounded gain estimates and decoy-state yield bounds.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::photon_stats::{
    condition_one_holds, condition_two_holds, GaussianParams, IntensityModel, PhotonTable, DEFAULT_CUTOFF,
};
use crate::special::erfc_inv;

/// Upper `1 - epsilon` quantile of the standard normal distribution.
pub fn normal_quantile(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    Ok(SQRT_2 * erfc_inv(2.0 * epsilon))
}

/// A bound after clamping into `[0, 1]`, keeping the unclamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundValue {
    pub value: f64,
    pub raw: f64,
}

impl BoundValue {
    pub fn clamp_unit(raw: f64) -> Self {
        BoundValue {
            value: raw.clamp(0.0, 1.0),
            raw,
        }
    }

    pub fn clamped(&self) -> bool {
        self.value != self.raw
    }
}

/// Counts behind one gain estimate. Counts are real-valued because the
/// simulation works with expected values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainRecord {
    pub transmitted: f64,
    pub detected: f64,
    pub epsilon: f64,
}

impl GainRecord {
    pub fn new(transmitted: f64, detected: f64, epsilon: f64) -> Result<Self> {
        if !(transmitted.is_finite() && detected.is_finite()) || detected < 0.0 || detected > transmitted {
            return Err(Error::domain(format!(
                "need 0 <= detected <= transmitted, got {detected} of {transmitted}"
            )));
        }
        if !(epsilon > 0.0 && epsilon < 0.5) {
            return Err(Error::domain(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
        }
        Ok(GainRecord {
            transmitted,
            detected,
            epsilon,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainBounds {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub clamped: bool,
}

impl GainBounds {
    /// Degenerate bounds for a gain known exactly.
    pub fn exact(q: f64) -> Self {
        GainBounds {
            estimate: q,
            lower: q,
            upper: q,
            clamped: false,
        }
    }
}

/// Wald interval `Q ± z sqrt(Q(1-Q)/N)` clamped to `[0, 1]`.
pub fn gain_bounds(record: &GainRecord) -> Result<GainBounds> {
    if record.transmitted <= 0.0 {
        return Err(Error::domain("gain bounds need at least one transmitted pulse"));
    }
    let z = normal_quantile(record.epsilon)?;
    let q = record.detected / record.transmitted;
    let w = z * (q * (1.0 - q) / record.transmitted).sqrt();
    let (lo, hi) = (q - w, q + w);
    Ok(GainBounds {
        estimate: q,
        lower: lo.max(0.0),
        upper: hi.min(1.0),
        clamped: lo < 0.0 || hi > 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct YieldBounds {
    pub y0_lower: f64,
    pub y1_lower: f64,
    pub clamped: bool,
}

/// Photon tables for the three intensity settings with both sign
/// conditions checked once over `n in [2, cutoff]`.
#[derive(Debug, Clone)]
pub struct DecoySet {
    pub mu: PhotonTable,
    pub nu1: PhotonTable,
    pub nu2: PhotonTable,
    /// First `n` violating condition one, if any.
    pub condition_one_violation: Option<u32>,
    /// First `n` violating condition two, if any.
    pub condition_two_violation: Option<u32>,
}

impl DecoySet {
    pub fn new(mu: IntensityModel, nu1: IntensityModel, nu2: IntensityModel) -> Result<Self> {
        Self::with_cutoff(mu, nu1, nu2, DEFAULT_CUTOFF)
    }

    pub fn with_cutoff(mu: IntensityModel, nu1: IntensityModel, nu2: IntensityModel, cutoff: u32) -> Result<Self> {
        let mu = PhotonTable::new(mu, cutoff)?;
        let nu1 = PhotonTable::new(nu1, cutoff)?;
        let nu2 = PhotonTable::new(nu2, cutoff)?;
        let condition_one_violation = (2..=cutoff)
            .find(|&n| !condition_one_holds(nu1.p(n), nu1.p(1), nu2.p(n), nu2.p(1)));
        let triple = |t: &PhotonTable, n: u32| [t.p(0), t.p(2), t.p(n)];
        let condition_two_violation = (2..=cutoff)
            .find(|&n| !condition_two_holds(triple(&mu, n), triple(&nu1, n), triple(&nu2, n)));
        Ok(DecoySet {
            mu,
            nu1,
            nu2,
            condition_one_violation,
            condition_two_violation,
        })
    }

    pub fn yield0_lower(&self, qn1: &GainBounds, qn2: &GainBounds) -> Result<BoundValue> {
        if let Some(n) = self.condition_one_violation {
            return Err(Error::invalid_bound(format!(
                "vacuum-yield sign condition fails at n={n} for {:?} / {:?}",
                self.nu1.model, self.nu2.model
            )));
        }
        let (a, b) = (&self.nu1, &self.nu2);
        let den = b.p(0) * a.p(1) - a.p(0) * b.p(1);
        if den <= 0.0 {
            return Err(Error::invalid_bound(format!(
                "vacuum-yield denominator is {den:e}; nu2 must be the weaker decoy"
            )));
        }
        let raw = (qn2.lower * a.p(1) - qn1.upper * b.p(1)) / den;
        Ok(BoundValue {
            value: raw.clamp(0.0, 1.0),
            raw,
        })
    }

    pub fn yield1_lower(
        &self,
        qmu: &GainBounds,
        qn1: &GainBounds,
        qn2: &GainBounds,
        y0_lower: f64,
    ) -> Result<BoundValue> {
        if let Some(n) = self.condition_two_violation {
            return Err(Error::invalid_bound(format!(
                "single-photon sign condition fails at n={n}"
            )));
        }
        let (m, a, b) = (&self.mu, &self.nu1, &self.nu2);
        if m.p(2) <= 0.0 {
            return Err(Error::invalid_bound("signal intensity has no two-photon component"));
        }
        let k = (a.p(2) * b.p(0) - b.p(2) * a.p(0)) / m.p(2);
        let den = b.p(0) * a.p(1) - a.p(0) * b.p(1) - k * m.p(1);
        if !(den > 0.0) {
            return Err(Error::invalid_bound(format!(
                "single-photon yield denominator is {den:e}"
            )));
        }
        let num = qn1.lower * b.p(0) - qn2.upper * a.p(0) - k * (qmu.upper - m.p(0) * y0_lower);
        Ok(BoundValue::clamp_unit(num / den))
    }

    pub fn yield_bounds(&self, qmu: &GainBounds, qn1: &GainBounds, qn2: &GainBounds) -> Result<YieldBounds> {
        let y0 = self.yield0_lower(qn1, qn2)?;
        let y1 = self.yield1_lower(qmu, qn1, qn2, y0.value)?;
        Ok(YieldBounds {
            y0_lower: y0.value,
            y1_lower: y1.value,
            clamped: y0.clamped() || y1.clamped(),
        })
    }
}

/// Lower bound on the vacuum yield from the two decoy gains.
pub fn yield0_lower(
    qn1: &GainBounds,
    qn2: &GainBounds,
    nu1: &IntensityModel,
    nu2: &IntensityModel,
) -> Result<f64> {
    // Condition two involves the signal, which this bound never uses.
    let nu1 = PhotonTable::new(*nu1, DEFAULT_CUTOFF)?;
    let nu2 = PhotonTable::new(*nu2, DEFAULT_CUTOFF)?;
    let set = DecoySet {
        mu: PhotonTable::new(IntensityModel::VacuumOnly, DEFAULT_CUTOFF)?,
        condition_one_violation: (2..=DEFAULT_CUTOFF)
            .find(|&n| !condition_one_holds(nu1.p(n), nu1.p(1), nu2.p(n), nu2.p(1))),
        condition_two_violation: None,
        nu1,
        nu2,
    };
    Ok(set.yield0_lower(qn1, qn2)?.value)
}

/// Lower bound on the single-photon yield for arbitrary photon statistics.
pub fn yield1_lower(
    qmu: &GainBounds,
    qn1: &GainBounds,
    qn2: &GainBounds,
    mu: &IntensityModel,
    nu1: &IntensityModel,
    nu2: &IntensityModel,
    y0_lower: f64,
) -> Result<f64> {
    let set = DecoySet::new(*mu, *nu1, *nu2)?;
    Ok(set.yield1_lower(qmu, qn1, qn2, y0_lower)?.value)
}

/// Vacuum and single-photon yield bounds for constant (Poissonian)
/// intensities.
pub fn poisson_yield_bounds(
    qmu: &GainBounds,
    qn1: &GainBounds,
    qn2: &GainBounds,
    mu: f64,
    nu1: f64,
    nu2: f64,
) -> Result<YieldBounds> {
    if !(nu2 >= 0.0 && nu2 < nu1 && nu1 + nu2 < mu) {
        return Err(Error::domain(format!(
            "Poisson bounds need 0 <= nu2 < nu1 and nu1 + nu2 < mu (mu={mu}, nu1={nu1}, nu2={nu2})"
        )));
    }
    let y0 = BoundValue::clamp_unit(
        ((nu1 * qn2.lower * nu2.exp() - nu2 * qn1.upper * nu1.exp()) / (nu1 - nu2)).max(0.0),
    );
    let y1 = BoundValue::clamp_unit(
        mu / ((nu1 - nu2) * (mu - nu1 - nu2))
            * (qn1.lower * nu1.exp()
                - qn2.upper * nu2.exp()
                - (nu1 * nu1 - nu2 * nu2) / (mu * mu) * (qmu.upper * mu.exp() - y0.value)),
    );
    Ok(YieldBounds {
        y0_lower: y0.value,
        y1_lower: y1.value,
        clamped: y0.clamped() || y1.clamped(),
    })
}

/// Single-photon gain bound of the model-independent comparison method,
/// which replaces each intensity by the interval `mean ± z sigma` and uses
/// worst-case Poisson probabilities over it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WangBound {
    pub q1_lower: BoundValue,
    /// `P(1|mu)` at the lower end of the signal interval.
    pub p1_mu_lower: f64,
}

pub fn wang_q1_lower_z(
    qmu: &GainBounds,
    qn1: &GainBounds,
    qn2: &GainBounds,
    mu: &GaussianParams,
    nu1: &GaussianParams,
    nu2: &GaussianParams,
    z: f64,
) -> Result<WangBound> {
    for p in [mu, nu1, nu2] {
        p.validate()?;
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::domain(format!("z must be finite and >= 0, got {z}")));
    }
    let (mu_l, mu_u) = (mu.mean - z * mu.sigma, mu.mean + z * mu.sigma);
    let (n1_l, n1_u) = (nu1.mean - z * nu1.sigma, nu1.mean + z * nu1.sigma);
    let n2_u = nu2.mean + z * nu2.sigma;
    if mu_l <= 0.0 || n1_l <= 0.0 {
        return Err(Error::invalid_bound(format!(
            "intensity interval reaches zero (mu lower {mu_l}, nu1 lower {n1_l})"
        )));
    }
    let p1 = |a: f64| a * (-a).exp();
    let p2 = |a: f64| 0.5 * a * a * (-a).exp();

    let p1_mu_l = p1(mu_l);
    let p2_mu_l = p2(mu_l);
    let p0_mu_l = (-mu_u).exp();
    let p1_n1_u = p1(n1_u);
    let p2_n1_u = p2(n1_u);
    let p0_n1_u = (-n1_l).exp();
    let p0_n2_l = (-n2_u).exp();

    let den = p2_mu_l * p1_n1_u - p2_n1_u * p1_mu_l;
    if !(den > 0.0) {
        return Err(Error::invalid_bound(format!("comparison-method denominator is {den:e}")));
    }
    let num = qn1.lower * p2_mu_l
        - qmu.upper * p2_n1_u
        - (p2_mu_l * p0_n1_u - p2_n1_u * p0_mu_l) * qn2.upper / p0_n2_l;
    let raw = p1_mu_l * num / den;
    Ok(WangBound {
        q1_lower: BoundValue {
            value: raw.clamp(0.0, 1.0),
            raw,
        },
        p1_mu_lower: p1_mu_l,
    })
}

/// As [`wang_q1_lower_z`] with `z` taken from a failure probability.
pub fn wang_q1_lower(
    qmu: &GainBounds,
    qn1: &GainBounds,
    qn2: &GainBounds,
    mu: &GaussianParams,
    nu1: &GaussianParams,
    nu2: &GaussianParams,
    epsilon: f64,
) -> Result<f64> {
    let z = normal_quantile(epsilon)?;
    Ok(wang_q1_lower_z(qmu, qn1, qn2, mu, nu1, nu2, z)?.q1_lower.value)
}
