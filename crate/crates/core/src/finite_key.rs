//! Finite-key secret key length: channel simulation, count bookkeeping,
//! statistical bounds, phase-error corrections and distance sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::decoy_bounds::{
    gain_bounds, normal_quantile, poisson_yield_bounds, wang_q1_lower_z, DecoySet, GainBounds, GainRecord,
};
use crate::error::{Error, Result};
use crate::photon_stats::{photon_number_prob, GaussianParams, IntensityModel};
use crate::polarization::{source_delta, AngularDistribution};
use crate::special::{binary_kl, h2};

/// Error-correction inefficiency as a function of QBER, interpolated
/// linearly between table points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FecTable {
    points: Vec<(f64, f64)>,
}

impl FecTable {
    pub fn new(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::domain("error-correction table is empty"));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (q, f) in &points {
            if !(0.0..=0.5).contains(q) || !(f.is_finite() && *f >= 1.0) {
                return Err(Error::domain(format!(
                    "error-correction table point ({q}, {f}) needs qber in [0, 1/2] and f >= 1"
                )));
            }
        }
        if points.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("error-correction table has duplicate qber values"));
        }
        Ok(FecTable { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Returns `f(qber)` and whether `qber` lay outside the table.
    pub fn eval(&self, qber: f64) -> (f64, bool) {
        let first = self.points[0];
        let last = self.points[self.points.len() - 1];
        if qber <= first.0 {
            return (first.1, qber < first.0);
        }
        if qber >= last.0 {
            return (last.1, qber > last.0);
        }
        let k = self.points.partition_point(|p| p.0 <= qber);
        let (a, b) = (self.points[k - 1], self.points[k]);
        (a.1 + (b.1 - a.1) * (qber - a.0) / (b.0 - a.0), false)
    }
}

impl Default for FecTable {
    fn default() -> Self {
        FecTable {
            points: vec![(0.005, 1.60), (0.01, 1.45), (0.02, 1.35), (0.04, 1.25), (0.08, 1.18)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProtocolConfig {
    pub p_x: f64,
    pub p_y: f64,
    pub p_mu: f64,
    pub p_nu1: f64,
    pub p_nu2: f64,
    pub sift_len_x: f64,
    pub hash_len: f64,
    pub eps_decoy: f64,
    pub eps_pa: f64,
    /// Reported in the total security parameter only.
    pub eps_ver: f64,
    pub bound_count: u32,
    pub f_ec: FecTable,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            p_x: 0.9,
            p_y: 0.1,
            p_mu: 0.5,
            p_nu1: 0.25,
            p_nu2: 0.25,
            sift_len_x: 1.36e6,
            hash_len: 50.0,
            eps_decoy: 1e-12,
            eps_pa: 1e-12,
            eps_ver: 2f64.powi(-50),
            bound_count: 14,
            f_ec: FecTable::default(),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(name, format!("must lie in [0, 1], got {p}")))
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("p_x", self.p_x),
            ("p_y", self.p_y),
            ("p_mu", self.p_mu),
            ("p_nu1", self.p_nu1),
            ("p_nu2", self.p_nu2),
        ] {
            check_prob(k, v)?;
        }
        if (self.p_x + self.p_y - 1.0).abs() > 1e-12 {
            return Err(Error::config("p_y", "basis probabilities must sum to 1"));
        }
        if (self.p_mu + self.p_nu1 + self.p_nu2 - 1.0).abs() > 1e-12 {
            return Err(Error::config("p_nu2", "intensity probabilities must sum to 1"));
        }
        if self.p_x <= 0.0 || self.p_y <= 0.0 || self.p_mu <= 0.0 {
            return Err(Error::config("p_x", "basis and signal probabilities must be positive"));
        }
        if !(self.sift_len_x.is_finite() && self.sift_len_x > 0.0) {
            return Err(Error::config("sift_len_x", "must be positive"));
        }
        if !(self.hash_len.is_finite() && self.hash_len >= 0.0) {
            return Err(Error::config("hash_len", "must be non-negative"));
        }
        for (k, v) in [("eps_decoy", self.eps_decoy), ("eps_pa", self.eps_pa), ("eps_ver", self.eps_ver)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(k, format!("must lie in (0, 1), got {v}")));
            }
        }
        if self.bound_count == 0 {
            return Err(Error::config("bound_count", "must be positive"));
        }
        Ok(())
    }

    /// Failure probability assigned to each statistical bound.
    pub fn per_bound_epsilon(&self) -> f64 {
        self.eps_decoy / self.bound_count as f64
    }

    pub fn eps_total(&self) -> f64 {
        self.eps_decoy + self.eps_ver + self.eps_pa
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelModel {
    pub eta: f64,
    pub p_dc: f64,
    pub beta_db_per_km: f64,
    pub bob_loss_db: f64,
    pub p_opt: f64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            eta: 0.10,
            p_dc: 1e-6,
            beta_db_per_km: 0.2,
            bob_loss_db: 3.0,
            p_opt: 0.01,
        }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<()> {
        check_prob("eta", self.eta)?;
        check_prob("p_dc", self.p_dc)?;
        check_prob("p_opt", self.p_opt)?;
        if !(self.beta_db_per_km.is_finite() && self.beta_db_per_km >= 0.0) {
            return Err(Error::config("beta_db_per_km", "must be non-negative"));
        }
        if !(self.bob_loss_db.is_finite() && self.bob_loss_db >= 0.0) {
            return Err(Error::config("bob_loss_db", "must be non-negative"));
        }
        Ok(())
    }

    pub fn transmittance(&self, distance_km: f64) -> f64 {
        10f64.powf(-(self.beta_db_per_km * distance_km + self.bob_loss_db) / 10.0)
    }
}

/// Expected gain and QBER of a pulse with mean photon number `alpha`.
pub fn channel_gain_qber(alpha_mean: f64, distance_km: f64, ch: &ChannelModel) -> Result<(f64, f64)> {
    if !(distance_km.is_finite() && distance_km >= 0.0) {
        return Err(Error::domain(format!("distance must be finite and >= 0, got {distance_km}")));
    }
    if !(alpha_mean.is_finite() && alpha_mean >= 0.0) {
        return Err(Error::domain(format!("intensity must be finite and >= 0, got {alpha_mean}")));
    }
    let click = -(-ch.transmittance(distance_km) * ch.eta * alpha_mean).exp_m1();
    let q = 2.0 * ch.p_dc + click;
    if q <= 0.0 {
        return Ok((0.0, 0.5));
    }
    let e = (ch.p_dc + ch.p_opt * click) / q;
    Ok((q, e.min(0.5)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseCounts {
    /// Pulses sent per intensity `[mu, nu1, nu2]` in the X basis.
    pub n_x: [f64; 3],
    pub n_y: [f64; 3],
    pub sift_len_y: f64,
    pub ver_len_x: f64,
}

pub fn pulse_counts(cfg: &ProtocolConfig, q_mu_x: f64) -> Result<PulseCounts> {
    if !(q_mu_x > 0.0) {
        return Err(Error::domain(format!("signal gain must be positive, got {q_mu_x}")));
    }
    let n_mu_x = cfg.sift_len_x / (cfg.p_x * q_mu_x);
    let n_x = [n_mu_x, n_mu_x * cfg.p_nu1 / cfg.p_mu, n_mu_x * cfg.p_nu2 / cfg.p_mu];
    let n_y = n_x.map(|n| n * cfg.p_y / cfg.p_x);
    Ok(PulseCounts {
        n_x,
        n_y,
        sift_len_y: cfg.sift_len_x * (cfg.p_y / cfg.p_x).powi(2),
        ver_len_x: cfg.sift_len_x,
    })
}

/// Lower bound on single-photon detections among `l_ver` signal detections.
pub fn single_photon_bits_lower(l_ver: f64, q1_lower: f64, q_mu_upper: f64, epsilon: f64) -> Result<f64> {
    if !(q_mu_upper > 0.0) || q1_lower < 0.0 {
        return Err(Error::domain(format!(
            "need q1 >= 0 and q_mu > 0, got {q1_lower} and {q_mu_upper}"
        )));
    }
    let r = q1_lower / q_mu_upper;
    if r > 1.0 {
        return Err(Error::domain(format!("single-photon fraction {r} exceeds 1")));
    }
    let z = normal_quantile(epsilon)?;
    let v = l_ver * r;
    Ok((v - z * (v * (1.0 - r)).sqrt()).max(0.0))
}

/// Lower bound on vacuum contributions to the Y-basis sifted key.
pub fn vacuum_error_bits_lower(
    n_mu_y: f64,
    cfg: &ProtocolConfig,
    p0_mu: f64,
    y0_lower: f64,
    epsilon: f64,
) -> Result<f64> {
    let z = normal_quantile(epsilon)?;
    let x = cfg.p_y * p0_mu * y0_lower / 2.0;
    let mean = n_mu_y * x;
    Ok((mean - z * (mean * (1.0 - x)).sqrt()).max(0.0))
}

/// Upper bound on the single-photon bit error rate in the Y basis.
pub fn single_photon_bit_error_upper(sift_len_y: f64, qber_y: f64, m0_lower: f64, m1_y_lower: f64) -> Result<f64> {
    if !(m1_y_lower > 0.0) {
        return Err(Error::invalid_bound(format!(
            "single-photon count bound in Y is {m1_y_lower}; no key can be certified"
        )));
    }
    Ok(((sift_len_y * qber_y - m0_lower) / m1_y_lower).clamp(0.0, 0.5))
}

/// Phase-error penalty of a basis-dependent source.
pub fn coin_correction(e1_y_upper: f64, delta_prime: f64) -> Result<f64> {
    if !(0.0..=0.5).contains(&delta_prime) || !(0.0..=0.5).contains(&e1_y_upper) {
        return Err(Error::domain(format!(
            "coin correction needs delta' and E in [0, 1/2], got {delta_prime} and {e1_y_upper}"
        )));
    }
    let (d, e) = (delta_prime, e1_y_upper);
    let t = 4.0 * d * (1.0 - d) * (1.0 - 2.0 * e) + 4.0 * (1.0 - 2.0 * d) * (d * (1.0 - d) * e * (1.0 - e)).sqrt();
    Ok(t.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StatisticalCorrection {
    pub theta: f64,
    /// Error rate actually used, after the zero-rate floor.
    pub e1_tilde: f64,
    /// `|lhs / epsilon - 1|` at the returned root.
    pub relative_residual: f64,
}

struct StatEquation {
    e: f64,
    s: f64,
    a: f64,
    log_prefactor: f64,
    log_eps: f64,
}

impl StatEquation {
    /// `xi(theta)` in bits, written as a mixture of relative entropies so
    /// that tiny values do not cancel.
    fn xi(&self, theta: f64) -> f64 {
        let p = self.e + self.a * theta;
        (1.0 - self.a) * binary_kl(self.e, p) + self.a * binary_kl(self.e + theta, p)
    }

    /// `log2(lhs) - log2(epsilon)`; decreasing in theta.
    fn log_gap(&self, theta: f64) -> f64 {
        self.log_prefactor - self.s * self.xi(theta) - self.log_eps
    }
}

/// Sampling-correction term for estimating the X-basis phase error rate
/// from the Y-basis bit error rate, solved by bisection.
pub fn statistical_correction(
    e1_tilde: f64,
    m1_y_lower: f64,
    m1_x_lower: f64,
    epsilon: f64,
) -> Result<StatisticalCorrection> {
    if !(m1_y_lower > 0.0 && m1_x_lower > 0.0) {
        return Err(Error::invalid_bound(format!(
            "statistical correction needs positive single-photon counts, got {m1_y_lower} and {m1_x_lower}"
        )));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::domain(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let e = if e1_tilde <= 0.0 { 0.5 / m1_y_lower } else { e1_tilde };
    if !(e < 0.5) {
        return Err(Error::domain(format!("error rate {e} leaves no room for a correction")));
    }
    let s = m1_y_lower + m1_x_lower;
    let eq = StatEquation {
        e,
        s,
        a: m1_x_lower / s,
        log_prefactor: 0.5 * (s / (e * (1.0 - e) * m1_y_lower * m1_x_lower)).log2(),
        log_eps: epsilon.log2(),
    };
    let (mut lo, mut hi) = (1e-12, 1.0 - e - 1e-12);
    let (f_lo, f_hi) = (eq.log_gap(lo), eq.log_gap(hi));
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::numerical(format!(
            "statistical correction has no sign change on the bracket ({f_lo:e}, {f_hi:e})"
        )));
    }
    let mut prev = f_lo;
    for k in 1..=64 {
        let v = eq.log_gap(lo + (hi - lo) * k as f64 / 64.0);
        if v > prev + 1e-9 * prev.abs().max(1.0) {
            return Err(Error::numerical("statistical-correction equation is not monotone"));
        }
        prev = v;
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eq.log_gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = if eq.log_gap(lo).abs() <= eq.log_gap(hi).abs() { lo } else { hi };
    Ok(StatisticalCorrection {
        theta,
        e1_tilde: e,
        relative_residual: statistical_residual(theta, e, m1_y_lower, m1_x_lower, epsilon),
    })
}

/// `|sqrt(S / (E(1-E) m_y m_x)) 2^{-S xi(theta)} / epsilon - 1|`.
pub fn statistical_residual(theta: f64, e1_tilde: f64, m1_y: f64, m1_x: f64, epsilon: f64) -> f64 {
    let s = m1_y + m1_x;
    let eq = StatEquation {
        e: e1_tilde,
        s,
        a: m1_x / s,
        log_prefactor: 0.5 * (s / (e1_tilde * (1.0 - e1_tilde) * m1_y * m1_x)).log2(),
        log_eps: epsilon.log2(),
    };
    (eq.log_gap(theta).exp2() - 1.0).abs()
}

/// Direct textbook form of the statistical-correction function, exposed
/// for cross-checks.
pub fn xi_direct(theta: f64, e1_tilde: f64, a: f64) -> f64 {
    h2(e1_tilde + a * theta) - (1.0 - a) * h2(e1_tilde) - a * h2(e1_tilde + theta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeakEstimate {
    pub bits: f64,
    pub f_ec: f64,
    /// QBER lay outside the table and the nearest endpoint was used.
    pub clamped: bool,
}

pub fn leak_estimate(sift_len: f64, qber: f64, cfg: &ProtocolConfig) -> Result<LeakEstimate> {
    if !(0.0..=0.5).contains(&qber) {
        return Err(Error::domain(format!("qber must lie in [0, 1/2], got {qber}")));
    }
    let (f, clamped) = cfg.f_ec.eval(qber);
    if clamped {
        log::debug!("qber {qber} outside the error-correction table; using f = {f}");
    }
    Ok(LeakEstimate {
        bits: sift_len * f * h2(qber) + cfg.hash_len,
        f_ec: f,
        clamped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Intensities {
    pub mu: GaussianParams,
    pub nu1: GaussianParams,
    pub nu2: GaussianParams,
}

impl Intensities {
    /// Constant intensities with no spread.
    pub fn constant(mu: f64, nu1: f64, nu2: f64) -> Result<Self> {
        Ok(Intensities {
            mu: GaussianParams::new(mu, 0.0)?,
            nu1: GaussianParams::new(nu1, 0.0)?,
            nu2: GaussianParams::new(nu2, 0.0)?,
        })
    }
}

impl Default for Intensities {
    fn default() -> Self {
        Intensities::constant(0.3, 0.1, 1e-3).expect("valid defaults")
    }
}

/// How photon statistics enter the decoy bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioMode {
    /// Constant intensities, classic closed-form bounds.
    Poissonian,
    /// Truncated-Gaussian intensity fluctuations, generalized bounds.
    GaussianMixed,
    /// As `GaussianMixed` but with the weakest decoy treated as vacuum.
    VacuumNu2,
    /// Model-independent comparison method with intensity intervals
    /// `mean ± z sigma`.
    Wang { z: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolarizationSource {
    FixedDelta { delta: f64 },
    Distribution(AngularDistribution),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub intensities: Intensities,
    pub mode: ScenarioMode,
    pub polarization: PolarizationSource,
    pub protocol: ProtocolConfig,
    pub channel: ChannelModel,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            intensities: Intensities::default(),
            mode: ScenarioMode::Poissonian,
            polarization: PolarizationSource::FixedDelta { delta: 0.0 },
            protocol: ProtocolConfig::default(),
            channel: ChannelModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BasisDetail {
    /// Gain bounds for `[mu, nu1, nu2]`.
    pub gains: [GainBounds; 3],
    pub y0_lower: f64,
    pub y1_lower: f64,
    pub q1_lower: f64,
    /// Unclamped single-photon gain bound.
    pub q1_lower_raw: f64,
    pub m1_lower: f64,
}

/// Every intermediate quantity of one key-length evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyDetail {
    pub gain_mu: f64,
    pub qber_mu: f64,
    pub counts: PulseCounts,
    pub x: BasisDetail,
    pub y: BasisDetail,
    pub m0_y_lower: f64,
    pub e1_y_upper: f64,
    pub delta: f64,
    pub delta_prime: f64,
    pub theta_coin: f64,
    pub e1_tilde: f64,
    pub theta_stat: f64,
    pub stat_residual: f64,
    pub e_ph_x_upper: f64,
    pub leak: LeakEstimate,
    pub l_sec_raw: f64,
    pub bounds_used: u32,
    pub any_clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KeyLengthReport {
    pub distance_km: f64,
    pub l_ver: f64,
    pub l_sec: f64,
    pub ratio: f64,
    pub detail: Option<KeyDetail>,
    #[serde(serialize_with = "error_as_text")]
    pub error: Option<Error>,
}

fn error_as_text<S: serde::Serializer>(e: &Option<Error>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match e {
        Some(e) => s.serialize_some(&e.to_string()),
        None => s.serialize_none(),
    }
}

/// Counts statistical bounds as they are consumed.
struct EpsilonBudget {
    per_bound: f64,
    used: u32,
}

impl EpsilonBudget {
    fn take(&mut self, n: u32) -> f64 {
        self.used += n;
        self.per_bound
    }
}

/// Scenario-wide data that does not depend on distance.
#[derive(Debug, Clone)]
pub struct PreparedScenario {
    pub scenario: Scenario,
    decoys: Option<DecoySet>,
    p0_mu: f64,
    p1_mu: f64,
    /// Coin imbalance of the source.
    pub delta: f64,
}

impl PreparedScenario {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.protocol.validate()?;
        scenario.channel.validate()?;
        let it = &scenario.intensities;
        for p in [it.mu, it.nu1, it.nu2] {
            p.validate()?;
        }
        let gm = |p: GaussianParams| IntensityModel::GaussianMixed(p);
        let (decoys, mu_model) = match scenario.mode {
            ScenarioMode::Poissonian => (None, IntensityModel::poissonian(it.mu.mean)?),
            ScenarioMode::GaussianMixed => (Some(DecoySet::new(gm(it.mu), gm(it.nu1), gm(it.nu2))?), gm(it.mu)),
            ScenarioMode::VacuumNu2 => (
                Some(DecoySet::new(gm(it.mu), gm(it.nu1), IntensityModel::VacuumOnly)?),
                gm(it.mu),
            ),
            ScenarioMode::Wang { z } => {
                if !(z.is_finite() && z >= 0.0) {
                    return Err(Error::config("mode.z", format!("must be finite and >= 0, got {z}")));
                }
                (None, gm(it.mu))
            }
        };
        let delta = match &scenario.polarization {
            PolarizationSource::FixedDelta { delta } => {
                if !(0.0..=0.5).contains(delta) {
                    return Err(Error::config("polarization.delta", format!("must lie in [0, 1/2], got {delta}")));
                }
                *delta
            }
            PolarizationSource::Distribution(dist) => source_delta(dist)?,
        };
        Ok(PreparedScenario {
            scenario: scenario.clone(),
            decoys,
            p0_mu: photon_number_prob(0, &mu_model)?,
            p1_mu: photon_number_prob(1, &mu_model)?,
            delta,
        })
    }

    fn basis_yields(&self, gains: &[GainBounds; 3]) -> Result<(f64, f64, f64, f64)> {
        let it = &self.scenario.intensities;
        let [qm, q1, q2] = gains;
        match self.scenario.mode {
            ScenarioMode::Poissonian => {
                let y = poisson_yield_bounds(qm, q1, q2, it.mu.mean, it.nu1.mean, it.nu2.mean)?;
                let q1l = self.p1_mu * y.y1_lower;
                Ok((y.y0_lower, y.y1_lower, q1l, q1l))
            }
            ScenarioMode::GaussianMixed | ScenarioMode::VacuumNu2 => {
                let set = self.decoys.as_ref().expect("decoy tables prepared");
                let y = set.yield_bounds(qm, q1, q2)?;
                let q1l = self.p1_mu * y.y1_lower;
                Ok((y.y0_lower, y.y1_lower, q1l, q1l))
            }
            ScenarioMode::Wang { z } => {
                let w = wang_q1_lower_z(qm, q1, q2, &it.mu, &it.nu1, &it.nu2, z)?;
                // The method gives no vacuum-yield bound; zero is the
                // conservative choice.
                let y1 = (w.q1_lower.value / w.p1_mu_lower).min(1.0);
                Ok((0.0, y1, w.q1_lower.value, w.q1_lower.raw))
            }
        }
    }

    /// Secret key length at one distance.
    pub fn key_length(&self, distance_km: f64) -> KeyLengthReport {
        let l_ver = self.scenario.protocol.sift_len_x;
        match self.key_detail(distance_km) {
            Ok(d) => {
                let l_sec = d.l_sec_raw.max(0.0);
                KeyLengthReport {
                    distance_km,
                    l_ver,
                    l_sec,
                    ratio: l_sec / l_ver,
                    detail: Some(d),
                    error: None,
                }
            }
            Err(e) => KeyLengthReport {
                distance_km,
                l_ver,
                l_sec: 0.0,
                ratio: 0.0,
                detail: None,
                error: Some(e),
            },
        }
    }

    fn key_detail(&self, distance_km: f64) -> Result<KeyDetail> {
        let cfg = &self.scenario.protocol;
        let ch = &self.scenario.channel;
        let it = &self.scenario.intensities;
        let mut budget = EpsilonBudget {
            per_bound: cfg.per_bound_epsilon(),
            used: 0,
        };

        let means = [it.mu.mean, it.nu1.mean, it.nu2.mean];
        let mut sim = [(0.0, 0.0); 3];
        for (s, m) in sim.iter_mut().zip(means) {
            *s = channel_gain_qber(m, distance_km, ch)?;
        }
        let (gain_mu, qber_mu) = sim[0];
        let counts = pulse_counts(cfg, gain_mu)?;

        let mut clamped = false;
        let mut basis = |n: [f64; 3], budget: &mut EpsilonBudget| -> Result<[GainBounds; 3]> {
            // The signal uses only its upper bound; each decoy uses both.
            let eps = [budget.take(1), budget.take(2), budget.take(2)];
            let mut out = [GainBounds::exact(0.0); 3];
            for k in 0..3 {
                let q = sim[k].0;
                out[k] = gain_bounds(&GainRecord::new(n[k], n[k] * q, eps[k])?)?;
                clamped |= out[k].clamped;
            }
            Ok(out)
        };
        let gx = basis(counts.n_x, &mut budget)?;
        let gy = basis(counts.n_y, &mut budget)?;

        let (y0x, y1x, q1x, q1x_raw) = self.basis_yields(&gx)?;
        let (y0y, y1y, q1y, q1y_raw) = self.basis_yields(&gy)?;

        let m1x = single_photon_bits_lower(counts.ver_len_x, q1x, gx[0].upper, budget.take(1))?;
        let m1y = single_photon_bits_lower(counts.sift_len_y, q1y, gy[0].upper, budget.take(1))?;
        let m0y = vacuum_error_bits_lower(counts.n_y[0], cfg, self.p0_mu, y0y, budget.take(1))?;
        let e1y = single_photon_bit_error_upper(counts.sift_len_y, qber_mu, m0y, m1y)?;

        let yield_sum = y1x + y1y;
        let delta_prime = if self.delta == 0.0 {
            0.0
        } else if yield_sum <= 0.0 {
            return Err(Error::invalid_bound("both single-photon yield bounds are zero"));
        } else {
            (2.0 * self.delta / yield_sum).min(0.5)
        };
        let theta_coin = coin_correction(e1y, delta_prime)?;
        let e1_tilde = (e1y + theta_coin).min(0.5);
        let stat = statistical_correction(e1_tilde, m1y, m1x, budget.take(1))?;
        let e_ph = (stat.e1_tilde + stat.theta).min(0.5);

        let leak = leak_estimate(cfg.sift_len_x, qber_mu, cfg)?;
        let l_sec_raw = m1x * (1.0 - h2(e_ph)) - leak.bits - 5.0 * (1.0 / cfg.eps_pa).log2();

        if budget.used != cfg.bound_count {
            return Err(Error::Invariant(format!(
                "{} statistical bounds consumed, {} budgeted",
                budget.used, cfg.bound_count
            )));
        }
        Ok(KeyDetail {
            gain_mu,
            qber_mu,
            counts,
            x: BasisDetail {
                gains: gx,
                y0_lower: y0x,
                y1_lower: y1x,
                q1_lower: q1x,
                q1_lower_raw: q1x_raw,
                m1_lower: m1x,
            },
            y: BasisDetail {
                gains: gy,
                y0_lower: y0y,
                y1_lower: y1y,
                q1_lower: q1y,
                q1_lower_raw: q1y_raw,
                m1_lower: m1y,
            },
            m0_y_lower: m0y,
            e1_y_upper: e1y,
            delta: self.delta,
            delta_prime,
            theta_coin,
            e1_tilde: stat.e1_tilde,
            theta_stat: stat.theta,
            stat_residual: stat.relative_residual,
            e_ph_x_upper: e_ph,
            leak,
            l_sec_raw,
            bounds_used: budget.used,
            any_clamped: clamped || leak.clamped,
        })
    }
}

/// Secret key length at one distance. Component failures zero the key and
/// are recorded in the report.
pub fn secret_key_length(scenario: &Scenario, distance_km: f64) -> KeyLengthReport {
    match PreparedScenario::new(scenario) {
        Ok(p) => p.key_length(distance_km),
        Err(e) => failed_report(scenario, distance_km, e),
    }
}

fn failed_report(scenario: &Scenario, distance_km: f64, e: Error) -> KeyLengthReport {
    KeyLengthReport {
        distance_km,
        l_ver: scenario.protocol.sift_len_x,
        l_sec: 0.0,
        ratio: 0.0,
        detail: None,
        error: Some(e),
    }
}

/// One report per distance, in input order.
pub fn sweep_distances(scenario: &Scenario, distances: &[f64]) -> Result<Vec<KeyLengthReport>> {
    if distances.is_empty() {
        return Err(Error::domain("distance list is empty"));
    }
    match PreparedScenario::new(scenario) {
        Ok(p) => Ok(distances.par_iter().map(|&d| p.key_length(d)).collect()),
        Err(e) => Ok(distances
            .iter()
            .map(|&d| failed_report(scenario, d, e.clone()))
            .collect()),
    }
}

/// `from, from + step, ...` up to and including `to` (within rounding).
pub fn distance_grid(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(from.is_finite() && to.is_finite() && step.is_finite()) || from < 0.0 || to < from {
        return Err(Error::domain(format!("invalid distance range {from}..{to}")));
    }
    if !(step > 0.0) {
        return Err(Error::domain(format!("distance step must be positive, got {step}")));
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| from + step * k as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn channel_examples() {
        let ch = ChannelModel::default();
        let (q, e) = channel_gain_qber(0.0, 10.0, &ch).unwrap();
        assert_eq!((q, e), (2e-6, 0.5));
        let (q, e) = channel_gain_qber(0.3, 0.0, &ch).unwrap();
        let t = 10f64.powf(-0.3);
        let click = 1.0 - (-t * 0.1 * 0.3).exp();
        assert_relative_eq!(q, 2e-6 + click, max_relative = 1e-14);
        assert_relative_eq!(e, (1e-6 + 0.01 * click) / q, max_relative = 1e-14);
        assert!((q - 0.014925).abs() < 1e-6 && (e - 0.01007).abs() < 1e-5);
        let (q, e) = channel_gain_qber(0.3, 5000.0, &ch).unwrap();
        assert!((q - 2e-6).abs() < 1e-15 && (e - 0.5).abs() < 1e-9);
    }

    #[test]
    fn count_examples() {
        let cfg = ProtocolConfig::default();
        let c = pulse_counts(&cfg, 0.0149).unwrap();
        assert_relative_eq!(c.n_x[0], 1.36e6 / (0.9 * 0.0149), max_relative = 1e-14);
        assert_relative_eq!(c.n_x[0], 1.0142e8, max_relative = 1e-4);
        assert_relative_eq!(c.n_x[1] / c.n_x[0], 0.5);
        assert_relative_eq!(c.sift_len_y / c.ver_len_x, (0.1f64 / 0.9).powi(2), max_relative = 1e-14);
        assert!(pulse_counts(&cfg, 0.0).is_err());
    }

    #[test]
    fn single_photon_count_examples() {
        let one_sigma = 0.5 * crate::special::erfc(std::f64::consts::FRAC_1_SQRT_2);
        assert_relative_eq!(
            single_photon_bits_lower(1e6, 0.005, 0.01, one_sigma).unwrap(),
            499_500.0,
            max_relative = 1e-9
        );
        assert_eq!(single_photon_bits_lower(1e6, 0.003, 0.01, 0.5).unwrap(), 3e5);
        assert_eq!(single_photon_bits_lower(1e6, 1e-12, 0.01, 1e-10).unwrap(), 0.0);
        assert!(single_photon_bits_lower(1e6, 0.02, 0.01, 0.1).is_err());
    }

    #[test]
    fn vacuum_and_error_rate_examples() {
        let cfg = ProtocolConfig::default();
        assert_eq!(vacuum_error_bits_lower(1e8, &cfg, 0.74, 0.0, 1e-13).unwrap(), 0.0);
        assert_relative_eq!(
            vacuum_error_bits_lower(1e8, &cfg, 0.74, 1e-5, 0.5).unwrap(),
            1e8 * 0.1 * 0.74 * 1e-5 / 2.0,
            max_relative = 1e-14
        );
        assert_eq!(single_photon_bit_error_upper(1e4, 0.02, 200.0, 3e3).unwrap(), 0.0);
        assert_relative_eq!(
            single_photon_bit_error_upper(1e4, 0.02, 0.0, 3e3).unwrap(),
            200.0 / 3e3,
            max_relative = 1e-14
        );
        assert!(matches!(
            single_photon_bit_error_upper(1e4, 0.02, 0.0, 0.0),
            Err(Error::InvalidBound(_))
        ));
    }

    #[test]
    fn coin_examples() {
        assert_eq!(coin_correction(0.03, 0.0).unwrap(), 0.0);
        assert_relative_eq!(coin_correction(0.0, 1e-4).unwrap(), 4e-4 * (1.0 - 1e-4), max_relative = 1e-14);
        assert!(coin_correction(0.6, 0.1).is_err());
    }

    // Independent form: with sin^2(a) = E and sin^2(b) = delta', the
    // corrected rate is sin^2(a + 2b), the worst phase error reachable by a
    // rotation bounded by the basis fidelity.
    #[test]
    fn coin_correction_matches_rotation_form() {
        for (e, d) in [(0.02_f64, 1e-3_f64), (0.0, 1e-4), (0.1, 0.05), (0.3, 1e-6)] {
            let t = coin_correction(e, d).unwrap();
            let target = (e.sqrt().asin() + 2.0 * d.sqrt().asin()).sin().powi(2);
            assert_relative_eq!(e + t, target, max_relative = 1e-12);
        }
    }

    #[test]
    fn leak_examples() {
        let cfg = ProtocolConfig::default();
        assert_eq!(leak_estimate(1e6, 0.0, &cfg).unwrap().bits, 50.0);
        let flat = ProtocolConfig {
            f_ec: FecTable::new(vec![(0.0, 1.0), (0.5, 1.0)]).unwrap(),
            ..ProtocolConfig::default()
        };
        assert_eq!(leak_estimate(1e6, 0.5, &flat).unwrap().bits, 1e6 + 50.0);
        let l = leak_estimate(1e6, 0.02, &cfg).unwrap();
        assert_relative_eq!(l.bits, 1e6 * 1.35 * h2(0.02) + 50.0, max_relative = 1e-14);
        assert!(!l.clamped);
        assert!(leak_estimate(1e6, 0.001, &cfg).unwrap().clamped);
        assert_relative_eq!(cfg.f_ec.eval(0.03).0, 1.30, max_relative = 1e-14);
    }

    #[test]
    fn xi_forms_agree_and_vanish_at_zero() {
        for (t, e, a) in [(0.01, 0.02, 0.9), (0.2, 0.1, 0.5), (1e-3, 0.05, 0.99)] {
            let eq = StatEquation {
                e,
                s: 1.0,
                a,
                log_prefactor: 0.0,
                log_eps: 0.0,
            };
            assert_relative_eq!(eq.xi(t), xi_direct(t, e, a), max_relative = 1e-9);
            assert_eq!(eq.xi(0.0), 0.0);
        }
    }

    #[test]
    fn statistical_correction_examples() {
        let r = statistical_correction(0.02, 1e4, 1e5, 7.14e-14).unwrap();
        assert!(r.relative_residual < 1e-9, "{r:?}");
        assert!(r.theta > 0.0 && r.theta < 0.98);
        let big = statistical_correction(0.02, 1e12, 1e12, 1e-13).unwrap();
        assert!(big.theta < 1e-3);
        let floored = statistical_correction(0.0, 1e4, 1e5, 1e-13).unwrap();
        assert_eq!(floored.e1_tilde, 0.5 / 1e4);
    }

    #[test]
    fn distance_grid_is_inclusive() {
        let g = distance_grid(0.0, 170.0, 5.0).unwrap();
        assert_eq!(g.len(), 35);
        assert_eq!(*g.last().unwrap(), 170.0);
        assert_eq!(distance_grid(30.0, 30.0, 5.0).unwrap(), vec![30.0]);
        assert!(distance_grid(0.0, 10.0, 0.0).is_err());
    }

    #[test]
    fn default_scenario_consumes_the_full_budget() {
        let r = secret_key_length(&Scenario::default(), 50.0);
        let d = r.detail.expect("key at 50 km");
        assert_eq!(d.bounds_used, 14);
        assert!(r.l_sec > 0.0);
    }

    #[test]
    fn empty_sweep_is_an_error() {
        assert!(matches!(sweep_distances(&Scenario::default(), &[]), Err(Error::Domain(_))));
    }
}
