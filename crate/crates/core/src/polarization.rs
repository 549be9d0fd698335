//! Polarization states on the Bloch sphere, source-averaged density
//! matrices, fidelity and the quantum-coin imbalance.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::quad::{self, Tolerance};
use crate::special::erfc;

/// Tolerance for Hermiticity, trace and positivity checks.
pub const STATE_TOL: f64 = 1e-12;

/// Default grid resolution per dimension for [`min_fidelity_pure`].
pub const DEFAULT_FIDELITY_GRID: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochAngles {
    pub phi: f64,
    pub theta: f64,
}

impl BlochAngles {
    /// Validates `theta` and wraps `phi` into `[0, 2pi)`.
    pub fn new(phi: f64, theta: f64) -> Result<Self> {
        if !phi.is_finite() || !(0.0..=PI).contains(&theta) {
            return Err(Error::domain(format!(
                "Bloch angles need finite phi and theta in [0, pi], got ({phi}, {theta})"
            )));
        }
        Ok(BlochAngles {
            phi: wrap_angle(phi),
            theta,
        })
    }
}

/// Maps an angle into `[0, 2pi)`.
pub fn wrap_angle(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// A 2x2 density matrix; every constructor checks it is a valid state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix2 {
    m: [[Complex64; 2]; 2],
}

impl DensityMatrix2 {
    pub fn new(m: [[Complex64; 2]; 2]) -> Result<Self> {
        let rho = DensityMatrix2 { m };
        rho.check()?;
        Ok(rho)
    }

    /// Builds the Hermitian matrix `[[a, b], [conj(b), d]]`.
    pub fn from_parts(a: f64, d: f64, b: Complex64) -> Result<Self> {
        Self::new([[Complex64::new(a, 0.0), b], [b.conj(), Complex64::new(d, 0.0)]])
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix2::from_parts(0.5, 0.5, Complex64::new(0.0, 0.0)).expect("I/2 is a state")
    }

    fn check(&self) -> Result<()> {
        let m = &self.m;
        if m.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Invariant("density matrix has non-finite entries".into()));
        }
        let herm = (m[0][1] - m[1][0].conj())
            .norm()
            .max(m[0][0].im.abs())
            .max(m[1][1].im.abs());
        if herm > STATE_TOL {
            return Err(Error::Invariant(format!("matrix is not Hermitian (deviation {herm:e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > STATE_TOL {
            return Err(Error::Invariant(format!("trace is {tr}, expected 1")));
        }
        let (lo, _) = self.eigenvalues();
        if lo < -STATE_TOL {
            return Err(Error::Invariant(format!("negative eigenvalue {lo:e}")));
        }
        Ok(())
    }

    pub fn entry(&self, row: usize, col: usize) -> Complex64 {
        self.m[row][col]
    }

    pub fn matrix(&self) -> [[Complex64; 2]; 2] {
        self.m
    }

    pub fn trace(&self) -> f64 {
        self.m[0][0].re + self.m[1][1].re
    }

    /// Determinant, with values inside the rounding noise of `ad - |b|^2`
    /// reported as zero so that pure states stay exactly pure.
    pub fn det(&self) -> f64 {
        let ad = self.m[0][0].re * self.m[1][1].re;
        let bb = self.m[0][1].norm_sqr();
        let d = ad - bb;
        if d.abs() <= 4.0 * f64::EPSILON * (ad.abs() + bb) {
            0.0
        } else {
            d
        }
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        hermitian_eigen(&self.m).0
    }

    pub fn is_pure(&self, tol: f64) -> bool {
        self.det().abs() <= tol
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &DensityMatrix2) -> f64 {
        let mut d = 0.0_f64;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        d
    }
}

type Mat2 = [[Complex64; 2]; 2];

fn matmul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Eigen-decomposition of a Hermitian 2x2 matrix: ascending eigenvalues
/// and the unitary whose columns are the matching eigenvectors.
fn hermitian_eigen(m: &Mat2) -> ((f64, f64), Mat2) {
    let (a, d, b) = (m[0][0].re, m[1][1].re, m[0][1]);
    let half_tr = 0.5 * (a + d);
    let half_gap = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    let (lo, hi) = (half_tr - half_gap, half_tr + half_gap);
    let one = Complex64::new(1.0, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    if b.norm() <= f64::EPSILON * (a.abs() + d.abs()).max(f64::MIN_POSITIVE) {
        // Already diagonal.
        return if a <= d {
            ((a, d), [[one, zero], [zero, one]])
        } else {
            ((d, a), [[zero, one], [one, zero]])
        };
    }
    // (H - l I) v = 0 with v = (b, l - a) for either eigenvalue.
    let vec = |l: f64| -> [Complex64; 2] {
        let v = [b, Complex64::new(l - a, 0.0)];
        let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        [v[0] / n, v[1] / n]
    };
    let (v_lo, v_hi) = (vec(lo), vec(hi));
    ((lo, hi), [[v_lo[0], v_hi[0]], [v_lo[1], v_hi[1]]])
}

/// Rank-one projector onto `cos(theta/2)|H> + e^{i phi} sin(theta/2)|V>`.
pub fn bloch_projector(angles: BlochAngles) -> DensityMatrix2 {
    let c = (0.5 * angles.theta).cos();
    let s = (0.5 * angles.theta).sin();
    let off = Complex64::from_polar(c * s, -angles.phi);
    DensityMatrix2::from_parts(c * c, s * s, off).expect("projector is a valid state")
}

/// Bloch angles of a Stokes vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StokesAngles {
    pub angles: BlochAngles,
    /// The vector lies on the `S1` axis, where the azimuth is undefined and
    /// reported as 0.
    pub degenerate_azimuth: bool,
}

pub fn stokes_to_angles(s1: f64, s2: f64, s3: f64) -> Result<StokesAngles> {
    if !(s1.is_finite() && s2.is_finite() && s3.is_finite()) {
        return Err(Error::domain("Stokes components must be finite"));
    }
    let r = (s1 * s1 + s2 * s2 + s3 * s3).sqrt();
    if r == 0.0 {
        return Err(Error::domain("Stokes vector is zero"));
    }
    let theta = (s1 / r).clamp(-1.0, 1.0).acos();
    let rho = (s2 * s2 + s3 * s3).sqrt();
    if rho == 0.0 {
        return Ok(StokesAngles {
            angles: BlochAngles { phi: 0.0, theta },
            degenerate_azimuth: true,
        });
    }
    let sign = if s3 < 0.0 { -1.0 } else { 1.0 };
    let phi = sign * (s2 / rho).clamp(-1.0, 1.0).acos();
    Ok(StokesAngles {
        angles: BlochAngles {
            phi: wrap_angle(phi),
            theta,
        },
        degenerate_azimuth: false,
    })
}

/// Normalized histogram stored as a density over its bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    edges: Vec<f64>,
    density: Vec<f64>,
}

impl Histogram {
    pub fn new(edges: Vec<f64>, density: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || density.len() + 1 != edges.len() {
            return Err(Error::domain(format!(
                "histogram needs n+1 edges for n bins (got {} edges, {} bins)",
                edges.len(),
                density.len()
            )));
        }
        if edges.windows(2).any(|w| !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite()) {
            return Err(Error::domain("histogram edges must be finite and strictly increasing"));
        }
        if density.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::domain("histogram densities must be finite and non-negative"));
        }
        let h = Histogram { edges, density };
        let total: f64 = h.probabilities().iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("histogram integrates to {total}, expected 1")));
        }
        Ok(h)
    }

    /// One bin of the given width holding all probability.
    pub fn point(center: f64, width: f64) -> Result<Self> {
        let (lo, hi) = (center - 0.5 * width, center + 0.5 * width);
        Histogram::new(vec![lo, hi], vec![1.0 / (hi - lo)])
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Probability mass per bin (density times width).
    pub fn probabilities(&self) -> Vec<f64> {
        self.edges
            .windows(2)
            .zip(&self.density)
            .map(|(w, d)| d * (w[1] - w[0]))
            .collect()
    }
}

/// Gaussian angular parameters for the four states. The polar angle is
/// stored per state; a pooled fit repeats the same values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianAngles {
    pub phi_mean: [f64; 4],
    pub phi_sigma: [f64; 4],
    pub theta_mean: [f64; 4],
    pub theta_sigma: [f64; 4],
}

impl GaussianAngles {
    pub fn pooled(phi_mean: [f64; 4], phi_sigma: [f64; 4], theta_mean: f64, theta_sigma: f64) -> Result<Self> {
        let g = GaussianAngles {
            phi_mean,
            phi_sigma,
            theta_mean: [theta_mean; 4],
            theta_sigma: [theta_sigma; 4],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if !self.phi_mean[i].is_finite() || !(0.0..=PI).contains(&self.theta_mean[i]) {
                return Err(Error::domain(format!("state {} has invalid mean angles", i + 1)));
            }
            if !(self.phi_sigma[i] >= 0.0 && self.theta_sigma[i] >= 0.0)
                || !self.phi_sigma[i].is_finite()
                || !self.theta_sigma[i].is_finite()
            {
                return Err(Error::domain(format!("state {} has an invalid spread", i + 1)));
            }
        }
        Ok(())
    }
}

/// Angular distribution of the four prepared states.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AngularDistribution {
    Binned {
        phi: [Histogram; 4],
        theta: [Histogram; 4],
    },
    Gaussian(GaussianAngles),
}

fn state_slot(state: usize) -> Result<usize> {
    if (1..=4).contains(&state) {
        Ok(state - 1)
    } else {
        Err(Error::domain(format!("state index must be 1..=4, got {state}")))
    }
}

/// Source-averaged density matrix of state `state` (1..=4).
pub fn averaged_state(dist: &AngularDistribution, state: usize) -> Result<DensityMatrix2> {
    let i = state_slot(state)?;
    match dist {
        AngularDistribution::Gaussian(g) => {
            g.validate()?;
            gaussian_closed_form(g.phi_mean[i], g.phi_sigma[i], g.theta_mean[i], g.theta_sigma[i])
        }
        AngularDistribution::Binned { phi, theta } => {
            // The double sum over bin centres factorizes: the diagonal only
            // depends on theta and the coherence is a product of a theta
            // sum and a phi sum.
            let (pt, ct) = (theta[i].probabilities(), theta[i].centers());
            let (pp, cp) = (phi[i].probabilities(), phi[i].centers());
            let wt: f64 = pt.iter().sum();
            let wp: f64 = pp.iter().sum();
            let cos_t: f64 = pt.iter().zip(&ct).map(|(w, t)| w * t.cos()).sum::<f64>() / wt;
            let sin_t: f64 = pt.iter().zip(&ct).map(|(w, t)| w * t.sin()).sum::<f64>() / wt;
            let phase: Complex64 = pp
                .iter()
                .zip(&cp)
                .map(|(w, p)| Complex64::from_polar(*w, -p))
                .sum::<Complex64>()
                / wp;
            DensityMatrix2::from_parts(0.5 * (1.0 + cos_t), 0.5 * (1.0 - cos_t), 0.5 * sin_t * phase)
        }
    }
}

/// Closed-form average over independent Gaussian azimuth and polar angle.
fn gaussian_closed_form(phi: f64, s_phi: f64, theta: f64, s_theta: f64) -> Result<DensityMatrix2> {
    let damp_t = (-0.5 * s_theta * s_theta).exp();
    let diag = damp_t * theta.cos();
    let off = Complex64::from_polar(
        0.5 * (-0.5 * (s_phi * s_phi + s_theta * s_theta)).exp() * theta.sin(),
        -phi,
    );
    DensityMatrix2::from_parts(0.5 * (1.0 + diag), 0.5 * (1.0 - diag), off)
}

/// Averaged state by direct 2D quadrature over the Gaussian angles, with
/// the polar angle restricted to `[0, pi]` and renormalized.
pub fn averaged_state_quadrature(g: &GaussianAngles, state: usize, tol: Tolerance) -> Result<DensityMatrix2> {
    g.validate()?;
    let i = state_slot(state)?;
    let (pm, ps, tm, ts) = (g.phi_mean[i], g.phi_sigma[i], g.theta_mean[i], g.theta_sigma[i]);
    const WIDTH: f64 = 12.0;

    let phi_range = (pm - WIDTH * ps, pm + WIDTH * ps);
    let theta_range = ((tm - WIDTH * ts).max(0.0), (tm + WIDTH * ts).min(PI));
    let pdf = |x: f64, m: f64, s: f64| (-0.5 * ((x - m) / s).powi(2)).exp() / ((2.0 * PI).sqrt() * s);
    let theta_mass = if ts > 0.0 {
        0.5 * (erfc((0.0 - tm) / (SQRT_2 * ts)) - erfc((PI - tm) / (SQRT_2 * ts)))
    } else {
        1.0
    };

    let entry = |f: &dyn Fn(f64, f64) -> f64| -> Result<f64> {
        match (ps > 0.0, ts > 0.0) {
            (true, true) => quad::integrate_2d(
                |p, t| f(p, t) * pdf(p, pm, ps) * pdf(t, tm, ts),
                phi_range,
                theta_range,
                tol,
            )
            .map(|v| v / theta_mass),
            (true, false) => {
                quad::integrate(|p| f(p, tm) * pdf(p, pm, ps), phi_range.0, phi_range.1, tol).map(|r| r.value)
            }
            (false, true) => quad::integrate(|t| f(pm, t) * pdf(t, tm, ts), theta_range.0, theta_range.1, tol)
                .map(|r| r.value / theta_mass),
            (false, false) => Ok(f(pm, tm)),
        }
    };
    let a = entry(&|_, t| (0.5 * t).cos().powi(2))?;
    let re = entry(&|p, t| 0.5 * t.sin() * p.cos())?;
    let im = entry(&|p, t| -0.5 * t.sin() * p.sin())?;
    // The diagonal pair is built from one integral so the trace is exact.
    DensityMatrix2::from_parts(a, 1.0 - a, Complex64::new(re, im))
}

/// Equal mixture of the two states of one basis.
pub fn basis_state(rho_a: &DensityMatrix2, rho_b: &DensityMatrix2) -> Result<DensityMatrix2> {
    let mut m = [[Complex64::new(0.0, 0.0); 2]; 2];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, z) in row.iter_mut().enumerate() {
            *z = 0.5 * (rho_a.m[i][j] + rho_b.m[i][j]);
        }
    }
    // Symmetrize away rounding so the validated constructor sees an
    // exactly Hermitian matrix.
    DensityMatrix2::from_parts(m[0][0].re, 1.0 - m[0][0].re, m[0][1])
}

/// Fidelity via the 2x2 identity `Tr(a b) + 2 sqrt(det a det b)`.
pub fn fidelity(rho_a: &DensityMatrix2, rho_b: &DensityMatrix2) -> Result<f64> {
    let (da, db) = (rho_a.det(), rho_b.det());
    if da < -STATE_TOL || db < -STATE_TOL {
        return Err(Error::Invariant(format!(
            "negative determinant in fidelity ({da:e}, {db:e})"
        )));
    }
    let ab = matmul(&rho_a.m, &rho_b.m);
    let tr = ab[0][0].re + ab[1][1].re;
    let f = tr + 2.0 * (da.max(0.0) * db.max(0.0)).sqrt();
    Ok(f.clamp(0.0, 1.0))
}

/// Fidelity `(Tr sqrt(sqrt(a) b sqrt(a)))^2` evaluated through explicit
/// eigen-decompositions; slower, used to cross-check [`fidelity`].
pub fn fidelity_uhlmann(rho_a: &DensityMatrix2, rho_b: &DensityMatrix2) -> f64 {
    let ((l0, l1), v) = hermitian_eigen(&rho_a.m);
    let sq = [l0.max(0.0).sqrt(), l1.max(0.0).sqrt()];
    let mut root = [[Complex64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            root[i][j] = v[i][0] * sq[0] * v[j][0].conj() + v[i][1] * sq[1] * v[j][1].conj();
        }
    }
    let inner = matmul(&matmul(&root, &rho_b.m), &root);
    let ((m0, m1), _) = hermitian_eigen(&inner);
    let t = m0.max(0.0).sqrt() + m1.max(0.0).sqrt();
    (t * t).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoinImbalance {
    pub delta: f64,
    pub delta_prime: f64,
}

/// Coin imbalance from a basis fidelity, and its yield-rescaled version.
pub fn coin_imbalance(f: f64, y1x_lower: f64, y1y_lower: f64) -> Result<CoinImbalance> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::domain(format!("fidelity must lie in [0, 1], got {f}")));
    }
    for y in [y1x_lower, y1y_lower] {
        if !(0.0..=1.0).contains(&y) {
            return Err(Error::domain(format!("yield must lie in [0, 1], got {y}")));
        }
    }
    let gap = 1.0 - f.sqrt();
    let delta = 0.5 * gap;
    let sum = y1x_lower + y1y_lower;
    if sum <= 0.0 {
        return Err(Error::domain("both single-photon yields are zero"));
    }
    Ok(CoinImbalance {
        delta,
        delta_prime: (gap / sum).min(0.5),
    })
}

/// Imbalance `(1 - sqrt(F)) / 2` alone.
pub fn delta_from_fidelity(f: f64) -> Result<f64> {
    coin_imbalance(f, 1.0, 1.0).map(|c| c.delta)
}

/// Fidelity between the two basis states averaged over the distribution.
pub fn source_fidelity(dist: &AngularDistribution) -> Result<f64> {
    let rho = |i| averaged_state(dist, i);
    let x = basis_state(&rho(1)?, &rho(2)?)?;
    let y = basis_state(&rho(3)?, &rho(4)?)?;
    fidelity(&x, &y)
}

/// Coin imbalance of a source described by an angular distribution.
pub fn source_delta(dist: &AngularDistribution) -> Result<f64> {
    delta_from_fidelity(source_fidelity(dist)?)
}

/// Allowed angle intervals for each state's azimuth and the common polar
/// angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AngleRanges {
    pub phi: [(f64, f64); 4],
    pub theta: (f64, f64),
}

impl AngleRanges {
    pub fn validate(&self) -> Result<()> {
        for (i, (lo, hi)) in self.phi.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi || hi - lo > TAU {
                return Err(Error::domain(format!(
                    "azimuth interval of state {} is invalid: [{lo}, {hi}]",
                    i + 1
                )));
            }
        }
        let (lo, hi) = self.theta;
        if !(0.0..=PI).contains(&lo) || !(0.0..=PI).contains(&hi) || lo > hi {
            return Err(Error::domain(format!("polar interval [{lo}, {hi}] is invalid")));
        }
        Ok(())
    }
}

/// Fidelity between the basis mixtures of four pure states that share the
/// polar angle `theta`.
pub fn pure_state_fidelity(phi: [f64; 4], theta: f64) -> f64 {
    let s2 = theta.sin().powi(2);
    1.0 - 0.5 * s2 * (1.0 - phase_overlap(phi))
}

fn phase_overlap(phi: [f64; 4]) -> f64 {
    let [p1, p2, p3, p4] = phi;
    (0.5 * (p1 + p2 - p3 - p4)).cos() * (0.5 * (p1 - p2)).cos() * (0.5 * (p3 - p4)).cos()
        + ((0.5 * (p1 - p2)).sin() * (0.5 * (p3 - p4)).sin()).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinFidelity {
    pub value: f64,
    pub candidate_value: f64,
    pub grid_value: f64,
    pub phi: [f64; 4],
    pub theta: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi == lo || n < 2 {
        return vec![lo];
    }
    (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
}

// A pair of azimuths reduces to three features whose dot product with the
// other pair's features gives `phase_overlap`.
fn pair_features(a: &[f64], b: &[f64]) -> Vec<([f64; 3], [f64; 2])> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            let (u, h) = (0.5 * (x + y), 0.5 * (x - y));
            out.push(([u.cos() * h.cos(), u.sin() * h.cos(), h.sin().abs()], [x, y]));
        }
    }
    out
}

/// Minimum of the pure-state fidelity over the given ranges, from the
/// better of the analytic corner candidates and a dense grid with
/// [`DEFAULT_FIDELITY_GRID`] points per dimension.
pub fn min_fidelity_pure(ranges: &AngleRanges) -> Result<MinFidelity> {
    min_fidelity_pure_with_grid(ranges, DEFAULT_FIDELITY_GRID)
}

pub fn min_fidelity_pure_with_grid(ranges: &AngleRanges, points: usize) -> Result<MinFidelity> {
    ranges.validate()?;
    if points < 2 {
        return Err(Error::domain("grid needs at least two points per dimension"));
    }
    let (t_lo, t_hi) = ranges.theta;
    let candidate_theta = FRAC_PI_2.clamp(t_lo, t_hi);

    let mut best_corner = ([0.0; 4], f64::INFINITY);
    for mask in 0..16u32 {
        let mut phi = [0.0; 4];
        for (k, p) in phi.iter_mut().enumerate() {
            let (lo, hi) = ranges.phi[k];
            *p = if mask >> k & 1 == 0 { lo } else { hi };
        }
        let f = pure_state_fidelity(phi, candidate_theta);
        if f < best_corner.1 {
            best_corner = (phi, f);
        }
    }

    let grids: Vec<Vec<f64>> = ranges.phi.iter().map(|(lo, hi)| linspace(*lo, *hi, points)).collect();
    let left = pair_features(&grids[0], &grids[1]);
    let right = pair_features(&grids[2], &grids[3]);
    // (overlap, left index, right index); ties resolve to the lowest
    // indices so the result does not depend on scheduling.
    let (g_min, li, ri) = left
        .par_iter()
        .enumerate()
        .map(|(i, (fl, _))| {
            let mut best = (f64::INFINITY, i, 0usize);
            for (j, (fr, _)) in right.iter().enumerate() {
                let g = fl[0] * fr[0] + fl[1] * fr[1] + fl[2] * fr[2];
                if g < best.0 {
                    best = (g, i, j);
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, usize::MAX, usize::MAX),
            |a, b| if (b.0, b.1, b.2) < (a.0, a.1, a.2) { b } else { a },
        );
    // For fixed azimuths the fidelity is monotone in sin^2(theta), so the
    // theta grid point nearest the equator is optimal.
    let grid_theta = linspace(t_lo, t_hi, points)
        .into_iter()
        .fold((f64::NAN, -1.0), |acc, t| {
            let s = t.sin().powi(2);
            if s > acc.1 {
                (t, s)
            } else {
                acc
            }
        })
        .0;
    let grid_phi = [left[li].1[0], left[li].1[1], right[ri].1[0], right[ri].1[1]];
    let grid_value = (1.0 - 0.5 * grid_theta.sin().powi(2) * (1.0 - g_min)).clamp(0.0, 1.0);
    let candidate_value = best_corner.1.clamp(0.0, 1.0);

    let (value, phi, theta) = if candidate_value <= grid_value {
        (candidate_value, best_corner.0, candidate_theta)
    } else {
        (grid_value, grid_phi, grid_theta)
    };
    Ok(MinFidelity {
        value,
        candidate_value,
        grid_value,
        phi,
        theta,
    })
}
