//! Loading source-characterization CSV files, Gaussian fits, binned
//! densities and confidence intervals.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::path::Path;

use serde::Serialize;

use crate::decoy_bounds::normal_quantile;
use crate::error::{Error, Result};
use crate::finite_key::Intensities;
use crate::photon_stats::GaussianParams;
use crate::polarization::{stokes_to_angles, AngleRanges, AngularDistribution, GaussianAngles, Histogram};

pub const DEFAULT_INTENSITY_BINS: usize = 50;
pub const DEFAULT_ANGLE_BINS: usize = 36;
pub const MIN_FIT_SAMPLES: usize = 30;
pub const MIN_QUANTILE_SAMPLES: usize = 100;
/// Relative integrated squared error above which a fit is flagged.
pub const POOR_FIT_THRESHOLD: f64 = 0.1;
/// Outlier cut in median absolute deviations.
pub const DEFAULT_MAD_CUT: f64 = 4.0;

pub const INTENSITY_LABELS: [&str; 3] = ["mu", "nu1", "nu2"];
pub const STOKES_LABELS: [&str; 4] = ["1", "2", "3", "4"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schema {
    Intensity,
    Stokes,
}

impl Schema {
    fn header(&self) -> &'static [&'static str] {
        match self {
            Schema::Intensity => &["label", "intensity"],
            Schema::Stokes => &["state", "s1", "s2", "s3"],
        }
    }

    fn labels(&self) -> &'static [&'static str] {
        match self {
            Schema::Intensity => &INTENSITY_LABELS,
            Schema::Stokes => &STOKES_LABELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Samples {
    Intensity(Vec<f64>),
    Stokes(Vec<[f64; 3]>),
}

impl Samples {
    pub fn len(&self) -> usize {
        match self {
            Samples::Intensity(v) => v.len(),
            Samples::Stokes(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    pub label: String,
    pub samples: Samples,
}

impl SampleSet {
    pub fn intensities(&self) -> Result<&[f64]> {
        match &self.samples {
            Samples::Intensity(v) => Ok(v),
            Samples::Stokes(_) => Err(Error::domain(format!("set `{}` holds Stokes vectors", self.label))),
        }
    }

    pub fn stokes(&self) -> Result<&[[f64; 3]]> {
        match &self.samples {
            Samples::Stokes(v) => Ok(v),
            Samples::Intensity(_) => Err(Error::domain(format!("set `{}` holds intensities", self.label))),
        }
    }
}

/// Reads a CSV file and returns one sample set per label, in the canonical
/// label order. Labels missing from the file are omitted.
pub fn load_samples(path: &Path, schema: Schema) -> Result<Vec<SampleSet>> {
    let shown = path.display().to_string();
    let parse_err = |line: Option<u64>, message: String| Error::Parse {
        path: shown.clone(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: shown.clone(),
            message: e.to_string(),
        })?;
    let header = rdr
        .headers()
        .map_err(|e| parse_err(Some(1), e.to_string()))?
        .clone();
    let want = schema.header();
    if header.iter().collect::<Vec<_>>() != want {
        return Err(parse_err(
            Some(1),
            format!("expected header `{}`, found `{}`", want.join(","), header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let labels = schema.labels();
    let mut intensity: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut stokes: BTreeMap<usize, Vec<[f64; 3]>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.position().map(|p| p.line()), e.to_string()))?;
        let line = rec.position().map(|p| p.line());
        if rec.len() != want.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", want.len(), rec.len())));
        }
        let label = &rec[0];
        let slot = labels
            .iter()
            .position(|l| *l == label)
            .ok_or_else(|| parse_err(line, format!("unknown label `{label}`; expected one of {}", labels.join(", "))))?;
        let mut values = [0.0; 3];
        for (k, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("`{}` is not a number", field)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value `{field}`")));
            }
            values[k] = v;
        }
        match schema {
            Schema::Intensity => intensity.entry(slot).or_default().push(values[0]),
            Schema::Stokes => stokes.entry(slot).or_default().push(values),
        }
    }

    let sets: Vec<SampleSet> = match schema {
        Schema::Intensity => intensity
            .into_iter()
            .map(|(k, v)| SampleSet {
                label: labels[k].to_string(),
                samples: Samples::Intensity(v),
            })
            .collect(),
        Schema::Stokes => stokes
            .into_iter()
            .map(|(k, v)| SampleSet {
                label: labels[k].to_string(),
                samples: Samples::Stokes(v),
            })
            .collect(),
    };
    if sets.is_empty() {
        return Err(parse_err(None, "file has no data rows".into()));
    }
    Ok(sets)
}

/// Sum of values in ascending order, so the result does not depend on
/// input order.
fn ordered_sum(sorted: &[f64]) -> f64 {
    sorted.iter().sum()
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub mean: f64,
    pub sigma: f64,
    pub samples: usize,
    /// Relative integrated squared error between the histogram and the
    /// fitted density.
    pub goodness: f64,
    pub poor_fit: bool,
    pub edges: Vec<f64>,
}

impl FitResult {
    /// Intensity parameters; fails if the fitted mean is negative.
    pub fn gaussian_params(&self) -> Result<GaussianParams> {
        GaussianParams::new(self.mean, self.sigma)
    }
}

/// Maximum-likelihood normal fit (mean and 1/n standard deviation) with a
/// histogram-based goodness figure.
pub fn fit_gaussian(values: &[f64]) -> Result<FitResult> {
    fit_gaussian_with_bins(values, DEFAULT_INTENSITY_BINS)
}

pub fn fit_gaussian_with_bins(values: &[f64], bins: usize) -> Result<FitResult> {
    if values.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "a fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    let sorted = sorted_copy(values);
    let n = sorted.len() as f64;
    let mean = ordered_sum(&sorted) / n;
    let mut dev: Vec<f64> = sorted.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(|a, b| a.total_cmp(b));
    let sigma = (ordered_sum(&dev) / n).sqrt();
    if !(sigma > 0.0) || sigma <= 1e-12 * mean.abs() {
        return Err(Error::DegenerateFit(format!("samples have zero spread (all near {mean})")));
    }

    let hist = build_binned_pdf(&sorted, bins)?;
    let params = |x: f64| {
        let u = (x - mean) / sigma;
        (-0.5 * u * u).exp() / ((2.0 * PI).sqrt() * sigma)
    };
    let (mut num, mut den) = (0.0, 0.0);
    for ((w, d), c) in hist.edges().windows(2).zip(hist.density()).zip(hist.centers()) {
        let width = w[1] - w[0];
        num += (d - params(c)).powi(2) * width;
        den += d * d * width;
    }
    let goodness = num / den;
    Ok(FitResult {
        mean,
        sigma,
        samples: sorted.len(),
        goodness,
        poor_fit: goodness > POOR_FIT_THRESHOLD,
        edges: hist.edges().to_vec(),
    })
}

/// Normalized histogram over `[min, max]` of the samples.
pub fn build_binned_pdf(values: &[f64], bin_count: usize) -> Result<Histogram> {
    if bin_count < 4 {
        return Err(Error::domain(format!("need at least 4 bins, got {bin_count}")));
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("no samples to bin".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        let width = 1e-9 * lo.abs().max(1.0);
        return Histogram::point(lo, width);
    }
    let width = (hi - lo) / bin_count as f64;
    let mut counts = vec![0usize; bin_count];
    for v in values {
        let k = (((v - lo) / width) as usize).min(bin_count - 1);
        counts[k] += 1;
    }
    let edges: Vec<f64> = (0..=bin_count)
        .map(|k| if k == bin_count { hi } else { lo + width * k as f64 })
        .collect();
    let n = values.len() as f64;
    let density = counts
        .iter()
        .zip(edges.windows(2))
        .map(|(c, w)| *c as f64 / (n * (w[1] - w[0])))
        .collect();
    Histogram::new(edges, density)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalMode {
    /// Empirical quantiles at `(1 - level)/2` and `(1 + level)/2`.
    Quantile,
    /// Fitted mean plus or minus the normal quantile times sigma.
    Gaussian,
}

/// Central interval holding `level` of the distribution.
pub fn confidence_interval(values: &[f64], level: f64, mode: IntervalMode) -> Result<(f64, f64)> {
    if !(level > 0.5 && level < 1.0) {
        return Err(Error::domain(format!("confidence level must lie in (0.5, 1), got {level}")));
    }
    match mode {
        IntervalMode::Quantile => {
            if values.len() < MIN_QUANTILE_SAMPLES {
                return Err(Error::InsufficientData(format!(
                    "quantile intervals need at least {MIN_QUANTILE_SAMPLES} samples, got {}",
                    values.len()
                )));
            }
            let s = sorted_copy(values);
            Ok((quantile(&s, 0.5 * (1.0 - level)), quantile(&s, 0.5 * (1.0 + level))))
        }
        IntervalMode::Gaussian => {
            let fit = fit_gaussian(values)?;
            let z = normal_quantile(0.5 * (1.0 - level))?;
            Ok((fit.mean - z * fit.sigma, fit.mean + z * fit.sigma))
        }
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(&sorted_copy(values), 0.5)
}

/// Keeps samples within `cut` median absolute deviations of the median.
pub fn mad_filter(values: &[f64], cut: f64) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&dev);
    values.iter().copied().filter(|v| (v - med).abs() <= cut * mad).collect()
}

/// Circular mean of angles.
pub fn circular_mean(angles: &[f64]) -> f64 {
    let (s, c) = angles
        .iter()
        .fold((0.0, 0.0), |(s, c), a| (s + a.sin(), c + a.cos()));
    s.atan2(c).rem_euclid(TAU)
}

/// Moves every angle onto the branch within pi of the circular mean.
pub fn unwrap_angles(angles: &[f64]) -> Vec<f64> {
    let centre = circular_mean(angles);
    angles
        .iter()
        .map(|a| centre + (a - centre + PI).rem_euclid(TAU) - PI)
        .collect()
}

/// Azimuth (unwrapped) and polar angles of a set of Stokes vectors.
/// Vectors on the pole carry no azimuth and only contribute to the polar
/// angle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateAngles {
    pub label: String,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
}

pub fn stokes_angles(set: &SampleSet) -> Result<StateAngles> {
    let mut phi = Vec::new();
    let mut theta = Vec::new();
    for s in set.stokes()? {
        let a = stokes_to_angles(s[0], s[1], s[2])?;
        if !a.degenerate_azimuth {
            phi.push(a.angles.phi);
        }
        theta.push(a.angles.theta);
    }
    if phi.is_empty() {
        return Err(Error::InsufficientData(format!("state `{}` has no usable azimuths", set.label)));
    }
    Ok(StateAngles {
        label: set.label.clone(),
        phi: unwrap_angles(&phi),
        theta,
    })
}

/// Angles of all four states, keyed 1..=4 in order.
pub fn four_states(sets: &[SampleSet]) -> Result<[StateAngles; 4]> {
    let mut out: Vec<StateAngles> = Vec::with_capacity(4);
    for label in STOKES_LABELS {
        let set = sets
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::InsufficientData(format!("no samples for state {label}")))?;
        out.push(stokes_angles(set)?);
    }
    Ok(out.try_into().expect("four states"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AngularOptions {
    /// Fit one polar-angle distribution for all states.
    pub pooled_theta: bool,
    /// Drop azimuth outliers before Gaussian fits.
    pub outlier_filter: bool,
    pub bins: usize,
}

impl Default for AngularOptions {
    fn default() -> Self {
        AngularOptions {
            pooled_theta: true,
            outlier_filter: true,
            bins: DEFAULT_ANGLE_BINS,
        }
    }
}

fn polar_sets<'a>(states: &'a [StateAngles; 4], pooled: bool) -> Vec<std::borrow::Cow<'a, [f64]>> {
    if pooled {
        let all: Vec<f64> = states.iter().flat_map(|s| s.theta.iter().copied()).collect();
        vec![std::borrow::Cow::Owned(all); 4]
    } else {
        states.iter().map(|s| std::borrow::Cow::Borrowed(&s.theta[..])).collect()
    }
}

/// Binned angular densities built from all samples.
pub fn binned_distribution(states: &[StateAngles; 4], opts: &AngularOptions) -> Result<AngularDistribution> {
    let thetas = polar_sets(states, opts.pooled_theta);
    let mut phi = Vec::with_capacity(4);
    let mut theta = Vec::with_capacity(4);
    for (s, t) in states.iter().zip(&thetas) {
        phi.push(build_binned_pdf(&s.phi, opts.bins)?);
        theta.push(build_binned_pdf(t, opts.bins)?);
    }
    Ok(AngularDistribution::Binned {
        phi: phi.try_into().expect("four states"),
        theta: theta.try_into().expect("four states"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AngularFit {
    pub phi: [FitResult; 4],
    pub theta: [FitResult; 4],
    pub params: GaussianAngles,
}

/// Gaussian fits of the azimuth of each state and of the polar angle.
pub fn fit_angular(states: &[StateAngles; 4], opts: &AngularOptions) -> Result<AngularFit> {
    let keep = |v: &[f64]| -> Vec<f64> {
        if opts.outlier_filter {
            mad_filter(v, DEFAULT_MAD_CUT)
        } else {
            v.to_vec()
        }
    };
    let mut phi = Vec::with_capacity(4);
    let mut kept_theta: Vec<Vec<f64>> = Vec::with_capacity(4);
    for s in states {
        let kept = keep(&s.phi);
        phi.push(fit_gaussian_with_bins(&kept, opts.bins)?);
        // The polar angle of a dropped azimuth outlier is dropped too.
        if opts.outlier_filter && kept.len() != s.phi.len() && s.phi.len() == s.theta.len() {
            let med = median(&s.phi);
            let mad = median(&s.phi.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
            kept_theta.push(
                s.phi
                    .iter()
                    .zip(&s.theta)
                    .filter(|(p, _)| (*p - med).abs() <= DEFAULT_MAD_CUT * mad)
                    .map(|(_, t)| *t)
                    .collect(),
            );
        } else {
            kept_theta.push(s.theta.clone());
        }
    }
    let theta: Vec<FitResult> = if opts.pooled_theta {
        let all: Vec<f64> = kept_theta.concat();
        let f = fit_gaussian_with_bins(&all, opts.bins)?;
        vec![f; 4]
    } else {
        kept_theta
            .iter()
            .map(|t| fit_gaussian_with_bins(t, opts.bins))
            .collect::<Result<_>>()?
    };
    let params = GaussianAngles {
        phi_mean: std::array::from_fn(|i| phi[i].mean),
        phi_sigma: std::array::from_fn(|i| phi[i].sigma),
        theta_mean: std::array::from_fn(|i| theta[i].mean),
        theta_sigma: std::array::from_fn(|i| theta[i].sigma),
    };
    params.validate()?;
    Ok(AngularFit {
        phi: phi.try_into().expect("four states"),
        theta: theta.try_into().expect("four states"),
        params,
    })
}

/// Central `level` intervals of each azimuth and of the pooled polar angle,
/// for the minimum-fidelity search.
pub fn angle_ranges(states: &[StateAngles; 4], level: f64, mode: IntervalMode) -> Result<AngleRanges> {
    let mut phi = [(0.0, 0.0); 4];
    for (slot, s) in phi.iter_mut().zip(states) {
        *slot = confidence_interval(&s.phi, level, mode)?;
    }
    let theta: Vec<f64> = states.iter().flat_map(|s| s.theta.iter().copied()).collect();
    let ranges = AngleRanges {
        phi,
        theta: confidence_interval(&theta, level, mode)?,
    };
    ranges.validate()?;
    Ok(ranges)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensityFit {
    pub mu: FitResult,
    pub nu1: FitResult,
    pub nu2: FitResult,
}

impl IntensityFit {
    pub fn intensities(&self) -> Result<Intensities> {
        Ok(Intensities {
            mu: self.mu.gaussian_params()?,
            nu1: self.nu1.gaussian_params()?,
            nu2: self.nu2.gaussian_params()?,
        })
    }
}

/// Fits all three intensity settings from an intensity sample file.
pub fn fit_intensities(sets: &[SampleSet]) -> Result<IntensityFit> {
    let get = |label: &str| -> Result<FitResult> {
        let set = sets
            .iter()
            .find(|s| s.label == label)
            .ok_or_else(|| Error::InsufficientData(format!("no samples for intensity `{label}`")))?;
        fit_gaussian(set.intensities()?)
    };
    Ok(IntensityFit {
        mu: get("mu")?,
        nu1: get("nu1")?,
        nu2: get("nu2")?,
    })
}
