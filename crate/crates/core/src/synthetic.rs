//! Seeded generators for synthetic source-characterization data.
//!
//! The committed fixtures under `fixtures/` are produced by
//! [`intensity_rows`] and [`stokes_rows`] with [`FIXTURE_SEED`] and the
//! default specs. Regenerate them with `decoyqkd fixtures`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};

pub const FIXTURE_SEED: u64 = 20_240_611;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalSpec {
    pub mean: f64,
    pub sigma: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntensitySpec {
    pub mu: NormalSpec,
    pub nu1: NormalSpec,
    pub nu2: NormalSpec,
}

impl Default for IntensitySpec {
    fn default() -> Self {
        IntensitySpec {
            mu: NormalSpec {
                mean: 0.3,
                sigma: 0.025,
                count: 10_000,
            },
            nu1: NormalSpec {
                mean: 0.1,
                sigma: 0.01,
                count: 5_000,
            },
            // Wide enough that photodetector noise produces negative readings.
            nu2: NormalSpec {
                mean: 0.001,
                sigma: 0.0092,
                count: 5_000,
            },
        }
    }
}

fn normal(spec: &NormalSpec) -> Result<Normal<f64>> {
    Normal::new(spec.mean, spec.sigma).map_err(|e| Error::domain(format!("bad normal spec: {e}")))
}

pub fn normal_draws(seed: u64, mean: f64, sigma: f64, count: usize) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = normal(&NormalSpec { mean, sigma, count })?;
    Ok((0..count).map(|_| d.sample(&mut rng)).collect())
}

/// `(label, intensity)` rows: all `mu` rows, then `nu1`, then `nu2`.
pub fn intensity_rows(seed: u64, spec: &IntensitySpec) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(spec.mu.count + spec.nu1.count + spec.nu2.count);
    for (label, s) in [("mu", &spec.mu), ("nu1", &spec.nu1), ("nu2", &spec.nu2)] {
        let d = normal(s)?;
        rows.extend((0..s.count).map(|_| (label, d.sample(&mut rng))));
    }
    Ok(rows)
}

/// Four polarization clusters on the sphere. Azimuths scatter normally
/// around `phi0 + offsets[i]`, polar angles around `theta_mean`. A fraction
/// of each state is replaced by sparse points spread uniformly over the
/// quarter turn after the cluster, mimicking polarimeter transients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StokesSpec {
    pub phi0: f64,
    pub offsets: [f64; 4],
    pub phi_sigma: f64,
    pub theta_mean: f64,
    pub theta_sigma: f64,
    pub per_state: usize,
    pub artifact_fraction: [f64; 4],
}

impl Default for StokesSpec {
    fn default() -> Self {
        StokesSpec {
            phi0: 60f64.to_radians(),
            offsets: [0.0, PI + 0.011, FRAC_PI_2, 1.5 * PI - 0.011],
            phi_sigma: 0.040,
            theta_mean: FRAC_PI_2 + 0.05,
            theta_sigma: 0.01,
            per_state: 2_500,
            artifact_fraction: [0.01, 0.02, 0.015, 0.01],
        }
    }
}

/// `(state, [s1, s2, s3])` rows, unit Stokes vectors, states 1..=4 in order.
pub fn stokes_rows(seed: u64, spec: &StokesSpec) -> Result<Vec<(u8, [f64; 3])>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta_d = normal(&NormalSpec {
        mean: spec.theta_mean,
        sigma: spec.theta_sigma,
        count: 0,
    })?;
    let mut rows = Vec::with_capacity(4 * spec.per_state);
    for i in 0..4 {
        let centre = spec.phi0 + spec.offsets[i];
        let phi_d = normal(&NormalSpec {
            mean: centre,
            sigma: spec.phi_sigma,
            count: 0,
        })?;
        let artifacts = (spec.artifact_fraction[i] * spec.per_state as f64).round() as usize;
        for k in 0..spec.per_state {
            let phi = if k < spec.per_state - artifacts {
                phi_d.sample(&mut rng)
            } else {
                centre + rng.random::<f64>() * FRAC_PI_2
            };
            let theta: f64 = theta_d.sample(&mut rng);
            rows.push((
                i as u8 + 1,
                [theta.cos(), theta.sin() * phi.cos(), theta.sin() * phi.sin()],
            ));
        }
    }
    Ok(rows)
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn write_intensity_csv(path: &Path, rows: &[(&str, f64)]) -> Result<()> {
    let mut out = String::from("label,intensity\n");
    for (label, v) in rows {
        out.push_str(&format!("{label},{v:e}\n"));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| io_err(path, e))
}

pub fn write_stokes_csv(path: &Path, rows: &[(u8, [f64; 3])]) -> Result<()> {
    let mut out = String::from("state,s1,s2,s3\n");
    for (state, s) in rows {
        out.push_str(&format!("{state},{:e},{:e},{:e}\n", s[0], s[1], s[2]));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        let a = intensity_rows(7, &IntensitySpec::default()).unwrap();
        let b = intensity_rows(7, &IntensitySpec::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, intensity_rows(8, &IntensitySpec::default()).unwrap());
        let s = stokes_rows(7, &StokesSpec::default()).unwrap();
        assert_eq!(s, stokes_rows(7, &StokesSpec::default()).unwrap());
        assert_eq!(s.len(), 10_000);
        assert!(s.iter().all(|(_, v)| (v.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn written_values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.csv");
        let rows = intensity_rows(1, &IntensitySpec::default()).unwrap();
        write_intensity_csv(&p, &rows).unwrap();
        let sets = crate::ingest::load_samples(&p, crate::ingest::Schema::Intensity).unwrap();
        assert_eq!(sets[0].intensities().unwrap()[0], rows[0].1);
    }
}
