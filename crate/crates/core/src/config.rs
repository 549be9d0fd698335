//! TOML scenario files.
//!
//! ```toml
//! mode = "wang"              # poissonian | gaussian-mixed | vacuum-nu2 | wang
//! wang_z = 1.0
//!
//! [intensities]              # explicit values or `samples = "file.csv"`
//! mu = { mean = 0.3, sigma = 0.025 }
//! nu1 = { mean = 0.1, sigma = 0.01 }
//! nu2 = { mean = 0.001, sigma = 0.009 }
//!
//! [polarization]             # fixed | gaussian | binned | fitted
//! source = "binned"
//! samples = "stokes.csv"
//!
//! [protocol]
//! sift_len_x = 1.36e6
//! f_ec = [[0.01, 1.45], [0.02, 1.35]]
//!
//! [channel]
//! bob_loss_db = 3.0
//! ```
//!
//! Every key is optional; missing keys take the defaults of
//! [`Scenario::default`]. Relative sample paths resolve against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::finite_key::{
    ChannelModel, FecTable, Intensities, PolarizationSource, ProtocolConfig, Scenario, ScenarioMode,
};
use crate::ingest::{
    binned_distribution, fit_angular, fit_intensities, four_states, load_samples, AngularOptions, Schema,
    DEFAULT_ANGLE_BINS,
};
use crate::photon_stats::GaussianParams;
use crate::polarization::{AngularDistribution, GaussianAngles};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ScenarioFile {
    mode: Option<String>,
    wang_z: Option<f64>,
    intensities: IntensitySection,
    polarization: PolarizationSection,
    protocol: ProtocolSection,
    channel: ChannelSection,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsEntry {
    mean: f64,
    #[serde(default)]
    sigma: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct IntensitySection {
    mu: Option<ParamsEntry>,
    nu1: Option<ParamsEntry>,
    nu2: Option<ParamsEntry>,
    samples: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PolarizationSection {
    source: Option<String>,
    delta: Option<f64>,
    phi_mean: Option<[f64; 4]>,
    phi_sigma: Option<[f64; 4]>,
    theta_mean: Option<f64>,
    theta_sigma: Option<f64>,
    samples: Option<PathBuf>,
    bins: Option<usize>,
    pooled_theta: Option<bool>,
    outlier_filter: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ProtocolSection {
    p_x: Option<f64>,
    p_y: Option<f64>,
    p_mu: Option<f64>,
    p_nu1: Option<f64>,
    p_nu2: Option<f64>,
    sift_len_x: Option<f64>,
    hash_len: Option<f64>,
    eps_decoy: Option<f64>,
    eps_pa: Option<f64>,
    eps_ver: Option<f64>,
    bound_count: Option<u32>,
    f_ec: Option<Vec<(f64, f64)>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ChannelSection {
    eta: Option<f64>,
    p_dc: Option<f64>,
    beta_db_per_km: Option<f64>,
    bob_loss_db: Option<f64>,
    p_opt: Option<f64>,
}

/// A scenario together with the data files it was built from.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub inputs: Vec<PathBuf>,
}

/// Parses a scenario mode name; `wang` takes its `z` separately.
pub fn parse_mode(name: &str, wang_z: Option<f64>) -> Result<ScenarioMode> {
    match name {
        "poissonian" => Ok(ScenarioMode::Poissonian),
        "gaussian-mixed" => Ok(ScenarioMode::GaussianMixed),
        "vacuum-nu2" => Ok(ScenarioMode::VacuumNu2),
        "wang" => {
            let z = wang_z.ok_or_else(|| Error::config("wang_z", "required when mode = \"wang\""))?;
            if !(z.is_finite() && z >= 0.0) {
                return Err(Error::config("wang_z", format!("must be finite and >= 0, got {z}")));
            }
            Ok(ScenarioMode::Wang { z })
        }
        other => Err(Error::config(
            "mode",
            format!("unknown mode `{other}`; expected poissonian, gaussian-mixed, vacuum-nu2 or wang"),
        )),
    }
}

/// Parses `wang(1.5)` style names as well as the plain mode names.
pub fn parse_mode_spec(spec: &str) -> Result<ScenarioMode> {
    let spec = spec.trim();
    if let Some(inner) = spec.strip_prefix("wang(").and_then(|s| s.strip_suffix(')')) {
        let z: f64 = inner
            .trim()
            .parse()
            .map_err(|_| Error::config("mode", format!("bad z in `{spec}`")))?;
        return parse_mode("wang", Some(z));
    }
    parse_mode(spec, None)
}

pub fn load_scenario(path: &Path) -> Result<LoadedScenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario(&text, base).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}

/// Builds a scenario from TOML text; `base` resolves relative paths.
pub fn parse_scenario(text: &str, base: &Path) -> Result<LoadedScenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    let mut inputs = Vec::new();
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let defaults = Scenario::default();
    let mode = match &file.mode {
        Some(m) => parse_mode(m, file.wang_z)?,
        None if file.wang_z.is_some() => return Err(Error::config("wang_z", "only valid with mode = \"wang\"")),
        None => defaults.mode,
    };

    let is = &file.intensities;
    let intensities = match &is.samples {
        Some(p) => {
            if is.mu.is_some() || is.nu1.is_some() || is.nu2.is_some() {
                return Err(Error::config(
                    "intensities.samples",
                    "give either explicit intensities or a sample file, not both",
                ));
            }
            let p = resolve(p);
            let fit = fit_intensities(&load_samples(&p, Schema::Intensity)?)?;
            inputs.push(p);
            fit.intensities()?
        }
        None => {
            let d = defaults.intensities;
            let get = |key: &str, e: Option<ParamsEntry>, dflt: GaussianParams| -> Result<GaussianParams> {
                match e {
                    Some(e) => GaussianParams::new(e.mean, e.sigma)
                        .map_err(|err| Error::config(format!("intensities.{key}"), err.to_string())),
                    None => Ok(dflt),
                }
            };
            Intensities {
                mu: get("mu", is.mu, d.mu)?,
                nu1: get("nu1", is.nu1, d.nu1)?,
                nu2: get("nu2", is.nu2, d.nu2)?,
            }
        }
    };

    let polarization = polarization_source(&file.polarization, &resolve, &mut inputs)?;

    let pr = &file.protocol;
    let dp = defaults.protocol;
    let protocol = ProtocolConfig {
        p_x: pr.p_x.unwrap_or(dp.p_x),
        p_y: pr.p_y.unwrap_or(dp.p_y),
        p_mu: pr.p_mu.unwrap_or(dp.p_mu),
        p_nu1: pr.p_nu1.unwrap_or(dp.p_nu1),
        p_nu2: pr.p_nu2.unwrap_or(dp.p_nu2),
        sift_len_x: pr.sift_len_x.unwrap_or(dp.sift_len_x),
        hash_len: pr.hash_len.unwrap_or(dp.hash_len),
        eps_decoy: pr.eps_decoy.unwrap_or(dp.eps_decoy),
        eps_pa: pr.eps_pa.unwrap_or(dp.eps_pa),
        eps_ver: pr.eps_ver.unwrap_or(dp.eps_ver),
        bound_count: pr.bound_count.unwrap_or(dp.bound_count),
        f_ec: match &pr.f_ec {
            Some(points) => FecTable::new(points.clone())
                .map_err(|e| Error::config("protocol.f_ec", e.to_string()))?,
            None => dp.f_ec,
        },
    };
    protocol.validate().map_err(|e| prefix_key("protocol", e))?;

    let ch = &file.channel;
    let dc = defaults.channel;
    let channel = ChannelModel {
        eta: ch.eta.unwrap_or(dc.eta),
        p_dc: ch.p_dc.unwrap_or(dc.p_dc),
        beta_db_per_km: ch.beta_db_per_km.unwrap_or(dc.beta_db_per_km),
        bob_loss_db: ch.bob_loss_db.unwrap_or(dc.bob_loss_db),
        p_opt: ch.p_opt.unwrap_or(dc.p_opt),
    };
    channel.validate().map_err(|e| prefix_key("channel", e))?;

    Ok(LoadedScenario {
        scenario: Scenario {
            intensities,
            mode,
            polarization,
            protocol,
            channel,
        },
        inputs,
    })
}

fn polarization_source(
    ps: &PolarizationSection,
    resolve: &dyn Fn(&Path) -> PathBuf,
    inputs: &mut Vec<PathBuf>,
) -> Result<PolarizationSource> {
    let source = ps.source.as_deref().unwrap_or(if ps.samples.is_some() { "binned" } else { "fixed" });
    let reject = |present: bool, key: &str| -> Result<()> {
        if present {
            Err(Error::config(format!("polarization.{key}"), format!("not used with source = \"{source}\"")))
        } else {
            Ok(())
        }
    };
    let gaussian_keys = ps.phi_mean.is_some() || ps.phi_sigma.is_some() || ps.theta_mean.is_some() || ps.theta_sigma.is_some();
    match source {
        "fixed" => {
            reject(ps.samples.is_some(), "samples")?;
            reject(gaussian_keys, "phi_mean")?;
            let delta = ps.delta.unwrap_or(0.0);
            if !(0.0..=0.5).contains(&delta) {
                return Err(Error::config("polarization.delta", format!("must lie in [0, 1/2], got {delta}")));
            }
            Ok(PolarizationSource::FixedDelta { delta })
        }
        "gaussian" => {
            reject(ps.samples.is_some(), "samples")?;
            reject(ps.delta.is_some(), "delta")?;
            let need = |key: &str| Error::config(format!("polarization.{key}"), "required when source = \"gaussian\"");
            let g = GaussianAngles::pooled(
                ps.phi_mean.ok_or_else(|| need("phi_mean"))?,
                ps.phi_sigma.ok_or_else(|| need("phi_sigma"))?,
                ps.theta_mean.ok_or_else(|| need("theta_mean"))?,
                ps.theta_sigma.ok_or_else(|| need("theta_sigma"))?,
            )
            .map_err(|e| Error::config("polarization", e.to_string()))?;
            Ok(PolarizationSource::Distribution(AngularDistribution::Gaussian(g)))
        }
        "binned" | "fitted" => {
            reject(ps.delta.is_some(), "delta")?;
            reject(gaussian_keys, "phi_mean")?;
            let p = resolve(
                ps.samples
                    .as_deref()
                    .ok_or_else(|| Error::config("polarization.samples", format!("required when source = \"{source}\"")))?,
            );
            let opts = AngularOptions {
                pooled_theta: ps.pooled_theta.unwrap_or(true),
                outlier_filter: ps.outlier_filter.unwrap_or(true),
                bins: ps.bins.unwrap_or(DEFAULT_ANGLE_BINS),
            };
            let states = four_states(&load_samples(&p, Schema::Stokes)?)?;
            inputs.push(p);
            let dist = if source == "binned" {
                binned_distribution(&states, &opts)?
            } else {
                AngularDistribution::Gaussian(fit_angular(&states, &opts)?.params)
            };
            Ok(PolarizationSource::Distribution(dist))
        }
        other => Err(Error::config(
            "polarization.source",
            format!("unknown source `{other}`; expected fixed, gaussian, binned or fitted"),
        )),
    }
}

/// Reads an error-correction table from a CSV file with header `qber,f_ec`.
pub fn load_fec_table(path: &Path) -> Result<FecTable> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Row {
        qber: f64,
        f_ec: f64,
    }
    let shown = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io {
            path: shown.clone(),
            message: e.to_string(),
        })?;
    let mut points = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Parse {
            path: shown.clone(),
            line: e.position().map(|p| p.line()),
            message: e.to_string(),
        })?;
        points.push((row.qber, row.f_ec));
    }
    FecTable::new(points).map_err(|e| Error::config("fec-table", e.to_string()))
}

fn prefix_key(section: &str, e: Error) -> Error {
    match e {
        Error::Config { key, message } => Error::config(format!("{section}.{key}"), message),
        other => other,
    }
}

/// Maps a TOML error to a config error naming the offending key, or to a
/// parse error when the text is not valid TOML at all.
fn toml_error(text: &str, e: &toml::de::Error) -> Error {
    let message = e.message().to_string();
    let Some(span) = e.span() else {
        return Error::Parse {
            path: "<config>".into(),
            line: None,
            message,
        };
    };
    let line_no = text[..span.start.min(text.len())].matches('\n').count();
    let line = text.lines().nth(line_no).unwrap_or("");
    let section = text
        .lines()
        .take(line_no + 1)
        .filter_map(|l| {
            let l = l.trim();
            l.strip_prefix('[').and_then(|s| s.strip_suffix(']')).map(str::trim)
        })
        .last();
    let key = line.split_once('=').map(|(k, _)| k.trim()).filter(|k| {
        !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.')
    });
    match key {
        Some(k) => Error::config(
            match section {
                Some(s) if !line.trim_start().starts_with('[') => format!("{s}.{k}"),
                _ => k.to_string(),
            },
            message,
        ),
        None => Error::Parse {
            path: "<config>".into(),
            line: Some(line_no as u64 + 1),
            message,
        },
    }
}
