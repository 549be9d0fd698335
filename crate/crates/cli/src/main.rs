mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use decoy_core::config::{load_fec_table, load_scenario, parse_mode_spec, LoadedScenario};
use decoy_core::finite_key::{distance_grid, sweep_distances, KeyLengthReport, PolarizationSource, Scenario};
use decoy_core::ingest::{
    angle_ranges, binned_distribution, fit_angular, fit_intensities, four_states, load_samples, AngularOptions,
    IntervalMode, Schema, DEFAULT_ANGLE_BINS,
};
use decoy_core::polarization::{
    delta_from_fidelity, min_fidelity_pure, source_fidelity, AngularDistribution,
};
use decoy_core::synthetic::{
    intensity_rows, stokes_rows, write_intensity_csv, write_stokes_csv, IntensitySpec, StokesSpec, FIXTURE_SEED,
};
use decoy_core::Error;

use manifest::RunManifest;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "decoyqkd", version, about = "Finite-key rates for decoy-state BB84 with imperfect sources")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Secret key length over a distance range.
    Keyrate(KeyrateArgs),
    /// Fit Gaussian models to intensity or Stokes samples.
    Fit(FitArgs),
    /// Fidelity and coin imbalance of a measured polarization source.
    Coin(CoinArgs),
    /// Key ratio of several modes or imbalances over one distance grid.
    Compare(CompareArgs),
    /// Write the synthetic sample files.
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct RangeArgs {
    #[arg(long, default_value_t = 0.0)]
    from_km: f64,
    #[arg(long, default_value_t = 170.0)]
    to_km: f64,
    #[arg(long, default_value_t = 5.0)]
    step_km: f64,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV with header `qber,f_ec` replacing the error-correction table.
    #[arg(long)]
    fec_table: Option<PathBuf>,
}

#[derive(Args)]
struct KeyrateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    range: RangeArgs,
    /// Override the scenario mode, e.g. `gaussian-mixed` or `wang(1)`.
    #[arg(long)]
    mode: Option<String>,
    /// Override the polarization source with a fixed coin imbalance.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write every report as JSON next to the CSV.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemaArg {
    Intensity,
    Stokes,
}

#[derive(Args)]
struct AngleArgs {
    #[arg(long, default_value_t = DEFAULT_ANGLE_BINS)]
    bins: usize,
    /// Fit the polar angle of each state separately.
    #[arg(long)]
    per_state_theta: bool,
    /// Keep azimuth outliers in Gaussian fits.
    #[arg(long)]
    no_outlier_filter: bool,
}

impl AngleArgs {
    fn options(&self) -> AngularOptions {
        AngularOptions {
            pooled_theta: !self.per_state_theta,
            outlier_filter: !self.no_outlier_filter,
            bins: self.bins,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    schema: SchemaArg,
    #[command(flatten)]
    angles: AngleArgs,
    /// JSON output file; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum CoinMode {
    Binned,
    Gaussian,
    Minfid,
}

#[derive(Clone, Copy, ValueEnum)]
enum IntervalArg {
    Quantile,
    Gaussian,
}

#[derive(Args)]
struct CoinArgs {
    /// Stokes sample file.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    mode: CoinMode,
    /// Confidence level of the angle intervals (minfid mode).
    #[arg(long, default_value_t = 0.9)]
    level: f64,
    /// How the angle intervals are built; required in minfid mode.
    #[arg(long, value_enum, required_if_eq("mode", "minfid"))]
    interval: Option<IntervalArg>,
    #[command(flatten)]
    angles: AngleArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    range: RangeArgs,
    /// Comma-separated entries: mode names (`poissonian`, `wang(1)`, ...)
    /// or fixed imbalances (`delta=1e-8`).
    #[arg(long, value_delimiter = ',', required = true)]
    modes: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FixturesArgs {
    #[arg(long, default_value_t = FIXTURE_SEED)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

/// An error with the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    /// Errors while reading the scenario are configuration errors.
    fn config(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } | Error::Parse { .. } | Error::Io { .. } => EXIT_CONFIG,
            ref other => code_for(other),
        };
        Failure::new(code, e.to_string())
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure::new(EXIT_DATA, format!("{}: {e}", path.display()))
    }
}

fn code_for(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => EXIT_CONFIG,
        Error::Parse { .. } | Error::Io { .. } | Error::InsufficientData(_) | Error::DegenerateFit(_) => EXIT_DATA,
        Error::Domain(_) | Error::Numerical(_) | Error::InvalidBound(_) | Error::Invariant(_) => EXIT_NUMERICAL,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(code_for(&e), e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DECOYQKD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keyrate(a) => cmd_keyrate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Coin(a) => cmd_coin(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::Fixtures(a) => cmd_fixtures(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(args: &ScenarioArgs) -> CliResult<LoadedScenario> {
    let mut loaded = match &args.config {
        Some(p) => load_scenario(p).map_err(Failure::config)?,
        None => LoadedScenario {
            scenario: Scenario::default(),
            inputs: Vec::new(),
        },
    };
    if let Some(p) = &args.config {
        loaded.inputs.insert(0, p.clone());
    }
    if let Some(p) = &args.fec_table {
        loaded.scenario.protocol.f_ec = load_fec_table(p).map_err(Failure::config)?;
        loaded.inputs.push(p.clone());
    }
    Ok(loaded)
}

fn grid(r: &RangeArgs) -> CliResult<Vec<f64>> {
    distance_grid(r.from_km, r.to_km, r.step_km).map_err(|e| Failure::new(EXIT_CONFIG, e.to_string()))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

#[derive(Serialize)]
struct KeyRow {
    distance_km: f64,
    l_sec: f64,
    l_ver: f64,
    ratio: f64,
    l_sec_raw: Option<f64>,
    gain_mu: Option<f64>,
    qber_mu: Option<f64>,
    y0_lower_x: Option<f64>,
    y1_lower_x: Option<f64>,
    y1_lower_y: Option<f64>,
    q1_lower_x: Option<f64>,
    m1_lower_x: Option<f64>,
    m1_lower_y: Option<f64>,
    m0_lower_y: Option<f64>,
    e1_upper_y: Option<f64>,
    delta: Option<f64>,
    delta_prime: Option<f64>,
    theta_coin: Option<f64>,
    theta_stat: Option<f64>,
    e_ph_upper_x: Option<f64>,
    leak_bits: Option<f64>,
    f_ec: Option<f64>,
    clamped: Option<bool>,
    error: Option<String>,
}

impl From<&KeyLengthReport> for KeyRow {
    fn from(r: &KeyLengthReport) -> Self {
        let d = r.detail.as_ref();
        KeyRow {
            distance_km: r.distance_km,
            l_sec: r.l_sec,
            l_ver: r.l_ver,
            ratio: r.ratio,
            l_sec_raw: d.map(|d| d.l_sec_raw),
            gain_mu: d.map(|d| d.gain_mu),
            qber_mu: d.map(|d| d.qber_mu),
            y0_lower_x: d.map(|d| d.x.y0_lower),
            y1_lower_x: d.map(|d| d.x.y1_lower),
            y1_lower_y: d.map(|d| d.y.y1_lower),
            q1_lower_x: d.map(|d| d.x.q1_lower),
            m1_lower_x: d.map(|d| d.x.m1_lower),
            m1_lower_y: d.map(|d| d.y.m1_lower),
            m0_lower_y: d.map(|d| d.m0_y_lower),
            e1_upper_y: d.map(|d| d.e1_y_upper),
            delta: d.map(|d| d.delta),
            delta_prime: d.map(|d| d.delta_prime),
            theta_coin: d.map(|d| d.theta_coin),
            theta_stat: d.map(|d| d.theta_stat),
            e_ph_upper_x: d.map(|d| d.e_ph_x_upper),
            leak_bits: d.map(|d| d.leak.bits),
            f_ec: d.map(|d| d.leak.f_ec),
            clamped: d.map(|d| d.any_clamped),
            error: r.error.as_ref().map(|e| e.to_string()),
        }
    }
}

fn write_csv<R: Serialize>(path: &Path, rows: impl IntoIterator<Item = R>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Failure::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Failure::io(path, e))?;
    }
    w.flush().map_err(|e| Failure::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Failure::io(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Failure::io(path, e))
}

fn cmd_keyrate(a: &KeyrateArgs) -> CliResult<()> {
    let mut loaded = load(&a.scenario)?;
    if let Some(m) = &a.mode {
        loaded.scenario.mode = parse_mode_spec(m).map_err(Failure::config)?;
    }
    if let Some(delta) = a.delta {
        if !(0.0..=0.5).contains(&delta) {
            return Err(Failure::new(EXIT_CONFIG, format!("--delta must lie in [0, 1/2], got {delta}")));
        }
        loaded.scenario.polarization = PolarizationSource::FixedDelta { delta };
    }
    let distances = grid(&a.range)?;
    let reports = sweep_distances(&loaded.scenario, &distances)?;
    for r in &reports {
        if let Some(e) = &r.error {
            log::warn!("{} km: {e}", r.distance_km);
        }
    }
    write_csv(&a.out, reports.iter().map(KeyRow::from))?;
    let mut outputs = vec![a.out.clone()];
    if a.json {
        let p = a.out.with_extension("json");
        write_json(&p, &reports)?;
        outputs.push(p);
    }
    RunManifest::new("keyrate", to_json(&loaded.scenario))
        .finish(&loaded.inputs, &outputs, &a.out)
        .map_err(|e| Failure::io(&a.out, e))?;
    if let Some(first) = reports.iter().find_map(|r| r.error.as_ref()).filter(|_| reports.iter().all(|r| r.error.is_some())) {
        return Err(Failure::new(EXIT_NUMERICAL, format!("no distance produced a result: {first}")));
    }
    Ok(())
}

fn emit<T: Serialize>(command: &str, value: &T, input: &Path, out: Option<&Path>) -> CliResult<()> {
    match out {
        Some(p) => {
            write_json(p, value)?;
            RunManifest::new(command, to_json(value))
                .finish(&[input.to_path_buf()], &[p.to_path_buf()], p)
                .map_err(|e| Failure::io(p, e))?;
        }
        None => println!("{}", serde_json::to_string_pretty(value).unwrap_or_default()),
    }
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    match a.schema {
        SchemaArg::Intensity => {
            let fit = fit_intensities(&load_samples(&a.input, Schema::Intensity)?)?;
            for (label, f) in [("mu", &fit.mu), ("nu1", &fit.nu1), ("nu2", &fit.nu2)] {
                if f.poor_fit {
                    log::warn!("{label}: poor Gaussian fit (goodness {:.3})", f.goodness);
                }
            }
            emit("fit", &fit, &a.input, a.out.as_deref())
        }
        SchemaArg::Stokes => {
            let states = four_states(&load_samples(&a.input, Schema::Stokes)?)?;
            let fit = fit_angular(&states, &a.angles.options())?;
            emit("fit", &fit, &a.input, a.out.as_deref())
        }
    }
}

#[derive(Serialize)]
struct CoinReport {
    mode: CoinMode,
    fidelity: f64,
    delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi_ranges: Option<[(f64, f64); 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_range: Option<(f64, f64)>,
}

fn cmd_coin(a: &CoinArgs) -> CliResult<()> {
    let states = four_states(&load_samples(&a.input, Schema::Stokes)?)?;
    let opts = a.angles.options();
    let report = match a.mode {
        CoinMode::Binned | CoinMode::Gaussian => {
            let dist = if a.mode == CoinMode::Binned {
                binned_distribution(&states, &opts)?
            } else {
                AngularDistribution::Gaussian(fit_angular(&states, &opts)?.params)
            };
            let f = source_fidelity(&dist)?;
            CoinReport {
                mode: a.mode,
                fidelity: f,
                delta: delta_from_fidelity(f)?,
                level: None,
                phi_ranges: None,
                theta_range: None,
            }
        }
        CoinMode::Minfid => {
            let mode = match a.interval {
                Some(IntervalArg::Quantile) => IntervalMode::Quantile,
                Some(IntervalArg::Gaussian) => IntervalMode::Gaussian,
                None => return Err(Failure::new(EXIT_CONFIG, "minfid mode needs --interval")),
            };
            let ranges = angle_ranges(&states, a.level, mode)?;
            let m = min_fidelity_pure(&ranges)?;
            CoinReport {
                mode: a.mode,
                fidelity: m.value,
                delta: delta_from_fidelity(m.value)?,
                level: Some(a.level),
                phi_ranges: Some(ranges.phi),
                theta_range: Some(ranges.theta),
            }
        }
    };
    println!("fidelity = {:.12}", report.fidelity);
    println!("delta = {:.6e}", report.delta);
    if let (Some(phi), Some(theta)) = (report.phi_ranges, report.theta_range) {
        for (i, (lo, hi)) in phi.iter().enumerate() {
            println!("phi_{} in [{lo:.6}, {hi:.6}]", i + 1);
        }
        println!("theta in [{:.6}, {:.6}]", theta.0, theta.1);
    }
    if let Some(p) = &a.out {
        emit("coin", &report, &a.input, Some(p))?;
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs) -> CliResult<()> {
    let loaded = load(&a.scenario)?;
    let distances = grid(&a.range)?;
    let mut columns: Vec<(String, Vec<KeyLengthReport>)> = Vec::new();
    let mut resolved = Vec::new();
    for entry in &a.modes {
        let entry = entry.trim();
        let mut s = loaded.scenario.clone();
        if let Some(v) = entry.strip_prefix("delta=") {
            let delta: f64 = v
                .parse()
                .map_err(|_| Failure::new(EXIT_CONFIG, format!("bad imbalance in `{entry}`")))?;
            if !(0.0..=0.5).contains(&delta) {
                return Err(Failure::new(EXIT_CONFIG, format!("`{entry}`: delta must lie in [0, 1/2]")));
            }
            s.polarization = PolarizationSource::FixedDelta { delta };
        } else {
            s.mode = parse_mode_spec(entry).map_err(Failure::config)?;
        }
        let reports = sweep_distances(&s, &distances)?;
        resolved.push((entry.to_string(), to_json(&s)));
        columns.push((entry.to_string(), reports));
    }
    if columns.iter().all(|(_, rs)| rs.iter().all(|r| r.error.is_some())) {
        return Err(Failure::new(EXIT_NUMERICAL, "no mode produced a result at any distance"));
    }

    let mut w = csv::Writer::from_path(&a.out).map_err(|e| Failure::io(&a.out, e))?;
    let mut header = vec!["distance_km".to_string()];
    header.extend(columns.iter().map(|(name, _)| format!("ratio_{name}")));
    w.write_record(&header).map_err(|e| Failure::io(&a.out, e))?;
    for (k, d) in distances.iter().enumerate() {
        let mut row = vec![d.to_string()];
        row.extend(columns.iter().map(|(_, rs)| match rs[k].error {
            Some(_) => String::new(),
            None => rs[k].ratio.to_string(),
        }));
        w.write_record(&row).map_err(|e| Failure::io(&a.out, e))?;
    }
    w.flush().map_err(|e| Failure::io(&a.out, e))?;
    let config: serde_json::Map<String, serde_json::Value> = resolved.into_iter().collect();
    RunManifest::new("compare", serde_json::Value::Object(config))
        .finish(&loaded.inputs, std::slice::from_ref(&a.out), &a.out)
        .map_err(|e| Failure::io(&a.out, e))?;
    Ok(())
}

fn cmd_fixtures(a: &FixturesArgs) -> CliResult<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::io(&a.out, e))?;
    let ispec = IntensitySpec::default();
    let sspec = StokesSpec::default();
    let ipath = a.out.join("intensity.csv");
    let spath = a.out.join("stokes.csv");
    write_intensity_csv(&ipath, &intensity_rows(a.seed, &ispec)?)?;
    write_stokes_csv(&spath, &stokes_rows(a.seed, &sspec)?)?;
    #[derive(Serialize)]
    struct Specs<'a> {
        seed: u64,
        intensity: &'a IntensitySpec,
        stokes: &'a StokesSpec,
    }
    let specs = Specs {
        seed: a.seed,
        intensity: &ispec,
        stokes: &sspec,
    };
    RunManifest::new("fixtures", to_json(&specs))
        .finish(&[], &[ipath.clone(), spath], &ipath)
        .map_err(|e| Failure::io(&ipath, e))?;
    println!("wrote {}", a.out.display());
    Ok(())
}
