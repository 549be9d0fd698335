//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use decoy_core::decoy_bounds::{wang_q1_lower_z, DecoySet, GainBounds};
use decoy_core::finite_key::{
    distance_grid, statistical_correction, sweep_distances, Intensities, KeyLengthReport, PolarizationSource,
    Scenario, ScenarioMode,
};
use decoy_core::ingest::{
    angle_ranges, binned_distribution, fit_angular, fit_intensities, four_states, load_samples, AngularOptions,
    IntervalMode, Schema,
};
use decoy_core::photon_stats::{mixed_prob_closed_form, mixed_prob_quadrature, GaussianParams, IntensityModel};
use decoy_core::polarization::{
    averaged_state, averaged_state_quadrature, basis_state, delta_from_fidelity, min_fidelity_pure, source_delta,
    AngularDistribution, DensityMatrix2, GaussianAngles,
};
use decoy_core::quad::Tolerance;
use decoy_validation::{max_relative_diff, timed, Checklist};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn with_delta(delta: f64) -> Scenario {
    Scenario {
        polarization: PolarizationSource::FixedDelta { delta },
        ..Scenario::default()
    }
}

fn sweep(s: &Scenario, d: &[f64]) -> Vec<KeyLengthReport> {
    sweep_distances(s, d).expect("non-empty grid")
}

/// Largest distance with a positive key, if any.
fn last_positive(reports: &[KeyLengthReport]) -> Option<f64> {
    reports.iter().filter(|r| r.l_sec > 0.0).map(|r| r.distance_km).reduce(f64::max)
}

fn show(d: Option<f64>) -> String {
    d.map_or("none".into(), |d| format!("{d} km"))
}

fn criterion_1(c: &mut Checklist) {
    let grid = distance_grid(0.0, 250.0, 1.0).unwrap();
    let mut notes = Vec::new();
    let mut pass = true;
    for (delta, target) in [(0.0, 160.0), (3e-6, 120.0), (6e-4, 40.0)] {
        let (reports, took) = timed(|| sweep(&with_delta(delta), &grid));
        let last = last_positive(&reports);
        let ok = last.is_some_and(|d| (d - target).abs() <= 10.0);
        let fast = took.as_secs_f64() < 10.0;
        pass &= ok && fast;
        notes.push(format!(
            "delta={delta:e} last positive {} (want {target}±10) in {:.3}s",
            show(last),
            took.as_secs_f64()
        ));
        if delta == 6e-4 {
            let r0 = reports[0].ratio;
            pass &= (r0 - 0.4).abs() <= 0.05;
            notes.push(format!("delta=6e-4 ratio at 0 km {r0:.4} (want 0.40±0.05)"));
        }
    }
    c.record("1 critical distances", pass, notes.join("; "));
}

fn criterion_2(c: &mut Checklist) {
    let grid = distance_grid(0.0, 100.0, 1.0).unwrap();
    let base = sweep(&with_delta(0.0), &grid);
    let tiny = sweep(&with_delta(1e-8), &grid);
    let (mut worst, mut at) = (0.0f64, 0.0);
    for (a, b) in base.iter().zip(&tiny) {
        let rel = if a.ratio > 0.0 { (a.ratio - b.ratio).abs() / a.ratio } else { f64::INFINITY };
        if rel > worst {
            worst = rel;
            at = a.distance_km;
        }
    }
    c.record(
        "2 negligible imbalance",
        worst <= 0.01,
        format!("max relative ratio change {:.3}% at {at} km (want <= 1%)", 100.0 * worst),
    );
}

fn criterion_3(c: &mut Checklist) {
    let delta = delta_from_fidelity(0.9975).unwrap();
    c.record(
        "3 coin imbalance",
        (delta - 6.25e-4).abs() <= 1e-8,
        format!("delta(0.9975) = {delta:.12e}, want 6.25e-4 ± 1e-8 (difference {:.3e})", delta - 6.25e-4),
    );
}

fn criterion_4(c: &mut Checklist) {
    let grid = distance_grid(0.0, 160.0, 5.0).unwrap();
    let plain = Scenario::default();
    let it = plain.intensities;
    let tiny = |p: GaussianParams| GaussianParams::new(p.mean, 1e-6 * p.mean).unwrap();
    let mixed = Scenario {
        intensities: Intensities {
            mu: tiny(it.mu),
            nu1: tiny(it.nu1),
            nu2: tiny(it.nu2),
        },
        mode: ScenarioMode::GaussianMixed,
        ..plain.clone()
    };
    let a = sweep(&plain, &grid);
    let b = sweep(&mixed, &grid);
    let errors = a.iter().chain(&b).filter(|r| r.error.is_some()).count();
    let mut pairs = Vec::new();
    for (x, y) in a.iter().zip(&b) {
        if let (Some(dx), Some(dy)) = (&x.detail, &y.detail) {
            pairs.extend([
                (dx.x.y0_lower, dy.x.y0_lower),
                (dx.x.y1_lower, dy.x.y1_lower),
                (dx.y.y0_lower, dy.y.y0_lower),
                (dx.y.y1_lower, dy.y.y1_lower),
                (dx.l_sec_raw, dy.l_sec_raw),
                (dx.theta_stat, dy.theta_stat),
            ]);
        }
        pairs.push((x.l_sec, y.l_sec));
    }
    let worst = max_relative_diff(pairs);
    c.record(
        "4 Poissonian limit",
        errors == 0 && worst <= 1e-6,
        format!("max relative difference {worst:.3e} over 0-160 km, {errors} errored points (want <= 1e-6)"),
    );
}

fn criterion_5(c: &mut Checklist) {
    let ((worst, failures), took) = timed(|| {
        let mut worst = 0.0f64;
        let mut failures = Vec::new();
        for mean in [0.001, 0.1, 0.3] {
            for rel in [0.05, 0.2, 1.0] {
                let p = GaussianParams::new(mean, rel * mean).unwrap();
                for n in 0..=10 {
                    match (mixed_prob_closed_form(n, &p), mixed_prob_quadrature(n, &p)) {
                        (Ok(a), Ok(b)) => worst = worst.max(max_relative_diff([(a, b)])),
                        (a, b) => failures.push(format!("n={n} mean={mean} rel={rel}: {a:?} / {b:?}")),
                    }
                }
            }
        }
        (worst, failures)
    });
    c.record(
        "5 closed form vs quadrature",
        failures.is_empty() && worst <= 1e-8 && took.as_secs_f64() < 5.0,
        format!(
            "max relative difference {worst:.3e} (want <= 1e-8), {} evaluation failures, {:.3}s",
            failures.len(),
            took.as_secs_f64()
        ),
    );
}

fn criterion_6(c: &mut Checklist) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut trials, mut skipped, mut violations) = (0, 0, Vec::new());
    while trials < 100 {
        let yields: Vec<f64> = (0..=60)
            .map(|n| match n {
                0 => rng.random_range(0.0..0.01),
                1 => rng.random_range(1e-4..0.5),
                _ => rng.random::<f64>(),
            })
            .collect();

        // Generalized bounds on random Poissonian or Gaussian-mixed sources.
        let mean = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
        let (m, a, b) = (mean(&mut rng, 0.2, 0.6), mean(&mut rng, 0.05, 0.15), mean(&mut rng, 0.0, 0.01));
        let model = |rng: &mut ChaCha8Rng, x: f64, spread: f64| {
            if rng.random_bool(0.3) {
                IntensityModel::poissonian(x).unwrap()
            } else {
                IntensityModel::gaussian(x, rng.random_range(0.0..spread) * x.max(1e-3)).unwrap()
            }
        };
        let models = [model(&mut rng, m, 0.15), model(&mut rng, a, 0.15), model(&mut rng, b, 1.0)];
        let set = DecoySet::new(models[0], models[1], models[2]).unwrap();
        let gain = |t: &decoy_core::photon_stats::PhotonTable| {
            GainBounds::exact((0..=60).map(|n| t.p(n) * yields[n as usize]).sum())
        };
        let (qm, q1, q2) = (gain(&set.mu), gain(&set.nu1), gain(&set.nu2));
        let Ok(y) = set.yield_bounds(&qm, &q1, &q2) else {
            skipped += 1;
            continue;
        };
        let slack = |v: f64| v * (1.0 + 1e-9) + 1e-15;
        if y.y0_lower > slack(yields[0]) {
            violations.push(format!("Y0 {} > {}", y.y0_lower, yields[0]));
        }
        if y.y1_lower > slack(yields[1]) {
            violations.push(format!("Y1 {} > {}", y.y1_lower, yields[1]));
        }

        // Comparison method: each pulse's intensity lies inside its interval.
        let z = rng.random_range(0.5..3.0);
        let params = [
            GaussianParams::new(m, rng.random_range(0.0..0.03) * m).unwrap(),
            GaussianParams::new(a, rng.random_range(0.0..0.03) * a).unwrap(),
            GaussianParams::new(b, rng.random_range(0.0..0.3) * b).unwrap(),
        ];
        let lo = |p: &GaussianParams| (p.mean - z * p.sigma).max(0.0);
        let hi = |p: &GaussianParams| p.mean + z * p.sigma;
        let actual: Vec<f64> = params.iter().map(|p| rng.random_range(lo(p)..=hi(p))).collect();
        let poisson_gain = |x: f64| {
            let t = decoy_core::photon_stats::PhotonTable::new(IntensityModel::poissonian(x).unwrap(), 60).unwrap();
            GainBounds::exact((0..=60).map(|n| t.p(n) * yields[n as usize]).sum())
        };
        let gains: Vec<GainBounds> = actual.iter().map(|&x| poisson_gain(x)).collect();
        let w = wang_q1_lower_z(&gains[0], &gains[1], &gains[2], &params[0], &params[1], &params[2], z).unwrap();
        let (l, u) = (lo(&params[0]), hi(&params[0]));
        let p1_upper = if (l..=u).contains(&1.0) { (-1.0f64).exp() } else { (l * (-l).exp()).max(u * (-u).exp()) };
        if w.q1_lower.value > slack(p1_upper * yields[1]) {
            violations.push(format!("Q1 {} > {}", w.q1_lower.value, p1_upper * yields[1]));
        }
        trials += 1;
    }
    c.record(
        "6 bound soundness",
        violations.is_empty(),
        format!(
            "{trials} planted channels ({skipped} sources rejected by the sign conditions), {} violations{}",
            violations.len(),
            violations.first().map(|v| format!(", first: {v}")).unwrap_or_default()
        ),
    );
}

fn invariant_error(rho: &DensityMatrix2) -> f64 {
    let herm = (rho.entry(0, 1) - rho.entry(1, 0).conj()).norm()
        + rho.entry(0, 0).im.abs()
        + rho.entry(1, 1).im.abs();
    let (l0, l1) = rho.eigenvalues();
    herm.max((rho.trace() - 1.0).abs()).max((-l0.min(l1)).max(0.0))
}

fn criterion_7(c: &mut Checklist) {
    let mut worst = 0.0f64;
    let mut worst_invariant = 0.0f64;
    let mut failures = 0;
    let phi = [0.3, 1.9, 3.5, 5.2];
    for sp in [0.01, 0.1, 0.3] {
        for st in [0.01, 0.1, 0.3] {
            for tm in [FRAC_PI_2 - 0.1, FRAC_PI_2, FRAC_PI_2 + 0.1] {
                let g = GaussianAngles::pooled(phi, [sp; 4], tm, st).unwrap();
                let dist = AngularDistribution::Gaussian(g);
                let mut closed = Vec::new();
                for state in 1..=4 {
                    let a = averaged_state(&dist, state).unwrap();
                    match averaged_state_quadrature(&g, state, Tolerance::default()) {
                        Ok(b) => {
                            worst = worst.max(a.max_abs_diff(&b));
                            worst_invariant = worst_invariant.max(invariant_error(&b));
                        }
                        Err(_) => failures += 1,
                    }
                    worst_invariant = worst_invariant.max(invariant_error(&a));
                    closed.push(a);
                }
                for (x, y) in [(0, 1), (2, 3)] {
                    worst_invariant = worst_invariant.max(invariant_error(&basis_state(&closed[x], &closed[y]).unwrap()));
                }
            }
        }
    }
    c.record(
        "7 averaged states",
        failures == 0 && worst <= 1e-6 && worst_invariant <= 1e-12,
        format!(
            "max entrywise difference {worst:.3e} (want <= 1e-6), max invariant error {worst_invariant:.1e} (want <= 1e-12), {failures} quadrature failures"
        ),
    );
}

fn criterion_8(c: &mut Checklist) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut worst, mut errors, mut non_monotone) = (0.0f64, 0, 0);
    for k in 0..1000 {
        let e = 10f64.powf(rng.random_range(-4.0..-0.7));
        let my = 10f64.powf(rng.random_range(2.0..6.0));
        let mx = 10f64.powf(rng.random_range(3.0..8.0));
        let eps = 10f64.powf(rng.random_range(-15.0..-6.0));
        match statistical_correction(e, my, mx, eps) {
            Ok(s) => {
                worst = worst.max(s.relative_residual);
                if k < 200 {
                    match statistical_correction(e, 10.0 * my, 10.0 * mx, eps) {
                        Ok(t) if t.theta < s.theta => {}
                        _ => non_monotone += 1,
                    }
                }
            }
            Err(_) => errors += 1,
        }
    }
    c.record(
        "8 statistical correction",
        errors == 0 && worst < 1e-6 && non_monotone == 0,
        format!(
            "max relative residual {worst:.2e} over 1000 inputs (want < 1e-6), {errors} solver errors, {non_monotone}/200 non-decreasing under x10 counts"
        ),
    );
}

fn criterion_9(c: &mut Checklist) {
    let sets = load_samples(&fixtures().join("stokes.csv"), Schema::Stokes).unwrap();
    let states = four_states(&sets).unwrap();
    let opts = AngularOptions::default();
    let fit = fit_angular(&states, &opts).unwrap();
    let dg = source_delta(&AngularDistribution::Gaussian(fit.params)).unwrap();
    let binned = binned_distribution(&states, &opts).unwrap();
    let db = source_delta(&binned).unwrap();
    let ranges = angle_ranges(&states, 0.9, IntervalMode::Quantile).unwrap();
    let fmin = min_fidelity_pure(&ranges).unwrap().value;

    let grid = distance_grid(0.0, 100.0, 1.0).unwrap();
    let base = sweep(&with_delta(0.0), &grid);
    let flawed = sweep(
        &Scenario {
            polarization: PolarizationSource::Distribution(binned),
            ..Scenario::default()
        },
        &grid,
    );
    let reduction = |limit: f64| {
        base.iter()
            .zip(&flawed)
            .filter(|(a, _)| a.distance_km <= limit)
            .map(|(a, b)| if a.ratio > 0.0 { 1.0 - b.ratio / a.ratio } else { 0.0 })
            .fold(0.0f64, f64::max)
    };
    let (r50, r100) = (reduction(50.0), reduction(100.0));
    let pass = (2e-6..=4e-6).contains(&dg)
        && (5e-6..=9e-6).contains(&db)
        && (0.996..=0.999).contains(&fmin)
        && r50 <= 0.09
        && r100 <= 0.47;
    c.record(
        "9 synthetic pipeline",
        pass,
        format!(
            "delta_gaussian {dg:.3e} (want 2e-6..4e-6), delta_binned {db:.3e} (want 5e-6..9e-6), F_min {fmin:.5} (want 0.996..0.999), \
             max reduction {:.1}% to 50 km (want <= 9%), {:.1}% to 100 km (want <= 47%)",
            100.0 * r50,
            100.0 * r100
        ),
    );
}

fn criterion_10(c: &mut Checklist) {
    let sets = load_samples(&fixtures().join("intensity.csv"), Schema::Intensity).unwrap();
    let intensities = fit_intensities(&sets).unwrap().intensities().unwrap();
    let grid = distance_grid(0.0, 200.0, 5.0).unwrap();
    let run = |mode| {
        sweep(
            &Scenario {
                intensities,
                mode,
                ..Scenario::default()
            },
            &grid,
        )
    };
    let proposed = run(ScenarioMode::GaussianMixed);
    let wang1 = run(ScenarioMode::Wang { z: 1.0 });
    let wang23 = run(ScenarioMode::Wang { z: 2.3 });
    let below = proposed.iter().zip(&wang1).all(|(p, w)| {
        if p.l_sec > 0.0 {
            w.l_sec < p.l_sec
        } else {
            w.l_sec == 0.0
        }
    });
    let positive = wang1.iter().any(|w| w.l_sec > 0.0);
    let zero = wang23.iter().all(|w| w.l_sec == 0.0);
    c.record(
        "10 comparison-method breakdown",
        below && positive && zero,
        format!(
            "z=1 last positive {} vs proposed {}, strictly below: {below}; z=2.3 zero everywhere: {zero}",
            show(last_positive(&wang1)),
            show(last_positive(&proposed))
        ),
    );
}

fn main() -> std::process::ExitCode {
    let mut c = Checklist::new();
    criterion_1(&mut c);
    criterion_2(&mut c);
    criterion_3(&mut c);
    criterion_4(&mut c);
    criterion_5(&mut c);
    criterion_6(&mut c);
    criterion_7(&mut c);
    criterion_8(&mut c);
    criterion_9(&mut c);
    criterion_10(&mut c);
    c.finish()
}
