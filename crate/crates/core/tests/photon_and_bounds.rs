use proptest::prelude::*;

use decoy_core::decoy_bounds::{gain_bounds, poisson_yield_bounds, DecoySet, GainBounds, GainRecord};
use decoy_core::photon_stats::{
    mixed_prob_closed_form, mixed_prob_quadrature, photon_number_prob, GaussianParams, IntensityModel, PhotonTable,
};

fn model() -> impl Strategy<Value = IntensityModel> {
    prop_oneof![
        (0.0..1.0f64).prop_map(|m| IntensityModel::poissonian(m).unwrap()),
        (0.001..1.0f64, 0.0..1.0f64).prop_map(|(m, r)| IntensityModel::gaussian(m, r * m).unwrap()),
        Just(IntensityModel::VacuumOnly),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tables_are_normalized(m in model()) {
        let total: f64 = (0..=60).map(|n| photon_number_prob(n, &m).unwrap()).sum();
        prop_assert!((1.0 - 1e-9..=1.0 + 1e-12).contains(&total), "total {total}");
    }

    #[test]
    fn narrow_mixture_is_poisson(mean in 0.001..1.0f64, rel in 1e-7..1e-4f64) {
        let g = IntensityModel::gaussian(mean, rel * mean).unwrap();
        let p = IntensityModel::poissonian(mean).unwrap();
        for n in 0..=20 {
            let (a, b) = (photon_number_prob(n, &g).unwrap(), photon_number_prob(n, &p).unwrap());
            prop_assert!((a - b).abs() < 1e-6, "n={n}: {a} vs {b}");
        }
    }

    #[test]
    fn closed_form_matches_quadrature(mean in 0.001..1.0f64, rel in 0.01..1.0f64, n in 0u32..=10) {
        let p = GaussianParams::new(mean, rel * mean).unwrap();
        let a = mixed_prob_closed_form(n, &p).unwrap();
        let b = mixed_prob_quadrature(n, &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(b.abs()), "{a} vs {b}");
    }

    #[test]
    fn tail_is_decreasing(mean in 0.001..1.0f64, rel in 0.0..0.5f64) {
        let sigma = rel * mean;
        let m = IntensityModel::gaussian(mean, sigma).unwrap();
        let start = (mean + 5.0 * sigma).floor() as u32 + 1;
        let mut prev = photon_number_prob(start, &m).unwrap();
        for n in start + 1..=60 {
            let p = photon_number_prob(n, &m).unwrap();
            if prev < 1e-290 {
                break;
            }
            prop_assert!(p < prev, "n={n}: {p} >= {prev}");
            prev = p;
        }
    }

    #[test]
    fn wald_interval_brackets_estimate(n in 1.0..1e9f64, frac in 0.0..=1.0f64, eps in 1e-15..0.4f64) {
        let b = gain_bounds(&GainRecord::new(n, (frac * n).floor(), eps).unwrap()).unwrap();
        prop_assert!(0.0 <= b.lower && b.lower <= b.estimate && b.estimate <= b.upper && b.upper <= 1.0);
    }

    /// Yields planted into a random channel are never overestimated when
    /// the gain intervals contain the true gains.
    #[test]
    fn yield_bounds_are_sound(
        y0 in 0.0..0.01f64,
        y1 in 1e-4..0.5f64,
        higher in proptest::collection::vec(0.0..=1.0f64, 59),
        mu in 0.2..0.6f64,
        nu1 in 0.05..0.15f64,
        nu2 in 0.0..0.01f64,
        spreads in (0.0..0.1f64, 0.0..0.1f64),
        widen in proptest::collection::vec((0.0..0.05f64, 0.0..0.05f64), 3),
    ) {
        let set = DecoySet::new(
            IntensityModel::gaussian(mu, spreads.0 * mu).unwrap(),
            IntensityModel::gaussian(nu1, spreads.1 * nu1).unwrap(),
            IntensityModel::poissonian(nu2).unwrap(),
        ).unwrap();
        let yields: Vec<f64> = [y0, y1].into_iter().chain(higher).collect();
        let gain = |t: &PhotonTable, w: (f64, f64)| {
            let q: f64 = (0..=60).map(|n| t.p(n) * yields[n as usize]).sum();
            GainBounds { estimate: q, lower: q * (1.0 - w.0), upper: (q * (1.0 + w.1)).min(1.0), clamped: false }
        };
        let (qm, q1, q2) = (gain(&set.mu, widen[0]), gain(&set.nu1, widen[1]), gain(&set.nu2, widen[2]));
        if let Ok(b) = set.yield_bounds(&qm, &q1, &q2) {
            prop_assert!(b.y0_lower <= y0 * (1.0 + 1e-9) + 1e-15, "{} > {y0}", b.y0_lower);
            prop_assert!(b.y1_lower <= y1 * (1.0 + 1e-9) + 1e-15, "{} > {y1}", b.y1_lower);
        }
    }

    /// Smaller failure probabilities widen the intervals and can only
    /// weaken the single-photon bound.
    #[test]
    fn single_photon_bound_tightens_with_epsilon(n in 1e6..1e10f64, k in 1.0..1e4f64) {
        let (mu, nu1, nu2) = (0.3, 0.1, 0.001);
        let q = |a: f64| 2e-6 + 1.0 - (-0.005 * a).exp();
        let at = |eps: f64| {
            let g = |a: f64| gain_bounds(&GainRecord::new(n, (q(a) * n).round(), eps).unwrap()).unwrap();
            poisson_yield_bounds(&g(mu), &g(nu1), &g(nu2), mu, nu1, nu2).unwrap().y1_lower
        };
        let eps = 1e-6;
        prop_assert!(at(eps / k) <= at(eps));
    }
}

#[test]
fn vacuum_substitution_is_more_conservative_on_the_fixture() {
    use decoy_core::ingest::{fit_intensities, load_samples, Schema};
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/intensity.csv");
    let it = fit_intensities(&load_samples(&path, Schema::Intensity).unwrap()).unwrap().intensities().unwrap();
    let q = |a: f64| 2e-6 + 1.0 - (-0.005 * a).exp();
    let g = |p: &GaussianParams| GainBounds::exact(q(p.mean));
    let (qm, q1, q2) = (g(&it.mu), g(&it.nu1), g(&it.nu2));
    let mixed = DecoySet::new(
        IntensityModel::GaussianMixed(it.mu),
        IntensityModel::GaussianMixed(it.nu1),
        IntensityModel::GaussianMixed(it.nu2),
    )
    .unwrap()
    .yield_bounds(&qm, &q1, &q2)
    .unwrap();
    let vacuum = DecoySet::new(
        IntensityModel::GaussianMixed(it.mu),
        IntensityModel::GaussianMixed(it.nu1),
        IntensityModel::VacuumOnly,
    )
    .unwrap()
    .yield_bounds(&qm, &q1, &q2)
    .unwrap();
    assert!(vacuum.y1_lower <= mixed.y1_lower, "{} > {}", vacuum.y1_lower, mixed.y1_lower);
}

#[test]
fn inflated_weak_decoy_spread_breaks_the_vacuum_condition() {
    use decoy_core::ingest::{fit_intensities, load_samples, Schema};
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/intensity.csv");
    let fit = fit_intensities(&load_samples(&path, Schema::Intensity).unwrap()).unwrap();
    let it = fit.intensities().unwrap();
    let ok = DecoySet::new(
        IntensityModel::GaussianMixed(it.mu),
        IntensityModel::GaussianMixed(it.nu1),
        IntensityModel::GaussianMixed(it.nu2),
    )
    .unwrap();
    assert_eq!(ok.condition_one_violation, None);
    let wide = GaussianParams::new(it.nu2.mean, 5.0 * it.nu2.sigma).unwrap();
    let bad = DecoySet::new(
        IntensityModel::GaussianMixed(it.mu),
        IntensityModel::GaussianMixed(it.nu1),
        IntensityModel::GaussianMixed(wide),
    )
    .unwrap();
    assert_eq!(bad.condition_one_violation, Some(12));
}
