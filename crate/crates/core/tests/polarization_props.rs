use std::f64::consts::{FRAC_PI_2, PI, TAU};

use proptest::prelude::*;

use decoy_core::polarization::{
    averaged_state, basis_state, bloch_projector, fidelity, fidelity_uhlmann, min_fidelity_pure, pure_state_fidelity,
    source_fidelity, AngleRanges, AngularDistribution, BlochAngles, DensityMatrix2, GaussianAngles, Histogram,
};

fn assert_valid(rho: &DensityMatrix2) -> Result<(), TestCaseError> {
    let herm = (rho.entry(0, 1) - rho.entry(1, 0).conj()).norm();
    let (l0, l1) = rho.eigenvalues();
    prop_assert!(herm <= 1e-12, "not Hermitian: {herm}");
    prop_assert!((rho.trace() - 1.0).abs() <= 1e-12, "trace {}", rho.trace());
    prop_assert!(l0.min(l1) >= -1e-12, "eigenvalues {l0} {l1}");
    Ok(())
}

fn gaussian_angles() -> impl Strategy<Value = GaussianAngles> {
    (
        proptest::array::uniform4(0.0..TAU),
        proptest::array::uniform4(0.0..0.3f64),
        FRAC_PI_2 - 0.3..FRAC_PI_2 + 0.3,
        0.0..0.3f64,
    )
        .prop_map(|(pm, ps, tm, ts)| GaussianAngles::pooled(pm, ps, tm, ts).unwrap())
}

fn histogram() -> impl Strategy<Value = Histogram> {
    (0.0..TAU, 0.01..1.0f64, proptest::collection::vec(0.0..1.0f64, 4..40)).prop_map(|(start, width, w)| {
        let total: f64 = w.iter().sum::<f64>().max(1e-9);
        let step = width / w.len() as f64;
        let edges: Vec<f64> = (0..=w.len()).map(|k| start + step * k as f64).collect();
        let density = w
            .iter()
            .zip(edges.windows(2))
            .map(|(x, e)| if total > 1e-9 { x / total / (e[1] - e[0]) } else { 1.0 / width })
            .collect();
        Histogram::new(edges, density).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn averaged_states_are_valid(g in gaussian_angles()) {
        let dist = AngularDistribution::Gaussian(g);
        let rho: Vec<DensityMatrix2> = (1..=4).map(|i| averaged_state(&dist, i).unwrap()).collect();
        for r in &rho {
            assert_valid(r)?;
        }
        let x = basis_state(&rho[0], &rho[1]).unwrap();
        let y = basis_state(&rho[2], &rho[3]).unwrap();
        assert_valid(&x)?;
        assert_valid(&y)?;
        let f = fidelity(&x, &y).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((f - fidelity(&y, &x).unwrap()).abs() < 1e-14);
        prop_assert!((f - fidelity_uhlmann(&x, &y)).abs() < 1e-9, "{f} vs {}", fidelity_uhlmann(&x, &y));
        prop_assert!((fidelity(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn binned_states_are_valid(phi in histogram(), theta in histogram(), state in 1usize..=4) {
        let t = Histogram::new(
            theta.edges().iter().map(|e| e * 0.4).collect(),
            theta.density().iter().map(|d| d / 0.4).collect(),
        ).unwrap();
        let dist = AngularDistribution::Binned {
            phi: std::array::from_fn(|_| phi.clone()),
            theta: std::array::from_fn(|_| t.clone()),
        };
        assert_valid(&averaged_state(&dist, state).unwrap())?;
    }

    #[test]
    fn binned_normalization_holds_for_any_bin_count(bins in 4usize..200, seed in 0u64..1000) {
        let v = decoy_core::synthetic::normal_draws(seed, 1.0, 0.3, 500).unwrap();
        let h = decoy_core::ingest::build_binned_pdf(&v, bins).unwrap();
        let total: f64 = h.probabilities().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn perfect_preparation_has_no_imbalance(phi0 in 0.0..TAU) {
        let proj = |phi: f64| bloch_projector(BlochAngles::new(phi, FRAC_PI_2).unwrap());
        let x = basis_state(&proj(phi0), &proj(phi0 + PI)).unwrap();
        let y = basis_state(&proj(phi0 + FRAC_PI_2), &proj(phi0 + 1.5 * PI)).unwrap();
        prop_assert!(x.max_abs_diff(&y) < 1e-15);
        prop_assert!((fidelity(&x, &y).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn global_rotation_keeps_fidelity(g in gaussian_angles(), phi0 in 0.0..TAU) {
        let f = source_fidelity(&AngularDistribution::Gaussian(g)).unwrap();
        let mut r = g;
        for m in r.phi_mean.iter_mut() {
            *m += phi0;
        }
        let fr = source_fidelity(&AngularDistribution::Gaussian(r)).unwrap();
        prop_assert!((f - fr).abs() < 1e-12, "{f} vs {fr}");
    }

    #[test]
    fn minimum_is_below_sampled_configurations(
        centre in 0.0..TAU,
        widths in proptest::array::uniform4(0.0..0.3f64),
        tw in 0.0..0.3f64,
        samples in proptest::collection::vec((proptest::array::uniform4(0.0..1.0f64), 0.0..1.0f64), 50),
    ) {
        let offsets = [0.0, PI, FRAC_PI_2, 1.5 * PI];
        let phi: [(f64, f64); 4] = std::array::from_fn(|i| {
            let c = centre + offsets[i];
            (c - widths[i] / 2.0, c + widths[i] / 2.0)
        });
        let ranges = AngleRanges { phi, theta: (FRAC_PI_2 - tw, FRAC_PI_2 + 0.5 * tw) };
        let m = min_fidelity_pure(&ranges).unwrap();
        for (u, v) in samples {
            let p: [f64; 4] = std::array::from_fn(|i| phi[i].0 + u[i] * (phi[i].1 - phi[i].0));
            let t = ranges.theta.0 + v * (ranges.theta.1 - ranges.theta.0);
            prop_assert!(m.value <= pure_state_fidelity(p, t) + 1e-12);
        }
    }
}

/// Brute-force oracle for symmetric +-0.05 rad intervals. The objective is
/// smallest at the polar angle closest to pi/2, so only the four azimuths
/// are searched.
#[test]
fn minimum_matches_brute_force_on_symmetric_intervals() {
    let w = 0.05;
    let ideal = [0.0, PI, FRAC_PI_2, 1.5 * PI];
    let phi: [(f64, f64); 4] = std::array::from_fn(|i| (ideal[i] - w, ideal[i] + w));
    let ranges = AngleRanges { phi, theta: (FRAC_PI_2 - 0.02, FRAC_PI_2 + 0.02) };
    let m = min_fidelity_pure(&ranges).unwrap();

    for (i, p) in m.phi.iter().enumerate() {
        assert!(phi[i].0 - 1e-15 <= *p && *p <= phi[i].1 + 1e-15);
    }
    assert!((ranges.theta.0..=ranges.theta.1).contains(&m.theta));
    assert!((pure_state_fidelity(m.phi, m.theta) - m.value).abs() < 1e-15);

    let n = 48;
    let g: Vec<f64> = (0..n).map(|k| -w + 2.0 * w * k as f64 / (n - 1) as f64).collect();
    let mut brute = f64::INFINITY;
    for a in &g {
        for b in &g {
            for c in &g {
                for d in &g {
                    let p = [ideal[0] + a, ideal[1] + b, ideal[2] + c, ideal[3] + d];
                    brute = brute.min(pure_state_fidelity(p, FRAC_PI_2));
                }
            }
        }
    }
    assert!(m.value <= brute + 1e-14, "{} > {brute}", m.value);
    assert!(m.value < 1.0);
}
