use hardball_core::diagnostics::ergodic::ensemble_averages;
use hardball_core::diagnostics::lyapunov::lyapunov_spectrum;
use hardball_core::diagnostics::{ball_avoiding_scan, ergodic_average, richness_census, Observable};
use hardball_core::{sample_liouville, ModelParams};

/// Probability that two independent uniform points of the unit square are
/// closer than `d` (for `d <= 1`).
fn square_distance_cdf(d: f64) -> f64 {
    std::f64::consts::PI * d * d - 8.0 / 3.0 * d.powi(3) + d.powi(4) / 2.0
}

#[test]
fn ensemble_matches_closed_forms() {
    let p = ModelParams::new(2, 2, 0.1).unwrap();
    let n = 200_000;
    let got = ensemble_averages(&p, &[Observable::Proximity, Observable::BoxCoordinate, Observable::SpeedShare], n, 9)
        .unwrap();
    let (lo, hi) = (square_distance_cdf(0.2), square_distance_cdf(0.25));
    let proximity = (hi - lo) / (1.0 - lo);
    assert!((proximity - 0.057556).abs() < 1e-6);
    for ((mean, se), expected) in got.into_iter().zip([proximity, 0.5, 0.5]) {
        assert!((mean - expected).abs() < 4.0 * se, "{mean} vs {expected} (se {se})");
    }
}

#[test]
fn total_energy_is_ergodic_trivially() {
    let p = ModelParams::new(3, 1, 0.1).unwrap();
    let r = ergodic_average(&p, Observable::TotalEnergy, 4, 50.0, 100, 2).unwrap();
    assert!(r.time_averages.iter().all(|&a| (a - 1.0).abs() < 1e-12));
    assert!(r.max_deviation < 1e-12);
}

#[test]
fn census_is_deterministic_across_thread_counts() {
    let p = ModelParams::new(2, 2, 0.1).unwrap();
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let a = serial.install(|| richness_census(&p, 40, 20, 17).unwrap());
    let b = richness_census(&p, 40, 20, 17).unwrap();
    assert_eq!(a, b);
    assert!(a.is_partition());
    let scan_a = serial.install(|| ball_avoiding_scan(&p, 40, 5.0, 3).unwrap());
    assert_eq!(scan_a, ball_avoiding_scan(&p, 40, 5.0, 3).unwrap());
}

#[test]
fn lyapunov_spectrum_is_symplectic() {
    let p = ModelParams::new(2, 2, 0.1).unwrap();
    let r = lyapunov_spectrum(&sample_liouville(&p, 5).unwrap(), 20_000, 1.0, &p).unwrap();
    assert_eq!(r.dim(), 8);
    assert!(r.exponents.windows(2).all(|w| w[0] >= w[1]));
    assert!(r.exponents[0] > 0.3);
    assert!(r.sum_check().passed);
    assert!(r.pairing_checks().iter().all(|c| c.passed));
    assert_eq!(r.zero_band_count(), 2);
}
