//! Oracle checks of the exit-time law: quadrature, finite differences,
//! and dense grids stand in for the closed forms they validate.

use approx::assert_relative_eq;
use proptest::prelude::*;

use rsm_core::model::{
    log_survival, mixture_pdf, optimal_threshold, peak_time, tunnel_out_cdf, tunnel_out_pdf,
    visibility, PeakTime, ReadModel,
};
use rsm_core::numerics::{adaptive_simpson, golden_min};
use rsm_core::Spin;

/// Grid of representative models: shape exponents from shallow to steep,
/// start detunings from deep to near threshold, split and degenerate.
fn model_grid() -> Vec<ReadModel> {
    let r = 0.3965;
    let t_e = 0.84;
    let k_t = 8.617333262e-5 * t_e;
    let mut out = Vec::new();
    for p in [0.3, 1.0, 2.0, 4.0, 10.0] {
        let gamma = p * r / k_t;
        for x0 in [-12.0, -6.42, -3.0] {
            for e_z in [0.0, 3.02e-4] {
                out.push(ReadModel::new(gamma, t_e, r, x0 * k_t, e_z).unwrap());
            }
        }
    }
    out
}

/// Horizon beyond which survival is numerically negligible.
fn deep_horizon(m: &ReadModel, spin: Spin) -> f64 {
    let mut t = m.k_t() / m.r;
    while log_survival(m, spin, t) > -34.0 {
        t *= 2.0;
        assert!(t.is_finite());
    }
    t
}

#[test]
fn density_integrates_to_unity() {
    for m in model_grid() {
        for spin in [Spin::Up, Spin::Down] {
            let t_hi = deep_horizon(&m, spin);
            let f = |t: f64| tunnel_out_pdf(&m, spin, t);
            let mass = adaptive_simpson(&f, 0.0, t_hi, 1e-9);
            assert!(
                (mass - 1.0).abs() <= 1e-6,
                "mass {mass} for gamma {} x0 {}",
                m.gamma,
                m.eps0_down / m.k_t()
            );
        }
    }
}

#[test]
fn density_is_the_derivative_of_the_capture_curve() {
    for m in model_grid() {
        let spin = Spin::Down;
        let t_hi = deep_horizon(&m, spin);
        let f_peak = match peak_time(&m, spin) {
            PeakTime::Interior(t) => tunnel_out_pdf(&m, spin, t),
            PeakTime::Boundary => tunnel_out_pdf(&m, spin, 0.0),
        };
        for k in 0..100 {
            // log-spaced grid over four decades up to the horizon
            let t = t_hi * 10f64.powf(-4.0 * (1.0 - (k as f64 + 0.5) / 100.0));
            let h = 1e-5 * t.max(m.k_t() / m.r);
            let fd = (tunnel_out_cdf(&m, spin, t + h) - tunnel_out_cdf(&m, spin, t - h))
                / (2.0 * h);
            let f = tunnel_out_pdf(&m, spin, t);
            let scale = f.abs().max(1e-3 * f_peak);
            assert!(
                (fd - f).abs() / scale <= 1e-6,
                "dC/dt {fd} vs f {f} at t {t} (gamma {})",
                m.gamma
            );
        }
    }
}

/// Numeric argmax of the density, independent of the closed form.
fn numeric_peak(m: &ReadModel, spin: Spin) -> Option<f64> {
    let t_hi = deep_horizon(m, spin);
    let n = 200_000;
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..n {
        let t = t_hi * (k as f64 + 0.5) / n as f64;
        let f = tunnel_out_pdf(m, spin, t);
        if f > best.1 {
            best = (k, f);
        }
    }
    if best.0 == 0 {
        return None; // still rising into the first bin: boundary peak
    }
    let lo = t_hi * (best.0 as f64 - 1.0) / n as f64;
    let hi = t_hi * (best.0 as f64 + 2.0) / n as f64;
    let neg = |t: f64| -tunnel_out_pdf(m, spin, t);
    Some(golden_min(&neg, lo, hi, 1e-14 * t_hi).0)
}

#[test]
fn analytic_peaks_match_numeric_argmax() {
    for m in model_grid() {
        for spin in [Spin::Up, Spin::Down] {
            match peak_time(&m, spin) {
                PeakTime::Interior(t_star) => {
                    let t_num = numeric_peak(&m, spin).expect("interior peak expected");
                    assert_relative_eq!(t_star, t_num, max_relative = 1e-5);
                }
                PeakTime::Boundary => {
                    // density must be non-increasing from the ramp start
                    let t_ref = m.k_t() / m.r;
                    assert!(
                        tunnel_out_pdf(&m, spin, 1e-4 * t_ref)
                            >= tunnel_out_pdf(&m, spin, 1e-2 * t_ref)
                    );
                }
            }
        }
    }
}

#[test]
fn peak_separation_is_zeeman_energy_over_ramp_rate() {
    for m in model_grid() {
        if m.e_z == 0.0 {
            continue;
        }
        let (up, down) = (peak_time(&m, Spin::Up), peak_time(&m, Spin::Down));
        if let (PeakTime::Interior(_), PeakTime::Interior(_)) = (up, down) {
            let t_up = numeric_peak(&m, Spin::Up).unwrap();
            let t_down = numeric_peak(&m, Spin::Down).unwrap();
            let expected = m.e_z / m.r;
            assert_relative_eq!(t_down - t_up, expected, max_relative = 1e-3);
        }
    }
}

#[test]
fn capture_curves_are_not_time_shifted_copies() {
    // the two spin curves peak E_Z/r apart but have different shapes, so
    // shifting one onto the other must NOT reproduce it
    let m = ReadModel::new(1.05e4, 0.84, 0.3965, -4.649e-4, 3.02e-4).unwrap();
    let shift = m.e_z / m.r;
    let mut worst = 0.0f64;
    for k in 1..200 {
        let t = 2.5e-3 * k as f64 / 200.0;
        let diff = (tunnel_out_cdf(&m, Spin::Up, t) - tunnel_out_cdf(&m, Spin::Down, t + shift))
            .abs();
        worst = worst.max(diff);
    }
    assert!(
        worst > 1e-3,
        "curves coincide under a shift (max diff {worst}); the shape identity is stronger than it should be"
    );
}

#[test]
fn optimal_threshold_matches_dense_grid_scan() {
    for m in model_grid() {
        if m.e_z == 0.0 {
            continue;
        }
        let (t_star, v_star) = optimal_threshold(&m).unwrap();
        assert!(t_star > 0.0);
        let t_hi = deep_horizon(&m, Spin::Down);
        let mut v_grid = f64::NEG_INFINITY;
        for k in 0..100_000 {
            let t = t_hi * (k as f64 + 0.5) / 1e5;
            v_grid = v_grid.max(visibility(&m, t));
        }
        assert!(
            v_star >= v_grid - 1e-4,
            "threshold visibility {v_star} below grid max {v_grid}"
        );
        assert_relative_eq!(visibility(&m, t_star), v_star, epsilon = 1e-12);
    }
}

#[test]
fn visibility_is_the_mean_of_the_two_accuracies() {
    let m = ReadModel::new(1.05e4, 0.84, 0.3965, -4.649e-4, 3.02e-4).unwrap();
    for t in [1e-4, 5e-4, 1.2e-3, 2.9e-3] {
        let direct = 0.5
            * (tunnel_out_cdf(&m, Spin::Up, t) + 1.0 - tunnel_out_cdf(&m, Spin::Down, t));
        assert_relative_eq!(visibility(&m, t), direct, epsilon = 1e-14);
    }
}

#[test]
fn extreme_detunings_stay_finite() {
    let m = ReadModel::new(1.05e4, 0.84, 0.3965, -4.649e-4, 3.02e-4).unwrap();
    let k_t = m.k_t();
    for x in [-500.0, -120.0, -1.0, 0.0, 1.0, 120.0, 500.0] {
        // choose t so the normalized detuning hits x exactly
        let t = (x * k_t - m.eps0_down) / m.r;
        if t < 0.0 {
            continue;
        }
        for spin in [Spin::Up, Spin::Down] {
            let f = tunnel_out_pdf(&m, spin, t);
            let c = tunnel_out_cdf(&m, spin, t);
            let s = log_survival(&m, spin, t);
            assert!(f.is_finite() && f >= 0.0, "pdf {f} at x {x}");
            assert!((0.0..=1.0).contains(&c), "cdf {c} at x {x}");
            assert!(s <= 0.0 && !s.is_nan(), "log survival {s} at x {x}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn capture_curve_is_monotone_and_bounded(
        gamma in 1e2f64..1e6,
        t_e in 0.05f64..5.0,
        r in 0.01f64..10.0,
        x0 in -40.0f64..-0.5,
        ez_kt in 0.0f64..6.0,
        ts in proptest::collection::vec(0.0f64..1.0, 8),
    ) {
        let k_t = 8.617333262e-5 * t_e;
        let m = ReadModel::new(gamma, t_e, r, x0 * k_t, ez_kt * k_t).unwrap();
        let horizon = deep_horizon(&m, Spin::Down);
        let mut times: Vec<f64> = ts.iter().map(|u| u * horizon).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev = 0.0;
        for &t in &times {
            let c = tunnel_out_cdf(&m, Spin::Down, t);
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(c >= prev - 1e-12);
            prop_assert!(tunnel_out_pdf(&m, Spin::Down, t) >= 0.0);
            let v = visibility(&m, t);
            prop_assert!((0.0..=1.0).contains(&v));
            prev = c;
        }
    }

    #[test]
    fn mixture_density_is_the_convex_combination(
        p_up in 0.0f64..1.0,
        u in 0.01f64..0.99,
    ) {
        let m = ReadModel::new(1.05e4, 0.84, 0.3965, -4.649e-4, 3.02e-4).unwrap();
        let t = u * 3e-3;
        let direct = p_up * tunnel_out_pdf(&m, Spin::Up, t)
            + (1.0 - p_up) * tunnel_out_pdf(&m, Spin::Down, t);
        let mix = mixture_pdf(&m, p_up, t).unwrap();
        prop_assert!((mix - direct).abs() <= 1e-12 * direct.max(1e-300));
    }

    #[test]
    fn interior_peaks_always_separate_by_the_zeeman_time(
        gamma in 3e2f64..3e5,
        t_e in 0.2f64..3.0,
        r in 0.05f64..3.0,
        x0 in -20.0f64..-2.0,
        ez_kt in 0.5f64..5.0,
    ) {
        let k_t = 8.617333262e-5 * t_e;
        let m = ReadModel::new(gamma, t_e, r, x0 * k_t, ez_kt * k_t).unwrap();
        if let (PeakTime::Interior(a), PeakTime::Interior(b)) =
            (peak_time(&m, Spin::Up), peak_time(&m, Spin::Down))
        {
            let sep = b - a;
            prop_assert!((sep - m.e_z / m.r).abs() <= 1e-9 * (m.e_z / m.r));
        }
    }
}
