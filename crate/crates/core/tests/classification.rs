//! Classifier behavior against ground truth: exact extraction on clean
//! traces, graceful degradation with noise, robustness to drift, and the
//! structural invariants of classification results.

use proptest::prelude::*;

use rsm_core::classify::{
    build_histogram, classify_final_exit_referenced, classify_static, ClassifyMethod,
    FinalExitConfig, SpinLabel, ThresholdConfig,
};
use rsm_core::model::{optimal_threshold, tunnel_out_cdf, RampSpec, ReadModel};
use rsm_core::numerics::brent_root;
use rsm_core::simulate::{
    simulate_batch, simulate_batch_with_drift, DriftSpec, PulseSequence, SensorModel, ShotTrace,
};
use rsm_core::Spin;

fn device_b_model() -> ReadModel {
    ReadModel::new(1.05e4, 0.84, 0.3965, -4.649e-4, 3.02e-4).unwrap()
}

fn noiseless_sensor() -> SensorModel {
    SensorModel::new(1e-18, 2e-6, 0.0, 1.0, 0.0).unwrap()
}

fn noisy_sensor() -> SensorModel {
    SensorModel::new(9e-9, 2e-6, 0.0, 1.0, 2e-6).unwrap()
}

fn default_sequence() -> PulseSequence {
    let ramp = RampSpec::new((-2.205e-3, 0.505e-3), 3e-3).unwrap();
    PulseSequence::new(1e-3, 2e-4, ramp, None, 0.5, None).unwrap()
}

fn final_exit_config(m: &ReadModel) -> FinalExitConfig {
    FinalExitConfig::new(3.0, 0.5, FinalExitConfig::DEFAULT_EXCLUSION_ENERGY, m.r).unwrap()
}

/// Expected final-exit outcome derived from ground truth alone, skipping
/// shots within one sample of any decision edge (`None` = ambiguous).
fn expected_final_exit(tr: &ShotTrace, cfg: &FinalExitConfig) -> Option<SpinLabel> {
    let dt = tr.meta.sensor.sample_period;
    let dur = tr.duration();
    let truth = &tr.truth;
    let exit = match (truth.t_up_out, truth.t_blip_in) {
        (Some(t_up), Some(t_in)) => {
            if t_in >= dur - dt {
                if t_up < dur - dt {
                    Some((t_up, None))
                } else {
                    return Some(SpinLabel::Undetermined);
                }
            } else if truth.t_down_out < dur - dt {
                Some((truth.t_down_out, Some((t_up, t_in))))
            } else if truth.t_down_out > dur + dt {
                return Some(SpinLabel::Undetermined);
            } else {
                return None;
            }
        }
        _ => {
            if truth.t_down_out < dur - dt {
                Some((truth.t_down_out, None))
            } else if truth.t_down_out > dur + dt {
                return Some(SpinLabel::Undetermined);
            } else {
                return None;
            }
        }
    };
    let (t_fe, blip) = exit?;
    match blip {
        None => Some(SpinLabel::Down),
        Some((t_up, t_in)) => {
            let cutoff = t_fe - cfg.exclusion_window(tr);
            if t_in - t_up > 3.0 * dt && t_up < cutoff - dt {
                Some(SpinLabel::Up)
            } else if t_in - t_up < 1.0 * dt || t_up > cutoff + dt {
                Some(SpinLabel::Down)
            } else {
                None // too close to an edge to call without the classifier
            }
        }
    }
}

#[test]
fn clean_traces_reproduce_truth_exactly() {
    let m = device_b_model();
    let sensor = noiseless_sensor();
    let seq = default_sequence();
    let traces = simulate_batch(600, &seq, &m, &sensor, f64::INFINITY, 2.5, 77);

    let (t_star, _) = optimal_threshold(&m).unwrap();
    let static_cfg = ThresholdConfig::new(0.5, t_star, 1).unwrap();
    let fe_cfg = final_exit_config(&m);
    let dt = sensor.sample_period;

    let mut static_checked = 0;
    let mut fe_checked = 0;
    for tr in &traces {
        let first = tr.truth.first_exit();
        // a blip shorter than one sample never appears in the trace
        let first_exit_visible = match (tr.truth.t_up_out, tr.truth.t_blip_in) {
            (Some(t_up), Some(t_in)) => t_in - t_up > 2.0 * dt,
            _ => true,
        };
        // static: extracted exit time within one sample of truth
        let shot = classify_static(tr, &static_cfg);
        if first < tr.duration() - dt && first_exit_visible {
            let t_out = shot.t_out.expect("uncensored shot must yield an exit time");
            assert!(
                (t_out - first).abs() <= dt,
                "static exit {t_out} vs truth {first}"
            );
            if (first - t_star).abs() > 2.0 * dt {
                let expected = if first < t_star {
                    SpinLabel::Up
                } else {
                    SpinLabel::Down
                };
                assert_eq!(shot.label, expected, "static label at exit {first}");
                static_checked += 1;
            }
        } else if first > tr.duration() + dt {
            assert_eq!(shot.label, SpinLabel::Down, "censored shots label down");
            assert!(shot.t_out.is_none());
        }

        // final-exit: label agreement and timing agreement
        let shot = classify_final_exit_referenced(tr, &fe_cfg);
        if let Some(expected) = expected_final_exit(tr, &fe_cfg) {
            assert_eq!(
                shot.label, expected,
                "final-exit label for truth {:?}",
                tr.truth
            );
            fe_checked += 1;
            if expected != SpinLabel::Undetermined {
                let t_fe = shot.t_final_exit.unwrap();
                let true_fe = match (tr.truth.t_up_out, tr.truth.t_blip_in) {
                    (Some(t_up), Some(t_in)) if t_in >= tr.duration() => t_up,
                    _ => tr.truth.t_down_out,
                };
                assert!(
                    (t_fe - true_fe).abs() <= 2.0 * dt,
                    "final exit {t_fe} vs truth {true_fe}"
                );
            }
        }
    }
    assert!(static_checked > 400, "static: only {static_checked} clear shots");
    assert!(fe_checked > 400, "final-exit: only {fe_checked} clear shots");
}

#[test]
fn noisy_final_exit_lands_within_a_few_samples() {
    let m = device_b_model();
    let sensor = noisy_sensor();
    let seq = default_sequence();
    let traces = simulate_batch(1_000, &seq, &m, &sensor, f64::INFINITY, 2.5, 404);
    let cfg = final_exit_config(&m);
    let dt = sensor.sample_period;

    let mut errors: Vec<f64> = Vec::new();
    for tr in &traces {
        let shot = classify_final_exit_referenced(tr, &cfg);
        let (Some(t_fe), true) = (shot.t_final_exit, tr.truth.t_down_out < tr.duration() - dt)
        else {
            continue;
        };
        // skip shots whose refill never happened inside the window
        if matches!(tr.truth.t_blip_in, Some(t_in) if t_in >= tr.duration()) {
            continue;
        }
        errors.push((t_fe - tr.truth.t_down_out).abs());
    }
    assert!(errors.len() > 700, "final exit found on only {}", errors.len());
    errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = errors[errors.len() / 2];
    assert!(
        median < 5.0 * dt,
        "median final-exit error {median} exceeds five samples"
    );
}

#[test]
fn degenerate_splitting_classifies_at_chance() {
    let m = ReadModel::new(1.05e4, 0.84, 0.3965, -4.649e-4, 0.0).unwrap();
    let sensor = noisy_sensor();
    let seq = default_sequence();
    let n = 1_000;
    let traces = simulate_batch(n, &seq, &m, &sensor, f64::INFINITY, 2.5, 2020);

    // with no splitting the best available cut is the median exit time
    let f = |t: f64| tunnel_out_cdf(&m, Spin::Down, t) - 0.5;
    let t_median = brent_root(&f, 0.0, 10e-3, 1e-15).unwrap();
    let cfg = ThresholdConfig::new(0.5, t_median, 5).unwrap();
    let correct = traces
        .iter()
        .filter(|tr| {
            let label = classify_static(tr, &cfg).label;
            (label == SpinLabel::Up) == (tr.truth.initial_spin == Spin::Up)
        })
        .count() as f64
        / n as f64;
    assert!(
        (correct - 0.5).abs() < 0.06,
        "accuracy {correct} should be chance without splitting"
    );
}

#[test]
fn final_exit_referencing_survives_drift_that_breaks_the_static_cut() {
    let m = device_b_model();
    let sensor = noisy_sensor();
    let seq = default_sequence();
    let drift = DriftSpec::new(0.1, 6.0).unwrap();
    let n = 400;
    let traces =
        simulate_batch_with_drift(n, &seq, &m, &sensor, f64::INFINITY, 2.5, 11, Some(&drift));

    let (t_star, _) = optimal_threshold(&m).unwrap();
    let static_cfg = ThresholdConfig::new(0.5, t_star, 5).unwrap();
    let fe_cfg = final_exit_config(&m);

    let accuracy = |labels: Vec<SpinLabel>| -> f64 {
        labels
            .iter()
            .zip(traces.iter())
            .filter(|(label, tr)| {
                (**label == SpinLabel::Up) == (tr.truth.initial_spin == Spin::Up)
            })
            .count() as f64
            / n as f64
    };
    let acc_static = accuracy(
        traces
            .iter()
            .map(|tr| classify_static(tr, &static_cfg).label)
            .collect(),
    );
    let acc_fe = accuracy(
        traces
            .iter()
            .map(|tr| classify_final_exit_referenced(tr, &fe_cfg).label)
            .collect(),
    );
    assert!(
        acc_fe > acc_static + 0.05,
        "drift: final-exit {acc_fe} should beat static {acc_static}"
    );
    assert!(acc_fe > 0.85, "final-exit accuracy {acc_fe} too low under drift");
}

#[test]
fn histogram_counts_censoring_and_centers_bins() {
    let times = [
        Some(0.4e-3),
        Some(0.45e-3),
        Some(1.2e-3),
        None,
        Some(9.0e-3),
        Some(2.999e-3),
    ];
    let hist = build_histogram(&times, 0.5e-3, 3e-3).unwrap();
    assert_eq!(hist.counts.len(), 6);
    assert_eq!(hist.counts[0], 2);
    assert_eq!(hist.counts[2], 1);
    assert_eq!(hist.counts[5], 1);
    assert_eq!(hist.n_censored, 2);
    assert_eq!(hist.n_total, 6);
    assert!((hist.bin_center(0) - 0.25e-3).abs() < 1e-18);
    assert!(build_histogram(&times, 0.0, 3e-3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn classification_invariants_hold_on_random_shots(
        seed in 0u64..10_000,
        p_up in 0.0f64..1.0,
        noisy in proptest::bool::ANY,
    ) {
        let m = device_b_model();
        let sensor = if noisy { noisy_sensor() } else { noiseless_sensor() };
        let ramp = RampSpec::new((-2.205e-3, 0.505e-3), 1.5e-3).unwrap();
        let seq = PulseSequence::new(1e-3, 2e-4, ramp, None, p_up, None).unwrap();
        let traces = simulate_batch(20, &seq, &m, &sensor, f64::INFINITY, 2.5, seed);

        let (t_star, _) = optimal_threshold(&m).unwrap();
        let static_cfg = ThresholdConfig::new(0.5, t_star, 5).unwrap();
        let fe_cfg = final_exit_config(&m);
        for tr in &traces {
            let s = classify_static(tr, &static_cfg);
            prop_assert_eq!(s.method, ClassifyMethod::Static);
            prop_assert!(s.t_final_exit.is_none());
            if s.label == SpinLabel::Up {
                prop_assert!(s.t_out.is_some());
            }
            prop_assert_ne!(s.label, SpinLabel::Undetermined);

            let fe = classify_final_exit_referenced(tr, &fe_cfg);
            prop_assert_eq!(fe.method, ClassifyMethod::FinalExit);
            match fe.label {
                SpinLabel::Undetermined => {
                    prop_assert!(fe.t_final_exit.is_none());
                    prop_assert!(fe.t_out.is_none());
                }
                _ => {
                    let t_fe = fe.t_final_exit.unwrap();
                    let t_out = fe.t_out.unwrap();
                    prop_assert!(t_out <= t_fe + 1e-15);
                    prop_assert!(t_fe <= tr.duration());
                }
            }
        }
    }
}
