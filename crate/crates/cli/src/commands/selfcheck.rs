//! `rsm selfcheck`: fast internal consistency checks, no run directory.
//!
//! Each check exercises an identity the toolchain relies on: density
//! normalization, distribution/density consistency, the analytic peak
//! separation, the inverse-CDF sampler, threshold optimization, binary and
//! table round trips, deterministic reruns, and unit parsing. Any failure
//! exits with a validation error.

use rand::Rng;

use rsm_core::classify::{ClassifyMethod, SpinLabel};
use rsm_core::io::{
    read_classification_tsv, read_trace_batch, write_classification_tsv, write_trace_batch,
    ClassificationRow,
};
use rsm_core::model::{
    log_survival, optimal_threshold, tunnel_out_cdf, tunnel_out_pdf, RampSpec, ReadModel, Spin,
};
use rsm_core::numerics::{adaptive_simpson, golden_min};
use rsm_core::rng::shot_rng;
use rsm_core::simulate::{
    sample_tunnel_time, simulate_batch, PulseSequence, SensorModel,
};

use crate::config::parse_quantity;
use crate::error::CliError;

type CheckResult = Result<(), String>;

fn check_models() -> Vec<ReadModel> {
    vec![
        ReadModel::new(5e3, 0.82, 0.375, -8.5e-4, 2.0e-4).unwrap(),
        ReadModel::new(1.05e4, 0.84, 0.3965, -4.65e-4, 3.0e-4).unwrap(),
        ReadModel::new(2e4, 0.30, 0.10, -2.0e-4, 0.0).unwrap(),
    ]
}

fn check(cond: bool, detail: String) -> CheckResult {
    if cond {
        Ok(())
    } else {
        Err(detail)
    }
}

/// Exit density plus terminal survival must account for all probability.
fn density_normalization() -> CheckResult {
    for m in check_models() {
        for spin in [Spin::Up, Spin::Down] {
            let t_end = 40e-3;
            let mass = adaptive_simpson(&|t| tunnel_out_pdf(&m, spin, t), 0.0, t_end, 1e-10);
            let total = mass + log_survival(&m, spin, t_end).exp();
            check(
                (total - 1.0).abs() < 1e-6,
                format!("density mass {total:.9} != 1 for {spin:?}"),
            )?;
        }
    }
    Ok(())
}

/// The density must be the derivative of the cumulative distribution.
fn pdf_matches_cdf_slope() -> CheckResult {
    for m in check_models() {
        for spin in [Spin::Up, Spin::Down] {
            for &t in &[0.5e-3, 2e-3, 5e-3] {
                let h = 1e-7;
                let slope =
                    (tunnel_out_cdf(&m, spin, t + h) - tunnel_out_cdf(&m, spin, t - h)) / (2.0 * h);
                let pdf = tunnel_out_pdf(&m, spin, t);
                let scale = pdf.abs().max(1.0);
                check(
                    (slope - pdf).abs() / scale < 1e-4,
                    format!("dC/dt {slope:.6e} != f {pdf:.6e} at t {t:.1e} for {spin:?}"),
                )?;
            }
        }
    }
    Ok(())
}

/// Numeric density peaks must sit E_Z/r apart.
fn peak_separation_identity() -> CheckResult {
    for m in check_models() {
        if m.e_z == 0.0 {
            continue;
        }
        let t_end = 40e-3;
        let peak = |spin: Spin| golden_min(&|t| -tunnel_out_pdf(&m, spin, t), 0.0, t_end, 1e-12).0;
        let numeric = peak(Spin::Down) - peak(Spin::Up);
        let analytic = m.e_z / m.r;
        check(
            (numeric - analytic).abs() < 1e-7,
            format!("peak separation {numeric:.4e} != E_Z/r {analytic:.4e}"),
        )?;
    }
    Ok(())
}

/// Kolmogorov-Smirnov distance between sampler draws and the analytic CDF.
fn sampler_matches_cdf() -> CheckResult {
    let m = &check_models()[0];
    let mut rng = shot_rng(0x5e1f);
    let n = 20_000;
    let mut draws: Vec<f64> = (0..n)
        .map(|_| sample_tunnel_time(m, Spin::Down, rng.random::<f64>()).unwrap())
        .collect();
    draws.sort_by(f64::total_cmp);
    let mut ks: f64 = 0.0;
    for (i, &t) in draws.iter().enumerate() {
        let c = tunnel_out_cdf(m, Spin::Down, t);
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        ks = ks.max((c - lo).abs()).max((c - hi).abs());
    }
    check(ks < 0.015, format!("KS distance {ks:.4} >= 0.015"))
}

/// The closed-form threshold search must beat a dense grid scan.
fn threshold_is_optimal() -> CheckResult {
    for m in check_models() {
        if m.e_z == 0.0 {
            continue;
        }
        let (t_star, v_star) = optimal_threshold(&m).map_err(|e| e.to_string())?;
        let t_end = 40e-3;
        let visibility = |t: f64| {
            let acc_up = tunnel_out_cdf(&m, Spin::Up, t);
            let acc_down = 1.0 - tunnel_out_cdf(&m, Spin::Down, t);
            0.5 * (acc_up + acc_down)
        };
        let mut best = 0.0f64;
        for k in 0..=20_000 {
            best = best.max(visibility(t_end * k as f64 / 20_000.0));
        }
        check(
            v_star >= best - 1e-6,
            format!("threshold value {v_star:.8} below grid best {best:.8}"),
        )?;
        check(
            (visibility(t_star) - v_star).abs() < 1e-12,
            format!("reported v* {v_star:.8} != v(t*) {:.8}", visibility(t_star)),
        )?;
    }
    Ok(())
}

fn demo_batch(seed: u64) -> (ReadModel, SensorModel, Vec<rsm_core::simulate::ShotTrace>) {
    let m = check_models()[1];
    let sensor = SensorModel::new(9e-9, 2e-6, 0.0, 1.0, 2e-6).unwrap();
    let ramp = RampSpec::new((-2.2e-3, 0.5e-3), 3e-3).unwrap();
    let seq = PulseSequence::new(1e-3, 2e-4, ramp, None, 0.5, None).unwrap();
    let traces = simulate_batch(32, &seq, &m, &sensor, f64::INFINITY, 2.5, seed);
    (m, sensor, traces)
}

/// Binary container: write, read back, rewrite, compare bytes.
fn trace_batch_round_trip() -> CheckResult {
    let (_, _, traces) = demo_batch(7);
    let mut first = Vec::new();
    write_trace_batch(&mut first, &traces).map_err(|e| e.to_string())?;
    let back = read_trace_batch(&mut first.as_slice()).map_err(|e| e.to_string())?;
    check(back == traces, "decoded batch differs".into())?;
    let mut second = Vec::new();
    write_trace_batch(&mut second, &back).map_err(|e| e.to_string())?;
    check(first == second, "re-encoded bytes differ".into())
}

/// Classification table: render, parse, compare rows and censored count.
fn classification_table_round_trip() -> CheckResult {
    let rows = vec![
        ClassificationRow {
            seed: 11,
            t_out: Some(1.25e-3),
            t_final_exit: Some(2.5e-3),
            label: SpinLabel::Up,
            method: ClassifyMethod::FinalExit,
        },
        ClassificationRow {
            seed: 12,
            t_out: None,
            t_final_exit: None,
            label: SpinLabel::Undetermined,
            method: ClassifyMethod::FinalExit,
        },
    ];
    let mut buf = Vec::new();
    write_classification_tsv(&mut buf, &rows).map_err(|e| e.to_string())?;
    let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
    let (back, censored) = read_classification_tsv(&text).map_err(|e| e.to_string())?;
    check(back == rows, "decoded rows differ".into())?;
    check(censored == 1, format!("censored {censored} != 1"))
}

/// Equal seeds must reproduce a batch bit for bit.
fn deterministic_rerun() -> CheckResult {
    let (_, _, a) = demo_batch(99);
    let (_, _, b) = demo_batch(99);
    check(a == b, "reruns with one seed differ".into())?;
    let (_, _, c) = demo_batch(100);
    check(a != c, "different seeds gave identical batches".into())
}

/// Unit-suffixed quantity strings must resolve to SI values.
fn quantity_parsing() -> CheckResult {
    let cases: [(&str, &str, f64); 6] = [
        ("821 mK", "temperature", 0.821),
        ("2 us", "time", 2e-6),
        ("-2.05 mV", "voltage", -2.05e-3),
        ("120 ueV", "energy", 1.2e-4),
        ("10.5 kHz", "rate", 1.05e4),
        ("2.5 T", "field", 2.5),
    ];
    for (text, dimension, want) in cases {
        let got = parse_quantity_for(dimension, text)?;
        check(
            (got - want).abs() <= 1e-12 * want.abs().max(1.0),
            format!("{text:?} parsed to {got:.6e}, want {want:.6e}"),
        )?;
    }
    Ok(())
}

fn parse_quantity_for(dimension: &str, text: &str) -> Result<f64, String> {
    use crate::config::units;
    let table = match dimension {
        "temperature" => units::TEMPERATURE,
        "time" => units::TIME,
        "voltage" => units::VOLTAGE,
        "energy" => units::ENERGY,
        "rate" => units::RATE,
        "field" => units::FIELD,
        other => return Err(format!("unknown dimension {other}")),
    };
    parse_quantity(text, dimension, table)
}

/// Run every check, returning each name with its outcome.
pub fn run_selfcheck() -> Vec<(&'static str, CheckResult)> {
    vec![
        ("density-normalization", density_normalization()),
        ("pdf-matches-cdf-slope", pdf_matches_cdf_slope()),
        ("peak-separation-identity", peak_separation_identity()),
        ("sampler-matches-cdf", sampler_matches_cdf()),
        ("threshold-is-optimal", threshold_is_optimal()),
        ("trace-batch-round-trip", trace_batch_round_trip()),
        (
            "classification-table-round-trip",
            classification_table_round_trip(),
        ),
        ("deterministic-rerun", deterministic_rerun()),
        ("quantity-parsing", quantity_parsing()),
    ]
}

pub fn cmd_selfcheck() -> Result<(), CliError> {
    let results = run_selfcheck();
    let mut failures = 0usize;
    for (name, result) in &results {
        match result {
            Ok(()) => println!("ok {name}"),
            Err(detail) => {
                println!("FAILED {name}: {detail}");
                failures += 1;
            }
        }
    }
    println!("selfcheck: {} passed, {failures} failed", results.len() - failures);
    if failures > 0 {
        Err(CliError::Validation(format!(
            "{failures} selfcheck(s) failed"
        )))
    } else {
        Ok(())
    }
}
