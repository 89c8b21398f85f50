//! The simulate stage: trace batches per sweep field plus the synthetic
//! scan tables every fit family consumes.

use std::time::Instant;

use rand_distr::{Distribution, Normal};

use rsm_core::estimate::{RatePoint, ThermometryPoint};
use rsm_core::io::write_trace_batch_with_header;
use rsm_core::model::{relaxation_rate, thermometry_width};
use rsm_core::rng::shot_rng;
use rsm_core::simulate::{
    simulate_batch_with_drift, simulate_initialization_scan, simulate_relaxation_scan,
    PulseSequence,
};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{write_output, RunManifest, Stage, StageOutput};
use crate::tables;

use super::{
    field_stem, stream_seed, ResolvedClassifier, STREAM_INITIALIZATION, STREAM_RATES,
    STREAM_RELAXATION, STREAM_THERMOMETRY, STREAM_TRACES,
};

/// Relaxation time at field `b` from the configured rate law; a zero rate
/// means no decay.
fn t1_at(config: &ExperimentConfig, b: f64) -> f64 {
    let rate = relaxation_rate(&config.device.relaxation, b);
    if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    }
}

pub fn cmd_simulate(config: &ExperimentConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| CliError::file(out.display().to_string(), e))?;
    let mut manifest = RunManifest::load_or_new(out, &config.sha256)?;
    let mut outputs: Vec<StageOutput> = Vec::new();

    let sensor = &config.device.sensor;
    let n_samples = (config.pulse.t_read / sensor.sample_period).floor() as usize;

    // one trace batch per sweep field
    for (i, &b) in config.sweep.fields.iter().enumerate() {
        let model = config.device.model_at(b)?;
        let traces = simulate_batch_with_drift(
            config.sweep.shots_per_point,
            &config.pulse,
            &model,
            sensor,
            t1_at(config, b),
            b,
            stream_seed(config, STREAM_TRACES, i as u64),
            config.drift.as_ref(),
        );
        let mut bytes = Vec::new();
        write_trace_batch_with_header(&mut bytes, &model, sensor, b, n_samples, &traces)
            .map_err(|e| CliError::format(format!("batch at {b} T"), e))?;
        let rel = format!("traces/{}.trc", field_stem(i));
        outputs.push(write_output(out, &rel, &bytes)?);
        println!("wrote {rel} ({} shots at {b} T)", traces.len());
    }

    // load-duration scan at the field where T1 was measured
    if !config.sweep.t_loads.is_empty() && config.sweep.scan_shots_per_point > 0 {
        let b = config.device.t1_field;
        let model = config.device.model_at(b)?;
        let classifier =
            ResolvedClassifier::build(&config.classify, config.classify.method, &model, sensor)?;
        // load pure spin-up: the decay amplitude doubles relative to a
        // mixed load, halving the T1 uncertainty at fixed shot count
        let scan_seq = PulseSequence {
            load_p_up: 1.0,
            ..config.pulse
        };
        let points = simulate_relaxation_scan(
            &config.sweep.t_loads,
            config.sweep.scan_shots_per_point,
            &scan_seq,
            &model,
            sensor,
            config.device.t1,
            config.sweep.relaxation_floor,
            b,
            stream_seed(config, STREAM_RELAXATION, 0),
            &|trace| classifier.spin_of(trace),
        )?;
        let rel = "scans/relaxation.tsv";
        outputs.push(write_output(
            out,
            rel,
            tables::render_relaxation_scan(&points).as_bytes(),
        )?);
        println!("wrote {rel} ({} load durations at {b} T)", points.len());
    }

    // initialization-ramp scan at the first sweep field
    if !config.sweep.t_initials.is_empty() && config.sweep.scan_shots_per_point > 0 {
        let b = config.sweep.fields[0];
        let model = config.device.model_at(b)?;
        let points = simulate_initialization_scan(
            &config.sweep.t_initials,
            config.sweep.scan_shots_per_point,
            &config.pulse,
            &model,
            sensor,
            stream_seed(config, STREAM_INITIALIZATION, 0),
        )?;
        let rel = "scans/initialization.tsv";
        outputs.push(write_output(
            out,
            rel,
            tables::render_initialization_scan(&points).as_bytes(),
        )?);
        println!("wrote {rel} ({} ramp durations at {b} T)", points.len());
    }

    // synthetic charge-transition widths for thermometry
    if !config.sweep.t_mxc.is_empty() {
        let law = &config.device.thermometry;
        let frac = config.sweep.width_noise_frac;
        let mut rng = shot_rng(stream_seed(config, STREAM_THERMOMETRY, 0));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let points: Vec<ThermometryPoint> = config
            .sweep
            .t_mxc
            .iter()
            .map(|&t| {
                let width = thermometry_width(law, t);
                let noisy = width * (1.0 + frac * normal.sample(&mut rng));
                ThermometryPoint {
                    t_mxc: t,
                    width: noisy.max(width * 0.1),
                    error: frac * width,
                }
            })
            .collect();
        let rel = "scans/thermometry.tsv";
        outputs.push(write_output(
            out,
            rel,
            tables::render_thermometry_scan(&points).as_bytes(),
        )?);
        println!("wrote {rel} ({} temperatures)", points.len());
    }

    // synthetic relaxation rates over field for the rate-law fit
    if !config.sweep.rate_fields.is_empty() {
        let frac = config.sweep.rate_noise_frac;
        let mut rng = shot_rng(stream_seed(config, STREAM_RATES, 0));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let points: Vec<RatePoint> = config
            .sweep
            .rate_fields
            .iter()
            .map(|&b| {
                let rate = relaxation_rate(&config.device.relaxation, b);
                let noisy = rate * (1.0 + frac * normal.sample(&mut rng));
                RatePoint {
                    b,
                    rate: noisy.max(rate * 0.05),
                    rate_err: frac * rate,
                }
            })
            .collect();
        let rel = "scans/rates.tsv";
        outputs.push(write_output(
            out,
            rel,
            tables::render_rate_scan(&points).as_bytes(),
        )?);
        println!("wrote {rel} ({} fields)", points.len());
    }

    manifest.record_stage(
        out,
        Stage {
            name: "simulate".into(),
            wall_ms: started.elapsed().as_millis() as u64,
            output: outputs,
        },
    )
}
