//! `rsm fit`: parameter estimation on the artifacts of a run directory.
//!
//! Each fit family reads the tables or trace batches recorded in the run
//! manifest, runs the corresponding estimator from `rsm-core`, and writes a
//! key-value report under `fits/` plus, where it helps, a plot table under
//! `plots/`. Estimator failures (too little data, singular fits, boundary
//! peaks) surface as fit-diagnostic errors.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::str::FromStr;
use std::time::Instant;

use rsm_core::classify::build_histogram;
use rsm_core::estimate::{
    extract_delta_t, fit_exponential_decay, fit_g_factor, fit_mixture, fit_rate_field_law,
    fit_thermometry, predict_visibility_vs_field, DecayPoint, FieldScanPoint, FitFlag,
    InterceptMode, MixtureBounds, VisibilityPoint,
};
use rsm_core::classify::ClassifyMethod;
use rsm_core::io::{read_batch_header, read_classification_tsv};
use rsm_core::constants::MU_B;
use rsm_core::model::{log_survival, relaxation_rate, thermometry_width, ReadModel, Spin};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{RunManifest, StageOutput};
use crate::report::FitReport;
use crate::tables;

use super::binomial_error;

/// Estimation family selected with `--fit`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitFamily {
    /// Two-component exit-time mixture per trace batch, plus peak splittings.
    Mixture,
    /// Linear Zeeman fit of splitting versus field.
    G,
    /// Exponential decay of the load-time relaxation scan.
    T1,
    /// Field power law of the relaxation rate.
    T1Field,
    /// Transition-width thermometry.
    Thermometry,
    /// Visibility curve predicted from fitted readout parameters.
    Visibility,
    /// Initialization scan summary.
    Init,
}

impl FromStr for FitFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mixture" => Ok(FitFamily::Mixture),
            "g" => Ok(FitFamily::G),
            "t1" => Ok(FitFamily::T1),
            "t1-field" => Ok(FitFamily::T1Field),
            "thermometry" => Ok(FitFamily::Thermometry),
            "visibility" => Ok(FitFamily::Visibility),
            "init" => Ok(FitFamily::Init),
            other => Err(format!(
                "unknown fit family {other:?} (expected mixture, g, t1, t1-field, \
                 thermometry, visibility, or init)"
            )),
        }
    }
}

impl fmt::Display for FitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FitFamily::Mixture => "mixture",
            FitFamily::G => "g",
            FitFamily::T1 => "t1",
            FitFamily::T1Field => "t1-field",
            FitFamily::Thermometry => "thermometry",
            FitFamily::Visibility => "visibility",
            FitFamily::Init => "init",
        };
        f.write_str(s)
    }
}

pub fn cmd_fit(
    config: &ExperimentConfig,
    family: FitFamily,
    method_flag: Option<ClassifyMethod>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::load_or_new(&config.out_dir, &config.sha256)?;
    let outputs = match family {
        FitFamily::Mixture => fit_family_mixture(config, &manifest, method_flag)?,
        FitFamily::G => fit_family_g(config, &manifest)?,
        FitFamily::T1 => fit_family_t1(config, &manifest)?,
        FitFamily::T1Field => fit_family_t1_field(config, &manifest)?,
        FitFamily::Thermometry => fit_family_thermometry(config, &manifest)?,
        FitFamily::Visibility => fit_family_visibility(config, &manifest)?,
        FitFamily::Init => fit_family_init(config, &manifest)?,
    };
    manifest.record_stage(
        &config.out_dir,
        crate::manifest::Stage {
            name: format!("fit-{family}"),
            wall_ms: started.elapsed().as_millis() as u64,
            output: outputs,
        },
    )
}

fn read_text(config: &ExperimentConfig, rel: &str) -> Result<String, CliError> {
    std::fs::read_to_string(config.out_dir.join(rel)).map_err(|e| CliError::file(rel, e))
}

/// Locate a simulate-stage table, with a hint when the scan was not part of
/// the sweep configuration.
fn require_scan<'a>(
    manifest: &'a RunManifest,
    rel: &str,
    hint: &str,
) -> Result<&'a StageOutput, CliError> {
    let stage = manifest
        .find_stage("simulate")
        .ok_or_else(|| CliError::Validation("run `rsm simulate` first".into()))?;
    stage
        .output
        .iter()
        .find(|o| o.path == rel)
        .ok_or_else(|| CliError::Validation(format!("the run produced no {rel}; {hint}")))
}

fn note_flags(report: &mut FitReport, flags: &[FitFlag]) {
    for flag in flags {
        let text = match flag {
            FitFlag::EzConsistentWithZero => "fitted splitting is consistent with zero",
            FitFlag::PUpUnidentifiable => "mixture weight is unidentifiable",
            FitFlag::TEFrozen => "electron temperature was held fixed",
            FitFlag::TEffConsistentWithZero => "base electron temperature consistent with zero",
        };
        report.note(text);
    }
}

fn fit_family_mixture(
    config: &ExperimentConfig,
    manifest: &RunManifest,
    method_flag: Option<ClassifyMethod>,
) -> Result<Vec<StageOutput>, CliError> {
    let method = method_flag.unwrap_or(config.classify.method);
    let stage_name = format!("classify-{method}");
    let stage = manifest.find_stage(&stage_name).ok_or_else(|| {
        CliError::Validation(format!("run `rsm classify --method {method}` first"))
    })?;
    let suffix = format!(".{method}.tsv");
    let table_paths: Vec<String> = stage
        .output
        .iter()
        .map(|o| o.path.clone())
        .filter(|p| p.starts_with("classify/") && p.ends_with(&suffix))
        .collect();
    if table_paths.is_empty() {
        return Err(CliError::Validation(format!(
            "stage {stage_name} recorded no classification tables"
        )));
    }

    let mut outputs = Vec::new();
    let mut scan = Vec::new();
    for table_rel in &table_paths {
        let stem = table_rel
            .trim_start_matches("classify/")
            .trim_end_matches(&suffix);
        let batch_rel = format!("traces/{stem}.trc");
        let file = File::open(config.out_dir.join(&batch_rel))
            .map_err(|e| CliError::file(&batch_rel, e))?;
        let header = read_batch_header(&mut BufReader::new(file))
            .map_err(|e| CliError::format(&batch_rel, e))?;
        let (rows, censored) = read_classification_tsv(&read_text(config, table_rel)?)
            .map_err(|e| CliError::format(table_rel, e))?;
        if rows.is_empty() {
            println!("fit mixture: skipping {stem} (empty batch)");
            continue;
        }

        let t_read = header.n_samples as f64 * header.sensor.sample_period;
        let t_outs: Vec<f64> = rows.iter().filter_map(|r| r.t_out).collect();
        let init = header.model;
        let bounds = MixtureBounds::around(&init);
        let fit = fit_mixture(&t_outs, censored as usize, t_read, &init, 0.5, &bounds)
            .map_err(|e| CliError::fit(table_rel, e))?;
        let delta = extract_delta_t(&fit, init.r).map_err(|e| CliError::fit(table_rel, e))?;

        let mut report = FitReport::new("mixture");
        report.source(table_rel).source(&batch_rel);
        report
            .value("field_b", header.field_b)
            .value("gamma", fit.gamma)
            .value("t_e", fit.t_e)
            .value("eps0_down", fit.eps0_down)
            .value("e_z", fit.e_z)
            .value("p_up", fit.p_up)
            .value("delta_t", delta.delta_t)
            .value("delta_e", delta.delta_e)
            .value("log_likelihood", fit.log_likelihood)
            .value("n_shots", fit.n_shots as f64)
            .value("n_censored", censored as f64);
        report
            .error("gamma", fit.sigma(0))
            .error("t_e", fit.sigma(1))
            .error("eps0_down", fit.sigma(2))
            .error("e_z", fit.sigma(3))
            .error("p_up", fit.sigma(4))
            .error("delta_t", delta.delta_t_err)
            .error("delta_e", delta.delta_e_err);
        report
            .truth("gamma", init.gamma)
            .truth("t_e", init.t_e)
            .truth("eps0_down", init.eps0_down)
            .truth("e_z", init.e_z);
        note_flags(&mut report, &fit.flags);
        if let Some((chi2, dof)) = fit.chi_square {
            report.note(&format!("pearson chi-square {chi2:.1} on {dof} bins"));
        }
        outputs.push(crate::manifest::write_output(
            &config.out_dir,
            &format!("fits/mixture_{stem}.toml"),
            report.render().as_bytes(),
        )?);

        outputs.push(crate::manifest::write_output(
            &config.out_dir,
            &format!("plots/mixture_{stem}.tsv"),
            mixture_plot(&rows, t_read, &fit.model(init.r).map_err(|e| {
                CliError::Validation(format!("fitted mixture model is invalid: {e}"))
            })?, fit.p_up)?
            .as_bytes(),
        )?);

        scan.push(FieldScanPoint {
            b: header.field_b,
            delta_t: delta.delta_t,
            delta_t_err: delta.delta_t_err,
            delta_e: delta.delta_e,
            delta_e_err: delta.delta_e_err,
        });
        println!(
            "fit mixture: {stem} e_z {:.4e} eV (truth {:.4e}), p_up {:.3}",
            fit.e_z, init.e_z, fit.p_up
        );
    }
    if scan.is_empty() {
        return Err(CliError::Validation(
            "every trace batch in the run is empty".into(),
        ));
    }
    outputs.push(crate::manifest::write_output(
        &config.out_dir,
        "fits/field_scan.tsv",
        tables::render_field_scan(&scan).as_bytes(),
    )?);
    Ok(outputs)
}

/// Histogram of the observed exit times next to the fitted mixture density,
/// binned identically: expected counts are survival differences over bins.
fn mixture_plot(
    rows: &[rsm_core::io::ClassificationRow],
    t_read: f64,
    fitted: &ReadModel,
    p_up: f64,
) -> Result<String, CliError> {
    let t_outs: Vec<Option<f64>> = rows.iter().map(|r| r.t_out).collect();
    let hist = build_histogram(&t_outs, t_read / 120.0, t_read)
        .map_err(|e| CliError::Validation(format!("histogram: {e}")))?;
    let n = hist.n_total as f64;
    let survival = |spin, t: f64| log_survival(fitted, spin, t).exp();
    let rows: Vec<Vec<String>> = hist
        .counts
        .iter()
        .enumerate()
        .map(|(k, &count)| {
            let lo = k as f64 * hist.bin_width;
            let hi = lo + hist.bin_width;
            let mass_up = survival(Spin::Up, lo) - survival(Spin::Up, hi);
            let mass_down = survival(Spin::Down, lo) - survival(Spin::Down, hi);
            vec![
                crate::report::format_sig(hist.bin_center(k)),
                count.to_string(),
                crate::report::format_sig(n * (p_up * mass_up + (1.0 - p_up) * mass_down)),
                crate::report::format_sig(n * (1.0 - p_up) * mass_down),
                crate::report::format_sig(n * p_up * mass_up),
            ]
        })
        .collect();
    Ok(tables::render_table(
        &["t", "count", "model_total", "model_down", "model_up"],
        &rows,
    ))
}

fn fit_family_g(
    config: &ExperimentConfig,
    manifest: &RunManifest,
) -> Result<Vec<StageOutput>, CliError> {
    if manifest.find_stage("fit-mixture").is_none() {
        return Err(CliError::Validation(
            "run `rsm fit --fit mixture` first to produce fits/field_scan.tsv".into(),
        ));
    }
    let rel = "fits/field_scan.tsv";
    let points = tables::parse_field_scan(&read_text(config, rel)?)
        .map_err(|e| CliError::format(rel, e))?;
    let free = fit_g_factor(&points, InterceptMode::Free).map_err(|e| CliError::fit(rel, e))?;
    let fixed =
        fit_g_factor(&points, InterceptMode::FixedZero).map_err(|e| CliError::fit(rel, e))?;

    let mut report = FitReport::new("g-factor");
    report.source(rel);
    report
        .value("g", fixed.g)
        .value("g_free", free.g)
        .value("intercept", free.intercept)
        .value("n_points", points.len() as f64);
    report
        .error("g", fixed.g_err)
        .error("g_free", free.g_err)
        .error("intercept", free.intercept_err);
    report.truth("g", config.device.g_factor);
    if free.intercept_significant {
        report.note("free intercept differs from zero by more than two sigma");
    } else {
        report.note("free intercept consistent with zero; fixed-origin fit adopted");
    }

    let plot_rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                crate::report::format_sig(p.b),
                crate::report::format_sig(p.delta_e),
                crate::report::format_sig(p.delta_e_err),
                crate::report::format_sig(fixed.g * MU_B * p.b),
                crate::report::format_sig(free.g * MU_B * p.b + free.intercept),
            ]
        })
        .collect();

    println!(
        "fit g: g {:.4} +- {:.4} (truth {:.4}), free intercept {:+.3e} eV",
        fixed.g, fixed.g_err, config.device.g_factor, free.intercept
    );
    Ok(vec![
        crate::manifest::write_output(
            &config.out_dir,
            "fits/g_factor.toml",
            report.render().as_bytes(),
        )?,
        crate::manifest::write_output(
            &config.out_dir,
            "plots/g_factor.tsv",
            tables::render_table(
                &["b", "delta_e", "delta_e_err", "fit_fixed", "fit_free"],
                &plot_rows,
            )
            .as_bytes(),
        )?,
    ])
}

fn fit_family_t1(
    config: &ExperimentConfig,
    manifest: &RunManifest,
) -> Result<Vec<StageOutput>, CliError> {
    let rel = "scans/relaxation.tsv";
    require_scan(manifest, rel, "set sweep.t_loads in the config")?;
    let scan =
        tables::parse_relaxation_scan(&read_text(config, rel)?).map_err(|e| CliError::format(rel, e))?;
    let points: Vec<DecayPoint> = scan
        .iter()
        .map(|p| DecayPoint {
            t_load: p.t_load,
            up_fraction: p.classified_up_fraction,
            error: binomial_error(p.classified_up_fraction, p.n_shots),
        })
        .collect();
    let fit = fit_exponential_decay(&points).map_err(|e| CliError::fit(rel, e))?;

    let mut report = FitReport::new("t1");
    report.source(rel);
    report
        .value("t1", fit.t1)
        .value("amplitude", fit.amplitude)
        .value("offset", fit.offset)
        .value("field_b", config.device.t1_field)
        .value("n_points", points.len() as f64);
    report
        .error("t1", fit.t1_err)
        .error("amplitude", fit.amplitude_err)
        .error("offset", fit.offset_err);
    report.truth("t1", config.device.t1);
    report.note(&format!(
        "load-time scan at the {} T reference field",
        config.device.t1_field
    ));

    let plot_rows: Vec<Vec<String>> = scan
        .iter()
        .zip(&points)
        .map(|(p, d)| {
            let model = fit.offset + fit.amplitude * (-p.t_load / fit.t1).exp();
            vec![
                crate::report::format_sig(p.t_load),
                crate::report::format_sig(p.classified_up_fraction),
                crate::report::format_sig(d.error),
                crate::report::format_sig(model),
                crate::report::format_sig(p.truth_up_fraction),
            ]
        })
        .collect();

    println!(
        "fit t1: {:.3e} s +- {:.1e} (truth {:.3e})",
        fit.t1, fit.t1_err, config.device.t1
    );
    Ok(vec![
        crate::manifest::write_output(&config.out_dir, "fits/t1.toml", report.render().as_bytes())?,
        crate::manifest::write_output(
            &config.out_dir,
            "plots/t1.tsv",
            tables::render_table(
                &["t_load", "up_fraction", "error", "fit", "truth_up_fraction"],
                &plot_rows,
            )
            .as_bytes(),
        )?,
    ])
}

fn fit_family_t1_field(
    config: &ExperimentConfig,
    manifest: &RunManifest,
) -> Result<Vec<StageOutput>, CliError> {
    let rel = "scans/rates.tsv";
    require_scan(manifest, rel, "set sweep.rate_fields in the config")?;
    let points =
        tables::parse_rate_scan(&read_text(config, rel)?).map_err(|e| CliError::format(rel, e))?;
    let fit = fit_rate_field_law(&points).map_err(|e| CliError::fit(rel, e))?;
    let truth = config.device.relaxation;

    let mut report = FitReport::new("rate-law");
    report.source(rel);
    report
        .value("k_j", fit.law.k_j)
        .value("k_ph", fit.law.k_ph)
        .value(
            "crossover_field",
            fit.law.crossover_field().unwrap_or(f64::NAN),
        )
        .value("n_points", points.len() as f64);
    report.error("k_j", fit.k_j_err).error("k_ph", fit.k_ph_err);
    report
        .truth("k_j", truth.k_j)
        .truth("k_ph", truth.k_ph)
        .truth(
            "crossover_field",
            truth.crossover_field().unwrap_or(f64::NAN),
        );

    let b_lo = points.iter().map(|p| p.b).fold(f64::INFINITY, f64::min);
    let b_hi = points.iter().map(|p| p.b).fold(0.0, f64::max);
    let plot_rows: Vec<Vec<String>> = (0..=80)
        .map(|k| {
            let b = b_lo + (b_hi - b_lo) * k as f64 / 80.0;
            let b3 = b * b * b;
            vec![
                crate::report::format_sig(b),
                crate::report::format_sig(relaxation_rate(&fit.law, b)),
                crate::report::format_sig(fit.law.k_j * b3),
                crate::report::format_sig(fit.law.k_ph * b3 * b3 * b),
            ]
        })
        .collect();

    println!(
        "fit t1-field: k_j {:.2} +- {:.2}, k_ph {:.3} +- {:.3} (truth {:.2}, {:.3})",
        fit.law.k_j, fit.k_j_err, fit.law.k_ph, fit.k_ph_err, truth.k_j, truth.k_ph
    );
    Ok(vec![
        crate::manifest::write_output(
            &config.out_dir,
            "fits/rate_law.toml",
            report.render().as_bytes(),
        )?,
        crate::manifest::write_output(
            &config.out_dir,
            "plots/rate_law.tsv",
            tables::render_table(&["b", "rate", "johnson", "phonon"], &plot_rows).as_bytes(),
        )?,
    ])
}

fn fit_family_thermometry(
    config: &ExperimentConfig,
    manifest: &RunManifest,
) -> Result<Vec<StageOutput>, CliError> {
    let rel = "scans/thermometry.tsv";
    require_scan(manifest, rel, "set sweep.t_mxc in the config")?;
    let points = tables::parse_thermometry_scan(&read_text(config, rel)?)
        .map_err(|e| CliError::format(rel, e))?;
    let fit = fit_thermometry(&points).map_err(|e| CliError::fit(rel, e))?;
    let truth = config.device.thermometry;

    let mut report = FitReport::new("thermometry");
    report.source(rel);
    report
        .value("t_eff", fit.law.t_eff)
        .value("alpha_qq", fit.law.alpha_qq)
        .value("n_points", points.len() as f64);
    report
        .error("t_eff", fit.t_eff_err)
        .error("alpha_qq", fit.alpha_err);
    report
        .truth("t_eff", truth.t_eff)
        .truth("alpha_qq", truth.alpha_qq);
    note_flags(&mut report, &fit.flags);

    let t_hi = points.iter().map(|p| p.t_mxc).fold(0.0, f64::max);
    let plot_rows: Vec<Vec<String>> = (0..=80)
        .map(|k| {
            let t = t_hi * k as f64 / 80.0;
            vec![
                crate::report::format_sig(t),
                crate::report::format_sig(thermometry_width(&fit.law, t)),
            ]
        })
        .collect();

    println!(
        "fit thermometry: t_eff {:.1} mK +- {:.1} (truth {:.1}), alpha {:.3} (truth {:.3})",
        fit.law.t_eff * 1e3,
        fit.t_eff_err * 1e3,
        truth.t_eff * 1e3,
        fit.law.alpha_qq,
        truth.alpha_qq
    );
    Ok(vec![
        crate::manifest::write_output(
            &config.out_dir,
            "fits/thermometry.toml",
            report.render().as_bytes(),
        )?,
        crate::manifest::write_output(
            &config.out_dir,
            "plots/thermometry.tsv",
            tables::render_table(&["t_mxc", "width"], &plot_rows).as_bytes(),
        )?,
    ])
}

fn fit_family_visibility(
    config: &ExperimentConfig,
    manifest: &RunManifest,
) -> Result<Vec<StageOutput>, CliError> {
    // The g-factor and readout parameters come from earlier fit stages when
    // available, otherwise from the device configuration.
    let mut sources = Vec::new();
    let g = match manifest.find_stage("fit-g") {
        Some(_) => {
            let rel = "fits/g_factor.toml";
            let report = FitReport::parse(&read_text(config, rel)?)
                .map_err(|e| CliError::Validation(format!("{rel}: {e}")))?;
            let g = report
                .get_value("g")
                .ok_or_else(|| CliError::Validation(format!("{rel} has no value g")))?;
            sources.push(rel.to_string());
            g
        }
        None => config.device.g_factor,
    };
    let mixture_reports: Vec<FitReport> = match manifest.find_stage("fit-mixture") {
        Some(stage) => stage
            .output
            .iter()
            .filter(|o| o.path.starts_with("fits/mixture_") && o.path.ends_with(".toml"))
            .map(|o| {
                sources.push(o.path.clone());
                FitReport::parse(&read_text(config, &o.path)?)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", o.path)))
            })
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let mean_of = |key: &str, fallback: f64| -> f64 {
        let vals: Vec<f64> = mixture_reports
            .iter()
            .filter_map(|r| r.get_value(key))
            .collect();
        if vals.is_empty() {
            fallback
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    let gamma = mean_of("gamma", config.device.gamma);
    let t_e = mean_of("t_e", config.device.t_e);
    let eps0_down = mean_of("eps0_down", config.device.eps0_down);
    let base = ReadModel::new(gamma, t_e, config.device.ramp_rate, eps0_down, 0.0)
        .map_err(|e| CliError::Validation(format!("visibility base model: {e}")))?;

    let b_min = config.sweep.fields.iter().copied().fold(f64::INFINITY, f64::min);
    let b_max = config.sweep.fields.iter().copied().fold(0.0, f64::max);
    let lo = (0.5 * b_min).max(0.05);
    let hi = 2.0 * b_max;
    let mut grid: Vec<f64> = (0..=60).map(|k| lo + (hi - lo) * k as f64 / 60.0).collect();
    grid.extend(config.sweep.fields.iter().copied());
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();
    let curve = predict_visibility_vs_field(&base, g, &grid)
        .map_err(|e| CliError::fit("visibility grid", e))?;

    let mut report = FitReport::new("visibility");
    for s in &sources {
        report.source(s);
    }
    if sources.is_empty() {
        report.note("no fit stages found; prediction uses configured device parameters");
    }
    report
        .value("g_used", g)
        .value("gamma_used", gamma)
        .value("t_e_used", t_e)
        .value("eps0_down_used", eps0_down)
        .value("b_at_98", b_at_crossing(&curve, 0.98).unwrap_or(f64::NAN));
    if b_at_crossing(&curve, 0.98).is_none() {
        report.note(&format!("0.98 visibility not reached at or below {hi:.2} T"));
    }
    let at_sweep = predict_visibility_vs_field(&base, g, &config.sweep.fields)
        .map_err(|e| CliError::fit("visibility at sweep fields", e))?;
    for (i, p) in at_sweep.iter().enumerate() {
        report
            .value(&format!("b_{i:02}"), p.b)
            .value(&format!("v_star_{i:02}"), p.v_star)
            .value(&format!("t_star_{i:02}"), p.t_star);
    }

    let plot_rows: Vec<Vec<String>> = curve
        .iter()
        .map(|p| {
            vec![
                crate::report::format_sig(p.b),
                crate::report::format_sig(p.t_star),
                crate::report::format_sig(p.v_star),
            ]
        })
        .collect();

    println!(
        "fit visibility: g {:.4}, v* at {:.2} T = {:.4}",
        g,
        b_max,
        curve
            .iter()
            .min_by(|a, b| (a.b - b_max).abs().total_cmp(&(b.b - b_max).abs()))
            .map(|p| p.v_star)
            .unwrap_or(f64::NAN)
    );
    Ok(vec![
        crate::manifest::write_output(
            &config.out_dir,
            "fits/visibility.toml",
            report.render().as_bytes(),
        )?,
        crate::manifest::write_output(
            &config.out_dir,
            "plots/visibility.tsv",
            tables::render_table(&["b", "t_star", "v_star"], &plot_rows).as_bytes(),
        )?,
    ])
}

/// First field at which the visibility curve crosses `level`, linearly
/// interpolated between grid points.
fn b_at_crossing(curve: &[VisibilityPoint], level: f64) -> Option<f64> {
    for pair in curve.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.v_star < level && b.v_star >= level {
            let f = (level - a.v_star) / (b.v_star - a.v_star);
            return Some(a.b + f * (b.b - a.b));
        }
    }
    curve.first().filter(|p| p.v_star >= level).map(|p| p.b)
}

fn fit_family_init(
    config: &ExperimentConfig,
    manifest: &RunManifest,
) -> Result<Vec<StageOutput>, CliError> {
    let rel = "scans/initialization.tsv";
    require_scan(manifest, rel, "set sweep.t_initials in the config")?;
    let scan = tables::parse_initialization_scan(&read_text(config, rel)?)
        .map_err(|e| CliError::format(rel, e))?;
    if scan.is_empty() {
        return Err(CliError::Validation(format!("{rel} has no rows")));
    }

    // Longer emptying should purge the excited state: flag statistically
    // significant rises between consecutive wait times.
    let mut violations = 0usize;
    for pair in scan.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let sa = binomial_error(a.up_fraction, a.n_shots);
        let sb = binomial_error(b.up_fraction, b.n_shots);
        let z = (b.up_fraction - a.up_fraction) / sa.hypot(sb);
        if z > 2.5 {
            violations += 1;
        }
    }
    let min_fraction = scan.iter().map(|p| p.up_fraction).fold(f64::INFINITY, f64::min);
    let final_fraction = scan.last().map(|p| p.up_fraction).unwrap_or(f64::NAN);
    let t_below = scan
        .iter()
        .find(|p| p.up_fraction < 0.05)
        .map(|p| p.t_initial)
        .unwrap_or(f64::NAN);

    let mut report = FitReport::new("initialization");
    report.source(rel);
    report
        .value("final_up_fraction", final_fraction)
        .value("min_up_fraction", min_fraction)
        .value("monotone_violations", violations as f64)
        .value("t_below_5_percent", t_below)
        .value("n_points", scan.len() as f64);
    if violations == 0 {
        report.note("excited-state fraction decays monotonically with wait time");
    } else {
        report.note("excited-state fraction rises significantly at some wait times");
    }
    if t_below.is_nan() {
        report.note("up fraction never drops below 5 percent");
    }

    println!(
        "fit init: final up fraction {:.4}, {} monotonicity violations",
        final_fraction, violations
    );
    Ok(vec![crate::manifest::write_output(
        &config.out_dir,
        "fits/initialization.toml",
        report.render().as_bytes(),
    )?])
}
