//! `rsm report`: a deterministic plain-text digest of a run directory.
//!
//! The report summarizes which stages ran and what every fit recovered,
//! comparing fitted values against recorded truth where available. Wall-clock
//! timings stay in the manifest so the report text is identical across
//! reruns of the same configuration.

use std::fmt::Write as _;
use std::time::Instant;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::report::FitReport;

pub fn cmd_report(config: &ExperimentConfig) -> Result<(), CliError> {
    let started = Instant::now();
    let mut manifest = RunManifest::load(&config.out_dir)?;
    let text = render_report(config, &manifest)?;
    print!("{text}");
    let output = crate::manifest::write_output(&config.out_dir, "report.txt", text.as_bytes())?;
    manifest.record_stage(
        &config.out_dir,
        crate::manifest::Stage {
            name: "report".into(),
            wall_ms: started.elapsed().as_millis() as u64,
            output: vec![output],
        },
    )
}

fn render_report(config: &ExperimentConfig, manifest: &RunManifest) -> Result<String, CliError> {
    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(w, "run report");
    let _ = writeln!(w, "==========");
    let _ = writeln!(w, "tool            {}", manifest.tool);
    let _ = writeln!(w, "config sha256   {}", manifest.config_sha256);
    let _ = writeln!(w, "device          {}", config.device.name);
    let _ = writeln!(
        w,
        "sweep           {} fields, {} shots per field",
        config.sweep.fields.len(),
        config.sweep.shots_per_point
    );
    let _ = writeln!(w);

    let _ = writeln!(w, "stages");
    let _ = writeln!(w, "------");
    if manifest.stage.is_empty() {
        let _ = writeln!(w, "no stages completed");
    } else {
        for stage in &manifest.stage {
            let _ = writeln!(w, "{:<20} {} outputs", stage.name, stage.output.len());
        }
    }
    let _ = writeln!(w);

    let fit_stages: Vec<&crate::manifest::Stage> = manifest
        .stage
        .iter()
        .filter(|s| s.name.starts_with("fit-"))
        .collect();
    if fit_stages.is_empty() {
        let _ = writeln!(w, "no fits recorded; run `rsm fit`");
        return Ok(out);
    }

    for stage in fit_stages {
        for output in &stage.output {
            if !(output.path.starts_with("fits/") && output.path.ends_with(".toml")) {
                continue;
            }
            let text = std::fs::read_to_string(config.out_dir.join(&output.path))
                .map_err(|e| CliError::file(&output.path, e))?;
            let report = FitReport::parse(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", output.path)))?;
            render_fit_section(w, &output.path, &report);
        }
    }
    Ok(out)
}

fn render_fit_section(w: &mut String, path: &str, report: &FitReport) {
    let _ = writeln!(w, "{} ({})", report.kind, path);
    let _ = writeln!(w, "{}", "-".repeat(report.kind.len() + path.len() + 3));
    for (key, value) in &report.values {
        let err = report.get_error(key);
        let truth = report.get_truth(key);
        let mut line = format!("{key:<18} {value:>14.6e}");
        if let Some(e) = err {
            let _ = write!(line, " +- {e:>12.4e}");
        }
        if let Some(t) = truth {
            let _ = write!(line, "   truth {t:>14.6e}");
            if let Some(e) = err {
                if e > 0.0 {
                    let _ = write!(line, "   pull {:+.2}", (value - t) / e);
                }
            }
        }
        let _ = writeln!(w, "{line}");
    }
    for note in &report.notes {
        let _ = writeln!(w, "note: {note}");
    }
    let _ = writeln!(w);
}
