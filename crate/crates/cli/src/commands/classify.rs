//! The classify stage: label every simulated batch with the requested
//! method, one table per batch.

use std::fs::File;
use std::time::Instant;

use rsm_core::classify::ClassifyMethod;
use rsm_core::io::{read_trace_batch, write_classification_tsv, ClassificationRow};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{write_output, RunManifest, Stage, StageOutput};

use super::ResolvedClassifier;

pub fn cmd_classify(
    config: &ExperimentConfig,
    method_flag: Option<ClassifyMethod>,
) -> Result<(), CliError> {
    let started = Instant::now();
    let method = method_flag.unwrap_or(config.classify.method);
    let out = &config.out_dir;
    let mut manifest = RunManifest::load_or_new(out, &config.sha256)?;
    let simulate = manifest
        .find_stage("simulate")
        .ok_or_else(|| CliError::Validation("no simulate stage in the manifest; run simulate first".into()))?;

    let batch_paths: Vec<String> = simulate
        .output
        .iter()
        .map(|o| o.path.clone())
        .filter(|p| p.starts_with("traces/") && p.ends_with(".trc"))
        .collect();
    if batch_paths.is_empty() {
        return Err(CliError::Validation(
            "the simulate stage recorded no trace batches".into(),
        ));
    }

    let mut outputs: Vec<StageOutput> = Vec::new();
    for rel in &batch_paths {
        let path = out.join(rel);
        let mut file =
            File::open(&path).map_err(|e| CliError::file(path.display().to_string(), e))?;
        let traces =
            read_trace_batch(&mut file).map_err(|e| CliError::format(rel.clone(), e))?;

        let stem = rel
            .trim_start_matches("traces/")
            .trim_end_matches(".trc")
            .to_string();
        let rows: Vec<ClassificationRow> = if let Some(first) = traces.first() {
            let classifier = ResolvedClassifier::build(
                &config.classify,
                method,
                &first.meta.model,
                &first.meta.sensor,
            )?;
            traces
                .iter()
                .map(|t| ClassificationRow::from_shot(t.seed, &classifier.classify(t)))
                .collect()
        } else {
            Vec::new()
        };

        let mut bytes = Vec::new();
        write_classification_tsv(&mut bytes, &rows)
            .map_err(|e| CliError::format(rel.clone(), e))?;
        let table_rel = format!("classify/{stem}.{method}.tsv");
        outputs.push(write_output(out, &table_rel, &bytes)?);
        println!("wrote {table_rel} ({} shots)", rows.len());
    }

    manifest.record_stage(
        out,
        Stage {
            name: format!("classify-{method}"),
            wall_ms: started.elapsed().as_millis() as u64,
            output: outputs,
        },
    )
}
