//! Pipeline verbs. Each stage reads what previous stages recorded in the
//! manifest, writes its outputs under the run directory, and appends a
//! hashed stage record.

mod classify;
mod fit;
mod report;
mod selfcheck;
mod simulate;

pub use classify::cmd_classify;
pub use fit::{cmd_fit, FitFamily};
pub use report::cmd_report;
pub use selfcheck::{cmd_selfcheck, run_selfcheck};
pub use simulate::cmd_simulate;

use rsm_core::classify::{
    classify_final_exit_referenced, classify_static, ClassifiedShot, ClassifyMethod,
    FinalExitConfig, SpinLabel, ThresholdConfig,
};
use rsm_core::model::{optimal_threshold, ReadModel};
use rsm_core::rng::shot_seed;
use rsm_core::simulate::{SensorModel, ShotTrace};
use rsm_core::Spin;

use crate::config::{ClassifyConfig, ExperimentConfig};
use crate::error::CliError;

// disjoint per-stage seed streams derived from the config seed
pub(crate) const STREAM_TRACES: u64 = 1 << 32;
pub(crate) const STREAM_RELAXATION: u64 = 2 << 32;
pub(crate) const STREAM_INITIALIZATION: u64 = 3 << 32;
pub(crate) const STREAM_THERMOMETRY: u64 = 4 << 32;
pub(crate) const STREAM_RATES: u64 = 5 << 32;

pub(crate) fn stream_seed(config: &ExperimentConfig, stream: u64, index: u64) -> u64 {
    shot_seed(config.seed, stream + index)
}

/// Run-relative file stem of the batch at sweep-field index `i`.
pub(crate) fn field_stem(i: usize) -> String {
    format!("field_{i:02}")
}

/// A classifier with every threshold resolved against a concrete model
/// and sensor.
pub(crate) enum ResolvedClassifier {
    Static(ThresholdConfig),
    FinalExit(FinalExitConfig),
}

impl ResolvedClassifier {
    pub fn build(
        cc: &ClassifyConfig,
        method: ClassifyMethod,
        model: &ReadModel,
        sensor: &SensorModel,
    ) -> Result<Self, CliError> {
        let v_threshold = cc
            .v_threshold
            .unwrap_or(0.5 * (sensor.level_occupied + sensor.level_empty));
        match method {
            ClassifyMethod::Static => {
                let t_threshold = match cc.t_threshold {
                    Some(t) => t,
                    None => {
                        optimal_threshold(model)
                            .map_err(|e| {
                                CliError::Validation(format!(
                                    "classify.t_threshold cannot default: {e}"
                                ))
                            })?
                            .0
                    }
                };
                let cfg = ThresholdConfig::new(v_threshold, t_threshold, cc.filter_window)
                    .map_err(|e| CliError::Validation(format!("classify: {e}")))?;
                Ok(ResolvedClassifier::Static(cfg))
            }
            ClassifyMethod::FinalExit => {
                let cfg =
                    FinalExitConfig::new(cc.penalty, v_threshold, cc.exclusion_energy, model.r)
                        .map_err(|e| CliError::Validation(format!("classify: {e}")))?;
                Ok(ResolvedClassifier::FinalExit(cfg))
            }
        }
    }

    pub fn classify(&self, trace: &ShotTrace) -> ClassifiedShot {
        match self {
            ResolvedClassifier::Static(cfg) => classify_static(trace, cfg),
            ResolvedClassifier::FinalExit(cfg) => classify_final_exit_referenced(trace, cfg),
        }
    }

    /// Label as a spin, with undetermined shots mapping to `None`.
    pub fn spin_of(&self, trace: &ShotTrace) -> Option<Spin> {
        match self.classify(trace).label {
            SpinLabel::Up => Some(Spin::Up),
            SpinLabel::Down => Some(Spin::Down),
            SpinLabel::Undetermined => None,
        }
    }
}

/// Binomial standard error with the rate clamped away from 0 and 1 so
/// weights stay finite at the extremes.
pub(crate) fn binomial_error(fraction: f64, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let floor = 1.0 / (n as f64 + 2.0);
    let p = fraction.clamp(floor, 1.0 - floor);
    (p * (1.0 - p) / n as f64).sqrt()
}
