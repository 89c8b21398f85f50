//! Spin classification of sensor traces: static voltage/time thresholding
//! and the final-exit-referenced classifier built on penalized change-point
//! detection.

use crate::changepoint::{estimate_noise_sigma, penalized_segmentation, Segmentation};
use crate::constants::K_B;
use crate::model::{require_finite, require_non_negative, require_positive, ModelError};
use crate::simulate::ShotTrace;

/// Assigned spin label for one trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpinLabel {
    Up,
    Down,
    Undetermined,
}

impl std::fmt::Display for SpinLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpinLabel::Up => "up",
            SpinLabel::Down => "down",
            SpinLabel::Undetermined => "undetermined",
        })
    }
}

impl std::str::FromStr for SpinLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(SpinLabel::Up),
            "down" => Ok(SpinLabel::Down),
            "undetermined" => Ok(SpinLabel::Undetermined),
            other => Err(format!("unknown spin label {other:?}")),
        }
    }
}

/// Which classifier produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassifyMethod {
    Static,
    FinalExit,
}

impl std::fmt::Display for ClassifyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ClassifyMethod::Static => "static",
            ClassifyMethod::FinalExit => "final-exit",
        })
    }
}

impl std::str::FromStr for ClassifyMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static" => Ok(ClassifyMethod::Static),
            "final-exit" => Ok(ClassifyMethod::FinalExit),
            other => Err(format!("unknown classification method {other:?}")),
        }
    }
}

/// Classification result for one trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedShot {
    /// First tunnel-out time extracted from the trace (s).
    pub t_out: Option<f64>,
    /// Final exit time from change-point detection (s); final-exit method
    /// only.
    pub t_final_exit: Option<f64>,
    pub label: SpinLabel,
    pub method: ClassifyMethod,
}

/// Static classifier settings: a fixed voltage threshold, a fixed time
/// threshold, and a boxcar pre-filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdConfig {
    /// Voltage cut between the occupied and empty levels (signal units).
    pub v_threshold: f64,
    /// Time cut separating spin-up from spin-down exits (s).
    pub t_threshold: f64,
    /// Boxcar filter length in samples.
    pub filter_window: usize,
}

impl ThresholdConfig {
    pub fn new(v_threshold: f64, t_threshold: f64, filter_window: usize) -> Result<Self, ModelError> {
        require_finite("v_threshold", v_threshold)?;
        require_positive("t_threshold", t_threshold)?;
        if filter_window == 0 {
            return Err(ModelError::NonPositive {
                name: "filter_window",
                value: 0.0,
            });
        }
        Ok(ThresholdConfig {
            v_threshold,
            t_threshold,
            filter_window,
        })
    }
}

/// Final-exit-referenced classifier settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinalExitConfig {
    /// Change-point penalty multiplier; the effective penalty is
    /// penalty·sigma²·ln n with sigma estimated per trace.
    pub penalty: f64,
    /// Nominal voltage cut (signal units); traces with clear two-level
    /// structure re-reference it to their own fitted levels.
    pub v_threshold: f64,
    /// Half-width of the pre-exit exclusion window, in units of
    /// k_B·T_eff; blips starting inside it are treated as thermal
    /// back-tunneling.
    pub exclusion_energy: f64,
    /// Detuning ramp rate (eV/s), converting the exclusion energy to time.
    pub ramp_rate: f64,
}

impl FinalExitConfig {
    /// Conventional exclusion window size.
    pub const DEFAULT_EXCLUSION_ENERGY: f64 = 1.75;

    pub fn new(
        penalty: f64,
        v_threshold: f64,
        exclusion_energy: f64,
        ramp_rate: f64,
    ) -> Result<Self, ModelError> {
        Ok(FinalExitConfig {
            penalty: require_positive("penalty", penalty)?,
            v_threshold: require_finite("v_threshold", v_threshold)?,
            exclusion_energy: require_non_negative("exclusion_energy", exclusion_energy)?,
            ramp_rate: require_positive("ramp_rate", ramp_rate)?,
        })
    }

    /// Exclusion window expressed as a time before the final exit, using
    /// the electron temperature the trace was generated with.
    pub fn exclusion_window(&self, trace: &ShotTrace) -> f64 {
        self.exclusion_energy * K_B * trace.meta.model.t_e / self.ramp_rate
    }
}

/// Trailing boxcar average with window `w`; entry k averages samples
/// max(0, k+1-w)..=k.
fn boxcar(samples: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    for k in 0..samples.len() {
        acc += samples[k];
        if k >= w {
            acc -= samples[k - w];
        }
        out.push(acc / w.min(k + 1) as f64);
    }
    out
}

/// Earliest time at which the boxcar-filtered signal exceeds the voltage
/// threshold, or `None` if it never does.
pub fn first_threshold_crossing(trace: &ShotTrace, cfg: &ThresholdConfig) -> Option<f64> {
    let filtered = boxcar(&trace.samples, cfg.filter_window);
    filtered
        .iter()
        .position(|&v| v > cfg.v_threshold)
        .map(|k| trace.time_of_sample(k))
}

/// Static classification: spin-up iff the first crossing falls before the
/// time threshold; censored traces (no crossing) are labeled down.
pub fn classify_static(trace: &ShotTrace, cfg: &ThresholdConfig) -> ClassifiedShot {
    let t_out = first_threshold_crossing(trace, cfg);
    let label = match t_out {
        Some(t) if t < cfg.t_threshold => SpinLabel::Up,
        _ => SpinLabel::Down,
    };
    ClassifiedShot {
        t_out,
        t_final_exit: None,
        label,
        method: ClassifyMethod::Static,
    }
}

/// Segmentation of a trace plus the voltage cut used to call segments high
/// or low.
struct TraceSegments {
    seg: Segmentation,
    cut: f64,
}

fn segment_trace(trace: &ShotTrace, cfg: &FinalExitConfig) -> TraceSegments {
    let sigma = estimate_noise_sigma(&trace.samples);
    let beta = cfg.penalty * sigma * sigma * (trace.samples.len().max(2) as f64).ln();
    let seg = penalized_segmentation(&trace.samples, beta);
    // re-reference the cut to the trace's own levels when it shows clear
    // two-level structure; this keeps the classifier invariant to slow
    // baseline drift
    let lo = seg.segment_means.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = seg
        .segment_means
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let cut = if seg.segment_means.len() >= 2 && hi - lo > 4.0 * sigma {
        0.5 * (lo + hi)
    } else {
        cfg.v_threshold
    };
    TraceSegments { seg, cut }
}

/// Maximal runs of consecutive segments whose mean exceeds the cut,
/// returned as (start_sample, end_sample) half-open ranges.
fn high_runs(ts: &TraceSegments, n: usize) -> Vec<(usize, usize)> {
    let spans = ts.seg.segments(n);
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (span, mean) in spans.iter().zip(ts.seg.segment_means.iter()) {
        if *mean > ts.cut {
            match runs.last_mut() {
                Some(last) if last.1 == span.0 => last.1 = span.1,
                _ => runs.push(*span),
            }
        }
    }
    runs
}

/// Start time of the final high-level segment, found by penalized
/// change-point detection. `None` when the trace shows no persistent level
/// change or does not end empty.
pub fn detect_final_exit(trace: &ShotTrace, cfg: &FinalExitConfig) -> Option<f64> {
    let ts = segment_trace(trace, cfg);
    if ts.seg.segment_means.len() < 2 {
        return None;
    }
    let runs = high_runs(&ts, trace.samples.len());
    match runs.last() {
        // the trace must end in the empty level
        Some(&(start, end)) if end == trace.samples.len() => Some(trace.time_of_sample(start)),
        _ => None,
    }
}

/// Final-exit-referenced classification: find the permanent exit, then
/// look for an earlier qualifying blip. Blips whose onset falls within the
/// exclusion window before the exit are treated as thermal back-tunneling
/// and ignored (the window is closed at its outer edge). Blips must span
/// at least 2 samples.
pub fn classify_final_exit_referenced(trace: &ShotTrace, cfg: &FinalExitConfig) -> ClassifiedShot {
    let ts = segment_trace(trace, cfg);
    let n = trace.samples.len();
    let runs = high_runs(&ts, n);
    let final_run = match runs.last() {
        Some(&(start, end)) if ts.seg.segment_means.len() >= 2 && end == n => (start, end),
        _ => {
            return ClassifiedShot {
                t_out: None,
                t_final_exit: None,
                label: SpinLabel::Undetermined,
                method: ClassifyMethod::FinalExit,
            }
        }
    };
    let t_final_exit = trace.time_of_sample(final_run.0);
    // closed at the outer edge; the half-sample guard makes the edge
    // decision exact at the sampling resolution
    let cutoff = t_final_exit
        - cfg.exclusion_window(trace)
        - 0.5 * trace.meta.sensor.sample_period;
    let qualifying_onset = runs
        .iter()
        .take(runs.len() - 1)
        .filter(|&&(start, end)| end - start >= 2)
        .map(|&(start, _)| trace.time_of_sample(start))
        .find(|&t| t < cutoff);
    match qualifying_onset {
        Some(t_blip) => ClassifiedShot {
            t_out: Some(t_blip),
            t_final_exit: Some(t_final_exit),
            label: SpinLabel::Up,
            method: ClassifyMethod::FinalExit,
        },
        None => ClassifiedShot {
            t_out: Some(t_final_exit),
            t_final_exit: Some(t_final_exit),
            label: SpinLabel::Down,
            method: ClassifyMethod::FinalExit,
        },
    }
}

/// Exit-time histogram over [0, t_max].
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    /// Counts per bin; bin k covers [k·bin_width, (k+1)·bin_width).
    pub counts: Vec<u64>,
    /// Number of inputs, censored included.
    pub n_total: u64,
    /// Inputs with no exit time or an exit beyond t_max.
    pub n_censored: u64,
}

impl Histogram {
    /// Center time of bin k.
    pub fn bin_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width
    }
}

/// Bin exit times into a histogram covering [0, t_max]; `None` entries and
/// times at or beyond `t_max` count as censored.
pub fn build_histogram(
    t_outs: &[Option<f64>],
    bin_width: f64,
    t_max: f64,
) -> Result<Histogram, ModelError> {
    require_positive("bin_width", bin_width)?;
    require_positive("t_max", t_max)?;
    let n_bins = (t_max / bin_width).ceil() as usize;
    let mut counts = vec![0u64; n_bins];
    let mut n_censored = 0u64;
    for t in t_outs {
        match t {
            Some(t) if *t >= 0.0 && *t < t_max => {
                let k = ((t / bin_width) as usize).min(n_bins - 1);
                counts[k] += 1;
            }
            _ => n_censored += 1,
        }
    }
    Ok(Histogram {
        bin_width,
        counts,
        n_total: t_outs.len() as u64,
        n_censored,
    })
}
