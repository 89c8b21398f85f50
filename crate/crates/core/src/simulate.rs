//! Monte-Carlo generation of single-shot experiments: spin loading,
//! relaxation during the load stage, ramped-read tunnel events via
//! inverse-CDF sampling, and synthesis of noisy sensor sample streams.
//!
//! Every shot draws from its own counter-derived random stream, so batches
//! rerun bit for bit regardless of execution order and disjoint index
//! ranges give disjoint, reproducible sub-batches.

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{
    require_finite, require_non_negative, require_positive, ModelError, RampSpec, ReadModel, Spin,
};
use crate::numerics::{log_expm1, logistic, softplus};
use crate::rng::{shot_rng, shot_seed};

/// Validation and sampling errors for the simulation layer.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimulateError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("uniform draw must lie strictly inside (0, 1), got {0}")]
    UniformOutOfRange(f64),
    #[error("scan requires at least one sweep point")]
    EmptyScan,
}

/// Stage timings and loading behavior of one readout cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseSequence {
    /// Empty-stage duration (s).
    pub t_empty: f64,
    /// Load-stage duration (s); relaxation acts only during this window.
    pub t_load: f64,
    /// Read-stage duration (s); always equals `read_ramp.t_ramp`.
    pub t_read: f64,
    /// Detuning ramp applied during read.
    pub read_ramp: RampSpec,
    /// Optional descending initialization ramp; its `t_ramp` is the
    /// initialization duration.
    pub init_ramp: Option<RampSpec>,
    /// Probability of loading spin-up when loading non-deterministically.
    pub load_p_up: f64,
    /// Tunnel-in rate for dot refills (Hz); `None` uses the model's gamma.
    pub gamma_in: Option<f64>,
}

impl PulseSequence {
    pub fn new(
        t_empty: f64,
        t_load: f64,
        read_ramp: RampSpec,
        init_ramp: Option<RampSpec>,
        load_p_up: f64,
        gamma_in: Option<f64>,
    ) -> Result<Self, SimulateError> {
        require_non_negative("t_empty", t_empty)?;
        require_non_negative("t_load", t_load)?;
        if !(0.0..=1.0).contains(&load_p_up) {
            return Err(ModelError::ProbabilityOutOfRange(load_p_up).into());
        }
        if let Some(g) = gamma_in {
            require_positive("gamma_in", g)?;
        }
        Ok(PulseSequence {
            t_empty,
            t_load,
            t_read: read_ramp.t_ramp,
            read_ramp,
            init_ramp,
            load_p_up,
            gamma_in,
        })
    }

    /// Refill tunnel-in rate, defaulting to the model's maximum rate.
    #[inline]
    pub fn gamma_in_or(&self, m: &ReadModel) -> f64 {
        self.gamma_in.unwrap_or(m.gamma)
    }
}

/// Charge-sensor response and noise figure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    /// Minimum integration time for unit signal-to-noise (s).
    pub t_min: f64,
    /// Sampling period (s).
    pub sample_period: f64,
    /// Signal level with the dot occupied (arbitrary units).
    pub level_occupied: f64,
    /// Signal level with the dot empty; strictly above `level_occupied`.
    pub level_empty: f64,
    /// Single-pole response time of the sensor chain (s); 0 disables
    /// smoothing.
    pub rise_time: f64,
}

impl SensorModel {
    pub fn new(
        t_min: f64,
        sample_period: f64,
        level_occupied: f64,
        level_empty: f64,
        rise_time: f64,
    ) -> Result<Self, SimulateError> {
        require_positive("t_min", t_min)?;
        require_positive("sample_period", sample_period)?;
        require_finite("level_occupied", level_occupied)?;
        require_finite("level_empty", level_empty)?;
        require_non_negative("rise_time", rise_time)?;
        if level_empty <= level_occupied {
            return Err(ModelError::NonPositive {
                name: "level_empty - level_occupied",
                value: level_empty - level_occupied,
            }
            .into());
        }
        Ok(SensorModel {
            t_min,
            sample_period,
            level_occupied,
            level_empty,
            rise_time,
        })
    }

    /// Signal step between the empty and occupied levels.
    #[inline]
    pub fn level_step(&self) -> f64 {
        self.level_empty - self.level_occupied
    }

    /// Per-sample noise standard deviation; the step over the SNR attained
    /// by integrating one sample period.
    #[inline]
    pub fn noise_sigma(&self) -> f64 {
        self.level_step() / self.snr()
    }

    /// Per-sample signal-to-noise ratio sqrt(sample_period/t_min).
    #[inline]
    pub fn snr(&self) -> f64 {
        (self.sample_period / self.t_min).sqrt()
    }
}

/// Ground-truth event record for one shot; all times are measured from the
/// start of the read ramp and may exceed the read window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotTruth {
    /// Spin at the start of read, after load-stage relaxation.
    pub initial_spin: Spin,
    /// First tunnel-out time of a spin-up electron; spin-up shots only.
    pub t_up_out: Option<f64>,
    /// Refill time of the replacement electron; spin-up shots only.
    pub t_blip_in: Option<f64>,
    /// Final tunnel-out time of the (possibly replacement) spin-down
    /// electron.
    pub t_down_out: f64,
}

impl ShotTruth {
    /// Time of the first tunnel-out event.
    #[inline]
    pub fn first_exit(&self) -> f64 {
        self.t_up_out.unwrap_or(self.t_down_out)
    }
}

/// Per-shot provenance: batch physics plus any slow-drift offsets applied
/// to this particular shot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotMeta {
    /// Applied magnetic field (T).
    pub field_b: f64,
    /// Batch-level readout model, before drift offsets.
    pub model: ReadModel,
    /// Sensor used to synthesize the samples.
    pub sensor: SensorModel,
    /// Detuning offset added to `model.eps0_down` for this shot (eV).
    pub eps_offset: f64,
    /// Sensor baseline shift coupled to the same drift (signal units).
    pub baseline_offset: f64,
}

/// One sampled sensor time series with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ShotTrace {
    /// Sensor samples at midpoints of consecutive sample periods.
    pub samples: Vec<f64>,
    pub truth: ShotTruth,
    /// Counter-derived seed that generated this shot.
    pub seed: u64,
    pub meta: ShotMeta,
}

impl ShotTrace {
    /// Time stamp of sample `k` (the midpoint of its integration window).
    #[inline]
    pub fn time_of_sample(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.meta.sensor.sample_period
    }

    /// Sampled duration of the trace.
    #[inline]
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 * self.meta.sensor.sample_period
    }

    /// True when no tunnel-out event falls inside the sampled window.
    #[inline]
    pub fn is_censored(&self) -> bool {
        self.truth.first_exit() >= self.duration()
    }
}

/// Slow detuning drift injected across a batch, for classifier stress
/// tests: shot i of n receives a detuning offset ramping linearly over
/// ±`amplitude_frac` of the read-ramp energy span, and a sensor baseline
/// shift of `sensor_coupling` level-steps per unit fractional offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftSpec {
    pub amplitude_frac: f64,
    pub sensor_coupling: f64,
}

impl DriftSpec {
    pub fn new(amplitude_frac: f64, sensor_coupling: f64) -> Result<Self, SimulateError> {
        require_non_negative("amplitude_frac", amplitude_frac)?;
        require_finite("sensor_coupling", sensor_coupling)?;
        Ok(DriftSpec {
            amplitude_frac,
            sensor_coupling,
        })
    }
}

/// Inverse-CDF draw of a tunnel-out time for one spin from the uniform
/// variate `u`. The closed form guarantees a non-negative time for any
/// u in (0, 1); draws may exceed any finite read window (censoring).
pub fn sample_tunnel_time(m: &ReadModel, spin: Spin, u: f64) -> Result<f64, SimulateError> {
    if !(u > 0.0 && u < 1.0) {
        return Err(SimulateError::UniformOutOfRange(u));
    }
    let k_t = m.k_t();
    let x0 = m.eps0(spin) / k_t;
    // solve C(t) = u: softplus(x) = softplus(x0) - ln(1-u)/p
    let x = log_expm1(softplus(x0) - (-u).ln_1p() / m.shape_p());
    // non-negative analytically; clamp pure float roundoff
    Ok(((k_t * x - m.eps0(spin)) / m.r).max(0.0))
}

/// Strictly open-interval uniform draw.
#[inline]
fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 && u < 1.0 {
            return u;
        }
    }
}

fn effective_model(m: &ReadModel, eps_offset: f64) -> ReadModel {
    ReadModel {
        eps0_down: m.eps0_down + eps_offset,
        ..*m
    }
}

/// Simulate one complete shot: load, relax, read, and synthesize the
/// sensor trace. `t1` may be infinite (no relaxation). Draw order is fixed
/// (load, relax, event times, noise) so equal inputs reproduce exactly.
pub fn simulate_shot(
    seq: &PulseSequence,
    m: &ReadModel,
    sensor: &SensorModel,
    t1: f64,
    field_b: f64,
    eps_offset: f64,
    baseline_offset: f64,
    seed: u64,
) -> ShotTrace {
    let mut rng = shot_rng(seed);
    let eff = effective_model(m, eps_offset);

    let loaded_up = rng.random_bool(seq.load_p_up);
    // relaxation acts only during the load stage
    let relax_p = -(-seq.t_load / t1).exp_m1();
    let relaxed = rng.random_bool(relax_p.clamp(0.0, 1.0));
    let initial_spin = if loaded_up && !relaxed {
        Spin::Up
    } else {
        Spin::Down
    };

    let truth = match initial_spin {
        Spin::Down => {
            let t_down = sample_tunnel_time(&eff, Spin::Down, open_uniform(&mut rng))
                .expect("open_uniform stays in (0, 1)");
            ShotTruth {
                initial_spin,
                t_up_out: None,
                t_blip_in: None,
                t_down_out: t_down,
            }
        }
        Spin::Up => {
            let t_up = sample_tunnel_time(&eff, Spin::Up, open_uniform(&mut rng))
                .expect("open_uniform stays in (0, 1)");
            let refill = Exp::new(seq.gamma_in_or(&eff))
                .expect("gamma_in validated positive")
                .sample(&mut rng);
            let t_blip_in = t_up + refill;
            // the replacement electron's clock restarts at the ramp position
            // reached at the refill instant
            let restarted = ReadModel {
                eps0_down: eff.eps0_down + eff.r * t_blip_in,
                ..eff
            };
            let dwell = sample_tunnel_time(&restarted, Spin::Down, open_uniform(&mut rng))
                .expect("open_uniform stays in (0, 1)");
            ShotTruth {
                initial_spin,
                t_up_out: Some(t_up),
                t_blip_in: Some(t_blip_in),
                t_down_out: t_blip_in + dwell,
            }
        }
    };

    let n_samples = (seq.t_read / sensor.sample_period).floor() as usize;
    let sigma = sensor.noise_sigma();
    let noise = Normal::new(0.0, sigma).expect("sigma validated finite");
    let alpha = if sensor.rise_time > 0.0 {
        1.0 - (-sensor.sample_period / sensor.rise_time).exp()
    } else {
        1.0
    };
    let occupied_at = |t: f64| match (truth.t_up_out, truth.t_blip_in) {
        (Some(t_up), Some(t_in)) => t < t_up || (t >= t_in && t < truth.t_down_out),
        _ => t < truth.t_down_out,
    };
    let mut samples = Vec::with_capacity(n_samples);
    let mut filtered = sensor.level_occupied;
    for k in 0..n_samples {
        let t = (k as f64 + 0.5) * sensor.sample_period;
        let ideal = if occupied_at(t) {
            sensor.level_occupied
        } else {
            sensor.level_empty
        };
        filtered += alpha * (ideal - filtered);
        samples.push(filtered + baseline_offset + noise.sample(&mut rng));
    }

    ShotTrace {
        samples,
        truth,
        seed,
        meta: ShotMeta {
            field_b,
            model: *m,
            sensor: *sensor,
            eps_offset,
            baseline_offset,
        },
    }
}

/// Generate `n` shots with counter-derived per-shot seeds, optionally
/// applying a slow linear drift across the batch.
pub fn simulate_batch_with_drift(
    n: usize,
    seq: &PulseSequence,
    m: &ReadModel,
    sensor: &SensorModel,
    t1: f64,
    field_b: f64,
    base_seed: u64,
    drift: Option<&DriftSpec>,
) -> Vec<ShotTrace> {
    let eps_span = m.r * seq.t_read;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let (eps_offset, baseline_offset) = match drift {
                Some(d) if n > 1 => {
                    let frac = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
                    (
                        d.amplitude_frac * eps_span * frac,
                        d.sensor_coupling * d.amplitude_frac * frac * sensor.level_step(),
                    )
                }
                _ => (0.0, 0.0),
            };
            simulate_shot(
                seq,
                m,
                sensor,
                t1,
                field_b,
                eps_offset,
                baseline_offset,
                shot_seed(base_seed, i as u64),
            )
        })
        .collect()
}

/// Generate `n` drift-free shots; equal inputs rerun bit for bit.
pub fn simulate_batch(
    n: usize,
    seq: &PulseSequence,
    m: &ReadModel,
    sensor: &SensorModel,
    t1: f64,
    field_b: f64,
    base_seed: u64,
) -> Vec<ShotTrace> {
    simulate_batch_with_drift(n, seq, m, sensor, t1, field_b, base_seed, None)
}

/// One point of a load-duration scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationScanPoint {
    pub t_load: f64,
    /// Fraction of shots whose ground-truth spin at read start is up.
    pub truth_up_fraction: f64,
    /// Fraction labeled up by the supplied classifier.
    pub classified_up_fraction: f64,
    pub n_shots: usize,
}

/// Sweep the load duration and measure the surviving spin-up fraction both
/// from ground truth and through `classify`. The up population decays from
/// `seq.load_p_up` toward `residual_floor` with time constant `t1`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_relaxation_scan(
    t_loads: &[f64],
    shots_per_point: usize,
    seq: &PulseSequence,
    m: &ReadModel,
    sensor: &SensorModel,
    t1: f64,
    residual_floor: f64,
    field_b: f64,
    base_seed: u64,
    classify: &(dyn Fn(&ShotTrace) -> Option<Spin> + Sync),
) -> Result<Vec<RelaxationScanPoint>, SimulateError> {
    if t_loads.is_empty() {
        return Err(SimulateError::EmptyScan);
    }
    if !(0.0..=1.0).contains(&residual_floor) {
        return Err(ModelError::ProbabilityOutOfRange(residual_floor).into());
    }
    t_loads
        .iter()
        .enumerate()
        .map(|(point, &t_load)| {
            require_non_negative("t_load", t_load)?;
            // collapse load + relaxation into the surviving up probability,
            // then simulate the read stage with that loading and no further
            // decay; the residual floor models thermal re-excitation
            let survive = (-t_load / t1).exp();
            let p_up = residual_floor + (seq.load_p_up - residual_floor) * survive;
            let point_seq = PulseSequence {
                t_load,
                load_p_up: p_up,
                ..*seq
            };
            let traces = simulate_batch(
                shots_per_point,
                &point_seq,
                m,
                sensor,
                f64::INFINITY,
                field_b,
                shot_seed(base_seed, point as u64),
            );
            let truth_up = traces
                .iter()
                .filter(|tr| tr.truth.initial_spin == Spin::Up)
                .count();
            let classified_up = traces
                .iter()
                .filter(|tr| classify(tr) == Some(Spin::Up))
                .count();
            Ok(RelaxationScanPoint {
                t_load,
                truth_up_fraction: truth_up as f64 / shots_per_point.max(1) as f64,
                classified_up_fraction: classified_up as f64 / shots_per_point.max(1) as f64,
                n_shots: shots_per_point,
            })
        })
        .collect()
}

/// One point of an initialization-ramp scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitializationScanPoint {
    pub t_initial: f64,
    /// Fraction of shots that end the initialization loaded spin-up.
    pub up_fraction: f64,
    pub n_shots: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum DotState {
    Empty,
    Occupied(Spin),
}

/// Sweep the duration of a descending initialization ramp and measure the
/// loaded spin-up fraction.
///
/// The levels start one read-ramp energy span above the load position and
/// descend linearly over `t_initial`; tunnel-in rates follow the Fermi
/// occupation of each level and an electron sitting above the Fermi level
/// can escape again. Slow ramps therefore load spin-down: the lower level
/// crosses the Fermi level first and captures the electron before the
/// upper level becomes available. Dynamics are integrated by thinning with
/// a fixed step of one sample period.
pub fn simulate_initialization_scan(
    t_initials: &[f64],
    shots_per_point: usize,
    seq: &PulseSequence,
    m: &ReadModel,
    sensor: &SensorModel,
    base_seed: u64,
) -> Result<Vec<InitializationScanPoint>, SimulateError> {
    if t_initials.is_empty() {
        return Err(SimulateError::EmptyScan);
    }
    let gamma_in = seq.gamma_in_or(m);
    let eps_span = m.r * seq.t_read;
    let dt = sensor.sample_period;
    t_initials
        .iter()
        .enumerate()
        .map(|(point, &t_init)| {
            require_non_negative("t_initial", t_init)?;
            let point_seed = shot_seed(base_seed, point as u64);
            let up_count: usize = (0..shots_per_point)
                .into_par_iter()
                .filter(|&i| {
                    let mut rng = shot_rng(shot_seed(point_seed, i as u64));
                    init_ramp_shot(&mut rng, m, seq.load_p_up, gamma_in, eps_span, t_init, dt)
                        == Spin::Up
                })
                .count();
            Ok(InitializationScanPoint {
                t_initial: t_init,
                up_fraction: up_count as f64 / shots_per_point.max(1) as f64,
                n_shots: shots_per_point,
            })
        })
        .collect()
}

/// Final loaded spin after one descending initialization ramp.
fn init_ramp_shot<R: Rng>(
    rng: &mut R,
    m: &ReadModel,
    load_p_up: f64,
    gamma_in: f64,
    eps_span: f64,
    t_init: f64,
    dt: f64,
) -> Spin {
    let k_t = m.k_t();
    // spin-down detuning during the descent, ending at the load position
    let eps_down_at = |t: f64| {
        if t >= t_init {
            m.eps0_down
        } else {
            m.eps0_down + eps_span * (1.0 - t / t_init)
        }
    };
    let mut state = DotState::Empty;
    let steps = (t_init / dt).ceil() as usize;
    for k in 0..steps {
        let t = (k as f64 + 0.5) * dt;
        let x_down = eps_down_at(t) / k_t;
        let x_up = x_down + m.e_z / k_t;
        state = step_dot_state(rng, state, x_up, x_down, load_p_up, gamma_in, m.gamma, dt);
    }
    // after the ramp settles at the load position, finish the race in
    // closed form; escape from below the Fermi level is negligible
    if state == DotState::Empty {
        let x_down = m.eps0_down / k_t;
        let x_up = x_down + m.e_z / k_t;
        let rate_up = load_p_up * gamma_in * logistic(-x_up);
        let rate_down = (1.0 - load_p_up) * gamma_in * logistic(-x_down);
        let total = rate_up + rate_down;
        state = if total <= 0.0 {
            DotState::Occupied(Spin::Down)
        } else if rng.random_bool((rate_up / total).clamp(0.0, 1.0)) {
            DotState::Occupied(Spin::Up)
        } else {
            DotState::Occupied(Spin::Down)
        };
    }
    match state {
        DotState::Occupied(s) => s,
        DotState::Empty => Spin::Down,
    }
}

/// One thinning step of the loading dynamics at fixed normalized detunings.
#[allow(clippy::too_many_arguments)]
fn step_dot_state<R: Rng>(
    rng: &mut R,
    state: DotState,
    x_up: f64,
    x_down: f64,
    load_p_up: f64,
    gamma_in: f64,
    gamma_out: f64,
    dt: f64,
) -> DotState {
    match state {
        DotState::Empty => {
            let rate_up = load_p_up * gamma_in * logistic(-x_up);
            let rate_down = (1.0 - load_p_up) * gamma_in * logistic(-x_down);
            let total = rate_up + rate_down;
            let p_any = -(-total * dt).exp_m1();
            if total > 0.0 && rng.random_bool(p_any.clamp(0.0, 1.0)) {
                if rng.random_bool((rate_up / total).clamp(0.0, 1.0)) {
                    DotState::Occupied(Spin::Up)
                } else {
                    DotState::Occupied(Spin::Down)
                }
            } else {
                DotState::Empty
            }
        }
        DotState::Occupied(spin) => {
            let x = if spin == Spin::Up { x_up } else { x_down };
            // an electron above the Fermi level escapes back to the lead
            let rate_out = gamma_out * logistic(x);
            let p_out = -(-rate_out * dt).exp_m1();
            if rng.random_bool(p_out.clamp(0.0, 1.0)) {
                DotState::Empty
            } else {
                state
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tunnel_out_cdf;
    use approx::assert_relative_eq;

    fn test_model() -> ReadModel {
        ReadModel::new(5_000.0, 0.8, 0.38, -4.5e-4, 2.5e-4).unwrap()
    }

    fn test_sensor() -> SensorModel {
        SensorModel::new(9e-9, 2e-6, 0.0, 1.0, 2e-6).unwrap()
    }

    fn test_seq() -> PulseSequence {
        let ramp = RampSpec::new((-2.05e-3, 0.505e-3), 3e-3).unwrap();
        PulseSequence::new(1e-3, 2e-4, ramp, None, 0.5, None).unwrap()
    }

    #[test]
    fn pulse_sequence_derives_t_read() {
        let seq = test_seq();
        assert_eq!(seq.t_read, seq.read_ramp.t_ramp);
        assert!(PulseSequence::new(
            -1.0,
            0.0,
            RampSpec::new((1e-3, 0.0), 1e-3).unwrap(),
            None,
            0.5,
            None
        )
        .is_err());
    }

    #[test]
    fn sensor_validation() {
        assert!(SensorModel::new(0.0, 2e-6, 0.0, 1.0, 0.0).is_err());
        assert!(SensorModel::new(9e-9, 2e-6, 1.0, 0.5, 0.0).is_err());
        let s = test_sensor();
        assert_relative_eq!(s.snr(), (2e-6f64 / 9e-9).sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn sampler_rejects_closed_endpoints() {
        let m = test_model();
        assert!(sample_tunnel_time(&m, Spin::Down, 0.0).is_err());
        assert!(sample_tunnel_time(&m, Spin::Down, 1.0).is_err());
        assert!(sample_tunnel_time(&m, Spin::Down, -0.2).is_err());
    }

    #[test]
    fn sampler_inverts_cdf() {
        let m = test_model();
        for spin in [Spin::Up, Spin::Down] {
            for &u in &[1e-9, 0.1, 0.5, 0.9, 1.0 - 1e-9] {
                let t = sample_tunnel_time(&m, spin, u).unwrap();
                assert!(t >= 0.0);
                assert_relative_eq!(tunnel_out_cdf(&m, spin, t), u, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn sampler_small_u_near_zero() {
        let m = test_model();
        let t = sample_tunnel_time(&m, Spin::Down, 1e-300).unwrap();
        assert!(t >= 0.0 && t < 1e-6);
    }

    #[test]
    fn shot_truth_ordering() {
        let (seq, m, sensor) = (test_seq(), test_model(), test_sensor());
        for seed in 0..200 {
            let tr = simulate_shot(&seq, &m, &sensor, f64::INFINITY, 2.0, 0.0, 0.0, seed);
            if let (Some(t_up), Some(t_in)) = (tr.truth.t_up_out, tr.truth.t_blip_in) {
                assert!(t_up < t_in);
                assert!(t_in < tr.truth.t_down_out);
            }
            assert_eq!(tr.samples.len(), 1500);
        }
    }

    #[test]
    fn instant_relaxation_loads_down() {
        let (seq, m, sensor) = (test_seq(), test_model(), test_sensor());
        for seed in 0..100 {
            let tr = simulate_shot(&seq, &m, &sensor, 1e-12, 2.0, 0.0, 0.0, seed);
            assert_eq!(tr.truth.initial_spin, Spin::Down);
            assert!(tr.truth.t_up_out.is_none());
        }
    }

    #[test]
    fn batch_is_deterministic_and_prefix_stable() {
        let (seq, m, sensor) = (test_seq(), test_model(), test_sensor());
        let a = simulate_batch(50, &seq, &m, &sensor, f64::INFINITY, 2.0, 99);
        let b = simulate_batch(50, &seq, &m, &sensor, f64::INFINITY, 2.0, 99);
        assert_eq!(a, b);
        let c = simulate_batch(20, &seq, &m, &sensor, f64::INFINITY, 2.0, 99);
        assert_eq!(&a[..20], &c[..]);
    }

    #[test]
    fn relaxation_scan_flat_when_t1_infinite() {
        let (seq, m, sensor) = (test_seq(), test_model(), test_sensor());
        let pts = simulate_relaxation_scan(
            &[1e-4, 1e-3, 1e-2],
            400,
            &seq,
            &m,
            &sensor,
            f64::INFINITY,
            0.0,
            2.0,
            7,
            &|tr| Some(tr.truth.initial_spin),
        )
        .unwrap();
        for p in pts {
            assert!((p.truth_up_fraction - 0.5).abs() < 0.08);
        }
    }

    #[test]
    fn empty_scans_rejected() {
        let (seq, m, sensor) = (test_seq(), test_model(), test_sensor());
        assert_eq!(
            simulate_relaxation_scan(&[], 10, &seq, &m, &sensor, 1e-3, 0.0, 2.0, 7, &|_| None)
                .unwrap_err(),
            SimulateError::EmptyScan
        );
        assert_eq!(
            simulate_initialization_scan(&[], 10, &seq, &m, &sensor, 7).unwrap_err(),
            SimulateError::EmptyScan
        );
    }

    #[test]
    fn fast_init_ramp_is_unselective() {
        let (seq, m, sensor) = (test_seq(), test_model(), test_sensor());
        let pts =
            simulate_initialization_scan(&[1e-9], 600, &seq, &m, &sensor, 11).unwrap();
        assert!((pts[0].up_fraction - seq.load_p_up).abs() < 0.08);
    }
}
