//! Experiment configuration: a strict TOML schema with unit-suffixed
//! quantities, dotted-path overrides, and eager validation of every
//! embedded physical object.

use std::fmt;
use std::path::PathBuf;

use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

use rsm_core::classify::ClassifyMethod;
use rsm_core::model::{
    detuning_transform, ramp_rate, zeeman_energy, LeverArmMatrix, RampSpec, ReadModel,
    RelaxationLaw, ThermometryLaw,
};
use rsm_core::simulate::{DriftSpec, PulseSequence, SensorModel};

use crate::error::CliError;

/// Unit suffix tables, one per dimension, mapping to canonical SI scales.
pub(crate) mod units {
    pub const TIME: &[(&str, f64)] = &[
        ("s", 1.0),
        ("ms", 1e-3),
        ("us", 1e-6),
        ("μs", 1e-6),
        ("ns", 1e-9),
    ];
    pub const ENERGY: &[(&str, f64)] = &[
        ("eV", 1.0),
        ("meV", 1e-3),
        ("ueV", 1e-6),
        ("μeV", 1e-6),
        ("neV", 1e-9),
    ];
    pub const VOLTAGE: &[(&str, f64)] =
        &[("V", 1.0), ("mV", 1e-3), ("uV", 1e-6), ("μV", 1e-6)];
    pub const TEMPERATURE: &[(&str, f64)] = &[("K", 1.0), ("mK", 1e-3)];
    pub const RATE: &[(&str, f64)] = &[("Hz", 1.0), ("kHz", 1e3), ("MHz", 1e6)];
    pub const FIELD: &[(&str, f64)] = &[("T", 1.0), ("mT", 1e-3)];
}

/// Parse "<number> <unit>" into canonical units using the given suffix
/// table; dimensioned quantities must carry an explicit unit.
pub(crate) fn parse_quantity(s: &str, dimension: &str, units: &[(&str, f64)]) -> Result<f64, String> {
    let mut parts = s.split_whitespace();
    let (Some(num), Some(unit), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(format!(
            "expected \"<value> <unit>\" for a {dimension} quantity, got {s:?}"
        ));
    };
    let value: f64 = num
        .parse()
        .map_err(|_| format!("invalid number {num:?} in {dimension} quantity {s:?}"))?;
    if !value.is_finite() {
        return Err(format!("non-finite {dimension} quantity {s:?}"));
    }
    for &(suffix, scale) in units {
        if unit == suffix {
            return Ok(value * scale);
        }
    }
    let known: Vec<&str> = units.iter().map(|&(u, _)| u).collect();
    Err(format!(
        "unknown {dimension} unit {unit:?}; use one of {known:?}"
    ))
}

macro_rules! quantity {
    ($name:ident, $dimension:literal, $table:expr, $example:literal) => {
        /// Unit-suffixed quantity stored in canonical units.
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name(pub f64);

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                struct V;
                impl<'de> Visitor<'de> for V {
                    type Value = $name;
                    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                        write!(f, "a {} string like \"1.5 {}\"", $dimension, $example)
                    }
                    fn visit_str<E: de::Error>(self, s: &str) -> Result<$name, E> {
                        parse_quantity(s, $dimension, $table)
                            .map($name)
                            .map_err(E::custom)
                    }
                    fn visit_f64<E: de::Error>(self, v: f64) -> Result<$name, E> {
                        Err(E::custom(format!(
                            "bare number {v} lacks a {} unit; write e.g. \"{v} {}\"",
                            $dimension, $example
                        )))
                    }
                    fn visit_i64<E: de::Error>(self, v: i64) -> Result<$name, E> {
                        self.visit_f64(v as f64)
                    }
                }
                d.deserialize_any(V)
            }
        }
    };
}

quantity!(Seconds, "time", units::TIME, "ms");
quantity!(Ev, "energy", units::ENERGY, "ueV");
quantity!(Volts, "voltage", units::VOLTAGE, "mV");
quantity!(Kelvin, "temperature", units::TEMPERATURE, "mK");
quantity!(Hertz, "rate", units::RATE, "kHz");
quantity!(Tesla, "field", units::FIELD, "T");

fn deserialize_method<'de, D: Deserializer<'de>>(d: D) -> Result<ClassifyMethod, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(de::Error::custom)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: u64,
    out_dir: String,
    device: RawDevice,
    pulse: RawPulse,
    sweep: RawSweep,
    classify: RawClassify,
    drift: Option<RawDrift>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDevice {
    name: String,
    g_factor: f64,
    gamma: Hertz,
    t_e: Kelvin,
    eps0_down: Ev,
    t1: Seconds,
    t1_field: Tesla,
    lever_arms: RawLeverArms,
    ramp: RawRamp,
    relaxation: RawRelaxation,
    thermometry: RawThermometry,
    sensor: RawSensor,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLeverArms {
    a_qq: f64,
    a_qs: f64,
    a_sq: f64,
    a_ss: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRamp {
    dv_qubit: Volts,
    dv_sensor: Volts,
    duration: Seconds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelaxation {
    /// Johnson coefficient (Hz/T^3).
    k_j: f64,
    /// Phonon coefficient (Hz/T^7).
    k_ph: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawThermometry {
    t_eff: Kelvin,
    alpha_qq: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    t_min: Seconds,
    sample_period: Seconds,
    level_occupied: f64,
    level_empty: f64,
    rise_time: Seconds,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPulse {
    t_empty: Seconds,
    t_load: Seconds,
    load_p_up: f64,
    gamma_in: Option<Hertz>,
}

fn default_scan_shots() -> usize {
    100
}
fn default_width_noise() -> f64 {
    0.02
}
fn default_rate_noise() -> f64 {
    0.15
}
fn default_relaxation_floor() -> f64 {
    0.02
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    fields: Vec<Tesla>,
    shots_per_point: usize,
    #[serde(default)]
    t_loads: Vec<Seconds>,
    #[serde(default)]
    t_initials: Vec<Seconds>,
    #[serde(default = "default_scan_shots")]
    scan_shots_per_point: usize,
    #[serde(default)]
    t_mxc: Vec<Kelvin>,
    #[serde(default = "default_width_noise")]
    width_noise_frac: f64,
    #[serde(default)]
    rate_fields: Vec<Tesla>,
    #[serde(default = "default_rate_noise")]
    rate_noise_frac: f64,
    #[serde(default = "default_relaxation_floor")]
    relaxation_floor: f64,
}

fn default_filter_window() -> usize {
    5
}
fn default_penalty() -> f64 {
    3.0
}
fn default_exclusion_energy() -> f64 {
    1.75
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClassify {
    #[serde(deserialize_with = "deserialize_method")]
    method: ClassifyMethod,
    /// Sensor-signal cut; omitted means the midpoint of the sensor levels.
    v_threshold: Option<f64>,
    #[serde(default = "default_filter_window")]
    filter_window: usize,
    /// Static time threshold; omitted means the per-field optimum.
    t_threshold: Option<Seconds>,
    #[serde(default = "default_penalty")]
    penalty: f64,
    #[serde(default = "default_exclusion_energy")]
    exclusion_energy: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDrift {
    amplitude_frac: f64,
    sensor_coupling: f64,
}

/// Device physics in canonical units with the derived ramp quantities.
#[derive(Debug, Clone)]
pub struct DeviceConfig {
    pub name: String,
    pub g_factor: f64,
    pub gamma: f64,
    pub t_e: f64,
    pub eps0_down: f64,
    /// Measured relaxation time used as load-scan ground truth (s).
    pub t1: f64,
    /// Field at which `t1` was measured (T).
    pub t1_field: f64,
    pub lever_arms: LeverArmMatrix,
    /// Gate-voltage ramp of the read stage.
    pub ramp: RampSpec,
    /// Induced detuning ramp vector (eps_Q, eps_S) in eV.
    pub eps_ramp: (f64, f64),
    /// Detuning ramp rate |eps_Q|/t_ramp (eV/s).
    pub ramp_rate: f64,
    pub relaxation: RelaxationLaw,
    pub thermometry: ThermometryLaw,
    pub sensor: SensorModel,
}

impl DeviceConfig {
    /// Tunnel model at field `b`, with the Zeeman splitting set through
    /// the configured g-factor.
    pub fn model_at(&self, b: f64) -> Result<ReadModel, CliError> {
        let e_z = zeeman_energy(self.g_factor, b)
            .map_err(|e| CliError::Validation(format!("device.g_factor: {e}")))?;
        ReadModel::new(self.gamma, self.t_e, self.ramp_rate, self.eps0_down, e_z)
            .map_err(|e| CliError::Validation(format!("device: {e}")))
    }
}

/// Sweep grids in canonical units.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub fields: Vec<f64>,
    pub shots_per_point: usize,
    pub t_loads: Vec<f64>,
    pub t_initials: Vec<f64>,
    pub scan_shots_per_point: usize,
    pub t_mxc: Vec<f64>,
    pub width_noise_frac: f64,
    pub rate_fields: Vec<f64>,
    pub rate_noise_frac: f64,
    pub relaxation_floor: f64,
}

/// Classifier settings shared by both methods.
#[derive(Debug, Clone, Copy)]
pub struct ClassifyConfig {
    pub method: ClassifyMethod,
    /// Sensor-signal cut; `None` resolves to the sensor level midpoint.
    pub v_threshold: Option<f64>,
    pub filter_window: usize,
    pub t_threshold: Option<f64>,
    pub penalty: f64,
    pub exclusion_energy: f64,
}

/// Fully validated experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Hash over the config text, overrides, and flag values.
    pub sha256: String,
    pub device: DeviceConfig,
    pub pulse: PulseSequence,
    pub sweep: SweepConfig,
    pub classify: ClassifyConfig,
    pub drift: Option<DriftSpec>,
}

/// Set `key.path = value` inside a TOML table, creating intermediate
/// tables; the value is parsed as TOML when possible and kept as a string
/// otherwise.
fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec.split_once('=').ok_or_else(|| {
        CliError::Validation(format!("override {spec:?} is not of the form key=value"))
    })?;
    let path = path.trim();
    if path.is_empty() {
        return Err(CliError::Validation(format!(
            "override {spec:?} has an empty key"
        )));
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed override document has v"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = table;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        node = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                CliError::Validation(format!("override {spec:?}: {part} is not a table"))
            })?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn invalid(section: &str, err: impl fmt::Display) -> CliError {
    CliError::Validation(format!("{section}: {err}"))
}

impl ExperimentConfig {
    /// Parse and validate a config document, applying dotted-path
    /// overrides and the optional seed / output-directory flags.
    pub fn from_text(
        text: &str,
        overrides: &[String],
        seed_flag: Option<u64>,
        out_flag: Option<&PathBuf>,
    ) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text)
            .map_err(|e| CliError::Validation(format!("config parse error: {e}")))?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        if let Some(seed) = seed_flag {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some(out) = out_flag {
            table.insert(
                "out_dir".into(),
                toml::Value::String(out.display().to_string()),
            );
        }

        let mut hasher_input = text.as_bytes().to_vec();
        for spec in overrides {
            hasher_input.push(0);
            hasher_input.extend_from_slice(spec.as_bytes());
        }
        if let Some(seed) = seed_flag {
            hasher_input.push(0);
            hasher_input.extend_from_slice(format!("--seed {seed}").as_bytes());
        }
        if let Some(out) = out_flag {
            hasher_input.push(0);
            hasher_input.extend_from_slice(format!("--out {}", out.display()).as_bytes());
        }
        let sha256 = crate::manifest::sha256_hex(&hasher_input);

        let raw: RawConfig = table
            .try_into()
            .map_err(|e| CliError::Validation(format!("config schema error: {e}")))?;
        Self::resolve(raw, sha256)
    }

    fn resolve(raw: RawConfig, sha256: String) -> Result<Self, CliError> {
        let d = raw.device;
        let lever_arms = LeverArmMatrix::new(
            d.lever_arms.a_qq,
            d.lever_arms.a_qs,
            d.lever_arms.a_sq,
            d.lever_arms.a_ss,
        )
        .map_err(|e| invalid("device.lever_arms", e))?;
        let ramp = RampSpec::new((d.ramp.dv_qubit.0, d.ramp.dv_sensor.0), d.ramp.duration.0)
            .map_err(|e| invalid("device.ramp", e))?;
        let eps_ramp = detuning_transform(&lever_arms, ramp.dv);
        let rate = ramp_rate(eps_ramp.0, ramp.t_ramp).map_err(|e| invalid("device.ramp", e))?;
        let relaxation = RelaxationLaw::new(d.relaxation.k_j, d.relaxation.k_ph)
            .map_err(|e| invalid("device.relaxation", e))?;
        let thermometry = ThermometryLaw::new(d.thermometry.t_eff.0, d.thermometry.alpha_qq)
            .map_err(|e| invalid("device.thermometry", e))?;
        let sensor = SensorModel::new(
            d.sensor.t_min.0,
            d.sensor.sample_period.0,
            d.sensor.level_occupied,
            d.sensor.level_empty,
            d.sensor.rise_time.0,
        )
        .map_err(|e| invalid("device.sensor", e))?;
        if d.t1.0 <= 0.0 {
            return Err(invalid("device.t1", "relaxation time must be positive"));
        }
        if d.t1_field.0 <= 0.0 {
            return Err(invalid("device.t1_field", "field must be positive"));
        }
        let device = DeviceConfig {
            name: d.name,
            g_factor: d.g_factor,
            gamma: d.gamma.0,
            t_e: d.t_e.0,
            eps0_down: d.eps0_down.0,
            t1: d.t1.0,
            t1_field: d.t1_field.0,
            lever_arms,
            ramp,
            eps_ramp,
            ramp_rate: rate,
            relaxation,
            thermometry,
            sensor,
        };

        let pulse = PulseSequence::new(
            raw.pulse.t_empty.0,
            raw.pulse.t_load.0,
            device.ramp,
            None,
            raw.pulse.load_p_up,
            raw.pulse.gamma_in.map(|g| g.0),
        )
        .map_err(|e| invalid("pulse", e))?;

        let s = raw.sweep;
        if s.fields.is_empty() {
            return Err(invalid("sweep.fields", "at least one field is required"));
        }
        for f in &s.fields {
            if f.0 < 0.0 {
                return Err(invalid("sweep.fields", format!("negative field {}", f.0)));
            }
        }
        if !(0.0..=1.0).contains(&s.relaxation_floor) {
            return Err(invalid(
                "sweep.relaxation_floor",
                "must lie in the unit interval",
            ));
        }
        for (name, frac) in [
            ("sweep.width_noise_frac", s.width_noise_frac),
            ("sweep.rate_noise_frac", s.rate_noise_frac),
        ] {
            if !(0.0..1.0).contains(&frac) {
                return Err(invalid(name, "noise fraction must lie in [0, 1)"));
            }
        }
        let sweep = SweepConfig {
            fields: s.fields.iter().map(|q| q.0).collect(),
            shots_per_point: s.shots_per_point,
            t_loads: s.t_loads.iter().map(|q| q.0).collect(),
            t_initials: s.t_initials.iter().map(|q| q.0).collect(),
            scan_shots_per_point: s.scan_shots_per_point,
            t_mxc: s.t_mxc.iter().map(|q| q.0).collect(),
            width_noise_frac: s.width_noise_frac,
            rate_fields: s.rate_fields.iter().map(|q| q.0).collect(),
            rate_noise_frac: s.rate_noise_frac,
            relaxation_floor: s.relaxation_floor,
        };

        let c = raw.classify;
        if !(0.0 < c.penalty && c.penalty.is_finite()) {
            return Err(invalid("classify.penalty", "must be positive"));
        }
        if c.filter_window == 0 {
            return Err(invalid("classify.filter_window", "must be at least 1"));
        }
        if c.exclusion_energy < 0.0 {
            return Err(invalid("classify.exclusion_energy", "must be non-negative"));
        }
        let classify = ClassifyConfig {
            method: c.method,
            v_threshold: c.v_threshold,
            filter_window: c.filter_window,
            t_threshold: c.t_threshold.map(|q| q.0),
            penalty: c.penalty,
            exclusion_energy: c.exclusion_energy,
        };

        let drift = match raw.drift {
            Some(dr) => Some(
                DriftSpec::new(dr.amplitude_frac, dr.sensor_coupling)
                    .map_err(|e| invalid("drift", e))?,
            ),
            None => None,
        };

        let config = ExperimentConfig {
            seed: raw.seed,
            out_dir: PathBuf::from(raw.out_dir),
            sha256,
            device,
            pulse,
            sweep,
            classify,
            drift,
        };
        // every per-field model must construct cleanly before any stage runs
        for &b in &config.sweep.fields {
            config.device.model_at(b)?;
        }
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantities_convert_to_canonical_units() {
        let t = parse_quantity("821 mK", "temperature", units::TEMPERATURE).unwrap();
        assert!((t - 0.821).abs() < 1e-15);
        let dt = parse_quantity("2 us", "time", units::TIME).unwrap();
        assert!((dt - 2e-6).abs() < 1e-21);
        assert!(parse_quantity("2", "time", units::TIME).is_err());
        assert!(parse_quantity("2 parsec", "time", units::TIME).is_err());
        assert!(parse_quantity("abc s", "time", units::TIME).is_err());
    }

    #[test]
    fn override_paths_walk_nested_tables() {
        let mut t: toml::Table = toml::from_str("a = 1\n[b]\nc = 2").unwrap();
        apply_override(&mut t, "b.c=3").unwrap();
        apply_override(&mut t, "b.d=hello world").unwrap();
        apply_override(&mut t, "e=4.5").unwrap();
        assert_eq!(t["b"]["c"].as_integer(), Some(3));
        assert_eq!(t["b"]["d"].as_str(), Some("hello world"));
        assert_eq!(t["e"].as_float(), Some(4.5));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a.b=1").is_err());
    }
}
