//! Closed-form physics of the ramped spin measurement: tunnel-out densities
//! and distributions, visibility, peak times, and unit/coordinate
//! conversions (Zeeman, lever arms, ramp rate, relaxation law, thermometry).
//!
//! Units are canonical throughout: energies in eV, times in seconds, fields
//! in tesla, temperatures in kelvin. Conversions happen only at I/O
//! boundaries.

use thiserror::Error;

use crate::constants::{E_CHARGE, K_B, MU_B};
use crate::numerics::{brent_root, golden_min, log_expm1, softplus};

/// Validation and domain errors for model construction and evaluation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("probability must lie in [0, 1], got {0}")]
    ProbabilityOutOfRange(f64),
    #[error("lever arm {name} must lie in (0, 1], got {value}")]
    LeverArmOutOfRange { name: &'static str, value: f64 },
    #[error("lever arm diagonal {diag} must exceed the same-row off-diagonal {off}")]
    LeverArmNotDominant { diag: f64, off: f64 },
    #[error("gate ramp vector must be non-zero")]
    ZeroRampVector,
    #[error("zero Zeeman splitting: spin states cannot be discriminated")]
    NoDiscrimination,
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NonFinite { name, value });
    }
    if value <= 0.0 {
        return Err(ModelError::NonPositive { name, value });
    }
    Ok(value)
}

pub(crate) fn require_non_negative(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NonFinite { name, value });
    }
    if value < 0.0 {
        return Err(ModelError::Negative { name, value });
    }
    Ok(value)
}

pub(crate) fn require_finite(name: &'static str, value: f64) -> Result<f64, ModelError> {
    if !value.is_finite() {
        return Err(ModelError::NonFinite { name, value });
    }
    Ok(value)
}

/// Electron spin orientation along the applied field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Spin {
    Up,
    Down,
}

/// Fundamental constants used by the model, in the crate's canonical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Boltzmann constant (eV/K).
    pub k_b: f64,
    /// Bohr magneton (eV/T).
    pub mu_b: f64,
    /// Elementary charge (C).
    pub e: f64,
}

impl PhysicalConstants {
    /// CODATA 2018 exact values.
    pub const CODATA: PhysicalConstants = PhysicalConstants {
        k_b: K_B,
        mu_b: MU_B,
        e: E_CHARGE,
    };
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::CODATA
    }
}

/// Parameter set of the ramped readout: a dot level starting at detuning
/// `eps0_down` (spin-down) or `eps0_down + e_z` (spin-up) below/above the
/// Fermi level rises at rate `r` while the electron tunnels out with a
/// maximum rate `gamma`, thermally broadened by electron temperature `t_e`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadModel {
    /// Maximum tunnel-out rate at large positive detuning (Hz).
    pub gamma: f64,
    /// Electron temperature (K).
    pub t_e: f64,
    /// Detuning ramp rate (eV/s); positive means levels rise through the
    /// Fermi level during read.
    pub r: f64,
    /// Spin-down detuning at read start relative to the Fermi level (eV);
    /// negative for a loaded electron.
    pub eps0_down: f64,
    /// Zeeman splitting (eV).
    pub e_z: f64,
}

impl ReadModel {
    pub fn new(
        gamma: f64,
        t_e: f64,
        r: f64,
        eps0_down: f64,
        e_z: f64,
    ) -> Result<Self, ModelError> {
        Ok(ReadModel {
            gamma: require_positive("gamma", gamma)?,
            t_e: require_positive("T_e", t_e)?,
            r: require_positive("r", r)?,
            eps0_down: require_finite("eps0_down", eps0_down)?,
            e_z: require_non_negative("E_Z", e_z)?,
        })
    }

    /// Spin-up detuning at read start; always `eps0_down + e_z`.
    #[inline]
    pub fn eps0_up(&self) -> f64 {
        self.eps0_down + self.e_z
    }

    /// Read-start detuning for the given spin (eV).
    #[inline]
    pub fn eps0(&self, spin: Spin) -> f64 {
        match spin {
            Spin::Up => self.eps0_up(),
            Spin::Down => self.eps0_down,
        }
    }

    /// Thermal energy k_B T_e (eV).
    #[inline]
    pub fn k_t(&self) -> f64 {
        K_B * self.t_e
    }

    /// Dimensionless shape exponent Γ·k_B·T_e/r governing how sharply the
    /// exit-time distribution cuts off once the level clears the Fermi sea.
    #[inline]
    pub fn shape_p(&self) -> f64 {
        self.gamma * self.k_t() / self.r
    }
}

/// Zeeman splitting g·μ_B·B (eV). Negative fields are rejected.
pub fn zeeman_energy(g: f64, b: f64) -> Result<f64, ModelError> {
    require_finite("g", g)?;
    require_non_negative("B", b)?;
    Ok(g * MU_B * b)
}

/// Normalized detuning x = (eps0_spin + r·t)/(k_B·T_e) at time `t` into the
/// read ramp.
#[inline]
pub fn normalized_detuning(m: &ReadModel, spin: Spin, t: f64) -> f64 {
    (m.eps0(spin) + m.r * t) / m.k_t()
}

/// Log survival probability ln(1 − C_spin(t)); always ≤ 0.
#[inline]
pub fn log_survival(m: &ReadModel, spin: Spin, t: f64) -> f64 {
    let x0 = m.eps0(spin) / m.k_t();
    let x = normalized_detuning(m, spin, t);
    m.shape_p() * (softplus(x0) - softplus(x))
}

/// Log of the tunnel-out density, ln f_spin(t).
#[inline]
pub fn tunnel_out_log_pdf(m: &ReadModel, spin: Spin, t: f64) -> f64 {
    let x = normalized_detuning(m, spin, t);
    // ln f = ln Γ + ln σ(x) + ln S(t); both trailing terms are ≤ 0
    m.gamma.ln() - softplus(-x) + log_survival(m, spin, t)
}

/// Probability density of the first tunnel-out event at time `t` into the
/// read ramp (1/s). Evaluated in the log domain; finite for any
/// normalized detuning.
pub fn tunnel_out_pdf(m: &ReadModel, spin: Spin, t: f64) -> f64 {
    let x = normalized_detuning(m, spin, t);
    // Γ·σ(x)·S(t), with the sub-unity factors folded into one exponent
    m.gamma * (-softplus(-x) + log_survival(m, spin, t)).exp()
}

/// Cumulative probability that the electron has tunneled out by time `t`.
/// Monotone non-decreasing, range [0, 1).
pub fn tunnel_out_cdf(m: &ReadModel, spin: Spin, t: f64) -> f64 {
    -log_survival(m, spin, t).exp_m1()
}

/// Spin-marginalized density p_up·f_up(t) + (1 − p_up)·f_down(t).
pub fn mixture_pdf(m: &ReadModel, p_up: f64, t: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&p_up) {
        return Err(ModelError::ProbabilityOutOfRange(p_up));
    }
    Ok(p_up * tunnel_out_pdf(m, Spin::Up, t) + (1.0 - p_up) * tunnel_out_pdf(m, Spin::Down, t))
}

/// Readout visibility at time threshold `t`: ½·[C_up(t) − C_down(t) + 1].
/// Equals ½ at t = 0 and as t → ∞; peaks between the two exit-time modes.
pub fn visibility(m: &ReadModel, t: f64) -> f64 {
    0.5 * (tunnel_out_cdf(m, Spin::Up, t) - tunnel_out_cdf(m, Spin::Down, t) + 1.0)
}

/// Location of the mode of the tunnel-out density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakTime {
    /// Stationary point of f at t ≥ 0.
    Interior(f64),
    /// The analytic stationary point falls before the ramp start; the
    /// density is maximal at t = 0 and decreasing.
    Boundary,
}

impl PeakTime {
    /// The interior peak time, if one exists.
    pub fn interior(self) -> Option<f64> {
        match self {
            PeakTime::Interior(t) => Some(t),
            PeakTime::Boundary => None,
        }
    }
}

/// Mode of the tunnel-out density for one spin, from the closed form
/// t* = (k_B·T_e·ln(r/(Γ·k_B·T_e)) − eps0_spin)/r. A negative stationary
/// point is reported as a boundary maximum, never clamped.
pub fn peak_time(m: &ReadModel, spin: Spin) -> PeakTime {
    let k_t = m.k_t();
    let t_star = (k_t * (m.r / (m.gamma * k_t)).ln() - m.eps0(spin)) / m.r;
    if t_star >= 0.0 {
        PeakTime::Interior(t_star)
    } else {
        PeakTime::Boundary
    }
}

/// Time beyond which both survival probabilities are below ~1e-20.
fn saturation_time(m: &ReadModel) -> f64 {
    let x0 = m.eps0_down / m.k_t();
    let x_hi = log_expm1(softplus(x0) + 46.0 / m.shape_p());
    (m.k_t() * x_hi - m.eps0_down) / m.r
}

/// Optimal time threshold and the visibility attained there.
///
/// Solves f_up(t) = f_down(t) between the two density peaks by bracketed
/// root finding; falls back to a grid-seeded golden-section maximization of
/// the visibility when either peak sits at the ramp start.
pub fn optimal_threshold(m: &ReadModel) -> Result<(f64, f64), ModelError> {
    if m.e_z == 0.0 {
        return Err(ModelError::NoDiscrimination);
    }
    let t_hi = saturation_time(m);
    let tol = 1e-9 * t_hi;
    if let (PeakTime::Interior(t_up), PeakTime::Interior(t_down)) =
        (peak_time(m, Spin::Up), peak_time(m, Spin::Down))
    {
        let h = |t: f64| tunnel_out_pdf(m, Spin::Up, t) - tunnel_out_pdf(m, Spin::Down, t);
        if t_up < t_down && h(t_up) > 0.0 && h(t_down) < 0.0 {
            if let Some(t_star) = brent_root(&h, t_up, t_down, tol) {
                return Ok((t_star, visibility(m, t_star)));
            }
        }
    }
    // Boundary peaks or a degenerate bracket: seed with a dense scan so a
    // narrow visibility peak cannot be skipped, then refine.
    let n: usize = 6000;
    let mut best_i: usize = 0;
    let mut best_v = f64::NEG_INFINITY;
    for i in 0..=n {
        let t = t_hi * i as f64 / n as f64;
        let v = visibility(m, t);
        if v > best_v {
            best_v = v;
            best_i = i;
        }
    }
    let lo = t_hi * best_i.saturating_sub(1) as f64 / n as f64;
    let hi = t_hi * (best_i + 1).min(n) as f64 / n as f64;
    let (t_star, neg_v) = golden_min(&|t| -visibility(m, t), lo, hi, tol);
    Ok((t_star, -neg_v))
}

/// Dimensionless 2×2 lever-arm matrix mapping gate voltages to dot-level
/// energy shifts; rows are dots {Q, S}, columns gates {Q, S}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeverArmMatrix {
    pub a_qq: f64,
    pub a_qs: f64,
    pub a_sq: f64,
    pub a_ss: f64,
}

impl LeverArmMatrix {
    pub fn new(a_qq: f64, a_qs: f64, a_sq: f64, a_ss: f64) -> Result<Self, ModelError> {
        for (name, v) in [
            ("a_QQ", a_qq),
            ("a_QS", a_qs),
            ("a_SQ", a_sq),
            ("a_SS", a_ss),
        ] {
            if !v.is_finite() || v <= 0.0 || v > 1.0 {
                return Err(ModelError::LeverArmOutOfRange { name, value: v });
            }
        }
        // each dot couples most strongly to its own gate
        if a_qq <= a_qs {
            return Err(ModelError::LeverArmNotDominant {
                diag: a_qq,
                off: a_qs,
            });
        }
        if a_ss <= a_sq {
            return Err(ModelError::LeverArmNotDominant {
                diag: a_ss,
                off: a_sq,
            });
        }
        Ok(LeverArmMatrix {
            a_qq,
            a_qs,
            a_sq,
            a_ss,
        })
    }
}

/// Gate-voltage ramp applied during the read stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RampSpec {
    /// Gate-voltage ramp vector (V_Q, V_S) in volts.
    pub dv: (f64, f64),
    /// Ramp duration (s).
    pub t_ramp: f64,
}

impl RampSpec {
    pub fn new(dv: (f64, f64), t_ramp: f64) -> Result<Self, ModelError> {
        require_finite("dV_Q", dv.0)?;
        require_finite("dV_S", dv.1)?;
        require_positive("t_ramp", t_ramp)?;
        if dv.0 == 0.0 && dv.1 == 0.0 {
            return Err(ModelError::ZeroRampVector);
        }
        Ok(RampSpec { dv, t_ramp })
    }
}

/// Effective detuning ramp (ε_Q, ε_S) in eV induced by the gate-voltage
/// vector `dv` (volts): the lever-arm matrix times dv, converted through the
/// unit electron charge.
pub fn detuning_transform(l: &LeverArmMatrix, dv: (f64, f64)) -> (f64, f64) {
    // e·(L·dV): electronvolts are numerically equal to lever-arm-weighted volts
    (
        l.a_qq * dv.0 + l.a_qs * dv.1,
        l.a_sq * dv.0 + l.a_ss * dv.1,
    )
}

/// Detuning ramp rate |eps_ramp|/t_ramp (eV/s). A zero rate carries no
/// spin-to-time encoding; `ReadModel::new` rejects it downstream.
pub fn ramp_rate(eps_ramp: f64, t_ramp: f64) -> Result<f64, ModelError> {
    require_finite("eps_ramp", eps_ramp)?;
    require_positive("t_ramp", t_ramp)?;
    Ok(eps_ramp.abs() / t_ramp)
}

/// Field-dependence of the spin relaxation rate 1/T1 = K_J·B³ + K_ph·B⁷.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationLaw {
    /// Johnson-noise coefficient (Hz/T³).
    pub k_j: f64,
    /// Phonon coefficient (Hz/T⁷).
    pub k_ph: f64,
}

impl RelaxationLaw {
    pub fn new(k_j: f64, k_ph: f64) -> Result<Self, ModelError> {
        Ok(RelaxationLaw {
            k_j: require_non_negative("K_J", k_j)?,
            k_ph: require_non_negative("K_ph", k_ph)?,
        })
    }

    /// Field at which the Johnson and phonon contributions are equal.
    pub fn crossover_field(&self) -> Option<f64> {
        if self.k_j > 0.0 && self.k_ph > 0.0 {
            Some((self.k_j / self.k_ph).powf(0.25))
        } else {
            None
        }
    }
}

/// Relaxation rate K_J·B³ + K_ph·B⁷ (Hz) at field `b` (T, non-negative).
pub fn relaxation_rate(law: &RelaxationLaw, b: f64) -> f64 {
    assert!(b >= 0.0, "field must be non-negative");
    let b3 = b * b * b;
    law.k_j * b3 + law.k_ph * b3 * b3 * b
}

/// Thermal broadening model for charge-transition thermometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermometryLaw {
    /// Base effective electron temperature (K).
    pub t_eff: f64,
    /// Qubit-gate lever arm (dimensionless).
    pub alpha_qq: f64,
}

impl ThermometryLaw {
    pub fn new(t_eff: f64, alpha_qq: f64) -> Result<Self, ModelError> {
        require_positive("T_eff", t_eff)?;
        if !alpha_qq.is_finite() || alpha_qq <= 0.0 || alpha_qq > 1.0 {
            return Err(ModelError::LeverArmOutOfRange {
                name: "alpha_QQ",
                value: alpha_qq,
            });
        }
        Ok(ThermometryLaw { t_eff, alpha_qq })
    }
}

/// Gate-voltage width (V) of a thermally broadened charge transition at
/// mixing-chamber temperature `t_mxc`: k_B·sqrt(T_eff² + T_MXC²)/(e·α_QQ),
/// with the eV/V conversion through the unit charge.
pub fn thermometry_width(law: &ThermometryLaw, t_mxc: f64) -> f64 {
    assert!(t_mxc >= 0.0, "mixing-chamber temperature must be non-negative");
    let t_meas = (law.t_eff * law.t_eff + t_mxc * t_mxc).sqrt();
    K_B * t_meas / law.alpha_qq
}
