//! Physical constants (CODATA 2018) in the crate's canonical units.

/// Boltzmann constant (eV/K).
pub const K_B: f64 = 8.617_333_262e-5;

/// Bohr magneton (eV/T).
pub const MU_B: f64 = 5.788_381_806_0e-5;

/// Elementary charge (C). Gate voltages convert to energies as eps = e*V,
/// i.e. numerically volts -> eV for a unit charge.
pub const E_CHARGE: f64 = 1.602_176_634e-19;
