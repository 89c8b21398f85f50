//! Simulation and estimation toolkit for ramped energy-selective
//! single-electron spin readout.
//!
//! The crate models spin-to-charge conversion in a quantum dot whose levels
//! are ramped through the reservoir Fermi level during the read phase. The
//! tunnel-out time of the electron then encodes its spin, and everything
//! downstream is statistics:
//!
//! - [`model`] holds the closed-form physics: tunnel-out densities and
//!   distributions of the non-homogeneous Poisson process, visibility,
//!   peak times, and the unit/coordinate conversions (Zeeman, lever arms,
//!   relaxation power law, thermometry).
//! - [`simulate`] generates single-shot sensor traces by inverse-CDF
//!   sampling, with deterministic per-shot RNG streams.
//! - [`classify`] turns traces into spin labels via static thresholding or
//!   the final-exit-referenced classifier built on change-point detection.
//! - [`estimate`] fits mixture densities, exponential decays, field power
//!   laws, thermometry curves, and the g-factor line, with covariance and
//!   bootstrap uncertainties.
//! - [`io`] defines the binary trace-batch container and the delimited
//!   text tables shared between pipeline stages.
//!
//! Canonical units throughout: energies in eV, times in s, magnetic fields
//! in T, temperatures in K, rates in Hz. Conversions happen only at I/O
//! boundaries.

pub mod changepoint;
pub mod classify;
pub mod constants;
pub mod estimate;
pub mod io;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod rng;
pub mod simulate;

pub use model::{ReadModel, Spin};
