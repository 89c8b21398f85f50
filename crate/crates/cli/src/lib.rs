//! Command-line pipeline around `rsm-core`: simulate trace batches, classify
//! them, fit readout parameters, and report, with every stage recorded in a
//! hashed run manifest for byte-exact reruns.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod report;
pub mod tables;
