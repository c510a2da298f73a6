//! Experiment runner around the double-head calibration toolkit: a
//! versioned JSON config schema, seven experiment kinds, and typed loaders
//! for every artifact a run writes.

pub mod config;
pub mod outputs;
pub mod runner;
