//! Simulation of entangled-state semiquantum key distribution.
//!
//! Alice holds a quantum lab; Bob can only measure in the computational basis,
//! reflect, and reorder. [`protocol`] runs one session against any
//! [`attacks::Attack`], [`analysis`] compares Monte Carlo estimates with the
//! closed-form and exact predictions, and [`experiment`] drives many trials
//! from a JSON config.

pub mod analysis;
pub mod attacks;
pub mod experiment;
pub mod postproc;
pub mod protocol;
pub mod qcore;
pub mod rng;
