//! Continuous-time quantum walks of hard-core bosons on programmable qubit lattices.

pub mod analysis;
pub mod calibration;
pub mod config;
pub mod device;
pub mod error;
pub mod evolution;
pub mod hamiltonian;
pub mod io;
pub mod lattice;
pub mod measurement;
pub mod rng;
pub mod runners;
pub mod scenarios;
pub mod sector;

pub use error::{Error, Result};
