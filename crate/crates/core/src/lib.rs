//! Simulation, calibration and voltage compilation for electro-optically
//! reconfigurable waveguide arrays.
//!
//! Guides, electrodes and couplings are numbered from 1 in every public
//! interface, the same way the hardware is labelled: guide `k` is row/column
//! `k − 1` of a matrix, electrode `k` is entry `k − 1` of a voltage vector,
//! and coupling `k` is `C_{k,k+1}`.

pub mod device_model;
pub mod error;
pub mod evolution;

pub use error::{Error, Result};
pub mod photon_stats;
pub mod subcircuits;
pub mod calibration;
pub mod compiler;
pub mod analysis;
pub mod cli;
