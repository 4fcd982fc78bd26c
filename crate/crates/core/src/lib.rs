//! Simulation and entanglement characterization of quantum-dot
//! biexciton–exciton photon pairs.

pub mod cascade;
pub mod cli;
pub mod config;
pub mod correlate;
pub mod error;
pub mod fitters;
pub mod linalg;
pub mod lm;
pub mod qdtt;
pub mod quantum;
pub mod sim;
pub mod tomography;

pub use error::{Error, Result};
