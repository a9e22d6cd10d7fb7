//! Simulation and blind calibration of forward-operator mismatch in
//! compressive imaging (coded-aperture spectral, coded temporal video, and
//! single-pixel cameras).

pub mod calibration;
pub mod error;
pub mod experiment;
pub mod io;
pub mod metrics;
pub mod mismatch;
pub mod operators;
pub mod protocol;
pub mod rng;
pub mod solvers;
pub mod tensors;

pub use error::{Error, Result};
