//! Simulation and subspace reconstruction for Echo Planar Time-resolved
//! Imaging (EPTI).

pub mod analysis;
pub mod datamodel;
pub mod encoding;
pub mod error;
pub mod fft;
pub mod operators;
pub mod phantom;
pub mod recon;
pub mod signal;
pub mod simulate;

pub use datamodel::container::{read_container, write_container, ContainerError, Persist};
pub use datamodel::*;
pub use error::{Error, Result};
