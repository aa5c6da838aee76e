//! Simulation, motion estimation and motion-compensated reconstruction for
//! multishot radial MRI.

mod error;
pub(crate) mod interp;

pub mod container;
pub mod correct;
pub mod deform;
pub mod estimate;
pub(crate) mod filters;
pub mod forward;
pub mod gradients;
pub mod grid;
pub mod metrics;
pub mod phantom;
pub mod recon;
pub mod rng;
pub mod sampling;

pub use error::{Error, Result};
