//! Random billiard scattering: velocity Markov chains generated by billiard
//! flights over periodic rough walls, the second-order operators that describe
//! their weak-scattering limit, the associated diffusions, and the statistics
//! used to check them against each other.

pub mod billiard;
pub mod diffusion;
pub mod error;
pub mod family;
pub mod geometry;
pub mod operators;
pub mod rng;
pub mod scattering;
pub mod stats;
pub mod testfn;

pub use error::{Error, Result};
