//! Conjugate BYM2 spatial models and ε-difference boundary detection on
//! areal maps.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`] loads adjacency lists and builds the scaled CAR precision.
//! * [`linalg`] holds the dense kernels, including the simultaneous reduction.
//! * [`exact`] evaluates the fixed-ρ conjugate posterior and its limits.
//! * [`mcmc`] runs the Metropolis-within-Gibbs sampler under the PC prior.
//! * [`disparity`] turns posterior draws into decisions.
//! * [`diagnostics`] covers classical tests, DIC/lppd, and spatial statistics.
//! * [`simulate`] generates synthetic datasets with known disparities.

pub mod diagnostics;
pub mod disparity;
pub mod error;
pub mod exact;
pub mod graph;
pub mod linalg;
pub mod mcmc;
pub mod simulate;
pub mod special;

pub use error::{Error, Result};
