//! Mean-field age-dependent Hawkes processes.
//!
//! Particle simulation by thinning, the limiting age-structured PDE, weighted
//! Sobolev test-function machinery, fluctuation observables, the Gaussian
//! limit system, second-order corrections, and the convergence-rate
//! experiments that tie them together.

pub mod error;
pub mod fluctuation;
pub mod io;
pub mod limit;
pub mod model;
pub mod par;
pub mod pde;
pub mod quad;
pub mod rates;
pub mod rng;
pub mod series;
pub mod sobolev;
pub mod spde;
pub mod stats;
pub mod testfn;
pub mod thinning;

pub use error::{Error, Result};
