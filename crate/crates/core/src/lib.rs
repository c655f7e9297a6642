//! Bayesian inference of qubit bright-state occupation from sparse,
//! overlapping photon-count data: an exact grid posterior, a weakly-anchored
//! Bayesian-EM loop, a conventional threshold baseline, and an amortized
//! permutation-invariant network that replaces the E-step with one forward
//! pass.

pub mod counts;
pub mod error;
pub mod posterior;

pub use error::{Error, Result};
