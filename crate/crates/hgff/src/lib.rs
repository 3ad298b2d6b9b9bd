//! Numerics for generalized Gaussian free fields arising as fluctuations of
//! stochastic homogenization on ℤᵈ: lattice calculus, lattice Green functions,
//! correctors, the effective fluctuation tensor and its small-contrast
//! expansion, generalized GFF sampling, and the non-locality kernel.

pub mod corrector;
pub mod error;
pub mod fluctuation;
pub mod gff;
pub mod green;
pub mod lattice;
pub mod linalg;
pub mod markov;
pub mod par;
pub mod rng;

pub use error::{Error, Result};
