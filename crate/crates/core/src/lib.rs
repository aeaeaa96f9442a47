//! Noise-augmented ridgeless forecasting: pseudo-OLS on latent-factor designs,
//! exact risk calculators, comparator estimators and evaluation protocols.

pub mod augment;
pub mod dataio;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod seed;
pub mod theory;
pub mod util;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, RankTolerance, ReducedSvd};
