//! Nonparametric convolved Gaussian processes.

pub mod convolution;
pub mod data;
pub mod error;
pub mod grad;
pub mod kernels;
pub mod model;
pub mod pathwise;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
