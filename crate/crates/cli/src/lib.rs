//! Command-line front end: configuration, training runs, evaluation,
//! covariance curves, toy data and the numerical self-check.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod selfcheck;

pub use error::{CliError, Result};
