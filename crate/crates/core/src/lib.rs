//! Continuous-time stochastic filtering laboratory.
//!
//! Signal/observation models with a linear-plus-bounded decomposition, the
//! Kalman-Bucy filter and Riccati machinery, a bootstrap particle filter with
//! Kallianpur-Striebel weights, Wasserstein-2 distances, twin-filter
//! stabilization experiments, and forecast-error-growth models.

pub mod assignment;
pub mod config;
pub mod csv;
pub mod error;
pub mod error_growth;
pub mod experiments;
pub mod kalman;
pub mod linalg;
pub mod model;
pub mod particle;
pub mod rng;
pub mod runner;
pub mod wasserstein;

pub use error::{Error, Result};
pub use model::{GaussianMeasure, ModelSpec, Nonlinearity, PathRecord};
