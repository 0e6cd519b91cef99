//! Robust M-estimation with log-truncated losses for heavy-tailed data.
//!
//! The crate implements the ψ_λ truncation family and its score weights,
//! quantile/logistic/negative-binomial losses, linear and feedforward-ReLU
//! predictors with hand-derived gradients, SGD solvers for the truncated and
//! plain penalized risks, non-asymptotic excess-risk bound calculators, and
//! a seeded benchmark harness comparing truncated against untruncated fits
//! on contaminated synthetic data or CSV datasets.

pub mod bounds;
pub mod config;
pub mod csvrun;
pub mod datagen;
pub mod dataio;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod report;
pub mod solver;
pub mod truncation;

pub use error::{Error, Result};
