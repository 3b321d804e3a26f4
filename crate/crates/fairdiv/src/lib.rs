//! Fair binary classification with f-divergence regularization.
//!
//! The library trains a small feed-forward classifier whose loss couples
//! binary cross-entropy with a divergence penalty between group-conditional
//! output distributions. Three interchangeable estimators of that divergence
//! are provided (adversarial critic, plug-in, histogram density ratio),
//! together with fairness metrics, fairness-accuracy frontier tooling, and
//! dataset utilities for synthetic moons and tabular CSV data.

pub mod cli;
pub mod config;
pub mod data;
pub mod divergence;
pub mod error;
pub mod estimators;
pub mod frontier;
pub mod metrics;
pub mod nn;
pub mod record;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
