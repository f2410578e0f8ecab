//! Average treatment effects in clustered data with unmeasured cluster-level confounding.
//!
//! The central estimator weights each unit by the inverse of its treatment probability
//! conditional on the cluster's treatment counts, which removes any cluster intercept
//! from the treatment model. Baseline inverse-propensity estimators, sandwich and cluster
//! bootstrap inference, and a Monte Carlo harness are included.

pub mod baselines;
pub mod cmle;
pub mod cond_prob;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod numeric;
pub mod oracle;
pub mod pipeline;
pub mod selftest;
pub mod simulate;

pub use error::{IcpwError, Result};
