//! Distributionally robust threshold tuning for residual-based anomaly
//! detectors in stochastic linear cyber-physical systems.
//!
//! * [`moments`]: truncated moment sequences of the detection measure.
//! * [`bounds`]: worst-case tail probabilities under moment information.
//! * [`tuning`]: detector thresholds for a target false-alarm rate.
//! * [`sim`]: closed-loop plant, Kalman estimator and residual simulation.
//! * [`reach`]: zero-alarm attacks and ellipsoidal reachable-set bounds.
//! * [`experiment`]: config-driven pipelines behind the `drtune` CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod moments;
pub mod reach;
pub mod sim;
pub mod special;
pub mod tuning;

pub use error::{Error, Result};
