//! Robust extended Kalman filtering over a KL-divergence ambiguity ball,
//! applied to joint state and parameter estimation of a tuned liquid damper.
//!
//! - [`filter`]: EKF and robust EKF recursions over any [`filter::NonlinearModel`].
//! - [`housner`]: the Housner sloshing model with RK4 discretization.
//! - [`simulation`]: synthetic excitations, truth trajectories and force records.
//! - [`dataio`]: CSV formats, TOML experiment configs and estimation metrics.
//! - [`experiment`]: config-driven pipeline used by the CLI and the acceptance suite.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod experiment;
pub mod filter;
pub mod housner;
pub mod simulation;
