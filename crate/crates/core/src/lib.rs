//! Operating characteristics of clinical trial designs by two routes.
//!
//! The Q-approximation replaces simulated datasets with simulated Gaussian
//! surrogate likelihoods ("Q-likelihoods") whose centers are drawn from the
//! misspecification-robust asymptotic law of the MLE and whose curvature is
//! fixed at the expected information. The Monte Carlo baseline simulates
//! patient-level data and runs the protocol's actual analyses. The
//! [`accuracy`] module audits the discrepancy between the two with a
//! normal-normal random-effects model.
//!
//! Module map:
//!
//! - [`asymptotics`]: KL projection, expected curvature / score outer product, sandwich variance.
//! - [`qlik`]: Q-likelihoods, stage combination, conjugate Gaussian posteriors.
//! - [`mvn`]: normal CDF, MVN sampling, superiority (argmax) probabilities.
//! - [`designs`]: protocols for the four supported trial designs and their Q runners.
//! - [`mc`]: patient-level Monte Carlo baselines, including adaptive Metropolis.
//! - [`accuracy`]: standard errors, random-effects fit, audit orchestration.
//! - [`config`], [`cli`], [`report`]: JSON configs, command implementations and output files.

pub mod accuracy;
pub mod asymptotics;
pub mod cli;
pub mod config;
pub mod designs;
pub mod error;
pub mod linalg;
pub mod mc;
pub mod mvn;
pub mod oc;
pub mod qlik;
pub mod report;
pub mod rng;
pub mod special;

pub use error::{Error, Result};
pub use oc::OcEstimate;
