//! The supported trial designs and their Q-approximation runners.
//!
//! | design          | protocol                    | Q runner                     |
//! |-----------------|-----------------------------|------------------------------|
//! | single arm      | [`SingleArmProtocol`]       | [`q_single_arm_positive_prob`] |
//! | two arm         | [`TwoArmProtocol`]          | [`q_two_arm_power`]          |
//! | futility stops  | [`TwoArmProtocol`] (stages) | [`q_multistage_stop_prob`]   |
//! | external data   | [`ExternalDataProtocol`]    | [`q_external_data_run`]      |
//! | adaptive rand.  | [`BarProtocol`]             | [`q_bar_run`]                |

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::oc::OcEstimate;

pub mod bar;
pub mod exact;
pub mod external;
pub mod single_arm;
pub mod two_arm;

pub use bar::{q_bar_estimates, q_bar_run, q_bar_run_with, BarProtocol, BarSummary};
pub use external::{q_external_data_run, q_external_data_trials, ExternalDataProtocol, ExternalDataScenario};
pub use single_arm::{q_single_arm_positive_prob, SingleArmProtocol};
pub use two_arm::{q_multistage_stop_prob, q_two_arm_power, q_two_arm_trials, StageSizes, TwoArmProtocol};

/// What happened in one simulated (or Q-simulated) trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    /// `S_stop ∈ 1..=S`.
    pub stopped_stage: usize,
    /// Final test statistic (Z or posterior probability); `-∞` after a
    /// futility stop in designs that report none.
    pub statistic: f64,
    /// Whether the trial reported efficacy.
    pub success: bool,
    /// Per-stage, per-arm patient counts (expected counts for Q runs).
    pub arm_counts: Vec<Vec<f64>>,
    /// Patients enrolled.
    pub sample_size: f64,
}

/// Runs `f` for replicates `0..r` in parallel and returns the results in
/// replicate order, so that any reduction over them is deterministic.
pub(crate) fn replicate_map<T, F>(r: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..r as u64).into_par_iter().map(f).collect()
}

/// Times `body` and stamps the elapsed seconds on its estimates.
pub(crate) fn timed<F>(body: F) -> Result<Vec<OcEstimate>>
where
    F: FnOnce() -> Result<Vec<OcEstimate>>,
{
    let start = Instant::now();
    let mut out = body()?;
    crate::oc::stamp(&mut out, start.elapsed().as_secs_f64());
    Ok(out)
}

pub(crate) fn check_replicates(r: usize) -> Result<()> {
    if r == 0 {
        return Err(crate::error::invalid("at least one replicate is required"));
    }
    Ok(())
}
