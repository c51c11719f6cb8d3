//! Operating-characteristic estimates.

use serde::Serialize;

/// One estimated operating characteristic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OcEstimate {
    /// OC name, e.g. `power`, `stop_prob`, `ess[arm=1,profile=0]`.
    pub name: String,
    pub estimate: f64,
    /// Monte Carlo standard error of `estimate`.
    pub se: f64,
    pub replicates: usize,
    /// Wall-clock seconds spent in the replicate loop that produced the
    /// estimate (shared by all OCs from the same run).
    pub wall_clock_s: f64,
}

impl OcEstimate {
    pub fn new(name: impl Into<String>, estimate: f64, se: f64, replicates: usize) -> Self {
        Self {
            name: name.into(),
            estimate,
            se,
            replicates,
            wall_clock_s: 0.0,
        }
    }

    /// Proportion of `hits` among `replicates` with its binomial SE.
    pub fn proportion(name: impl Into<String>, hits: usize, replicates: usize) -> Self {
        let p = if replicates == 0 {
            f64::NAN
        } else {
            hits as f64 / replicates as f64
        };
        let se = crate::accuracy::proportion_se(p, replicates).unwrap_or(f64::NAN);
        Self::new(name, p, se, replicates)
    }

    /// Sample mean of `values` with SD/√R.
    pub fn mean(name: impl Into<String>, values: &[f64]) -> Self {
        let r = values.len();
        let mean = values.iter().sum::<f64>() / r as f64;
        let se = crate::accuracy::mean_se(values).unwrap_or(f64::NAN);
        Self::new(name, mean, se, r)
    }

    /// A zero standard error: every replicate agreed, so the estimate
    /// carries no sampling-error information.
    pub fn is_degenerate(&self) -> bool {
        self.se == 0.0
    }

    pub fn with_wall_clock(mut self, seconds: f64) -> Self {
        self.wall_clock_s = seconds;
        self
    }
}

/// Stamps the same wall-clock time on every estimate of one run.
pub fn stamp(estimates: &mut [OcEstimate], seconds: f64) {
    for e in estimates {
        e.wall_clock_s = seconds;
    }
}
