//! Single-arm trial with a posterior-probability decision rule.
//!
//! Positive if `P(θ > reference_rate | data) ≥ decision_threshold`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{Allocation, AnalysisModel, AsymptoticTriple, Scenario};
use crate::error::{invalid, Result};
use crate::oc::OcEstimate;
use crate::qlik::{GaussianPrior, LinearReadout, StageLaw};
use crate::rng::Streams;

use super::{check_replicates, replicate_map, timed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SingleArmProtocol {
    pub n: usize,
    pub reference_rate: f64,
    pub decision_threshold: f64,
    /// Beta prior `(a, b)` on the response rate.
    #[serde(default = "uniform_beta")]
    pub prior: (f64, f64),
}

pub(crate) fn uniform_beta() -> (f64, f64) {
    (1.0, 1.0)
}

impl SingleArmProtocol {
    pub fn new(n: usize, reference_rate: f64, decision_threshold: f64) -> Self {
        Self {
            n,
            reference_rate,
            decision_threshold,
            prior: uniform_beta(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("single-arm sample size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reference_rate) {
            return Err(invalid("reference rate must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(invalid("decision threshold must lie in [0, 1]"));
        }
        check_beta(self.prior)
    }
}

pub(crate) fn check_beta((a, b): (f64, f64)) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(invalid(format!("Beta prior ({a}, {b}) needs positive finite shapes")));
    }
    Ok(())
}

pub(crate) fn check_open_rates(rates: &[f64]) -> Result<()> {
    if let Some(r) = rates.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
        return Err(invalid(format!(
            "the Q approximation needs response rates strictly inside (0, 1), got {r}"
        )));
    }
    Ok(())
}

/// Q estimate of `P(positive)` when the true response rate is `rate`.
pub fn q_single_arm_positive_prob(
    protocol: &SingleArmProtocol,
    rate: f64,
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    protocol.validate()?;
    check_replicates(replicates)?;
    check_open_rates(&[rate])?;
    timed(|| {
        let scenario = Scenario::arm_rates(&[rate]);
        let model = AnalysisModel::bernoulli_arms(1);
        let triple = AsymptoticTriple::compute(&scenario, &model, &Allocation::fixed(&[1.0], 1))?;
        let stage = StageLaw::from_triple(&triple, protocol.n as f64)?;
        let prior = GaussianPrior::from_beta_moments(&[protocol.prior])?;
        let readout = LinearReadout::new(&stage.curvature, &prior, &DVector::from_element(1, 1.0))?;
        let hits = replicate_map(replicates, |r| {
            let mut rng = streams.rng(r, 0);
            let h = stage.sample_potential(&mut rng);
            Ok(readout.tail(&h, protocol.reference_rate) >= protocol.decision_threshold)
        })?;
        let count = hits.iter().filter(|&&h| h).count();
        Ok(vec![OcEstimate::proportion("positive_prob", count, replicates)])
    })
}
