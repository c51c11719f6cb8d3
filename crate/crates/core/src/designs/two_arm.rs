//! Two-arm trial (control = arm 0, treatment = arm 1) with a posterior
//! superiority rule and optional interim futility looks.
//!
//! At stage `s` the trial stops for futility when
//! `P(θ₁ − θ₀ > 0 | data) < λ_s`; the last threshold is the decision
//! threshold, so reaching the final analysis and passing it is success.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{expected_curvature, expected_score_outer, Allocation, AnalysisModel, Scenario};
use crate::error::{invalid, Result};
use crate::oc::OcEstimate;
use crate::qlik::{GaussianPrior, LinearReadout, StageLaw};
use crate::rng::Streams;

use super::single_arm::{check_beta, check_open_rates, uniform_beta};
use super::{check_replicates, replicate_map, timed, TrialOutcome};

/// Patients per arm enrolled in one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSizes {
    pub n0: usize,
    pub n1: usize,
}

impl StageSizes {
    pub fn total(&self) -> usize {
        self.n0 + self.n1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoArmProtocol {
    /// Stage sizes; a single entry is a fixed-sample trial.
    pub stages: Vec<StageSizes>,
    pub decision_threshold: f64,
    /// `λ_1..λ_{S−1}`; `λ_S` is `decision_threshold`.
    #[serde(default)]
    pub futility: Vec<f64>,
    /// Beta priors for control and treatment.
    #[serde(default = "uniform_pair")]
    pub priors: [(f64, f64); 2],
    /// Posterior draws used by Monte Carlo to estimate the superiority
    /// probability.
    #[serde(default = "default_posterior_draws")]
    pub posterior_draws: usize,
}

fn uniform_pair() -> [(f64, f64); 2] {
    [uniform_beta(), uniform_beta()]
}

pub(crate) fn default_posterior_draws() -> usize {
    20_000
}

impl TwoArmProtocol {
    pub fn single_stage(n0: usize, n1: usize, decision_threshold: f64) -> Self {
        Self {
            stages: vec![StageSizes { n0, n1 }],
            decision_threshold,
            futility: Vec::new(),
            priors: uniform_pair(),
            posterior_draws: default_posterior_draws(),
        }
    }

    pub fn multistage(stages: Vec<StageSizes>, futility: Vec<f64>, decision_threshold: f64) -> Self {
        Self {
            stages,
            decision_threshold,
            futility,
            priors: uniform_pair(),
            posterior_draws: default_posterior_draws(),
        }
    }

    pub fn n0(&self) -> usize {
        self.stages.iter().map(|s| s.n0).sum()
    }

    pub fn n1(&self) -> usize {
        self.stages.iter().map(|s| s.n1).sum()
    }

    pub fn total(&self) -> usize {
        self.n0() + self.n1()
    }

    /// `λ_s` for `s = 0..S` (zero-based).
    pub fn threshold(&self, stage: usize) -> f64 {
        if stage + 1 == self.stages.len() {
            self.decision_threshold
        } else {
            self.futility[stage]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(invalid("two-arm protocol needs at least one stage"));
        }
        if self.stages.iter().any(|s| s.total() == 0) {
            return Err(invalid("every stage must enrol at least one patient"));
        }
        if self.n0() == 0 || self.n1() == 0 {
            return Err(invalid("both arms need patients"));
        }
        if self.futility.len() + 1 != self.stages.len() {
            return Err(invalid(format!(
                "{} stages need {} futility thresholds, got {}",
                self.stages.len(),
                self.stages.len() - 1,
                self.futility.len()
            )));
        }
        let mut all = self.futility.clone();
        all.push(self.decision_threshold);
        if all.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(invalid("thresholds must lie in [0, 1]"));
        }
        if self.posterior_draws == 0 {
            return Err(invalid("posterior_draws must be positive"));
        }
        self.priors.iter().try_for_each(|&p| check_beta(p))
    }
}

/// Q-simulates the trial with true rates `(ω₀, ω₁)`.
///
/// Each stage contributes a Q-likelihood with curvature `n_s 𝒥_s` and
/// potential drawn from its stage law; the interim posterior is the prior
/// times the running product.
pub fn q_two_arm_trials(
    protocol: &TwoArmProtocol,
    rates: [f64; 2],
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<TrialOutcome>> {
    protocol.validate()?;
    check_replicates(replicates)?;
    check_open_rates(&rates)?;
    let scenario = Scenario::arm_rates(&rates);
    let model = AnalysisModel::bernoulli_arms(2);
    let theta = DVector::from_row_slice(&rates);
    let prior = GaussianPrior::from_beta_moments(&protocol.priors)?;
    let contrast = DVector::from_vec(vec![-1.0, 1.0]);

    let mut laws = Vec::with_capacity(protocol.stages.len());
    let mut readouts = Vec::with_capacity(protocol.stages.len());
    let mut cumulative = nalgebra::DMatrix::zeros(2, 2);
    for st in &protocol.stages {
        let n = st.total() as f64;
        let alloc = Allocation::from_arm_sizes(&[st.n0 as f64, st.n1 as f64], 1);
        let j = expected_curvature(&theta, &scenario, &model, &alloc)?;
        let i = expected_score_outer(&theta, &scenario, &model, &alloc)?;
        let law = StageLaw::new(&theta, &j, &i, n)?;
        cumulative += &law.curvature;
        readouts.push(LinearReadout::new(&cumulative, &prior, &contrast)?);
        laws.push(law);
    }

    replicate_map(replicates, |r| {
        let mut rng = streams.rng(r, 0);
        let mut h = DVector::zeros(2);
        let mut arm_counts = Vec::with_capacity(laws.len());
        let mut enrolled = 0.0;
        for (s, (law, readout)) in laws.iter().zip(&readouts).enumerate() {
            h += law.sample_potential(&mut rng);
            let st = protocol.stages[s];
            arm_counts.push(vec![st.n0 as f64, st.n1 as f64]);
            enrolled += st.total() as f64;
            let p = readout.tail(&h, 0.0);
            let last = s + 1 == laws.len();
            if last || p < protocol.threshold(s) {
                return Ok(TrialOutcome {
                    stopped_stage: s + 1,
                    statistic: p,
                    success: last && p >= protocol.decision_threshold,
                    arm_counts,
                    sample_size: enrolled,
                });
            }
        }
        unreachable!("the final stage always returns")
    })
}

/// Q estimate of `P(success)`.
pub fn q_two_arm_power(
    protocol: &TwoArmProtocol,
    rates: [f64; 2],
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    timed(|| {
        let out = q_two_arm_trials(protocol, rates, replicates, streams)?;
        Ok(vec![success_estimate(&out)])
    })
}

/// Q estimates of the early-stopping probability, power and expected
/// sample size.
pub fn q_multistage_stop_prob(
    protocol: &TwoArmProtocol,
    rates: [f64; 2],
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    timed(|| {
        let out = q_two_arm_trials(protocol, rates, replicates, streams)?;
        Ok(multistage_estimates(&out, protocol.stages.len()))
    })
}

pub(crate) fn success_estimate(out: &[TrialOutcome]) -> OcEstimate {
    OcEstimate::proportion("power", out.iter().filter(|o| o.success).count(), out.len())
}

pub(crate) fn multistage_estimates(out: &[TrialOutcome], stages: usize) -> Vec<OcEstimate> {
    let stopped = out.iter().filter(|o| o.stopped_stage < stages).count();
    let sizes: Vec<f64> = out.iter().map(|o| o.sample_size).collect();
    vec![
        OcEstimate::proportion("stop_prob", stopped, out.len()),
        success_estimate(out),
        OcEstimate::mean("ess", &sizes),
    ]
}
