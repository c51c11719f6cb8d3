//! Patient-level Monte Carlo baselines.
//!
//! Every replicate simulates covariates, arm assignments and outcomes for
//! each patient and runs the protocol's own analysis: exact Beta tails,
//! posterior draws, or adaptive Metropolis for logistic models.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::asymptotics::Scenario;
use crate::error::{invalid, Result};
use crate::special::beta_sf;

mod mcmc;
mod runners;

pub use mcmc::{logistic_mcmc, McmcConfig, McmcDraws};
pub use runners::{
    mc_bar_run, mc_external_data_run, mc_external_data_trials, mc_multistage_stop_prob,
    mc_single_arm_positive_prob, mc_two_arm_power, mc_two_arm_trials,
};

/// Patient records `(Y_i, X⁺_i, A_i)` with stage boundaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    /// Covariates per patient.
    pub width: usize,
    pub y: Vec<u8>,
    /// Row-major `len × width`.
    pub covariates: Vec<f64>,
    /// Scenario profile index of each patient.
    pub profile: Vec<usize>,
    pub arm: Vec<usize>,
    /// Exclusive end index of each completed stage.
    pub stage_ends: Vec<usize>,
}

impl Dataset {
    pub fn new(width: usize) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.width..(i + 1) * self.width]
    }

    pub fn push(&mut self, profile: usize, x: &[f64], arm: usize, y: bool) {
        debug_assert_eq!(x.len(), self.width);
        self.profile.push(profile);
        self.covariates.extend_from_slice(x);
        self.arm.push(arm);
        self.y.push(u8::from(y));
    }

    /// Closes the current stage.
    pub fn end_stage(&mut self) {
        self.stage_ends.push(self.len());
    }

    /// `(successes, patients)` in `arm`.
    pub fn arm_summary(&self, arm: usize) -> (usize, usize) {
        self.arm
            .iter()
            .zip(&self.y)
            .filter(|(a, _)| **a == arm)
            .fold((0, 0), |(s, n), (_, y)| (s + usize::from(*y), n + 1))
    }

    /// Appends `other`'s patients (stage boundaries are not copied).
    pub fn append(&mut self, other: &Dataset) {
        debug_assert_eq!(self.width, other.width);
        self.y.extend_from_slice(&other.y);
        self.covariates.extend_from_slice(&other.covariates);
        self.profile.extend_from_slice(&other.profile);
        self.arm.extend_from_slice(&other.arm);
    }
}

/// How simulated patients are assigned to arms.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmRule {
    /// `counts[k]` patients on arm `k`.
    Counts(Vec<usize>),
    /// One patient per entry, on the given arm.
    Sequence(Vec<usize>),
    /// `n` patients; arm drawn from `probs[profile]`.
    ProfileProbs { n: usize, probs: Vec<Vec<f64>> },
}

/// Response probabilities `q[x][k]` and the profile CDF of a scenario.
#[derive(Debug, Clone)]
pub(crate) struct Sampler<'a> {
    scenario: &'a Scenario,
    cdf: Vec<f64>,
    q: Vec<Vec<f64>>,
}

impl<'a> Sampler<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        scenario.validate()?;
        Ok(Self::with_probs(scenario, scenario.profiles.iter().map(|p| p.prob)))
    }

    /// Same outcome law, profile mix given by `probs`.
    pub fn with_probs(scenario: &'a Scenario, probs: impl Iterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        let cdf = probs
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        let q = (0..scenario.profiles.len())
            .map(|x| (0..scenario.arms()).map(|k| scenario.response_prob(x, k)).collect())
            .collect();
        Self { scenario, cdf, q }
    }

    pub fn profile<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng.random::<f64>() * self.cdf.last().copied().unwrap_or(1.0);
        self.cdf.iter().position(|&c| u < c).unwrap_or(self.cdf.len() - 1)
    }

    pub fn patient<R: Rng + ?Sized>(&self, data: &mut Dataset, x: usize, arm: usize, rng: &mut R) {
        let y = rng.random::<f64>() < self.q[x][arm];
        data.push(x, &self.scenario.profiles[x].covariates, arm, y);
    }

    /// Appends one stage of patients to `data`.
    pub fn stage<R: Rng + ?Sized>(&self, data: &mut Dataset, rule: &ArmRule, rng: &mut R) {
        match rule {
            ArmRule::Counts(counts) => {
                for (arm, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        let x = self.profile(rng);
                        self.patient(data, x, arm, rng);
                    }
                }
            }
            ArmRule::Sequence(arms) => {
                for &arm in arms {
                    let x = self.profile(rng);
                    self.patient(data, x, arm, rng);
                }
            }
            ArmRule::ProfileProbs { n, probs } => {
                for _ in 0..*n {
                    let x = self.profile(rng);
                    let arm = categorical(&probs[x], rng);
                    self.patient(data, x, arm, rng);
                }
            }
        }
        data.end_stage();
    }
}

fn categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &p) in probs.iter().enumerate() {
        if u < p {
            return k;
        }
        u -= p;
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Simulates a single-stage dataset.
pub fn simulate_dataset<R: Rng + ?Sized>(scenario: &Scenario, rule: &ArmRule, rng: &mut R) -> Result<Dataset> {
    let sampler = Sampler::new(scenario)?;
    if let ArmRule::ProfileProbs { probs, .. } = rule {
        if probs.len() != scenario.profiles.len() {
            return Err(invalid("arm probabilities needed for every profile"));
        }
    }
    let arms = scenario.arms();
    let bad = match rule {
        ArmRule::Counts(c) => c.len() > arms,
        ArmRule::Sequence(s) => s.iter().any(|&a| a >= arms),
        ArmRule::ProfileProbs { probs, .. } => probs.iter().any(|p| p.len() != arms),
    };
    if bad {
        return Err(invalid("arm rule refers to arms the scenario does not have"));
    }
    let mut data = Dataset::new(scenario.covariate_len());
    sampler.stage(&mut data, rule, rng);
    Ok(data)
}

/// Arm sequence of `n` patients in permuted blocks; `block[k]` patients of
/// arm `k` per block. A trailing partial block is the prefix of a permuted
/// block.
pub fn block_sequence<R: Rng + ?Sized>(n: usize, block: &[usize], rng: &mut R) -> Vec<usize> {
    let mut template: Vec<usize> = block.iter().enumerate().flat_map(|(k, &c)| std::iter::repeat_n(k, c)).collect();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        template.shuffle(rng);
        let take = (n - out.len()).min(template.len());
        out.extend_from_slice(&template[..take]);
    }
    out
}

/// `P(θ > threshold | data)` for a Beta prior on `arm`'s response rate.
pub fn beta_posterior_tail(data: &Dataset, arm: usize, prior: (f64, f64), threshold: f64) -> f64 {
    let (s, n) = data.arm_summary(arm);
    beta_tail_from_counts(s, n, prior, threshold)
}

pub fn beta_tail_from_counts(successes: usize, n: usize, prior: (f64, f64), threshold: f64) -> f64 {
    beta_sf(threshold, prior.0 + successes as f64, prior.1 + (n - successes) as f64)
}

/// Fraction of `draws` conjugate posterior pairs with `θ₁ − θ₀ ≥ 0`.
pub fn posterior_superiority_mc<R: Rng + ?Sized>(
    data: &Dataset,
    priors: [(f64, f64); 2],
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    superiority_from_counts([data.arm_summary(0), data.arm_summary(1)], priors, draws, rng)
}

/// [`posterior_superiority_mc`] on `(successes, n)` per arm.
pub fn superiority_from_counts<R: Rng + ?Sized>(
    counts: [(usize, usize); 2],
    priors: [(f64, f64); 2],
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    if draws == 0 {
        return Err(invalid("need at least one posterior draw"));
    }
    let law = |k: usize| {
        let (s, n) = counts[k];
        Beta::new(priors[k].0 + s as f64, priors[k].1 + (n - s) as f64)
            .map_err(|e| invalid(format!("Beta posterior: {e}")))
    };
    let (b0, b1) = (law(0)?, law(1)?);
    let hits = (0..draws).filter(|_| b1.sample(rng) - b0.sample(rng) >= 0.0).count();
    Ok(hits as f64 / draws as f64)
}

/// Pooled two-sample Z statistic for response rates.
///
/// Zero when an arm is empty or the pooled rate is 0 or 1.
pub fn z_statistic(mean1: f64, mean0: f64, n1: f64, n0: f64) -> f64 {
    if !(n1 > 0.0 && n0 > 0.0) {
        return 0.0;
    }
    let pooled = (n1 * mean1 + n0 * mean0) / (n1 + n0);
    if !(pooled > 0.0 && pooled < 1.0) {
        return 0.0;
    }
    (mean1 - mean0) / (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n0)).sqrt()
}

/// [`z_statistic`] for treatment (arm 1) against control (arm 0).
pub fn z_statistic_dataset(data: &Dataset) -> f64 {
    let (s0, n0) = data.arm_summary(0);
    let (s1, n1) = data.arm_summary(1);
    let mean = |s: usize, n: usize| if n == 0 { 0.0 } else { s as f64 / n as f64 };
    z_statistic(mean(s1, n1), mean(s0, n0), n1 as f64, n0 as f64)
}
