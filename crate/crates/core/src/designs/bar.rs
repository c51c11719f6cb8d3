//! Bayesian adaptive randomization across covariate profiles.
//!
//! After every stage the arm probabilities of profile `x` are set
//! proportional to the posterior probability that each arm has the highest
//! response under that profile. Operating characteristics are the expected
//! number of patients per `(arm, profile)` and its standard deviation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{Allocation, AnalysisModel, CellTable, DesignMap, OutcomeLaw, Scenario};
use crate::error::{invalid, Result};
use crate::linalg::spd_cholesky;
use crate::mvn::{superiority_from_parts, GenzOptions};
use crate::oc::OcEstimate;
use crate::qlik::StageLaw;
use crate::rng::Streams;

use super::{check_replicates, replicate_map, timed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarProtocol {
    /// Total sample size.
    pub n: usize,
    /// Patients per stage; the last stage takes the remainder.
    pub stage_size: usize,
    /// Analysis model design (logistic link, all covariates).
    pub design: DesignMap,
    /// Prior `N(0, prior_variance · I)` on the coefficients.
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    /// `false` freezes the allocation at uniform.
    #[serde(default = "yes")]
    pub adaptive: bool,
}

fn default_prior_variance() -> f64 {
    10.0
}

fn yes() -> bool {
    true
}

impl BarProtocol {
    pub fn new(n: usize, stage_size: usize, design: DesignMap) -> Self {
        Self {
            n,
            stage_size,
            design,
            prior_variance: default_prior_variance(),
            adaptive: true,
        }
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        let mut out = vec![self.stage_size; self.n / self.stage_size];
        if self.n % self.stage_size != 0 {
            out.push(self.n % self.stage_size);
        }
        out
    }

    pub fn validate_against(&self, scenario: &Scenario) -> Result<()> {
        if self.n == 0 || self.stage_size == 0 || self.stage_size > self.n {
            return Err(invalid("need 0 < stage_size <= n"));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(invalid("prior_variance must be positive and finite"));
        }
        self.design.validate()?;
        if self.design.arms() < 2 {
            return Err(invalid("adaptive randomization needs at least two arms"));
        }
        scenario.validate()?;
        if scenario.arms() != self.design.arms() {
            return Err(invalid("scenario and design have different arm counts"));
        }
        if scenario.covariate_len() != self.design.covariates() {
            return Err(invalid("scenario and design have different covariates"));
        }
        Ok(())
    }
}

/// Per-replicate allocation totals.
#[derive(Debug, Clone)]
pub(crate) struct BarReplicate {
    /// `N_{k,x}`, indexed `[x][k]`.
    pub counts: Vec<Vec<f64>>,
    /// `Σ_s n_s π (1 − π)` with `π = ρ_{k,x} p_x` (Q runs only).
    pub within: Vec<Vec<f64>>,
}

/// Expected and standard-deviation sample sizes per `(arm, profile)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BarSummary {
    /// `ess[x][k]`.
    pub ess: Vec<Vec<OcEstimate>>,
    pub sdss: Vec<Vec<OcEstimate>>,
}

impl BarSummary {
    pub fn flatten(&self) -> Vec<OcEstimate> {
        let mut out = Vec::new();
        for row in &self.ess {
            out.extend(row.iter().cloned());
        }
        for row in &self.sdss {
            out.extend(row.iter().cloned());
        }
        out
    }
}

pub(crate) fn oc_name(kind: &str, arm: usize, profile: usize) -> String {
    format!("{kind}[arm={arm},profile={profile}]")
}

/// Rows `A_x` mapping θ to the arm linear predictors of each profile.
fn arm_maps(design: &DesignMap, scenario: &Scenario) -> Vec<DMatrix<f64>> {
    let k = design.arms();
    scenario
        .profiles
        .iter()
        .map(|p| {
            let mut a = DMatrix::zeros(k, design.dim());
            for arm in 0..k {
                a.set_row(arm, &design.row(&p.covariates, arm).transpose());
            }
            a
        })
        .collect()
}

/// Normalized superiority probabilities; uniform if all vanish.
pub(crate) fn allocation_from_superiority(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    if s > 0.0 && s.is_finite() {
        p.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / p.len() as f64; p.len()]
    }
}

/// Q-simulates one replicate set of the adaptive design.
pub(crate) fn q_bar_replicates(
    protocol: &BarProtocol,
    scenario: &Scenario,
    replicates: usize,
    opts: &GenzOptions,
    streams: &Streams,
) -> Result<Vec<BarReplicate>> {
    protocol.validate_against(scenario)?;
    check_replicates(replicates)?;
    let k = protocol.design.arms();
    let profiles = scenario.profiles.len();
    let d = protocol.design.dim();
    let model = AnalysisModel::logistic(protocol.design.clone(), (0..protocol.design.covariates()).collect());
    // Under a correctly specified model θ* does not depend on the allocation.
    let fixed_theta = match &scenario.outcome {
        OutcomeLaw::Logistic { coefficients, design } if *design == protocol.design => {
            Some(DVector::from_row_slice(coefficients))
        }
        _ => None,
    };
    let maps = arm_maps(&protocol.design, scenario);
    let prior_precision = DMatrix::identity(d, d) / protocol.prior_variance;
    let sizes = protocol.stage_sizes();

    replicate_map(replicates, |r| {
        let mut rng = streams.rng(r, 0);
        let mut rho = vec![vec![1.0 / k as f64; k]; profiles];
        let mut curvature = prior_precision.clone();
        let mut potential = DVector::zeros(d);
        let mut counts = vec![vec![0.0; k]; profiles];
        let mut within = vec![vec![0.0; k]; profiles];
        for (s, &n_s) in sizes.iter().enumerate() {
            let ns = n_s as f64;
            for x in 0..profiles {
                let px = scenario.profiles[x].prob;
                for arm in 0..k {
                    let pi = rho[x][arm] * px;
                    counts[x][arm] += ns * pi;
                    within[x][arm] += ns * pi * (1.0 - pi);
                }
            }
            if !protocol.adaptive || s + 1 == sizes.len() {
                continue;
            }
            let alloc = Allocation { arm_probs: rho.clone() };
            let table = CellTable::new(scenario, &model, &alloc)?;
            let theta = match &fixed_theta {
                Some(t) => t.clone(),
                None => table.kl_projection()?,
            };
            let j = table.expected_curvature(&theta);
            let i = table.expected_score_outer(&theta);
            let law = StageLaw::new(&theta, &j, &i, ns)?;
            potential += law.sample_potential(&mut rng);
            curvature += &law.curvature;
            let chol = spd_cholesky(&curvature, "posterior curvature")?;
            let center = chol.solve(&potential);
            for x in 0..profiles {
                let a = &maps[x];
                let mean = a * &center;
                let cov = a * chol.solve(&a.transpose());
                let p: Vec<f64> = superiority_from_parts(mean.as_slice(), &cov, opts)?
                    .into_iter()
                    .map(|o| o.value)
                    .collect();
                rho[x] = allocation_from_superiority(&p);
            }
        }
        Ok(BarReplicate { counts, within })
    })
}

/// Sample SD over replicates. The SE is the delta method on the sample
/// variance, `Var(s²) ≈ (m₄ − s⁴)/R`; counts under adaptive allocation are
/// far from normal, so the normal-theory `sd/√(2(R−1))` is too small.
pub(crate) fn sample_sdss(counts: &[f64]) -> (f64, f64) {
    let r = counts.len();
    if r < 2 {
        return (0.0, 0.0);
    }
    let mean = counts.iter().sum::<f64>() / r as f64;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (r - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return (0.0, 0.0);
    }
    let u: Vec<f64> = counts.iter().map(|c| (c - mean) * (c - mean)).collect();
    let se_var = crate::accuracy::mean_se(&u).unwrap_or(0.0);
    (sd, se_var / (2.0 * sd))
}

/// `SDSS² = Var_r(N) + mean_r(W)`, with a delta-method standard error.
fn q_sdss(counts: &[f64], within: &[f64]) -> (f64, f64) {
    let r = counts.len() as f64;
    let mean_n = counts.iter().sum::<f64>() / r;
    let second: f64 = counts.iter().zip(within).map(|(n, w)| n * n + w).sum::<f64>() / r;
    let s2 = (second - mean_n * mean_n).max(0.0);
    let sd = s2.sqrt();
    if counts.len() < 2 || sd == 0.0 {
        return (sd, 0.0);
    }
    let u: Vec<f64> = counts
        .iter()
        .zip(within)
        .map(|(n, w)| n * n + w - 2.0 * mean_n * n)
        .collect();
    let se_s2 = crate::accuracy::mean_se(&u).unwrap_or(0.0);
    (sd, se_s2 / (2.0 * sd))
}

pub(crate) fn summarize(
    reps: &[BarReplicate],
    sdss: impl Fn(&[f64], &[f64]) -> (f64, f64),
) -> BarSummary {
    let profiles = reps[0].counts.len();
    let k = reps[0].counts[0].len();
    let mut ess = Vec::with_capacity(profiles);
    let mut sd = Vec::with_capacity(profiles);
    for x in 0..profiles {
        let mut erow = Vec::with_capacity(k);
        let mut srow = Vec::with_capacity(k);
        for arm in 0..k {
            let n: Vec<f64> = reps.iter().map(|b| b.counts[x][arm]).collect();
            let w: Vec<f64> = reps.iter().map(|b| b.within[x][arm]).collect();
            erow.push(OcEstimate::mean(oc_name("ess", arm, x), &n));
            let (v, se) = sdss(&n, &w);
            srow.push(OcEstimate::new(oc_name("sdss", arm, x), v, se, reps.len()));
        }
        ess.push(erow);
        sd.push(srow);
    }
    BarSummary { ess, sdss: sd }
}

/// Q estimates of the expected and standard-deviation sample sizes.
pub fn q_bar_run(
    protocol: &BarProtocol,
    scenario: &Scenario,
    replicates: usize,
    streams: &Streams,
) -> Result<BarSummary> {
    q_bar_run_with(protocol, scenario, replicates, &GenzOptions::default(), streams)
}

/// [`q_bar_run`] with explicit orthant-probability settings.
pub fn q_bar_run_with(
    protocol: &BarProtocol,
    scenario: &Scenario,
    replicates: usize,
    opts: &GenzOptions,
    streams: &Streams,
) -> Result<BarSummary> {
    let start = std::time::Instant::now();
    let reps = q_bar_replicates(protocol, scenario, replicates, opts, streams)?;
    let mut out = summarize(&reps, q_sdss);
    let secs = start.elapsed().as_secs_f64();
    out.ess.iter_mut().chain(out.sdss.iter_mut()).for_each(|row| crate::oc::stamp(row, secs));
    Ok(out)
}

/// [`q_bar_run_with`] flattened into a list.
pub fn q_bar_estimates(
    protocol: &BarProtocol,
    scenario: &Scenario,
    replicates: usize,
    opts: &GenzOptions,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    timed(|| Ok(q_bar_run_with(protocol, scenario, replicates, opts, streams)?.flatten()))
}
