//! Monte Carlo runners for the supported designs.

use nalgebra::DMatrix;

use crate::asymptotics::{AnalysisModel, Scenario};
use crate::designs::bar::{sample_sdss, summarize, BarReplicate};
use crate::designs::external::{collapse, external_estimates, Predictive};
use crate::designs::two_arm::{multistage_estimates, success_estimate};
use crate::designs::{
    replicate_map, timed, BarProtocol, BarSummary, ExternalDataProtocol, ExternalDataScenario,
    SingleArmProtocol, TrialOutcome, TwoArmProtocol,
};
use crate::error::{invalid, Result};
use crate::oc::OcEstimate;
use crate::qlik::GaussianPrior;
use crate::rng::Streams;

use super::{
    beta_tail_from_counts, block_sequence, logistic_mcmc, superiority_from_counts, z_statistic, ArmRule,
    Dataset, McmcConfig, Sampler,
};

fn check(r: usize) -> Result<()> {
    if r == 0 {
        return Err(invalid("at least one replicate is required"));
    }
    Ok(())
}

fn check_rates(rates: &[f64]) -> Result<()> {
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(invalid("response rates must lie in [0, 1]"));
    }
    Ok(())
}

/// MC estimate of `P(positive)` for the single-arm design.
pub fn mc_single_arm_positive_prob(
    protocol: &SingleArmProtocol,
    rate: f64,
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    protocol.validate()?;
    check(replicates)?;
    check_rates(&[rate])?;
    let scenario = Scenario::arm_rates(&[rate]);
    let sampler = Sampler::new(&scenario)?;
    let rule = ArmRule::Counts(vec![protocol.n]);
    timed(|| {
        let hits = replicate_map(replicates, |r| {
            let mut rng = streams.rng(r, 0);
            let mut data = Dataset::new(0);
            sampler.stage(&mut data, &rule, &mut rng);
            let (s, n) = data.arm_summary(0);
            Ok(beta_tail_from_counts(s, n, protocol.prior, protocol.reference_rate) >= protocol.decision_threshold)
        })?;
        Ok(vec![OcEstimate::proportion("positive_prob", hits.iter().filter(|&&h| h).count(), replicates)])
    })
}

/// Simulates the two-arm design patient by patient; each look estimates the
/// superiority probability from conjugate posterior draws.
pub fn mc_two_arm_trials(
    protocol: &TwoArmProtocol,
    rates: [f64; 2],
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<TrialOutcome>> {
    protocol.validate()?;
    check(replicates)?;
    check_rates(&rates)?;
    let scenario = Scenario::arm_rates(&rates);
    let sampler = Sampler::new(&scenario)?;
    let stages = protocol.stages.len();
    replicate_map(replicates, |r| {
        let mut data = Dataset::new(0);
        let mut arm_counts = Vec::with_capacity(stages);
        for (s, st) in protocol.stages.iter().enumerate() {
            let mut rng = streams.rng(r, s as u64);
            sampler.stage(&mut data, &ArmRule::Counts(vec![st.n0, st.n1]), &mut rng);
            arm_counts.push(vec![st.n0 as f64, st.n1 as f64]);
            let p = superiority_from_counts(
                [data.arm_summary(0), data.arm_summary(1)],
                protocol.priors,
                protocol.posterior_draws,
                &mut rng,
            )?;
            let last = s + 1 == stages;
            if last || p < protocol.threshold(s) {
                return Ok(TrialOutcome {
                    stopped_stage: s + 1,
                    statistic: p,
                    success: last && p >= protocol.decision_threshold,
                    arm_counts,
                    sample_size: data.len() as f64,
                });
            }
        }
        unreachable!("the final stage always returns")
    })
}

/// MC estimate of `P(success)` for the two-arm design.
pub fn mc_two_arm_power(
    protocol: &TwoArmProtocol,
    rates: [f64; 2],
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    timed(|| Ok(vec![success_estimate(&mc_two_arm_trials(protocol, rates, replicates, streams)?)]))
}

/// MC estimates of the early-stopping probability, power and expected
/// sample size.
pub fn mc_multistage_stop_prob(
    protocol: &TwoArmProtocol,
    rates: [f64; 2],
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    timed(|| {
        let out = mc_two_arm_trials(protocol, rates, replicates, streams)?;
        Ok(multistage_estimates(&out, protocol.stages.len()))
    })
}

/// Simulates the external-data design with MCMC at each interim look.
pub fn mc_external_data_trials(
    protocol: &ExternalDataProtocol,
    scenario: &ExternalDataScenario,
    replicates: usize,
    mcmc: &McmcConfig,
    streams: &Streams,
) -> Result<Vec<TrialOutcome>> {
    protocol.validate()?;
    scenario.validate(protocol)?;
    mcmc.validate()?;
    check(replicates)?;
    let model = AnalysisModel::logistic(protocol.design(), protocol.analysis_covariates.clone());
    let d = model.dim();
    let prior = GaussianPrior::normal(
        nalgebra::DVector::zeros(d),
        &(DMatrix::identity(d, d) * protocol.prior_variance),
    )?;
    let trial = Sampler::new(&scenario.trial)?;
    let ext_scenario = scenario.external();
    let external = Sampler::new(&ext_scenario)?;
    let critical = protocol.critical_value();
    let totals = protocol.arm_totals(protocol.n);
    let boundaries = protocol.boundaries();
    let width = scenario.trial.covariate_len();
    let kept = &protocol.analysis_covariates;

    replicate_map(replicates, |r| {
        let mut rng = streams.rng(r, 0);
        let mut ext = Dataset::new(width);
        external.stage(&mut ext, &ArmRule::Counts(vec![protocol.external_n]), &mut rng);
        let arms = block_sequence(protocol.n, &protocol.block, &mut rng);
        let mut data = Dataset::new(width);
        let mut arm_counts = Vec::with_capacity(boundaries.len());
        let mut start = 0;
        for (s, &end) in boundaries.iter().enumerate() {
            let mut rng = streams.rng(r, s as u64 + 1);
            let stage_arms = arms[start..end].to_vec();
            arm_counts.push(vec![
                stage_arms.iter().filter(|&&a| a == 0).count() as f64,
                stage_arms.iter().filter(|&&a| a == 1).count() as f64,
            ]);
            trial.stage(&mut data, &ArmRule::Sequence(stage_arms), &mut rng);
            start = end;
            if s + 1 == boundaries.len() {
                break;
            }
            let mut pooled = ext.clone();
            pooled.append(&data);
            let draws = logistic_mcmc(&pooled, &model, &prior, mcmc, &mut rng)?;
            let profiles = collapse(
                (0..data.len()).map(|i| (kept.iter().map(|&c| data.x(i)[c]).collect(), 1.0 / data.len() as f64)),
            );
            let (s0, n0) = data.arm_summary(0);
            let (s1, n1) = data.arm_summary(1);
            let pred = Predictive {
                profiles: &profiles,
                observed_mean: [ratio(s0, n0), ratio(s1, n1)],
                observed_n: [n0, n1],
                future_n: [totals[0].saturating_sub(n0), totals[1].saturating_sub(n1)],
            };
            let hits = (0..draws.len()).filter(|&m| pred.z_draw(draws.draw(m), &mut rng) > critical).count();
            let prob = hits as f64 / draws.len() as f64;
            if protocol.zeta > 0.0 && prob <= protocol.zeta {
                return Ok(TrialOutcome {
                    stopped_stage: s + 1,
                    statistic: f64::NEG_INFINITY,
                    success: false,
                    arm_counts,
                    sample_size: data.len() as f64,
                });
            }
        }
        let (s0, n0) = data.arm_summary(0);
        let (s1, n1) = data.arm_summary(1);
        let z = z_statistic(ratio(s1, n1), ratio(s0, n0), n1 as f64, n0 as f64);
        Ok(TrialOutcome {
            stopped_stage: boundaries.len(),
            statistic: z,
            success: z > critical,
            arm_counts,
            sample_size: data.len() as f64,
        })
    })
}

fn ratio(s: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

/// MC estimates of the rejection probability, early-stopping probability
/// and expected sample size.
pub fn mc_external_data_run(
    protocol: &ExternalDataProtocol,
    scenario: &ExternalDataScenario,
    replicates: usize,
    mcmc: &McmcConfig,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    timed(|| {
        let out = mc_external_data_trials(protocol, scenario, replicates, mcmc, streams)?;
        Ok(external_estimates(&out, protocol.n))
    })
}

/// Simulates the adaptive-randomization design with MCMC after each stage.
pub(crate) fn mc_bar_replicates(
    protocol: &BarProtocol,
    scenario: &Scenario,
    replicates: usize,
    mcmc: &McmcConfig,
    streams: &Streams,
) -> Result<Vec<BarReplicate>> {
    protocol.validate_against(scenario)?;
    mcmc.validate()?;
    check(replicates)?;
    let k = protocol.design.arms();
    let profiles = scenario.profiles.len();
    let d = protocol.design.dim();
    let model = AnalysisModel::logistic(protocol.design.clone(), (0..protocol.design.covariates()).collect());
    let prior = GaussianPrior::normal(
        nalgebra::DVector::zeros(d),
        &(DMatrix::identity(d, d) * protocol.prior_variance),
    )?;
    let sampler = Sampler::new(scenario)?;
    let rows: Vec<Vec<Vec<f64>>> = scenario
        .profiles
        .iter()
        .map(|p| (0..k).map(|arm| protocol.design.row(&p.covariates, arm).as_slice().to_vec()).collect())
        .collect();
    let sizes = protocol.stage_sizes();

    replicate_map(replicates, |r| {
        let mut rho = vec![vec![1.0 / k as f64; k]; profiles];
        let mut data = Dataset::new(scenario.covariate_len());
        for (s, &n_s) in sizes.iter().enumerate() {
            let mut rng = streams.rng(r, s as u64);
            sampler.stage(&mut data, &ArmRule::ProfileProbs { n: n_s, probs: rho.clone() }, &mut rng);
            if !protocol.adaptive || s + 1 == sizes.len() {
                continue;
            }
            let draws = logistic_mcmc(&data, &model, &prior, mcmc, &mut rng)?;
            for (x, rows_x) in rows.iter().enumerate() {
                let mut best = vec![0usize; k];
                for m in 0..draws.len() {
                    let theta = draws.draw(m);
                    let eta = |arm: usize| rows_x[arm].iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
                    let top = (1..k).fold(0, |b, arm| if eta(arm) > eta(b) { arm } else { b });
                    best[top] += 1;
                }
                rho[x] = best.iter().map(|&c| c as f64 / draws.len() as f64).collect();
            }
        }
        let mut counts = vec![vec![0.0; k]; profiles];
        for (&x, &arm) in data.profile.iter().zip(&data.arm) {
            counts[x][arm] += 1.0;
        }
        Ok(BarReplicate {
            within: vec![vec![0.0; k]; profiles],
            counts,
        })
    })
}

/// MC estimates of the expected and standard-deviation sample sizes.
pub fn mc_bar_run(
    protocol: &BarProtocol,
    scenario: &Scenario,
    replicates: usize,
    mcmc: &McmcConfig,
    streams: &Streams,
) -> Result<BarSummary> {
    let start = std::time::Instant::now();
    let reps = mc_bar_replicates(protocol, scenario, replicates, mcmc, streams)?;
    let mut out = summarize(&reps, |counts, _| sample_sdss(counts));
    let secs = start.elapsed().as_secs_f64();
    out.ess.iter_mut().chain(out.sdss.iter_mut()).for_each(|row| crate::oc::stamp(row, secs));
    Ok(out)
}
