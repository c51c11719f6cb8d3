//! Two-arm trial whose interim futility looks borrow external control data.
//!
//! Interim looks fit a logistic model `[1, x_kept.., 1{treatment}]` to the
//! external controls plus the trial so far and compute the predictive
//! probability that the final pooled Z test rejects. The trial stops when
//! that probability is at most `zeta`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    cross_score_outer, logistic, Allocation, AnalysisModel, Cell, CellTable, DesignMap, ModelKind,
    Scenario,
};
use crate::error::{invalid, Result};
use crate::linalg::{psd_factor, spd_cholesky, spd_inverse};
use crate::mc::z_statistic;
use crate::oc::OcEstimate;
use crate::rng::Streams;
use crate::special::normal_quantile;

use super::{check_replicates, replicate_map, timed, TrialOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalDataProtocol {
    /// Trial sample size.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Cumulative enrolment at each interim look.
    #[serde(default = "default_looks")]
    pub looks: Vec<usize>,
    /// Block composition `[control, treatment]`.
    #[serde(default = "default_ratio")]
    pub block: [usize; 2],
    /// External control sample size.
    #[serde(default = "default_external_n")]
    pub external_n: usize,
    /// Scenario covariates visible to the interim model.
    #[serde(default = "default_kept")]
    pub analysis_covariates: Vec<usize>,
    /// Interim-model prior `N(0, prior_variance · I)`.
    #[serde(default = "default_prior_variance")]
    pub prior_variance: f64,
    /// Futility threshold on the predictive probability; 0 disables stopping.
    #[serde(default = "default_zeta")]
    pub zeta: f64,
    /// One-sided level of the final Z test.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Draws used for the predictive probability.
    #[serde(default = "default_draws")]
    pub predictive_draws: usize,
}

fn default_n() -> usize {
    182
}
fn default_looks() -> Vec<usize> {
    vec![36, 72, 108, 144]
}
fn default_ratio() -> [usize; 2] {
    [1, 2]
}
fn default_external_n() -> usize {
    500
}
fn default_kept() -> Vec<usize> {
    vec![0, 1]
}
fn default_prior_variance() -> f64 {
    10.0
}
fn default_zeta() -> f64 {
    0.05
}
fn default_alpha() -> f64 {
    0.025
}
fn default_draws() -> usize {
    1000
}

impl Default for ExternalDataProtocol {
    fn default() -> Self {
        Self {
            n: default_n(),
            looks: default_looks(),
            block: default_ratio(),
            external_n: default_external_n(),
            analysis_covariates: default_kept(),
            prior_variance: default_prior_variance(),
            zeta: default_zeta(),
            alpha: default_alpha(),
            predictive_draws: default_draws(),
        }
    }
}

impl ExternalDataProtocol {
    /// Planned `[control, treatment]` counts after `c` patients.
    pub fn arm_totals(&self, c: usize) -> [usize; 2] {
        let b = (self.block[0] + self.block[1]) as f64;
        let treated = (c as f64 * self.block[1] as f64 / b).round() as usize;
        [c - treated, treated]
    }

    /// Cumulative enrolment at the end of each stage (looks then `n`).
    pub fn boundaries(&self) -> Vec<usize> {
        let mut b = self.looks.clone();
        b.push(self.n);
        b
    }

    /// Planned `[control, treatment]` counts per stage.
    pub fn stage_arm_sizes(&self) -> Vec<[usize; 2]> {
        let mut prev = [0, 0];
        self.boundaries()
            .into_iter()
            .map(|c| {
                let t = self.arm_totals(c);
                let out = [t[0] - prev[0], t[1] - prev[1]];
                prev = t;
                out
            })
            .collect()
    }

    pub fn critical_value(&self) -> f64 {
        normal_quantile(1.0 - self.alpha)
    }

    /// Interim model design `[1, x.., 1{treatment}]`.
    pub fn design(&self) -> DesignMap {
        DesignMap::MainEffects {
            covariates: self.analysis_covariates.len(),
            arms: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("trial sample size must be positive"));
        }
        if self.looks.windows(2).any(|w| w[0] >= w[1]) || self.looks.iter().any(|&l| l == 0 || l >= self.n) {
            return Err(invalid("interim looks must be strictly increasing and inside (0, n)"));
        }
        if self.block[0] == 0 || self.block[1] == 0 {
            return Err(invalid("randomization block needs both arms"));
        }
        if !(self.prior_variance > 0.0 && self.prior_variance.is_finite()) {
            return Err(invalid("prior_variance must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.zeta) {
            return Err(invalid("zeta must lie in [0, 1)"));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(invalid("alpha must lie in (0, 0.5)"));
        }
        if self.predictive_draws == 0 {
            return Err(invalid("predictive_draws must be positive"));
        }
        Ok(())
    }
}

/// Trial truth plus the external population's profile mix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalDataScenario {
    /// Outcome law over the full covariates `x⁺` and the trial profile mix.
    pub trial: Scenario,
    /// Profile probabilities of the external population, aligned with
    /// `trial.profiles`.
    pub external_profile_probs: Vec<f64>,
}

impl ExternalDataScenario {
    pub fn external(&self) -> Scenario {
        self.trial.with_profile_probs(&self.external_profile_probs)
    }

    pub fn validate(&self, protocol: &ExternalDataProtocol) -> Result<()> {
        self.trial.validate()?;
        if self.trial.arms() != 2 {
            return Err(invalid("external-data design has two arms"));
        }
        if self.external_profile_probs.len() != self.trial.profiles.len() {
            return Err(invalid("external profile probabilities do not match the trial profiles"));
        }
        self.external().validate()?;
        if let Some(&i) = protocol
            .analysis_covariates
            .iter()
            .find(|&&i| i >= self.trial.covariate_len())
        {
            return Err(invalid(format!("analysis covariate {i} not in the scenario")));
        }
        Ok(())
    }

    /// Trial profile mix collapsed onto the analysis covariates.
    pub(crate) fn analysis_profiles(&self, kept: &[usize]) -> Vec<(Vec<f64>, f64)> {
        collapse(
            self.trial
                .profiles
                .iter()
                .map(|p| (kept.iter().map(|&i| p.covariates[i]).collect(), p.prob)),
        )
    }
}

pub(crate) fn collapse(items: impl Iterator<Item = (Vec<f64>, f64)>) -> Vec<(Vec<f64>, f64)> {
    let mut out: Vec<(Vec<f64>, f64)> = Vec::new();
    for (x, p) in items {
        match out.iter_mut().find(|(y, _)| *y == x) {
            Some(e) => e.1 += p,
            None => out.push((x, p)),
        }
    }
    out.retain(|(_, p)| *p > 0.0);
    out
}

/// Predictive probability that the final Z test rejects.
///
/// `draw_beta` yields interim-model coefficient draws; `observed` holds the
/// arm means and counts so far and `future` the remaining arm counts.
pub(crate) struct Predictive<'a> {
    pub profiles: &'a [(Vec<f64>, f64)],
    pub observed_mean: [f64; 2],
    pub observed_n: [usize; 2],
    pub future_n: [usize; 2],
}

impl Predictive<'_> {
    pub fn arm_rates(&self, beta: &[f64]) -> [f64; 2] {
        let p = self.profiles[0].0.len();
        let mut g = [0.0; 2];
        for (x, w) in self.profiles {
            let base = beta[0] + x.iter().zip(&beta[1..=p]).map(|(a, b)| a * b).sum::<f64>();
            g[0] += w * logistic(base);
            g[1] += w * logistic(base + beta[p + 1]);
        }
        g
    }

    /// One predictive Z draw for coefficients `beta`.
    pub fn z_draw<R: Rng + ?Sized>(&self, beta: &[f64], rng: &mut R) -> f64 {
        let g = self.arm_rates(beta);
        let mut mean = [0.0; 2];
        let mut total = [0usize; 2];
        for k in 0..2 {
            let nf = self.future_n[k];
            let yf = if nf == 0 {
                0.0
            } else {
                Binomial::new(nf as u64, g[k].clamp(0.0, 1.0))
                    .expect("probability clamped to [0, 1]")
                    .sample(rng) as f64
            };
            total[k] = self.observed_n[k] + nf;
            mean[k] = (self.observed_mean[k] * self.observed_n[k] as f64 + yf) / total[k] as f64;
        }
        z_statistic(mean[1], mean[0], total[1] as f64, total[0] as f64)
    }
}

struct StagePlan {
    /// Mean potential `[n J_β θ*_β; n J_γ θ*_γ]`.
    mean: DVector<f64>,
    /// Factor of `n [[ℐ_ββ, ℐ_βγ], [ℐ_γβ, ℐ_γγ]]`.
    factor: DMatrix<f64>,
    /// Stage interim-model curvature `n 𝒥_β`.
    v_beta: DMatrix<f64>,
    /// Diagonal of the stage final-model curvature.
    v_gamma: [f64; 2],
}

/// Stacked influence-function law of the interim (β) and final (γ) model
/// potentials for one stage with arm sizes `sizes`.
fn stage_plan(
    scenario: &Scenario,
    ia: &AnalysisModel,
    fa: &AnalysisModel,
    sizes: [usize; 2],
) -> Result<StagePlan> {
    if sizes.contains(&0) {
        return Err(invalid(format!(
            "stage arm sizes {sizes:?} leave an arm empty; the stage curvature is singular"
        )));
    }
    let n = (sizes[0] + sizes[1]) as f64;
    let profiles = scenario.profiles.len();
    let alloc = Allocation::from_arm_sizes(&[sizes[0] as f64, sizes[1] as f64], profiles);
    let tb = CellTable::new(scenario, ia, &alloc)?;
    let tg = CellTable::new(scenario, fa, &alloc)?;
    let beta = tb.kl_projection()?;
    let gamma = tg.kl_projection()?;
    let jb = tb.expected_curvature(&beta);
    let jg = tg.expected_curvature(&gamma);
    let ibb = tb.expected_score_outer(&beta);
    let igg = tg.expected_score_outer(&gamma);
    let ibg = cross_score_outer((&tb, &beta), (&tg, &gamma))?;
    let db = beta.len();
    let mut cov = DMatrix::zeros(db + 2, db + 2);
    cov.view_mut((0, 0), (db, db)).copy_from(&ibb);
    cov.view_mut((db, db), (2, 2)).copy_from(&igg);
    cov.view_mut((0, db), (db, 2)).copy_from(&ibg);
    cov.view_mut((db, 0), (2, db)).copy_from(&ibg.transpose());
    let mut mean = DVector::zeros(db + 2);
    mean.rows_mut(0, db).copy_from(&(&jb * &beta * n));
    mean.rows_mut(db, 2).copy_from(&(&jg * &gamma * n));
    Ok(StagePlan {
        mean,
        factor: psd_factor(&(cov * n))?,
        v_beta: jb * n,
        v_gamma: [jg[(0, 0)] * n, jg[(1, 1)] * n],
    })
}

/// External-data interim potential law: mean and factor in the interim
/// parameterization, with zero rows for the unidentified treatment effect.
fn external_plan(
    scenario: &ExternalDataScenario,
    protocol: &ExternalDataProtocol,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let ext = scenario.external();
    let kept = &protocol.analysis_covariates;
    let reduced = DesignMap::MainEffects {
        covariates: kept.len(),
        arms: 1,
    };
    let cells = ext
        .profiles
        .iter()
        .enumerate()
        .filter(|(_, p)| p.prob > 0.0)
        .map(|(x, p)| Cell {
            profile: x,
            arm: 0,
            weight: p.prob,
            q: ext.response_prob(x, 0),
            row: reduced.row(&kept.iter().map(|&i| p.covariates[i]).collect::<Vec<_>>(), 0),
        })
        .collect();
    let table = CellTable {
        kind: ModelKind::Logistic,
        dim: reduced.dim(),
        cells,
    };
    let theta = table.kl_projection()?;
    let n = protocol.external_n as f64;
    let j = table.expected_curvature(&theta) * n;
    let i = table.expected_score_outer(&theta) * n;
    let d = reduced.dim();
    let full = d + 1;
    let mut v = DMatrix::zeros(full, full);
    v.view_mut((0, 0), (d, d)).copy_from(&j);
    let mut mean = DVector::zeros(full);
    mean.rows_mut(0, d).copy_from(&(&j * &theta));
    let mut factor = DMatrix::zeros(full, full);
    factor.view_mut((0, 0), (d, d)).copy_from(&psd_factor(&i)?);
    Ok((mean, factor, v))
}

fn normals<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Q-simulates the external-data design.
pub fn q_external_data_trials(
    protocol: &ExternalDataProtocol,
    scenario: &ExternalDataScenario,
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<TrialOutcome>> {
    protocol.validate()?;
    scenario.validate(protocol)?;
    check_replicates(replicates)?;
    let ia = AnalysisModel::logistic(protocol.design(), protocol.analysis_covariates.clone());
    let fa = AnalysisModel::bernoulli_arms(2);
    let db = ia.dim();
    let sizes = protocol.stage_arm_sizes();
    let plans = sizes
        .iter()
        .map(|&s| stage_plan(&scenario.trial, &ia, &fa, s))
        .collect::<Result<Vec<_>>>()?;
    let (ext_mean, ext_factor, ext_v) = external_plan(scenario, protocol)?;
    let profiles = scenario.analysis_profiles(&protocol.analysis_covariates);
    let critical = protocol.critical_value();
    let totals = protocol.arm_totals(protocol.n);

    // Interim posterior curvature and its sampling factor are fixed per look.
    struct Look {
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
        factor: DMatrix<f64>,
        seen: [usize; 2],
        v_gamma: [f64; 2],
    }
    let mut v = ext_v + DMatrix::identity(db, db) / protocol.prior_variance;
    let mut looks = Vec::with_capacity(protocol.looks.len());
    let mut seen = [0usize; 2];
    let mut v_gamma = [0.0; 2];
    for (s, plan) in plans.iter().enumerate() {
        seen[0] += sizes[s][0];
        seen[1] += sizes[s][1];
        v_gamma[0] += plan.v_gamma[0];
        v_gamma[1] += plan.v_gamma[1];
        if s < protocol.looks.len() {
            v += &plan.v_beta;
            looks.push(Look {
                chol: spd_cholesky(&v, "interim posterior curvature")?,
                factor: psd_factor(&spd_inverse(&v, "interim posterior curvature")?)?,
                seen,
                v_gamma,
            });
        }
    }
    let final_v_gamma = v_gamma;

    replicate_map(replicates, |r| {
        let mut rng = streams.rng(r, 0);
        let mut h_beta = &ext_mean + &ext_factor * normals(db, &mut rng);
        let mut h_gamma = [0.0; 2];
        let mut arm_counts = Vec::with_capacity(plans.len());
        for (s, plan) in plans.iter().enumerate() {
            let h = &plan.mean + &plan.factor * normals(db + 2, &mut rng);
            h_beta += h.rows(0, db);
            h_gamma[0] += h[db];
            h_gamma[1] += h[db + 1];
            arm_counts.push(vec![sizes[s][0] as f64, sizes[s][1] as f64]);
            let Some(look) = looks.get(s) else {
                break;
            };
            let center = look.chol.solve(&h_beta);
            let pred = Predictive {
                profiles: &profiles,
                observed_mean: [h_gamma[0] / look.v_gamma[0], h_gamma[1] / look.v_gamma[1]],
                observed_n: look.seen,
                future_n: [totals[0] - look.seen[0], totals[1] - look.seen[1]],
            };
            let mut hits = 0usize;
            let mut beta = DVector::zeros(db);
            for _ in 0..protocol.predictive_draws {
                beta.copy_from(&center);
                beta.gemv(1.0, &look.factor, &normals(db, &mut rng), 1.0);
                if pred.z_draw(beta.as_slice(), &mut rng) > critical {
                    hits += 1;
                }
            }
            let prob = hits as f64 / protocol.predictive_draws as f64;
            if protocol.zeta > 0.0 && prob <= protocol.zeta {
                return Ok(TrialOutcome {
                    stopped_stage: s + 1,
                    statistic: f64::NEG_INFINITY,
                    success: false,
                    arm_counts,
                    sample_size: protocol.boundaries()[s] as f64,
                });
            }
        }
        let g0 = h_gamma[0] / final_v_gamma[0];
        let g1 = h_gamma[1] / final_v_gamma[1];
        let z = z_statistic(g1, g0, totals[1] as f64, totals[0] as f64);
        Ok(TrialOutcome {
            stopped_stage: plans.len(),
            statistic: z,
            success: z > critical,
            arm_counts,
            sample_size: protocol.n as f64,
        })
    })
}

pub(crate) fn external_estimates(out: &[TrialOutcome], n: usize) -> Vec<OcEstimate> {
    let stopped = out.iter().filter(|o| o.sample_size < n as f64).count();
    let sizes: Vec<f64> = out.iter().map(|o| o.sample_size).collect();
    vec![
        OcEstimate::proportion("power", out.iter().filter(|o| o.success).count(), out.len()),
        OcEstimate::proportion("stop_prob", stopped, out.len()),
        OcEstimate::mean("ess", &sizes),
    ]
}

/// Q estimates of the rejection probability (type I error or power), the
/// early-stopping probability and the expected sample size.
pub fn q_external_data_run(
    protocol: &ExternalDataProtocol,
    scenario: &ExternalDataScenario,
    replicates: usize,
    streams: &Streams,
) -> Result<Vec<OcEstimate>> {
    timed(|| {
        let out = q_external_data_trials(protocol, scenario, replicates, streams)?;
        Ok(external_estimates(&out, protocol.n))
    })
}
