//! Standard errors and the Q-versus-MC discrepancy audit.
//!
//! Per scenario `b` the audit records `Δ̂_b = ψ̂_Q,b − ψ̂_MC,b` with variance
//! `s_b² = σ̂²_Q,b + σ̂²_MC,b` and fits `Δ̂_b ~ N(Δ, τ² + s_b²)` with a flat
//! prior on `Δ` and a half-normal prior on `τ`. `Δ` is integrated out
//! analytically and the posterior of `τ` is computed on a grid.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oc::OcEstimate;
use crate::special::normal_cdf;

/// `√(p(1−p)/R)`; zero for `p ∈ {0, 1}`.
pub fn proportion_se(p: f64, replicates: usize) -> Result<f64> {
    if replicates == 0 {
        return Err(invalid("standard error needs at least one replicate"));
    }
    Ok((p * (1.0 - p) / replicates as f64).max(0.0).sqrt())
}

/// Sample standard deviation over `√R`.
pub fn mean_se(values: &[f64]) -> Result<f64> {
    let r = values.len();
    if r == 0 {
        return Err(invalid("standard error needs at least one replicate"));
    }
    if r == 1 {
        return Ok(0.0);
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((ss / (r - 1) as f64 / r as f64).sqrt())
}

/// One scenario of an audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub scenario_id: String,
    pub psi_q: f64,
    pub se_q: f64,
    pub psi_mc: f64,
    pub se_mc: f64,
    pub delta: f64,
    pub runtime_q_s: f64,
    pub runtime_mc_s: f64,
}

impl DiscrepancyRecord {
    pub fn new(scenario_id: impl Into<String>, q: &OcEstimate, mc: &OcEstimate) -> Self {
        Self {
            scenario_id: scenario_id.into(),
            psi_q: q.estimate,
            se_q: q.se,
            psi_mc: mc.estimate,
            se_mc: mc.se,
            delta: q.estimate - mc.estimate,
            runtime_q_s: q.wall_clock_s,
            runtime_mc_s: mc.wall_clock_s,
        }
    }

    /// `s_b = √(σ̂²_Q + σ̂²_MC)`.
    pub fn combined_se(&self) -> f64 {
        self.se_q.hypot(self.se_mc)
    }
}

/// Posterior summaries of the random-effects model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomEffectsFit {
    /// Posterior mean of `Δ`.
    pub delta: f64,
    pub delta_interval: (f64, f64),
    /// Posterior median of `τ`.
    pub tau: f64,
    pub tau_interval: (f64, f64),
    pub records: usize,
    /// Set when all discrepancies are identical with zero standard errors.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEffectsPrior {
    /// Scale of the half-normal prior on `τ`.
    pub tau_scale: f64,
}

impl Default for RandomEffectsPrior {
    fn default() -> Self {
        Self { tau_scale: 0.05 }
    }
}

/// Log marginal likelihood of `τ` with `Δ` integrated out, plus the
/// conditional posterior mean and variance of `Δ`.
fn profile(tau: f64, d: &[f64], s2: &[f64]) -> (f64, f64, f64) {
    let t2 = tau * tau;
    let (mut sw, mut swd, mut slog) = (0.0, 0.0, 0.0);
    for (&di, &si) in d.iter().zip(s2) {
        let w = 1.0 / (t2 + si);
        sw += w;
        swd += w * di;
        slog += w.ln();
    }
    let mu = swd / sw;
    let q: f64 = d.iter().zip(s2).map(|(&di, &si)| (di - mu).powi(2) / (t2 + si)).sum();
    (0.5 * slog - 0.5 * sw.ln() - 0.5 * q, mu, 1.0 / sw)
}

const GRID: usize = 4001;

/// Fits the random-effects model by a 1-d grid over `τ`.
pub fn fit_random_effects(records: &[DiscrepancyRecord], prior: &RandomEffectsPrior) -> Result<RandomEffectsFit> {
    if records.len() < 3 {
        return Err(invalid(format!("random-effects fit needs at least 3 records, got {}", records.len())));
    }
    if !(prior.tau_scale > 0.0 && prior.tau_scale.is_finite()) {
        return Err(invalid("tau prior scale must be positive"));
    }
    let d: Vec<f64> = records.iter().map(|r| r.delta).collect();
    let s2: Vec<f64> = records.iter().map(|r| r.combined_se().powi(2)).collect();
    if d.iter().chain(&s2).any(|v| !v.is_finite()) {
        return Err(invalid("non-finite discrepancy or standard error"));
    }
    if s2.iter().all(|&v| v == 0.0) && d.iter().all(|&v| v == d[0]) {
        return Ok(RandomEffectsFit {
            delta: d[0],
            delta_interval: (d[0], d[0]),
            tau: 0.0,
            tau_interval: (0.0, 0.0),
            records: records.len(),
            degenerate: true,
        });
    }

    let log_post = |tau: f64| {
        let (ll, mu, var) = profile(tau, &d, &s2);
        (ll - 0.5 * (tau / prior.tau_scale).powi(2), mu, var)
    };
    // Coarse pass to find where the posterior mass lives.
    let spread = {
        let m = d.iter().sum::<f64>() / d.len() as f64;
        (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
    };
    let upper0 = (8.0 * prior.tau_scale).max(4.0 * spread);
    let floor = if s2.iter().any(|&v| v == 0.0) { upper0 * 1e-9 } else { 0.0 };
    let coarse: Vec<(f64, f64)> = (0..400)
        .map(|i| {
            let t = floor + (upper0 - floor) * i as f64 / 399.0;
            (t, log_post(t).0)
        })
        .collect();
    let peak = coarse.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let last = coarse.iter().rposition(|c| c.1 - peak > -40.0).unwrap_or(399);
    let upper = coarse[(last + 1).min(399)].0.max(floor + f64::EPSILON);

    let taus: Vec<f64> = (0..GRID).map(|i| floor + (upper - floor) * i as f64 / (GRID - 1) as f64).collect();
    let evals: Vec<(f64, f64, f64)> = taus.iter().map(|&t| log_post(t)).collect();
    let peak = evals.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = evals.iter().map(|e| (e.0 - peak).exp()).collect();
    // Trapezoid weights.
    let h = (upper - floor) / (GRID - 1) as f64;
    let mut w: Vec<f64> = dens.iter().map(|v| v * h).collect();
    w[0] *= 0.5;
    w[GRID - 1] *= 0.5;
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);

    let tau_q = |p: f64| {
        let mut acc = 0.0;
        for i in 0..GRID {
            let next = acc + w[i];
            if next >= p {
                let frac = if w[i] > 0.0 { (p - acc) / w[i] } else { 0.0 };
                let lo = if i == 0 { taus[0] } else { 0.5 * (taus[i - 1] + taus[i]) };
                let hi = if i + 1 == GRID { taus[i] } else { 0.5 * (taus[i] + taus[i + 1]) };
                return lo + frac * (hi - lo);
            }
            acc = next;
        }
        taus[GRID - 1]
    };
    let delta: f64 = evals.iter().zip(&w).map(|(e, wi)| wi * e.1).sum();
    // Δ | data is a normal mixture over the grid.
    let mix_cdf = |x: f64| -> f64 {
        evals.iter().zip(&w).map(|(e, wi)| wi * normal_cdf((x - e.1) / e.2.sqrt())).sum()
    };
    let sd_max = evals.iter().map(|e| e.2.sqrt()).fold(0.0, f64::max);
    let mu_lo = evals.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
    let mu_hi = evals.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
    let delta_q = |p: f64| {
        let (mut lo, mut hi) = (mu_lo - 10.0 * sd_max, mu_hi + 10.0 * sd_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mix_cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    Ok(RandomEffectsFit {
        delta,
        delta_interval: (delta_q(0.025), delta_q(0.975)),
        tau: tau_q(0.5),
        tau_interval: (tau_q(0.025), tau_q(0.975)),
        records: records.len(),
        degenerate: false,
    })
}

/// How the audit divides effort between the engines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BudgetSplit {
    /// Fixed replicate counts.
    Replicates { q: usize, mc: usize },
    /// `q` Q replicates; MC gets as many replicates as fit in the Q
    /// wall-clock time of the same scenario.
    MatchQTime { q: usize },
}

/// MC replicates affordable in `budget_s` seconds at `per_replicate_s`.
pub fn mc_replicates_for_budget(budget_s: f64, per_replicate_s: f64) -> Result<usize> {
    let r = if per_replicate_s > 0.0 {
        (budget_s / per_replicate_s).floor()
    } else {
        f64::INFINITY
    };
    if !(r >= 1.0) {
        return Err(Error::BudgetInsufficient(format!(
            "{budget_s:.3e} s does not cover one MC replicate ({per_replicate_s:.3e} s)"
        )));
    }
    Ok(r.min(1e9) as usize)
}

/// Audit output: per-scenario records and the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub oc: String,
    pub records: Vec<DiscrepancyRecord>,
    pub fit: RandomEffectsFit,
    pub mean_se_q: f64,
    pub mean_se_mc: f64,
}

/// Runs both engines per scenario and fits the random-effects model.
///
/// `run(scenario, engine_is_q, replicates)` returns the named OC estimate.
/// For [`BudgetSplit::MatchQTime`] a one-replicate MC pilot sets the MC
/// replicate count.
pub fn audit_design<F>(
    scenario_ids: &[String],
    oc: &str,
    split: BudgetSplit,
    prior: &RandomEffectsPrior,
    mut run: F,
) -> Result<AuditReport>
where
    F: FnMut(usize, bool, usize) -> Result<Vec<OcEstimate>>,
{
    if let BudgetSplit::Replicates { mc: 0, .. } = split {
        return Err(Error::BudgetInsufficient("MC replicate count is zero".into()));
    }
    let pick = |v: Vec<OcEstimate>| -> Result<OcEstimate> {
        v.into_iter()
            .find(|e| e.name == oc)
            .ok_or_else(|| invalid(format!("design does not report OC `{oc}`")))
    };
    let mut records = Vec::with_capacity(scenario_ids.len());
    for (b, id) in scenario_ids.iter().enumerate() {
        let (rq, rmc) = match split {
            BudgetSplit::Replicates { q, mc } => (q, Some(mc)),
            BudgetSplit::MatchQTime { q } => (q, None),
        };
        let q = pick(run(b, true, rq)?)?;
        let rmc = match rmc {
            Some(r) => r,
            None => {
                let pilot = pick(run(b, false, 1)?)?;
                mc_replicates_for_budget(q.wall_clock_s, pilot.wall_clock_s)?
            }
        };
        let mc = pick(run(b, false, rmc)?)?;
        records.push(DiscrepancyRecord::new(id.clone(), &q, &mc));
    }
    let fit = fit_random_effects(&records, prior)?;
    let n = records.len() as f64;
    Ok(AuditReport {
        oc: oc.to_string(),
        mean_se_q: records.iter().map(|r| r.se_q).sum::<f64>() / n,
        mean_se_mc: records.iter().map(|r| r.se_mc).sum::<f64>() / n,
        records,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(delta: f64, se: f64) -> DiscrepancyRecord {
        DiscrepancyRecord {
            scenario_id: String::new(),
            psi_q: delta,
            se_q: 0.0,
            psi_mc: 0.0,
            se_mc: se,
            delta,
            runtime_q_s: 0.0,
            runtime_mc_s: 0.0,
        }
    }

    #[test]
    fn proportion_se_values() {
        assert!((proportion_se(0.5, 100).unwrap() - 0.05).abs() < 1e-15);
        assert_eq!(proportion_se(1.0, 10).unwrap(), 0.0);
        assert!(proportion_se(0.5, 0).is_err());
    }

    #[test]
    fn identical_discrepancies_shrink_tau() {
        let recs: Vec<_> = (0..20).map(|_| rec(0.01, 0.04)).collect();
        let fit = fit_random_effects(&recs, &RandomEffectsPrior::default()).unwrap();
        assert!(fit.tau <= 0.25 * 0.04, "tau {}", fit.tau);
        assert!((fit.delta - 0.01).abs() < 1e-3);
    }

    #[test]
    fn degenerate_and_too_few() {
        let recs: Vec<_> = (0..4).map(|_| rec(0.02, 0.0)).collect();
        let fit = fit_random_effects(&recs, &RandomEffectsPrior::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.tau, 0.0);
        assert!(fit_random_effects(&recs[..2], &RandomEffectsPrior::default()).is_err());
    }

    #[test]
    fn zero_budget_is_an_error() {
        assert!(matches!(mc_replicates_for_budget(0.001, 0.01), Err(Error::BudgetInsufficient(_))));
        assert_eq!(mc_replicates_for_budget(1.0, 0.3).unwrap(), 3);
    }
}
