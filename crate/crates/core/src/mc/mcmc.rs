//! Adaptive random-walk Metropolis for Bayesian logistic regression.
//!
//! The chain starts at the posterior mode with the Laplace covariance as
//! proposal shape. During burn-in the proposal covariance tracks the chain's
//! empirical covariance and a Robbins-Monro step tunes the global scale
//! toward the target acceptance rate; both are frozen afterwards.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{logistic, AnalysisModel, ModelKind};
use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky_jittered, symmetrize};
use crate::qlik::GaussianPrior;

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub target_acceptance: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            iterations: 4000,
            burn_in: 1000,
            thin: 3,
            target_acceptance: 0.234,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(invalid("MCMC burn-in must be shorter than the chain"));
        }
        if self.thin == 0 {
            return Err(invalid("MCMC thinning must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(invalid("MCMC target acceptance must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn kept(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Retained posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcDraws {
    pub dim: usize,
    /// Row-major `len × dim`.
    pub values: Vec<f64>,
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
}

impl McmcDraws {
    pub fn len(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for i in 0..self.len() {
            m += DVector::from_column_slice(self.draw(i));
        }
        m / self.len() as f64
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut c = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.len() {
            let d = DVector::from_column_slice(self.draw(i)) - &m;
            c.ger(1.0, &d, &d, 1.0);
        }
        c / (self.len() as f64 - 1.0).max(1.0)
    }
}

/// Log posterior of a logistic model over patient rows.
struct Target<'a> {
    dim: usize,
    rows: Vec<f64>,
    y: &'a [u8],
    prior: &'a GaussianPrior,
}

impl Target<'_> {
    fn log_post(&self, theta: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (row, &y) in self.rows.chunks_exact(self.dim).zip(self.y) {
            let eta: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
            // y η − log(1 + e^η)
            lp += if y == 1 { -softplus(-eta) } else { -softplus(eta) };
        }
        lp - 0.5 * self.prior_quad(theta)
    }

    fn prior_quad(&self, theta: &[f64]) -> f64 {
        if self.prior.is_flat() {
            return 0.0;
        }
        let d = DVector::from_column_slice(theta) - &self.prior.mean;
        d.dot(&(&self.prior.precision * &d))
    }

    /// Gradient and negative Hessian of the log posterior.
    fn derivatives(&self, theta: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mut g = DVector::zeros(d);
        let mut h = self.prior.precision.clone();
        if !self.prior.is_flat() {
            g -= &self.prior.precision * (theta - &self.prior.mean);
        }
        for (row, &y) in self.rows.chunks_exact(d).zip(self.y) {
            let r = DVector::from_column_slice(row);
            let mu = logistic(r.dot(theta));
            g.axpy(f64::from(y) - mu, &r, 1.0);
            h.ger(mu * (1.0 - mu), &r, &r, 1.0);
        }
        (g, h)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Posterior mode by damped Newton, and the Laplace covariance there.
fn mode(target: &Target) -> (DVector<f64>, DMatrix<f64>) {
    let d = target.dim;
    let mut theta = if target.prior.is_flat() {
        DVector::zeros(d)
    } else {
        target.prior.mean.clone()
    };
    let mut lp = target.log_post(theta.as_slice());
    for _ in 0..50 {
        let (g, h) = target.derivatives(&theta);
        if g.norm() < 1e-8 {
            break;
        }
        let Ok((chol, _)) = cholesky_jittered(&h) else {
            break;
        };
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = &theta + &step * t;
            let c = target.log_post(cand.as_slice());
            if c.is_finite() && c >= lp {
                theta = cand;
                lp = c;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let (_, h) = target.derivatives(&theta);
    let cov = cholesky_jittered(&h)
        .ok()
        .map(|(c, _)| symmetrize(&c.inverse()))
        .filter(|c| c.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| DMatrix::identity(d, d));
    (theta, cov)
}

/// Samples the posterior of a logistic `model` given `data` and `prior`.
pub fn logistic_mcmc<R: Rng + ?Sized>(
    data: &Dataset,
    model: &AnalysisModel,
    prior: &GaussianPrior,
    cfg: &McmcConfig,
    rng: &mut R,
) -> Result<McmcDraws> {
    cfg.validate()?;
    if model.kind != ModelKind::Logistic {
        return Err(invalid("logistic_mcmc needs a logistic analysis model"));
    }
    let d = model.dim();
    if prior.dim() != d {
        return Err(invalid("prior and model dimensions differ"));
    }
    let mut rows = vec![0.0; data.len() * d];
    for (i, out) in rows.chunks_exact_mut(d).enumerate() {
        let x = model.project(data.x(i));
        model.design.write_row(&x, data.arm[i], out);
    }
    let target = Target {
        dim: d,
        rows,
        y: &data.y,
        prior,
    };

    let (mut theta, laplace) = mode(&target);
    let mut lp = target.log_post(theta.as_slice());
    if !lp.is_finite() {
        return Err(Error::NonFiniteLogPosterior);
    }
    let mut factor = cholesky_jittered(&laplace)?.0.l();
    let mut log_scale = (2.38 / (d as f64).sqrt()).ln();

    // Running moments of the burn-in chain.
    let mut run_mean = theta.clone();
    let mut run_cov = DMatrix::zeros(d, d);
    let mut count = 1.0;

    let mut values = Vec::with_capacity(cfg.kept() * d);
    let mut accepted_after = 0usize;
    let mut z = DVector::zeros(d);
    let mut cand = DVector::zeros(d);
    for t in 0..cfg.iterations {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        cand.copy_from(&theta);
        cand.gemv(log_scale.exp(), &factor, &z, 1.0);
        let c = target.log_post(cand.as_slice());
        let log_u: f64 = rng.random::<f64>().ln();
        let accept = c.is_finite() && log_u < c - lp;
        if accept {
            theta.copy_from(&cand);
            lp = c;
        }
        if t < cfg.burn_in {
            let a = if accept { 1.0 } else { 0.0 };
            log_scale += (a - cfg.target_acceptance) / (t as f64 + 1.0).powf(0.6);
            count += 1.0;
            let delta = &theta - &run_mean;
            run_mean.axpy(1.0 / count, &delta, 1.0);
            let delta2 = &theta - &run_mean;
            run_cov.ger(1.0, &delta, &delta2, 1.0);
            if (t + 1) % 100 == 0 && count > 2.0 * d as f64 + 10.0 {
                let emp = symmetrize(&(&run_cov / (count - 1.0)));
                let scale = emp.diagonal().amax();
                if scale > 0.0 {
                    let reg = emp + DMatrix::identity(d, d) * (1e-6 * scale);
                    if let Ok((chol, _)) = cholesky_jittered(&reg) {
                        factor = chol.l();
                    }
                }
            }
        } else {
            if accept {
                accepted_after += 1;
            }
            if (t - cfg.burn_in) % cfg.thin == 0 {
                values.extend_from_slice(theta.as_slice());
            }
        }
    }
    Ok(McmcDraws {
        dim: d,
        values,
        acceptance: accepted_after as f64 / (cfg.iterations - cfg.burn_in) as f64,
    })
}
