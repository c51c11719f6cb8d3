//! Gaussian Q-likelihoods and their conjugate posteriors.
//!
//! A Q-likelihood `L̃(θ; C, V) ∝ exp(−(θ − C)ᵀV(θ − C)/2)` is stored in
//! information form, curvature `V` plus potential `h = V C`, so that
//! rank-deficient stage likelihoods (tiny stages, unidentified
//! coefficients) can still be multiplied together and with a prior.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::asymptotics::AsymptoticTriple;
use crate::error::{invalid, Error, Result};
use crate::linalg::{asymmetry, psd_factor, spd_cholesky, spd_inverse};
use crate::special::normal_cdf;

/// Allowed asymmetry of a curvature matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;

fn check_curvature(v: &DMatrix<f64>) -> Result<()> {
    if !v.is_square() {
        return Err(invalid("curvature must be square"));
    }
    let scale = v.amax().max(1.0);
    if asymmetry(v) > SYMMETRY_TOL * scale {
        return Err(invalid("curvature is not symmetric"));
    }
    psd_factor(v).map(|_| ())
}

/// Gaussian surrogate likelihood.
#[derive(Debug, Clone)]
pub struct QLikelihood {
    curvature: DMatrix<f64>,
    potential: DVector<f64>,
    center: Option<DVector<f64>>,
}

impl QLikelihood {
    /// Q-likelihood with center `C` and curvature `V`.
    pub fn new(center: DVector<f64>, curvature: DMatrix<f64>) -> Result<Self> {
        if center.len() != curvature.nrows() {
            return Err(invalid("center and curvature dimensions differ"));
        }
        check_curvature(&curvature)?;
        Ok(Self {
            potential: &curvature * &center,
            curvature,
            center: Some(center),
        })
    }

    /// Q-likelihood from potential `h = V C` and curvature `V`; `V` may be
    /// singular.
    pub fn from_information(potential: DVector<f64>, curvature: DMatrix<f64>) -> Result<Self> {
        if potential.len() != curvature.nrows() {
            return Err(invalid("potential and curvature dimensions differ"));
        }
        check_curvature(&curvature)?;
        Ok(Self::from_information_unchecked(potential, curvature))
    }

    pub(crate) fn from_information_unchecked(
        potential: DVector<f64>,
        curvature: DMatrix<f64>,
    ) -> Self {
        Self {
            curvature,
            potential,
            center: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.potential.len()
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.curvature
    }

    pub fn potential(&self) -> &DVector<f64> {
        &self.potential
    }

    /// Center `C = V⁻¹h`; errors when `V` is singular.
    pub fn center(&self) -> Result<DVector<f64>> {
        match &self.center {
            Some(c) => Ok(c.clone()),
            None => {
                let ch = spd_cholesky(&self.curvature, "Q-likelihood curvature is singular")?;
                Ok(ch.solve(&self.potential))
            }
        }
    }

    /// Log-likelihood up to an additive constant: `hᵀθ − θᵀVθ/2`.
    pub fn log_kernel(&self, theta: &DVector<f64>) -> f64 {
        self.potential.dot(theta) - 0.5 * theta.dot(&(&self.curvature * theta))
    }

    /// Product of Q-likelihoods in information form (no inversion).
    pub fn multiply(liks: &[QLikelihood]) -> Result<QLikelihood> {
        let first = liks
            .first()
            .ok_or_else(|| invalid("cannot multiply an empty list of Q-likelihoods"))?;
        let d = first.dim();
        let mut v = DMatrix::zeros(d, d);
        let mut h = DVector::zeros(d);
        for l in liks {
            if l.dim() != d {
                return Err(invalid("Q-likelihoods have different dimensions"));
            }
            v += &l.curvature;
            h += &l.potential;
        }
        Ok(Self::from_information_unchecked(h, v))
    }

    /// Cumulative Q-likelihood: `V = Σ V_t`, `C = V⁻¹ Σ V_t C_t`.
    pub fn combine(liks: &[QLikelihood]) -> Result<QLikelihood> {
        if let [only] = liks {
            return Ok(only.clone());
        }
        let mut out = Self::multiply(liks)?;
        let ch = spd_cholesky(&out.curvature, "combined curvature is singular")
            .map_err(|e| match e {
                Error::Singular(m) => Error::Singular(m),
                other => other,
            })?;
        out.center = Some(ch.solve(&out.potential));
        Ok(out)
    }
}

/// Gaussian prior in information form; zero precision directions are flat.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl GaussianPrior {
    /// Improper uniform prior.
    pub fn flat(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            precision: DMatrix::zeros(dim, dim),
        }
    }

    /// `N(mean, covariance)` with SPD covariance.
    pub fn normal(mean: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        if mean.len() != covariance.nrows() {
            return Err(invalid("prior mean and covariance dimensions differ"));
        }
        let precision = spd_inverse(covariance, "prior covariance is singular")?;
        Ok(Self { mean, precision })
    }

    /// Independent normal coordinates; an infinite variance means flat.
    pub fn diagonal(mean: &[f64], variances: &[f64]) -> Result<Self> {
        if mean.len() != variances.len() {
            return Err(invalid("prior mean and variance lengths differ"));
        }
        let mut precision = DMatrix::zeros(mean.len(), mean.len());
        for (i, &v) in variances.iter().enumerate() {
            if !(v > 0.0) {
                return Err(invalid(format!("prior variance {v} must be positive")));
            }
            precision[(i, i)] = if v.is_infinite() { 0.0 } else { 1.0 / v };
        }
        Ok(Self {
            mean: DVector::from_column_slice(mean),
            precision,
        })
    }

    /// Moment-matched stand-in for independent Beta(α, β) priors on
    /// probabilities; Beta(1, 1) maps to a flat coordinate.
    pub fn from_beta_moments(params: &[(f64, f64)]) -> Result<Self> {
        let mut mean = Vec::with_capacity(params.len());
        let mut var = Vec::with_capacity(params.len());
        for &(a, b) in params {
            if !(a > 0.0 && b > 0.0) {
                return Err(invalid(format!("Beta({a}, {b}) prior needs positive parameters")));
            }
            if a == 1.0 && b == 1.0 {
                mean.push(0.0);
                var.push(f64::INFINITY);
            } else {
                let s = a + b;
                mean.push(a / s);
                var.push(a * b / (s * s * (s + 1.0)));
            }
        }
        Self::diagonal(&mean, &var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_flat(&self) -> bool {
        self.precision.iter().all(|&v| v == 0.0)
    }

    /// The prior as a (possibly improper) Q-likelihood factor.
    pub fn as_factor(&self) -> QLikelihood {
        QLikelihood::from_information_unchecked(&self.precision * &self.mean, self.precision.clone())
    }
}

/// Gaussian Q-posterior `N(C⁽ᴾ⁾, (V⁽ᴾ⁾)⁻¹)`.
#[derive(Debug, Clone)]
pub struct QPosterior {
    center: DVector<f64>,
    curvature: DMatrix<f64>,
    chol: OnceLock<Cholesky<f64, Dyn>>,
}

impl QPosterior {
    /// Posterior from a center and SPD curvature.
    pub fn new(center: DVector<f64>, curvature: DMatrix<f64>) -> Result<Self> {
        if center.len() != curvature.nrows() {
            return Err(invalid("center and curvature dimensions differ"));
        }
        let ch = spd_cholesky(&curvature, "posterior curvature is singular")?;
        let chol = OnceLock::new();
        let _ = chol.set(ch);
        Ok(Self {
            center,
            curvature,
            chol,
        })
    }

    /// Posterior from information form `(h, V)` with SPD `V`.
    pub fn from_information(potential: &DVector<f64>, curvature: DMatrix<f64>) -> Result<Self> {
        let ch = spd_cholesky(&curvature, "posterior curvature is singular")?;
        let center = ch.solve(potential);
        let chol = OnceLock::new();
        let _ = chol.set(ch);
        Ok(Self {
            center,
            curvature,
            chol,
        })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn curvature(&self) -> &DMatrix<f64> {
        &self.curvature
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    fn cholesky(&self) -> &Cholesky<f64, Dyn> {
        self.chol.get_or_init(|| {
            Cholesky::new(self.curvature.clone()).expect("curvature was checked at construction")
        })
    }

    /// Posterior covariance `(V⁽ᴾ⁾)⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        crate::linalg::symmetrize(&self.cholesky().inverse())
    }

    /// Mean and variance of `aᵀθ + b`.
    pub fn linear_functional(&self, a: &DVector<f64>, b: f64) -> Result<(f64, f64)> {
        if a.len() != self.dim() {
            return Err(invalid("functional and posterior dimensions differ"));
        }
        let x = self.cholesky().solve(a);
        Ok((a.dot(&self.center) + b, a.dot(&x).max(0.0)))
    }

    /// `P(aᵀθ + b > threshold)`.
    pub fn tail_probability(&self, a: &DVector<f64>, b: f64, threshold: f64) -> Result<f64> {
        let (mean, var) = self.linear_functional(a, b)?;
        Ok(gaussian_tail(mean, var, threshold))
    }

    /// Draw from the posterior: `C + L⁻ᵀ z` with `V = L Lᵀ`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let l = self.cholesky().l_dirty();
        let x = l
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.center + x
    }
}

/// `P(X > threshold)` for `X ~ N(mean, var)`; a point mass when `var = 0`.
pub fn gaussian_tail(mean: f64, var: f64, threshold: f64) -> f64 {
    if var <= 0.0 {
        return if mean > threshold { 1.0 } else { 0.0 };
    }
    normal_cdf((mean - threshold) / var.sqrt())
}

/// Conjugate update of a Q-likelihood by a Gaussian prior.
pub fn posterior_update(lik: &QLikelihood, prior: &GaussianPrior) -> Result<QPosterior> {
    if lik.dim() != prior.dim() {
        return Err(invalid("likelihood and prior dimensions differ"));
    }
    if prior.is_flat() {
        return match &lik.center {
            Some(c) => QPosterior::new(c.clone(), lik.curvature.clone()),
            None => QPosterior::from_information(&lik.potential, lik.curvature.clone()),
        };
    }
    let v = &lik.curvature + &prior.precision;
    let h = &lik.potential + &prior.precision * &prior.mean;
    QPosterior::from_information(&h, v)
}

/// Posterior of a linear functional `aᵀθ` as an affine map of the
/// accumulated potential.
///
/// With total curvature `V` and a Gaussian prior `(μ₀, P)`, the posterior of
/// `aᵀθ` given potential `h` is normal with mean `wᵀ(h + Pμ₀)` and variance
/// `aᵀw`, where `w = (V + P)⁻¹ a`. Neither `w` nor the variance depends on
/// `h`, so repeated evaluation costs one dot product.
#[derive(Debug, Clone)]
pub struct LinearReadout {
    weights: DVector<f64>,
    offset: f64,
    variance: f64,
}

impl LinearReadout {
    pub fn new(curvature: &DMatrix<f64>, prior: &GaussianPrior, a: &DVector<f64>) -> Result<Self> {
        if curvature.nrows() != prior.dim() || a.len() != prior.dim() {
            return Err(invalid("readout dimensions differ"));
        }
        let v = curvature + &prior.precision;
        let chol = spd_cholesky(&v, "posterior curvature")?;
        let weights = chol.solve(a);
        let offset = if prior.is_flat() {
            0.0
        } else {
            weights.dot(&(&prior.precision * &prior.mean))
        };
        let variance = a.dot(&weights).max(0.0);
        Ok(Self {
            weights,
            offset,
            variance,
        })
    }

    pub fn mean(&self, potential: &DVector<f64>) -> f64 {
        self.weights.dot(potential) + self.offset
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    /// Posterior `P(aᵀθ > threshold)`.
    pub fn tail(&self, potential: &DVector<f64>, threshold: f64) -> f64 {
        gaussian_tail(self.mean(potential), self.variance, threshold)
    }
}

/// Sampling law of a Q-likelihood center, `N(θ*, n⁻¹𝒱*)`.
#[derive(Debug, Clone)]
pub struct CenterLaw {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl CenterLaw {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if mean.len() != covariance.nrows() {
            return Err(invalid("center law mean and covariance dimensions differ"));
        }
        let factor = psd_factor(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    /// `N(θ*, 𝒱*/n)`.
    pub fn from_triple(triple: &AsymptoticTriple, n: f64) -> Result<Self> {
        Self::new(triple.theta_star.clone(), &triple.v_star / n)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// One center `C = θ* + L z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean + &self.factor * z
    }
}

/// One center draw from `law`.
pub fn sample_center<R: Rng + ?Sized>(law: &CenterLaw, rng: &mut R) -> DVector<f64> {
    law.sample(rng)
}

/// Law of a stage Q-likelihood in information form.
///
/// The potential is `h = V θ* + F z` with `F Fᵀ = n ℐ*` and `V = n 𝒥*`.
/// When `V` is invertible this is the same law as `C ~ N(θ*, 𝒱*/n)`, and it
/// stays well defined for rank-deficient stages.
#[derive(Debug, Clone)]
pub struct StageLaw {
    pub curvature: DMatrix<f64>,
    mean_potential: DVector<f64>,
    factor: DMatrix<f64>,
}

impl StageLaw {
    pub fn new(theta_star: &DVector<f64>, j: &DMatrix<f64>, i: &DMatrix<f64>, n: f64) -> Result<Self> {
        let curvature = j * n;
        let factor = psd_factor(&(i * n))?;
        Ok(Self {
            mean_potential: &curvature * theta_star,
            curvature,
            factor,
        })
    }

    pub fn from_triple(triple: &AsymptoticTriple, n: f64) -> Result<Self> {
        Self::new(&triple.theta_star, &triple.j_star, &triple.i_star, n)
    }

    pub fn dim(&self) -> usize {
        self.mean_potential.len()
    }

    /// Draws the potential `h`.
    pub fn sample_potential<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.dim();
        let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.mean_potential + &self.factor * z
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> QLikelihood {
        QLikelihood::from_information_unchecked(self.sample_potential(rng), self.curvature.clone())
    }
}
