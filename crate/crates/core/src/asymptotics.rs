//! Asymptotic quantities of binary-outcome analysis models under a
//! (possibly misspecified) discrete-covariate scenario.
//!
//! Expectations are exact finite sums over cells `(profile x⁺, arm k)` with
//! weight `p_x · ρ_{k,x}`. For a cell with true response probability `q` and
//! analysis design row `r`, both supported models have a linear predictor
//! `η = rᵀθ`:
//!
//! - logistic: `μ = F(η)`, score `(y − μ) r`, curvature `μ(1 − μ) r rᵀ`;
//! - Bernoulli arms (`r = e_k`): `μ = η`, score `(y − μ) r / (μ(1 − μ))`,
//!   curvature `(y/μ² + (1 − y)/(1 − μ)²) r rᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{spd_cholesky, spd_inverse, symmetrize};

/// Newton tolerance on the population score norm.
pub const SCORE_TOL: f64 = 1e-10;
/// Newton iteration cap.
pub const MAX_NEWTON_ITER: usize = 200;

/// Inverse logit.
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// How a covariate profile and an arm become a design row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignMap {
    /// `e_k`: one coefficient per arm, no covariates.
    ArmIndicators { arms: usize },
    /// `[1, x_1..x_p, 1{k=1}, .., 1{k=K-1}]`.
    MainEffects { covariates: usize, arms: usize },
    /// `[1, x_1..x_p, 1{k=j} (j=1..K-1), x_1·1{k=j} (j=1..K-1), .., x_p·1{k=j}]`.
    ArmInteractions { covariates: usize, arms: usize },
}

impl DesignMap {
    pub fn dim(&self) -> usize {
        match *self {
            DesignMap::ArmIndicators { arms } => arms,
            DesignMap::MainEffects { covariates, arms } => 1 + covariates + arms - 1,
            DesignMap::ArmInteractions { covariates, arms } => (1 + covariates) * arms,
        }
    }

    pub fn arms(&self) -> usize {
        match *self {
            DesignMap::ArmIndicators { arms }
            | DesignMap::MainEffects { arms, .. }
            | DesignMap::ArmInteractions { arms, .. } => arms,
        }
    }

    pub fn covariates(&self) -> usize {
        match *self {
            DesignMap::ArmIndicators { .. } => 0,
            DesignMap::MainEffects { covariates, .. }
            | DesignMap::ArmInteractions { covariates, .. } => covariates,
        }
    }

    /// Writes the design row for covariates `x` and arm `k` into `out`.
    pub fn write_row(&self, x: &[f64], k: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        debug_assert_eq!(x.len(), self.covariates());
        out.iter_mut().for_each(|v| *v = 0.0);
        match *self {
            DesignMap::ArmIndicators { .. } => out[k] = 1.0,
            DesignMap::MainEffects { covariates, .. } => {
                out[0] = 1.0;
                out[1..=covariates].copy_from_slice(x);
                if k > 0 {
                    out[covariates + k] = 1.0;
                }
            }
            DesignMap::ArmInteractions { covariates, arms } => {
                out[0] = 1.0;
                out[1..=covariates].copy_from_slice(x);
                if k > 0 {
                    let base = 1 + covariates;
                    out[base + k - 1] = 1.0;
                    for (c, &xc) in x.iter().enumerate() {
                        out[base + (arms - 1) * (c + 1) + k - 1] = xc;
                    }
                }
            }
        }
    }

    pub fn row(&self, x: &[f64], k: usize) -> DVector<f64> {
        let mut out = vec![0.0; self.dim()];
        self.write_row(x, k, &mut out);
        DVector::from_vec(out)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.arms() == 0 {
            return Err(invalid("design map needs at least one arm"));
        }
        Ok(())
    }
}

/// A covariate profile and its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    pub covariates: Vec<f64>,
    pub prob: f64,
}

/// Outcome-generating law `q_ω(1 | x⁺, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutcomeLaw {
    /// Response probability per arm, independent of covariates.
    ArmRates { rates: Vec<f64> },
    /// `q = F(coefficientsᵀ row(x⁺, k))`.
    Logistic {
        coefficients: Vec<f64>,
        design: DesignMap,
    },
}

/// Simulation truth ω: outcome law plus the profile distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub profiles: Vec<Profile>,
    pub outcome: OutcomeLaw,
}

impl Scenario {
    /// Covariate-free scenario with per-arm response rates.
    pub fn arm_rates(rates: &[f64]) -> Self {
        Self {
            profiles: vec![Profile {
                covariates: Vec::new(),
                prob: 1.0,
            }],
            outcome: OutcomeLaw::ArmRates {
                rates: rates.to_vec(),
            },
        }
    }

    pub fn arms(&self) -> usize {
        match &self.outcome {
            OutcomeLaw::ArmRates { rates } => rates.len(),
            OutcomeLaw::Logistic { design, .. } => design.arms(),
        }
    }

    pub fn covariate_len(&self) -> usize {
        self.profiles.first().map_or(0, |p| p.covariates.len())
    }

    /// True response probability for profile `x` and arm `k`.
    pub fn response_prob(&self, x: usize, k: usize) -> f64 {
        match &self.outcome {
            OutcomeLaw::ArmRates { rates } => rates[k],
            OutcomeLaw::Logistic {
                coefficients,
                design,
            } => {
                let mut row = vec![0.0; design.dim()];
                design.write_row(&self.profiles[x].covariates, k, &mut row);
                logistic(row.iter().zip(coefficients).map(|(a, b)| a * b).sum())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.is_empty() {
            return Err(invalid("scenario has no covariate profiles"));
        }
        let len = self.covariate_len();
        let mut total = 0.0;
        for (i, p) in self.profiles.iter().enumerate() {
            if !(p.prob >= 0.0) || !p.prob.is_finite() {
                return Err(invalid(format!("profile {i} has invalid probability {}", p.prob)));
            }
            if p.covariates.len() != len {
                return Err(invalid(format!("profile {i} has {} covariates, expected {len}", p.covariates.len())));
            }
            if p.covariates.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("profile {i} has non-finite covariates")));
            }
            total += p.prob;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("profile probabilities sum to {total}, not 1")));
        }
        match &self.outcome {
            OutcomeLaw::ArmRates { rates } => {
                if rates.is_empty() {
                    return Err(invalid("arm_rates needs at least one arm"));
                }
                if let Some(r) = rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
                    return Err(invalid(format!("response rate {r} outside [0, 1]")));
                }
            }
            OutcomeLaw::Logistic {
                coefficients,
                design,
            } => {
                design.validate()?;
                if design.covariates() != len {
                    return Err(invalid(format!(
                        "outcome design expects {} covariates, profiles have {len}",
                        design.covariates()
                    )));
                }
                if coefficients.len() != design.dim() {
                    return Err(invalid(format!(
                        "outcome has {} coefficients, design needs {}",
                        coefficients.len(),
                        design.dim()
                    )));
                }
                if coefficients.iter().any(|c| !c.is_finite()) {
                    return Err(invalid("non-finite outcome coefficient"));
                }
            }
        }
        Ok(())
    }

    /// Same scenario restricted to its profile probabilities replaced by
    /// `probs` (used for external populations with a shifted mix).
    pub fn with_profile_probs(&self, probs: &[f64]) -> Self {
        let mut s = self.clone();
        for (p, &w) in s.profiles.iter_mut().zip(probs) {
            p.prob = w;
        }
        s
    }
}

/// Family of the analysis model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BernoulliArms,
    Logistic,
}

/// The protocol's analysis model `p_θ(y | x, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisModel {
    pub kind: ModelKind,
    pub design: DesignMap,
    /// Indices of the scenario covariates visible to the analysis.
    pub kept_covariates: Vec<usize>,
}

impl AnalysisModel {
    pub fn bernoulli_arms(arms: usize) -> Self {
        Self {
            kind: ModelKind::BernoulliArms,
            design: DesignMap::ArmIndicators { arms },
            kept_covariates: Vec::new(),
        }
    }

    pub fn logistic(design: DesignMap, kept_covariates: Vec<usize>) -> Self {
        Self {
            kind: ModelKind::Logistic,
            design,
            kept_covariates,
        }
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    /// Analysis covariates `x` obtained from `x⁺`.
    pub fn project(&self, x_plus: &[f64]) -> Vec<f64> {
        self.kept_covariates.iter().map(|&i| x_plus[i]).collect()
    }

    pub fn row(&self, x_plus: &[f64], k: usize) -> DVector<f64> {
        self.design.row(&self.project(x_plus), k)
    }

    fn validate_against(&self, scenario: &Scenario) -> Result<()> {
        self.design.validate()?;
        if self.kind == ModelKind::BernoulliArms
            && !matches!(self.design, DesignMap::ArmIndicators { .. })
        {
            return Err(invalid("Bernoulli-arm models use the arm_indicators design"));
        }
        if self.design.covariates() != self.kept_covariates.len() {
            return Err(invalid("analysis design and kept covariates disagree"));
        }
        let len = scenario.covariate_len();
        if let Some(&i) = self.kept_covariates.iter().find(|&&i| i >= len) {
            return Err(invalid(format!("analysis covariate {i} not present in the scenario")));
        }
        if self.design.arms() != scenario.arms() {
            return Err(invalid(format!(
                "analysis model has {} arms, scenario has {}",
                self.design.arms(),
                scenario.arms()
            )));
        }
        Ok(())
    }
}

/// Arm assignment probabilities per scenario profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    /// `arm_probs[x][k] = ρ_{k,x}`.
    pub arm_probs: Vec<Vec<f64>>,
}

impl Allocation {
    /// Same arm probabilities for every profile.
    pub fn fixed(arm_probs: &[f64], profiles: usize) -> Self {
        Self {
            arm_probs: vec![arm_probs.to_vec(); profiles],
        }
    }

    pub fn uniform(arms: usize, profiles: usize) -> Self {
        Self::fixed(&vec![1.0 / arms as f64; arms], profiles)
    }

    /// Arm probabilities proportional to fixed arm sizes.
    pub fn from_arm_sizes(sizes: &[f64], profiles: usize) -> Self {
        let total: f64 = sizes.iter().sum();
        let probs: Vec<f64> = sizes.iter().map(|s| s / total).collect();
        Self::fixed(&probs, profiles)
    }

    fn validate_against(&self, scenario: &Scenario) -> Result<()> {
        if self.arm_probs.len() != scenario.profiles.len() {
            return Err(invalid("allocation and scenario have different profile counts"));
        }
        for (x, probs) in self.arm_probs.iter().enumerate() {
            if probs.len() != scenario.arms() {
                return Err(invalid(format!("allocation for profile {x} has wrong arm count")));
            }
            if probs.iter().any(|p| !(*p >= 0.0)) {
                return Err(invalid(format!("negative allocation probability in profile {x}")));
            }
            let s: f64 = probs.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(invalid(format!("allocation for profile {x} sums to {s}")));
            }
        }
        Ok(())
    }
}

/// One `(profile, arm)` cell with positive weight.
#[derive(Debug, Clone)]
pub struct Cell {
    pub profile: usize,
    pub arm: usize,
    /// `p_x ρ_{k,x}`.
    pub weight: f64,
    /// True response probability.
    pub q: f64,
    /// Analysis design row.
    pub row: DVector<f64>,
}

/// The cells of a (scenario, model, allocation) triple.
#[derive(Debug, Clone)]
pub struct CellTable {
    pub kind: ModelKind,
    pub dim: usize,
    pub cells: Vec<Cell>,
}

impl CellTable {
    pub fn new(scenario: &Scenario, model: &AnalysisModel, alloc: &Allocation) -> Result<Self> {
        scenario.validate()?;
        model.validate_against(scenario)?;
        alloc.validate_against(scenario)?;
        let mut cells = Vec::new();
        for (x, profile) in scenario.profiles.iter().enumerate() {
            for k in 0..scenario.arms() {
                let weight = profile.prob * alloc.arm_probs[x][k];
                if weight <= 0.0 {
                    continue;
                }
                cells.push(Cell {
                    profile: x,
                    arm: k,
                    weight,
                    q: scenario.response_prob(x, k),
                    row: model.row(&profile.covariates, k),
                });
            }
        }
        Ok(Self {
            kind: model.kind,
            dim: model.dim(),
            cells,
        })
    }

    /// Model mean and score multiplier `c(μ)` (score = `(y − μ) c r`).
    fn mean_and_scale(&self, cell: &Cell, theta: &DVector<f64>) -> (f64, f64) {
        let eta = cell.row.dot(theta);
        match self.kind {
            ModelKind::Logistic => (logistic(eta), 1.0),
            ModelKind::BernoulliArms => (eta, 1.0 / (eta * (1.0 - eta))),
        }
    }

    /// `E[∂ log p_θ / ∂θ]`.
    pub fn expected_score(&self, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for cell in &self.cells {
            let (mu, c) = self.mean_and_scale(cell, theta);
            g.axpy(cell.weight * (cell.q - mu) * c, &cell.row, 1.0);
        }
        g
    }

    /// `−E[log p_θ]`; infinite outside the Bernoulli parameter space.
    pub fn expected_loss(&self, theta: &DVector<f64>) -> f64 {
        let mut loss = 0.0;
        for cell in &self.cells {
            let eta = cell.row.dot(theta);
            let term = match self.kind {
                ModelKind::Logistic => {
                    cell.q * softplus(-eta) + (1.0 - cell.q) * softplus(eta)
                }
                ModelKind::BernoulliArms => {
                    if !(eta > 0.0 && eta < 1.0) {
                        return f64::INFINITY;
                    }
                    -(xlogy(cell.q, eta) + xlogy(1.0 - cell.q, 1.0 - eta))
                }
            };
            loss += cell.weight * term;
        }
        loss
    }

    /// `𝒥(θ) = −E[∂² log p_θ]`.
    pub fn expected_curvature(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.dim, self.dim);
        for cell in &self.cells {
            let eta = cell.row.dot(theta);
            let coef = match self.kind {
                ModelKind::Logistic => {
                    let mu = logistic(eta);
                    mu * (1.0 - mu)
                }
                ModelKind::BernoulliArms => {
                    cell.q / (eta * eta) + (1.0 - cell.q) / ((1.0 - eta) * (1.0 - eta))
                }
            };
            j.ger(cell.weight * coef, &cell.row, &cell.row, 1.0);
        }
        symmetrize(&j)
    }

    /// `ℐ(θ) = E[score scoreᵀ]`.
    pub fn expected_score_outer(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for cell in &self.cells {
            let (mu, c) = self.mean_and_scale(cell, theta);
            let q = cell.q;
            let second_moment = q * (1.0 - q) + (q - mu) * (q - mu);
            m.ger(cell.weight * second_moment * c * c, &cell.row, &cell.row, 1.0);
        }
        symmetrize(&m)
    }

    /// Moment estimate used to start Newton for Bernoulli-arm models.
    fn start(&self) -> DVector<f64> {
        let mut theta = DVector::zeros(self.dim);
        if self.kind == ModelKind::BernoulliArms {
            let mut num = vec![0.0; self.dim];
            let mut den = vec![0.0; self.dim];
            for cell in &self.cells {
                num[cell.arm] += cell.weight * cell.q;
                den[cell.arm] += cell.weight;
            }
            for k in 0..self.dim {
                theta[k] = if den[k] > 0.0 { num[k] / den[k] } else { 0.5 };
            }
        }
        theta
    }

    /// KL projection `θ*` by damped Newton with step halving.
    pub fn kl_projection(&self) -> Result<DVector<f64>> {
        let mut theta = self.start();
        if self.kind == ModelKind::BernoulliArms {
            if let Some(v) = theta.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(invalid(format!(
                    "Bernoulli-arm projection {v} is on the boundary of [0, 1]"
                )));
            }
        }
        let mut loss = self.expected_loss(&theta);
        let mut score = self.expected_score(&theta);
        for _ in 0..MAX_NEWTON_ITER {
            if score.norm() <= SCORE_TOL {
                return Ok(theta);
            }
            let j = self.expected_curvature(&theta);
            let step = spd_cholesky(&j, "Newton step: expected curvature is singular")?
                .solve(&score);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &theta + &step * t;
                let cand_loss = self.expected_loss(&cand);
                if cand_loss.is_finite() && cand_loss <= loss + 1e-14 * loss.abs().max(1.0) {
                    theta = cand;
                    loss = cand_loss;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            score = self.expected_score(&theta);
            if !accepted {
                break;
            }
        }
        if score.norm() <= SCORE_TOL {
            return Ok(theta);
        }
        Err(Error::NoConvergence {
            iterations: MAX_NEWTON_ITER,
            residual: score.norm(),
        })
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `(θ*, 𝒥*, ℐ*, 𝒱*)` for one model under one scenario and allocation.
#[derive(Debug, Clone)]
pub struct AsymptoticTriple {
    pub theta_star: DVector<f64>,
    pub j_star: DMatrix<f64>,
    pub i_star: DMatrix<f64>,
    pub v_star: DMatrix<f64>,
}

impl AsymptoticTriple {
    pub fn compute(scenario: &Scenario, model: &AnalysisModel, alloc: &Allocation) -> Result<Self> {
        let table = CellTable::new(scenario, model, alloc)?;
        let theta_star = table.kl_projection()?;
        let j_star = table.expected_curvature(&theta_star);
        let i_star = table.expected_score_outer(&theta_star);
        let v_star = sandwich_variance(&j_star, &i_star)?;
        Ok(Self {
            theta_star,
            j_star,
            i_star,
            v_star,
        })
    }
}

/// `θ*` of `model` under `scenario` with allocation `alloc`.
pub fn kl_projection(
    scenario: &Scenario,
    model: &AnalysisModel,
    alloc: &Allocation,
) -> Result<DVector<f64>> {
    CellTable::new(scenario, model, alloc)?.kl_projection()
}

/// Per-observation expected curvature `𝒥(θ)`.
pub fn expected_curvature(
    theta: &DVector<f64>,
    scenario: &Scenario,
    model: &AnalysisModel,
    alloc: &Allocation,
) -> Result<DMatrix<f64>> {
    Ok(CellTable::new(scenario, model, alloc)?.expected_curvature(theta))
}

/// Per-observation expected score outer product `ℐ(θ)`.
pub fn expected_score_outer(
    theta: &DVector<f64>,
    scenario: &Scenario,
    model: &AnalysisModel,
    alloc: &Allocation,
) -> Result<DMatrix<f64>> {
    Ok(CellTable::new(scenario, model, alloc)?.expected_score_outer(theta))
}

/// `E[score_a(θ_a) score_b(θ_b)ᵀ]` for two models fitted to the same
/// observations; the off-diagonal block of the stacked score covariance.
pub fn cross_score_outer(
    a: (&CellTable, &DVector<f64>),
    b: (&CellTable, &DVector<f64>),
) -> Result<DMatrix<f64>> {
    let (ta, theta_a) = a;
    let (tb, theta_b) = b;
    if ta.cells.len() != tb.cells.len() {
        return Err(invalid("cell tables come from different allocations"));
    }
    let mut m = DMatrix::zeros(ta.dim, tb.dim);
    for (ca, cb) in ta.cells.iter().zip(&tb.cells) {
        if ca.profile != cb.profile || ca.arm != cb.arm {
            return Err(invalid("cell tables are not aligned"));
        }
        let (mu_a, sa) = ta.mean_and_scale(ca, theta_a);
        let (mu_b, sb) = tb.mean_and_scale(cb, theta_b);
        let q = ca.q;
        let cross = q * (1.0 - q) + (q - mu_a) * (q - mu_b);
        m.ger(ca.weight * cross * sa * sb, &ca.row, &cb.row, 1.0);
    }
    Ok(m)
}

/// `𝒱* = J⁻¹ I J⁻¹`, symmetrized.
pub fn sandwich_variance(j: &DMatrix<f64>, i: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if j.shape() != i.shape() {
        return Err(invalid("J and I have different shapes"));
    }
    let j_inv = spd_inverse(j, "expected curvature J is singular")?;
    Ok(symmetrize(&(&j_inv * i * &j_inv)))
}
