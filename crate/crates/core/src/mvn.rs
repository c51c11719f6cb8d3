//! Multivariate-normal numerics: sampling and superiority probabilities.
//!
//! Orthant probabilities use Genz's separation-of-variables transform with
//! variable prioritization, integrated by a randomized rank-1 lattice rule
//! (tent periodization, antithetic pairs). The last two variables are
//! integrated exactly with the bivariate normal CDF, so a `q`-dimensional
//! orthant is a `(q − 2)`-dimensional integral and `q ≤ 2` is exact.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::linalg::{asymmetry, psd_factor};
pub use crate::special::normal_cdf;
use crate::special::{bivariate_normal_cdf, normal_pdf, normal_quantile, trivariate_normal_cdf};

/// Largest supported orthant dimension.
pub const MAX_DIM: usize = 32;

const PRIMES: [f64; MAX_DIM] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0,
    59.0, 61.0, 67.0, 71.0, 73.0, 79.0, 83.0, 89.0, 97.0, 101.0, 103.0, 107.0, 109.0, 113.0,
    127.0, 131.0,
];

/// Multivariate normal law.
#[derive(Debug, Clone, PartialEq)]
pub struct MvnLaw {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl MvnLaw {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() != mean.len() {
            return Err(invalid("MVN mean and covariance dimensions differ"));
        }
        if asymmetry(&covariance) > 1e-10 * covariance.amax().max(1.0) {
            return Err(invalid("MVN covariance is not symmetric"));
        }
        Ok(Self { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Lattice-rule settings for orthant probabilities.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenzOptions {
    /// Target absolute error (error = `error_factor` × standard error).
    pub abs_tol: f64,
    /// Independent random shifts of the lattice.
    pub randomizations: usize,
    /// Lattice size of the first pass; doubled until the target is met.
    pub initial_points: usize,
    /// Cap on integrand evaluations across all passes.
    pub max_points: usize,
    pub error_factor: f64,
    /// Use the deterministic trivariate reduction for three-dimensional
    /// orthants instead of the lattice rule.
    pub exact_trivariate: bool,
}

impl Default for GenzOptions {
    fn default() -> Self {
        Self {
            abs_tol: 5e-4,
            randomizations: 8,
            initial_points: 4,
            max_points: 1_000_000,
            error_factor: 3.5,
            exact_trivariate: true,
        }
    }
}

/// Orthant probability with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthantResult {
    pub value: f64,
    /// `error_factor` × standard error across randomizations.
    pub error: f64,
    /// Integrand evaluations used.
    pub evaluations: usize,
}

impl OrthantResult {
    fn exact(value: f64) -> Self {
        Self {
            value,
            error: 0.0,
            evaluations: 0,
        }
    }
}

/// Rank-1 lattice point sets: equispaced points in one dimension,
/// Fibonacci lattices in two, Richtmyer (√prime) Kronecker sequences above.
struct Lattice {
    dims: usize,
    n: usize,
    /// Fibonacci pair `(F_{m−1}, F_m)` when `dims == 2`.
    fib: (usize, usize),
    gen: [f64; MAX_DIM],
}

impl Lattice {
    fn new(dims: usize, min_points: usize) -> Self {
        let mut gen = [0.0; MAX_DIM];
        for (g, p) in gen.iter_mut().zip(PRIMES.iter()).take(dims) {
            *g = p.sqrt().fract();
        }
        let mut lattice = Self {
            dims,
            n: min_points,
            fib: (8, 13),
            gen,
        };
        if dims == 2 {
            while lattice.fib.1 < min_points {
                lattice.fib = (lattice.fib.1, lattice.fib.0 + lattice.fib.1);
            }
            lattice.n = lattice.fib.1;
        }
        lattice
    }

    /// At least doubles the point count.
    fn grow(&mut self) {
        if self.dims == 2 {
            let target = 2 * self.n;
            while self.fib.1 < target {
                self.fib = (self.fib.1, self.fib.0 + self.fib.1);
            }
            self.n = self.fib.1;
        } else {
            self.n *= 2;
        }
    }

    #[inline]
    fn coordinate(&self, k: usize, j: usize) -> f64 {
        match (self.dims, j) {
            (1, _) => k as f64 / self.n as f64,
            (2, 0) => k as f64 / self.n as f64,
            (2, _) => ((k * self.fib.0) % self.n) as f64 / self.n as f64,
            _ => ((k + 1) as f64 * self.gen[j]).fract(),
        }
    }
}

/// Fixed shift sequence so orthant probabilities are deterministic
/// functions of their inputs.
struct ShiftStream(u64);

impl ShiftStream {
    fn next(&mut self) -> f64 {
        self.0 = crate::rng::splitmix64(self.0);
        (self.0 >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Prioritized Cholesky factor of the problem `P(Y ≤ b)`, `Y ~ N(0, Σ)`.
struct Sov {
    q: usize,
    /// Probability of the first (unconditional) constraint.
    e0: f64,
    b: [f64; MAX_DIM],
    l: [[f64; MAX_DIM]; MAX_DIM],
}

impl Sov {
    /// `cov` is row-major `q × q`. Returns `None` when some constraint with
    /// zero conditional variance is violated for every `Y` (probability 0).
    fn new(b_in: &[f64], cov: &[f64]) -> Result<Option<Self>> {
        let q = b_in.len();
        let mut b = [0.0; MAX_DIM];
        b[..q].copy_from_slice(b_in);
        let mut s = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..q {
            for j in 0..q {
                s[i][j] = 0.5 * (cov[i * q + j] + cov[j * q + i]);
            }
        }
        let scale = (0..q).fold(0.0_f64, |a, i| a.max(s[i][i].abs()));
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        let mut l = [[0.0; MAX_DIM]; MAX_DIM];
        let mut ey = [0.0; MAX_DIM];
        for i in 0..q {
            // Pick the remaining variable with the smallest expected probability.
            let mut best = i;
            let mut best_p = f64::INFINITY;
            for j in i..q {
                let mut var = s[j][j];
                let mut shift = 0.0;
                for m in 0..i {
                    var -= l[j][m] * l[j][m];
                    shift += l[j][m] * ey[m];
                }
                if var < -1e-10 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "difference covariance has negative conditional variance {var:e}"
                    )));
                }
                let p = if var > tol {
                    normal_cdf((b[j] - shift) / var.sqrt())
                } else {
                    // Degenerate directions are deterministic; order them first.
                    -1.0
                };
                if p < best_p {
                    best_p = p;
                    best = j;
                }
            }
            if best != i {
                b.swap(i, best);
                s.swap(i, best);
                for row in s.iter_mut().take(q) {
                    row.swap(i, best);
                }
                l.swap(i, best);
            }
            let mut var = s[i][i];
            for m in 0..i {
                var -= l[i][m] * l[i][m];
            }
            if var > tol {
                let d = var.sqrt();
                l[i][i] = d;
                for j in (i + 1)..q {
                    let mut v = s[j][i];
                    for m in 0..i {
                        v -= l[j][m] * l[i][m];
                    }
                    l[j][i] = v / d;
                }
                let mut shift = 0.0;
                for m in 0..i {
                    shift += l[i][m] * ey[m];
                }
                let t = (b[i] - shift) / d;
                let p = normal_cdf(t);
                ey[i] = if p > 1e-300 { -normal_pdf(t) / p } else { t };
            } else {
                l[i][i] = 0.0;
                for j in (i + 1)..q {
                    l[j][i] = 0.0;
                }
                ey[i] = 0.0;
                if i == 0 && b[0] < 0.0 {
                    return Ok(None);
                }
            }
        }
        let e0 = if l[0][0] > 0.0 {
            normal_cdf(b[0] / l[0][0])
        } else {
            1.0
        };
        Ok(Some(Self { q, e0, b, l }))
    }

    /// Separation-of-variables integrand at `w ∈ [0,1]^{q−2}`; the last two
    /// variables are integrated exactly by the bivariate normal CDF.
    #[inline]
    fn integrand(&self, w: &[f64]) -> f64 {
        let q = self.q;
        if q == 1 {
            return self.e0;
        }
        let mut z = [0.0; MAX_DIM];
        let mut f = 1.0;
        for i in 0..q - 2 {
            let mut t = self.b[i];
            for m in 0..i {
                t -= self.l[i][m] * z[m];
            }
            let d = self.l[i][i];
            let e = if i == 0 {
                self.e0
            } else if d > 0.0 {
                normal_cdf(t / d)
            } else if t >= 0.0 {
                1.0
            } else {
                0.0
            };
            f *= e;
            if f == 0.0 {
                return 0.0;
            }
            if d > 0.0 {
                z[i] = normal_quantile((w[i] * e).clamp(1e-300, 1.0 - 1e-16));
            }
        }
        let (i, j) = (q - 2, q - 1);
        let mut t1 = self.b[i];
        let mut t2 = self.b[j];
        for m in 0..i {
            t1 -= self.l[i][m] * z[m];
            t2 -= self.l[j][m] * z[m];
        }
        let s1 = self.l[i][i];
        let s2 = (self.l[j][i] * self.l[j][i] + self.l[j][j] * self.l[j][j]).sqrt();
        let step = |t: f64| if t >= 0.0 { 1.0 } else { 0.0 };
        let pair = if s1 == 0.0 {
            step(t1) * if s2 > 0.0 { normal_cdf(t2 / s2) } else { step(t2) }
        } else if s2 == 0.0 {
            normal_cdf(t1 / s1) * step(t2)
        } else {
            bivariate_normal_cdf(t1 / s1, t2 / s2, self.l[j][i] / s2)
        };
        f * pair
    }
}

/// `P(Y ≤ b)` for `Y ~ N(0, Σ)`, `Σ` row-major `q × q`.
pub fn lower_orthant(b: &[f64], cov: &[f64], opts: &GenzOptions) -> Result<OrthantResult> {
    let q = b.len();
    if q == 0 {
        return Ok(OrthantResult::exact(1.0));
    }
    if q > MAX_DIM {
        return Err(invalid(format!("orthant dimension {q} exceeds {MAX_DIM}")));
    }
    if cov.len() != q * q {
        return Err(invalid("orthant covariance has the wrong size"));
    }
    if b.iter().chain(cov).any(|v| v.is_nan()) {
        return Err(invalid("orthant inputs contain NaN"));
    }
    if q == 3 && opts.exact_trivariate {
        if let Some(p) = trivariate(b, cov) {
            return Ok(OrthantResult::exact(p));
        }
    }
    let sov = match Sov::new(b, cov)? {
        Some(s) => s,
        None => return Ok(OrthantResult::exact(0.0)),
    };
    if q <= 2 || (0..q).all(|i| sov.l[i][i] == 0.0) {
        return Ok(OrthantResult::exact(sov.integrand(&[])));
    }
    let dims = q - 2;
    let m = opts.randomizations.max(2);
    let mut shifts = ShiftStream(0x5EED_0F_6E27 ^ q as u64);
    let mut lattice = Lattice::new(dims, opts.initial_points.max(1));
    let mut evaluations = 0usize;
    // Inverse-variance pooling across passes.
    let mut sum = 0.0;
    let mut weight = 0.0;
    let mut w = [0.0; MAX_DIM];
    let mut w_anti = [0.0; MAX_DIM];
    loop {
        let n = lattice.n;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for r in 0..m {
            let mut shift = [0.0; MAX_DIM];
            for s in shift.iter_mut().take(dims) {
                *s = shifts.next();
            }
            let mut acc = 0.0;
            for k in 0..n {
                for j in 0..dims {
                    let x = (lattice.coordinate(k, j) + shift[j]).fract();
                    let t = (2.0 * x - 1.0).abs();
                    w[j] = t;
                    w_anti[j] = 1.0 - t;
                }
                acc += 0.5 * (sov.integrand(&w[..dims]) + sov.integrand(&w_anti[..dims]));
            }
            let est = acc / n as f64;
            let delta = est - mean;
            mean += delta / (r + 1) as f64;
            m2 += delta * (est - mean);
        }
        evaluations += 2 * n * m;
        let var_of_mean = m2 / ((m - 1) * m) as f64;
        if var_of_mean <= 0.0 {
            sum = mean;
            weight = f64::INFINITY;
        } else if weight.is_finite() {
            sum += mean / var_of_mean;
            weight += 1.0 / var_of_mean;
        }
        let (value, se) = if weight.is_infinite() {
            (sum, 0.0)
        } else {
            (sum / weight, (1.0 / weight).sqrt())
        };
        let error = opts.error_factor * se;
        if error <= opts.abs_tol || evaluations + 4 * n * m > opts.max_points {
            return Ok(OrthantResult {
                value: value.clamp(0.0, 1.0),
                error,
                evaluations,
            });
        }
        lattice.grow();
    }
}

fn trivariate(b: &[f64], cov: &[f64]) -> Option<f64> {
    let sd = [cov[0].sqrt(), cov[4].sqrt(), cov[8].sqrt()];
    if sd.iter().any(|s| !(*s > 0.0)) {
        return None;
    }
    let corr = |i: usize, j: usize| 0.5 * (cov[i * 3 + j] + cov[j * 3 + i]) / (sd[i] * sd[j]);
    trivariate_normal_cdf(
        [b[0] / sd[0], b[1] / sd[1], b[2] / sd[2]],
        corr(0, 1),
        corr(0, 2),
        corr(1, 2),
    )
}

/// `P(X ≥ 0)` for `X ~ N(mean, cov)`; zero-variance coordinates are
/// dropped after checking their mean.
pub fn orthant_probability(law: &MvnLaw, opts: &GenzOptions) -> Result<OrthantResult> {
    let q = law.dim();
    let scale = law.covariance.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut keep = Vec::with_capacity(q);
    for i in 0..q {
        if law.covariance[(i, i)] <= 1e-14 * scale {
            if law.mean[i] < 0.0 {
                return Ok(OrthantResult::exact(0.0));
            }
        } else {
            keep.push(i);
        }
    }
    let qk = keep.len();
    let b: Vec<f64> = keep.iter().map(|&i| law.mean[i]).collect();
    let mut cov = vec![0.0; qk * qk];
    for (a, &i) in keep.iter().enumerate() {
        for (c, &j) in keep.iter().enumerate() {
            cov[a * qk + c] = law.covariance[(i, j)];
        }
    }
    // P(X ≥ 0) = P(−(X − m) ≤ m).
    lower_orthant(&b, &cov, opts)
}

/// Superiority probabilities `P(η_k ≥ max_{j≠k} η_j)` with default options.
pub fn superiority_probabilities(law: &MvnLaw) -> Result<Vec<f64>> {
    Ok(superiority_probabilities_with(law, &GenzOptions::default())?
        .into_iter()
        .map(|r| r.value)
        .collect())
}

/// Superiority probabilities with explicit lattice options.
pub fn superiority_probabilities_with(law: &MvnLaw, opts: &GenzOptions) -> Result<Vec<OrthantResult>> {
    psd_factor(&law.covariance)?;
    superiority_from_parts(law.mean.as_slice(), &law.covariance, opts)
}

/// Same as [`superiority_probabilities_with`] on raw parts.
pub fn superiority_from_parts(
    mean: &[f64],
    cov: &DMatrix<f64>,
    opts: &GenzOptions,
) -> Result<Vec<OrthantResult>> {
    let k_arms = mean.len();
    if k_arms < 2 {
        return Err(invalid("superiority probabilities need at least two components"));
    }
    if k_arms - 1 > MAX_DIM {
        return Err(invalid("too many components"));
    }
    let scale = cov.diagonal().amax().max(f64::MIN_POSITIVE);
    let q = k_arms - 1;
    let mut out = Vec::with_capacity(k_arms);
    let mut b = Vec::with_capacity(q);
    let mut idx = Vec::with_capacity(q);
    let mut sub = Vec::with_capacity(q * q);
    for k in 0..k_arms {
        b.clear();
        idx.clear();
        let mut impossible = false;
        for j in (0..k_arms).filter(|&j| j != k) {
            // D_j = η_k − η_j.
            let var = cov[(k, k)] + cov[(j, j)] - 2.0 * cov[(k, j)];
            let m = mean[k] - mean[j];
            if var <= 1e-14 * scale {
                if m < 0.0 {
                    impossible = true;
                    break;
                }
                continue;
            }
            b.push(m);
            idx.push(j);
        }
        if impossible {
            out.push(OrthantResult::exact(0.0));
            continue;
        }
        let qk = idx.len();
        sub.clear();
        for &i in &idx {
            for &j in &idx {
                sub.push(cov[(k, k)] - cov[(k, j)] - cov[(i, k)] + cov[(i, j)]);
            }
        }
        out.push(lower_orthant(&b, &sub[..qk * qk], opts)?);
    }
    Ok(out)
}

/// One draw `mean + L z` with `L` a (rank-tolerant) Cholesky factor.
pub fn sample_mvn<R: Rng + ?Sized>(law: &MvnLaw, rng: &mut R) -> Result<DVector<f64>> {
    let l = psd_factor(&law.covariance)?;
    let d = law.dim();
    let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok(&law.mean + l * z)
}
