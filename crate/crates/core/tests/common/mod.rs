//! Oracles shared by the integration tests. Nothing here calls into the
//! library's numerical routines.

#![allow(dead_code)]

use qoc::asymptotics::{DesignMap, OutcomeLaw, Profile, Scenario};

pub fn logit_inv(eta: f64) -> f64 {
    1.0 / (1.0 + (-eta).exp())
}

/// Composite Simpson rule with `m` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

pub fn ln_choose(n: usize, k: usize) -> f64 {
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

pub fn binom_pmf(n: usize, k: usize, p: f64) -> f64 {
    (ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
}

/// CDF of Beta(a, b) with integer shapes, as a binomial tail:
/// `I_x(a, b) = P(Bin(a + b − 1, x) ≥ a)`.
pub fn beta_cdf_int(x: f64, a: usize, b: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let m = a + b - 1;
    (a..=m).map(|j| binom_pmf(m, j, x)).sum()
}

pub fn beta_pdf_int(x: f64, a: usize, b: usize) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    let ln_b = ln_factorial(a - 1) + ln_factorial(b - 1) - ln_factorial(a + b - 1);
    ((a - 1) as f64 * x.ln() + (b - 1) as f64 * (1.0 - x).ln() - ln_b).exp()
}

/// `P(θ₁ > θ₀)` for independent integer-shape Betas, by quadrature of
/// `∫ f₁(t) F₀(t) dt`.
pub fn beta_greater_quad(a1: usize, b1: usize, a0: usize, b0: usize) -> f64 {
    simpson(|t| beta_pdf_int(t, a1, b1) * beta_cdf_int(t, a0, b0), 0.0, 1.0, 2000)
}

/// Standard normal CDF via Simpson quadrature of the density.
pub fn phi_quad(x: f64) -> f64 {
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if x >= 0.0 {
        0.5 + simpson(pdf, 0.0, x, 20_000)
    } else {
        0.5 - simpson(pdf, x, 0.0, 20_000)
    }
}

/// All `2^p` binary profiles with independent marginals `probs`.
pub fn binary_profiles(probs: &[f64]) -> Vec<Profile> {
    let p = probs.len();
    (0..1usize << p)
        .map(|bits| {
            let x: Vec<f64> = (0..p).map(|i| ((bits >> i) & 1) as f64).collect();
            let prob = x
                .iter()
                .zip(probs)
                .map(|(&xi, &pi)| if xi == 1.0 { pi } else { 1.0 - pi })
                .product();
            Profile { covariates: x, prob }
        })
        .collect()
}

/// Two-arm logistic truth with main effects of `x` and a treatment effect.
pub fn logistic_two_arm(marginals: &[f64], coefficients: &[f64]) -> Scenario {
    Scenario {
        profiles: binary_profiles(marginals),
        outcome: OutcomeLaw::Logistic {
            coefficients: coefficients.to_vec(),
            design: DesignMap::MainEffects {
                covariates: marginals.len(),
                arms: 2,
            },
        },
    }
}

/// Aggregated binary-outcome data: design rows with success and failure
/// counts.
pub struct Grouped {
    pub rows: Vec<Vec<f64>>,
    pub ones: Vec<f64>,
    pub zeros: Vec<f64>,
}

impl Grouped {
    pub fn total(&self) -> f64 {
        self.ones.iter().sum::<f64>() + self.zeros.iter().sum::<f64>()
    }
}

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let d = b.len();
    for c in 0..d {
        let p = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..d {
            let f = a[r][c] / a[c][c];
            for k in c..d {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; d];
    for r in (0..d).rev() {
        let s: f64 = (r + 1..d).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Logistic MLE by plain Newton-Raphson with Gaussian elimination.
pub fn logistic_mle(data: &Grouped) -> Vec<f64> {
    let d = data.rows[0].len();
    let mut beta = vec![0.0; d];
    for _ in 0..100 {
        let mut g = vec![0.0; d];
        let mut h = vec![vec![0.0; d]; d];
        for ((r, &y1), &y0) in data.rows.iter().zip(&data.ones).zip(&data.zeros) {
            let mu = logit_inv(r.iter().zip(&beta).map(|(a, b)| a * b).sum());
            let n = y1 + y0;
            for i in 0..d {
                g[i] += (y1 - n * mu) * r[i];
                for j in 0..d {
                    h[i][j] += n * mu * (1.0 - mu) * r[i] * r[j];
                }
            }
        }
        let step = solve(h, g);
        let size: f64 = step.iter().map(|s| s.abs()).sum();
        beta.iter_mut().zip(&step).for_each(|(b, s)| *b += s);
        if size < 1e-12 {
            break;
        }
    }
    beta
}

/// Exact power of the single-stage two-arm Beta(1,1) rule
/// `P(θ₁ > θ₀ | data) > threshold`, over the full binomial outcome grid.
pub fn two_arm_exact_power(n0: usize, n1: usize, rates: [f64; 2], threshold: f64) -> f64 {
    let m = 2000;
    let h = 1.0 / m as f64;
    let nodes: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    let weights: Vec<f64> = (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect();
    let cdf0: Vec<Vec<f64>> = (0..=n0)
        .map(|y| nodes.iter().map(|&t| beta_cdf_int(t, y + 1, n0 - y + 1)).collect())
        .collect();
    let pdf1: Vec<Vec<f64>> = (0..=n1)
        .map(|y| nodes.iter().zip(&weights).map(|(&t, w)| w * beta_pdf_int(t, y + 1, n1 - y + 1)).collect())
        .collect();
    let mut power = 0.0;
    for y0 in 0..=n0 {
        let p0 = binom_pmf(n0, y0, rates[0]);
        for y1 in 0..=n1 {
            let post: f64 = pdf1[y1].iter().zip(&cdf0[y0]).map(|(a, b)| a * b).sum();
            if post > threshold {
                power += p0 * binom_pmf(n1, y1, rates[1]);
            }
        }
    }
    power
}

/// Exact `P(Beta-posterior tail above the reference ≥ threshold)` for the
/// single-arm Beta(1,1) rule.
pub fn single_arm_exact(n: usize, rate: f64, reference: f64, threshold: f64) -> f64 {
    (0..=n)
        .filter(|&y| 1.0 - beta_cdf_int(reference, y + 1, n - y + 1) >= threshold)
        .map(|y| binom_pmf(n, y, rate))
        .sum()
}
