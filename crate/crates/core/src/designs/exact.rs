//! Exact operating characteristics of the Beta-Binomial designs, by
//! enumeration of the outcome counts.

use crate::error::{invalid, Result};
use crate::special::{beta_sf, ln_beta};

use super::single_arm::check_beta;
use super::{SingleArmProtocol, TwoArmProtocol};

fn ln_choose(n: usize, k: usize) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Binomial(n, p) probability mass function as a vector over `0..=n`.
pub fn binomial_pmf(n: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 || p >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[if p >= 1.0 { n } else { 0 }] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    (0..=n)
        .map(|k| (ln_choose(n, k) + k as f64 * lp + (n - k) as f64 * lq).exp())
        .collect()
}

fn is_integer(x: f64) -> bool {
    x.fract() == 0.0 && x >= 1.0 && x < 1e6
}

/// `P(X > Y)` for independent `X ~ Beta(a_x, b_x)`, `Y ~ Beta(a_y, b_y)`.
///
/// Closed-form finite sum; needs an integer first shape in at least one of
/// the two laws.
pub fn beta_greater(a_x: f64, b_x: f64, a_y: f64, b_y: f64) -> Result<f64> {
    check_beta((a_x, b_x))?;
    check_beta((a_y, b_y))?;
    let sum = |a_b: f64, b_b: f64, a_a: f64, b_a: f64| -> f64 {
        // P(B > A) with integer a_b.
        let base = ln_beta(a_a, b_a);
        (0..a_b as usize)
            .map(|i| {
                let i = i as f64;
                (ln_beta(a_a + i, b_a + b_b) - (b_b + i).ln() - ln_beta(1.0 + i, b_b) - base).exp()
            })
            .sum()
    };
    let p = if is_integer(a_x) && (a_x <= a_y || !is_integer(a_y)) {
        sum(a_x, b_x, a_y, b_y)
    } else if is_integer(a_y) {
        1.0 - sum(a_y, b_y, a_x, b_x)
    } else {
        return Err(invalid("exact Beta comparison needs an integer first shape parameter"));
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Exact `P(positive)` of the single-arm design at true rate `rate`.
pub fn single_arm_positive_prob(protocol: &SingleArmProtocol, rate: f64) -> Result<f64> {
    protocol.validate()?;
    if !(0.0..=1.0).contains(&rate) {
        return Err(invalid("rate must lie in [0, 1]"));
    }
    let (a, b) = protocol.prior;
    let n = protocol.n;
    let pmf = binomial_pmf(n, rate);
    Ok((0..=n)
        .filter(|&y| beta_sf(protocol.reference_rate, a + y as f64, b + (n - y) as f64) >= protocol.decision_threshold)
        .map(|y| pmf[y])
        .sum())
}

/// Exact operating characteristics of a (possibly multistage) two-arm
/// design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoArmExact {
    pub power: f64,
    pub stop_prob: f64,
    pub ess: f64,
}

/// Enumerates cumulative counts `(y₀, y₁)` stage by stage, carrying forward
/// only the mass of trials that have not stopped.
pub fn two_arm(protocol: &TwoArmProtocol, rates: [f64; 2]) -> Result<TwoArmExact> {
    protocol.validate()?;
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(invalid("rates must lie in [0, 1]"));
    }
    let [(a0, b0), (a1, b1)] = protocol.priors;
    let stages = protocol.stages.len();
    // mass[y0][y1] over cumulative counts among continuing trials.
    let mut mass = vec![vec![1.0]];
    let (mut c0, mut c1) = (0usize, 0usize);
    let mut out = TwoArmExact {
        power: 0.0,
        stop_prob: 0.0,
        ess: 0.0,
    };
    for (s, st) in protocol.stages.iter().enumerate() {
        let p0 = binomial_pmf(st.n0, rates[0]);
        let p1 = binomial_pmf(st.n1, rates[1]);
        let mut next = vec![vec![0.0; c1 + st.n1 + 1]; c0 + st.n0 + 1];
        for (y0, row) in mass.iter().enumerate() {
            for (y1, &m) in row.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                for (d0, &q0) in p0.iter().enumerate() {
                    let w = m * q0;
                    for (d1, &q1) in p1.iter().enumerate() {
                        next[y0 + d0][y1 + d1] += w * q1;
                    }
                }
            }
        }
        c0 += st.n0;
        c1 += st.n1;
        let enrolled = (c0 + c1) as f64;
        let last = s + 1 == stages;
        let lambda = protocol.threshold(s);
        for (y0, row) in next.iter_mut().enumerate() {
            let (pa0, pb0) = (a0 + y0 as f64, b0 + (c0 - y0) as f64);
            // The superiority probability increases with y1, so find the
            // first y1 that passes and split the row there.
            let passes = |y1: usize| -> Result<bool> {
                Ok(beta_greater(a1 + y1 as f64, b1 + (c1 - y1) as f64, pa0, pb0)? >= lambda)
            };
            let (mut lo, mut hi) = (0usize, c1 + 1);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if passes(mid)? {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            let fail: f64 = row[..lo].iter().sum();
            let pass: f64 = row[lo..].iter().sum();
            if last {
                out.power += pass;
                out.ess += (fail + pass) * enrolled;
            } else {
                out.stop_prob += fail;
                out.ess += fail * enrolled;
                row[..lo].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        mass = next;
    }
    Ok(out)
}
