//! Scalar special functions: normal CDF/quantile and the regularized
//! incomplete beta function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, `Φ(x) = erfc(-x/√2)/2`.
///
/// Going through `erfc` keeps full relative accuracy in the lower tail:
/// `Φ(-38)` is a subnormal (~2.9e-316) rather than zero.
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `1 − Φ(x)`, accurate for large positive `x`.
pub fn normal_sf(x: f64) -> f64 {
    normal_cdf(-x)
}

/// Inverse of the standard normal CDF (Wichura's AS241, ~1e-16 relative).
pub fn normal_quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.0809287301226727 * r + 33430.575583588128105) * r
            + 67265.770927008700853)
            * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608;
        let den = ((((((5226.495278852545925 * r + 28729.085735721942674) * r
            + 39307.89580009271061)
            * r
            + 21213.794301586595867)
            * r
            + 5394.1960214247511077)
            * r
            + 687.1870074920579083)
            * r
            + 42.313330701600911252)
            * r
            + 1.0;
        return q * num / den;
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        let num = ((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
            + 0.24178072517745061177)
            * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734;
        let den = ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
            + 0.0151986665636164571966)
            * r
            + 0.14810397642748007459)
            * r
            + 0.68976733498510000455)
            * r
            + 1.6763848301838038494)
            * r
            + 2.05319162663775882187)
            * r
            + 1.0;
        num / den
    } else {
        let r = r - 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
            + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772;
        let den = ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
            + 1.8463183175100546818e-5)
            * r
            + 7.868691311456132591e-4)
            * r
            + 0.0148753612908506148525)
            * r
            + 0.13692988092273580531)
            * r
            + 0.59983220655588793769)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

const GL_W: [[f64; 10]; 3] = [
    [0.1713244923791705, 0.3607615730481384, 0.4679139345726904, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        0.04717533638651177, 0.1069393259953183, 0.1600783285433464, 0.2031674267230659,
        0.2334925365383547, 0.2491470458134029, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
        0.1019301198172404, 0.1181945319615184, 0.1316886384491766, 0.1420961093183821,
        0.1491729864726037, 0.1527533871307259,
    ],
];
const GL_X: [[f64; 10]; 3] = [
    [-0.9324695142031522, -0.6612093864662647, -0.2386191860831970, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [
        -0.9815606342467191, -0.9041172563704750, -0.7699026741943050, -0.5873179542866171,
        -0.3678314989981802, -0.1252334085114692, 0.0, 0.0, 0.0, 0.0,
    ],
    [
        -0.9931285991850949, -0.9639719272779138, -0.9122344282513259, -0.8391169718222188,
        -0.7463319064601508, -0.6360536807265150, -0.5108670019508271, -0.3737060887154196,
        -0.2277858511416451, -0.07652652113349733,
    ],
];

/// Upper bivariate normal probability `P(X > h, Y > k)` for standard
/// margins with correlation `r` (Drezner–Wesolowsky with Genz's
/// refinements; about 1e-15 absolute accuracy).
pub fn bivariate_normal_upper(h: f64, k: f64, r: f64) -> f64 {
    use std::f64::consts::TAU;
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { normal_cdf(-k) };
    }
    if k == f64::NEG_INFINITY {
        return normal_cdf(-h);
    }
    let r = r.clamp(-1.0, 1.0);
    let (ng, lg) = if r.abs() < 0.3 {
        (0, 3)
    } else if r.abs() < 0.75 {
        (1, 6)
    } else {
        (2, 10)
    };
    let w = &GL_W[ng];
    let x = &GL_X[ng];
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        if r == 0.0 {
            return normal_cdf(-h) * normal_cdf(-k);
        }
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin();
        for i in 0..lg {
            let sn = (asr * (x[i] + 1.0) / 2.0).sin();
            bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            let sn = (asr * (-x[i] + 1.0) / 2.0).sin();
            bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
        }
        return bvn * asr / (2.0 * TAU) + normal_cdf(-h) * normal_cdf(-k);
    }
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / a_s + hk) / 2.0).exp()
            * (1.0 - c * (bs - a_s) * (1.0 - d * bs / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * TAU.sqrt()
                * normal_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for i in 0..lg {
            for xi in [x[i], -x[i]] {
                let xs = (a * (xi + 1.0)) * (a * (xi + 1.0));
                let rs = (1.0 - xs).sqrt();
                bvn += a
                    * w[i]
                    * (-(bs / xs + hk) / 2.0).exp()
                    * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                        - (1.0 + c * xs * (1.0 + d * xs)));
            }
        }
        bvn = -bvn / TAU;
    }
    if r > 0.0 {
        bvn + normal_cdf(-h.max(k))
    } else {
        -bvn + (normal_cdf(-h) - normal_cdf(-k)).max(0.0)
    }
}

/// Bivariate normal CDF `P(X ≤ a, Y ≤ b)` with correlation `r`.
pub fn bivariate_normal_cdf(a: f64, b: f64, r: f64) -> f64 {
    bivariate_normal_upper(-a, -b, r)
}

/// Bivariate normal density with standard margins and correlation `r`.
fn bivariate_normal_pdf(x: f64, y: f64, r: f64) -> f64 {
    let det = (1.0 - r) * (1.0 + r);
    (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * det)).exp() / (std::f64::consts::TAU * det.sqrt())
}

/// Trivariate normal CDF `P(X₁ ≤ h₁, X₂ ≤ h₂, X₃ ≤ h₃)` for standard
/// margins and correlations `(r₁₂, r₁₃, r₂₃)`.
///
/// Plackett's reduction: start from `r₁₂ = r₁₃ = 0`, where the CDF factors
/// into `Φ(h₁) Φ₂(h₂, h₃; r₂₃)`, and integrate its derivative along the
/// straight path to the target correlations with 20-point Gauss–Legendre.
/// The coordinate kept fixed is the pair with the largest `|r|`. Returns
/// `None` when the correlation matrix is too close to singular for the
/// fixed rule.
pub fn trivariate_normal_cdf(h: [f64; 3], r12: f64, r13: f64, r23: f64) -> Option<f64> {
    let det = 1.0 - r12 * r12 - r13 * r13 - r23 * r23 + 2.0 * r12 * r13 * r23;
    if !(det > 1e-6) {
        return None;
    }
    // Relabel so that the fixed correlation (between the 2nd and 3rd
    // variables) is the largest in magnitude.
    let (h, r12, r13, r23) = if r23.abs() >= r12.abs() && r23.abs() >= r13.abs() {
        (h, r12, r13, r23)
    } else if r13.abs() >= r12.abs() {
        // Fixed pair (1, 3): relabel 2 → 1.
        ([h[1], h[0], h[2]], r12, r23, r13)
    } else {
        // Fixed pair (1, 2): relabel 3 → 1.
        ([h[2], h[0], h[1]], r13, r23, r12)
    };
    let base = normal_cdf(h[0]) * bivariate_normal_cdf(h[1], h[2], r23);
    if r12 == 0.0 && r13 == 0.0 {
        return Some(base);
    }
    let w = &GL_W[2];
    let x = &GL_X[2];
    let mut acc = 0.0;
    for i in 0..10 {
        for xi in [x[i], -x[i]] {
            let t = 0.5 * (xi + 1.0);
            let a = t * r12;
            let b = t * r13;
            let mut d = 0.0;
            // ∂/∂ρ₁₂: density of (X₁, X₂) at (h₁, h₂) times P(X₃ ≤ h₃ | ·).
            if a != 0.0 {
                let det12 = 1.0 - a * a;
                let c1 = (b - a * r23) / det12;
                let c2 = (r23 - a * b) / det12;
                let mu = c1 * h[0] + c2 * h[1];
                let var = 1.0 - c1 * b - c2 * r23;
                d += r12 * bivariate_normal_pdf(h[0], h[1], a) * normal_cdf((h[2] - mu) / var.max(1e-300).sqrt());
            }
            if b != 0.0 {
                let det13 = 1.0 - b * b;
                let c1 = (a - b * r23) / det13;
                let c3 = (r23 - a * b) / det13;
                let mu = c1 * h[0] + c3 * h[2];
                let var = 1.0 - c1 * a - c3 * r23;
                d += r13 * bivariate_normal_pdf(h[0], h[2], b) * normal_cdf((h[1] - mu) / var.max(1e-300).sqrt());
            }
            acc += w[i] * d;
        }
    }
    Some((base + 0.5 * acc).clamp(0.0, 1.0))
}

/// `ln B(a, b)`.
pub fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 20_000;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)` for `a, b > 0`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x.is_nan() || a.is_nan() || b.is_nan() || a <= 0.0 || b <= 0.0 {
        return f64::NAN;
    }
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let front = ln_front.exp();
    // The continued fraction converges fastest below the mean.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of the Beta(a, b) distribution.
pub fn beta_cdf(x: f64, a: f64, b: f64) -> f64 {
    regularized_incomplete_beta(x, a, b)
}

/// Upper tail `P(θ > x)` for `θ ~ Beta(a, b)`, computed without cancellation.
pub fn beta_sf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x >= 1.0 {
        return 0.0;
    }
    regularized_incomplete_beta(1.0 - x, b, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-14);
        assert!((normal_cdf(-1.0) - 0.15865525393145707).abs() < 1e-15);
        let tail = normal_cdf(-38.0);
        assert!(tail > 0.0 && tail < 1e-300);
        assert!((tail / 2.8854e-316 - 1.0).abs() < 1e-3, "{tail:e}");
    }

    #[test]
    fn bivariate_known_values() {
        // Orthant probability 1/4 + asin(r)/(2π).
        for &r in &[-0.99, -0.8, -0.5, -0.1, 0.0, 0.2, 0.5, 0.8, 0.95, 0.999] {
            let want = 0.25 + f64::asin(r) / std::f64::consts::TAU;
            let got = bivariate_normal_cdf(0.0, 0.0, r);
            assert!((got - want).abs() < 1e-14, "r={r} got={got} want={want}");
        }
        assert!((bivariate_normal_cdf(1.0, -0.5, 1.0) - normal_cdf(-0.5)).abs() < 1e-15);
        assert!((bivariate_normal_cdf(1.0, 0.5, -1.0) - (normal_cdf(1.0) - normal_cdf(-0.5))).abs() < 1e-15);
    }

    #[test]
    fn trivariate_orthant_closed_form() {
        // P(all ≤ 0) = 1/8 + (asin r12 + asin r13 + asin r23)/(4π).
        for &(a, b, c) in &[(0.5, 0.5, 0.5), (0.1, -0.3, 0.6), (0.9, 0.8, 0.75), (-0.4, -0.4, 0.2)] {
            let want = 0.125 + (f64::asin(a) + f64::asin(b) + f64::asin(c)) / (4.0 * PI);
            let got = trivariate_normal_cdf([0.0; 3], a, b, c).unwrap();
            assert!((got - want).abs() < 1e-12, "{a} {b} {c}: {got} vs {want}");
        }
    }

    #[test]
    fn quantile_round_trip() {
        for &p in &[1e-300, 1e-12, 0.001, 0.025, 0.3, 0.5, 0.77, 0.975, 1.0 - 1e-12] {
            let x = normal_quantile(p);
            let back = normal_cdf(x);
            assert!(((back - p) / p).abs() < 1e-12, "p={p} back={back}");
        }
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a; I_x(1, b) = 1 − (1−x)^b.
        for &x in &[0.01, 0.3, 0.5, 0.9] {
            assert!((regularized_incomplete_beta(x, 1.0, 1.0) - x).abs() < 1e-15);
            assert!((regularized_incomplete_beta(x, 3.5, 1.0) - x.powf(3.5)).abs() < 1e-14);
            let want = 1.0 - (1.0 - x).powf(7.0);
            assert!((regularized_incomplete_beta(x, 1.0, 7.0) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn incomplete_beta_symmetry() {
        for &(x, a, b) in &[(0.4, 26.0, 26.0), (0.2, 3.0, 40.0), (0.7, 501.0, 400.0)] {
            let lhs = regularized_incomplete_beta(x, a, b);
            let rhs = 1.0 - regularized_incomplete_beta(1.0 - x, b, a);
            assert!((lhs - rhs).abs() < 1e-13, "{lhs} {rhs}");
        }
    }
}
