//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Dimensions in this crate never exceed a few dozen, so everything is dense.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// First jitter (relative to the largest diagonal entry) tried when a
/// Cholesky factorization fails.
pub const JITTER_START: f64 = 1e-12;
/// Largest relative jitter before giving up.
pub const JITTER_MAX: f64 = 1e-6;

/// Returns `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute asymmetry `|m_ij − m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

fn diag_scale(m: &DMatrix<f64>) -> f64 {
    m.diagonal().iter().fold(0.0_f64, |a, &d| a.max(d.abs()))
}

/// Cholesky factorization with escalating diagonal jitter.
///
/// Returns the factorization and the relative jitter that was needed
/// (zero when the plain factorization succeeded).
pub fn cholesky_jittered(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if !m.is_square() {
        return Err(Error::InvalidInput(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let sym = symmetrize(m);
    if let Some(ch) = Cholesky::new(sym.clone()) {
        return Ok((ch, 0.0));
    }
    let scale = diag_scale(&sym).max(f64::MIN_POSITIVE);
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut shifted = sym.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter * scale;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite(format!(
        "Cholesky failed with jitter up to {JITTER_MAX:e}"
    )))
}

/// Cholesky factorization that rejects numerically singular matrices.
pub fn spd_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let (ch, jitter) = cholesky_jittered(m).map_err(|e| match e {
        Error::NotPositiveDefinite(_) => Error::Singular(what.to_string()),
        other => other,
    })?;
    let scale = diag_scale(m).max(f64::MIN_POSITIVE);
    let l = ch.l_dirty();
    let min_pivot_sq = (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    // A pivot of the order of the jitter means the jitter made it invertible.
    let floor = if jitter > 0.0 { 100.0 * jitter } else { 1e-13 };
    if min_pivot_sq < floor * scale {
        return Err(Error::Singular(what.to_string()));
    }
    Ok(ch)
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let ch = spd_cholesky(m, what)?;
    Ok(symmetrize(&ch.inverse()))
}

/// Lower-triangular `L` with `L Lᵀ = m` for a positive semi-definite `m`.
///
/// Zero pivots are allowed (the corresponding column of `L` is zero), so a
/// zero or rank-deficient covariance yields an exact degenerate factor.
/// Pivots more negative than `-1e-10 · scale` are rejected.
pub fn psd_factor(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if !m.is_square() {
        return Err(Error::InvalidInput("expected a square matrix".into()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let sym = symmetrize(m);
    let scale = diag_scale(&sym);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = sym[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -1e-10 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotPositiveDefinite(format!(
                "negative pivot {d:e} at index {j}"
            )));
        }
        if d <= tol {
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = sym[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Ok(l)
}

/// `aᵀ M a`.
pub fn quad_form(m: &DMatrix<f64>, a: &DVector<f64>) -> f64 {
    a.dot(&(m * a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_factor_of_zero_matrix_is_zero() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(psd_factor(&z).unwrap(), z);
    }

    #[test]
    fn psd_factor_rank_deficient() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let m = &v * v.transpose();
        let l = psd_factor(&m).unwrap();
        let back = &l * l.transpose();
        assert!((back - m).abs().max() < 1e-12);
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(psd_factor(&m).is_err());
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(spd_inverse(&m, "J"), Err(Error::Singular(_))));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(spd_inverse(&m, "J"), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_of_spd() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m, "m").unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).abs().max() < 1e-14);
    }
}
