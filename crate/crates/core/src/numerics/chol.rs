//! Cholesky utilities and the log-Cholesky covariance parameterization.
//!
//! Covariance blocks are optimized over an unconstrained vector `theta`
//! holding the row-major lower triangle of the Cholesky factor, with the
//! diagonal stored on log scale. Any real vector decodes to a positive
//! definite matrix.

use nalgebra::{DMatrix, Dyn};

use crate::error::{Error, Result};

/// Jitter ladder relative to the mean diagonal.
const JITTER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

/// Cholesky factorization with escalating diagonal jitter (`chol_psd`).
///
/// Factors `M + jitter * mean(diag(M)) * I`, escalating the jitter through
/// {0, 1e−10, 1e−8, 1e−6} until the factorization succeeds.
pub fn chol_psd(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, Dyn>> {
    let n = m.nrows();
    if n == 0 || !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPD);
    }
    let mean_diag = m.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    for (k, jit) in JITTER.iter().enumerate() {
        let candidate = if k == 0 {
            m.clone()
        } else {
            let mut c = m.clone();
            for i in 0..n {
                c[(i, i)] += jit * scale;
            }
            c
        };
        if let Some(chol) = nalgebra::Cholesky::new(candidate) {
            return Ok(chol);
        }
    }
    Err(Error::NotPD)
}

/// log|M| from a Cholesky factor.
pub fn ln_det(chol: &nalgebra::Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Number of parameters in the lower triangle of a `dim` x `dim` factor.
pub fn tri_len(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

/// Decode a theta segment into the lower-triangular Cholesky factor.
pub fn decode_factor(theta: &[f64], dim: usize) -> DMatrix<f64> {
    debug_assert_eq!(theta.len(), tri_len(dim));
    let mut l = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in 0..=i {
            l[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    l
}

/// Decode a theta segment into the covariance matrix L * L^T.
pub fn decode_cov(theta: &[f64], dim: usize) -> DMatrix<f64> {
    let l = decode_factor(theta, dim);
    &l * l.transpose()
}

/// Encode a positive definite matrix into theta (inverse of [`decode_cov`]).
pub fn encode_cov(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = m.nrows();
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or(Error::NotPD)?;
    let l = chol.l();
    let mut theta = Vec::with_capacity(tri_len(dim));
    for i in 0..dim {
        for j in 0..=i {
            theta.push(if i == j { l[(i, j)].ln() } else { l[(i, j)] });
        }
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_factors_to_identity() {
        let m = DMatrix::<f64>::identity(3, 3);
        let chol = chol_psd(&m).unwrap();
        assert!((chol.l() - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
    }

    #[test]
    fn hand_factorization() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 2.0]);
        let chol = chol_psd(&m).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert!((chol.l() - want).norm() < 1e-12);
    }

    #[test]
    fn random_spd_round_trip() {
        let mut seed = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            seed ^= seed << 13;
            seed ^= seed >> 7;
            seed ^= seed << 17;
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let n = 7;
        let a = DMatrix::from_fn(n, n, |_, _| next());
        let m = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let chol = chol_psd(&m).unwrap();
        let l = chol.l();
        let back = &l * l.transpose();
        assert!((&back - &m).norm() / m.norm() < 1e-10);
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 10.0, 10.0, 1.0]);
        assert!(matches!(chol_psd(&m), Err(Error::NotPD)));
    }

    #[test]
    fn near_singular_rescued_by_jitter() {
        // Rank-deficient up to roundoff; the ladder must rescue it.
        let v = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let m = &v * v.transpose();
        assert!(chol_psd(&m).is_ok());
    }

    #[test]
    fn encode_decode_round_trip() {
        let theta = vec![0.3, -0.7, 0.1, 0.9, -0.2, -0.5];
        let cov = decode_cov(&theta, 3);
        let back = encode_cov(&cov).unwrap();
        for (a, b) in theta.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}
