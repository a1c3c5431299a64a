//! Semidefinite Cholesky factorization shared by covariance sampling and Gram determinants.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PsdFactor {
    /// Lower-triangular factor; columns of clamped pivots are zero.
    pub lower: DMatrix<f64>,
    /// Pivots `L_ii^2` after clamping.
    pub pivots: Vec<f64>,
    /// Indices whose pivot fell below the clamp threshold.
    pub clamped: Vec<usize>,
}

impl PsdFactor {
    pub fn determinant(&self) -> f64 {
        self.pivots.iter().product()
    }
}

/// Cholesky factorization that tolerates semidefinite input.
///
/// A pivot in `[-clamp, clamp]` is set to zero and its column dropped; a pivot
/// below `-clamp` is reported as a factorization failure.
pub fn cholesky_psd(a: &DMatrix<f64>, clamp: f64) -> Result<PsdFactor> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut pivots = vec![0.0; n];
    let mut clamped = Vec::new();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -clamp {
            return Err(Error::Factorization {
                index: j,
                pivot: d,
                jitter: 0.0,
            });
        }
        if d <= clamp {
            clamped.push(j);
            continue;
        }
        let root = d.sqrt();
        pivots[j] = d;
        l[(j, j)] = root;
        for i in (j + 1)..n {
            let mut v = a[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / root;
        }
    }
    Ok(PsdFactor {
        lower: l,
        pivots,
        clamped,
    })
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a.clone().cholesky().ok_or(Error::Factorization {
        index: 0,
        pivot: f64::NAN,
        jitter: 0.0,
    })?;
    Ok(chol.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reproduces_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0]);
        let f = cholesky_psd(&a, 1e-14).unwrap();
        let back = &f.lower * f.lower.transpose();
        assert!((back - &a).abs().max() < 1e-14);
        assert!((f.determinant() - a.determinant()).abs() < 1e-12);
    }

    #[test]
    fn zero_row_is_clamped() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 2.0]);
        let f = cholesky_psd(&a, 1e-14).unwrap();
        assert_eq!(f.clamped, vec![0]);
        assert_eq!(f.determinant(), 0.0);
        let back = &f.lower * f.lower.transpose();
        assert!((back - &a).abs().max() < 1e-14);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            cholesky_psd(&a, 1e-12),
            Err(Error::Factorization { index: 1, .. })
        ));
    }
}
