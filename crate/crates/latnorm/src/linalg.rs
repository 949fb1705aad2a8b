//! Thin wrappers around `nalgebra` for the validation and factorization
//! steps shared by the distribution and bound modules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated in covariance inputs.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// A covariance counts as positive definite when its smallest eigenvalue
/// exceeds this fraction of the largest.  Genuinely singular matrices (for
/// example the full colour-count covariance, whose coordinates sum to a
/// constant) must be rejected so the caller can drop a coordinate instead of
/// silently regularizing.
pub const PSD_RTOL: f64 = 1e-10;

/// Checks that `m` is square, finite, and symmetric to [`SYMMETRY_RTOL`]
/// relative to its largest entry.
pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::domain(format!(
            "matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let mut max_abs = 0.0f64;
    for &v in m.iter() {
        if !v.is_finite() {
            return Err(Error::domain("matrix has a non-finite entry"));
        }
        max_abs = max_abs.max(v.abs());
    }
    let tol = SYMMETRY_RTOL * max_abs.max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(Error::domain(format!(
                    "matrix not symmetric at ({i},{j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let sym = 0.5 * (m + m.transpose());
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    DVector::from_vec(ev)
}

/// Validates a covariance matrix: symmetric and positive definite with
/// `lambda_min > PSD_RTOL * lambda_max`.  Returns `(lambda_min, lambda_max)`.
pub fn check_covariance(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    check_symmetric(m)?;
    if m.nrows() == 0 {
        return Err(Error::domain("covariance must have dimension at least 1"));
    }
    let ev = sym_eigenvalues(m);
    let lambda_min = ev[0];
    let lambda_max = ev[ev.len() - 1];
    if !(lambda_max > 0.0) || lambda_min <= PSD_RTOL * lambda_max {
        return Err(Error::domain(format!(
            "covariance not positive definite: eigenvalue range [{lambda_min:e}, {lambda_max:e}]"
        )));
    }
    Ok((lambda_min, lambda_max))
}

/// Condition number `lambda_max / lambda_min` of a validated covariance.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let (lo, hi) = check_covariance(m)?;
    Ok(hi / lo)
}

/// Lower Cholesky factor of a validated covariance.
pub fn cholesky_lower(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_covariance(m)?;
    let sym = 0.5 * (m + m.transpose());
    sym.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::domain("covariance Cholesky factorization failed"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn accepts_well_conditioned_covariance() {
        let m = dmatrix![3.0, 0.5; 0.5, 5.0];
        let (lo, hi) = check_covariance(&m).unwrap();
        assert!(lo > 0.0 && hi >= lo);
        // Eigenvalues of [[3, .5], [.5, 5]]: 4 +/- sqrt(1.25).
        assert!((lo - (4.0 - 1.25f64.sqrt())).abs() < 1e-12);
        assert!((hi - (4.0 + 1.25f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn rejects_asymmetric_and_singular() {
        let asym = dmatrix![1.0, 0.2; 0.3, 1.0];
        assert!(check_covariance(&asym).is_err());

        // Rank-one: colour-count style degeneracy.
        let singular = dmatrix![1.0, -1.0; -1.0, 1.0];
        assert!(check_covariance(&singular).is_err());

        let negative = dmatrix![1.0, 2.0; 2.0, 1.0];
        assert!(check_covariance(&negative).is_err());
    }

    #[test]
    fn rejects_nearly_singular_below_threshold() {
        // lambda_min / lambda_max = 5e-11 < 1e-10.
        let m = dmatrix![1.0, 0.0; 0.0, 5e-11];
        assert!(check_covariance(&m).is_err());
        let ok = dmatrix![1.0, 0.0; 0.0, 2e-10];
        assert!(check_covariance(&ok).is_ok());
    }

    #[test]
    fn condition_number_of_diagonal() {
        let m = dmatrix![3.0, 0.0; 0.0, 5.0];
        assert!((condition_number(&m).unwrap() - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_reconstructs_the_matrix() {
        let m = dmatrix![2.0, 0.6, 0.0; 0.6, 1.5, -0.3; 0.0, -0.3, 1.0];
        let l = cholesky_lower(&m).unwrap();
        let back = &l * l.transpose();
        assert!((&back - &m).abs().max() < 1e-12);
    }
}
