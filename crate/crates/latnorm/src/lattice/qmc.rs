//! Randomized quasi-Monte-Carlo estimation of multivariate normal box
//! probabilities (Genz's separation-of-variables transform).
//!
//! The box probability is rewritten as an integral over the unit cube of
//! dimension d-1 by sequentially conditioning along the Cholesky factor;
//! that integral is evaluated on a Richtmyer lattice (generators sqrt(p_i)
//! for primes p_i, with the baker's transform) under independent random
//! shifts.  The spread of the per-shift means gives the standard error.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::cdf::{std_normal_cdf, std_normal_quantile};
use crate::numerics::rng::RngStream;

/// Number of independent random shifts.
pub const QMC_RANDOMIZATIONS: usize = 16;

/// Per-shift point budget; the lattice is extensible, so points accumulate
/// across refinement rounds rather than being recomputed.
pub const QMC_MAX_POINTS_PER_SHIFT: usize = 1 << 20;

const QMC_INITIAL_POINTS: usize = 1 << 10;

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

/// A box-probability estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct QmcProbability {
    pub value: f64,
    pub std_error: f64,
}

fn phi(x: f64) -> f64 {
    // Clamping keeps the argument finite; the cdf is saturated far before
    // +/-40 in double precision anyway.
    std_normal_cdf(x.clamp(-40.0, 40.0)).expect("clamped argument is finite")
}

/// One evaluation of the conditioned integrand at cube point `w`.
fn genz_integrand(
    chol: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    w: &[f64],
    y: &mut [f64],
) -> f64 {
    let d = lower.len();
    let mut dlo = phi(lower[0] / chol[(0, 0)]);
    let mut dhi = phi(upper[0] / chol[(0, 0)]);
    let mut p = dhi - dlo;
    for i in 1..d {
        if p <= 0.0 {
            return 0.0;
        }
        let q = (dlo + w[i - 1] * (dhi - dlo)).clamp(1e-300, 1.0 - f64::EPSILON / 2.0);
        y[i - 1] = std_normal_quantile(q).expect("clamped quantile argument");
        let mut t = 0.0;
        for j in 0..i {
            t += chol[(i, j)] * y[j];
        }
        let lii = chol[(i, i)];
        dlo = phi((lower[i] - t) / lii);
        dhi = phi((upper[i] - t) / lii);
        p *= (dhi - dlo).max(0.0);
    }
    p
}

/// Estimates P[lower < X < upper] for X ~ N_d(0, L L^T) with `chol = L`,
/// refining until `3 * std_error <= tol` or the point budget is exhausted
/// (then an accuracy error carrying the estimate).
///
/// The box must already be centred: callers subtract the mean first.
pub fn qmc_box_probability(
    chol: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    tol: f64,
    rng: &mut RngStream,
) -> Result<QmcProbability> {
    let d = lower.len();
    if d == 0 || upper.len() != d || chol.nrows() != d || chol.ncols() != d {
        return Err(Error::domain("qmc_box_probability: dimension mismatch"));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!(
            "qmc_box_probability: tol must be positive, got {tol}"
        )));
    }
    if d == 1 {
        let value = phi(upper[0] / chol[(0, 0)]) - phi(lower[0] / chol[(0, 0)]);
        return Ok(QmcProbability {
            value: value.clamp(0.0, 1.0),
            std_error: 0.0,
        });
    }
    let n_dims = d - 1;
    if n_dims > PRIMES.len() {
        return Err(Error::domain(format!(
            "qmc_box_probability: dimension {d} exceeds the supported maximum {}",
            PRIMES.len() + 1
        )));
    }
    let generators: Vec<f64> = PRIMES[..n_dims].iter().map(|&p| (p as f64).sqrt()).collect();
    let shifts: Vec<Vec<f64>> = (0..QMC_RANDOMIZATIONS)
        .map(|_| (0..n_dims).map(|_| rng.uniform()).collect())
        .collect();

    let mut sums = [0.0f64; QMC_RANDOMIZATIONS];
    let mut count = 0usize;
    let mut target = QMC_INITIAL_POINTS;
    let mut w = vec![0.0f64; n_dims];
    let mut y = vec![0.0f64; n_dims];

    loop {
        for (s, shift) in shifts.iter().enumerate() {
            let mut acc = 0.0;
            for k in (count + 1)..=target {
                let kf = k as f64;
                for j in 0..n_dims {
                    let x = kf * generators[j] + shift[j];
                    w[j] = (2.0 * (x - x.floor()) - 1.0).abs();
                }
                acc += genz_integrand(chol, lower, upper, &w, &mut y);
            }
            sums[s] += acc;
        }
        count = target;

        let means: Vec<f64> = sums.iter().map(|&s| s / count as f64).collect();
        let value = means.iter().sum::<f64>() / QMC_RANDOMIZATIONS as f64;
        let var = means.iter().map(|m| (m - value) * (m - value)).sum::<f64>()
            / (QMC_RANDOMIZATIONS as f64 * (QMC_RANDOMIZATIONS - 1) as f64);
        let std_error = var.sqrt();

        if 3.0 * std_error <= tol {
            return Ok(QmcProbability {
                value: value.clamp(0.0, 1.0),
                std_error,
            });
        }
        if count >= QMC_MAX_POINTS_PER_SHIFT {
            return Err(Error::Accuracy {
                message: format!(
                    "qmc_box_probability: tolerance {tol:e} not reached with {} points per shift",
                    count
                ),
                value: value.clamp(0.0, 1.0),
                error_estimate: 3.0 * std_error,
            });
        }
        target = (count * 2).min(QMC_MAX_POINTS_PER_SHIFT);
    }
}
