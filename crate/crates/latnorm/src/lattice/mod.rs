//! The discrete normal distribution DN_d(mu, V) on the integer lattice.
//!
//! DN_d assigns to each integer vector `z` the probability that a continuous
//! N_d(mu, V) draw falls in the unit box centred at `z`.  Box probabilities
//! use a closed form for d = 1 and diagonal covariances, a deterministic
//! bivariate rectangle algorithm for d = 2, and randomized quasi-Monte-Carlo
//! for correlated d >= 3.

pub mod bvn;
pub mod qmc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::numerics::cdf::{std_normal_cdf, std_normal_quantile};
use crate::numerics::quad::DEFAULT_QUAD_TOL;
use crate::numerics::rng::{make_rng, RngStream};

pub use qmc::QmcProbability;

/// Absolute accuracy floor of the deterministic (d <= 2 and diagonal)
/// box-probability paths; tolerances below it cannot be certified.
pub const DETERMINISTIC_TOL_FLOOR: f64 = 1e-14;

/// Mean and covariance of a discrete normal on ℤ^d, validated at
/// construction (symmetric, positive definite) with the Cholesky factor and
/// eigenvalue range cached.
#[derive(Debug, Clone)]
pub struct DnParams {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    lambda_min: f64,
    lambda_max: f64,
}

impl DnParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        if mu.len() != sigma.nrows() {
            return Err(Error::domain(format!(
                "DnParams: mean has dimension {} but covariance is {}x{}",
                mu.len(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("DnParams: mean has a non-finite entry"));
        }
        let (lambda_min, lambda_max) = linalg::check_covariance(&sigma)?;
        let chol = linalg::cholesky_lower(&sigma)?;
        Ok(DnParams {
            mu,
            sigma,
            chol,
            lambda_min,
            lambda_max,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn cholesky_lower(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// Condition number lambda_max / lambda_min of the covariance.
    pub fn condition_number(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    fn is_diagonal(&self) -> bool {
        let d = self.dim();
        (0..d).all(|i| (0..d).all(|j| i == j || self.sigma[(i, j)] == 0.0))
    }
}

/// An axis-aligned box with finite corners, open above:
/// `{x : lower_i <= x_i < upper_i}` (the boundary carries no normal mass, so
/// only the strict ordering of the corners matters).
#[derive(Debug, Clone)]
pub struct LatticeBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl LatticeBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::domain("LatticeBox: corner dimensions differ"));
        }
        if lower.len() == 0 {
            return Err(Error::domain("LatticeBox: dimension must be at least 1"));
        }
        for i in 0..lower.len() {
            if !lower[i].is_finite() || !upper[i].is_finite() {
                return Err(Error::domain("LatticeBox: corners must be finite"));
            }
            if !(lower[i] < upper[i]) {
                return Err(Error::domain(format!(
                    "LatticeBox: lower[{i}] = {} is not below upper[{i}] = {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(LatticeBox { lower, upper })
    }

    /// The unit box `[z - 1/2, z + 1/2)` around an integer vector.
    pub fn unit_cell(z: &[i64]) -> Self {
        let lower = DVector::from_iterator(z.len(), z.iter().map(|&zi| zi as f64 - 0.5));
        let upper = DVector::from_iterator(z.len(), z.iter().map(|&zi| zi as f64 + 0.5));
        LatticeBox { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }
}

/// P[X in box] for X ~ N_d(mu, V), to absolute accuracy `tol`.
///
/// Deterministic for d <= 2 and for diagonal covariances in any dimension;
/// correlated d >= 3 uses randomized QMC on an internal fixed stream, so the
/// result is still a pure function of the inputs.  Callers wanting control
/// over the randomization (or the standard error itself) should use
/// [`box_probability_qmc`].
pub fn box_probability(params: &DnParams, bx: &LatticeBox, tol: f64) -> Result<f64> {
    if bx.dim() != params.dim() {
        return Err(Error::domain(format!(
            "box_probability: box dimension {} does not match parameters ({})",
            bx.dim(),
            params.dim()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::domain(format!(
            "box_probability: tol must be positive, got {tol}"
        )));
    }
    let d = params.dim();

    if d == 1 || params.is_diagonal() {
        let mut p = 1.0;
        for i in 0..d {
            let s = params.sigma[(i, i)].sqrt();
            let hi = std_normal_cdf(((bx.upper[i] - params.mu[i]) / s).clamp(-40.0, 40.0))?;
            let lo = std_normal_cdf(((bx.lower[i] - params.mu[i]) / s).clamp(-40.0, 40.0))?;
            p *= (hi - lo).max(0.0);
        }
        return certify_deterministic(p, tol);
    }
    if d == 2 {
        let s1 = params.sigma[(0, 0)].sqrt();
        let s2 = params.sigma[(1, 1)].sqrt();
        let r = params.sigma[(0, 1)] / (s1 * s2);
        let p = bvn::bvn_rectangle(
            (bx.lower[0] - params.mu[0]) / s1,
            (bx.upper[0] - params.mu[0]) / s1,
            (bx.lower[1] - params.mu[1]) / s2,
            (bx.upper[1] - params.mu[1]) / s2,
            r,
        );
        return certify_deterministic(p, tol);
    }

    let mut rng = make_rng(0x6c61_7474_6e6f_726d, 0);
    box_probability_qmc(params, bx, tol, &mut rng).map(|e| e.value)
}

fn certify_deterministic(p: f64, tol: f64) -> Result<f64> {
    let p = p.clamp(0.0, 1.0);
    if tol < DETERMINISTIC_TOL_FLOOR {
        return Err(Error::Accuracy {
            message: format!(
                "box_probability: requested tolerance {tol:e} is below the deterministic \
                 accuracy floor {DETERMINISTIC_TOL_FLOOR:e}"
            ),
            value: p,
            error_estimate: DETERMINISTIC_TOL_FLOOR,
        });
    }
    Ok(p)
}

/// The QMC estimator for P[X in box], with its standard error, refining
/// until `3 * std_error <= tol` or the point budget is exhausted.  Works for
/// any d >= 1 (at d <= 2 it serves as a cross-check of the deterministic
/// paths).
pub fn box_probability_qmc(
    params: &DnParams,
    bx: &LatticeBox,
    tol: f64,
    rng: &mut RngStream,
) -> Result<QmcProbability> {
    if bx.dim() != params.dim() {
        return Err(Error::domain(format!(
            "box_probability_qmc: box dimension {} does not match parameters ({})",
            bx.dim(),
            params.dim()
        )));
    }
    qmc::qmc_box_probability(
        &params.chol,
        &(bx.lower() - params.mu()),
        &(bx.upper() - params.mu()),
        tol,
        rng,
    )
}

/// Point mass of DN_d(mu, V) at the integer vector `z`: the normal mass of
/// the unit box around `z`, evaluated to the default tolerance.
pub fn dn_pmf(params: &DnParams, z: &[i64]) -> Result<f64> {
    if z.len() != params.dim() {
        return Err(Error::domain(format!(
            "dn_pmf: point dimension {} does not match parameters ({})",
            z.len(),
            params.dim()
        )));
    }
    box_probability(params, &LatticeBox::unit_cell(z), DEFAULT_QUAD_TOL)
}

/// Draws from DN_d(mu, V) by sampling the continuous normal and rounding
/// each coordinate to the integer whose unit box contains it.  This is exact
/// because the box masses are exactly the rounding cells.
pub fn dn_sample(params: &DnParams, rng: &mut RngStream) -> Vec<i64> {
    let d = params.dim();
    let xi = DVector::from_iterator(d, (0..d).map(|_| rng.standard_normal()));
    let x = params.mu() + &params.chol * xi;
    x.iter().map(|&v| (v + 0.5).floor() as i64).collect()
}

/// Cap on enumerated lattice cells.  Table construction and TV evaluation
/// enumerate the cells of a support ball, so a target whose standard
/// deviations put more cells than this inside the tail radius is refused
/// instead of exhausting memory.
pub const LATTICE_ENUM_BUDGET: usize = 2_000_000;

/// The integer vectors within Euclidean distance `radius` of `center`,
/// enumerated coordinate by coordinate with the residual-radius prune.
///
/// # Errors
///
/// Budget error when the ball holds more than `LATTICE_ENUM_BUDGET` cells.
pub fn lattice_ball(center: &DVector<f64>, radius: f64) -> Result<Vec<Vec<i64>>> {
    fn recurse(
        center: &DVector<f64>,
        radius_sq: f64,
        used: f64,
        prefix: &mut Vec<i64>,
        out: &mut Vec<Vec<i64>>,
    ) -> bool {
        let i = prefix.len();
        if i == center.len() {
            if out.len() == LATTICE_ENUM_BUDGET {
                return false;
            }
            out.push(prefix.clone());
            return true;
        }
        let slack = (radius_sq - used).max(0.0).sqrt();
        let lo = (center[i] - slack).ceil() as i64;
        let hi = (center[i] + slack).floor() as i64;
        for z in lo..=hi {
            let dz = z as f64 - center[i];
            let used_next = used + dz * dz;
            if used_next <= radius_sq {
                prefix.push(z);
                let ok = recurse(center, radius_sq, used_next, prefix, out);
                prefix.pop();
                if !ok {
                    return false;
                }
            }
        }
        true
    }
    let mut out = Vec::new();
    if radius >= 0.0 && !recurse(center, radius * radius, 0.0, &mut Vec::new(), &mut out) {
        return Err(Error::budget(format!(
            "lattice_ball: more than {LATTICE_ENUM_BUDGET} cells within radius {radius:.3e} \
             in dimension {}",
            center.len()
        )));
    }
    Ok(out)
}

/// A radius `r` with P[|X - mu| > r] <= epsilon for X ~ N_d(mu, V), from the
/// per-coordinate Gaussian tail of the largest-variance direction plus a
/// union bound over coordinates.
pub fn support_radius(params: &DnParams, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::domain(format!(
            "support_radius: epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    let d = params.dim() as f64;
    let per_coordinate_tail = (epsilon / (2.0 * d)).min(0.5);
    // Upper-tail quantile, computed in the lower tail for accuracy.
    let q = -std_normal_quantile(per_coordinate_tail)?;
    Ok((d * params.lambda_max).sqrt() * q.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn dn2_correlated() -> DnParams {
        DnParams::new(dvector![0.3, -0.2], dmatrix![1.2, 0.4; 0.4, 0.8]).unwrap()
    }

    #[test]
    fn construction_validates_inputs() {
        assert!(DnParams::new(dvector![0.0], dmatrix![1.0, 0.0; 0.0, 1.0]).is_err());
        assert!(DnParams::new(dvector![f64::NAN], dmatrix![1.0]).is_err());
        assert!(DnParams::new(dvector![0.0, 0.0], dmatrix![1.0, 0.2; 0.3, 1.0]).is_err());
        // Rank-deficient covariance must be rejected, not regularized.
        assert!(DnParams::new(dvector![0.0, 0.0], dmatrix![1.0, -1.0; -1.0, 1.0]).is_err());
        assert!(DnParams::new(dvector![0.0, 0.0], dmatrix![1.0, 0.2; 0.2, 0.9]).is_ok());
    }

    #[test]
    fn lattice_box_validates_corners() {
        assert!(LatticeBox::new(dvector![0.0], dvector![0.0]).is_err());
        assert!(LatticeBox::new(dvector![1.0], dvector![0.0]).is_err());
        assert!(LatticeBox::new(dvector![0.0, 0.0], dvector![1.0]).is_err());
        assert!(LatticeBox::new(dvector![0.0], dvector![f64::INFINITY]).is_err());
        assert!(LatticeBox::new(dvector![-0.5, -0.5], dvector![0.5, 0.5]).is_ok());
    }

    #[test]
    fn univariate_pmf_reference_values() {
        let std1 = DnParams::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let p0 = dn_pmf(&std1, &[0]).unwrap();
        assert!((p0 - 0.382_924_922_548_026_2).abs() <= 1e-13, "got {p0}");
        let p_plus = dn_pmf(&std1, &[1]).unwrap();
        let p_minus = dn_pmf(&std1, &[-1]).unwrap();
        assert!((p_plus - p_minus).abs() <= 1e-15);

        let shifted = DnParams::new(dvector![0.3], dmatrix![2.25]).unwrap();
        let p1 = dn_pmf(&shifted, &[1]).unwrap();
        assert!((p1 - 0.235_109_484_792_989_3).abs() <= 1e-13, "got {p1}");
    }

    #[test]
    fn diagonal_bivariate_pmf_is_a_product() {
        let std2 = DnParams::new(dvector![0.0, 0.0], DMatrix::identity(2, 2)).unwrap();
        let p = dn_pmf(&std2, &[0, 0]).unwrap();
        assert!((p - 0.146_631_496_308_411_87).abs() <= 1e-13, "got {p}");
    }

    #[test]
    fn correlated_bivariate_pmf_reference_values() {
        let params = dn2_correlated();
        let p00 = dn_pmf(&params, &[0, 0]).unwrap();
        assert!(
            (p00 - 0.146_819_237_207_131_388).abs() <= 1e-13,
            "got {p00}"
        );
        let p1m1 = dn_pmf(&params, &[1, -1]).unwrap();
        assert!(
            (p1m1 - 0.067_495_122_080_224_612_8).abs() <= 1e-13,
            "got {p1m1}"
        );
    }

    #[test]
    fn four_dimensional_diagonal_box_probability() {
        // Product-form reference for a diagonal covariance in d = 4.
        let mu = dvector![0.0, 1.0, -1.0, 2.0];
        let sigma = DMatrix::from_diagonal(&dvector![1.0, 4.0, 0.25, 9.0]);
        let params = DnParams::new(mu.clone(), sigma).unwrap();
        let bx = LatticeBox::new(
            DVector::from_iterator(4, mu.iter().map(|m| m - 1.0)),
            DVector::from_iterator(4, mu.iter().map(|m| m + 2.0)),
        )
        .unwrap();
        let p = box_probability(&params, &bx, 1e-10).unwrap();
        assert!(
            (p - 0.161_138_116_178_781_338).abs() <= 1e-12,
            "got {p}"
        );
    }

    #[test]
    fn trivariate_pmf_via_qmc_matches_reference() {
        let params = DnParams::new(
            DVector::zeros(3),
            dmatrix![1.0, 0.5, 0.25; 0.5, 1.0, 0.5; 0.25, 0.5, 1.0],
        )
        .unwrap();
        let mut rng = make_rng(11, 0);
        let est =
            box_probability_qmc(&params, &LatticeBox::unit_cell(&[0, 0, 0]), 1e-5, &mut rng)
                .unwrap();
        assert!(
            (est.value - 0.071_179_479_117_143_1).abs() <= 4.0 * est.std_error.max(1e-6),
            "got {} +/- {}",
            est.value,
            est.std_error
        );
    }

    #[test]
    fn near_singular_correlation_approaches_the_univariate_mass() {
        let d1 = 0.382_924_922_548_026_2;
        let mut prev = 0.0;
        for rho in [0.9, 0.99, 0.999, 0.9999] {
            let params =
                DnParams::new(dvector![0.0, 0.0], dmatrix![1.0, rho; rho, 1.0]).unwrap();
            let p = dn_pmf(&params, &[0, 0]).unwrap();
            assert!(p > prev, "mass should increase with rho, got {p} at {rho}");
            assert!(p <= d1 + 1e-12);
            prev = p;
        }
        assert!((prev - d1).abs() < 0.01, "rho=0.9999 gave {prev}");
    }

    #[test]
    fn pmf_normalizes_over_the_support_radius_ball() {
        let params = dn2_correlated();
        let r = support_radius(&params, 1e-9).unwrap();
        let mut total = 0.0;
        let (m0, m1) = (params.mu()[0], params.mu()[1]);
        let z0_range = ((m0 - r).floor() as i64)..=((m0 + r).ceil() as i64);
        for z0 in z0_range {
            for z1 in ((m1 - r).floor() as i64)..=((m1 + r).ceil() as i64) {
                let dx = z0 as f64 - m0;
                let dy = z1 as f64 - m1;
                if (dx * dx + dy * dy).sqrt() <= r {
                    total += dn_pmf(&params, &[z0, z1]).unwrap();
                }
            }
        }
        assert!(
            (1.0 - 2e-9..=1.0).contains(&total),
            "total mass {total} outside [1 - 2e-9, 1]"
        );
    }

    #[test]
    fn sampling_with_vanishing_variance_is_deterministic() {
        let params =
            DnParams::new(dvector![3.0, 7.0], DMatrix::identity(2, 2) * 1e-12).unwrap();
        let mut rng = make_rng(1, 1);
        for _ in 0..100 {
            assert_eq!(dn_sample(&params, &mut rng), vec![3, 7]);
        }
    }

    #[test]
    fn sample_rounding_is_half_open() {
        // x in [z - 1/2, z + 1/2) must map to z: check the boundary both ways.
        assert_eq!((0.5f64 + 0.5).floor() as i64, 1);
        assert_eq!((0.4999999999f64 + 0.5).floor() as i64, 0);
        assert_eq!((-0.5f64 + 0.5).floor() as i64, 0);
        assert_eq!((-0.5000000001f64 + 0.5).floor() as i64, -1);
    }

    #[test]
    fn empirical_pmf_of_samples_matches_the_mass_function() {
        let params = DnParams::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let mut rng = make_rng(2024, 5);
        let n = 1_000_000;
        let mut zeros = 0u64;
        for _ in 0..n {
            if dn_sample(&params, &mut rng)[0] == 0 {
                zeros += 1;
            }
        }
        let frac = zeros as f64 / n as f64;
        assert!(
            (frac - 0.382_924_922_548_026_2).abs() <= 0.0015,
            "empirical mass at 0: {frac}"
        );
    }

    #[test]
    fn empirical_mean_matches_an_integer_mean() {
        let params = DnParams::new(dvector![5.0, 5.0], DMatrix::identity(2, 2)).unwrap();
        let mut rng = make_rng(7, 3);
        let n = 1_000_000;
        let mut sums = [0i64; 2];
        for _ in 0..n {
            let z = dn_sample(&params, &mut rng);
            sums[0] += z[0];
            sums[1] += z[1];
        }
        for s in sums {
            let mean = s as f64 / n as f64;
            assert!((mean - 5.0).abs() <= 0.004, "mean {mean}");
        }
    }

    #[test]
    fn support_radius_reference_and_monotonicity() {
        let params = DnParams::new(dvector![0.0], dmatrix![1.0]).unwrap();
        let eps = 2.0 * 9.865_876_450_376_981_4e-10; // 2 * (1 - Phi(6))
        let r = support_radius(&params, eps).unwrap();
        assert!((r - 6.0).abs() <= 1e-9, "got {r}");

        assert_eq!(support_radius(&params, 1.0).unwrap(), 0.0);

        let mut prev = -1.0;
        for eps in [0.5, 0.1, 1e-3, 1e-6, 1e-9] {
            let r = support_radius(&params, eps).unwrap();
            assert!(r > prev);
            prev = r;
        }

        assert!(support_radius(&params, 0.0).is_err());
        assert!(support_radius(&params, 1.5).is_err());
    }

    #[test]
    fn lattice_ball_enumerates_the_disc() {
        let ball = lattice_ball(&dvector![0.0, 0.0], 2.0).unwrap();
        // |z| <= 2 in the plane: 13 points (origin, 4 axis units, 4 diagonals,
        // 4 axis points at distance 2).
        assert_eq!(ball.len(), 13);
        assert!(ball.contains(&vec![2, 0]));
        assert!(!ball.contains(&vec![2, 1]));

        let off_center = lattice_ball(&dvector![0.4], 0.5).unwrap();
        assert_eq!(off_center, vec![vec![0]]);

        assert!(lattice_ball(&dvector![0.5], 0.25).unwrap().is_empty());
    }

    #[test]
    fn lattice_ball_refuses_oversized_enumerations() {
        let err = lattice_ball(&dvector![0.0, 0.0], 5.0e4).unwrap_err();
        match err {
            Error::Budget(msg) => assert!(msg.contains("cells")),
            other => panic!("expected a budget error, got {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatches_are_domain_errors() {
        let params = dn2_correlated();
        assert!(dn_pmf(&params, &[0]).is_err());
        let bx = LatticeBox::new(dvector![0.0], dvector![1.0]).unwrap();
        assert!(box_probability(&params, &bx, 1e-10).is_err());
        assert!(box_probability(&params, &LatticeBox::unit_cell(&[0, 0]), 0.0).is_err());
    }
}
