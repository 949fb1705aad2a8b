//! Maximal points of a Poisson process on a triangle, counted in two strips
//! near the hypotenuse.
//!
//! A Poisson process of intensity λ falls on the unit right triangle
//! Γ = {(x, y): x, y ≥ 0, x + y ≤ 1}.  A point is maximal when no other
//! point weakly dominates it in both coordinates.  With the hypotenuse
//! distance s = √λ·(1 − x − y), the strip E_i collects points with
//! b_i < s ≤ d_i, and Y_i counts the maximal points in E_i.  As λ grows the
//! moments of (Y₁, Y₂) scale like √λ times constants given by iterated
//! Gaussian-kernel integrals, evaluated here by adaptive quadrature.

use std::cell::{Cell, RefCell};

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};
use crate::numerics::quad::integrate_1d;
use crate::numerics::rng::RngStream;

/// Largest total quadrature error accepted for the asymptotic moments.
pub const MOMENT_ERROR_BUDGET: f64 = 1e-8;

/// A Poisson intensity on the unit triangle together with two strip bands
/// 0 ≤ b₁ < d₁ ≤ b₂ < d₂ < ∞ measured in hypotenuse distance.
#[derive(Debug, Clone, Copy)]
pub struct MaxPointsModel {
    lambda: f64,
    strips: [(f64, f64); 2],
}

impl MaxPointsModel {
    /// # Errors
    ///
    /// Domain error on a nonpositive intensity or out-of-order strips.
    pub fn new(lambda: f64, strips: [(f64, f64); 2]) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(Error::domain(format!(
                "maxpoints: the intensity must be positive and finite, got {lambda}"
            )));
        }
        let ((b1, d1), (b2, d2)) = (strips[0], strips[1]);
        let all_finite = [b1, d1, b2, d2].iter().all(|v| v.is_finite());
        if !all_finite || !(0.0 <= b1 && b1 < d1 && d1 <= b2 && b2 < d2) {
            return Err(Error::domain(format!(
                "maxpoints: strips must satisfy 0 <= b1 < d1 <= b2 < d2, got ({b1}, {d1}), ({b2}, {d2})"
            )));
        }
        Ok(MaxPointsModel { lambda, strips })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn strips(&self) -> [(f64, f64); 2] {
        self.strips
    }
}

/// Indices of the points not weakly dominated in both coordinates by any
/// other point: sort by descending (x, y) and keep each point whose y
/// strictly exceeds every earlier one.  Returned in ascending index order.
pub fn maximal_point_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_unstable_by(|&i, &j| {
        points[j]
            .0
            .total_cmp(&points[i].0)
            .then(points[j].1.total_cmp(&points[i].1))
    });
    let mut best_y = f64::NEG_INFINITY;
    let mut keep = Vec::new();
    for &i in &order {
        if points[i].1 > best_y {
            keep.push(i);
            best_y = points[i].1;
        }
    }
    keep.sort_unstable();
    keep
}

fn strip_counts<I: Iterator<Item = (f64, f64)>>(model: &MaxPointsModel, maxima: I) -> Vec<i64> {
    let sqrt_lam = model.lambda.sqrt();
    let mut y = vec![0i64; 2];
    for (px, py) in maxima {
        let s = sqrt_lam * (1.0 - px - py);
        for (i, &(b, d)) in model.strips.iter().enumerate() {
            if s > b && s <= d {
                y[i] += 1;
            }
        }
    }
    y
}

/// Strip counts of the maximal points of an explicit point list in the
/// closed unit triangle, the deterministic hook for pinning down maximality
/// and strip membership.
///
/// # Errors
///
/// Domain error when a point falls outside the triangle.
pub fn mp_counts_for_points(model: &MaxPointsModel, points: &[(f64, f64)]) -> Result<Vec<i64>> {
    for &(x, y) in points {
        if !x.is_finite() || !y.is_finite() || x < 0.0 || y < 0.0 || x + y > 1.0 {
            return Err(Error::domain(format!(
                "maxpoints: point ({x}, {y}) is outside the unit triangle"
            )));
        }
    }
    let maxima = maximal_point_indices(points);
    Ok(strip_counts(model, maxima.into_iter().map(|i| points[i])))
}

/// Draws Poisson(λ/2) uniform points on the triangle and returns the
/// maximal-point counts of the two strips.
pub fn mp_sample(model: &MaxPointsModel, rng: &mut RngStream) -> Vec<i64> {
    let n = Poisson::new(model.lambda / 2.0)
        .expect("intensity validated positive")
        .sample(rng) as u64;
    let sqrt_lam = model.lambda.sqrt();
    let d2 = model.strips[1].1;
    // Only points with s <= d2 matter: both strips lie within that band, and
    // a dominating point never has a larger coordinate sum, hence never a
    // larger hypotenuse distance, so maximality among the band points equals
    // global maximality for them.  The filter uses the same expression as
    // the strip test so rounding cannot separate the two.
    let mut band = Vec::new();
    for _ in 0..n {
        let mut u = rng.uniform();
        let mut v = rng.uniform();
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        if sqrt_lam * (1.0 - u - v) <= d2 {
            band.push((u, v));
        }
    }
    let maxima = maximal_point_indices(&band);
    strip_counts(model, maxima.into_iter().map(|i| band[i]))
}

/// The √λ-scaled asymptotic moments of the strip counts.
#[derive(Debug, Clone)]
pub struct AsymptoticMoments {
    /// Per-strip Gaussian-kernel mass ∫_{b_i}^{d_i} e^{-x²/2} dx.
    pub m_hat: [f64; 2],
    /// Covariance constants; mean_i ~ m_hat_i √λ and cov ~ sigma √λ.
    pub sigma: DMatrix<f64>,
    /// m_hat scaled by √λ.
    pub mean: DVector<f64>,
    /// sigma scaled by √λ.
    pub cov: DMatrix<f64>,
    /// Total propagated quadrature error across all entries.
    pub quadrature_error: f64,
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp()
}

fn inv_phi(x: f64) -> f64 {
    (0.5 * x * x).exp()
}

/// One strip's kernel mass m̂, reciprocal-kernel head integral
/// A = ∫_0^b 1/φ, and iterated integral
/// T = ∫_b^d φ(z) ∫_b^z (1/φ(y)) ∫_y^d φ(x) dx dy dz, with a propagated
/// error bound.  Zero-width strips (b = d) yield zeros throughout.
struct StripParts {
    m_hat: f64,
    m_err: f64,
    head: f64,
    head_err: f64,
    iterated: f64,
    iterated_err: f64,
}

fn strip_parts(b: f64, d: f64) -> Result<StripParts> {
    let m = integrate_1d(phi, b, d, 1e-12)?;
    let head = integrate_1d(inv_phi, 0.0, b, 1e-12)?;

    let tail_err = Cell::new(0.0f64);
    let mid_err = Cell::new(0.0f64);
    let nested: RefCell<Option<Error>> = RefCell::new(None);
    let outer = integrate_1d(
        |z| {
            let mid = integrate_1d(
                |y| match integrate_1d(phi, y, d, 1e-13) {
                    Ok(q) => {
                        tail_err.set(tail_err.get().max(q.error_estimate));
                        inv_phi(y) * q.value
                    }
                    Err(e) => {
                        nested.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                },
                b,
                z,
                1e-13,
            );
            match mid {
                Ok(q) => {
                    mid_err.set(mid_err.get().max(q.error_estimate));
                    phi(z) * q.value
                }
                Err(e) => {
                    nested.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            }
        },
        b,
        d,
        1e-11,
    );
    if let Some(e) = nested.borrow_mut().take() {
        return Err(e);
    }
    let outer = outer?;

    // The tail integrals enter through a factor 1/phi(y) <= exp(d^2/2) over
    // a range of length at most d - b, and the mid integrals through
    // phi(z) <= 1 over the same range.
    let len = d - b;
    let iterated_err =
        outer.error_estimate + len * mid_err.get() + len * len * inv_phi(d) * tail_err.get();
    Ok(StripParts {
        m_hat: m.value,
        m_err: m.error_estimate,
        head: head.value,
        head_err: head.error_estimate,
        iterated: outer.value,
        iterated_err,
    })
}

/// The moment constants for a strip pair, independent of the intensity.
/// Split out from the model so degenerate strips (b = d) remain reachable
/// for testing the zero limits.
fn strip_sigma(strips: [(f64, f64); 2]) -> Result<([f64; 2], DMatrix<f64>, f64)> {
    let ((b1, d1), (b2, d2)) = (strips[0], strips[1]);
    let parts = [strip_parts(b1, d1)?, strip_parts(b2, d2)?];
    let mut total_err = parts[0].m_err + parts[1].m_err;

    let mut sigma = DMatrix::zeros(2, 2);
    for (i, (b, d)) in [(b1, d1), (b2, d2)].into_iter().enumerate() {
        let p = &parts[i];
        let edge_drop = phi(b) - phi(d);
        sigma[(i, i)] = p.m_hat + 2.0 * p.m_hat * p.m_hat * p.head + 2.0 * p.iterated
            - 2.0 * p.m_hat * edge_drop;
        total_err += p.m_err * (1.0 + 4.0 * p.m_hat * p.head + 2.0 * edge_drop.abs())
            + 2.0 * p.m_hat * p.m_hat * p.head_err
            + 2.0 * p.iterated_err;
    }

    let gap_err = Cell::new(0.0f64);
    let nested: RefCell<Option<Error>> = RefCell::new(None);
    let gap = integrate_1d(
        |z| match integrate_1d(inv_phi, 0.0, z, 1e-13) {
            Ok(q) => {
                gap_err.set(gap_err.get().max(q.error_estimate));
                phi(z) * q.value
            }
            Err(e) => {
                nested.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        b1,
        d1,
        1e-11,
    );
    if let Some(e) = nested.borrow_mut().take() {
        return Err(e);
    }
    let gap = gap?;
    let gap_total_err = gap.error_estimate + (d1 - b1) * gap_err.get();

    let (m1, m2) = (parts[0].m_hat, parts[1].m_hat);
    let (drop1, drop2) = (phi(b1) - phi(d1), phi(b2) - phi(d2));
    let off = 2.0 * m2 * gap.value - (m1 * drop2 + m2 * drop1);
    sigma[(0, 1)] = off;
    sigma[(1, 0)] = off;
    total_err += 2.0 * (parts[1].m_err * gap.value.abs() + m2 * gap_total_err)
        + parts[0].m_err * drop2.abs()
        + parts[1].m_err * drop1.abs();

    Ok(([m1, m2], sigma, total_err))
}

/// Evaluates the moment constants by nested adaptive quadrature and scales
/// them by √λ.
///
/// # Errors
///
/// Accuracy error when the propagated quadrature error exceeds
/// `MOMENT_ERROR_BUDGET`; domain error if an integrand overflows.
pub fn mp_moments_asymptotic(model: &MaxPointsModel) -> Result<AsymptoticMoments> {
    let (m_hat, sigma, quadrature_error) = strip_sigma(model.strips)?;
    if quadrature_error > MOMENT_ERROR_BUDGET {
        return Err(Error::Accuracy {
            message: format!(
                "mp_moments_asymptotic: propagated quadrature error {quadrature_error:e} exceeds the budget {MOMENT_ERROR_BUDGET:e}"
            ),
            value: quadrature_error,
            error_estimate: quadrature_error,
        });
    }
    let scale = model.lambda.sqrt();
    Ok(AsymptoticMoments {
        m_hat,
        mean: DVector::from_iterator(2, m_hat.iter().map(|&m| m * scale)),
        cov: &sigma * scale,
        sigma,
        quadrature_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::make_rng;
    use approx::assert_abs_diff_eq;

    fn reference_model(lambda: f64) -> MaxPointsModel {
        MaxPointsModel::new(lambda, [(0.0, 1.0), (1.0, 2.0)]).unwrap()
    }

    fn triangle_points(n: usize, rng: &mut RngStream) -> Vec<(f64, f64)> {
        (0..n)
            .map(|_| {
                let mut u = rng.uniform();
                let mut v = rng.uniform();
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                (u, v)
            })
            .collect()
    }

    fn brute_maximal(points: &[(f64, f64)]) -> Vec<usize> {
        (0..points.len())
            .filter(|&i| {
                !points.iter().enumerate().any(|(j, q)| {
                    j != i && q.0 >= points[i].0 && q.1 >= points[i].1
                })
            })
            .collect()
    }

    #[test]
    fn reference_strip_moments_match_the_quadrature_oracle() {
        let m = mp_moments_asymptotic(&reference_model(1.0)).unwrap();
        assert_abs_diff_eq!(m.m_hat[0], 0.855_624_391_892_148_8, epsilon = 1e-9);
        assert_abs_diff_eq!(m.m_hat[1], 0.340_663_621_430_459_4, epsilon = 1e-9);
        assert_abs_diff_eq!(m.sigma[(0, 0)], 0.637_563_312_666_069_45, epsilon = 1e-9);
        assert_abs_diff_eq!(m.sigma[(1, 1)], 0.410_015_347_680_988_94, epsilon = 1e-9);
        assert_abs_diff_eq!(m.sigma[(0, 1)], -0.246_494_421_500_366_19, epsilon = 1e-9);
        assert!(m.quadrature_error <= MOMENT_ERROR_BUDGET);
        assert!(m.quadrature_error > 0.0);
    }

    #[test]
    fn moments_scale_with_the_square_root_of_the_intensity() {
        let m = mp_moments_asymptotic(&reference_model(10_000.0)).unwrap();
        assert_abs_diff_eq!(m.mean[0], 100.0 * m.m_hat[0], epsilon = 1e-12);
        assert_abs_diff_eq!(m.cov[(0, 1)], 100.0 * m.sigma[(0, 1)], epsilon = 1e-12);
    }

    #[test]
    fn degenerate_strip_has_zero_moments() {
        let ([m1, m2], sigma, err) = strip_sigma([(0.5, 0.5), (1.0, 2.0)]).unwrap();
        assert_eq!(m1, 0.0);
        assert!(m2 > 0.3);
        assert_eq!(sigma[(0, 0)], 0.0);
        assert_eq!(sigma[(0, 1)], 0.0);
        assert!(sigma[(1, 1)] > 0.0);
        assert!(err <= MOMENT_ERROR_BUDGET);
    }

    #[test]
    fn sweep_matches_pairwise_domination_brute_force() {
        for (seed, n) in [(1u64, 1usize), (2, 2), (3, 10), (4, 100), (5, 500)] {
            let mut rng = make_rng(61, seed);
            let points = triangle_points(n, &mut rng);
            assert_eq!(maximal_point_indices(&points), brute_maximal(&points));
        }
    }

    #[test]
    fn band_restriction_preserves_maximality() {
        let mut rng = make_rng(67, 0);
        for _ in 0..300 {
            let lambda = 4.0 + rng.uniform() * 400.0;
            let d2 = 0.1 + rng.uniform() * 1.9;
            let sqrt_lam = lambda.sqrt();
            let points = triangle_points(80, &mut rng);
            let in_band = |p: &(f64, f64)| sqrt_lam * (1.0 - p.0 - p.1) <= d2;

            let full: Vec<usize> = maximal_point_indices(&points)
                .into_iter()
                .filter(|&i| in_band(&points[i]))
                .collect();
            let band: Vec<(f64, f64)> = points.iter().copied().filter(|p| in_band(p)).collect();
            let banded: Vec<(f64, f64)> = maximal_point_indices(&band)
                .into_iter()
                .map(|i| band[i])
                .collect();
            let full_points: Vec<(f64, f64)> = full.iter().map(|&i| points[i]).collect();
            assert_eq!(full_points, banded);
        }
    }

    #[test]
    fn hand_built_points_count_in_the_expected_strips() {
        let model = MaxPointsModel::new(4.0, [(0.0, 1.0), (1.0, 2.0)]).unwrap();
        // Only (0.6, 0.35) is maximal; its hypotenuse distance is 0.1.
        let points = [(0.1, 0.1), (0.25, 0.25), (0.6, 0.35)];
        assert_eq!(mp_counts_for_points(&model, &points).unwrap(), vec![1, 0]);
        // A single point at distance exactly 1 lands in the first strip
        // (upper-closed) and not the second (lower-open).
        assert_eq!(
            mp_counts_for_points(&model, &[(0.25, 0.25)]).unwrap(),
            vec![1, 0]
        );
        // The origin alone sits at distance 2, the second strip's closed end.
        assert_eq!(
            mp_counts_for_points(&model, &[(0.0, 0.0)]).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn empty_process_yields_zero_counts() {
        let model = reference_model(1e-8);
        let mut rng = make_rng(71, 0);
        assert_eq!(mp_sample(&model, &mut rng), vec![0, 0]);
    }

    #[test]
    fn sample_means_approach_the_asymptotic_means() {
        let model = reference_model(10_000.0);
        let asym = mp_moments_asymptotic(&model).unwrap();
        let reps = 2000;
        let mut rng = make_rng(73, 0);
        let mut sums = [0.0f64; 2];
        for _ in 0..reps {
            let y = mp_sample(&model, &mut rng);
            sums[0] += y[0] as f64;
            sums[1] += y[1] as f64;
        }
        for i in 0..2 {
            let mean = sums[i] / reps as f64;
            let target = asym.mean[i];
            assert!(
                (mean - target).abs() / target < 0.05,
                "strip {i}: mean {mean} vs asymptotic {target}"
            );
        }
    }

    #[test]
    fn covariance_formula_cross_checked_by_monte_carlo() {
        // sigma_12's distinctive piece is the iterated integral
        // G = int_{b1}^{d1} phi(z) int_0^z (1/phi(y)) dy dz, re-evaluated
        // here as a 2-D Monte Carlo average over the bounding rectangle.
        let (b1, d1) = (0.0, 1.0);
        let (b2, d2) = (1.0, 2.0);
        let asym = mp_moments_asymptotic(&reference_model(1.0)).unwrap();
        let reps = 200_000;
        let mut rng = make_rng(79, 0);
        let area = (d1 - b1) * d1;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..reps {
            let z = b1 + rng.uniform() * (d1 - b1);
            let y = rng.uniform() * d1;
            let val = if y < z { phi(z) * inv_phi(y) } else { 0.0 };
            sum += val;
            sumsq += val * val;
        }
        let mean = sum / reps as f64;
        let var = (sumsq - sum * sum / reps as f64) / (reps as f64 - 1.0);
        let g_mc = mean * area;
        let g_se = (var / reps as f64).sqrt() * area;
        let (m1, m2) = (asym.m_hat[0], asym.m_hat[1]);
        let off_mc = 2.0 * m2 * g_mc - (m1 * (phi(b2) - phi(d2)) + m2 * (phi(b1) - phi(d1)));
        let tol = 3.0 * 2.0 * m2 * g_se + 1e-8;
        assert!(
            (off_mc - asym.sigma[(0, 1)]).abs() <= tol,
            "MC {off_mc} vs quadrature {} (tol {tol})",
            asym.sigma[(0, 1)]
        );
    }

    #[test]
    fn far_strips_exceed_the_error_budget() {
        let model = MaxPointsModel::new(1.0, [(0.0, 1.0), (1.0, 6.0)]).unwrap();
        assert!(matches!(
            mp_moments_asymptotic(&model),
            Err(Error::Accuracy { .. })
        ));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(MaxPointsModel::new(0.0, [(0.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(MaxPointsModel::new(f64::NAN, [(0.0, 1.0), (1.0, 2.0)]).is_err());
        assert!(MaxPointsModel::new(1.0, [(-0.1, 1.0), (1.0, 2.0)]).is_err());
        assert!(MaxPointsModel::new(1.0, [(0.5, 0.5), (1.0, 2.0)]).is_err());
        assert!(MaxPointsModel::new(1.0, [(0.0, 1.5), (1.0, 2.0)]).is_err());
        assert!(MaxPointsModel::new(1.0, [(0.0, 1.0), (1.0, f64::INFINITY)]).is_err());
        let model = reference_model(1.0);
        assert!(mp_counts_for_points(&model, &[(0.7, 0.7)]).is_err());
        assert!(mp_counts_for_points(&model, &[(-0.1, 0.2)]).is_err());
    }
}
