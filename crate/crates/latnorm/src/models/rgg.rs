//! Triangle and induced 2-star counts of a random geometric graph on a
//! torus.
//!
//! M = n² points fall uniformly on the n-by-n torus; two points are joined
//! when their wraparound Euclidean distance is at most r.  W₁ counts point
//! triples with all three pairs joined (triangles) and W₂ those with exactly
//! two pairs joined (induced 2-stars, paths on three vertices).  Counting
//! bins points into an r-coarse grid so the expected cost is linear in M for
//! fixed r.

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;

/// A random geometric graph on the n-by-n torus with connection radius r.
/// The radius must satisfy 0 < r < n/4 so that grid cells at least r wide
/// tile the torus with non-degenerate adjacency.
#[derive(Debug, Clone, Copy)]
pub struct RggModel {
    n: u32,
    r: f64,
}

impl RggModel {
    /// # Errors
    ///
    /// Domain error when n is zero or r is outside (0, n/4).
    pub fn new(n: u32, r: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("rgg: the torus side must be positive"));
        }
        if !r.is_finite() || r <= 0.0 || r >= n as f64 / 4.0 {
            return Err(Error::domain(format!(
                "rgg: the radius must lie in (0, {}), got {r}",
                n as f64 / 4.0
            )));
        }
        Ok(RggModel { n, r })
    }

    /// Torus side length.
    pub fn side(&self) -> u32 {
        self.n
    }

    /// Connection radius.
    pub fn radius(&self) -> f64 {
        self.r
    }

    /// Number of points dropped per sample, n².
    pub fn num_points(&self) -> usize {
        (self.n as usize) * (self.n as usize)
    }
}

/// Monte Carlo estimates of the scaled triple-connection probabilities:
/// p1 = n⁴ P[three uniform points form a triangle] and p2 the same for an
/// induced 2-star.
#[derive(Debug, Clone, Copy)]
pub struct PairProbs {
    pub p1: f64,
    pub p1_std_error: f64,
    pub p2: f64,
    pub p2_std_error: f64,
}

fn torus_dist2(a: (f64, f64), b: (f64, f64), n: f64) -> f64 {
    let mut dx = (a.0 - b.0).abs();
    if dx > n - dx {
        dx = n - dx;
    }
    let mut dy = (a.1 - b.1).abs();
    if dy > n - dy {
        dy = n - dy;
    }
    dx * dx + dy * dy
}

/// Counts triangles and induced 2-stars among the given points.  Cells are
/// at least r wide, so joined points always sit in the same or in adjacent
/// cells (wrapping around); each unordered cell pair is scanned once via the
/// half-neighborhood offsets.  Triangles are counted once per their
/// lowest-indexed edge, and 2-stars as centred neighbor pairs minus three
/// per triangle.
fn count_triples(points: &[(f64, f64)], n: f64, r: f64) -> Vec<i64> {
    let m = points.len();
    if m < 3 {
        return vec![0, 0];
    }
    let target = (m as f64).sqrt().ceil() as usize;
    let k = ((n / r).floor() as usize).min(target.max(4));
    let cell = n / k as f64;
    let cell_of = |x: f64| ((x / cell) as usize).min(k - 1);

    let mut cells = vec![Vec::<u32>::new(); k * k];
    for (i, &(x, y)) in points.iter().enumerate() {
        cells[cell_of(y) * k + cell_of(x)].push(i as u32);
    }

    let r2 = r * r;
    let mut adj = vec![Vec::<u32>::new(); m];
    for cy in 0..k {
        for cx in 0..k {
            let base = &cells[cy * k + cx];
            for i in 0..base.len() {
                for j in i + 1..base.len() {
                    let (a, b) = (base[i], base[j]);
                    if torus_dist2(points[a as usize], points[b as usize], n) <= r2 {
                        adj[a as usize].push(b);
                        adj[b as usize].push(a);
                    }
                }
            }
            for &(dx, dy) in &[(1, 0), (1, 1), (0, 1), (k - 1, 1)] {
                let other = &cells[((cy + dy) % k) * k + (cx + dx) % k];
                for &a in base {
                    for &b in other {
                        if torus_dist2(points[a as usize], points[b as usize], n) <= r2 {
                            adj[a as usize].push(b);
                            adj[b as usize].push(a);
                        }
                    }
                }
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
    }

    let mut triangles: i64 = 0;
    let mut centred_pairs: i64 = 0;
    for u in 0..m {
        let deg = adj[u].len() as i64;
        centred_pairs += deg * (deg - 1) / 2;
        for &v in &adj[u] {
            if (v as usize) > u {
                triangles += common_above(&adj[u], &adj[v as usize], v);
            }
        }
    }
    vec![triangles, centred_pairs - 3 * triangles]
}

/// Number of values above v common to two sorted neighbor lists.
fn common_above(a: &[u32], b: &[u32], v: u32) -> i64 {
    let mut i = a.partition_point(|&x| x <= v);
    let mut j = b.partition_point(|&x| x <= v);
    let mut count = 0;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    count
}

/// Drops n² uniform points on the torus and returns (W₁, W₂).
pub fn rgg_sample(model: &RggModel, rng: &mut RngStream) -> Vec<i64> {
    let nf = model.n as f64;
    let points: Vec<(f64, f64)> = (0..model.num_points())
        .map(|_| (rng.uniform() * nf, rng.uniform() * nf))
        .collect();
    count_triples(&points, nf, model.r)
}

/// Counts (W₁, W₂) for an explicit point list, the deterministic hook used
/// to pin down the counting geometry.
///
/// # Errors
///
/// Domain error when a coordinate falls outside [0, n].
pub fn rgg_counts_for_points(model: &RggModel, points: &[(f64, f64)]) -> Result<Vec<i64>> {
    let nf = model.n as f64;
    for &(x, y) in points {
        if !x.is_finite() || !y.is_finite() || !(0.0..=nf).contains(&x) || !(0.0..=nf).contains(&y)
        {
            return Err(Error::domain(format!(
                "rgg: point ({x}, {y}) is outside the torus [0, {nf}]^2"
            )));
        }
    }
    Ok(count_triples(points, nf, model.r))
}

/// Estimates the scaled triple-connection probabilities p1 (triangle) and
/// p2 (induced 2-star) by simulating independent uniform point triples.
/// Any positive radius is accepted here; the n/4 restriction only concerns
/// the grid-binned counting.
///
/// # Errors
///
/// Domain error on a nonpositive radius, zero side, or zero replicates.
pub fn rgg_pair_probs_mc(r: f64, n: u32, reps: u64, rng: &mut RngStream) -> Result<PairProbs> {
    if n == 0 {
        return Err(Error::domain("rgg_pair_probs_mc: the torus side must be positive"));
    }
    if !r.is_finite() || r <= 0.0 {
        return Err(Error::domain(format!(
            "rgg_pair_probs_mc: the radius must be positive, got {r}"
        )));
    }
    if reps == 0 {
        return Err(Error::domain("rgg_pair_probs_mc: need at least one replicate"));
    }
    let nf = n as f64;
    let r2 = r * r;
    let mut triangles = 0u64;
    let mut stars = 0u64;
    for _ in 0..reps {
        let p: [(f64, f64); 3] = [
            (rng.uniform() * nf, rng.uniform() * nf),
            (rng.uniform() * nf, rng.uniform() * nf),
            (rng.uniform() * nf, rng.uniform() * nf),
        ];
        let close = (torus_dist2(p[0], p[1], nf) <= r2) as u8
            + (torus_dist2(p[0], p[2], nf) <= r2) as u8
            + (torus_dist2(p[1], p[2], nf) <= r2) as u8;
        match close {
            3 => triangles += 1,
            2 => stars += 1,
            _ => {}
        }
    }
    let n4 = nf.powi(4);
    let rate = |c: u64| c as f64 / reps as f64;
    let se = |p: f64| (p * (1.0 - p) / reps as f64).sqrt() * n4;
    Ok(PairProbs {
        p1: rate(triangles) * n4,
        p1_std_error: se(rate(triangles)),
        p2: rate(stars) * n4,
        p2_std_error: se(rate(stars)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::make_rng;
    use approx::assert_abs_diff_eq;

    /// O(M³) classifier over all triples, the oracle for the binned count.
    fn brute_counts(points: &[(f64, f64)], n: f64, r: f64) -> Vec<i64> {
        let r2 = r * r;
        let m = points.len();
        let mut w = vec![0i64; 2];
        for a in 0..m {
            for b in a + 1..m {
                for c in b + 1..m {
                    let close = (torus_dist2(points[a], points[b], n) <= r2) as u8
                        + (torus_dist2(points[a], points[c], n) <= r2) as u8
                        + (torus_dist2(points[b], points[c], n) <= r2) as u8;
                    match close {
                        3 => w[0] += 1,
                        2 => w[1] += 1,
                        _ => {}
                    }
                }
            }
        }
        w
    }

    #[test]
    fn hand_built_triples_are_classified_correctly() {
        let model = RggModel::new(20, 1.0).unwrap();
        let triangle = [(0.5, 0.5), (1.0, 0.5), (0.75, 0.9)];
        assert_eq!(rgg_counts_for_points(&model, &triangle).unwrap(), vec![1, 0]);
        let star = [(0.0, 0.0), (0.9, 0.0), (1.8, 0.0)];
        assert_eq!(rgg_counts_for_points(&model, &star).unwrap(), vec![0, 1]);
        let sparse = [(0.0, 0.0), (0.5, 0.0), (10.0, 10.0)];
        assert_eq!(rgg_counts_for_points(&model, &sparse).unwrap(), vec![0, 0]);
    }

    #[test]
    fn wraparound_pairs_are_joined_across_the_seam() {
        let model = RggModel::new(20, 1.0).unwrap();
        let seam = [(0.1, 10.0), (19.9, 10.0), (0.1, 10.8)];
        assert_eq!(rgg_counts_for_points(&model, &seam).unwrap(), vec![1, 0]);
    }

    #[test]
    fn binned_counts_match_the_brute_force_classifier() {
        let model = RggModel::new(5, 1.2).unwrap();
        let mut rng = make_rng(31, 0);
        for _ in 0..30 {
            let points: Vec<(f64, f64)> = (0..25)
                .map(|_| (rng.uniform() * 5.0, rng.uniform() * 5.0))
                .collect();
            let fast = rgg_counts_for_points(&model, &points).unwrap();
            let slow = brute_counts(&points, 5.0, 1.2);
            assert_eq!(fast, slow);
            let triples = 25 * 24 * 23 / 6;
            assert!(fast[0] >= 0 && fast[1] >= 0 && fast[0] + fast[1] <= triples);
        }
    }

    #[test]
    fn vanishing_radius_gives_no_counts() {
        let model = RggModel::new(20, 1e-9).unwrap();
        let mut rng = make_rng(37, 0);
        assert_eq!(rgg_sample(&model, &mut rng), vec![0, 0]);
    }

    #[test]
    fn sample_means_match_the_triple_probability_estimates() {
        let model = RggModel::new(20, 1.0).unwrap();
        let reps = 1500;
        let mut rng = make_rng(41, 0);
        let mut sums = [0.0f64; 2];
        let mut sqsums = [0.0f64; 2];
        for _ in 0..reps {
            let w = rgg_sample(&model, &mut rng);
            for i in 0..2 {
                sums[i] += w[i] as f64;
                sqsums[i] += (w[i] * w[i]) as f64;
            }
        }
        // Reference means from the scaled triple probabilities at n=20, r=1:
        // binom(400,3) n^-4 p_i with p1, p2 evaluated by quadrature.
        let expected = [383.014267985, 810.098343673];
        for i in 0..2 {
            let mean = sums[i] / reps as f64;
            let var = (sqsums[i] - sums[i] * sums[i] / reps as f64) / (reps as f64 - 1.0);
            let se = (var / reps as f64).sqrt();
            assert!(
                (mean - expected[i]).abs() <= 4.0 * se,
                "count {i}: mean {mean} vs {} (se {se})",
                expected[i]
            );
        }
    }

    #[test]
    fn saturating_radius_connects_every_triple() {
        let mut rng = make_rng(43, 0);
        let probs = rgg_pair_probs_mc(4.0, 5, 2000, &mut rng).unwrap();
        assert_abs_diff_eq!(probs.p1, 625.0, epsilon = 1e-12);
        assert_abs_diff_eq!(probs.p2, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(probs.p1_std_error, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrupling_replicates_halves_the_standard_error() {
        let mut rng = make_rng(47, 0);
        let small = rgg_pair_probs_mc(2.0, 5, 20_000, &mut rng).unwrap();
        let large = rgg_pair_probs_mc(2.0, 5, 80_000, &mut rng).unwrap();
        let ratio = large.p1_std_error / small.p1_std_error;
        assert!((0.4..=0.6).contains(&ratio), "se ratio {ratio}");
    }

    #[test]
    fn triangle_probability_is_scale_invariant_and_dominated() {
        let mut rng = make_rng(53, 0);
        let at10 = rgg_pair_probs_mc(1.0, 10, 400_000, &mut rng).unwrap();
        let at20 = rgg_pair_probs_mc(1.0, 20, 1_600_000, &mut rng).unwrap();
        let combined = (at10.p1_std_error.powi(2) + at20.p1_std_error.powi(2)).sqrt();
        assert!(
            (at10.p1 - at20.p1).abs() <= 4.0 * combined,
            "p1 {} vs {} (combined se {combined})",
            at10.p1,
            at20.p1
        );
        let pair_sq = (std::f64::consts::PI * 1.0f64 * 1.0).powi(2);
        assert!(at20.p1 + 4.0 * at20.p1_std_error < pair_sq);
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(RggModel::new(0, 0.5).is_err());
        assert!(RggModel::new(20, 0.0).is_err());
        assert!(RggModel::new(20, 5.0).is_err());
        assert!(RggModel::new(20, f64::NAN).is_err());
        let model = RggModel::new(20, 1.0).unwrap();
        assert!(rgg_counts_for_points(&model, &[(21.0, 0.0)]).is_err());
        assert!(rgg_counts_for_points(&model, &[(f64::NAN, 0.0)]).is_err());
        let mut rng = make_rng(1, 0);
        assert!(rgg_pair_probs_mc(0.0, 20, 10, &mut rng).is_err());
        assert!(rgg_pair_probs_mc(1.0, 20, 0, &mut rng).is_err());
    }
}
