//! Ingredients of the discrete-normal approximation bounds: the discrete
//! Stein operator and its normalization (m, c, Σ), Monte-Carlo moment sums
//! over a dependency decomposition, smoothness coefficients (random-walk
//! coupling and empirical point-shift), and the assembled rate expression.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dependency::{decomposition_sets, IntersectionGraph, NeighborhoodStats};
use crate::error::{Error, Result};
use crate::linalg;
use crate::numerics::rng::RngStream;
use crate::tv::{multinomial, tv_tables, PmfTable, TvEstimate, TV_BOOTSTRAP_RESAMPLES};

/// Normalization of a sum W with mean mu and covariance V for comparison
/// with the discrete normal: the integer scale m = ceil(Tr V / d), the
/// per-unit mean c = mu / m, and the per-unit covariance Sigma = V / m.
#[derive(Debug, Clone)]
pub struct SteinContext {
    mu: DVector<f64>,
    v: DMatrix<f64>,
    m: u64,
    c: DVector<f64>,
    sigma: DMatrix<f64>,
    cond: f64,
    gamma: f64,
}

impl SteinContext {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Condition number of Sigma (equivalently of V).
    pub fn cond(&self) -> f64 {
        self.cond
    }

    /// Uniform third-moment bound gamma >= 1 supplied by the model.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// The smallness threshold cond^(-3/2) / 72 appearing in the conditions
    /// of the indicator-class bounds.  Recorded for reference; no operation
    /// in this crate consumes it.
    pub fn delta0(&self) -> f64 {
        self.cond.powf(-1.5) / 72.0
    }
}

/// Builds the normalization from the mean and covariance of W together with
/// the third-moment bound gamma = max_j d^(-3/2) E|X^(j)|^3 (required to be
/// at least 1; models clamp from below).
pub fn context_from_moments(
    mu: DVector<f64>,
    v: DMatrix<f64>,
    gamma: f64,
) -> Result<SteinContext> {
    let d = mu.len();
    if d == 0 || v.nrows() != d || v.ncols() != d {
        return Err(Error::domain(format!(
            "context_from_moments: mean has dimension {d} but covariance is {}x{}",
            v.nrows(),
            v.ncols()
        )));
    }
    if mu.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain(
            "context_from_moments: mean has a non-finite entry",
        ));
    }
    if !(gamma >= 1.0) {
        return Err(Error::domain(format!(
            "context_from_moments: gamma must be at least 1, got {gamma}"
        )));
    }
    let (lambda_min, lambda_max) = linalg::check_covariance(&v)?;
    let q = v.trace() / d as f64;
    // Ceiling with protection against an upward rounding error turning an
    // exactly integral trace ratio into the next integer.
    let m = if (q - q.round()).abs() <= 1e-9 * q.max(1.0) {
        q.round()
    } else {
        q.ceil()
    } as u64;
    let m = m.max(1);
    let c = &mu / m as f64;
    let sigma = &v / m as f64;
    Ok(SteinContext {
        mu,
        v,
        m,
        c,
        sigma,
        cond: lambda_max / lambda_min,
        gamma,
    })
}

/// Applies the discrete Stein operator
/// `(A h)(z) = m Tr(Sigma D2 h(z)) - (z - m c)' Dh(z)`
/// with forward differences `D_i h(z) = h(z + e_i) - h(z)` and
/// `D2_{ik} h(z) = h(z + e_i + e_k) - h(z + e_i) - h(z + e_k) + h(z)`.
pub fn apply_stein_operator<F>(ctx: &SteinContext, h: F, z: &[i64]) -> Result<f64>
where
    F: Fn(&[i64]) -> f64,
{
    let d = ctx.dim();
    if z.len() != d {
        return Err(Error::domain(format!(
            "apply_stein_operator: point dimension {} does not match context ({d})",
            z.len()
        )));
    }
    let h0 = h(z);
    let mut shifted = vec![0.0; d];
    let mut zbuf = z.to_vec();
    for (i, hi) in shifted.iter_mut().enumerate() {
        zbuf[i] += 1;
        *hi = h(&zbuf);
        zbuf[i] -= 1;
    }
    let mut trace = 0.0;
    for i in 0..d {
        for k in 0..d {
            let hik = {
                zbuf[i] += 1;
                zbuf[k] += 1;
                let v = h(&zbuf);
                zbuf[i] -= 1;
                zbuf[k] -= 1;
                v
            };
            trace += ctx.sigma[(i, k)] * (hik - shifted[i] - shifted[k] + h0);
        }
    }
    let mut drift = 0.0;
    for i in 0..d {
        drift += (z[i] as f64 - ctx.m as f64 * ctx.c[i]) * (shifted[i] - h0);
    }
    Ok(ctx.m as f64 * trace - drift)
}

/// The fixed battery of test functions for the operator's near-fixed-point
/// property: coordinates, squares, one cross product, and two clipped
/// indicators anchored at `center`.
pub fn stein_test_battery(
    d: usize,
    center: &[i64],
) -> Vec<(String, Box<dyn Fn(&[i64]) -> f64 + Sync + Send>)> {
    assert_eq!(center.len(), d, "battery center must have dimension d");
    let mut battery: Vec<(String, Box<dyn Fn(&[i64]) -> f64 + Sync + Send>)> = Vec::new();
    for i in 0..d {
        battery.push((
            format!("coordinate_{i}"),
            Box::new(move |z: &[i64]| z[i] as f64),
        ));
        battery.push((
            format!("square_{i}"),
            Box::new(move |z: &[i64]| (z[i] * z[i]) as f64),
        ));
    }
    if d >= 2 {
        battery.push((
            "cross_01".to_string(),
            Box::new(move |z: &[i64]| (z[0] * z[1]) as f64),
        ));
    }
    let c0 = center[0];
    battery.push((
        "halfspace_0".to_string(),
        Box::new(move |z: &[i64]| if z[0] >= c0 { 1.0 } else { 0.0 }),
    ));
    let cs = center.to_vec();
    battery.push((
        "orthant".to_string(),
        Box::new(move |z: &[i64]| {
            if z.iter().zip(&cs).all(|(zi, ci)| zi >= ci) {
                1.0
            } else {
                0.0
            }
        }),
    ));
    battery
}

/// A sum W = Σ_j X^(j) of lattice vectors with a known intersection-graph
/// dependency structure, sampled one full replicate of summands at a time.
pub trait DecomposableModel: Sync {
    fn dim(&self) -> usize;
    fn graph(&self) -> &IntersectionGraph;
    /// E X^(j).
    fn summand_mean(&self, j: usize) -> DVector<f64>;
    /// One replicate of all summands X^(1..n), jointly distributed.
    fn sample_summands(&self, rng: &mut RngStream) -> Vec<DVector<f64>>;
}

/// A Monte-Carlo scalar with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McValue {
    pub value: f64,
    pub std_error: f64,
}

/// A neighborhood-sum second moment exceeding its expected ceiling d*m.
#[derive(Debug, Clone, Serialize)]
pub struct ZhatViolation {
    pub j: usize,
    pub k: Option<usize>,
    pub mean_sq: f64,
    pub bound: f64,
}

/// The moment sums of the dependency-decomposition bound.  Writing
/// a_j = |X^(j)| + |E X^(j)| and taking k over {j} and the neighbors of j:
///
/// - `h0`  = d^(-1/2) m^(-1) Σ_j E|X^(j)|
/// - `h1`  = d^(-1)   m^(-1) Σ_j Σ_k E{a_j |X^(k)|}
/// - `h21` = d^(-3/2) m^(-1) Σ_j E{a_j |Z^(j)|^2}
/// - `h22` = d^(-3/2) m^(-1) Σ_j Σ_k E{a_j |X^(k)| |Z^(j,k)|}
/// - `h23` = d^(-3/2) m^(-1) Σ_j Σ_k E{a_j |X^(k)|} E|Z^(j,k)|
/// - `h24` = d^(-3/2) m^(-1) Σ_j Σ_k E{a_j |X^(k)|} E|Z^(j)|
/// - `h2`  = max(h21, h22, h23, h24)
#[derive(Debug, Clone, Serialize)]
pub struct MomentSums {
    pub h0: McValue,
    pub h1: McValue,
    pub h21: McValue,
    pub h22: McValue,
    pub h23: McValue,
    pub h24: McValue,
    pub h2: f64,
    /// Plug-in estimate of max_j d^(-3/2) E|X^(j)|^3 (not clamped to 1).
    pub gamma_hat: f64,
    pub zhat_violations: Vec<ZhatViolation>,
    pub reps: u64,
    pub m_used: u64,
}

const MOMENT_BATCHES: u64 = 10;

struct PairInfo {
    j: usize,
    k: usize,
    zjk: Vec<usize>,
}

#[derive(Clone)]
struct BatchAcc {
    count: u64,
    abs_x: Vec<f64>,
    abs_x3: Vec<f64>,
    t21: Vec<f64>,
    zj: Vec<f64>,
    zj_sq: Vec<f64>,
    a: Vec<f64>,
    t22: Vec<f64>,
    zjk: Vec<f64>,
    zjk_sq: Vec<f64>,
}

impl BatchAcc {
    fn zeros(n: usize, pairs: usize) -> Self {
        BatchAcc {
            count: 0,
            abs_x: vec![0.0; n],
            abs_x3: vec![0.0; n],
            t21: vec![0.0; n],
            zj: vec![0.0; n],
            zj_sq: vec![0.0; n],
            a: vec![0.0; pairs],
            t22: vec![0.0; pairs],
            zjk: vec![0.0; pairs],
            zjk_sq: vec![0.0; pairs],
        }
    }
}

/// Monte-Carlo estimates of the moment sums for a decomposable model, with
/// the exact dimensional prefactors, using `m` as the normalization scale.
///
/// Estimates and standard errors come from 10 equal batches of replicates;
/// the product-of-expectations sums (h23, h24) are formed within each batch.
/// Replicates draw from substreams indexed by replicate number and batches
/// are combined in index order, so the result is independent of scheduling.
/// Second moments of the neighborhood sums are checked against the ceiling
/// d*m and excesses are reported, not errored.
pub fn moment_sums_mc<Mdl: DecomposableModel>(
    model: &Mdl,
    m: u64,
    reps: u64,
    rng: &RngStream,
) -> Result<MomentSums> {
    if reps < 100 {
        return Err(Error::domain(format!(
            "moment_sums_mc: need at least 100 replicates, got {reps}"
        )));
    }
    if m < 1 {
        return Err(Error::domain("moment_sums_mc: m must be at least 1"));
    }
    let d = model.dim();
    let graph = model.graph();
    let n = graph.num_summands();

    let mut zj_sets: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut pairs: Vec<PairInfo> = Vec::new();
    for j in 0..n {
        let base = decomposition_sets(graph, j, None)?;
        zj_sets.push(base.zj);
        pairs.push(PairInfo {
            j,
            k: j,
            zjk: Vec::new(),
        });
        for &k in graph.neighbors(j) {
            let sets = decomposition_sets(graph, j, Some(k))?;
            pairs.push(PairInfo {
                j,
                k,
                zjk: sets.zjk.expect("zjk is present for an adjacent pair"),
            });
        }
    }
    let means: Vec<f64> = (0..n).map(|j| model.summand_mean(j).norm()).collect();

    let base = reps / MOMENT_BATCHES;
    let extra = reps % MOMENT_BATCHES;
    let batch_bounds: Vec<(u64, u64)> = (0..MOMENT_BATCHES)
        .scan(0u64, |start, b| {
            let len = base + u64::from(b < extra);
            let range = (*start, *start + len);
            *start += len;
            Some(range)
        })
        .collect();

    let batches: Vec<BatchAcc> = batch_bounds
        .par_iter()
        .map(|&(lo, hi)| -> Result<BatchAcc> {
            let mut acc = BatchAcc::zeros(n, pairs.len());
            let mut z_sum = DVector::<f64>::zeros(d);
            for r in lo..hi {
                let mut sub = rng.substream(r);
                let xs = model.sample_summands(&mut sub);
                if xs.len() != n || xs.iter().any(|x| x.len() != d) {
                    return Err(Error::domain(format!(
                        "moment_sums_mc: replicate returned {} summands \
                         (expected {n} of dimension {d})",
                        xs.len()
                    )));
                }
                let norms: Vec<f64> = xs.iter().map(|x| x.norm()).collect();
                for j in 0..n {
                    let aj = norms[j] + means[j];
                    acc.abs_x[j] += norms[j];
                    acc.abs_x3[j] += norms[j].powi(3);
                    z_sum.fill(0.0);
                    for &l in &zj_sets[j] {
                        z_sum += &xs[l];
                    }
                    let zn = z_sum.norm();
                    acc.t21[j] += aj * zn * zn;
                    acc.zj[j] += zn;
                    acc.zj_sq[j] += zn * zn;
                }
                for (p, info) in pairs.iter().enumerate() {
                    let aj = norms[info.j] + means[info.j];
                    acc.a[p] += aj * norms[info.k];
                    if info.zjk.is_empty() {
                        continue;
                    }
                    z_sum.fill(0.0);
                    for &l in &info.zjk {
                        z_sum += &xs[l];
                    }
                    let zn = z_sum.norm();
                    acc.t22[p] += aj * norms[info.k] * zn;
                    acc.zjk[p] += zn;
                    acc.zjk_sq[p] += zn * zn;
                }
                acc.count += 1;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let df = d as f64;
    let c0 = 1.0 / (df.sqrt() * m as f64);
    let c1 = 1.0 / (df * m as f64);
    let c2 = 1.0 / (df.powf(1.5) * m as f64);

    let mut batch_h = vec![[0.0f64; 6]; batches.len()];
    for (b, acc) in batches.iter().enumerate() {
        let l = acc.count as f64;
        let h0 = c0 * acc.abs_x.iter().sum::<f64>() / l;
        let h1 = c1 * acc.a.iter().sum::<f64>() / l;
        let h21 = c2 * acc.t21.iter().sum::<f64>() / l;
        let h22 = c2 * acc.t22.iter().sum::<f64>() / l;
        let mut h23 = 0.0;
        let mut h24 = 0.0;
        for (p, info) in pairs.iter().enumerate() {
            let a_mean = acc.a[p] / l;
            h23 += a_mean * (acc.zjk[p] / l);
            h24 += a_mean * (acc.zj[info.j] / l);
        }
        batch_h[b] = [h0, h1, h21, h22, c2 * h23, c2 * h24];
    }
    let summarize = |idx: usize| -> McValue {
        let vals: Vec<f64> = batch_h.iter().map(|row| row[idx]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (vals.len() as f64 - 1.0);
        McValue {
            value: mean,
            std_error: (var / vals.len() as f64).sqrt(),
        }
    };
    let h0 = summarize(0);
    let h1 = summarize(1);
    let h21 = summarize(2);
    let h22 = summarize(3);
    let h23 = summarize(4);
    let h24 = summarize(5);

    let bound = df * m as f64;
    let mut zhat_violations = Vec::new();
    for j in 0..n {
        let mean_sq = batches.iter().map(|a| a.zj_sq[j]).sum::<f64>() / reps as f64;
        if mean_sq > bound {
            zhat_violations.push(ZhatViolation {
                j,
                k: None,
                mean_sq,
                bound,
            });
        }
    }
    for (p, info) in pairs.iter().enumerate() {
        if info.zjk.is_empty() {
            continue;
        }
        let mean_sq = batches.iter().map(|a| a.zjk_sq[p]).sum::<f64>() / reps as f64;
        if mean_sq > bound {
            zhat_violations.push(ZhatViolation {
                j: info.j,
                k: Some(info.k),
                mean_sq,
                bound,
            });
        }
    }

    let gamma_hat = (0..n)
        .map(|j| {
            batches.iter().map(|a| a.abs_x3[j]).sum::<f64>() / (reps as f64 * df.powf(1.5))
        })
        .fold(0.0f64, f64::max);

    Ok(MomentSums {
        h0,
        h1,
        h21,
        h22,
        h23,
        h24,
        h2: [h21.value, h22.value, h23.value, h24.value]
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max),
        gamma_hat,
        zhat_violations,
        reps,
        m_used: m,
    })
}

/// Smoothness of a sum containing an embedded random walk of effective
/// length T: the coupling bound sqrt(2 / (pi T)) plus the residual
/// probability eta, clipped to [0, 1].
pub fn mineka_smoothness_bound(t: f64, eta: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::domain(format!(
            "mineka_smoothness_bound: T must be positive, got {t}"
        )));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::domain(format!(
            "mineka_smoothness_bound: eta must lie in [0, 1], got {eta}"
        )));
    }
    Ok(((2.0 / (std::f64::consts::PI * t)).sqrt() + eta).clamp(0.0, 1.0))
}

/// Plug-in estimate of the point-shift smoothness
/// `sup_A |P[W in A] - P[W + e_i in A]|` from empirical samples of W:
/// the total variation between the empirical table and its shift by one in
/// coordinate `direction`, with a bootstrap standard error.
pub fn empirical_shift_tv<S>(
    sampler: S,
    direction: usize,
    reps: u64,
    rng: &RngStream,
) -> Result<TvEstimate>
where
    S: Fn(&mut RngStream) -> Vec<i64> + Sync,
{
    if reps < 10_000 {
        return Err(Error::domain(format!(
            "empirical_shift_tv: need at least 10000 replicates, got {reps}"
        )));
    }
    let draw_rng = rng.substream(0);
    let boot_rng = rng.substream(1);
    let samples: Vec<Vec<i64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut sub = draw_rng.substream(r);
            sampler(&mut sub)
        })
        .collect();
    let dim = samples[0].len();
    if direction >= dim {
        return Err(Error::domain(format!(
            "empirical_shift_tv: direction {direction} out of range for dimension {dim}"
        )));
    }
    let table = PmfTable::from_samples(&samples)?;
    let value = tv_tables(&table, &shift_table(&table, direction)?)?;

    let n = samples.len() as u64;
    let support: Vec<&Vec<i64>> = table.support().collect();
    let probs: Vec<f64> = support.iter().map(|z| table.prob(z)).collect();
    let replicates: Vec<f64> = (0..TV_BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut sub = boot_rng.substream(b as u64);
            let counts = multinomial(&mut sub, n, &probs);
            let entries: std::collections::BTreeMap<Vec<i64>, f64> = support
                .iter()
                .zip(&counts)
                .filter(|(_, &c)| c > 0)
                .map(|(z, &c)| ((*z).clone(), c as f64 / n as f64))
                .collect();
            let resampled = PmfTable::new(dim, entries)?;
            tv_tables(&resampled, &shift_table(&resampled, direction)?)
        })
        .collect::<Result<_>>()?;
    let mean = replicates.iter().sum::<f64>() / replicates.len() as f64;
    let var = replicates.iter().map(|t| (t - mean).powi(2)).sum::<f64>()
        / (replicates.len() - 1) as f64;

    Ok(TvEstimate {
        value,
        mc_std_error: var.sqrt(),
        tail_bound: 0.0,
    })
}

fn shift_table(p: &PmfTable, direction: usize) -> Result<PmfTable> {
    let entries = p
        .iter()
        .map(|(z, prob)| {
            let mut shifted = z.clone();
            shifted[direction] += 1;
            (shifted, prob)
        })
        .collect();
    PmfTable::new(p.dim(), entries)
}

/// The rate expression of the dependency-graph corollary, split into its
/// epsilon_W and m^(-1/2) parts (the universal constant is not included).
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
pub struct BoundBreakdown {
    pub d: usize,
    pub m: f64,
    pub dbar2: f64,
    pub gamma: f64,
    pub eps_w: f64,
    pub eps_w_term: f64,
    pub msqrt_term: f64,
    pub combined: f64,
}

/// Evaluates `d^3 log(m) (m^(-1/2) + eps_w) (d + 3 gamma dbar2)` and its two
/// additive parts.  `m` is real here so the formula can be probed off the
/// integer grid; model code passes the context's integer m.
pub fn corollary_rate(
    d: usize,
    m: f64,
    dbar2: f64,
    gamma: f64,
    eps_w: f64,
) -> Result<BoundBreakdown> {
    if d == 0 {
        return Err(Error::domain("corollary_rate: d must be at least 1"));
    }
    if !(m >= 2.0) {
        return Err(Error::domain(format!(
            "corollary_rate: m must be at least 2 so that log m is positive, got {m}"
        )));
    }
    if !(0.0..=1.0).contains(&eps_w) {
        return Err(Error::domain(format!(
            "corollary_rate: eps_w must lie in [0, 1], got {eps_w}"
        )));
    }
    if !(gamma >= 1.0) {
        return Err(Error::domain(format!(
            "corollary_rate: gamma must be at least 1, got {gamma}"
        )));
    }
    if !(dbar2 > 0.0) || !dbar2.is_finite() {
        return Err(Error::domain(format!(
            "corollary_rate: dbar2 must be positive and finite, got {dbar2}"
        )));
    }
    let prefactor = (d as f64).powi(3) * m.ln();
    let bracket = d as f64 + 3.0 * gamma * dbar2;
    Ok(BoundBreakdown {
        d,
        m,
        dbar2,
        gamma,
        eps_w,
        eps_w_term: prefactor * eps_w * bracket,
        msqrt_term: prefactor * bracket / m.sqrt(),
        combined: prefactor * (1.0 / m.sqrt() + eps_w) * bracket,
    })
}

/// The corollary rate for a normalized sum, with the neighborhood statistic
/// D̄² and the context's m and gamma.
pub fn corollary_bound(
    ctx: &SteinContext,
    stats: &NeighborhoodStats,
    eps_w: f64,
) -> Result<BoundBreakdown> {
    corollary_rate(ctx.dim(), ctx.m as f64, stats.dbar2, ctx.gamma, eps_w)
}

/// Greedy left-to-right selection of underlying-variable indices, outside
/// `excluded`, whose summand sets L_l are pairwise disjoint.  Variables on
/// which no summand depends are skipped since they cannot displace the sum.
pub fn greedy_disjoint_family(
    graph: &IntersectionGraph,
    excluded: &BTreeSet<usize>,
) -> Vec<usize> {
    let mut used = vec![false; graph.num_summands()];
    let mut chosen = Vec::new();
    for l in 0..graph.num_vars() {
        if excluded.contains(&l) {
            continue;
        }
        let touching = graph.summands_containing(l);
        if touching.is_empty() || touching.iter().any(|&j| used[j]) {
            continue;
        }
        chosen.push(l);
        for &j in touching {
            used[j] = true;
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dependency::{build_intersection_graph, neighborhood_stats};
    use crate::lattice::{dn_sample, DnParams};
    use crate::numerics::rng::make_rng;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn context_normalization_examples() {
        let ctx = context_from_moments(dvector![5.0], dmatrix![100.0], 1.0).unwrap();
        assert_eq!(ctx.m(), 100);
        assert_eq!(ctx.c()[0], 0.05);
        assert_eq!(ctx.sigma()[(0, 0)], 1.0);
        assert_eq!(ctx.cond(), 1.0);

        let ctx = context_from_moments(
            dvector![0.0, 0.0],
            DMatrix::from_diagonal(&dvector![3.0, 5.0]),
            1.0,
        )
        .unwrap();
        assert_eq!(ctx.m(), 4);
        assert_eq!(ctx.sigma()[(0, 0)], 0.75);
        assert_eq!(ctx.sigma()[(1, 1)], 1.25);
        assert!((ctx.cond() - 5.0 / 3.0).abs() <= 1e-15);

        let ctx =
            context_from_moments(DVector::zeros(3), DMatrix::identity(3, 3), 1.0).unwrap();
        assert_eq!(ctx.m(), 1);
        assert_eq!(ctx.sigma(), &DMatrix::identity(3, 3));
        assert_eq!(ctx.cond(), 1.0);
    }

    #[test]
    fn context_trace_stays_within_the_ceiling_slack() {
        let mut rng = make_rng(31, 0);
        for _ in 0..50 {
            let t = 0.5 + 40.0 * rng.uniform();
            let ctx = context_from_moments(dvector![0.0], dmatrix![t], 1.0).unwrap();
            let d = 1.0;
            assert!(ctx.m() >= 1);
            assert!(ctx.sigma().trace() <= d + d / ctx.m() as f64 + 1e-12);
        }
    }

    #[test]
    fn context_rejects_bad_inputs() {
        assert!(context_from_moments(dvector![0.0], dmatrix![1.0], 0.5).is_err());
        assert!(context_from_moments(dvector![0.0, 0.0], dmatrix![1.0], 1.0).is_err());
        assert!(
            context_from_moments(dvector![0.0, 0.0], dmatrix![1.0, -1.0; -1.0, 1.0], 1.0)
                .is_err()
        );
    }

    #[test]
    fn operator_on_linear_functions_is_pure_drift() {
        let ctx = context_from_moments(dvector![5.0], dmatrix![100.0], 1.0).unwrap();
        for z in [-3i64, 0, 7] {
            let got = apply_stein_operator(&ctx, |z: &[i64]| z[0] as f64, &[z]).unwrap();
            assert!((got - -(z as f64 - 5.0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn operator_on_squares_matches_hand_algebra() {
        let ctx = context_from_moments(dvector![3.0], dmatrix![25.0], 1.0).unwrap();
        let m = ctx.m() as f64;
        for z in [-2i64, 0, 4, 11] {
            let got =
                apply_stein_operator(&ctx, |z: &[i64]| (z[0] * z[0]) as f64, &[z]).unwrap();
            let want = 2.0 * m * ctx.sigma()[(0, 0)]
                - (z as f64 - m * ctx.c()[0]) * (2.0 * z as f64 + 1.0);
            assert!((got - want).abs() <= 1e-10, "z={z}: {got} vs {want}");
        }
    }

    #[test]
    fn operator_kills_constants() {
        let ctx = context_from_moments(
            dvector![1.0, -2.0],
            dmatrix![2.0, 0.5; 0.5, 3.0],
            1.0,
        )
        .unwrap();
        for z in [[0i64, 0], [5, -1], [-3, 2]] {
            assert_eq!(apply_stein_operator(&ctx, |_: &[i64]| 4.2, &z).unwrap(), 0.0);
        }
    }

    #[test]
    fn operator_cross_term_uses_the_off_diagonal() {
        let ctx = context_from_moments(
            dvector![0.0, 0.0],
            dmatrix![2.0, 0.8; 0.8, 2.0],
            1.0,
        )
        .unwrap();
        let m = ctx.m() as f64;
        let z = [2i64, -1];
        let got =
            apply_stein_operator(&ctx, |z: &[i64]| (z[0] * z[1]) as f64, &z).unwrap();
        // D2 of z0*z1 has zero diagonal and ones off it; the forward
        // differences are D_0 h = z1 and D_1 h = z0.
        let (z0, z1) = (z[0] as f64, z[1] as f64);
        let want = m * 2.0 * ctx.sigma()[(0, 1)]
            - ((z0 - m * ctx.c()[0]) * z1 + (z1 - m * ctx.c()[1]) * z0);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn operator_averages_small_on_discrete_normal_draws() {
        let mu = dvector![3.0];
        let v = dmatrix![25.0];
        let ctx = context_from_moments(mu.clone(), v.clone(), 1.0).unwrap();
        let params = DnParams::new(mu, v).unwrap();
        let battery = stein_test_battery(1, &[3]);
        let mut rng = make_rng(77, 0);
        let reps = 200_000;
        let draws: Vec<Vec<i64>> = (0..reps).map(|_| dn_sample(&params, &mut rng)).collect();
        for (name, h) in &battery {
            let vals: Vec<f64> = draws
                .iter()
                .map(|z| apply_stein_operator(&ctx, h.as_ref(), z).unwrap())
                .collect();
            let mean = vals.iter().sum::<f64>() / reps as f64;
            let var = vals.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                / (reps as f64 - 1.0);
            let se = (var / reps as f64).sqrt();
            assert!(
                mean.abs() <= 0.05 * ctx.m() as f64 + 4.0 * se,
                "{name}: mean {mean} exceeds 0.05 m + 4 se = {}",
                0.05 * ctx.m() as f64 + 4.0 * se
            );
        }
    }

    struct PairProductModel {
        graph: IntersectionGraph,
        q: f64,
        num_vars: usize,
    }

    impl PairProductModel {
        fn new(num_vars: usize, q: f64) -> Self {
            let subsets: Vec<Vec<usize>> =
                (0..num_vars - 1).map(|i| vec![i, i + 1]).collect();
            PairProductModel {
                graph: build_intersection_graph(num_vars, &subsets).unwrap(),
                q,
                num_vars,
            }
        }
    }

    impl DecomposableModel for PairProductModel {
        fn dim(&self) -> usize {
            1
        }
        fn graph(&self) -> &IntersectionGraph {
            &self.graph
        }
        fn summand_mean(&self, _j: usize) -> DVector<f64> {
            dvector![self.q * self.q]
        }
        fn sample_summands(&self, rng: &mut RngStream) -> Vec<DVector<f64>> {
            let xi: Vec<f64> = (0..self.num_vars)
                .map(|_| if rng.uniform() < self.q { 1.0 } else { 0.0 })
                .collect();
            (0..self.num_vars - 1)
                .map(|i| dvector![xi[i] * xi[i + 1]])
                .collect()
        }
    }

    struct ConstantModel {
        graph: IntersectionGraph,
        value: f64,
    }

    impl DecomposableModel for ConstantModel {
        fn dim(&self) -> usize {
            1
        }
        fn graph(&self) -> &IntersectionGraph {
            &self.graph
        }
        fn summand_mean(&self, _j: usize) -> DVector<f64> {
            dvector![self.value]
        }
        fn sample_summands(&self, _rng: &mut RngStream) -> Vec<DVector<f64>> {
            vec![dvector![self.value]]
        }
    }

    #[test]
    fn zero_summands_give_zero_moment_sums() {
        let model = ConstantModel {
            graph: build_intersection_graph(1, &[vec![0usize]]).unwrap(),
            value: 0.0,
        };
        let sums = moment_sums_mc(&model, 3, 200, &make_rng(1, 0)).unwrap();
        for h in [sums.h0, sums.h1, sums.h21, sums.h22, sums.h23, sums.h24] {
            assert_eq!(h.value, 0.0);
            assert_eq!(h.std_error, 0.0);
        }
        assert_eq!(sums.h2, 0.0);
        assert!(sums.zhat_violations.is_empty());
    }

    #[test]
    fn single_deterministic_summand_matches_direct_substitution() {
        let m = 7u64;
        let model = ConstantModel {
            graph: build_intersection_graph(1, &[vec![0usize]]).unwrap(),
            value: 1.0,
        };
        let sums = moment_sums_mc(&model, m, 200, &make_rng(2, 0)).unwrap();
        let mf = m as f64;
        assert!((sums.h0.value - 1.0 / mf).abs() <= 1e-15);
        // Only the pair k = j exists: a_j |X| = (1 + 1) * 1.
        assert!((sums.h1.value - 2.0 / mf).abs() <= 1e-15);
        assert!((sums.h21.value - 2.0 / mf).abs() <= 1e-15);
        assert_eq!(sums.h22.value, 0.0);
        assert_eq!(sums.h23.value, 0.0);
        // h24 pairs the k = j cross moment with E|Z^(j)| = 1.
        assert!((sums.h24.value - 2.0 / mf).abs() <= 1e-15);
        assert!((sums.gamma_hat - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn pair_product_chain_matches_closed_form_moments() {
        let q = 0.5;
        let num_vars = 8;
        let model = PairProductModel::new(num_vars, q);
        let m = 4u64;
        let reps = 200_000;
        let sums = moment_sums_mc(&model, m, reps, &make_rng(3, 0)).unwrap();

        // Closed forms with X^(j) = xi_j xi_{j+1} in {0,1}: E|X| = q^2,
        // E[(X + q^2) X] = q^2 + q^4 for k = j, and q^3 + q^4 for adjacent k
        // (three distinct Bernoulli factors).
        let n = (num_vars - 1) as f64;
        let h0_exact = n * q * q / m as f64;
        let adjacent_ordered = 2.0 * (n - 1.0);
        let h1_exact =
            (n * (q.powi(2) + q.powi(4)) + adjacent_ordered * (q.powi(3) + q.powi(4)))
                / m as f64;
        assert!(
            (sums.h0.value - h0_exact).abs() <= 4.0 * sums.h0.std_error.max(1e-6),
            "h0 {} vs exact {h0_exact} (se {})",
            sums.h0.value,
            sums.h0.std_error
        );
        assert!(
            (sums.h1.value - h1_exact).abs() <= 4.0 * sums.h1.std_error.max(1e-6),
            "h1 {} vs exact {h1_exact} (se {})",
            sums.h1.value,
            sums.h1.std_error
        );
        assert!(sums.h2 >= sums.h21.value.max(sums.h22.value));
        assert!(sums.zhat_violations.is_empty());
        // gamma_hat for indicator summands is the largest E|X|^3 = q^2.
        assert!((sums.gamma_hat - q * q).abs() <= 0.01);
    }

    #[test]
    fn moment_sums_reports_second_moment_excesses() {
        let model = PairProductModel::new(8, 0.9);
        // d * m = 1 while E|Z^(j)|^2 is around 6 for interior summands.
        let sums = moment_sums_mc(&model, 1, 2000, &make_rng(4, 0)).unwrap();
        assert!(!sums.zhat_violations.is_empty());
        let v = &sums.zhat_violations[0];
        assert!(v.mean_sq > v.bound);
    }

    #[test]
    fn moment_sums_is_deterministic_and_validates() {
        let model = PairProductModel::new(6, 0.4);
        let a = moment_sums_mc(&model, 2, 500, &make_rng(5, 0)).unwrap();
        let b = moment_sums_mc(&model, 2, 500, &make_rng(5, 0)).unwrap();
        assert_eq!(a.h1.value, b.h1.value);
        assert_eq!(a.h23.std_error, b.h23.std_error);
        assert!(moment_sums_mc(&model, 2, 99, &make_rng(5, 0)).is_err());
        assert!(moment_sums_mc(&model, 0, 500, &make_rng(5, 0)).is_err());
    }

    #[test]
    fn mineka_bound_values() {
        let b = mineka_smoothness_bound(200.0, 0.01).unwrap();
        assert!((b - 0.066_418_958_354_775_63).abs() <= 1e-15, "got {b}");
        let b = mineka_smoothness_bound(1e12, 0.01).unwrap();
        assert!((b - 0.01).abs() <= 1e-5);
        assert_eq!(mineka_smoothness_bound(0.1, 0.9).unwrap(), 1.0);
        assert!(mineka_smoothness_bound(0.0, 0.1).is_err());
        assert!(mineka_smoothness_bound(10.0, 1.5).is_err());
    }

    #[test]
    fn shift_tv_of_a_point_mass_is_one() {
        let est =
            empirical_shift_tv(|_rng: &mut RngStream| vec![7], 0, 10_000, &make_rng(6, 0))
                .unwrap();
        assert_eq!(est.value, 1.0);
        assert_eq!(est.mc_std_error, 0.0);
    }

    #[test]
    fn shift_tv_of_a_uniform_block_is_one_over_k() {
        let k = 10.0;
        let est = empirical_shift_tv(
            |rng: &mut RngStream| vec![(rng.uniform() * k) as i64],
            0,
            100_000,
            &make_rng(7, 0),
        )
        .unwrap();
        assert!((est.value - 1.0 / k).abs() <= 0.02, "got {}", est.value);
        assert!(est.mc_std_error > 0.0);
    }

    #[test]
    fn shift_tv_decreases_along_binomial_sizes() {
        let mut estimates = Vec::new();
        for (i, n) in [25u32, 100, 400].into_iter().enumerate() {
            let est = empirical_shift_tv(
                |rng: &mut RngStream| {
                    let mut s = 0i64;
                    for _ in 0..n {
                        if rng.uniform() < 0.5 {
                            s += 1;
                        }
                    }
                    vec![s]
                },
                0,
                100_000,
                &make_rng(8, i as u64),
            )
            .unwrap();
            estimates.push(est.value);
        }
        assert!(
            estimates[0] > estimates[1] && estimates[1] > estimates[2],
            "estimates not decreasing: {estimates:?}"
        );
    }

    #[test]
    fn shift_tv_validates_inputs() {
        let rng = make_rng(9, 0);
        assert!(empirical_shift_tv(|_: &mut RngStream| vec![0], 0, 9_999, &rng).is_err());
        assert!(empirical_shift_tv(|_: &mut RngStream| vec![0], 1, 10_000, &rng).is_err());
    }

    #[test]
    fn corollary_rate_reference_value() {
        let m = std::f64::consts::E * std::f64::consts::E;
        let b = corollary_rate(1, m, 1.0, 1.0, 0.0).unwrap();
        assert!(
            (b.combined - 2.943_035_529_371_538_57).abs() <= 1e-14,
            "got {}",
            b.combined
        );
        assert_eq!(b.eps_w_term, 0.0);
        assert!((b.msqrt_term - b.combined).abs() <= 1e-14);
    }

    #[test]
    fn corollary_rate_is_monotone_in_gamma() {
        let base = corollary_rate(2, 50.0, 3.0, 1.5, 0.1).unwrap();
        let doubled = corollary_rate(2, 50.0, 3.0, 3.0, 0.1).unwrap();
        assert!(doubled.combined > base.combined);
    }

    #[test]
    fn corollary_rate_term_dominance_at_large_m() {
        let b = corollary_rate(2, 1e12, 4.0, 2.0, 1.0).unwrap();
        let plateau = 8.0 * (1e12f64).ln() * (2.0 + 3.0 * 2.0 * 4.0);
        assert!((b.combined / plateau - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn corollary_bound_uses_the_context() {
        let ctx = context_from_moments(dvector![5.0], dmatrix![100.0], 1.0).unwrap();
        let g = build_intersection_graph(3, &[vec![0usize], vec![1], vec![2]]).unwrap();
        let stats = neighborhood_stats(&g, ctx.m()).unwrap();
        let b = corollary_bound(&ctx, &stats, 0.0).unwrap();
        assert!(b.combined > 0.0);

        let small = context_from_moments(dvector![0.0], dmatrix![1.0], 1.0).unwrap();
        assert!(corollary_bound(&small, &stats, 0.0).is_err());
        assert!(corollary_bound(&ctx, &stats, 1.5).is_err());
    }

    #[test]
    fn greedy_family_takes_everything_when_disjoint() {
        let subsets: Vec<Vec<usize>> = (0..6).map(|l| vec![l]).collect();
        let g = build_intersection_graph(6, &subsets).unwrap();
        let family = greedy_disjoint_family(&g, &BTreeSet::new());
        assert_eq!(family, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn greedy_family_alternates_on_a_cycle() {
        // Summand i depends on variables {i, i+1 mod M}; consecutive variables
        // share a summand, so the greedy picks every other variable.
        let m_vars = 12;
        let subsets: Vec<Vec<usize>> =
            (0..m_vars).map(|i| vec![i, (i + 1) % m_vars]).collect();
        let g = build_intersection_graph(m_vars, &subsets).unwrap();
        let family = greedy_disjoint_family(&g, &BTreeSet::new());
        assert_eq!(family, vec![0, 2, 4, 6, 8, 10]);
        // The 2-degree floor of the selection size.
        assert!(family.len() >= m_vars / 3 - 3);

        for (a, &la) in family.iter().enumerate() {
            for &lb in &family[a + 1..] {
                let sa: BTreeSet<usize> =
                    g.summands_containing(la).iter().copied().collect();
                let disjoint = g.summands_containing(lb).iter().all(|j| !sa.contains(j));
                assert!(disjoint, "variables {la} and {lb} share a summand");
            }
        }
    }

    #[test]
    fn greedy_family_respects_exclusions() {
        let subsets: Vec<Vec<usize>> = (0..6).map(|l| vec![l]).collect();
        let g = build_intersection_graph(6, &subsets).unwrap();
        let all: BTreeSet<usize> = (0..6).collect();
        assert!(greedy_disjoint_family(&g, &all).is_empty());
        let some: BTreeSet<usize> = [1, 3].into_iter().collect();
        assert_eq!(greedy_disjoint_family(&g, &some), vec![0, 2, 4, 5]);
    }
}
