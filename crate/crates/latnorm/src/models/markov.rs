//! Occupation counts of a finite ergodic Markov chain.
//!
//! A chain on states {0, …, d} runs for a fixed horizon; W counts the visits
//! to each of the tracked states 1..=d (state 0 is the untracked reference
//! state).  The asymptotic mean and covariance per step follow from the
//! stationary distribution and a geometrically convergent correlation
//! series; an exact dynamic program over occupation vectors serves as the
//! distributional oracle for small horizons.

use std::collections::BTreeMap;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;
use crate::tv::PmfTable;

/// Absolute tolerance for each transition row summing to one.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Largest number of table entries (occupation vectors times states) the
/// exact dynamic program will allocate.
pub const OCCUPATION_DP_BUDGET: u128 = 50_000_000;

/// Hard cap on correlation-series terms before giving up on convergence.
const SERIES_MAX_TERMS: usize = 500_000;

/// Spectral radii below this are treated as an exactly memoryless chain.
const RHO_FLOOR: f64 = 1e-14;

/// A row-stochastic transition matrix on states {0, …, d} with a start state
/// and horizon.  Construction verifies irreducibility and aperiodicity.
#[derive(Debug, Clone)]
pub struct MarkovModel {
    p: DMatrix<f64>,
    cum_rows: Vec<Vec<f64>>,
    start: usize,
    num_steps: usize,
}

impl MarkovModel {
    /// Validates the transition matrix (square, rows summing to one within
    /// `ROW_SUM_TOL`, irreducible, aperiodic) and the start state/horizon.
    ///
    /// # Errors
    ///
    /// Domain error on a malformed, reducible, or periodic matrix.
    pub fn new(p: DMatrix<f64>, start: usize, num_steps: usize) -> Result<Self> {
        let s = p.nrows();
        if s < 2 || p.ncols() != s {
            return Err(Error::domain(format!(
                "markov: transition matrix must be square with at least 2 states, got {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        for i in 0..s {
            let mut row_sum = 0.0;
            for j in 0..s {
                let v = p[(i, j)];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::domain(format!(
                        "markov: entry ({i}, {j}) is {v}, not a finite nonnegative probability"
                    )));
                }
                row_sum += v;
            }
            if (row_sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::domain(format!(
                    "markov: row {i} sums to {row_sum}, not 1"
                )));
            }
        }
        if start >= s {
            return Err(Error::domain(format!(
                "markov: start state {start} exceeds state count {s}"
            )));
        }
        if num_steps == 0 {
            return Err(Error::domain("markov: the horizon must be at least 1"));
        }
        let forward = reachable(&p, false);
        let backward = reachable(&p, true);
        if forward.iter().any(|l| l.is_none()) || backward.iter().any(|l| l.is_none()) {
            return Err(Error::domain("markov: the chain is not irreducible"));
        }
        let levels: Vec<i64> = forward.into_iter().map(|l| l.unwrap() as i64).collect();
        let mut g: u64 = 0;
        for u in 0..s {
            for v in 0..s {
                if p[(u, v)] > 0.0 {
                    g = gcd(g, (levels[u] + 1 - levels[v]).unsigned_abs());
                }
            }
        }
        if g != 1 {
            return Err(Error::domain(format!(
                "markov: the chain is periodic with period {g}"
            )));
        }
        let cum_rows = (0..s)
            .map(|i| {
                let mut acc = 0.0;
                (0..s)
                    .map(|j| {
                        acc += p[(i, j)];
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(MarkovModel {
            p,
            cum_rows,
            start,
            num_steps,
        })
    }

    /// Total number of states, tracked plus the reference state 0.
    pub fn num_states(&self) -> usize {
        self.p.nrows()
    }

    /// Number of tracked states, one less than the state count.
    pub fn num_tracked(&self) -> usize {
        self.p.nrows() - 1
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// Whether every state can repeat immediately (a strictly positive
    /// transition diagonal), a condition stronger than aperiodicity that
    /// some coupling arguments require.
    pub fn satisfies_a1(&self) -> bool {
        (0..self.p.nrows()).all(|i| self.p[(i, i)] > 0.0)
    }

    fn step(&self, state: usize, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        let row = &self.cum_rows[state];
        for (j, &c) in row.iter().enumerate() {
            if u < c {
                return j;
            }
        }
        row.len() - 1
    }
}

/// BFS levels from state 0 along transition edges (transposed when asked);
/// `None` marks an unreachable state.
fn reachable(p: &DMatrix<f64>, transpose: bool) -> Vec<Option<usize>> {
    let s = p.nrows();
    let mut level = vec![None; s];
    level[0] = Some(0);
    let mut frontier = vec![0usize];
    while let Some(u) = frontier.pop() {
        let lu = level[u].unwrap();
        for v in 0..s {
            let w = if transpose { p[(v, u)] } else { p[(u, v)] };
            if w > 0.0 && level[v].is_none() {
                level[v] = Some(lu + 1);
                frontier.push(v);
            }
        }
    }
    level
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary distribution and per-step covariance of the tracked
/// occupation counts, with the mixing constants used to bound the truncated
/// correlation series.
#[derive(Debug, Clone)]
pub struct StationaryCov {
    /// Stationary probabilities of the tracked states 1..=d.
    pub pi: DVector<f64>,
    /// Asymptotic covariance per step of the tracked occupation counts.
    pub v: DMatrix<f64>,
    /// Empirical constant C with max-entry |P^k − π| ≤ C ρ^k over the
    /// computed range.
    pub mixing_c: f64,
    /// Modulus of the second-largest transition eigenvalue.
    pub mixing_rho: f64,
    /// Number of correlation-series terms summed.
    pub series_len: usize,
    /// Geometric bound C ρ^k / (1 − ρ) on the truncated series remainder.
    pub tail_bound: f64,
}

/// Solves πP = π and sums the correlation series
/// S_ir = Σ_{k≥1} (P^k_ir − π_r), truncating once the max-entry deviation of
/// P^k from stationarity falls below tol·(1 − ρ); the covariance is
/// V_ir = π_i S_ir + π_r S_ri + δ_ir π_i − π_i π_r over tracked states.
///
/// # Errors
///
/// Domain error for a nonpositive tolerance; accuracy error when the series
/// has not converged after the term cap.
pub fn mc_stationary_and_cov(model: &MarkovModel, tol: f64) -> Result<StationaryCov> {
    if !(tol > 0.0) || !tol.is_finite() {
        return Err(Error::domain(format!(
            "mc_stationary_and_cov: tolerance must be positive and finite, got {tol}"
        )));
    }
    let s = model.num_states();
    let d = model.num_tracked();
    let p = &model.p;

    let mut a = p.transpose() - DMatrix::<f64>::identity(s, s);
    for j in 0..s {
        a[(s - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(s);
    b[s - 1] = 1.0;
    let pi_full = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::domain("mc_stationary_and_cov: stationary solve failed"))?;

    let eigs = p.clone().complex_eigenvalues();
    let perron = (0..s)
        .min_by(|&i, &j| {
            let di = (eigs[i] - Complex::new(1.0, 0.0)).norm();
            let dj = (eigs[j] - Complex::new(1.0, 0.0)).norm();
            di.total_cmp(&dj)
        })
        .unwrap();
    let rho = (0..s)
        .filter(|&i| i != perron)
        .map(|i| eigs[i].norm())
        .fold(0.0f64, f64::max);

    let threshold = tol * (1.0 - rho);
    let mut series = DMatrix::<f64>::zeros(s, s);
    let mut pk = p.clone();
    let mut rho_pow = 1.0f64;
    let mut mixing_c = 0.0f64;
    let mut series_len = 0;
    let mut converged = false;
    let mut dev = f64::INFINITY;
    for k in 1..=SERIES_MAX_TERMS {
        dev = 0.0;
        for i in 0..s {
            for j in 0..s {
                let term = pk[(i, j)] - pi_full[j];
                series[(i, j)] += term;
                dev = dev.max(term.abs());
            }
        }
        rho_pow *= rho;
        if rho_pow > 1e-300 {
            mixing_c = mixing_c.max(dev / rho_pow);
        }
        series_len = k;
        if dev < threshold || rho < RHO_FLOOR {
            converged = true;
            break;
        }
        pk = &pk * p;
    }
    if !converged {
        return Err(Error::Accuracy {
            message: format!(
                "mc_stationary_and_cov: correlation series still at deviation {dev} after {SERIES_MAX_TERMS} terms"
            ),
            value: dev,
            error_estimate: threshold,
        });
    }
    let tail_bound = if rho < RHO_FLOOR {
        0.0
    } else {
        mixing_c * rho.powi(series_len as i32) / (1.0 - rho)
    };

    let mut v = DMatrix::zeros(d, d);
    for i in 0..d {
        for r in 0..d {
            let (si, sr) = (i + 1, r + 1);
            let delta = if i == r { pi_full[si] } else { 0.0 };
            v[(i, r)] = pi_full[si] * series[(si, sr)]
                + pi_full[sr] * series[(sr, si)]
                + delta
                - pi_full[si] * pi_full[sr];
        }
    }
    Ok(StationaryCov {
        pi: DVector::from_iterator(d, (1..s).map(|i| pi_full[i])),
        v,
        mixing_c,
        mixing_rho: rho,
        series_len,
        tail_bound,
    })
}

/// Exact law of the tracked occupation counts after n steps from state r,
/// by dynamic programming over (current state, occupation vector).
///
/// # Errors
///
/// Domain error on a bad start state or zero horizon; budget error when the
/// table would exceed `OCCUPATION_DP_BUDGET` entries.
pub fn mc_occupation_exact_pmf(model: &MarkovModel, n: usize, r: usize) -> Result<PmfTable> {
    let s = model.num_states();
    let d = model.num_tracked();
    if r >= s {
        return Err(Error::domain(format!(
            "mc_occupation_exact_pmf: start state {r} exceeds state count {s}"
        )));
    }
    if n == 0 {
        return Err(Error::domain(
            "mc_occupation_exact_pmf: the horizon must be at least 1",
        ));
    }
    let base = (n + 1) as u128;
    let entries = base
        .checked_pow(d as u32)
        .and_then(|t| t.checked_mul(s as u128))
        .filter(|&t| t <= OCCUPATION_DP_BUDGET)
        .ok_or_else(|| {
            Error::budget(format!(
                "mc_occupation_exact_pmf: ({})^{d} x {s} entries exceed the budget of {OCCUPATION_DP_BUDGET}",
                n + 1
            ))
        })?;
    let total = entries as usize;
    let stride = total / s;
    let mut pow = vec![1usize; d];
    for i in 1..d {
        pow[i] = pow[i - 1] * (n + 1);
    }

    let mut dist = vec![0.0f64; total];
    let mut next = vec![0.0f64; total];
    dist[r * stride] = 1.0;
    for _ in 0..n {
        next.iter_mut().for_each(|x| *x = 0.0);
        for c in 0..s {
            for wcode in 0..stride {
                let mass = dist[c * stride + wcode];
                if mass == 0.0 {
                    continue;
                }
                for c2 in 0..s {
                    let pr = model.p[(c, c2)];
                    if pr > 0.0 {
                        let w2 = wcode + if c2 >= 1 { pow[c2 - 1] } else { 0 };
                        next[c2 * stride + w2] += mass * pr;
                    }
                }
            }
        }
        std::mem::swap(&mut dist, &mut next);
    }

    let mut table: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for wcode in 0..stride {
        let mass: f64 = (0..s).map(|c| dist[c * stride + wcode]).sum();
        if mass > 0.0 {
            let mut w = Vec::with_capacity(d);
            let mut rest = wcode;
            for _ in 0..d {
                w.push((rest % (n + 1)) as i64);
                rest /= n + 1;
            }
            table.insert(w, mass);
        }
    }
    PmfTable::new(d, table)
}

/// Runs the chain for its configured horizon from its start state and
/// returns the tracked occupation counts.
pub fn mc_sample(model: &MarkovModel, rng: &mut RngStream) -> Vec<i64> {
    let mut w = vec![0i64; model.num_tracked()];
    let mut state = model.start;
    for _ in 0..model.num_steps {
        state = model.step(state, rng);
        if state >= 1 {
            w[state - 1] += 1;
        }
    }
    w
}
