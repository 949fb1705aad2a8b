//! Monochrome edge counts of a randomly coloured graph.
//!
//! Vertices of a simple graph are coloured independently from a palette
//! distribution; W_i counts the edges whose endpoints both receive colour i,
//! optionally thinned by an independent Bernoulli keep-decision per
//! monochrome edge.  Edges sharing a vertex are dependent, so the edge set
//! carries an intersection graph (the line graph) used by the
//! dependency-decomposition machinery.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::Moments;
use crate::dependency::{build_intersection_graph, IntersectionGraph};
use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;
use crate::stein::DecomposableModel;
use crate::tv::PmfTable;

/// Absolute tolerance for the palette summing to one.
pub const PALETTE_SUM_TOL: f64 = 1e-12;

/// Largest number of colourings `d^M` the exact enumeration will visit.
pub const COLORING_ENUM_BUDGET: u128 = 2_000_000;

/// A simple graph with an i.i.d. vertex colouring law and an optional
/// Bernoulli thinning probability applied to each monochrome edge.
#[derive(Debug, Clone)]
pub struct ColoringModel {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    palette: Vec<f64>,
    cum_palette: Vec<f64>,
    thinning_p: Option<f64>,
    graph: IntersectionGraph,
}

impl ColoringModel {
    /// Validates and normalizes the model: edges are stored with the smaller
    /// endpoint first and sorted; self-loops and duplicates are rejected; the
    /// palette must be nonnegative and sum to one within `PALETTE_SUM_TOL`.
    ///
    /// # Errors
    ///
    /// Domain error on an invalid graph, palette, or thinning probability.
    pub fn new(
        num_vertices: usize,
        edges: &[(usize, usize)],
        palette: Vec<f64>,
        thinning_p: Option<f64>,
    ) -> Result<Self> {
        if num_vertices < 2 {
            return Err(Error::domain(format!(
                "coloring: need at least 2 vertices, got {num_vertices}"
            )));
        }
        if edges.is_empty() {
            return Err(Error::domain("coloring: the edge list is empty"));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::domain(format!("coloring: self-loop at vertex {a}")));
            }
            if a >= num_vertices || b >= num_vertices {
                return Err(Error::domain(format!(
                    "coloring: edge ({a}, {b}) exceeds vertex count {num_vertices}"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        if normalized.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::domain("coloring: duplicate edge"));
        }
        if palette.is_empty() {
            return Err(Error::domain("coloring: the palette is empty"));
        }
        if palette.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::domain(
                "coloring: palette entries must be finite and nonnegative",
            ));
        }
        let total: f64 = palette.iter().sum();
        if (total - 1.0).abs() > PALETTE_SUM_TOL {
            return Err(Error::domain(format!(
                "coloring: palette sums to {total}, not 1"
            )));
        }
        if let Some(p) = thinning_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!(
                    "coloring: thinning probability must lie in [0, 1], got {p}"
                )));
            }
        }
        let subsets: Vec<[usize; 2]> = normalized.iter().map(|&(a, b)| [a, b]).collect();
        let graph = build_intersection_graph(num_vertices, &subsets)?;
        let mut cum_palette = Vec::with_capacity(palette.len());
        let mut acc = 0.0;
        for &p in &palette {
            acc += p;
            cum_palette.push(acc);
        }
        Ok(ColoringModel {
            num_vertices,
            edges: normalized,
            palette,
            cum_palette,
            thinning_p,
            graph,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_colors(&self) -> usize {
        self.palette.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn palette(&self) -> &[f64] {
        &self.palette
    }

    pub fn thinning_p(&self) -> Option<f64> {
        self.thinning_p
    }

    /// The probability a monochrome edge survives thinning (1 when the model
    /// is unthinned).
    pub fn survival_prob(&self) -> f64 {
        self.thinning_p.unwrap_or(1.0)
    }

    fn draw_colour(&self, rng: &mut RngStream) -> usize {
        let u = rng.uniform();
        for (i, &c) in self.cum_palette.iter().enumerate() {
            if u < c {
                return i;
            }
        }
        self.cum_palette.len() - 1
    }

    /// Draws one colouring plus thinning and reports the surviving
    /// monochrome edges as (edge index, colour) pairs.  Colours are drawn
    /// vertex by vertex, then one keep-decision per monochrome edge in edge
    /// order, so every sampling path consumes the stream identically.
    fn surviving_monochrome(&self, rng: &mut RngStream) -> Vec<(usize, usize)> {
        let colours: Vec<usize> = (0..self.num_vertices)
            .map(|_| self.draw_colour(rng))
            .collect();
        let mut survivors = Vec::new();
        for (j, &(a, b)) in self.edges.iter().enumerate() {
            if colours[a] != colours[b] {
                continue;
            }
            let keep = match self.thinning_p {
                None => true,
                Some(p) => rng.uniform() < p,
            };
            if keep {
                survivors.push((j, colours[a]));
            }
        }
        survivors
    }
}

/// Mean and covariance of the monochrome edge count vector.  With n edges,
/// survival probability p, palette π and mean line-graph degree D̃:
///
/// - mean_i  = n p π_i²
/// - cov_ii  = n (p π_i² (1 − p π_i²) + D̃ p² π_i³ (1 − π_i))
/// - cov_ii' = −n p² π_i² π_i'² (1 + D̃)
///
/// These are exact because disjoint edges are independent, an edge pair
/// sharing a vertex is monochrome in colour pairs (i, i') only when i = i'
/// (probability π_i³), and the number of adjacent ordered edge pairs is
/// exactly n D̃.
pub fn gc_moments(model: &ColoringModel) -> Moments {
    let d = model.num_colors();
    let n = model.num_edges() as f64;
    let p = model.survival_prob();
    let graph = model.graph();
    let dtilde = (0..graph.num_summands())
        .map(|j| graph.degree(j) as f64)
        .sum::<f64>()
        / n;
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        let pi = model.palette[i];
        mean[i] = n * p * pi * pi;
        cov[(i, i)] = n
            * (p * pi * pi * (1.0 - p * pi * pi)
                + dtilde * p * p * pi * pi * pi * (1.0 - pi));
        for i2 in 0..i {
            let pj = model.palette[i2];
            let off = -n * p * p * pi * pi * pj * pj * (1.0 + dtilde);
            cov[(i, i2)] = off;
            cov[(i2, i)] = off;
        }
    }
    Moments { mean, cov }
}

/// Draws one coloured (and optionally thinned) graph and returns the
/// monochrome edge counts per colour.
pub fn gc_sample(model: &ColoringModel, rng: &mut RngStream) -> Vec<i64> {
    let mut w = vec![0i64; model.num_colors()];
    for (_, colour) in model.surviving_monochrome(rng) {
        w[colour] += 1;
    }
    w
}

/// The exact joint law of the monochrome edge counts, by enumerating all
/// d^M colourings; with thinning, the surviving counts given a colouring are
/// independent binomials per colour, expanded exactly.
///
/// # Errors
///
/// Budget error when d^M exceeds `COLORING_ENUM_BUDGET`.
pub fn gc_exact_pmf(model: &ColoringModel) -> Result<PmfTable> {
    let d = model.num_colors();
    let mm = model.num_vertices();
    let total = (d as u128)
        .checked_pow(mm as u32)
        .filter(|&t| t <= COLORING_ENUM_BUDGET)
        .ok_or_else(|| {
            Error::budget(format!(
                "gc_exact_pmf: {d}^{mm} colourings exceed the enumeration budget of {COLORING_ENUM_BUDGET}"
            ))
        })?;

    let mut table: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    let mut colours = vec![0usize; mm];
    let mut counts = vec![0i64; d];
    for _ in 0..total {
        let weight: f64 = colours.iter().map(|&c| model.palette[c]).product();
        if weight > 0.0 {
            counts.iter_mut().for_each(|c| *c = 0);
            for &(a, b) in &model.edges {
                if colours[a] == colours[b] {
                    counts[colours[a]] += 1;
                }
            }
            match model.thinning_p {
                None => *table.entry(counts.clone()).or_insert(0.0) += weight,
                Some(p) => add_thinned(&mut table, &counts, weight, p),
            }
        }
        // Mixed-radix increment over colourings.
        for c in colours.iter_mut() {
            *c += 1;
            if *c < d {
                break;
            }
            *c = 0;
        }
    }
    PmfTable::new(d, table)
}

/// Spreads one colouring's weight over all surviving-count vectors,
/// multiplying independent Binomial(m_i, p) factors per colour.
fn add_thinned(table: &mut BTreeMap<Vec<i64>, f64>, counts: &[i64], weight: f64, p: f64) {
    let factors: Vec<Vec<f64>> = counts
        .iter()
        .map(|&m| binomial_pmf(m as usize, p))
        .collect();
    let mut k = vec![0usize; counts.len()];
    loop {
        let w: f64 = weight * k.iter().zip(&factors).map(|(&ki, f)| f[ki]).product::<f64>();
        if w > 0.0 {
            let key: Vec<i64> = k.iter().map(|&ki| ki as i64).collect();
            *table.entry(key).or_insert(0.0) += w;
        }
        let mut done = true;
        for (ki, f) in k.iter_mut().zip(&factors) {
            *ki += 1;
            if *ki < f.len() {
                done = false;
                break;
            }
            *ki = 0;
        }
        if done {
            break;
        }
    }
}

/// The Binomial(m, p) probability vector over k = 0..=m, by the
/// multiplicative recurrence.
fn binomial_pmf(m: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; m + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; m + 1];
        v[m] = 1.0;
        return v;
    }
    let q = 1.0 - p;
    let mut v = Vec::with_capacity(m + 1);
    let mut b = q.powi(m as i32);
    v.push(b);
    for k in 0..m {
        b *= (m - k) as f64 / (k + 1) as f64 * (p / q);
        v.push(b);
    }
    v
}

impl DecomposableModel for ColoringModel {
    fn dim(&self) -> usize {
        self.num_colors()
    }

    fn graph(&self) -> &IntersectionGraph {
        &self.graph
    }

    fn summand_mean(&self, _j: usize) -> DVector<f64> {
        let p = self.survival_prob();
        DVector::from_iterator(
            self.num_colors(),
            self.palette.iter().map(|&pi| p * pi * pi),
        )
    }

    fn sample_summands(&self, rng: &mut RngStream) -> Vec<DVector<f64>> {
        let d = self.num_colors();
        let mut summands = vec![DVector::zeros(d); self.num_edges()];
        for (j, colour) in self.surviving_monochrome(rng) {
            summands[j][colour] = 1.0;
        }
        summands
    }
}
