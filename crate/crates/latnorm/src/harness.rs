//! Convergence experiments: sweep a model-size ladder, estimate the
//! total-variation distance to the fitted discrete normal at each size, and
//! fit the log-log decay slope.
//!
//! An experiment is described by an [`ExperimentConfig`], usually loaded
//! from a TOML file:
//!
//! ```toml
//! seed = 7
//! epsilon_tail = 1e-9
//! sizes = [100, 400, 1600]
//! replicates = 10000
//!
//! [model]
//! kind = "markov"
//! transition = [[0.7, 0.3], [0.3, 0.7]]
//! start = 0
//! ```
//!
//! `replicates` is either a single count applied to every size or an array
//! with one count per size.  The model kinds and their size parameters are:
//!
//! * `markov` — occupation counts of a chain over `size` steps; fields
//!   `transition` (row-stochastic matrix) and `start`.  Moments come from
//!   the stationary distribution and mixing series, the law from the exact
//!   dynamic program while it fits its budget, else from sampling.
//! * `coloring` — monochrome edge counts of a uniformly coloured cycle on
//!   `size` vertices; fields `colors` and optional `thinning`.  Moments are
//!   closed-form, the law exact while enumeration fits its budget, else
//!   sampled.  This is the only kind whose rows carry a dependency-graph
//!   bound breakdown; `eps_w` overrides the smoothness coefficient, which
//!   is otherwise estimated from point-shift samples.
//! * `rgg` — edge and triangle counts of a random geometric graph on a
//!   torus of side `size`; field `radius`.  Moments are empirical, and the
//!   parameter-estimation error is folded into the reported tail bound.
//! * `maxpoints` — maximal-point counts of a Poisson sample in two strips
//!   of the unit triangle at intensity parameter `size`; field `strips`.
//!   Empirical moments, handled like `rgg`.
//! * `constant` — a point mass at `value`, compared against a unit-variance
//!   discrete normal; a degenerate reference whose distance stays at one
//!   minus the peak mass at every size.  Useful for calibrating what "no
//!   convergence" looks like in a report.
//!
//! Reports are emitted as CSV (fixed header, one data row per size, slope
//! columns repeated on every row, 17-significant-digit floats) or as JSON
//! mirroring [`ConvergenceReport`].  Reported reference slopes are the
//! polynomial exponents of the target rates only; logarithmic factors show
//! up as positive bias at small sizes and are not fitted.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{lattice_ball, support_radius, DnParams};
use crate::models::{
    gc_exact_pmf, gc_moments, gc_sample, mc_occupation_exact_pmf, mc_sample,
    mc_stationary_and_cov, mp_sample, rgg_sample, ColoringModel, MarkovModel, MaxPointsModel,
    Moments, RggModel,
};
use crate::numerics::rng::{make_rng, RngStream};
use crate::stein::{
    context_from_moments, corollary_bound, empirical_shift_tv, BoundBreakdown, DecomposableModel,
};
use crate::tv::{dn_table, tv_empirical_vs_dn, tv_exact_vs_dn, tv_tables, PmfTable, TvEstimate};

/// Default tail mass excluded from lattice enumeration.
pub const DEFAULT_EPSILON_TAIL: f64 = 1e-9;

/// Tolerance passed to the stationary mixing series for Markov models.
const STATIONARY_TOL: f64 = 1e-12;

/// Floor added to squared relative errors when weighting the slope fit, so
/// exact rows (zero Monte-Carlo error) get a large finite weight instead of
/// an infinite one; it corresponds to a relative error of 1e-6, far below
/// anything a desk-scale ladder resolves.
const SLOPE_WEIGHT_FLOOR: f64 = 1e-12;

/// Minimum replicate count per size.
pub const MIN_REPLICATES: u64 = 1000;

/// Note attached to every report about how slopes relate to the reference.
pub const LOG_FACTOR_NOTE: &str = "reference_slope is the polynomial exponent of the target \
     rate; logarithmic factors appear as positive bias at small sizes and are not fitted";

/// Fixed header of the CSV report format.
pub const CSV_HEADER: &str = "size,m,tv_estimate,mc_std_error,tail_bound,bound_d,bound_m,\
     bound_dbar2,bound_gamma,bound_eps_w,bound_eps_w_term,bound_msqrt_term,bound_combined,\
     fitted_slope,slope_std_error,reference_slope";

/// Model family swept by an experiment; the per-size parameter is supplied
/// by the config's size ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    /// Uniformly coloured cycle on `size` vertices.
    Coloring {
        colors: usize,
        #[serde(default)]
        thinning: Option<f64>,
    },
    /// Occupation counts over `size` steps of a fixed chain.
    Markov {
        transition: Vec<Vec<f64>>,
        start: usize,
    },
    /// Random geometric graph on a torus of side `size`.
    Rgg { radius: f64 },
    /// Maximal points at Poisson intensity parameter `size`, counted in
    /// two hypotenuse strips.
    Maxpoints { strips: [[f64; 2]; 2] },
    /// Point mass at `value`; a degenerate no-convergence reference.
    Constant { value: i64 },
}

impl ModelConfig {
    /// Polynomial exponent of the target decay rate in the size parameter
    /// (cycle vertices, chain steps, torus side, Poisson intensity).
    pub fn reference_slope(&self) -> f64 {
        match self {
            ModelConfig::Coloring { .. } => -0.5,
            ModelConfig::Markov { .. } => -0.5,
            ModelConfig::Rgg { .. } => -1.0,
            ModelConfig::Maxpoints { .. } => -0.25,
            ModelConfig::Constant { .. } => 0.0,
        }
    }
}

/// A model instance at one ladder size, built from a [`ModelConfig`].
#[derive(Debug, Clone)]
pub enum BuiltModel {
    Coloring(ColoringModel),
    Markov(MarkovModel),
    Rgg(RggModel),
    MaxPoints(MaxPointsModel),
    Constant(i64),
}

impl BuiltModel {
    /// Dimension of the count vector.
    pub fn dimension(&self) -> usize {
        match self {
            BuiltModel::Coloring(m) => m.num_colors(),
            BuiltModel::Markov(m) => m.num_tracked(),
            BuiltModel::Rgg(_) | BuiltModel::MaxPoints(_) => 2,
            BuiltModel::Constant(_) => 1,
        }
    }

    /// Draws one count vector.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<i64> {
        match self {
            BuiltModel::Coloring(m) => gc_sample(m, rng),
            BuiltModel::Markov(m) => mc_sample(m, rng),
            BuiltModel::Rgg(m) => rgg_sample(m, rng),
            BuiltModel::MaxPoints(m) => mp_sample(m, rng),
            BuiltModel::Constant(v) => vec![*v],
        }
    }
}

/// Builds the model a config describes at one ladder size: the cycle vertex
/// count, chain horizon, torus side, or Poisson intensity.  The constant
/// model ignores the size.
pub fn build_model(config: &ModelConfig, size: f64) -> Result<BuiltModel> {
    match config {
        ModelConfig::Coloring { colors, thinning } => {
            let n = integer_size(size, "coloring cycle size")?;
            if n < 3 {
                return Err(Error::domain(format!(
                    "coloring cycle size must be at least 3, got {n}"
                )));
            }
            if *colors == 0 {
                return Err(Error::domain("coloring needs at least 1 colour"));
            }
            let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
            let palette = vec![1.0 / *colors as f64; *colors];
            Ok(BuiltModel::Coloring(ColoringModel::new(
                n, &edges, palette, *thinning,
            )?))
        }
        ModelConfig::Markov { transition, start } => {
            let n = integer_size(size, "markov horizon")?;
            let s = transition.len();
            if s < 2 || transition.iter().any(|row| row.len() != s) {
                return Err(Error::domain(
                    "markov transition matrix must be square with at least 2 states",
                ));
            }
            let flat: Vec<f64> = transition.iter().flatten().copied().collect();
            let p = DMatrix::from_row_slice(s, s, &flat);
            Ok(BuiltModel::Markov(MarkovModel::new(p, *start, n)?))
        }
        ModelConfig::Rgg { radius } => {
            let n = integer_size(size, "rgg torus side")?;
            Ok(BuiltModel::Rgg(RggModel::new(n as u32, *radius)?))
        }
        ModelConfig::Maxpoints { strips } => Ok(BuiltModel::MaxPoints(MaxPointsModel::new(
            size,
            [
                (strips[0][0], strips[0][1]),
                (strips[1][0], strips[1][1]),
            ],
        )?)),
        ModelConfig::Constant { value } => Ok(BuiltModel::Constant(*value)),
    }
}

/// How [`target_moments`] obtained its result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentSource {
    /// Closed-form or convergent-series moments.
    ClosedForm,
    /// Sample moments over seeded replicates.
    Sampled,
}

impl fmt::Display for MomentSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MomentSource::ClosedForm => "closed_form",
            MomentSource::Sampled => "sampled",
        })
    }
}

/// The discrete normal target moments the harness fits for a model: closed
/// form for colouring, Markov, and constant models; sample moments over
/// `reps` replicates (drawn on substreams of `rng`) for the geometric graph
/// and maximal points models, matching the experiment's design.
pub fn target_moments(
    model: &BuiltModel,
    reps: u64,
    rng: &RngStream,
) -> Result<(Moments, MomentSource)> {
    match model {
        BuiltModel::Coloring(m) => Ok((gc_moments(m), MomentSource::ClosedForm)),
        BuiltModel::Markov(m) => {
            let sc = mc_stationary_and_cov(m, STATIONARY_TOL)?;
            let nf = m.num_steps() as f64;
            Ok((
                Moments {
                    mean: &sc.pi * nf,
                    cov: &sc.v * nf,
                },
                MomentSource::ClosedForm,
            ))
        }
        BuiltModel::Constant(v) => Ok((
            Moments {
                mean: DVector::from_element(1, *v as f64),
                cov: DMatrix::from_element(1, 1, 1.0),
            },
            MomentSource::ClosedForm,
        )),
        BuiltModel::Rgg(_) | BuiltModel::MaxPoints(_) => {
            let samples = draw_samples(rng, reps, |r| model.sample(r));
            Ok((sample_moments(&samples)?, MomentSource::Sampled))
        }
    }
}

/// Replicate counts: one value broadcast to every size, or one per size.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Replicates {
    Same(u64),
    PerSize(Vec<u64>),
}

impl Replicates {
    /// The per-size counts for a ladder of `len` sizes.
    pub fn resolve(&self, len: usize) -> Result<Vec<u64>> {
        let counts = match self {
            Replicates::Same(r) => vec![*r; len],
            Replicates::PerSize(v) => {
                if v.len() != len {
                    return Err(Error::domain(format!(
                        "replicates: got {} counts for {len} sizes",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        for &r in &counts {
            if r < MIN_REPLICATES {
                return Err(Error::domain(format!(
                    "replicates: each count must be at least {MIN_REPLICATES}, got {r}"
                )));
            }
        }
        Ok(counts)
    }
}

/// A seeded convergence experiment over a strictly increasing size ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_epsilon_tail")]
    pub epsilon_tail: f64,
    pub sizes: Vec<f64>,
    pub replicates: Replicates,
    pub model: ModelConfig,
    /// Optional output path; the CLI falls back to stdout without one.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Optional smoothness coefficient override for bound breakdowns.
    #[serde(default)]
    pub eps_w: Option<f64>,
}

fn default_epsilon_tail() -> f64 {
    DEFAULT_EPSILON_TAIL
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 3 {
            return Err(Error::domain(format!(
                "config: the size ladder needs at least 3 sizes, got {}",
                self.sizes.len()
            )));
        }
        for w in self.sizes.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::domain(format!(
                    "config: sizes must be strictly increasing, got {} before {}",
                    w[0], w[1]
                )));
            }
        }
        for &s in &self.sizes {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::domain(format!(
                    "config: sizes must be positive and finite, got {s}"
                )));
            }
        }
        self.replicates.resolve(self.sizes.len())?;
        if !(self.epsilon_tail > 0.0 && self.epsilon_tail < 0.1) {
            return Err(Error::domain(format!(
                "config: epsilon_tail must lie in (0, 0.1), got {}",
                self.epsilon_tail
            )));
        }
        if let Some(e) = self.eps_w {
            if !(0.0..=1.0).contains(&e) {
                return Err(Error::domain(format!(
                    "config: eps_w must lie in [0, 1], got {e}"
                )));
            }
        }
        Ok(())
    }
}

/// Parses and validates a TOML experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::domain(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a TOML experiment config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Parses a TOML model table: either a bare table (`kind = "..."` at the
/// top level) or a full experiment config, whose `[model]` table is taken.
pub fn parse_model_config(text: &str) -> Result<ModelConfig> {
    match toml::from_str::<ModelConfig>(text) {
        Ok(model) => Ok(model),
        Err(model_err) => match toml::from_str::<ExperimentConfig>(text) {
            Ok(cfg) => Ok(cfg.model),
            Err(_) => Err(Error::domain(format!("model config: {model_err}"))),
        },
    }
}

/// Reads and parses a TOML model config file; accepts the same two shapes
/// as [`parse_model_config`].
pub fn load_model_config(path: &Path) -> Result<ModelConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model_config(&text)
}

/// One size of the ladder: the fitted discrete normal's m, the TV estimate
/// with its error terms, and the bound breakdown where the model family
/// admits one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub size: f64,
    pub m: u64,
    pub tv_estimate: f64,
    pub mc_std_error: f64,
    pub tail_bound: f64,
    pub bound_breakdown: Option<BoundBreakdown>,
}

/// The result of a convergence experiment: per-size rows ordered by size,
/// and the weighted log-log slope fit with its reference exponent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ReportRow>,
    pub fitted_slope: f64,
    pub slope_std_error: f64,
    pub reference_slope: f64,
    pub note: String,
}

/// Output format for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::domain(format!(
                "format: expected \"csv\" or \"json\", got \"{other}\""
            ))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        })
    }
}

/// Weighted least-squares slope of log(tv) against log(size).
///
/// Each point is (size, tv, mc_std_error); weights are inverse squared
/// relative errors, floored so exact rows stay finite.  Returns the slope
/// and its standard error under the inverse-variance model.
pub fn fit_log_log_slope(points: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 3 {
        return Err(Error::domain(format!(
            "fit_log_log_slope: need at least 3 points, got {}",
            points.len()
        )));
    }
    let mut xs = Vec::with_capacity(points.len());
    let mut ys = Vec::with_capacity(points.len());
    let mut ws = Vec::with_capacity(points.len());
    for &(size, tv, se) in points {
        if !(size > 0.0) || !size.is_finite() {
            return Err(Error::domain(format!(
                "fit_log_log_slope: sizes must be positive, got {size}"
            )));
        }
        if !(tv > 0.0) || !tv.is_finite() {
            return Err(Error::domain(format!(
                "fit_log_log_slope: TV estimates must be positive, got {tv} at size {size}"
            )));
        }
        let rel = se / tv;
        xs.push(size.ln());
        ys.push(tv.ln());
        ws.push(1.0 / (rel * rel + SLOPE_WEIGHT_FLOOR));
    }
    let wsum: f64 = ws.iter().sum();
    let xbar = xs.iter().zip(&ws).map(|(x, w)| w * x).sum::<f64>() / wsum;
    let ybar = ys.iter().zip(&ws).map(|(y, w)| w * y).sum::<f64>() / wsum;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..xs.len() {
        let dx = xs[i] - xbar;
        sxx += ws[i] * dx * dx;
        sxy += ws[i] * dx * (ys[i] - ybar);
    }
    if sxx <= 0.0 {
        return Err(Error::domain(
            "fit_log_log_slope: sizes are too close to fit a slope",
        ));
    }
    Ok((sxy / sxx, (1.0 / sxx).sqrt()))
}

/// Runs the experiment: per size, fit the discrete normal, estimate the TV
/// distance (exactly where the model's oracle fits its budget, else from
/// seeded samples), and evaluate the bound breakdown where available; then
/// fit the decay slope.  The report is a pure function of the config.
pub fn run_convergence_experiment(cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let reps = cfg.replicates.resolve(cfg.sizes.len())?;
    let results: Vec<Result<ReportRow>> = cfg
        .sizes
        .par_iter()
        .enumerate()
        .map(|(i, &size)| size_row(cfg, i, size, reps[i]).map_err(|e| at_size(e, size)))
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    for r in results {
        rows.push(r?);
    }
    let points: Vec<(f64, f64, f64)> = rows
        .iter()
        .map(|r| (r.size, r.tv_estimate, r.mc_std_error))
        .collect();
    let (fitted_slope, slope_std_error) = fit_log_log_slope(&points)?;
    Ok(ConvergenceReport {
        rows,
        fitted_slope,
        slope_std_error,
        reference_slope: cfg.model.reference_slope(),
        note: LOG_FACTOR_NOTE.to_string(),
    })
}

/// Evaluates a single model size outside a ladder: the fitted target's m,
/// the TV estimate with its error terms, and the bound breakdown where the
/// model admits one.  Uses the same derived streams as the first row of a
/// full experiment with this seed, so a ladder whose first size matches
/// reproduces the row bit for bit.
pub fn evaluate_model_row(
    model: &ModelConfig,
    size: f64,
    reps: u64,
    seed: u64,
    epsilon_tail: f64,
    eps_w: Option<f64>,
) -> Result<ReportRow> {
    if !(size.is_finite() && size > 0.0) {
        return Err(Error::domain(format!(
            "size must be positive and finite, got {size}"
        )));
    }
    if reps < MIN_REPLICATES {
        return Err(Error::domain(format!(
            "replicates must be at least {MIN_REPLICATES}, got {reps}"
        )));
    }
    if !(epsilon_tail > 0.0 && epsilon_tail < 0.1) {
        return Err(Error::domain(format!(
            "epsilon_tail must lie in (0, 0.1), got {epsilon_tail}"
        )));
    }
    if let Some(e) = eps_w {
        if !(0.0..=1.0).contains(&e) {
            return Err(Error::domain(format!("eps_w must lie in [0, 1], got {e}")));
        }
    }
    let cfg = ExperimentConfig {
        seed,
        epsilon_tail,
        sizes: vec![size],
        replicates: Replicates::Same(reps),
        model: model.clone(),
        out: None,
        eps_w,
    };
    size_row(&cfg, 0, size, reps).map_err(|e| at_size(e, size))
}

/// Prefixes an error's message with the size it occurred at, preserving the
/// variant so exit codes survive the wrapping.
fn at_size(err: Error, size: f64) -> Error {
    match err {
        Error::Domain(m) => Error::Domain(format!("size {size}: {m}")),
        Error::Budget(m) => Error::Budget(format!("size {size}: {m}")),
        Error::Accuracy {
            message,
            value,
            error_estimate,
        } => Error::Accuracy {
            message: format!("size {size}: {message}"),
            value,
            error_estimate,
        },
        io @ Error::Io { .. } => io,
    }
}

fn size_row(cfg: &ExperimentConfig, index: usize, size: f64, reps: u64) -> Result<ReportRow> {
    let rng = make_rng(cfg.seed, index as u64);
    match build_model(&cfg.model, size)? {
        BuiltModel::Coloring(m) => coloring_row(cfg, &rng, size, reps, &m),
        BuiltModel::Markov(m) => markov_row(cfg, &rng, size, reps, &m),
        BuiltModel::Rgg(m) => rgg_row(cfg, &rng, size, reps, &m),
        BuiltModel::MaxPoints(m) => maxpoints_row(cfg, &rng, size, reps, &m),
        BuiltModel::Constant(v) => constant_row(cfg, size, v),
    }
}

fn integer_size(size: f64, what: &str) -> Result<usize> {
    if size.fract() != 0.0 || !(1.0..=2_147_483_647.0).contains(&size) {
        return Err(Error::domain(format!(
            "{what} must be a positive integer, got {size}"
        )));
    }
    Ok(size as usize)
}

/// Draws `reps` samples on substreams keyed by replicate index, so the
/// result does not depend on how the draws are scheduled.
fn draw_samples<F>(parent: &RngStream, reps: u64, sample: F) -> Vec<Vec<i64>>
where
    F: Fn(&mut RngStream) -> Vec<i64> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map(|k| {
            let mut sub = parent.substream(k);
            sample(&mut sub)
        })
        .collect()
}

/// Sample mean and unbiased covariance of integer count vectors.
pub fn sample_moments(samples: &[Vec<i64>]) -> Result<Moments> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::domain(
            "sample_moments: need at least 2 samples for a covariance",
        ));
    }
    let d = samples[0].len();
    let mut mean = DVector::zeros(d);
    for z in samples {
        for j in 0..d {
            mean[j] += z[j] as f64;
        }
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for z in samples {
        for j in 0..d {
            let dj = z[j] as f64 - mean[j];
            for k in j..d {
                cov[(j, k)] += dj * (z[k] as f64 - mean[k]);
            }
        }
    }
    for j in 0..d {
        for k in j..d {
            cov[(j, k)] /= (n - 1) as f64;
            cov[(k, j)] = cov[(j, k)];
        }
    }
    Ok(Moments { mean, cov })
}

/// Upper estimate of how much the plug-in TV can move when the fitted
/// parameters are off by one standard error: the TV between the fitted DN
/// and the DN with mean shifted by the mean's standard error, plus the TV
/// against the DN with covariance inflated by the relative error of a
/// covariance estimate at this sample size.
fn parameter_shift_bound(mom: &Moments, reps: f64, epsilon_tail: f64) -> Result<f64> {
    let d = mom.mean.len();
    let se = DVector::from_iterator(d, (0..d).map(|j| (mom.cov[(j, j)] / reps).sqrt()));
    let base = DnParams::new(mom.mean.clone(), mom.cov.clone())?;
    let shifted = DnParams::new(&mom.mean + se, mom.cov.clone())?;
    let scaled = DnParams::new(
        mom.mean.clone(),
        &mom.cov * (1.0 + (2.0 / reps).sqrt()),
    )?;
    let ball = lattice_ball(base.mu(), support_radius(&base, epsilon_tail)?)?;
    let t0 = dn_table(&base, ball.clone())?;
    let t1 = dn_table(&shifted, ball.clone())?;
    let t2 = dn_table(&scaled, ball)?;
    Ok(tv_tables(&t0, &t1)? + tv_tables(&t0, &t2)?)
}

/// Fits empirical moments, compares the empirical law with the fitted DN,
/// and folds the parameter-estimation error into the tail bound.
fn empirical_fit(
    samples: &[Vec<i64>],
    epsilon_tail: f64,
    boot_rng: &RngStream,
) -> Result<(Moments, TvEstimate)> {
    let mom = sample_moments(samples)?;
    let params = DnParams::new(mom.mean.clone(), mom.cov.clone())?;
    let mut est = tv_empirical_vs_dn(samples, &params, epsilon_tail, boot_rng)?;
    est.tail_bound += parameter_shift_bound(&mom, samples.len() as f64, epsilon_tail)?;
    Ok((mom, est))
}

/// Worst single-coordinate shift total variation of the colouring statistic,
/// estimated by sampling and maximised over colour coordinates. Substreams
/// `2 + c` of `rng` drive coordinate `c`, leaving 0 and 1 for the table
/// sampler and its bootstrap.
fn estimated_coloring_eps_w(model: &ColoringModel, reps: u64, rng: &RngStream) -> Result<f64> {
    let mut worst = 0.0f64;
    for c in 0..model.num_colors() {
        let shift = empirical_shift_tv(
            |r: &mut RngStream| gc_sample(model, r),
            c,
            reps,
            &rng.substream(2 + c as u64),
        )?;
        worst = worst.max(shift.value);
    }
    Ok(worst)
}

fn coloring_row(
    cfg: &ExperimentConfig,
    rng: &RngStream,
    size: f64,
    reps: u64,
    model: &ColoringModel,
) -> Result<ReportRow> {
    let mom = gc_moments(model);
    let params = DnParams::new(mom.mean.clone(), mom.cov.clone())?;
    let ctx = context_from_moments(mom.mean.clone(), mom.cov.clone(), 1.0)?;
    let est = match gc_exact_pmf(model) {
        Ok(table) => tv_exact_vs_dn(&table, &params, cfg.epsilon_tail)?,
        Err(Error::Budget(_)) => {
            let samples = draw_samples(&rng.substream(0), reps, |r| gc_sample(model, r));
            tv_empirical_vs_dn(&samples, &params, cfg.epsilon_tail, &rng.substream(1))?
        }
        Err(e) => return Err(e),
    };
    let bound_breakdown = if ctx.m() >= 2 {
        let stats = crate::dependency::neighborhood_stats(model.graph(), ctx.m())?;
        let eps_w = match cfg.eps_w {
            Some(e) => e,
            None => estimated_coloring_eps_w(model, reps.max(10_000), rng)?,
        };
        Some(corollary_bound(&ctx, &stats, eps_w)?)
    } else {
        None
    };
    Ok(ReportRow {
        size,
        m: ctx.m(),
        tv_estimate: est.value,
        mc_std_error: est.mc_std_error,
        tail_bound: est.tail_bound,
        bound_breakdown,
    })
}

fn markov_row(
    cfg: &ExperimentConfig,
    rng: &RngStream,
    size: f64,
    reps: u64,
    model: &MarkovModel,
) -> Result<ReportRow> {
    let n = model.num_steps();
    let sc = mc_stationary_and_cov(model, STATIONARY_TOL)?;
    let nf = n as f64;
    let mean = &sc.pi * nf;
    let cov = &sc.v * nf;
    let params = DnParams::new(mean.clone(), cov.clone())?;
    let ctx = context_from_moments(mean, cov, 1.0)?;
    let est = match mc_occupation_exact_pmf(model, n, model.start()) {
        Ok(table) => tv_exact_vs_dn(&table, &params, cfg.epsilon_tail)?,
        Err(Error::Budget(_)) => {
            let samples = draw_samples(&rng.substream(0), reps, |r| mc_sample(model, r));
            tv_empirical_vs_dn(&samples, &params, cfg.epsilon_tail, &rng.substream(1))?
        }
        Err(e) => return Err(e),
    };
    Ok(ReportRow {
        size,
        m: ctx.m(),
        tv_estimate: est.value,
        mc_std_error: est.mc_std_error,
        tail_bound: est.tail_bound,
        bound_breakdown: None,
    })
}

fn rgg_row(
    cfg: &ExperimentConfig,
    rng: &RngStream,
    size: f64,
    reps: u64,
    model: &RggModel,
) -> Result<ReportRow> {
    let samples = draw_samples(&rng.substream(0), reps, |r| rgg_sample(model, r));
    let (mom, est) = empirical_fit(&samples, cfg.epsilon_tail, &rng.substream(1))?;
    let ctx = context_from_moments(mom.mean.clone(), mom.cov.clone(), 1.0)?;
    Ok(ReportRow {
        size,
        m: ctx.m(),
        tv_estimate: est.value,
        mc_std_error: est.mc_std_error,
        tail_bound: est.tail_bound,
        bound_breakdown: None,
    })
}

fn maxpoints_row(
    cfg: &ExperimentConfig,
    rng: &RngStream,
    size: f64,
    reps: u64,
    model: &MaxPointsModel,
) -> Result<ReportRow> {
    let samples = draw_samples(&rng.substream(0), reps, |r| mp_sample(model, r));
    let (mom, est) = empirical_fit(&samples, cfg.epsilon_tail, &rng.substream(1))?;
    let ctx = context_from_moments(mom.mean.clone(), mom.cov.clone(), 1.0)?;
    Ok(ReportRow {
        size,
        m: ctx.m(),
        tv_estimate: est.value,
        mc_std_error: est.mc_std_error,
        tail_bound: est.tail_bound,
        bound_breakdown: None,
    })
}

fn constant_row(cfg: &ExperimentConfig, size: f64, value: i64) -> Result<ReportRow> {
    let mean = DVector::from_element(1, value as f64);
    let cov = DMatrix::from_element(1, 1, 1.0);
    let params = DnParams::new(mean.clone(), cov.clone())?;
    let ctx = context_from_moments(mean, cov, 1.0)?;
    let table = PmfTable::new(1, BTreeMap::from([(vec![value], 1.0)]))?;
    let est = tv_exact_vs_dn(&table, &params, cfg.epsilon_tail)?;
    Ok(ReportRow {
        size,
        m: ctx.m(),
        tv_estimate: est.value,
        mc_std_error: est.mc_std_error,
        tail_bound: est.tail_bound,
        bound_breakdown: None,
    })
}

fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Renders the report as CSV with the fixed [`CSV_HEADER`]: one data row
/// per size, slope columns repeated on every row, bound columns empty for
/// rows without a breakdown, floats with 17 significant digits.  The note
/// field appears only in the JSON form.
pub fn report_to_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &report.rows {
        let bound = match &row.bound_breakdown {
            Some(b) => format!(
                "{},{},{},{},{},{},{},{}",
                b.d,
                fmt_float(b.m),
                fmt_float(b.dbar2),
                fmt_float(b.gamma),
                fmt_float(b.eps_w),
                fmt_float(b.eps_w_term),
                fmt_float(b.msqrt_term),
                fmt_float(b.combined)
            ),
            None => ",,,,,,,".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            fmt_float(row.size),
            row.m,
            fmt_float(row.tv_estimate),
            fmt_float(row.mc_std_error),
            fmt_float(row.tail_bound),
            bound,
            fmt_float(report.fitted_slope),
            fmt_float(report.slope_std_error),
            fmt_float(report.reference_slope)
        ));
    }
    out
}

/// Renders the report as pretty-printed JSON mirroring the struct; floats
/// use the shortest representation that parses back to the same value.
pub fn report_to_json(report: &ConvergenceReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map_err(|e| Error::domain(format!("report serialization failed: {e}")))
}

/// Writes the report to `path` in the given format.
pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, path: &Path) -> Result<()> {
    let text = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => report_to_json(report)?,
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
