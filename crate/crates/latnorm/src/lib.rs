//! Discrete multivariate normal distributions on the integer lattice.
//!
//! The discrete normal `DN_d(mu, V)` places at each integer vector `z` the
//! probability that a continuous normal `N_d(mu, V)` falls in the unit box
//! centred at `z`.  It is the natural target law when approximating sums of
//! locally dependent integer-valued random vectors in total variation, and
//! this crate provides the pieces needed to compute with it:
//!
//! * [`lattice`]: parameter validation, box probabilities, point masses,
//!   sampling, and support truncation radii for `DN_d`;
//! * [`tv`]: total-variation distances between lattice laws, from exact
//!   tables, from samples, and between samples and a `DN_d` reference;
//! * [`dependency`]: intersection graphs over shared input indices and the
//!   sum decompositions they induce;
//! * [`stein`]: the characterizing difference operator of `DN_d`, Monte Carlo
//!   moment sums for decomposed sums, coupling-based smoothness estimates,
//!   and the resulting computable error bound;
//! * [`models`]: four worked models (graph colouring counts, subgraph counts
//!   in random geometric graphs, Markov chain occupation times, and maximal
//!   points of a Poisson sample) with exact or asymptotic moments, samplers,
//!   and small-instance brute-force references;
//! * [`harness`]: experiment configs that sweep model sizes, estimate the
//!   distance to the fitted discrete normal, and fit log-log decay rates;
//! * [`numerics`]: the scalar kernels everything else relies on (normal cdf
//!   and quantile, adaptive quadrature, seeded random streams).
//!
//! Matrix arguments use `nalgebra`'s dynamic types (`DVector`, `DMatrix`);
//! all floating point work is `f64`.

pub mod dependency;
pub mod error;
pub mod harness;
pub mod lattice;
pub mod linalg;
pub mod models;
pub mod numerics;
pub mod stein;
pub mod tv;

pub use error::{Error, Result};
