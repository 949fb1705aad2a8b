//! Worked stochastic models whose count vectors are approximated by a
//! discrete normal: monochrome edge counts of randomly coloured graphs,
//! triangle and 2-star counts of random geometric graphs, Markov occupation
//! times, and maximal-point counts of a Poisson process on a triangle.
//!
//! Each model exposes a validated parameter struct, a seeded sampler
//! returning the integer count vector, and its first and second moments
//! (closed-form, exact-enumeration, or quadrature, as the model admits).

pub mod coloring;
pub mod markov;
pub mod maxpoints;
pub mod rgg;

pub use coloring::{gc_exact_pmf, gc_moments, gc_sample, ColoringModel};
pub use markov::{
    mc_occupation_exact_pmf, mc_sample, mc_stationary_and_cov, MarkovModel, StationaryCov,
};
pub use maxpoints::{
    maximal_point_indices, mp_counts_for_points, mp_moments_asymptotic, mp_sample,
    AsymptoticMoments, MaxPointsModel,
};
pub use rgg::{rgg_counts_for_points, rgg_pair_probs_mc, rgg_sample, PairProbs, RggModel};

use nalgebra::{DMatrix, DVector};

/// First and second moments of a model's count vector.
#[derive(Debug, Clone)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}
