//! Shared numerical primitives: standard-normal cdf and quantile, adaptive
//! 1-D quadrature, and deterministic splittable random streams.

pub mod cdf;
pub mod quad;
pub mod rng;

pub use cdf::{std_normal_cdf, std_normal_quantile, std_normal_tail};
pub use quad::{integrate_1d, QuadratureResult, DEFAULT_QUAD_TOL, GAUSSIAN_NEGLIGIBLE_X, MAX_QUAD_EVALS};
pub use rng::{make_rng, RngStream};
