//! Conjugate nearest-neighbour Gaussian process (NNGP) regression.
//!
//! The response model is `y ~ N(X beta, sigma2 * M)` with
//! `M = rho_phi(D) + alpha * I` and `alpha = tau2 / sigma2` held fixed. The
//! Vecchia approximation replaces `M^-1` by `(I - A)' diag(1/d) (I - A)`
//! where row `i` of the strictly lower-triangular `A` regresses the `i`-th
//! point (in x-coordinate order) on its `k` nearest predecessors. With a
//! normal-inverse-gamma prior on `(beta, sigma2)` the posterior and the
//! predictive distribution are closed form, and fitting costs `O(n k^3)`.

mod conjugate;
mod cv;
mod factor;
mod graph;

use thiserror::Error;

pub use conjugate::{
    fit_conjugate, fit_with_graph, ConjugatePosterior, ConjugatePrior, NngpPrediction, PredictOptions,
};
pub use cv::{grid_search, neighbor_curve, GridPoint, GridSearchResult};
pub use factor::{build_factor, SparseVecchiaFactor};
pub use graph::{build_neighbor_graph, graph_from_ordering, jitter_duplicates, NeighborGraph, JITTER_KM};

pub const DEFAULT_K: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum NngpError {
    #[error("no points")]
    Empty,
    #[error("neighbour count must be at least 1")]
    InvalidK,
    #[error("non-finite coordinate at row {0}")]
    NonFiniteCoordinate(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular neighbour system at point {0} (duplicate coordinates with alpha = 0?); use alpha > 0 or jitter duplicate sites")]
    Singular(usize),
    #[error("invalid prior: {0}")]
    Prior(String),
    #[error("need more rows than columns: n = {n}, K = {k}")]
    TooFewRows { n: usize, k: usize },
    #[error("expected {expected} columns, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("empty search grid")]
    EmptyGrid,
    #[error("need at least 2 folds and one row per fold")]
    InvalidFolds,
}

pub type Result<T> = std::result::Result<T, NngpError>;

#[inline]
pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub(crate) fn check_params(phi: f64, alpha: f64) -> Result<()> {
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(NngpError::InvalidParameter(format!("phi must be positive, got {phi}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(NngpError::InvalidParameter(format!("alpha must be non-negative, got {alpha}")));
    }
    Ok(())
}
