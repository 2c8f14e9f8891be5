use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::factor::conditional;
use super::{build_factor, build_neighbor_graph, check_params, NeighborGraph, NngpError, Result, SparseVecchiaFactor};
use crate::covmodel::CovFamily;
use crate::dataset::SpatialDataset;
use crate::linreg;
use crate::spatial::KdTree;

/// Normal-inverse-gamma prior: `beta | sigma2 ~ N(mu, sigma2 V)`,
/// `sigma2 ~ IG(a, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConjugatePrior {
    pub mu: DVector<f64>,
    pub v: DMatrix<f64>,
    pub a: f64,
    pub b: f64,
}

impl ConjugatePrior {
    /// `mu = 0`, `V = 100 I`, `a = 2` and `b` the OLS residual variance
    /// (the sample variance of `y` if OLS fails).
    pub fn weakly_informative(ds: &SpatialDataset) -> Self {
        let b = match linreg::fit(ds) {
            Ok(f) if f.sigma2_hat > 0.0 => f.sigma2_hat,
            _ => {
                let n = ds.n() as f64;
                let m = ds.y.mean();
                (ds.y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).max(1e-8)
            }
        };
        let k = ds.k();
        ConjugatePrior { mu: DVector::zeros(k), v: DMatrix::identity(k, k) * 100.0, a: 2.0, b }
    }

    fn precision(&self, k: usize) -> Result<DMatrix<f64>> {
        if self.mu.len() != k || self.v.nrows() != k || self.v.ncols() != k {
            return Err(NngpError::Prior(format!("expected dimension {k}")));
        }
        if !(self.a > 0.0 && self.b > 0.0) {
            return Err(NngpError::Prior(format!("a and b must be positive, got a = {}, b = {}", self.a, self.b)));
        }
        if (&self.v - self.v.transpose()).amax() > 1e-12 * self.v.amax().max(1.0) {
            return Err(NngpError::Prior("V is not symmetric".into()));
        }
        self.v
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .ok_or_else(|| NngpError::Prior("V is not positive definite".into()))
    }
}

/// Fitted conjugate NNGP. Immutable once built; safe to query concurrently.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConjugatePosterior {
    pub mu_beta: DVector<f64>,
    pub v_beta: DMatrix<f64>,
    pub a_post: f64,
    pub b_post: f64,
    pub alpha: f64,
    pub phi: f64,
    pub family: CovFamily,
    pub graph: NeighborGraph,
    pub factor: SparseVecchiaFactor,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub coords: Vec<[f64; 2]>,
    pub feature_names: Vec<String>,
    /// `y - X mu_beta`.
    residuals: DVector<f64>,
    #[serde(skip)]
    tree: OnceLock<KdTree>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictOptions {
    /// Include the variance from estimating `beta`.
    pub gls_correction: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { gls_correction: true }
    }
}

/// Location-scale t predictive per query point.
#[derive(Debug, Clone, PartialEq)]
pub struct NngpPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
    /// Degrees of freedom `2 a*`.
    pub dof: f64,
}

pub fn fit_conjugate(
    ds: &SpatialDataset,
    family: CovFamily,
    phi: f64,
    alpha: f64,
    k: usize,
    prior: &ConjugatePrior,
) -> Result<ConjugatePosterior> {
    check_params(phi, alpha)?;
    let graph = build_neighbor_graph(&ds.coords, k)?;
    fit_with_graph(ds, graph, family, phi, alpha, prior)
}

/// As [`fit_conjugate`] with a prebuilt graph over `ds.coords`.
pub fn fit_with_graph(
    ds: &SpatialDataset,
    graph: NeighborGraph,
    family: CovFamily,
    phi: f64,
    alpha: f64,
    prior: &ConjugatePrior,
) -> Result<ConjugatePosterior> {
    let (n, k) = (ds.n(), ds.k());
    if n <= k {
        return Err(NngpError::TooFewRows { n, k });
    }
    let v_inv = prior.precision(k)?;
    let factor = build_factor(&graph, &ds.coords, family, phi, alpha)?;

    let y_t = factor.whiten(&graph, &graph.ordered(ds.y.as_slice()));
    let mut x_t = DMatrix::zeros(n, k);
    for c in 0..k {
        let col = factor.whiten(&graph, &graph.ordered(ds.x.column(c).as_slice()));
        x_t.set_column(c, &DVector::from_vec(col));
    }
    let y_t = DVector::from_vec(y_t);

    let v_inv_mu = &v_inv * &prior.mu;
    let precision = &v_inv + x_t.transpose() * &x_t;
    let rhs = &v_inv_mu + x_t.transpose() * &y_t;
    let chol = precision
        .cholesky()
        .ok_or_else(|| NngpError::Prior("posterior precision is not positive definite".into()))?;
    let mu_beta = chol.solve(&rhs);
    let v_beta = chol.inverse();
    let quad = prior.mu.dot(&v_inv_mu) + y_t.norm_squared() - mu_beta.dot(&rhs);
    let a_post = prior.a + n as f64 / 2.0;
    let b_post = prior.b + 0.5 * quad.max(0.0);
    let residuals = &ds.y - &ds.x * &mu_beta;

    Ok(ConjugatePosterior {
        mu_beta,
        v_beta,
        a_post,
        b_post,
        alpha,
        phi,
        family,
        graph,
        factor,
        y: ds.y.clone(),
        x: ds.x.clone(),
        coords: ds.coords.clone(),
        feature_names: ds.feature_names.clone(),
        residuals,
        tree: OnceLock::new(),
    })
}

impl ConjugatePosterior {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.graph.k
    }

    /// Posterior mean of `sigma2`, `b* / (a* - 1)`.
    pub fn sigma2_mean(&self) -> f64 {
        if self.a_post > 1.0 {
            self.b_post / (self.a_post - 1.0)
        } else {
            f64::INFINITY
        }
    }

    pub fn tau2_mean(&self) -> f64 {
        self.alpha * self.sigma2_mean()
    }

    /// Posterior standard deviations of `beta` (marginal t scale times the
    /// t variance factor).
    pub fn beta_sd(&self) -> DVector<f64> {
        self.v_beta.diagonal().map(|v| (v * self.sigma2_mean()).sqrt())
    }

    fn tree(&self) -> &KdTree {
        self.tree.get_or_init(|| KdTree::new(self.coords.clone()))
    }

    /// Number of training neighbours used at prediction time. Full
    /// conditioning (`k = n - 1`) uses every training point, so that case
    /// coincides with the dense GP.
    pub fn prediction_neighbors(&self) -> usize {
        let n = self.n();
        if self.graph.k + 1 >= n {
            n
        } else {
            self.graph.k
        }
    }

    pub fn predict(&self, x_new: &DMatrix<f64>, coords_new: &[[f64; 2]]) -> Result<NngpPrediction> {
        self.predict_with(x_new, coords_new, PredictOptions::default())
    }

    pub fn predict_with(
        &self,
        x_new: &DMatrix<f64>,
        coords_new: &[[f64; 2]],
        opts: PredictOptions,
    ) -> Result<NngpPrediction> {
        let kx = self.x.ncols();
        if x_new.ncols() != kx {
            return Err(NngpError::Dimension { expected: kx, got: x_new.ncols() });
        }
        if coords_new.len() != x_new.nrows() {
            return Err(NngpError::Dimension { expected: x_new.nrows(), got: coords_new.len() });
        }
        if let Some(i) = coords_new.iter().position(|c| !(c[0].is_finite() && c[1].is_finite())) {
            return Err(NngpError::NonFiniteCoordinate(i));
        }
        let m = self.prediction_neighbors();
        let tree = self.tree();
        let scale = self.sigma2_mean();
        let out: Vec<Result<(f64, f64)>> = (0..coords_new.len())
            .into_par_iter()
            .map(|i| {
                let s0 = coords_new[i];
                let nb: Vec<usize> = tree.nearest(s0, m).into_iter().map(|(j, _)| j).collect();
                let local: Vec<[f64; 2]> = nb.iter().map(|&j| self.coords[j]).collect();
                let (b0, v_local) =
                    conditional(&local, s0, self.family, self.phi, self.alpha).ok_or(NngpError::Singular(nb[0]))?;
                let x0 = x_new.row(i).transpose();
                let mut mean = x0.dot(&self.mu_beta);
                let mut u = x0;
                for (&j, &w) in nb.iter().zip(b0.iter()) {
                    mean += w * self.residuals[j];
                    u -= self.x.row(j).transpose() * w;
                }
                let mut v0 = v_local.max(0.0);
                if opts.gls_correction {
                    v0 += (u.transpose() * &self.v_beta * &u)[(0, 0)];
                }
                Ok((mean, scale * v0))
            })
            .collect();
        let mut mean = DVector::zeros(out.len());
        let mut variance = DVector::zeros(out.len());
        for (i, r) in out.into_iter().enumerate() {
            let (mu, v) = r?;
            mean[i] = mu;
            variance[i] = v;
        }
        Ok(NngpPrediction { mean, variance, dof: 2.0 * self.a_post })
    }
}
