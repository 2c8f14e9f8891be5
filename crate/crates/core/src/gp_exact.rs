//! Dense universal Kriging with a full `n x n` covariance.
//!
//! Cubic in `n`, so fits are refused above a configurable size cap. Besides
//! being a usable model for small data it is the reference the NNGP
//! approximation is checked against.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;
use thiserror::Error;

use crate::covmodel::{CovError, CovarianceSpec};
use crate::dataset::SpatialDataset;
use crate::spatial::KdTree;

pub const DEFAULT_MAX_N: usize = 5000;

/// Sites closer than this (km) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("exact GP limited to n <= {cap}, got n = {n}; use the NNGP model instead")]
    CapExceeded { n: usize, cap: usize },
    #[error("duplicate coordinates at rows {0} and {1} with zero nugget; add a nugget or jitter the sites")]
    DuplicateSites(usize, usize),
    #[error("covariance matrix is not positive definite")]
    Factorization,
    #[error("GLS system X' Lambda^-1 X is singular")]
    SingularGls,
    #[error("expected {expected} columns, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Cov(#[from] CovError),
}

pub type Result<T> = std::result::Result<T, GpError>;

/// Whether to predict a new observation `y(s0)` or the noiseless surface
/// `x(s0)'beta + w(s0)`. They differ by `tau2` in the variance only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictTarget {
    #[default]
    Observation,
    Surface,
}

#[derive(Debug, Clone)]
pub struct ExactGpFit {
    pub spec: CovarianceSpec,
    pub beta_gls: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    x: DMatrix<f64>,
    coords: Vec<[f64; 2]>,
    /// `Lambda^-1 (y - X beta)`.
    resid_weights: DVector<f64>,
    /// `Lambda^-1 X`.
    linv_x: DMatrix<f64>,
    /// `(X' Lambda^-1 X)^-1`.
    gls_cov: DMatrix<f64>,
}

/// Dense `Lambda = C(theta) + tau2 I` for a set of sites.
pub fn covariance_matrix(spec: &CovarianceSpec, coords: &[[f64; 2]]) -> DMatrix<f64> {
    let n = coords.len();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(j, j)] = spec.sigma2 + spec.tau2;
        for i in (j + 1)..n {
            let d = dist(coords[i], coords[j]);
            let c = spec.sigma2 * spec.family.correlation(spec.phi, d);
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    m
}

#[inline]
fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// First pair of sites closer than [`DUPLICATE_TOL`], if any.
pub fn find_duplicate(coords: &[[f64; 2]]) -> Option<(usize, usize)> {
    let tree = KdTree::new(coords.to_vec());
    coords.iter().enumerate().find_map(|(i, &p)| {
        tree.nearest(p, 2)
            .into_iter()
            .find(|&(j, d2)| j != i && d2.sqrt() < DUPLICATE_TOL)
            .map(|(j, _)| (i.min(j), i.max(j)))
    })
}

pub fn fit_exact(ds: &SpatialDataset, spec: &CovarianceSpec) -> Result<ExactGpFit> {
    fit_exact_capped(ds, spec, DEFAULT_MAX_N)
}

pub fn fit_exact_capped(ds: &SpatialDataset, spec: &CovarianceSpec, cap: usize) -> Result<ExactGpFit> {
    spec.validate()?;
    let n = ds.n();
    if n > cap {
        return Err(GpError::CapExceeded { n, cap });
    }
    if spec.tau2 == 0.0 {
        if let Some((i, j)) = find_duplicate(&ds.coords) {
            return Err(GpError::DuplicateSites(i, j));
        }
    }
    let lambda = covariance_matrix(spec, &ds.coords);
    let chol = lambda.cholesky().ok_or(GpError::Factorization)?;
    let linv_x = chol.solve(&ds.x);
    let xtlx = ds.x.transpose() * &linv_x;
    let gls_chol = xtlx.cholesky().ok_or(GpError::SingularGls)?;
    let gls_cov = gls_chol.inverse();
    let beta_gls = gls_chol.solve(&(linv_x.transpose() * &ds.y));
    let resid_weights = chol.solve(&(&ds.y - &ds.x * &beta_gls));
    Ok(ExactGpFit {
        spec: *spec,
        beta_gls,
        chol,
        x: ds.x.clone(),
        coords: ds.coords.clone(),
        resid_weights,
        linv_x,
        gls_cov,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrigingPrediction {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

impl ExactGpFit {
    pub fn n(&self) -> usize {
        self.coords.len()
    }

    fn cross_cov(&self, s0: [f64; 2]) -> DVector<f64> {
        let sp = &self.spec;
        DVector::from_iterator(
            self.n(),
            self.coords.iter().map(|&s| sp.sigma2 * sp.family.correlation(sp.phi, dist(s, s0))),
        )
    }

    fn check_dim(&self, x_new: &DMatrix<f64>, coords_new: &[[f64; 2]]) -> Result<()> {
        if x_new.ncols() != self.x.ncols() {
            return Err(GpError::Dimension { expected: self.x.ncols(), got: x_new.ncols() });
        }
        if x_new.nrows() != coords_new.len() {
            return Err(GpError::Dimension { expected: x_new.nrows(), got: coords_new.len() });
        }
        Ok(())
    }

    /// Universal-Kriging mean and variance at new sites, including the
    /// variance inflation from estimating `beta`.
    pub fn krige(&self, x_new: &DMatrix<f64>, coords_new: &[[f64; 2]], target: PredictTarget) -> Result<KrigingPrediction> {
        self.check_dim(x_new, coords_new)?;
        let l = self.chol.l();
        let out: Vec<(f64, f64)> = (0..coords_new.len())
            .into_par_iter()
            .map(|i| {
                let c0 = self.cross_cov(coords_new[i]);
                let x0 = x_new.row(i).transpose();
                let mean = x0.dot(&self.beta_gls) + c0.dot(&self.resid_weights);
                let half = l.solve_lower_triangular(&c0).expect("non-singular factor");
                let u = &x0 - self.linv_x.transpose() * &c0;
                let corr = (u.transpose() * &self.gls_cov * &u)[(0, 0)];
                let mut var = self.spec.sigma2 - half.norm_squared() + corr;
                if target == PredictTarget::Observation {
                    var += self.spec.tau2;
                }
                (mean, var.max(0.0))
            })
            .collect();
        Ok(KrigingPrediction {
            mean: DVector::from_iterator(out.len(), out.iter().map(|p| p.0)),
            variance: DVector::from_iterator(out.len(), out.iter().map(|p| p.1)),
        })
    }

    /// Weights `lambda` with `mean = lambda' y` at one site.
    pub fn kriging_weights(&self, x0: &DVector<f64>, s0: [f64; 2]) -> Result<DVector<f64>> {
        if x0.len() != self.x.ncols() {
            return Err(GpError::Dimension { expected: self.x.ncols(), got: x0.len() });
        }
        let c0 = self.cross_cov(s0);
        let lc = self.chol.solve(&c0);
        let u = x0 - self.x.transpose() * &lc;
        Ok(lc + &self.linv_x * (&self.gls_cov * u))
    }
}
