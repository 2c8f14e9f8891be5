use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_params, dist, NeighborGraph, NngpError, Result};
use crate::covmodel::CovFamily;

/// Sparse `(I - A)` and conditional variances `d`, in ordered positions.
///
/// `weights[p][j]` is the entry of `A` in row `p` at column
/// `graph.neighbors[p][j]`. The approximate precision of `M` is
/// `(I - A)' diag(1/d) (I - A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVecchiaFactor {
    pub weights: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

impl SparseVecchiaFactor {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// `diag(1/sqrt(d)) (I - A) v` for `v` in ordered positions.
    pub fn whiten(&self, graph: &NeighborGraph, v: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|p| {
                let s: f64 = graph.neighbors[p].iter().zip(&self.weights[p]).map(|(&j, &a)| a * v[j]).sum();
                (v[p] - s) / self.d[p].sqrt()
            })
            .collect()
    }

    /// Dense precision `(I - A)' diag(1/d) (I - A)`; for testing at small `n`.
    pub fn dense_precision(&self, graph: &NeighborGraph) -> DMatrix<f64> {
        let n = self.n();
        let mut u = DMatrix::identity(n, n);
        for p in 0..n {
            for (&j, &a) in graph.neighbors[p].iter().zip(&self.weights[p]) {
                u[(p, j)] = -a;
            }
            let s = self.d[p].sqrt();
            for c in 0..n {
                u[(p, c)] /= s;
            }
        }
        u.transpose() * u
    }
}

/// Vecchia factor of `M = rho_phi(D) + alpha * I` over `coords` (input
/// order). Rows are computed independently in parallel.
pub fn build_factor(
    graph: &NeighborGraph,
    coords: &[[f64; 2]],
    family: CovFamily,
    phi: f64,
    alpha: f64,
) -> Result<SparseVecchiaFactor> {
    check_params(phi, alpha)?;
    if coords.len() != graph.n() {
        return Err(NngpError::Dimension { expected: graph.n(), got: coords.len() });
    }
    let pts = graph.ordered(coords);
    let rows: Vec<Result<(Vec<f64>, f64)>> = (0..pts.len())
        .into_par_iter()
        .map(|p| {
            let nb = &graph.neighbors[p];
            let local: Vec<[f64; 2]> = nb.iter().map(|&j| pts[j]).collect();
            let (w, d) = conditional(&local, pts[p], family, phi, alpha).ok_or(NngpError::Singular(graph.ordering[p]))?;
            if !(d > 0.0) {
                return Err(NngpError::Singular(graph.ordering[p]));
            }
            Ok((w.as_slice().to_vec(), d.min(1.0 + alpha)))
        })
        .collect();
    let mut weights = Vec::with_capacity(rows.len());
    let mut d = Vec::with_capacity(rows.len());
    for r in rows {
        let (w, di) = r?;
        weights.push(w);
        d.push(di);
    }
    Ok(SparseVecchiaFactor { weights, d })
}

/// Local kriging system: weights `M_NN^-1 rho_0` and residual variance
/// `1 + alpha - rho_0' M_NN^-1 rho_0`. `None` when `M_NN` is not positive
/// definite.
pub(crate) fn conditional(
    local: &[[f64; 2]],
    target: [f64; 2],
    family: CovFamily,
    phi: f64,
    alpha: f64,
) -> Option<(DVector<f64>, f64)> {
    let m = local.len();
    if m == 0 {
        return Some((DVector::zeros(0), 1.0 + alpha));
    }
    let mnn = DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            1.0 + alpha
        } else {
            family.correlation(phi, dist(local[a], local[b]))
        }
    });
    let r = DVector::from_fn(m, |a, _| family.correlation(phi, dist(local[a], target)));
    let chol = mnn.cholesky()?;
    let w = chol.solve(&r);
    let d = 1.0 + alpha - r.dot(&w);
    Some((w, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp_exact::covariance_matrix;
    use crate::nngp::build_neighbor_graph;
    use crate::rng::seeded;
    use crate::CovarianceSpec;
    use rand::Rng;

    fn points(n: usize, seed: u64, scale: f64) -> Vec<[f64; 2]> {
        let mut rng = seeded(seed);
        (0..n).map(|_| [rng.random::<f64>() * scale, rng.random::<f64>() * scale]).collect()
    }

    #[test]
    fn first_row_is_unconditional() {
        let pts = points(20, 1, 5.0);
        let g = build_neighbor_graph(&pts, 5).unwrap();
        let f = build_factor(&g, &pts, CovFamily::Exponential, 0.5, 0.3).unwrap();
        assert!(f.weights[0].is_empty());
        assert_eq!(f.d[0], 1.3);
    }

    #[test]
    fn independence_limit() {
        let pts = points(30, 2, 5.0);
        let g = build_neighbor_graph(&pts, 5).unwrap();
        let f = build_factor(&g, &pts, CovFamily::Exponential, 1e6, 0.2).unwrap();
        assert!(f.weights.iter().flatten().all(|&a| a.abs() < 1e-300));
        assert!(f.d.iter().all(|&d| (d - 1.2).abs() < 1e-15));
    }

    #[test]
    fn exact_at_full_conditioning() {
        let pts = points(200, 3, 10.0);
        for family in CovFamily::ALL {
            let alpha = 0.4;
            let g = build_neighbor_graph(&pts, 199).unwrap();
            let f = build_factor(&g, &pts, family, 0.3, alpha).unwrap();
            let spec = CovarianceSpec::new(family, 1.0, 0.3, alpha).unwrap();
            let dense = covariance_matrix(&spec, &g.ordered(&pts));
            let inv = dense.cholesky().unwrap().inverse();
            let err = (f.dense_precision(&g) - inv).amax();
            assert!(err < 1e-6, "{family}: {err}");
        }
    }

    #[test]
    fn conditional_variances_bounded_and_monotone_in_k() {
        let pts = points(150, 4, 10.0);
        let mut prev: Option<Vec<f64>> = None;
        for k in [1, 2, 5, 10, 20] {
            let g = build_neighbor_graph(&pts, k).unwrap();
            let f = build_factor(&g, &pts, CovFamily::Exponential, 0.4, 0.1).unwrap();
            assert!(f.d.iter().all(|&d| d > 0.0 && d <= 1.1));
            if let Some(p) = &prev {
                assert!(f.d.iter().zip(p).all(|(a, b)| *a <= b + 1e-12));
            }
            prev = Some(f.d);
        }
    }

    #[test]
    fn duplicates_without_nugget_are_singular() {
        let mut pts = points(20, 5, 5.0);
        pts[9] = pts[4];
        let g = build_neighbor_graph(&pts, 5).unwrap();
        let err = build_factor(&g, &pts, CovFamily::Exponential, 0.5, 0.0).unwrap_err();
        assert!(matches!(err, NngpError::Singular(i) if i == 4 || i == 9));
        assert!(err.to_string().contains("alpha > 0"));
        assert!(build_factor(&g, &pts, CovFamily::Exponential, 0.5, 0.1).is_ok());
    }

    #[test]
    fn parameter_validation() {
        let pts = points(5, 6, 1.0);
        let g = build_neighbor_graph(&pts, 2).unwrap();
        assert!(build_factor(&g, &pts, CovFamily::Exponential, 0.0, 0.1).is_err());
        assert!(build_factor(&g, &pts, CovFamily::Exponential, 1.0, -0.1).is_err());
    }

    #[test]
    fn independent_of_worker_count() {
        let pts = points(500, 7, 10.0);
        let g = build_neighbor_graph(&pts, 10).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let one = pool.install(|| build_factor(&g, &pts, CovFamily::Gaussian, 0.3, 0.5).unwrap());
        let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let many = pool4.install(|| build_factor(&g, &pts, CovFamily::Gaussian, 0.3, 0.5).unwrap());
        assert_eq!(one, many);
    }
}
