use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_neighbor_graph, check_params, fit_with_graph, ConjugatePrior, NngpError, Result};
use crate::covmodel::CovFamily;
use crate::dataset::{fold_assignment, fold_indices, SpatialDataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub phi: f64,
    pub alpha: f64,
    pub cv_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub phi: f64,
    pub alpha: f64,
    /// One row per grid point, `phi` major.
    pub table: Vec<GridPoint>,
}

fn check_folds(n: usize, folds: usize) -> Result<()> {
    if folds < 2 || folds > n {
        return Err(NngpError::InvalidFolds);
    }
    Ok(())
}

/// Pooled K-fold CV MSE for every `(phi, alpha)` pair, each fold fitting
/// with the weakly informative prior of its training part.
fn cv_sse(
    ds: &SpatialDataset,
    family: CovFamily,
    params: &[(f64, f64)],
    k: usize,
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let assignment = fold_assignment(ds.n(), folds, seed);
    let mut sse = vec![0.0; params.len()];
    for f in 0..folds {
        let (train_idx, test_idx) = fold_indices(&assignment, f);
        let train = ds.subset(&train_idx);
        let test = ds.subset(&test_idx);
        let prior = ConjugatePrior::weakly_informative(&train);
        let graph = build_neighbor_graph(&train.coords, k)?;
        let fold_sse: Vec<Result<f64>> = params
            .par_iter()
            .map(|&(phi, alpha)| {
                let post = fit_with_graph(&train, graph.clone(), family, phi, alpha, &prior)?;
                let pred = post.predict(&test.x, &test.coords)?;
                Ok((pred.mean - &test.y).norm_squared())
            })
            .collect();
        for (acc, r) in sse.iter_mut().zip(fold_sse) {
            *acc += r?;
        }
    }
    Ok(sse)
}

/// Grid search over `(phi, alpha)` by pooled K-fold CV MSE. Ties go to the
/// smaller `alpha`, then the smaller `phi`.
pub fn grid_search(
    ds: &SpatialDataset,
    family: CovFamily,
    phi_grid: &[f64],
    alpha_grid: &[f64],
    k: usize,
    folds: usize,
    seed: u64,
) -> Result<GridSearchResult> {
    if phi_grid.is_empty() || alpha_grid.is_empty() {
        return Err(NngpError::EmptyGrid);
    }
    check_folds(ds.n(), folds)?;
    let params: Vec<(f64, f64)> = phi_grid.iter().flat_map(|&p| alpha_grid.iter().map(move |&a| (p, a))).collect();
    for &(p, a) in &params {
        check_params(p, a)?;
    }
    let n = ds.n() as f64;
    let sse = cv_sse(ds, family, &params, k, folds, seed)?;
    let table: Vec<GridPoint> =
        params.iter().zip(&sse).map(|(&(phi, alpha), &s)| GridPoint { phi, alpha, cv_mse: s / n }).collect();
    let best = table
        .iter()
        .min_by(|a, b| {
            a.cv_mse.total_cmp(&b.cv_mse).then(a.alpha.total_cmp(&b.alpha)).then(a.phi.total_cmp(&b.phi))
        })
        .expect("non-empty grid");
    Ok(GridSearchResult { phi: best.phi, alpha: best.alpha, table })
}

/// CV MSE for each distinct `k` (first occurrence order kept).
pub fn neighbor_curve(
    ds: &SpatialDataset,
    family: CovFamily,
    phi: f64,
    alpha: f64,
    k_list: &[usize],
    folds: usize,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    if k_list.is_empty() {
        return Err(NngpError::EmptyGrid);
    }
    check_params(phi, alpha)?;
    check_folds(ds.n(), folds)?;
    let mut ks: Vec<usize> = Vec::new();
    for &k in k_list {
        if k == 0 {
            return Err(NngpError::InvalidK);
        }
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    let n = ds.n() as f64;
    ks.into_iter()
        .map(|k| Ok((k, cv_sse(ds, family, &[(phi, alpha)], k, folds, seed)?[0] / n)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn smooth(n: usize, seed: u64) -> SpatialDataset {
        let mut rng = seeded(seed);
        let coords: Vec<[f64; 2]> = (0..n).map(|_| [rng.random::<f64>() * 20.0, rng.random::<f64>() * 20.0]).collect();
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_fn(n, |i, _| {
            (coords[i][0] / 3.0).sin() + (coords[i][1] / 4.0).cos() + 0.05 * rng.sample::<f64, _>(StandardNormal)
        });
        SpatialDataset::new(y, x, coords, vec!["intercept".into()]).unwrap()
    }

    #[test]
    fn single_point_grid_is_returned() {
        let ds = smooth(60, 1);
        let r = grid_search(&ds, CovFamily::Exponential, &[0.4], &[0.1], 5, 3, 0).unwrap();
        assert_eq!((r.phi, r.alpha), (0.4, 0.1));
        assert_eq!(r.table.len(), 1);
    }

    #[test]
    fn table_is_exhaustive_and_deterministic() {
        let ds = smooth(80, 2);
        let phis = [0.1, 0.3, 1.0];
        let alphas = [0.01, 0.1, 1.0, 10.0];
        let a = grid_search(&ds, CovFamily::Exponential, &phis, &alphas, 8, 4, 7).unwrap();
        let b = grid_search(&ds, CovFamily::Exponential, &phis, &alphas, 8, 4, 7).unwrap();
        assert_eq!(a.table.len(), 12);
        assert_eq!(a, b);
        let best = a.table.iter().map(|g| g.cv_mse).fold(f64::INFINITY, f64::min);
        let chosen = a.table.iter().find(|g| g.phi == a.phi && g.alpha == a.alpha).unwrap();
        assert_eq!(chosen.cv_mse, best);
    }

    #[test]
    fn ties_prefer_smaller_alpha_then_phi() {
        // Far-apart sites decorrelate for every phi on the grid, so all
        // points score the same.
        let n = 30;
        let coords: Vec<[f64; 2]> = (0..n).map(|i| [i as f64 * 1e4, 0.0]).collect();
        let y = DVector::from_fn(n, |i, _| (i as f64).sin());
        let ds = SpatialDataset::new(y, DMatrix::from_element(n, 1, 1.0), coords, vec!["intercept".into()]).unwrap();
        let r = grid_search(&ds, CovFamily::Exponential, &[2.0, 1.0], &[0.5, 0.5], 3, 3, 0).unwrap();
        let first = r.table[0].cv_mse;
        assert!(r.table.iter().all(|g| g.cv_mse == first));
        assert_eq!((r.phi, r.alpha), (1.0, 0.5));
    }

    #[test]
    fn curve_dedups_and_handles_k1() {
        let ds = smooth(100, 3);
        let c = neighbor_curve(&ds, CovFamily::Exponential, 0.3, 0.05, &[5, 1, 5, 10, 1], 5, 1).unwrap();
        assert_eq!(c.iter().map(|p| p.0).collect::<Vec<_>>(), vec![5, 1, 10]);
        assert!(c.iter().all(|p| p.1.is_finite()));
    }

    #[test]
    fn more_neighbours_help_on_smooth_surface() {
        let ds = smooth(300, 4);
        let c = neighbor_curve(&ds, CovFamily::Gaussian, 0.3, 0.01, &[1, 15], 5, 2).unwrap();
        assert!(c[1].1 < c[0].1);
    }

    #[test]
    fn argument_errors() {
        let ds = smooth(20, 5);
        assert_eq!(grid_search(&ds, CovFamily::Exponential, &[], &[0.1], 3, 3, 0).unwrap_err(), NngpError::EmptyGrid);
        assert_eq!(grid_search(&ds, CovFamily::Exponential, &[1.0], &[0.1], 3, 1, 0).unwrap_err(), NngpError::InvalidFolds);
        assert_eq!(neighbor_curve(&ds, CovFamily::Exponential, 1.0, 0.1, &[], 3, 0).unwrap_err(), NngpError::EmptyGrid);
    }
}
