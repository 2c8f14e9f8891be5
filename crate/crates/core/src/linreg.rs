//! Ordinary least squares with classical inference (t values, adjusted R²).
//!
//! The solve goes through a Householder QR with column-norm pivoting, which
//! reveals rank deficiency and names the dependent columns instead of
//! returning a silent answer.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::dataset::SpatialDataset;

#[derive(Debug, Error, PartialEq)]
pub enum OlsError {
    #[error("need more rows than columns (n = {n}, K = {k})")]
    TooFewRows { n: usize, k: usize },
    #[error("design matrix is rank deficient; dependent column(s): {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("expected {expected} columns, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, OlsError>;

/// Householder QR of an `n x K` matrix with column pivoting by remaining norm.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Householder vectors below the diagonal, `R` on and above it.
    packed: DMatrix<f64>,
    /// Leading entries of the Householder vectors.
    heads: Vec<f64>,
    taus: Vec<f64>,
    /// `perm[j]` is the original index of pivoted column `j`.
    pub perm: Vec<usize>,
    pub rank: usize,
}

impl PivotedQr {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (n, k) = x.shape();
        let mut a = x.clone();
        let steps = n.min(k);
        let mut perm: Vec<usize> = (0..k).collect();
        let mut heads = vec![0.0; steps];
        let mut taus = vec![0.0; steps];
        let mut first_diag = 0.0;
        let mut rank = steps;
        let tol_rel = (n.max(k) as f64 * f64::EPSILON).max(1e-10);

        for j in 0..steps {
            // Pivot on the largest trailing column norm.
            let (p, best) = (j..k)
                .map(|c| (c, a.view((j, c), (n - j, 1)).norm_squared()))
                .fold((j, -1.0), |acc, (c, v)| if v > acc.1 { (c, v) } else { acc });
            if p != j {
                a.swap_columns(j, p);
                perm.swap(j, p);
            }
            let norm = best.sqrt();
            if j == 0 {
                first_diag = norm;
            }
            if norm <= tol_rel * first_diag || norm == 0.0 {
                rank = rank.min(j);
            }
            if norm == 0.0 {
                continue;
            }
            let alpha = if a[(j, j)] > 0.0 { -norm } else { norm };
            let v0 = a[(j, j)] - alpha;
            // v = [v0, a[j+1.., j]], H = I - tau v v'
            let vnorm2 = v0 * v0 + (norm * norm - a[(j, j)] * a[(j, j)]);
            let tau = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            for c in (j + 1)..k {
                let mut dot = v0 * a[(j, c)];
                for r in (j + 1)..n {
                    dot += a[(r, j)] * a[(r, c)];
                }
                let s = tau * dot;
                a[(j, c)] -= s * v0;
                for r in (j + 1)..n {
                    let vr = a[(r, j)];
                    a[(r, c)] -= s * vr;
                }
            }
            a[(j, j)] = alpha;
            heads[j] = v0;
            taus[j] = tau;
        }
        PivotedQr { packed: a, heads, taus, perm, rank }
    }

    pub fn ncols(&self) -> usize {
        self.packed.ncols()
    }

    /// Applies `Q'` in place.
    pub fn q_tr_mul(&self, y: &mut DVector<f64>) {
        let n = self.packed.nrows();
        for j in 0..self.taus.len() {
            let tau = self.taus[j];
            if tau == 0.0 {
                continue;
            }
            let mut dot = self.heads[j] * y[j];
            for r in (j + 1)..n {
                dot += self.packed[(r, j)] * y[r];
            }
            let s = tau * dot;
            y[j] -= s * self.heads[j];
            for r in (j + 1)..n {
                y[r] -= s * self.packed[(r, j)];
            }
        }
    }

    /// Upper-triangular `K x K` factor in pivoted column order.
    pub fn r(&self) -> DMatrix<f64> {
        let k = self.ncols();
        DMatrix::from_fn(k, k, |i, j| if i <= j { self.packed[(i, j)] } else { 0.0 })
    }

    /// Least-squares solution in the original column order. Requires full rank.
    pub fn solve(&self, y: &DVector<f64>) -> DVector<f64> {
        let k = self.ncols();
        let mut qty = y.clone();
        self.q_tr_mul(&mut qty);
        let r = self.r();
        let z = r
            .solve_upper_triangular(&qty.rows(0, k).into_owned())
            .expect("full-rank R");
        let mut beta = DVector::zeros(k);
        for (j, &orig) in self.perm.iter().enumerate() {
            beta[orig] = z[j];
        }
        beta
    }

    /// `(X'X)^-1` in the original column order. Requires full rank.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        let k = self.ncols();
        let r_inv = self
            .r()
            .solve_upper_triangular(&DMatrix::identity(k, k))
            .expect("full-rank R");
        let pivoted = &r_inv * r_inv.transpose();
        let mut out = DMatrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                out[(self.perm[i], self.perm[j])] = pivoted[(i, j)];
            }
        }
        out
    }
}

/// Normal-equations solve through a Cholesky factor of `X'X`.
///
/// Less stable than [`PivotedQr`]; kept as an independent cross-check.
pub fn solve_normal_equations(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    xtx.cholesky().map(|c| c.solve(&xty))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub feature_names: Vec<String>,
    pub beta: DVector<f64>,
    pub std_errors: DVector<f64>,
    pub t_values: DVector<f64>,
    /// Residual variance `RSS / (n - K)`.
    pub sigma2_hat: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
    pub k: usize,
    pub xtx_inv: DMatrix<f64>,
}

pub fn fit(ds: &SpatialDataset) -> Result<OlsFit> {
    let (n, k) = ds.x.shape();
    if n <= k {
        return Err(OlsError::TooFewRows { n, k });
    }
    let qr = PivotedQr::new(&ds.x);
    if qr.rank < k {
        let names = qr.perm[qr.rank..].iter().map(|&c| ds.feature_names[c].clone()).collect();
        return Err(OlsError::RankDeficient(names));
    }
    let beta = qr.solve(&ds.y);
    let resid = &ds.y - &ds.x * &beta;
    let rss = resid.norm_squared();
    let dof = (n - k) as f64;
    let sigma2_hat = rss / dof;
    let xtx_inv = qr.xtx_inverse();
    let std_errors = DVector::from_iterator(k, (0..k).map(|j| (sigma2_hat * xtx_inv[(j, j)]).sqrt()));
    let t_values = beta.component_div(&std_errors);
    let mean = ds.y.mean();
    let tss: f64 = ds.y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else if rss == 0.0 { 1.0 } else { 0.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / dof;
    Ok(OlsFit {
        feature_names: ds.feature_names.clone(),
        beta,
        std_errors,
        t_values,
        sigma2_hat,
        r2,
        adj_r2,
        n,
        k,
        xtx_inv,
    })
}

/// Point and interval prediction for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsPrediction {
    pub mean: f64,
    /// Standard deviation of a new observation.
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl OlsFit {
    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        if x_new.ncols() != self.k {
            return Err(OlsError::Dimension { expected: self.k, got: x_new.ncols() });
        }
        Ok(x_new * &self.beta)
    }

    /// Classical prediction intervals for new observations at `level`
    /// (e.g. 0.95), from a t distribution with `n - K` degrees of freedom.
    pub fn predict_interval(&self, x_new: &DMatrix<f64>, level: f64) -> Result<Vec<OlsPrediction>> {
        let mean = self.predict(x_new)?;
        let t = StudentsT::new(0.0, 1.0, (self.n - self.k) as f64).expect("positive dof");
        let q = t.inverse_cdf(0.5 + level / 2.0);
        Ok((0..x_new.nrows())
            .map(|i| {
                let row = x_new.row(i).transpose();
                let lev = (row.transpose() * &self.xtx_inv * &row)[(0, 0)];
                let sd = (self.sigma2_hat * (1.0 + lev)).sqrt();
                OlsPrediction { mean: mean[i], sd, lower: mean[i] - q * sd, upper: mean[i] + q * sd }
            })
            .collect())
    }

    /// Coefficient table: name, coefficient, t value.
    pub fn coefficient_table(&self) -> String {
        let width = self.feature_names.iter().map(String::len).max().unwrap_or(8).max(8);
        let mut s = format!("{:<width$} {:>14} {:>12}\n", "variable", "coef", "t value");
        for j in 0..self.k {
            s.push_str(&format!(
                "{:<width$} {:>14.6} {:>12.3}\n",
                self.feature_names[j], self.beta[j], self.t_values[j]
            ));
        }
        s.push_str(&format!("{:<width$} {:>14.4}\n", "adjusted R2", self.adj_r2));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dataset(x: DMatrix<f64>, y: DVector<f64>) -> SpatialDataset {
        let names = (0..x.ncols()).map(|j| if j == 0 { "intercept".into() } else { format!("x{j}") }).collect();
        let n = y.len();
        SpatialDataset::new(y, x, vec![[0.0, 0.0]; n], names).unwrap()
    }

    #[test]
    fn exact_line() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.37 - 2.0).collect();
        let x = DMatrix::from_fn(20, 2, |r, c| if c == 0 { 1.0 } else { xs[r] });
        let y = DVector::from_iterator(20, xs.iter().map(|v| 2.0 + 3.0 * v));
        let f = fit(&dataset(x, y)).unwrap();
        assert!((f.beta[0] - 2.0).abs() < 1e-10);
        assert!((f.beta[1] - 3.0).abs() < 1e-10);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_noise_has_small_adjusted_r2() {
        let mut rng = seeded(5);
        let n = 2000;
        let x = DMatrix::from_fn(n, 4, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let f = fit(&dataset(x, y)).unwrap();
        assert!(f.adj_r2 <= f.r2);
        assert!(f.adj_r2.abs() < 0.01);
    }

    #[test]
    fn duplicated_column_is_named() {
        let mut rng = seeded(1);
        let n = 50;
        let base: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let x = DMatrix::from_fn(n, 3, |r, c| if c == 0 { 1.0 } else { base[r] });
        let y = DVector::from_fn(n, |_, _| rng.random());
        let err = fit(&dataset(x, y)).unwrap_err();
        match err {
            OlsError::RankDeficient(cols) => assert_eq!(cols.len(), 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn intercept_only_predicts_mean() {
        let y = DVector::from_vec(vec![1.0, 2.0, 4.0, 9.0]);
        let f = fit(&dataset(DMatrix::from_element(4, 1, 1.0), y.clone())).unwrap();
        let p = f.predict(&DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert!(p.iter().all(|v| (v - y.mean()).abs() < 1e-12));
    }

    #[test]
    fn residuals_orthogonal_to_columns() {
        let mut rng = seeded(9);
        let n = 300;
        let x = DMatrix::from_fn(n, 5, |_, c| if c == 0 { 1.0 } else { rng.sample::<f64, _>(StandardNormal) * 10.0 });
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let f = fit(&dataset(x.clone(), y.clone())).unwrap();
        let fitted = f.predict(&x).unwrap();
        let xr = x.transpose() * (y - fitted);
        assert!(xr.amax() < 1e-6 * n as f64);
    }

    #[test]
    fn hand_solved_two_unknowns() {
        // Rows (1,0),(1,1),(1,2) with y = 1, 2, 4:
        // X'X = [[3,3],[3,5]], X'y = [7,10] => beta = (5/6, 3/2).
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let f = fit(&dataset(x, DVector::from_vec(vec![1.0, 2.0, 4.0]))).unwrap();
        assert!((f.beta[0] - 5.0 / 6.0).abs() < 1e-12);
        assert!((f.beta[1] - 1.5).abs() < 1e-12);
        let p = f.predict(&DMatrix::from_row_slice(1, 2, &[1.0, 3.0])).unwrap();
        assert!((p[0] - (5.0 / 6.0 + 4.5)).abs() < 1e-12);
    }

    #[test]
    fn qr_agrees_with_normal_equations() {
        let mut rng = seeded(11);
        let n = 400;
        let x = DMatrix::from_fn(n, 6, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let y = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let qr = PivotedQr::new(&x).solve(&y);
        let ne = solve_normal_equations(&x, &y).unwrap();
        assert!((qr - ne).amax() < 1e-8);
    }

    #[test]
    fn dimension_mismatch() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        let f = fit(&dataset(x, DVector::from_vec(vec![1.0, 2.0, 4.0]))).unwrap();
        assert!(matches!(f.predict(&DMatrix::zeros(1, 3)), Err(OlsError::Dimension { .. })));
        assert!(matches!(
            fit(&dataset(DMatrix::from_element(1, 1, 1.0), DVector::from_vec(vec![1.0]))),
            Err(OlsError::TooFewRows { .. })
        ));
    }

    #[test]
    fn intervals_cover_mean() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let f = fit(&dataset(x.clone(), DVector::from_vec(vec![1.0, 2.2, 2.9, 4.1]))).unwrap();
        for p in f.predict_interval(&x, 0.95).unwrap() {
            assert!(p.lower < p.mean && p.mean < p.upper);
            assert!(p.sd > f.sigma2_hat.sqrt());
        }
    }
}
