//! Isotropic covariance families, semivariograms, empirical variogram
//! estimation and iteratively re-weighted least-squares variogram fitting.
//!
//! Parametrization: `phi` is a decay rate, so `1 / phi` is the range in km.
//!
//! | family      | C(d) for d > 0                                   |
//! |-------------|--------------------------------------------------|
//! | exponential | `sigma2 * exp(-phi d)`                           |
//! | gaussian    | `sigma2 * exp(-(phi d)^2)`                       |
//! | spherical   | `sigma2 * (1 - 1.5 phi d + 0.5 (phi d)^3)`, 0 past `1/phi` |
//!
//! The nugget `tau2` never enters `C(d)`; it only adds to the variance of an
//! observation at distance zero from itself.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, PartialEq)]
pub enum CovError {
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("invalid covariance parameters: {0}")]
    InvalidSpec(String),
    #[error("need at least 2 points for a variogram, got {0}")]
    TooFewPoints(usize),
    #[error("maximum lag distance must be positive, got {0}")]
    BadMaxDist(f64),
    #[error("residuals ({0}) and coordinates ({1}) differ in length")]
    LengthMismatch(usize, usize),
    #[error("need at least 4 non-empty variogram bins, got {0}")]
    TooFewBins(usize),
    #[error("no candidate families")]
    NoFamilies,
    #[error("unknown covariance family {0:?}")]
    UnknownFamily(String),
}

pub type Result<T> = std::result::Result<T, CovError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovFamily {
    Exponential,
    Gaussian,
    Spherical,
}

impl CovFamily {
    pub const ALL: [CovFamily; 3] = [CovFamily::Gaussian, CovFamily::Spherical, CovFamily::Exponential];

    /// Correlation at distance `d >= 0`; equals 1 at the origin.
    #[inline]
    pub fn correlation(self, phi: f64, d: f64) -> f64 {
        let s = phi * d;
        match self {
            CovFamily::Exponential => (-s).exp(),
            CovFamily::Gaussian => (-s * s).exp(),
            CovFamily::Spherical => {
                if s < 1.0 {
                    1.0 - 1.5 * s + 0.5 * s * s * s
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CovFamily::Exponential => "exponential",
            CovFamily::Gaussian => "gaussian",
            CovFamily::Spherical => "spherical",
        }
    }
}

impl fmt::Display for CovFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CovFamily {
    type Err = CovError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(CovFamily::Exponential),
            "gaussian" | "gau" => Ok(CovFamily::Gaussian),
            "spherical" | "sph" => Ok(CovFamily::Spherical),
            _ => Err(CovError::UnknownFamily(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub family: CovFamily,
    /// Partial sill.
    pub sigma2: f64,
    /// Decay; `1 / phi` is the range in km.
    pub phi: f64,
    /// Nugget.
    pub tau2: f64,
}

impl CovarianceSpec {
    pub fn new(family: CovFamily, sigma2: f64, phi: f64, tau2: f64) -> Result<Self> {
        let s = CovarianceSpec { family, sigma2, phi, tau2 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma2.is_finite()
            && self.sigma2 >= 0.0
            && self.phi.is_finite()
            && self.phi > 0.0
            && self.tau2.is_finite()
            && self.tau2 >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(CovError::InvalidSpec(format!("sigma2={}, phi={}, tau2={}", self.sigma2, self.phi, self.tau2)))
        }
    }

    /// Nugget-to-partial-sill ratio `tau2 / sigma2`.
    pub fn alpha(&self) -> f64 {
        self.tau2 / self.sigma2
    }

    /// Covariance of the spatial process at distance `d` (no nugget).
    pub fn cov(&self, d: f64) -> Result<f64> {
        if d < 0.0 {
            return Err(CovError::NegativeDistance(d));
        }
        Ok(self.sigma2 * self.family.correlation(self.phi, d))
    }

    /// `gamma(0) = 0`, `gamma(d) = tau2 + sigma2 - C(d)` for `d > 0`.
    pub fn semivariogram(&self, d: f64) -> Result<f64> {
        if d < 0.0 {
            return Err(CovError::NegativeDistance(d));
        }
        if d == 0.0 {
            return Ok(0.0);
        }
        Ok(self.tau2 + self.sigma2 * (1.0 - self.family.correlation(self.phi, d)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalVariogram {
    /// Mean pair distance of each non-empty bin (km).
    pub centers: Vec<f64>,
    pub gamma: Vec<f64>,
    pub counts: Vec<u64>,
}

impl EmpiricalVariogram {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> EmpiricalVariogram {
        let idx: Vec<usize> = (0..self.len()).filter(|&j| keep(j)).collect();
        EmpiricalVariogram {
            centers: idx.iter().map(|&j| self.centers[j]).collect(),
            gamma: idx.iter().map(|&j| self.gamma[j]).collect(),
            counts: idx.iter().map(|&j| self.counts[j]).collect(),
        }
    }

    /// `h,gamma,n` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,gamma,n\n");
        for j in 0..self.len() {
            s.push_str(&format!("{},{},{}\n", self.centers[j], self.gamma[j], self.counts[j]));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramOptions {
    pub n_bins: usize,
    pub max_dist: f64,
    /// Above this many pairs within `max_dist`, a uniform subsample of this
    /// size is used instead.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for VariogramOptions {
    fn default() -> Self {
        VariogramOptions { n_bins: 20, max_dist: 100.0, max_pairs: 1_000_000, seed: 0 }
    }
}

#[derive(Clone)]
struct BinAcc {
    sq: Vec<f64>,
    dist: Vec<f64>,
    count: Vec<u64>,
}

impl BinAcc {
    fn new(n: usize) -> Self {
        BinAcc { sq: vec![0.0; n], dist: vec![0.0; n], count: vec![0; n] }
    }

    #[inline]
    fn add(&mut self, width: f64, max_dist: f64, d: f64, diff: f64) {
        if d > max_dist {
            return;
        }
        let j = ((d / width) as usize).min(self.count.len() - 1);
        self.sq[j] += diff * diff;
        self.dist[j] += d;
        self.count[j] += 1;
    }

    fn merge(mut self, other: &BinAcc) -> Self {
        for j in 0..self.count.len() {
            self.sq[j] += other.sq[j];
            self.dist[j] += other.dist[j];
            self.count[j] += other.count[j];
        }
        self
    }
}

/// Uniform bucket grid with cell side `cell`, for enumerating pairs closer
/// than `cell` without visiting all n^2 pairs.
struct CellGrid {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl CellGrid {
    fn new(coords: &[[f64; 2]], cell: f64) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for c in coords {
            for a in 0..2 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        // Cap the cell count so a tiny max_dist on a wide domain stays cheap.
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(0.0);
        let cell = cell.max(span / 4096.0);
        let nx = ((hi[0] - lo[0]) / cell) as usize + 1;
        let ny = ((hi[1] - lo[1]) / cell) as usize + 1;
        let mut grid = CellGrid { origin: lo, cell, nx, ny, start: vec![0; nx * ny + 1], items: vec![0; coords.len()] };
        let ids: Vec<usize> = coords.iter().map(|&c| grid.cell_of(c)).collect();
        for &id in &ids {
            grid.start[id + 1] += 1;
        }
        for j in 0..nx * ny {
            grid.start[j + 1] += grid.start[j];
        }
        let mut fill = grid.start.clone();
        for (i, &id) in ids.iter().enumerate() {
            grid.items[fill[id]] = i;
            fill[id] += 1;
        }
        grid
    }

    fn cell_xy(&self, c: [f64; 2]) -> (usize, usize) {
        let gx = (((c[0] - self.origin[0]) / self.cell) as usize).min(self.nx - 1);
        let gy = (((c[1] - self.origin[1]) / self.cell) as usize).min(self.ny - 1);
        (gx, gy)
    }

    fn cell_of(&self, c: [f64; 2]) -> usize {
        let (gx, gy) = self.cell_xy(c);
        gy * self.nx + gx
    }

    /// Calls `f` on every point in the 3x3 block of cells around `c`.
    fn for_each_candidate(&self, c: [f64; 2], mut f: impl FnMut(usize)) {
        let (gx, gy) = self.cell_xy(c);
        for y in gy.saturating_sub(1)..=(gy + 1).min(self.ny - 1) {
            for x in gx.saturating_sub(1)..=(gx + 1).min(self.nx - 1) {
                let id = y * self.nx + x;
                for &k in &self.items[self.start[id]..self.start[id + 1]] {
                    f(k);
                }
            }
        }
    }
}

/// Classical (Matheron) estimator `sum (r_i - r_k)^2 / (2 N_j)` over
/// equal-width lag bins on `[0, max_dist]`. Empty bins are omitted.
pub fn empirical_variogram(residuals: &[f64], coords: &[[f64; 2]], opts: &VariogramOptions) -> Result<EmpiricalVariogram> {
    let n = residuals.len();
    if n != coords.len() {
        return Err(CovError::LengthMismatch(n, coords.len()));
    }
    if n < 2 {
        return Err(CovError::TooFewPoints(n));
    }
    if !(opts.max_dist > 0.0) || !opts.max_dist.is_finite() {
        return Err(CovError::BadMaxDist(opts.max_dist));
    }
    let nb = opts.n_bins.max(1);
    let width = opts.max_dist / nb as f64;
    let grid = CellGrid::new(coords, opts.max_dist);
    let max_sq = opts.max_dist * opts.max_dist;
    // Visits the in-range partners k > i of row i in a fixed order.
    let row_pairs = |i: usize, f: &mut dyn FnMut(f64, usize)| {
        grid.for_each_candidate(coords[i], |k| {
            if k > i {
                let dx = coords[i][0] - coords[k][0];
                let dy = coords[i][1] - coords[k][1];
                let d2 = dx * dx + dy * dy;
                if d2 <= max_sq {
                    f(d2.sqrt(), k);
                }
            }
        });
    };

    let row_counts: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut c = 0;
            row_pairs(i, &mut |_, _| c += 1);
            c
        })
        .collect();
    let total: usize = row_counts.iter().sum();

    // Sampled pair ranks, split per row; None keeps every pair.
    let keep: Option<Vec<Vec<usize>>> = (total > opts.max_pairs).then(|| {
        let mut ranks = rand::seq::index::sample(&mut rng::seeded(opts.seed), total, opts.max_pairs).into_vec();
        ranks.sort_unstable();
        let mut per_row = vec![Vec::new(); n];
        let mut row = 0;
        let mut offset = 0;
        for r in ranks {
            while r >= offset + row_counts[row] {
                offset += row_counts[row];
                row += 1;
            }
            per_row[row].push(r - offset);
        }
        per_row
    });

    // Fixed chunking and an ordered reduction keep sums bit-reproducible.
    const CHUNK: usize = 64;
    let rows: Vec<usize> = (0..n).collect();
    let partials: Vec<BinAcc> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut a = BinAcc::new(nb);
            for &i in chunk {
                let wanted = keep.as_ref().map(|k| k[i].as_slice());
                let mut local = 0;
                let mut next = 0;
                row_pairs(i, &mut |d, k| {
                    let take = match wanted {
                        None => true,
                        Some(w) => {
                            let hit = next < w.len() && w[next] == local;
                            if hit {
                                next += 1;
                            }
                            hit
                        }
                    };
                    local += 1;
                    if take {
                        a.add(width, opts.max_dist, d, residuals[i] - residuals[k]);
                    }
                });
            }
            a
        })
        .collect();
    let acc = partials.iter().fold(BinAcc::new(nb), |acc, p| acc.merge(p));

    let mut ev = EmpiricalVariogram { centers: Vec::new(), gamma: Vec::new(), counts: Vec::new() };
    for j in 0..nb {
        if acc.count[j] > 0 {
            let c = acc.count[j] as f64;
            ev.centers.push(acc.dist[j] / c);
            ev.gamma.push(acc.sq[j] / (2.0 * c));
            ev.counts.push(acc.count[j]);
        }
    }
    Ok(ev)
}

/// Result of [`fit_irwgls`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariogramFit {
    pub spec: CovarianceSpec,
    pub converged: bool,
    pub iterations: usize,
}

const MAX_IRWGLS_ITER: usize = 50;
const IRWGLS_TOL: f64 = 1e-6;

/// Weighted least-squares fit of `(sigma2, phi, tau2)` for fixed weights.
///
/// Variable projection: for a given `phi` the model is linear in
/// `(tau2, sigma2)`, so only `log phi` is searched numerically (grid, then
/// golden section).
fn weighted_fit(ev: &EmpiricalVariogram, family: CovFamily, weights: &[f64], floor: f64) -> (CovarianceSpec, f64) {
    let h_min = ev.centers.iter().copied().filter(|&h| h > 0.0).fold(f64::INFINITY, f64::min);
    let h_max = ev.centers.iter().copied().fold(0.0, f64::max);
    let h_min = if h_min.is_finite() { h_min } else { h_max.max(1e-6) };
    let lo = (0.05 / h_max.max(1e-12)).ln();
    let hi = (20.0 / h_min.max(1e-12)).ln().max(lo + 1.0);

    let profile = |log_phi: f64| -> (f64, f64, f64) {
        let phi = log_phi.exp();
        let g: Vec<f64> = ev.centers.iter().map(|&h| 1.0 - family.correlation(phi, h)).collect();
        let (tau2, sigma2) = linear_sill_fit(&ev.gamma, &g, weights, floor);
        let obj: f64 = (0..ev.len()).map(|j| weights[j] * (ev.gamma[j] - tau2 - sigma2 * g[j]).powi(2)).sum();
        (obj, tau2, sigma2)
    };

    const GRID: usize = 160;
    let step = (hi - lo) / (GRID - 1) as f64;
    let (mut best_i, mut best_obj) = (0, f64::INFINITY);
    for i in 0..GRID {
        let o = profile(lo + step * i as f64).0;
        if o < best_obj {
            best_obj = o;
            best_i = i;
        }
    }
    // Golden section on the bracket around the best grid point.
    let mut a = lo + step * best_i.saturating_sub(1) as f64;
    let mut b = lo + step * (best_i + 1).min(GRID - 1) as f64;
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = profile(c).0;
    let mut fd = profile(d).0;
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = profile(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = profile(d).0;
        }
    }
    let log_phi = 0.5 * (a + b);
    let (obj, tau2, sigma2) = profile(log_phi);
    let (obj, tau2, sigma2, log_phi) =
        if obj <= best_obj { (obj, tau2, sigma2, log_phi) } else {
            let lp = lo + step * best_i as f64;
            let (o, t, s) = profile(lp);
            (o, t, s, lp)
        };
    (CovarianceSpec { family, sigma2, phi: log_phi.exp(), tau2 }, obj)
}

/// Minimizes `sum w (gamma - tau2 - sigma2 g)^2` subject to both sills
/// staying at or above `floor`.
fn linear_sill_fit(gamma: &[f64], g: &[f64], w: &[f64], floor: f64) -> (f64, f64) {
    let (mut s_w, mut s_g, mut s_gg, mut s_y, mut s_gy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for j in 0..gamma.len() {
        s_w += w[j];
        s_g += w[j] * g[j];
        s_gg += w[j] * g[j] * g[j];
        s_y += w[j] * gamma[j];
        s_gy += w[j] * g[j] * gamma[j];
    }
    let det = s_w * s_gg - s_g * s_g;
    let obj = |t: f64, s: f64| -> f64 { (0..gamma.len()).map(|j| w[j] * (gamma[j] - t - s * g[j]).powi(2)).sum() };
    if det > 1e-12 * s_w * s_gg.max(1e-300) {
        let tau2 = (s_gg * s_y - s_g * s_gy) / det;
        let sigma2 = (s_w * s_gy - s_g * s_y) / det;
        if tau2 >= floor && sigma2 >= floor {
            return (tau2, sigma2);
        }
    }
    // Boundary solutions: one sill pinned at the floor.
    let sigma_only = ((s_gy - floor * s_g) / s_gg.max(1e-300)).max(floor);
    let tau_only = ((s_y - floor * s_g) / s_w.max(1e-300)).max(floor);
    let c1 = (floor, sigma_only);
    let c2 = (tau_only, floor);
    if obj(c1.0, c1.1) <= obj(c2.0, c2.1) {
        c1
    } else {
        c2
    }
}

/// Self-weighted Cressie criterion `sum N_j (gamma_hat / gamma - 1)^2`.
fn cressie_objective(ev: &EmpiricalVariogram, spec: &CovarianceSpec, floor: f64) -> f64 {
    (0..ev.len())
        .map(|j| {
            let model = spec.semivariogram(ev.centers[j]).unwrap_or(0.0).max(floor);
            ev.counts[j] as f64 * (ev.gamma[j] / model - 1.0).powi(2)
        })
        .sum()
}

/// Iteratively re-weighted least squares with Cressie weights
/// `N_j / gamma(h_j; psi)^2`, re-evaluated at each iterate until the
/// relative parameter change drops below 1e-6 (at most 50 iterations).
///
/// Sills are clamped to a small positive floor. Without convergence the
/// iterate with the lowest Cressie criterion is returned, flagged.
pub fn fit_irwgls(ev: &EmpiricalVariogram, family: CovFamily) -> Result<VariogramFit> {
    if ev.len() < 4 {
        return Err(CovError::TooFewBins(ev.len()));
    }
    let scale = ev.gamma.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let floor = 1e-10 * scale;
    let weight_floor = 1e-6 * scale;

    let initial_w: Vec<f64> = ev.counts.iter().map(|&c| c as f64).collect();
    let (mut spec, _) = weighted_fit(ev, family, &initial_w, floor);
    let mut best = (cressie_objective(ev, &spec, weight_floor), spec);
    for it in 1..=MAX_IRWGLS_ITER {
        let w: Vec<f64> = (0..ev.len())
            .map(|j| {
                let m = spec.semivariogram(ev.centers[j]).unwrap_or(0.0).max(weight_floor);
                ev.counts[j] as f64 / (m * m)
            })
            .collect();
        let (next, _) = weighted_fit(ev, family, &w, floor);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
        let change = rel(next.sigma2, spec.sigma2).max(rel(next.phi, spec.phi)).max(rel(next.tau2, spec.tau2));
        spec = next;
        let obj = cressie_objective(ev, &spec, weight_floor);
        if obj < best.0 {
            best = (obj, spec);
        }
        if change < IRWGLS_TOL {
            return Ok(VariogramFit { spec, converged: true, iterations: it });
        }
    }
    Ok(VariogramFit { spec: best.1, converged: false, iterations: MAX_IRWGLS_ITER })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FamilySelection {
    pub family: CovFamily,
    /// CV score of the selected family (`NaN` when there was no contest).
    pub cv_score: f64,
    /// Every candidate with its score, in input order.
    pub scores: Vec<(CovFamily, f64)>,
    /// Fit of the selected family on all bins.
    pub fit: VariogramFit,
}

/// Chooses a family by k-fold cross-validation over variogram bins.
///
/// Bins are dealt to folds round-robin by lag. Each held-out bin is scored
/// by `N_j (gamma_hat_j - gamma(h_j))^2 / gamma(h_j)^2` under the fit to the
/// remaining bins. Ties go to the earliest family in `families`.
pub fn select_family(ev: &EmpiricalVariogram, families: &[CovFamily], folds: usize) -> Result<FamilySelection> {
    let first = *families.first().ok_or(CovError::NoFamilies)?;
    if families.len() == 1 {
        return Ok(FamilySelection {
            family: first,
            cv_score: f64::NAN,
            scores: vec![(first, f64::NAN)],
            fit: fit_irwgls(ev, first)?,
        });
    }
    let folds = folds.clamp(2, ev.len().max(2));
    let scale = ev.gamma.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut scores = Vec::with_capacity(families.len());
    for &family in families {
        let mut score = 0.0;
        for f in 0..folds {
            let train = ev.select(|j| j % folds != f);
            let held = ev.select(|j| j % folds == f);
            let fit = fit_irwgls(&train, family)?;
            for j in 0..held.len() {
                let m = fit.spec.semivariogram(held.centers[j])?.max(1e-6 * scale);
                score += held.counts[j] as f64 * (held.gamma[j] - m).powi(2) / (m * m);
            }
        }
        scores.push((family, score));
    }
    let (family, cv_score) = scores
        .iter()
        .copied()
        .fold((first, f64::INFINITY), |best, (fam, s)| if s < best.1 { (fam, s) } else { best });
    Ok(FamilySelection { family, cv_score, scores, fit: fit_irwgls(ev, family)? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exact_variogram(spec: &CovarianceSpec, bins: usize, max_dist: f64) -> EmpiricalVariogram {
        let centers: Vec<f64> = (0..bins).map(|j| (j as f64 + 0.5) * max_dist / bins as f64).collect();
        EmpiricalVariogram {
            gamma: centers.iter().map(|&h| spec.semivariogram(h).unwrap()).collect(),
            counts: (0..bins).map(|j| 1000 + 100 * j as u64).collect(),
            centers,
        }
    }

    #[test]
    fn sill_at_origin() {
        for fam in CovFamily::ALL {
            let s = CovarianceSpec::new(fam, 2.5, 0.3, 0.7).unwrap();
            assert_eq!(s.cov(0.0).unwrap(), 2.5);
            assert_eq!(s.semivariogram(0.0).unwrap(), 0.0);
            assert!((s.semivariogram(1e6).unwrap() - 3.2).abs() < 1e-12);
            assert!(s.cov(-1.0).is_err());
            assert!(s.semivariogram(-1.0).is_err());
        }
    }

    #[test]
    fn hand_values() {
        let e = CovarianceSpec::new(CovFamily::Exponential, 2.0, 0.5, 0.0).unwrap();
        assert!((e.cov(2.0).unwrap() - 2.0 * (-1f64).exp()).abs() < 1e-15);
        assert!((e.cov(2.0).unwrap() - 0.735759).abs() < 1e-6);

        let g = CovarianceSpec::new(CovFamily::Gaussian, 0.03, 1.0 / 25.8, 0.04).unwrap();
        assert!((g.cov(25.8).unwrap() - 0.011036).abs() < 1e-6);

        let v = CovarianceSpec::new(CovFamily::Exponential, 1.0, 1.0, 0.5).unwrap();
        assert!((v.semivariogram(1.0).unwrap() - 1.132121).abs() < 1e-6);

        let s = CovarianceSpec::new(CovFamily::Spherical, 1.0, 0.1, 0.0).unwrap();
        // phi d = 0.5: 1 - 0.75 + 0.0625
        assert!((s.cov(5.0).unwrap() - 0.3125).abs() < 1e-15);
        assert_eq!(s.cov(10.0).unwrap(), 0.0);
        assert_eq!(s.cov(11.0).unwrap(), 0.0);
    }

    #[test]
    fn alpha_ratio() {
        let g = CovarianceSpec::new(CovFamily::Gaussian, 0.03, 1.0 / 25.8, 0.04).unwrap();
        assert!((g.alpha() - 4.0 / 3.0).abs() < 1e-12);
        assert!(CovarianceSpec::new(CovFamily::Gaussian, 1.0, 0.0, 0.0).is_err());
        assert!(CovarianceSpec::new(CovFamily::Gaussian, 1.0, 1.0, -0.1).is_err());
    }

    #[test]
    fn parse_family() {
        assert_eq!("Gaussian".parse::<CovFamily>().unwrap(), CovFamily::Gaussian);
        assert!("matern".parse::<CovFamily>().is_err());
    }

    #[test]
    fn two_point_variogram() {
        let ev = empirical_variogram(&[0.0, 2.0], &[[0.0, 0.0], [1.0, 0.0]], &VariogramOptions { max_dist: 5.0, ..Default::default() }).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev.gamma[0], 2.0);
        assert_eq!(ev.counts[0], 1);
        assert_eq!(ev.centers[0], 1.0);
    }

    #[test]
    fn constant_residuals_zero_variogram() {
        let coords: Vec<[f64; 2]> = (0..30).map(|i| [(i % 6) as f64, (i / 6) as f64]).collect();
        let ev = empirical_variogram(&[3.0; 30], &coords, &VariogramOptions { max_dist: 10.0, n_bins: 8, ..Default::default() }).unwrap();
        assert!(!ev.is_empty());
        assert!(ev.gamma.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn variogram_errors() {
        let o = VariogramOptions::default();
        assert_eq!(empirical_variogram(&[1.0], &[[0.0, 0.0]], &o), Err(CovError::TooFewPoints(1)));
        assert_eq!(
            empirical_variogram(&[1.0, 2.0], &[[0.0, 0.0], [1.0, 1.0]], &VariogramOptions { max_dist: 0.0, ..o }),
            Err(CovError::BadMaxDist(0.0))
        );
        assert!(matches!(empirical_variogram(&[1.0, 2.0], &[[0.0, 0.0]], &o), Err(CovError::LengthMismatch(2, 1))));
    }

    #[test]
    fn grid_enumeration_matches_brute_force() {
        let mut r = rng::seeded(11);
        use rand::Rng;
        let coords: Vec<[f64; 2]> = (0..400).map(|_| [r.random_range(0.0..50.0), r.random_range(0.0..30.0)]).collect();
        let res: Vec<f64> = (0..400).map(|_| r.random_range(-1.0..1.0)).collect();
        let o = VariogramOptions { max_dist: 7.0, n_bins: 7, max_pairs: usize::MAX, seed: 0 };
        let ev = empirical_variogram(&res, &coords, &o).unwrap();
        let mut sq = [0.0; 7];
        let mut cnt = [0u64; 7];
        for i in 0..400 {
            for k in (i + 1)..400 {
                let d = ((coords[i][0] - coords[k][0]).powi(2) + (coords[i][1] - coords[k][1]).powi(2)).sqrt();
                if d <= 7.0 {
                    let j = (d as usize).min(6);
                    sq[j] += (res[i] - res[k]).powi(2);
                    cnt[j] += 1;
                }
            }
        }
        assert_eq!(ev.counts, cnt.to_vec());
        for j in 0..7 {
            assert!((ev.gamma[j] - sq[j] / (2.0 * cnt[j] as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_pairs_are_deterministic() {
        let coords: Vec<[f64; 2]> = (0..200).map(|i| [(i % 20) as f64, (i / 20) as f64]).collect();
        let r: Vec<f64> = (0..200).map(|i| ((i * 37) % 11) as f64).collect();
        let o = VariogramOptions { max_dist: 10.0, n_bins: 10, max_pairs: 500, seed: 3 };
        let a = empirical_variogram(&r, &coords, &o).unwrap();
        let b = empirical_variogram(&r, &coords, &o).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts.iter().sum::<u64>(), 500);
    }

    #[test]
    fn exact_recovery_from_noise_free_variogram() {
        let truth = CovarianceSpec::new(CovFamily::Exponential, 1.0, 0.2, 0.1).unwrap();
        let ev = exact_variogram(&truth, 20, 30.0);
        let fit = fit_irwgls(&ev, CovFamily::Exponential).unwrap();
        assert!(fit.converged);
        assert!((fit.spec.sigma2 - 1.0).abs() < 1e-4, "{:?}", fit.spec);
        assert!((fit.spec.phi - 0.2).abs() < 1e-4, "{:?}", fit.spec);
        assert!((fit.spec.tau2 - 0.1).abs() < 1e-4, "{:?}", fit.spec);
    }

    #[test]
    fn recovery_for_each_family() {
        for fam in CovFamily::ALL {
            let truth = CovarianceSpec::new(fam, 0.03, 1.0 / 25.8, 0.04).unwrap();
            let ev = exact_variogram(&truth, 25, 100.0);
            let fit = fit_irwgls(&ev, fam).unwrap();
            assert!((fit.spec.sigma2 / 0.03 - 1.0).abs() < 1e-4, "{fam}: {:?}", fit.spec);
            assert!((fit.spec.phi * 25.8 - 1.0).abs() < 1e-4, "{fam}: {:?}", fit.spec);
            assert!((fit.spec.tau2 / 0.04 - 1.0).abs() < 1e-4, "{fam}: {:?}", fit.spec);
        }
    }

    #[test]
    fn scale_equivariance() {
        let truth = CovarianceSpec::new(CovFamily::Gaussian, 1.0, 0.1, 0.3).unwrap();
        let mut ev = exact_variogram(&truth, 15, 40.0);
        // Perturb so the fit is not trivially exact.
        for (j, g) in ev.gamma.iter_mut().enumerate() {
            *g *= 1.0 + 0.03 * ((j * 7 % 5) as f64 - 2.0);
        }
        let base = fit_irwgls(&ev, CovFamily::Gaussian).unwrap().spec;
        let c = 3.0;
        let mut scaled = ev.clone();
        scaled.gamma.iter_mut().for_each(|g| *g *= c * c);
        let s = fit_irwgls(&scaled, CovFamily::Gaussian).unwrap().spec;
        assert!((s.sigma2 / (c * c * base.sigma2) - 1.0).abs() < 1e-6);
        assert!((s.tau2 / (c * c * base.tau2) - 1.0).abs() < 1e-6);
        assert!((s.phi / base.phi - 1.0).abs() < 1e-6);
    }

    #[test]
    fn too_few_bins() {
        let truth = CovarianceSpec::new(CovFamily::Gaussian, 1.0, 0.1, 0.3).unwrap();
        let ev = exact_variogram(&truth, 3, 40.0);
        assert_eq!(fit_irwgls(&ev, CovFamily::Gaussian), Err(CovError::TooFewBins(3)));
    }

    #[test]
    fn selection_single_and_exact() {
        let truth = CovarianceSpec::new(CovFamily::Exponential, 1.0, 0.2, 0.1).unwrap();
        let ev = exact_variogram(&truth, 24, 30.0);
        let only = select_family(&ev, &[CovFamily::Spherical], 5).unwrap();
        assert_eq!(only.family, CovFamily::Spherical);
        let sel = select_family(&ev, &CovFamily::ALL, 4).unwrap();
        assert_eq!(sel.family, CovFamily::Exponential);
        assert_eq!(sel.scores.len(), 3);
        assert_eq!(select_family(&ev, &[], 4), Err(CovError::NoFamilies));
    }

    #[test]
    fn selection_tie_goes_to_first() {
        let truth = CovarianceSpec::new(CovFamily::Gaussian, 1.0, 0.1, 0.3).unwrap();
        let ev = exact_variogram(&truth, 20, 40.0);
        let sel = select_family(&ev, &[CovFamily::Gaussian, CovFamily::Gaussian], 4).unwrap();
        assert_eq!(sel.scores[0].1, sel.scores[1].1);
        assert_eq!(sel.family, CovFamily::Gaussian);
        // With identical candidates the first entry's score is the winner's.
        assert_eq!(sel.cv_score, sel.scores[0].1);
    }
}
