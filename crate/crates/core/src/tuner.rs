//! Hyperparameter search with a tree-structured Parzen estimator (TPE).
//!
//! The first `n_startup` trials are drawn uniformly (log-uniformly for log
//! parameters). After that the history is split at the `gamma` quantile of
//! score into a good and a bad set, each parameter gets a truncated-normal
//! Parzen density per set, and the suggestion maximizes `l(x) / g(x)` over
//! `n_candidates` draws from the good density. Parameters are handled one at
//! a time in declaration order, and a parameter whose condition fails on the
//! already chosen values is left inactive.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::dataset::{fold_assignment, fold_indices, SpatialDataset};
use crate::metrics;
use crate::mlp::{self, bounds, MlpConfig, MlpError, MlpModel, Optimizer};
use crate::rng::seeded;

#[derive(Debug, Error, PartialEq)]
pub enum TunerError {
    #[error("search space is empty")]
    EmptySpace,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("need at least one trial")]
    NoTrials,
    #[error("all {0} trials failed")]
    AllFailed(usize),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

pub type Result<T> = std::result::Result<T, TunerError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Integer,
    Real,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

/// Active only when the named earlier parameter is at least `min_value`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub parent: String,
    pub min_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
    pub condition: Option<Condition>,
}

impl ParamSpec {
    pub fn real(name: &str, lo: f64, hi: f64) -> Self {
        ParamSpec { name: name.into(), kind: ParamKind::Real, lo, hi, scale: Scale::Linear, condition: None }
    }

    pub fn log_real(name: &str, lo: f64, hi: f64) -> Self {
        ParamSpec { scale: Scale::Log, ..ParamSpec::real(name, lo, hi) }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        ParamSpec { kind: ParamKind::Integer, ..ParamSpec::real(name, lo as f64, hi as f64) }
    }

    pub fn when(mut self, parent: &str, min_value: f64) -> Self {
        self.condition = Some(Condition { parent: parent.into(), min_value });
        self
    }

    fn to_internal(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => v,
            Scale::Log => v.ln(),
        }
    }

    fn external(&self, t: f64) -> f64 {
        match self.scale {
            Scale::Linear => t,
            Scale::Log => t.exp(),
        }
    }

    /// Sampling domain in internal units; integers cover their rounding
    /// cells.
    fn domain(&self) -> (f64, f64) {
        match self.kind {
            ParamKind::Real => (self.to_internal(self.lo), self.to_internal(self.hi)),
            ParamKind::Integer => (self.to_internal(self.lo - 0.5), self.to_internal(self.hi + 0.5)),
        }
    }

    fn finalize(&self, t: f64) -> f64 {
        let v = self.external(t);
        match self.kind {
            ParamKind::Real => v.clamp(self.lo, self.hi),
            ParamKind::Integer => v.round().clamp(self.lo, self.hi),
        }
    }
}

/// Parameter values in space order; `None` marks an inactive parameter.
pub type Point = Vec<Option<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let s = SearchSpace { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(TunerError::EmptySpace);
        }
        for (i, p) in self.params.iter().enumerate() {
            let bad = |m: String| Err(TunerError::InvalidSpace(format!("{}: {m}", p.name)));
            if !(p.lo < p.hi) || !p.lo.is_finite() || !p.hi.is_finite() {
                return bad(format!("need lo < hi, got [{}, {}]", p.lo, p.hi));
            }
            if p.scale == Scale::Log && p.lo <= 0.0 {
                return bad("log scale needs lo > 0".into());
            }
            if p.kind == ParamKind::Integer && (p.lo.fract() != 0.0 || p.hi.fract() != 0.0) {
                return bad("integer bounds must be whole".into());
            }
            if p.kind == ParamKind::Integer && p.scale == Scale::Log && p.lo < 1.0 {
                return bad("log-scale integers need lo >= 1".into());
            }
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return bad("duplicate name".into());
            }
            if let Some(c) = &p.condition {
                if !self.params[..i].iter().any(|q| q.name == c.parent) {
                    return bad(format!("condition parent '{}' must be declared earlier", c.parent));
                }
            }
        }
        Ok(())
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn value(&self, point: &Point, name: &str) -> Option<f64> {
        self.index(name).and_then(|i| point[i])
    }

    fn is_active(&self, i: usize, chosen: &Point) -> bool {
        match &self.params[i].condition {
            None => true,
            Some(c) => {
                let j = self.index(&c.parent).expect("validated");
                chosen[j].is_some_and(|v| v >= c.min_value)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub params: Point,
    /// Objective value; `+inf` for failed trials.
    pub score: f64,
    pub status: TrialStatus,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeOptions {
    pub gamma: f64,
    pub n_startup: usize,
    pub n_candidates: usize,
    /// Prior component weight relative to one observation.
    pub prior_weight: f64,
}

impl Default for TpeOptions {
    fn default() -> Self {
        TpeOptions { gamma: 0.25, n_startup: 10, n_candidates: 24, prior_weight: 1.0 }
    }
}

impl TpeOptions {
    /// Pure random search.
    pub fn random() -> Self {
        TpeOptions { n_startup: usize::MAX, ..Default::default() }
    }
}

/// Size of the good set for a history of `n` trials.
pub fn n_good(gamma: f64, n: usize) -> usize {
    ((gamma * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Mixture of normals truncated to `[a, b]`, in internal units.
#[derive(Debug, Clone)]
struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    weights: Vec<f64>,
    a: f64,
    b: f64,
}

fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

impl Parzen {
    fn fit(obs: &[f64], a: f64, b: f64, prior_weight: f64) -> Self {
        let range = b - a;
        let mut sorted: Vec<f64> = obs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let floor = range / 20.0;
        let mut mus = vec![0.5 * (a + b)];
        let mut sigmas = vec![range];
        let mut weights = vec![prior_weight];
        for (i, &m) in sorted.iter().enumerate() {
            let left = if i > 0 { m - sorted[i - 1] } else { f64::INFINITY };
            let right = if i + 1 < sorted.len() { sorted[i + 1] - m } else { f64::INFINITY };
            let gap = left.min(right);
            let gap = if gap.is_finite() { gap } else { 0.0 };
            mus.push(m);
            sigmas.push(gap.max(floor).min(range));
            weights.push(1.0);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Parzen { mus, sigmas, weights, a, b }
    }

    fn component_mass(&self, i: usize, lo: f64, hi: f64) -> f64 {
        let (m, s) = (self.mus[i], self.sigmas[i]);
        let z = norm_cdf((self.b - m) / s) - norm_cdf((self.a - m) / s);
        let lo = lo.max(self.a);
        let hi = hi.min(self.b);
        if hi <= lo || z <= 0.0 {
            return 0.0;
        }
        (norm_cdf((hi - m) / s) - norm_cdf((lo - m) / s)) / z
    }

    fn density(&self, x: f64) -> f64 {
        (0..self.mus.len())
            .map(|i| {
                let (m, s) = (self.mus[i], self.sigmas[i]);
                let z = norm_cdf((self.b - m) / s) - norm_cdf((self.a - m) / s);
                let u = (x - m) / s;
                self.weights[i] * (-0.5 * u * u).exp() / (s * (2.0 * std::f64::consts::PI).sqrt() * z.max(1e-300))
            })
            .sum()
    }

    /// Probability of the interval `[lo, hi]`.
    fn mass(&self, lo: f64, hi: f64) -> f64 {
        (0..self.mus.len()).map(|i| self.weights[i] * self.component_mass(i, lo, hi)).sum()
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let normal = Normal::new(self.mus[k], self.sigmas[k]).expect("positive sigma");
        let (pa, pb) = (normal.cdf(self.a), normal.cdf(self.b));
        let v: f64 = rng.random();
        let x = if pb > pa { normal.inverse_cdf(pa + v * (pb - pa)) } else { self.mus[k] };
        if x.is_finite() {
            x.clamp(self.a, self.b)
        } else {
            self.mus[k].clamp(self.a, self.b)
        }
    }
}

fn random_value(p: &ParamSpec, rng: &mut ChaCha8Rng) -> f64 {
    if p.kind == ParamKind::Integer && p.scale == Scale::Linear {
        return rng.random_range(p.lo as i64..=p.hi as i64) as f64;
    }
    let (a, b) = p.domain();
    p.finalize(a + rng.random::<f64>() * (b - a))
}

/// Next point to evaluate given the trials so far.
pub fn suggest(space: &SearchSpace, history: &[TrialRecord], opts: &TpeOptions, rng: &mut ChaCha8Rng) -> Result<Point> {
    space.validate()?;
    let complete = history.iter().filter(|t| t.status == TrialStatus::Complete).count();
    let mut point: Point = vec![None; space.params.len()];
    if complete < opts.n_startup {
        for i in 0..space.params.len() {
            if space.is_active(i, &point) {
                point[i] = Some(random_value(&space.params[i], rng));
            }
        }
        return Ok(point);
    }

    let mut ranked: Vec<&TrialRecord> = history.iter().collect();
    ranked.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)));
    let split = n_good(opts.gamma, ranked.len());
    let (good, bad) = ranked.split_at(split);

    for (i, p) in space.params.iter().enumerate() {
        if !space.is_active(i, &point) {
            continue;
        }
        let (a, b) = p.domain();
        let obs = |set: &[&TrialRecord]| -> Vec<f64> {
            set.iter().filter_map(|t| t.params[i]).map(|v| p.to_internal(v)).collect()
        };
        let l = Parzen::fit(&obs(good), a, b, opts.prior_weight);
        let g = Parzen::fit(&obs(bad), a, b, opts.prior_weight);
        let mut best: Option<(f64, f64)> = None;
        for _ in 0..opts.n_candidates.max(1) {
            let t = l.sample(rng);
            let v = p.finalize(t);
            let score = match p.kind {
                ParamKind::Real => l.density(t).ln() - g.density(t).ln(),
                ParamKind::Integer => {
                    let (lo, hi) = (p.to_internal(v - 0.5), p.to_internal(v + 0.5));
                    l.mass(lo, hi).ln() - g.mass(lo, hi).ln()
                }
            };
            if best.map_or(true, |(s, _)| score > s) {
                best = Some((score, v));
            }
        }
        point[i] = best.map(|(_, v)| v);
    }
    Ok(point)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub best: TrialRecord,
    pub trials: Vec<TrialRecord>,
}

fn finish(trials: Vec<TrialRecord>) -> Result<Study> {
    let best = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Complete)
        .min_by(|a, b| a.score.total_cmp(&b.score).then(a.index.cmp(&b.index)))
        .cloned()
        .ok_or(TunerError::AllFailed(trials.len()))?;
    Ok(Study { best, trials })
}

fn record(index: usize, params: Point, result: std::result::Result<f64, String>) -> TrialRecord {
    match result {
        Ok(s) if s.is_finite() => TrialRecord { index, params, score: s, status: TrialStatus::Complete },
        _ => TrialRecord { index, params, score: f64::INFINITY, status: TrialStatus::Failed },
    }
}

/// Sequential search: `n_trials` suggest/evaluate rounds. Errors and
/// non-finite scores mark a trial failed. `on_trial` sees each record as it
/// completes.
pub fn optimize<F>(
    space: &SearchSpace,
    objective: F,
    n_trials: usize,
    opts: &TpeOptions,
    seed: u64,
    on_trial: &mut dyn FnMut(&TrialRecord),
) -> Result<Study>
where
    F: Fn(&Point) -> std::result::Result<f64, String>,
{
    space.validate()?;
    if n_trials == 0 {
        return Err(TunerError::NoTrials);
    }
    let mut rng = seeded(seed);
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(n_trials);
    for t in 0..n_trials {
        let point = suggest(space, &trials, opts, &mut rng)?;
        let rec = record(t, point.clone(), objective(&point));
        on_trial(&rec);
        trials.push(rec);
    }
    finish(trials)
}

/// Batched search: each round suggests `batch` points from the trials
/// completed so far and evaluates them in parallel. Results depend on
/// `batch` but not on thread scheduling.
pub fn optimize_batched<F>(
    space: &SearchSpace,
    objective: F,
    n_trials: usize,
    batch: usize,
    opts: &TpeOptions,
    seed: u64,
    on_trial: &mut dyn FnMut(&TrialRecord),
) -> Result<Study>
where
    F: Fn(&Point) -> std::result::Result<f64, String> + Sync,
{
    space.validate()?;
    if n_trials == 0 {
        return Err(TunerError::NoTrials);
    }
    let mut rng = seeded(seed);
    let mut trials: Vec<TrialRecord> = Vec::with_capacity(n_trials);
    while trials.len() < n_trials {
        let m = batch.max(1).min(n_trials - trials.len());
        let points: Vec<Point> = (0..m).map(|_| suggest(space, &trials, opts, &mut rng)).collect::<Result<_>>()?;
        let scores: Vec<_> = points.par_iter().map(&objective).collect();
        let base = trials.len();
        for (j, (p, s)) in points.into_iter().zip(scores).enumerate() {
            let rec = record(base + j, p, s);
            on_trial(&rec);
            trials.push(rec);
        }
    }
    finish(trials)
}

pub fn history_csv_header(space: &SearchSpace) -> String {
    let mut cols = vec!["trial".to_string()];
    cols.extend(space.params.iter().map(|p| p.name.clone()));
    cols.push("score".into());
    cols.push("status".into());
    cols.join(",")
}

pub fn history_csv_row(rec: &TrialRecord) -> String {
    let mut cols = vec![rec.index.to_string()];
    cols.extend(rec.params.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
    cols.push(rec.score.to_string());
    cols.push(
        match rec.status {
            TrialStatus::Complete => "complete",
            TrialStatus::Failed => "failed",
        }
        .into(),
    );
    cols.join(",")
}

pub fn write_history_csv<W: Write>(space: &SearchSpace, trials: &[TrialRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", history_csv_header(space))?;
    for t in trials {
        writeln!(out, "{}", history_csv_row(t))?;
    }
    Ok(())
}

pub const MAX_LAYERS: usize = bounds::LAYERS.1;

/// Network search space: layer count, one unit count per active layer,
/// batch size, epochs and a log-scale learning rate.
pub fn mlp_search_space() -> SearchSpace {
    let mut params = vec![ParamSpec::integer("hidden_layers", bounds::LAYERS.0 as i64, bounds::LAYERS.1 as i64)];
    for i in 1..=MAX_LAYERS {
        params.push(
            ParamSpec::integer(&format!("units_{i}"), bounds::UNITS.0 as i64, bounds::UNITS.1 as i64)
                .when("hidden_layers", i as f64),
        );
    }
    params.push(ParamSpec::integer("batch_size", bounds::BATCH.0 as i64, bounds::BATCH.1 as i64));
    params.push(ParamSpec::integer("epochs", bounds::EPOCHS.0 as i64, bounds::EPOCHS.1 as i64));
    params.push(ParamSpec::log_real("learning_rate", bounds::LEARNING_RATE.0, bounds::LEARNING_RATE.1));
    SearchSpace::new(params).expect("static space is valid")
}

/// Reads a point of [`mlp_search_space`] as a network config.
pub fn point_to_config(space: &SearchSpace, point: &Point, optimizer: Optimizer, seed: u64) -> MlpConfig {
    let get = |n: &str| space.value(point, n).expect("active parameter");
    let layers = get("hidden_layers") as usize;
    MlpConfig {
        hidden_layers: layers,
        units: (1..=layers).map(|i| get(&format!("units_{i}")) as usize).collect(),
        batch_size: get("batch_size") as usize,
        epochs: get("epochs") as usize,
        learning_rate: get("learning_rate"),
        optimizer,
        seed,
    }
}

/// Mean held-out MSE over `folds` folds. The fold assignment depends only
/// on `seed`, so every config is scored on the same splits.
pub fn mlp_cv_score(ds: &SpatialDataset, config: &MlpConfig, folds: usize, seed: u64) -> std::result::Result<f64, MlpError> {
    let assignment = fold_assignment(ds.n(), folds, seed);
    let mut total = 0.0;
    for f in 0..folds {
        let (tr, te) = fold_indices(&assignment, f);
        let train = ds.subset(&tr);
        let test = ds.subset(&te);
        let model = mlp::train(&train, config)?;
        let pred = model.predict(&test.x, &test.coords)?;
        total += metrics::mse(test.y.as_slice(), pred.as_slice()).map_err(|_| MlpError::Dimension {
            expected: test.n(),
            got: pred.len(),
        })?;
    }
    Ok(total / folds as f64)
}

#[derive(Debug, Clone)]
pub struct MlpTuning {
    pub best: MlpConfig,
    pub study: Study,
    pub space: SearchSpace,
}

/// TPE over [`mlp_search_space`] scored by [`mlp_cv_score`].
pub fn tune_mlp(
    ds: &SpatialDataset,
    n_trials: usize,
    folds: usize,
    optimizer: Optimizer,
    seed: u64,
    opts: &TpeOptions,
    on_trial: &mut dyn FnMut(&TrialRecord),
) -> Result<MlpTuning> {
    let space = mlp_search_space();
    let objective = |p: &Point| {
        let cfg = point_to_config(&space, p, optimizer, seed);
        mlp_cv_score(ds, &cfg, folds, seed).map_err(|e| e.to_string())
    };
    let study = optimize(&space, objective, n_trials, opts, seed, on_trial)?;
    let best = point_to_config(&space, &study.best.params, optimizer, seed);
    Ok(MlpTuning { best, study, space })
}

/// Trains on all of `ds` with `config`. Configs outside the search ranges
/// are accepted and reported as warnings.
pub fn refit_best(ds: &SpatialDataset, config: &MlpConfig) -> Result<(MlpModel, Vec<String>)> {
    let warnings = config.range_warnings();
    Ok((mlp::train(ds, config)?, warnings))
}
