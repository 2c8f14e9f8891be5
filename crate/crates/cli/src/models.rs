use std::fmt;
use std::str::FromStr;

use hedonic_core::covmodel::{
    empirical_variogram, fit_irwgls, select_family, CovFamily, CovarianceSpec, EmpiricalVariogram, FamilySelection,
    VariogramFit, VariogramOptions,
};
use hedonic_core::dataset::SpatialDataset;
use hedonic_core::gp_exact;
use hedonic_core::linreg;
use hedonic_core::mlp::Optimizer;
use hedonic_core::model_io::FittedModel;
use hedonic_core::nngp::{fit_conjugate, ConjugatePrior, DEFAULT_K};
use hedonic_core::rng::{derive_seed, seeded};
use hedonic_core::tuner::{refit_best, tune_mlp, SearchSpace, TpeOptions, TrialRecord};
use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::data::{STREAM_TUNER, STREAM_VARIOGRAM};
use crate::error::{CliError, CliResult, ModelContext};

pub const DEFAULT_TRIALS: usize = 50;
pub const DEFAULT_TUNER_FOLDS: usize = 5;
/// Points used for the empirical variogram; larger inputs are subsampled.
pub const VARIOGRAM_MAX_POINTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ols,
    Nngp,
    GpExact,
    Dnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ols => "ols",
            ModelKind::Nngp => "nngp",
            ModelKind::GpExact => "gp-exact",
            ModelKind::Dnn => "dnn",
        }
    }

    pub fn needs_covariance(self) -> bool {
        matches!(self, ModelKind::Nngp | ModelKind::GpExact)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(ModelKind::Ols),
            "nngp" => Ok(ModelKind::Nngp),
            "gp-exact" | "gp_exact" | "gp" => Ok(ModelKind::GpExact),
            "dnn" | "mlp" => Ok(ModelKind::Dnn),
            _ => Err(CliError::config(format!("unknown model '{s}' (expected ols, nngp, gp-exact or dnn)"))),
        }
    }
}

pub fn parse_family(s: &str) -> CliResult<CovFamily> {
    s.parse().map_err(CliError::config)
}

pub fn parse_optimizer(cfg: &RunConfig) -> CliResult<Optimizer> {
    cfg.model.optimizer.as_deref().map_or(Ok(Optimizer::Adam), |s| s.parse().map_err(CliError::config))
}

/// Outcome of the residual-variogram procedure.
pub struct VariogramOutcome {
    pub ev: EmpiricalVariogram,
    pub max_dist: f64,
    pub points: usize,
    /// `None` when the family was forced.
    pub selection: Option<FamilySelection>,
    pub fit: VariogramFit,
}

/// A third of the bounding-box diagonal.
pub fn default_max_dist(coords: &[[f64; 2]]) -> f64 {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for a in 0..2 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt() / 3.0
}

/// OLS residuals, empirical variogram, then an IRWGLS fit of the forced
/// family or of the family chosen by cross-validation over bins.
pub fn estimate_variogram(ds: &SpatialDataset, cfg: &RunConfig, family: Option<CovFamily>) -> CliResult<VariogramOutcome> {
    let ols = linreg::fit(ds).model_err("OLS fit for residuals")?;
    let fitted = ols.predict(&ds.x).model_err("OLS residuals")?;
    let resid: Vec<f64> = ds.y.iter().zip(fitted.iter()).map(|(y, f)| y - f).collect();
    let seed = derive_seed(cfg.seed(), STREAM_VARIOGRAM);
    let (resid, coords) = if ds.n() > VARIOGRAM_MAX_POINTS {
        let mut idx: Vec<usize> = (0..ds.n()).collect();
        idx.shuffle(&mut seeded(seed));
        idx.truncate(VARIOGRAM_MAX_POINTS);
        idx.sort_unstable();
        (idx.iter().map(|&i| resid[i]).collect(), idx.iter().map(|&i| ds.coords[i]).collect())
    } else {
        (resid, ds.coords.clone())
    };
    let v = &cfg.variogram;
    let defaults = VariogramOptions::default();
    let max_dist = v.max_dist.unwrap_or_else(|| default_max_dist(&coords));
    let opts = VariogramOptions {
        n_bins: v.bins.unwrap_or(defaults.n_bins),
        max_dist,
        max_pairs: v.max_pairs.unwrap_or(defaults.max_pairs),
        seed,
    };
    let ev = empirical_variogram(&resid, &coords, &opts)?;
    let (selection, fit) = match family {
        Some(f) => (None, fit_irwgls(&ev, f)?),
        None => {
            let sel = select_family(&ev, &CovFamily::ALL, v.folds.unwrap_or(5))?;
            let fit = sel.fit;
            (Some(sel), fit)
        }
    };
    Ok(VariogramOutcome { ev, max_dist, points: coords.len(), selection, fit })
}

/// Covariance parameters for the spatial models: explicit `phi`/`alpha`
/// win, anything missing comes from the residual variogram.
pub fn resolve_covariance(ds: &SpatialDataset, cfg: &RunConfig) -> CliResult<(CovarianceSpec, Option<VariogramOutcome>)> {
    let m = &cfg.model;
    let family = m.family.as_deref().map(parse_family).transpose()?;
    if let (Some(family), Some(phi), Some(alpha)) = (family, m.phi, m.alpha) {
        // Split the OLS residual variance between sill and nugget.
        let total = linreg::fit(ds).model_err("OLS fit")?.sigma2_hat;
        let sigma2 = total / (1.0 + alpha);
        let spec = CovarianceSpec::new(family, sigma2, phi, alpha * sigma2).map_err(CliError::config)?;
        return Ok((spec, None));
    }
    let outcome = estimate_variogram(ds, cfg, family)?;
    let mut spec = outcome.fit.spec;
    if let Some(phi) = m.phi {
        spec.phi = phi;
    }
    if let Some(alpha) = m.alpha {
        spec.tau2 = alpha * spec.sigma2;
    }
    spec.validate().map_err(CliError::config)?;
    Ok((spec, Some(outcome)))
}

/// A fitted model plus what the caller may want to report.
pub struct FitOutcome {
    pub model: FittedModel,
    pub notes: Vec<String>,
    pub tuning: Option<(SearchSpace, Vec<TrialRecord>)>,
}

pub fn fit_model(
    kind: ModelKind,
    ds: &SpatialDataset,
    cfg: &RunConfig,
    cov: Option<&CovarianceSpec>,
    on_trial: &mut dyn FnMut(&TrialRecord),
) -> CliResult<FitOutcome> {
    let mut notes = Vec::new();
    let need_cov = || cov.ok_or_else(|| CliError::model(format!("{kind} needs covariance parameters")));
    let model = match kind {
        ModelKind::Ols => FittedModel::Ols(linreg::fit(ds).model_err("OLS fit")?),
        ModelKind::Nngp => {
            let spec = need_cov()?;
            let k = cfg.model.k.unwrap_or(DEFAULT_K);
            let prior = ConjugatePrior::weakly_informative(ds);
            let post = fit_conjugate(ds, spec.family, spec.phi, spec.alpha(), k, &prior).model_err("NNGP fit")?;
            notes.push(format!(
                "nngp: family {} phi {:.6} alpha {:.4} k {}; E[sigma2] {:.6} E[tau2] {:.6}",
                spec.family,
                spec.phi,
                spec.alpha(),
                post.k(),
                post.sigma2_mean(),
                post.tau2_mean()
            ));
            FittedModel::Nngp(Box::new(post))
        }
        ModelKind::GpExact => {
            let spec = *need_cov()?;
            // Fit once here so size and duplicate-site errors surface at fit time.
            gp_exact::fit_exact(ds, &spec).model_err("exact GP fit")?;
            notes.push(format!(
                "gp-exact: family {} sigma2 {:.6} phi {:.6} tau2 {:.6}",
                spec.family, spec.sigma2, spec.phi, spec.tau2
            ));
            FittedModel::GpExact { spec, train: ds.clone() }
        }
        ModelKind::Dnn => {
            let trials = cfg.model.trials.unwrap_or(DEFAULT_TRIALS);
            let folds = cfg.model.folds.unwrap_or(DEFAULT_TUNER_FOLDS);
            let optimizer = parse_optimizer(cfg)?;
            let seed = derive_seed(cfg.seed(), STREAM_TUNER);
            let tuning = tune_mlp(ds, trials, folds, optimizer, seed, &TpeOptions::default(), on_trial)
                .model_err("network tuning")?;
            let (net, warnings) = refit_best(ds, &tuning.best).model_err("network refit")?;
            let b = &tuning.best;
            notes.push(format!(
                "dnn: layers {} units {:?} batch {} epochs {} lr {:.3e} {} (cv mse {:.6})",
                b.hidden_layers, b.units, b.batch_size, b.epochs, b.learning_rate, b.optimizer, tuning.study.best.score
            ));
            notes.extend(warnings.into_iter().map(|w| format!("dnn warning: {w}")));
            return Ok(FitOutcome {
                model: FittedModel::Dnn(Box::new(net)),
                notes,
                tuning: Some((tuning.space, tuning.study.trials)),
            });
        }
    };
    Ok(FitOutcome { model, notes, tuning: None })
}
