//! Versioned JSON container for fitted models, so a model can be fitted
//! once and used for prediction later.
//!
//! The container records the column schema the model was trained on. The
//! exact GP stores its covariance spec and training data and refactors the
//! covariance on load; the other models store their fitted state directly.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

use crate::covmodel::CovarianceSpec;
use crate::dataset::{Schema, SpatialDataset};
use crate::gp_exact::{self, GpError, PredictTarget};
use crate::linreg::{OlsError, OlsFit};
use crate::mlp::{MlpError, MlpModel};
use crate::nngp::{ConjugatePosterior, NngpError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file {path}: {source}")]
    Format { path: String, source: serde_json::Error },
    #[error("model file version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("interval level must lie in (0, 1), got {0}")]
    Level(f64),
    #[error(transparent)]
    Ols(#[from] OlsError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Nngp(#[from] NngpError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Ols(OlsFit),
    Nngp(Box<ConjugatePosterior>),
    GpExact { spec: CovarianceSpec, train: SpatialDataset },
    Dnn(Box<MlpModel>),
}

impl FittedModel {
    pub fn name(&self) -> &'static str {
        match self {
            FittedModel::Ols(_) => "ols",
            FittedModel::Nngp(_) => "nngp",
            FittedModel::GpExact { .. } => "gp-exact",
            FittedModel::Dnn(_) => "dnn",
        }
    }
}

/// Point prediction with an optional interval at the requested level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub mean: f64,
    pub sd: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl FittedModel {
    /// Predictions at new rows. OLS uses classical prediction intervals,
    /// NNGP its Student-t predictive, the exact GP a normal predictive; the
    /// network gives point predictions only.
    pub fn predict(&self, x: &DMatrix<f64>, coords: &[[f64; 2]], level: f64) -> Result<Vec<PredictionRow>> {
        if !(level > 0.0 && level < 1.0) {
            return Err(ModelError::Level(level));
        }
        let upper_q = 0.5 + level / 2.0;
        Ok(match self {
            FittedModel::Ols(fit) => fit
                .predict_interval(x, level)?
                .into_iter()
                .map(|p| PredictionRow { mean: p.mean, sd: Some(p.sd), lower: Some(p.lower), upper: Some(p.upper) })
                .collect(),
            FittedModel::Nngp(post) => {
                let p = post.predict(x, coords)?;
                let t = StudentsT::new(0.0, 1.0, p.dof).expect("positive dof");
                let q = t.inverse_cdf(upper_q);
                let var_to_scale = (p.dof - 2.0) / p.dof;
                p.mean
                    .iter()
                    .zip(p.variance.iter())
                    .map(|(&m, &v)| {
                        let half = q * (v * var_to_scale).sqrt();
                        PredictionRow { mean: m, sd: Some(v.sqrt()), lower: Some(m - half), upper: Some(m + half) }
                    })
                    .collect()
            }
            FittedModel::GpExact { spec, train } => {
                let fit = gp_exact::fit_exact(train, spec)?;
                let p = fit.krige(x, coords, PredictTarget::Observation)?;
                let z = Normal::standard().inverse_cdf(upper_q);
                p.mean
                    .iter()
                    .zip(p.variance.iter())
                    .map(|(&m, &v)| {
                        let sd = v.sqrt();
                        PredictionRow { mean: m, sd: Some(sd), lower: Some(m - z * sd), upper: Some(m + z * sd) }
                    })
                    .collect()
            }
            FittedModel::Dnn(model) => model
                .predict(x, coords)?
                .iter()
                .map(|&m| PredictionRow { mean: m, sd: None, lower: None, upper: None })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelContainer {
    pub format_version: u32,
    pub schema: Schema,
    pub model: FittedModel,
}

impl ModelContainer {
    pub fn new(schema: Schema, model: FittedModel) -> Self {
        ModelContainer { format_version: FORMAT_VERSION, schema, model }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| ModelError::Io { path: path.display().to_string(), source };
        let file = std::fs::File::create(path).map_err(io)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|source| ModelError::Format { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|source| ModelError::Io { path: p.clone(), source })?;
        let value: serde_json::Value = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|source| ModelError::Format { path: p.clone(), source })?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != FORMAT_VERSION {
            return Err(ModelError::Version { found });
        }
        serde_json::from_value(value).map_err(|source| ModelError::Format { path: p, source })
    }
}
