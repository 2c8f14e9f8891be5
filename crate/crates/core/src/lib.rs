//! Spatial hedonic regression: OLS, exact Gaussian-process Kriging,
//! conjugate nearest-neighbour GP (Vecchia) regression and a feed-forward
//! network with TPE hyperparameter search, plus the variogram, metric and
//! synthetic-data machinery used to compare them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod covmodel;
pub mod dataset;
pub mod gp_exact;
pub mod linreg;
pub mod metrics;
pub mod mlp;
pub mod model_io;
pub mod nngp;
pub mod rng;
pub mod spatial;
pub mod synth;
pub mod tuner;

pub use covmodel::{CovFamily, CovarianceSpec, EmpiricalVariogram};
pub use dataset::{Schema, SpatialDataset, SplitIndices};
pub use metrics::MetricReport;
pub use gp_exact::ExactGpFit;
pub use nngp::{ConjugatePosterior, NeighborGraph, SparseVecchiaFactor};
pub use mlp::{MlpConfig, MlpModel};
pub use model_io::{FittedModel, ModelContainer};
pub use synth::SynthSpec;
