//! Feed-forward regression network: ReLU hidden layers, affine output,
//! squared-error loss, mini-batch Adam or RMSprop.
//!
//! Inputs are the design columns (intercept passed through unchanged, the
//! rest standardized) followed by the two standardized coordinates, so a
//! model on `K` design columns has `K + 2` inputs. The response is
//! standardized for training and predictions are mapped back.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SpatialDataset;
use crate::rng::{derive_seed, seeded};

#[derive(Debug, Error, PartialEq)]
pub enum MlpError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("need at least batch_size = {batch} rows, got {n}")]
    TooFewRows { n: usize, batch: usize },
    #[error("expected {expected} input columns, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("training diverged in epoch {epoch}: loss = {loss}; lower the learning rate")]
    Diverged { epoch: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, MlpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Rmsprop,
}

impl std::fmt::Display for Optimizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Optimizer::Adam => "adam",
            Optimizer::Rmsprop => "rmsprop",
        })
    }
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Optimizer::Adam),
            "rmsprop" => Ok(Optimizer::Rmsprop),
            _ => Err(format!("unknown optimizer '{s}' (expected adam or rmsprop)")),
        }
    }
}

/// Search ranges used by the tuner.
pub mod bounds {
    pub const LAYERS: (usize, usize) = (1, 5);
    pub const UNITS: (usize, usize) = (10, 50);
    pub const BATCH: (usize, usize) = (32, 128);
    pub const EPOCHS: (usize, usize) = (10, 30);
    pub const LEARNING_RATE: (f64, f64) = (1e-5, 1e-2);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub units: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_layers: 2,
            units: vec![32, 32],
            batch_size: 64,
            epochs: 20,
            learning_rate: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MlpError::InvalidConfig(m.into()));
        if self.units.len() != self.hidden_layers {
            return bad("units must list one count per hidden layer");
        }
        if self.units.contains(&0) {
            return bad("hidden layers need at least one unit");
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        Ok(())
    }

    /// Ways in which the config leaves the tuner's search ranges. These
    /// are warnings only.
    pub fn range_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if v < lo || v > hi {
                out.push(format!("{name} = {v} outside search range [{lo}, {hi}]"));
            }
        };
        let f = |(a, b): (usize, usize)| (a as f64, b as f64);
        check("hidden_layers", self.hidden_layers as f64, f(bounds::LAYERS));
        for (i, u) in self.units.iter().enumerate() {
            check(&format!("units[{i}]"), *u as f64, f(bounds::UNITS));
        }
        check("batch_size", self.batch_size as f64, f(bounds::BATCH));
        check("epochs", self.epochs as f64, f(bounds::EPOCHS));
        check("learning_rate", self.learning_rate, bounds::LEARNING_RATE);
        out
    }
}

/// `u = w z + b` with `w` of shape `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl DenseLayer {
    fn zeros_like(&self) -> Self {
        DenseLayer { w: DMatrix::zeros(self.w.nrows(), self.w.ncols()), b: DVector::zeros(self.b.len()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<DenseLayer>,
}

struct Trace {
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<DMatrix<f64>>,
    /// Hidden pre-activations.
    pre: Vec<DMatrix<f64>>,
    out: DMatrix<f64>,
}

impl Network {
    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero
    /// biases.
    pub fn init(input_dim: usize, units: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(units);
        dims.push(1);
        let layers = dims
            .windows(2)
            .map(|d| {
                let lim = (6.0 / d[0] as f64).sqrt();
                let w = DMatrix::from_fn(d[1], d[0], |_, _| rng.random_range(-lim..lim));
                DenseLayer { w, b: DVector::zeros(d[1]) }
            })
            .collect();
        Network { layers }
    }

    pub fn zeros(input_dim: usize, units: &[usize]) -> Self {
        let mut net = Network::init(input_dim, units, &mut seeded(0));
        for l in &mut net.layers {
            l.w.fill(0.0);
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn trace(&self, batch: &DMatrix<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut inputs = vec![batch.clone()];
        let mut pre = Vec::with_capacity(last);
        for (i, layer) in self.layers.iter().enumerate() {
            let mut u = &layer.w * &inputs[i];
            for mut col in u.column_iter_mut() {
                col += &layer.b;
            }
            if i == last {
                return Trace { inputs, pre, out: u };
            }
            let a = u.map(|v| v.max(0.0));
            pre.push(u);
            inputs.push(a);
        }
        unreachable!("network has an output layer")
    }

    /// Outputs for a column-per-sample batch.
    fn forward_cols(&self, batch: &DMatrix<f64>) -> DVector<f64> {
        let mut a = batch.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut u = &layer.w * &a;
            for mut col in u.column_iter_mut() {
                col += &layer.b;
            }
            if i < last {
                u.apply(|v| *v = v.max(0.0));
            }
            a = u;
        }
        a.row(0).transpose()
    }

    /// Outputs for inputs with one sample per row.
    pub fn forward(&self, inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
        if inputs.ncols() != self.input_dim() {
            return Err(MlpError::Dimension { expected: self.input_dim(), got: inputs.ncols() });
        }
        Ok(self.forward_cols(&inputs.transpose()))
    }

    /// Mean squared error and its gradient for a column-per-sample batch.
    fn loss_and_grad(&self, batch: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<DenseLayer>) {
        let t = self.trace(batch);
        let b = y.len() as f64;
        let mut delta = DMatrix::from_fn(1, y.len(), |_, c| t.out[(0, c)] - y[c]);
        let loss = delta.norm_squared() / b;
        delta *= 2.0 / b;
        let mut grads: Vec<DenseLayer> = self.layers.iter().map(DenseLayer::zeros_like).collect();
        for l in (0..self.layers.len()).rev() {
            grads[l].w = &delta * t.inputs[l].transpose();
            grads[l].b = delta.column_sum();
            if l > 0 {
                let mut next = self.layers[l].w.transpose() * &delta;
                next.zip_apply(&t.pre[l - 1], |d, u| {
                    if u <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = next;
            }
        }
        (loss, grads)
    }

    fn param_mut(&mut self, mut idx: usize) -> &mut f64 {
        for l in &mut self.layers {
            if idx < l.w.len() {
                return &mut l.w.as_mut_slice()[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return &mut l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range")
    }

    fn activation_pattern(&self, batch: &DMatrix<f64>) -> Vec<bool> {
        self.trace(batch).pre.iter().flat_map(|u| u.iter().map(|v| *v > 0.0).collect::<Vec<_>>()).collect()
    }
}

/// Squared-error loss `(1/n) sum (y - yhat)^2`.
pub fn loss(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(MlpError::Dimension { expected: y.len(), got: yhat.len() });
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    pub max_rel_deviation: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
}

/// Compares backprop gradients with central differences for every
/// parameter. Relative deviation is `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn gradient_check(net: &Network, inputs: &DMatrix<f64>, targets: &[f64], epsilon: f64) -> Result<GradientCheck> {
    if inputs.ncols() != net.input_dim() {
        return Err(MlpError::Dimension { expected: net.input_dim(), got: inputs.ncols() });
    }
    if inputs.nrows() != targets.len() {
        return Err(MlpError::Dimension { expected: inputs.nrows(), got: targets.len() });
    }
    let batch = inputs.transpose();
    let (_, grads) = net.loss_and_grad(&batch, targets);
    let analytic: Vec<f64> =
        grads.iter().flat_map(|g| g.w.iter().chain(g.b.iter()).copied().collect::<Vec<_>>()).collect();
    let base = net.activation_pattern(&batch);
    let mut probe = net.clone();
    let mut out = GradientCheck { max_rel_deviation: 0.0, checked: 0, skipped: 0 };
    let eval = |p: &Network| loss(targets, p.forward_cols(&batch).as_slice()).expect("lengths match");
    for (i, &g) in analytic.iter().enumerate() {
        let orig = *probe.param_mut(i);
        *probe.param_mut(i) = orig + epsilon;
        let up = eval(&probe);
        let kink_up = probe.activation_pattern(&batch) != base;
        *probe.param_mut(i) = orig - epsilon;
        let down = eval(&probe);
        let kink_down = probe.activation_pattern(&batch) != base;
        *probe.param_mut(i) = orig;
        if kink_up || kink_down {
            out.skipped += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * epsilon);
        let dev = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        out.max_rel_deviation = out.max_rel_deviation.max(dev);
        out.checked += 1;
    }
    Ok(out)
}

/// Centering and scaling applied to inputs and response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    /// Per design column; column 0 (intercept) has mean 0 and sd 1.
    pub x_means: Vec<f64>,
    pub x_sds: Vec<f64>,
    pub coord_means: [f64; 2],
    pub coord_sds: [f64; 2],
    pub y_mean: f64,
    pub y_sd: f64,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    // Constant columns (a dummy level absent from a fold, say) pass through centred.
    (m, if sd > 0.0 { sd } else { 1.0 })
}

impl InputScaling {
    pub fn fit(ds: &SpatialDataset) -> Self {
        let k = ds.k();
        let (mut x_means, mut x_sds) = (vec![0.0; k], vec![1.0; k]);
        for c in 1..k {
            let (m, s) = mean_sd(ds.x.column(c).iter().copied());
            x_means[c] = m;
            x_sds[c] = s;
        }
        let (mx, sx) = mean_sd(ds.coords.iter().map(|c| c[0]));
        let (my, sy) = mean_sd(ds.coords.iter().map(|c| c[1]));
        let (y_mean, y_sd) = mean_sd(ds.y.iter().copied());
        InputScaling { x_means, x_sds, coord_means: [mx, my], coord_sds: [sx, sy], y_mean, y_sd }
    }

    pub fn input_dim(&self) -> usize {
        self.x_means.len() + 2
    }

    /// Network inputs, one column per sample.
    fn columns(&self, x: &DMatrix<f64>, coords: &[[f64; 2]]) -> Result<DMatrix<f64>> {
        let k = self.x_means.len();
        if x.ncols() != k {
            return Err(MlpError::Dimension { expected: k, got: x.ncols() });
        }
        if coords.len() != x.nrows() {
            return Err(MlpError::Dimension { expected: x.nrows(), got: coords.len() });
        }
        Ok(DMatrix::from_fn(k + 2, x.nrows(), |r, c| {
            if r < k {
                (x[(c, r)] - self.x_means[r]) / self.x_sds[r]
            } else {
                let j = r - k;
                (coords[c][j] - self.coord_means[j]) / self.coord_sds[j]
            }
        }))
    }

    /// Network inputs, one row per sample.
    pub fn inputs(&self, x: &DMatrix<f64>, coords: &[[f64; 2]]) -> Result<DMatrix<f64>> {
        Ok(self.columns(x, coords)?.transpose())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub network: Network,
    pub scaling: InputScaling,
    pub feature_names: Vec<String>,
    /// Mean mini-batch loss (standardized scale) per epoch.
    pub loss_history: Vec<f64>,
}

impl MlpModel {
    pub fn predict(&self, x: &DMatrix<f64>, coords: &[[f64; 2]]) -> Result<DVector<f64>> {
        let cols = self.scaling.columns(x, coords)?;
        let z = self.network.forward_cols(&cols);
        Ok(z.map(|v| v * self.scaling.y_sd + self.scaling.y_mean))
    }
}

enum OptState {
    Adam { m: Vec<DenseLayer>, v: Vec<DenseLayer>, t: i32 },
    Rmsprop { v: Vec<DenseLayer> },
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const RMS_DECAY: f64 = 0.9;
const OPT_EPS: f64 = 1e-8;

impl OptState {
    fn new(kind: Optimizer, net: &Network) -> Self {
        let z = || net.layers.iter().map(DenseLayer::zeros_like).collect();
        match kind {
            Optimizer::Adam => OptState::Adam { m: z(), v: z(), t: 0 },
            Optimizer::Rmsprop => OptState::Rmsprop { v: z() },
        }
    }

    fn step(&mut self, net: &mut Network, grads: &[DenseLayer], lr: f64) {
        fn slices(l: &mut DenseLayer) -> [&mut [f64]; 2] {
            [l.w.as_mut_slice(), l.b.as_mut_slice()]
        }
        match self {
            OptState::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_B1.powi(*t);
                let c2 = 1.0 - ADAM_B2.powi(*t);
                for l in 0..grads.len() {
                    let g = [grads[l].w.as_slice(), grads[l].b.as_slice()];
                    let [mw, mb] = slices(&mut m[l]);
                    let [vw, vb] = slices(&mut v[l]);
                    let [pw, pb] = slices(&mut net.layers[l]);
                    for (p, m, v, g) in [(pw, mw, vw, g[0]), (pb, mb, vb, g[1])] {
                        for i in 0..g.len() {
                            m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * g[i];
                            v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * g[i] * g[i];
                            p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + OPT_EPS);
                        }
                    }
                }
            }
            OptState::Rmsprop { v } => {
                for l in 0..grads.len() {
                    let g = [grads[l].w.as_slice(), grads[l].b.as_slice()];
                    let [vw, vb] = slices(&mut v[l]);
                    let [pw, pb] = slices(&mut net.layers[l]);
                    for (p, v, g) in [(pw, vw, g[0]), (pb, vb, g[1])] {
                        for i in 0..g.len() {
                            v[i] = RMS_DECAY * v[i] + (1.0 - RMS_DECAY) * g[i] * g[i];
                            p[i] -= lr * g[i] / (v[i].sqrt() + OPT_EPS);
                        }
                    }
                }
            }
        }
    }
}

pub fn train(ds: &SpatialDataset, config: &MlpConfig) -> Result<MlpModel> {
    train_with_order(ds, config, &mut |_, order, rng| order.shuffle(rng))
}

/// Training loop with the per-epoch row order supplied by `reorder`, which
/// receives the epoch, the previous order and the shuffle generator.
fn train_with_order(
    ds: &SpatialDataset,
    config: &MlpConfig,
    reorder: &mut dyn FnMut(usize, &mut Vec<usize>, &mut ChaCha8Rng),
) -> Result<MlpModel> {
    config.validate()?;
    let n = ds.n();
    if n < config.batch_size {
        return Err(MlpError::TooFewRows { n, batch: config.batch_size });
    }
    let scaling = InputScaling::fit(ds);
    let inputs = scaling.columns(&ds.x, &ds.coords)?;
    let targets: Vec<f64> = ds.y.iter().map(|v| (v - scaling.y_mean) / scaling.y_sd).collect();
    let mut network = Network::init(scaling.input_dim(), &config.units, &mut seeded(derive_seed(config.seed, 0)));
    let mut shuffle_rng = seeded(derive_seed(config.seed, 1));
    let mut opt = OptState::new(config.optimizer, &network);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let d = inputs.nrows();
    for epoch in 0..config.epochs {
        reorder(epoch, &mut order, &mut shuffle_rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = DMatrix::from_fn(d, chunk.len(), |r, c| inputs[(r, chunk[c])]);
            let y: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (l, grads) = network.loss_and_grad(&batch, &y);
            if !l.is_finite() || grads.iter().any(|g| !g.w.iter().chain(g.b.iter()).all(|v| v.is_finite())) {
                return Err(MlpError::Diverged { epoch, loss: l });
            }
            total += l * chunk.len() as f64;
            opt.step(&mut network, &grads, config.learning_rate);
        }
        history.push(total / n as f64);
    }
    Ok(MlpModel { config: config.clone(), network, scaling, feature_names: ds.feature_names.clone(), loss_history: history })
}
