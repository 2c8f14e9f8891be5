//! Out-of-sample error measures and the report tables built on them.
//!
//! MAPE is computed on whatever scale the response is on; for log-rent
//! responses that is the log scale, not the exponentiated price.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("length mismatch: {0} observed vs {1} predicted")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("observed value at position {0} is zero; MAPE undefined")]
    ZeroResponse(usize),
    #[error("bin edges must be strictly increasing")]
    BadEdges,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    pub n: usize,
}

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// MAE, MSE, RMSE and MAPE (percent).
pub fn compute(y: &[f64], yhat: &[f64]) -> Result<MetricReport> {
    check(y, yhat)?;
    if let Some(i) = y.iter().position(|&v| v == 0.0) {
        return Err(MetricsError::ZeroResponse(i));
    }
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut pct = 0.0;
    for (&a, &b) in y.iter().zip(yhat) {
        let e = a - b;
        abs += e.abs();
        sq += e * e;
        pct += (e / a).abs();
    }
    let mse = sq / n;
    Ok(MetricReport { mae: abs / n, mse, rmse: mse.sqrt(), mape: 100.0 * pct / n, n: y.len() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBin {
    pub lower: f64,
    pub upper: f64,
    /// `None` for an empty bin.
    pub mape: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBreakdown {
    pub bins: Vec<RangeBin>,
}

/// Log-rent range edges of the per-range MAPE table.
pub fn default_range_edges() -> Vec<f64> {
    vec![f64::NEG_INFINITY, 10.0, 10.5, 11.0, 11.5, 12.0, 12.5, 13.0, f64::INFINITY]
}

/// MAPE per response range. Bins are `[lower, upper)`; a finite last edge
/// closes the last bin. Samples outside all bins are not counted.
pub fn range_breakdown(y: &[f64], yhat: &[f64], edges: &[f64]) -> Result<RangeBreakdown> {
    check(y, yhat)?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(MetricsError::BadEdges);
    }
    let nb = edges.len() - 1;
    let mut sums = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    for (&a, &b) in y.iter().zip(yhat) {
        let bin = if a == edges[nb] {
            Some(nb - 1)
        } else {
            edges.windows(2).position(|w| a >= w[0] && a < w[1])
        };
        if let Some(j) = bin {
            if a == 0.0 {
                return Err(MetricsError::ZeroResponse(0));
            }
            sums[j] += ((a - b) / a).abs();
            counts[j] += 1;
        }
    }
    let bins = (0..nb)
        .map(|j| RangeBin {
            lower: edges[j],
            upper: edges[j + 1],
            mape: (counts[j] > 0).then(|| 100.0 * sums[j] / counts[j] as f64),
            count: counts[j],
        })
        .collect();
    Ok(RangeBreakdown { bins })
}

/// Relative-frequency table of percent prediction errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateHistogram {
    /// Bin edges in percent; the last edge is `+inf`.
    pub edges: Vec<f64>,
    /// Percent of samples per bin.
    pub frequencies: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Error-rate edges 0, 0.5, ..., 3.5, +inf (percent).
pub fn default_error_edges() -> Vec<f64> {
    let mut e: Vec<f64> = (0..=7).map(|i| i as f64 * 0.5).collect();
    e.push(f64::INFINITY);
    e
}

pub fn error_histogram(y: &[f64], yhat: &[f64]) -> Result<ErrorRateHistogram> {
    check(y, yhat)?;
    let edges = default_error_edges();
    let nb = edges.len() - 1;
    let mut counts = vec![0usize; nb];
    for (i, (&a, &b)) in y.iter().zip(yhat).enumerate() {
        if a == 0.0 {
            return Err(MetricsError::ZeroResponse(i));
        }
        let rate = 100.0 * ((a - b) / a).abs();
        let j = edges.windows(2).position(|w| rate >= w[0] && rate < w[1]).unwrap_or(nb - 1);
        counts[j] += 1;
    }
    let n = y.len() as f64;
    let frequencies = counts.iter().map(|&c| 100.0 * c as f64 / n).collect();
    Ok(ErrorRateHistogram { edges, frequencies, counts })
}

fn range_label(lo: f64, hi: f64) -> String {
    match (lo.is_finite(), hi.is_finite()) {
        (false, true) => format!("~{hi}"),
        (true, false) => format!("{lo}~"),
        (true, true) => format!("{lo}~{hi}"),
        (false, false) => "all".into(),
    }
}

/// One model's column in a report.
#[derive(Debug, Clone)]
pub struct ModelEvaluation {
    pub model: String,
    pub metrics: MetricReport,
    pub ranges: RangeBreakdown,
    pub histogram: ErrorRateHistogram,
}

impl ModelEvaluation {
    pub fn evaluate(model: &str, y: &[f64], yhat: &[f64]) -> Result<Self> {
        Ok(ModelEvaluation {
            model: model.to_string(),
            metrics: compute(y, yhat)?,
            ranges: range_breakdown(y, yhat, &default_range_edges())?,
            histogram: error_histogram(y, yhat)?,
        })
    }
}

/// Aligned text table: rows MAE/MSE/RMSE/MAPE, one column per model.
pub fn metric_table_text(evals: &[ModelEvaluation]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<8}", "");
    for e in evals {
        let _ = write!(s, "{:>14}", e.model);
    }
    s.push('\n');
    type Getter = fn(&MetricReport) -> f64;
    let rows: [(&str, Getter); 4] =
        [("MAE", |m| m.mae), ("MSE", |m| m.mse), ("RMSE", |m| m.rmse), ("MAPE", |m| m.mape)];
    for (name, get) in rows {
        let _ = write!(s, "{name:<8}");
        for e in evals {
            let _ = write!(s, "{:>14.4}", get(&e.metrics));
        }
        s.push('\n');
    }
    s
}

/// Aligned text table of per-range MAPE; empty bins print `-`.
pub fn range_table_text(evals: &[ModelEvaluation]) -> String {
    let mut s = format!("{:<12}", "range");
    for e in evals {
        let _ = write!(s, "{:>14}", e.model);
    }
    s.push('\n');
    if let Some(first) = evals.first() {
        for (j, bin) in first.ranges.bins.iter().enumerate() {
            let _ = write!(s, "{:<12}", range_label(bin.lower, bin.upper));
            for e in evals {
                match e.ranges.bins[j].mape {
                    Some(v) => {
                        let _ = write!(s, "{v:>14.4}");
                    }
                    None => {
                        let _ = write!(s, "{:>14}", "-");
                    }
                }
            }
            s.push('\n');
        }
    }
    s
}

/// Aligned text table of error-rate relative frequencies.
pub fn histogram_table_text(evals: &[ModelEvaluation]) -> String {
    let mut s = format!("{:<12}", "error %");
    for e in evals {
        let _ = write!(s, "{:>14}", e.model);
    }
    s.push('\n');
    if let Some(first) = evals.first() {
        for j in 0..first.histogram.frequencies.len() {
            let (lo, hi) = (first.histogram.edges[j], first.histogram.edges[j + 1]);
            let _ = write!(s, "{:<12}", range_label(lo, hi));
            for e in evals {
                let _ = write!(s, "{:>14.4}", e.histogram.frequencies[j]);
            }
            s.push('\n');
        }
    }
    s
}
