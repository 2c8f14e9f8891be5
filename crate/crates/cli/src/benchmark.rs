//! Held-out comparison of models across sample sizes.
//!
//! For every size the data are split at random into training and test
//! rows, each model is fitted on the training rows and scored on the test
//! rows. A model that fails marks its cell failed and the run continues.
//! All outputs are deterministic given the seed except the first line of
//! `report.txt`, which carries the run timestamp.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hedonic_core::covmodel::CovarianceSpec;
use hedonic_core::dataset::{random_split, SpatialDataset};
use hedonic_core::metrics::{histogram_table_text, metric_table_text, range_table_text, ModelEvaluation};
use hedonic_core::rng::{derive_seed, seeded};
use hedonic_core::synth::generate;
use hedonic_core::tuner::write_history_csv;
use rand::seq::SliceRandom;

use crate::args::BenchmarkArgs;
use crate::config::RunConfig;
use crate::data::{self, STREAM_SPLIT, STREAM_SUBSAMPLE};
use crate::error::{io_err, CliError, CliResult};
use crate::models::{self, ModelKind};

pub const DEFAULT_SIZES: [usize; 3] = [1_000, 10_000, 100_000];
pub const DEFAULT_MODELS: [ModelKind; 3] = [ModelKind::Ols, ModelKind::Nngp, ModelKind::Dnn];
/// Largest size without `--large`.
pub const DESK_MAX: usize = 100_000;
pub const LARGE_MAX: usize = 1_000_000;
pub const MIN_SIZE: usize = 10;
pub const DEFAULT_SPLIT: f64 = 0.8;

#[derive(Debug, Clone)]
pub enum CellStatus {
    Ok(ModelEvaluation),
    Failed(String),
    Skipped(String),
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub size: usize,
    pub model: ModelKind,
    pub status: CellStatus,
}

#[derive(Debug, Clone)]
pub struct BenchmarkPlan {
    pub sizes: Vec<usize>,
    pub models: Vec<ModelKind>,
    pub split: f64,
    pub out: PathBuf,
}

impl BenchmarkPlan {
    pub fn from_config(cfg: &RunConfig) -> CliResult<Self> {
        let b = &cfg.benchmark;
        let sizes = b.sizes.clone().unwrap_or_else(|| DEFAULT_SIZES.to_vec());
        let models = match &b.models {
            Some(m) => m.iter().map(|s| s.parse()).collect::<CliResult<Vec<ModelKind>>>()?,
            None => DEFAULT_MODELS.to_vec(),
        };
        if sizes.is_empty() || models.is_empty() {
            return Err(CliError::config("benchmark needs at least one size and one model"));
        }
        let limit = if b.large.unwrap_or(false) { LARGE_MAX } else { DESK_MAX };
        for &n in &sizes {
            if n < MIN_SIZE {
                return Err(CliError::config(format!("size {n} is below the minimum of {MIN_SIZE}")));
            }
            if n > limit {
                let hint = if limit == DESK_MAX { " (pass --large to go up to 1000000)" } else { "" };
                return Err(CliError::config(format!("size {n} exceeds {limit}{hint}")));
            }
        }
        let mut seen = Vec::new();
        for m in models {
            if !seen.contains(&m) {
                seen.push(m);
            }
        }
        Ok(BenchmarkPlan {
            sizes,
            models: seen,
            split: cfg.model.split.unwrap_or(DEFAULT_SPLIT),
            out: b.out.clone().unwrap_or_else(|| PathBuf::from("benchmark")),
        })
    }
}

pub fn benchmark(args: &BenchmarkArgs, mut cfg: RunConfig) -> CliResult<String> {
    args.data.apply(&mut cfg);
    args.model.apply(&mut cfg);
    args.variogram.apply(&mut cfg);
    crate::config::overlay(&mut cfg.benchmark.sizes, &args.sizes);
    crate::config::overlay(&mut cfg.benchmark.models, &args.models);
    crate::config::overlay(&mut cfg.model.split, &args.split);
    crate::config::overlay(&mut cfg.benchmark.out, &args.out);
    crate::config::overlay_switch(&mut cfg.benchmark.large, args.large);
    cfg.validate()?;
    let plan = BenchmarkPlan::from_config(&cfg)?;
    let cells = run(&cfg, &plan)?;
    let failed = cells.iter().filter(|c| matches!(c.status, CellStatus::Failed(_))).count();
    Ok(format!(
        "benchmark: {} cell(s), {failed} failed; outputs in {}\n",
        cells.len(),
        plan.out.display()
    ))
}

/// Rows for one size: the full synthetic draw, or a seeded subsample of
/// the input file.
fn data_for_size(cfg: &RunConfig, file: Option<&SpatialDataset>, n: usize) -> CliResult<Result<SpatialDataset, String>> {
    match file {
        Some(ds) => {
            if n > ds.n() {
                return Ok(Err(format!("dataset has only {} rows", ds.n())));
            }
            let mut idx: Vec<usize> = (0..ds.n()).collect();
            idx.shuffle(&mut seeded(derive_seed(derive_seed(cfg.seed(), STREAM_SUBSAMPLE), n as u64)));
            idx.truncate(n);
            idx.sort_unstable();
            Ok(Ok(ds.subset(&idx)))
        }
        None => {
            let mut c = cfg.clone();
            c.data.n = Some(n);
            let spec = data::synth_spec(&c)?;
            let mut ds = generate(&spec)?.dataset;
            if cfg.data.jitter_duplicates.unwrap_or(false) {
                ds.coords = hedonic_core::nngp::jitter_duplicates(&ds.coords).0;
            }
            Ok(Ok(ds))
        }
    }
}

pub fn run(cfg: &RunConfig, plan: &BenchmarkPlan) -> CliResult<Vec<Cell>> {
    std::fs::create_dir_all(&plan.out).map_err(|e| io_err(&plan.out, e))?;
    let file = match cfg.data.path {
        Some(_) => Some(data::load(cfg)?.ds),
        None => None,
    };

    let mut report = String::new();
    let _ = writeln!(report, "# hedonic benchmark, generated {}", chrono::Local::now().to_rfc3339());
    let names: Vec<&str> = plan.models.iter().map(|m| m.name()).collect();
    let _ = writeln!(report, "seed {}; train fraction {}; models {}", cfg.seed(), plan.split, names.join(","));

    let mut cells = Vec::new();
    for &n in &plan.sizes {
        let _ = writeln!(report, "\n== n = {n} ==");
        let ds = match data_for_size(cfg, file.as_ref(), n)? {
            Ok(ds) => ds,
            Err(msg) => {
                let _ = writeln!(report, "skipped: {msg}");
                for &m in &plan.models {
                    cells.push(Cell { size: n, model: m, status: CellStatus::Skipped(msg.clone()) });
                }
                continue;
            }
        };
        let split = random_split(ds.n(), plan.split, derive_seed(derive_seed(cfg.seed(), STREAM_SPLIT), n as u64))?;
        let (train, test) = (ds.subset(&split.train), ds.subset(&split.test));
        let _ = writeln!(report, "train {}  test {}", train.n(), test.n());
        let y_test: Vec<f64> = test.y.iter().copied().collect();

        let cov: Option<Result<CovarianceSpec, String>> = plan.models.iter().any(|m| m.needs_covariance()).then(|| {
            models::resolve_covariance(&train, cfg).map(|(spec, _)| spec).map_err(|e| e.to_string())
        });
        match &cov {
            Some(Ok(s)) => {
                let _ = writeln!(
                    report,
                    "covariance: {} sigma2 {:.6} phi {:.6} tau2 {:.6} alpha {:.4}",
                    s.family.name(),
                    s.sigma2,
                    s.phi,
                    s.tau2,
                    s.alpha()
                );
            }
            Some(Err(e)) => {
                let _ = writeln!(report, "covariance estimation failed: {e}");
            }
            None => {}
        }

        let mut size_cells = Vec::new();
        for &model in &plan.models {
            let started = Instant::now();
            let status = run_cell(cfg, model, n, &train, &test, &y_test, cov.as_ref(), &plan.out, &mut report)?;
            match &status {
                CellStatus::Ok(e) => {
                    eprintln!("[n={n}] {model}: rmse {:.5} ({:.1?})", e.metrics.rmse, started.elapsed())
                }
                CellStatus::Failed(m) | CellStatus::Skipped(m) => eprintln!("[n={n}] {model}: {m}"),
            }
            size_cells.push(Cell { size: n, model, status });
        }
        for c in &size_cells {
            match &c.status {
                CellStatus::Failed(m) => {
                    let _ = writeln!(report, "failed: {}: {m}", c.model);
                }
                CellStatus::Skipped(m) => {
                    let _ = writeln!(report, "skipped: {}: {m}", c.model);
                }
                CellStatus::Ok(_) => {}
            }
        }
        let evals: Vec<ModelEvaluation> = size_cells
            .iter()
            .filter_map(|c| match &c.status {
                CellStatus::Ok(e) => Some(e.clone()),
                _ => None,
            })
            .collect();
        if !evals.is_empty() {
            let _ = writeln!(report, "\n-- accuracy --\n{}", metric_table_text(&evals));
            let _ = writeln!(report, "-- MAPE (%) by response range --\n{}", range_table_text(&evals));
            let _ = writeln!(report, "-- distribution of error rates (%) --\n{}", histogram_table_text(&evals));
        }
        cells.extend(size_cells);
    }

    write_outputs(&plan.out, &cells, &report)?;
    Ok(cells)
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &RunConfig,
    model: ModelKind,
    n: usize,
    train: &SpatialDataset,
    test: &SpatialDataset,
    y_test: &[f64],
    cov: Option<&Result<CovarianceSpec, String>>,
    out: &Path,
    report: &mut String,
) -> CliResult<CellStatus> {
    if model == ModelKind::Dnn && n > DESK_MAX {
        return Ok(CellStatus::Skipped(format!("dnn is limited to n <= {DESK_MAX}")));
    }
    let spec = match cov {
        Some(Err(e)) if model.needs_covariance() => return Ok(CellStatus::Failed(e.clone())),
        Some(Ok(s)) => Some(*s),
        _ => None,
    };
    let mut progress = |t: &hedonic_core::tuner::TrialRecord| eprintln!("[n={n}] dnn trial {:>3}: {:.6}", t.index, t.score);
    let outcome = match models::fit_model(model, train, cfg, spec.as_ref(), &mut progress) {
        Ok(o) => o,
        Err(CliError::Model(e)) => return Ok(CellStatus::Failed(format!("{e:#}"))),
        Err(e) => return Err(e),
    };
    for note in &outcome.notes {
        let _ = writeln!(report, "{note}");
    }
    if let Some((space, trials)) = &outcome.tuning {
        let path = out.join(format!("trials_n{n}.csv"));
        let mut buf = Vec::new();
        write_history_csv(space, trials, &mut buf).map_err(|e| io_err(&path, e))?;
        std::fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
    }
    let rows = match outcome.model.predict(&test.x, &test.coords, 0.95) {
        Ok(r) => r,
        Err(e) => return Ok(CellStatus::Failed(e.to_string())),
    };
    let yhat: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    Ok(match ModelEvaluation::evaluate(model.name(), y_test, &yhat) {
        Ok(e) => CellStatus::Ok(e),
        Err(e) => CellStatus::Failed(e.to_string()),
    })
}

fn write_outputs(dir: &Path, cells: &[Cell], report: &str) -> CliResult<()> {
    let mut metrics = String::from("size,model,status,n_test,mae,mse,rmse,mape,message\n");
    let mut ranges = String::from("size,model,lower,upper,count,mape\n");
    let mut hist = String::from("size,model,lower,upper,count,percent\n");
    for c in cells {
        match &c.status {
            CellStatus::Ok(e) => {
                let m = &e.metrics;
                let _ = writeln!(metrics, "{},{},ok,{},{},{},{},{},", c.size, c.model, m.n, m.mae, m.mse, m.rmse, m.mape);
                for b in &e.ranges.bins {
                    let mape = b.mape.map(|v| v.to_string()).unwrap_or_default();
                    let _ = writeln!(ranges, "{},{},{},{},{},{mape}", c.size, c.model, b.lower, b.upper, b.count);
                }
                let h = &e.histogram;
                for j in 0..h.counts.len() {
                    let _ = writeln!(
                        hist,
                        "{},{},{},{},{},{}",
                        c.size,
                        c.model,
                        h.edges[j],
                        h.edges[j + 1],
                        h.counts[j],
                        h.frequencies[j]
                    );
                }
            }
            CellStatus::Failed(msg) | CellStatus::Skipped(msg) => {
                let status = if matches!(c.status, CellStatus::Failed(_)) { "failed" } else { "skipped" };
                let msg = msg.replace(['"', '\n'], " ");
                let _ = writeln!(metrics, "{},{},{status},,,,,,\"{msg}\"", c.size, c.model);
            }
        }
    }
    for (name, text) in [("report.txt", report), ("metrics.csv", &metrics), ("ranges.csv", &ranges), ("histogram.csv", &hist)] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    }
    Ok(())
}
