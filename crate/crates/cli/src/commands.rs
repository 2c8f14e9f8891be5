use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use hedonic_core::dataset::{load_features_csv, LoadOptions, MissingPolicy};
use hedonic_core::model_io::ModelContainer;
use hedonic_core::nngp::neighbor_curve;
use hedonic_core::rng::derive_seed;
use hedonic_core::synth::generate;

use crate::args::{CurveArgs, FitArgs, PredictArgs, SynthArgs, VariogramArgs};
use crate::config::RunConfig;
use crate::data::{self, STREAM_CV};
use crate::error::{io_err, CliError, CliResult, ModelContext};
use crate::models::{self, parse_family, ModelKind};

/// Writes `text` to `path`, or to stdout without one.
pub(crate) fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(io_err(Path::new("<stdout>"), e)),
                _ => Ok(()),
            }
        }
    }
}

fn default_schema_path(csv: &Path) -> PathBuf {
    csv.with_extension("schema.toml")
}

pub fn synth(args: &SynthArgs, mut cfg: RunConfig) -> CliResult<String> {
    args.data.apply(&mut cfg);
    if cfg.data.path.is_some() {
        return Err(CliError::config("synth takes a --synth spec, not --data"));
    }
    cfg.validate()?;
    let spec = data::synth_spec(&cfg)?;
    let data = generate(&spec)?;
    data.write_csv_path(&spec, &args.out)?;
    let schema_path = args.schema_out.clone().unwrap_or_else(|| default_schema_path(&args.out));
    std::fs::write(&schema_path, spec.schema().to_toml_string()).map_err(|e| io_err(&schema_path, e))?;
    let y = &data.dataset.y;
    let n = y.len() as f64;
    let mean = y.sum() / n;
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    Ok(format!(
        "wrote {} rows to {} (schema {}); response mean {mean:.4} sd {sd:.4}\n",
        y.len(),
        args.out.display(),
        schema_path.display()
    ))
}

pub fn variogram(args: &VariogramArgs, mut cfg: RunConfig) -> CliResult<String> {
    args.data.apply(&mut cfg);
    args.variogram.apply(&mut cfg);
    cfg.validate()?;
    let family = args.family.as_deref().or(cfg.model.family.as_deref()).map(parse_family).transpose()?;
    let loaded = data::load(&cfg)?;
    let out = models::estimate_variogram(&loaded.ds, &cfg, family)?;
    if let Some(p) = &args.out {
        std::fs::write(p, out.ev.to_csv()).map_err(|e| io_err(p, e))?;
    }
    let mut s = String::new();
    let _ = writeln!(s, "points {}  bins {}  max_dist {:.3} km", out.points, out.ev.len(), out.max_dist);
    if let Some(sel) = &out.selection {
        for (fam, score) in &sel.scores {
            let _ = writeln!(s, "cv score {:<12} {score:.6}", fam.name());
        }
    }
    let spec = out.fit.spec;
    let _ = writeln!(s, "family   {}", spec.family.name());
    let _ = writeln!(s, "sigma2   {:.6}", spec.sigma2);
    let _ = writeln!(s, "phi      {:.6}  (range parameter {:.3} km)", spec.phi, 1.0 / spec.phi);
    let _ = writeln!(s, "tau2     {:.6}", spec.tau2);
    let _ = writeln!(s, "alpha    {:.6}", spec.alpha());
    if !out.fit.converged {
        let _ = writeln!(s, "warning: IRWGLS stopped after {} iterations without converging", out.fit.iterations);
    }
    Ok(s)
}

pub fn fit(args: &FitArgs, mut cfg: RunConfig) -> CliResult<String> {
    args.data.apply(&mut cfg);
    args.model.apply(&mut cfg);
    args.variogram.apply(&mut cfg);
    if args.kind.is_some() {
        cfg.model.kind.clone_from(&args.kind);
    }
    cfg.validate()?;
    let kind: ModelKind = cfg.model.kind.as_deref().ok_or_else(|| CliError::config("--model is required"))?.parse()?;
    let loaded = data::load(&cfg)?;
    let cov = if kind.needs_covariance() { Some(models::resolve_covariance(&loaded.ds, &cfg)?.0) } else { None };
    let mut progress = |t: &hedonic_core::tuner::TrialRecord| eprintln!("trial {:>3}: {:.6}", t.index, t.score);
    let outcome = models::fit_model(kind, &loaded.ds, &cfg, cov.as_ref(), &mut progress)?;
    ModelContainer::new(loaded.schema, outcome.model).save(&args.out)?;
    let mut s = format!("fitted {kind} on {} rows -> {}\n", loaded.ds.n(), args.out.display());
    for note in outcome.notes {
        s.push_str(&note);
        s.push('\n');
    }
    if let Some((space, trials)) = outcome.tuning {
        let path = args.out.with_extension("trials.csv");
        let mut buf = Vec::new();
        hedonic_core::tuner::write_history_csv(&space, &trials, &mut buf).map_err(|e| io_err(&path, e))?;
        std::fs::write(&path, buf).map_err(|e| io_err(&path, e))?;
        let _ = writeln!(s, "trial history -> {}", path.display());
    }
    Ok(s)
}

pub fn predict(args: &PredictArgs) -> CliResult<String> {
    if !args.data.exists() {
        return Err(CliError::config(format!("no such file: {}", args.data.display())));
    }
    let container = ModelContainer::load(&args.model)?;
    let missing = if args.drop_missing { MissingPolicy::Drop } else { MissingPolicy::Reject };
    let frame = load_features_csv(&args.data, &container.schema, LoadOptions { missing })?;
    let rows = container.model.predict(&frame.x, &frame.coords, args.level)?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let csv_err = |e: csv::Error| CliError::config(format!("cannot format predictions: {e}"));
    wtr.write_record(["id", "mean", "sd", "lower", "upper"]).map_err(csv_err)?;
    for (id, r) in frame.row_ids.iter().zip(&rows) {
        wtr.write_record([id.to_string(), r.mean.to_string(), opt(r.sd), opt(r.lower), opt(r.upper)])
            .map_err(csv_err)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::config(e.to_string()))?;
    let text = String::from_utf8(bytes).expect("CSV output is UTF-8");
    emit(args.out.as_deref(), &text)?;
    Ok(match &args.out {
        Some(p) => format!("wrote {} predictions ({}) to {}\n", rows.len(), container.model.name(), p.display()),
        None => String::new(),
    })
}

pub fn neighbor_curve_cmd(args: &CurveArgs, mut cfg: RunConfig) -> CliResult<String> {
    args.data.apply(&mut cfg);
    args.variogram.apply(&mut cfg);
    crate::config::overlay(&mut cfg.model.family, &args.family);
    crate::config::overlay(&mut cfg.model.phi, &args.phi);
    crate::config::overlay(&mut cfg.model.alpha, &args.alpha);
    cfg.validate()?;
    let loaded = data::load(&cfg)?;
    let (spec, _) = models::resolve_covariance(&loaded.ds, &cfg)?;
    let seed = derive_seed(cfg.seed(), STREAM_CV);
    let curve = neighbor_curve(&loaded.ds, spec.family, spec.phi, spec.alpha(), &args.k_list, args.folds, seed)
        .model_err("neighbour curve")?;
    let mut text = String::from("k,cv_mse\n");
    for (k, mse) in &curve {
        let _ = writeln!(text, "{k},{mse}");
    }
    emit(args.out.as_deref(), &text)?;
    Ok(match &args.out {
        Some(p) => format!(
            "family {} phi {:.6} alpha {:.4}; wrote {} rows to {}\n",
            spec.family.name(),
            spec.phi,
            spec.alpha(),
            curve.len(),
            p.display()
        ),
        None => String::new(),
    })
}
