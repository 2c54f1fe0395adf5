//! One function per subcommand. Each returns the text it would print so the
//! binary stays a thin wrapper.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use mtfer_core::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
use mtfer_core::data::{split, write_cache};
use mtfer_core::preprocess::{preprocess, read_pnm, EyePair, PreprocessConfig};
use mtfer_core::train::{evaluate, metric_columns, metric_row, train_with, Metrics};
use mtfer_core::{Error, Head, Model};

use crate::config::{load_dataset, DatasetSpec, RunConfig};
use crate::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG_FILE: &str = "run_config.resolved.json";

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("config types serialize");
    s.push('\n');
    s
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub out: Option<&'a Path>,
    pub seed: Option<u64>,
}

/// Trains from a configuration file and writes the checkpoint, per-epoch
/// metrics and the resolved configuration into the output directory.
pub fn train(args: &TrainArgs) -> CliResult<String> {
    let mut cfg = RunConfig::load(args.config)?;
    if let Some(seed) = args.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.apply_environment();
    let out_dir = args
        .out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| CliError::usage("no output directory: pass --out or set output_dir"))?;
    cfg.output_dir = Some(out_dir.clone());
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::input(format!("cannot create {}: {e}", out_dir.display())))?;
    write_file(&out_dir.join(RESOLVED_CONFIG_FILE), json(&cfg))?;

    let loaded = load_dataset(&cfg.dataset, &cfg.preprocess)?;
    let data = split(loaded.examples, cfg.train_fraction, cfg.train.seed)?;
    let model = Model::build(&cfg.model)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    let mut writer = csv::Writer::from_path(&metrics_path)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", metrics_path.display())))?;
    let csv_err = |e: csv::Error| Error::Ingestion(format!("{}: {e}", metrics_path.display()));
    writer.write_record(metric_columns()).map_err(csv_err)?;
    let (model, history) = train_with(model, &data, &cfg.train, |record| {
        writer.write_record(metric_row(record)).map_err(csv_err)?;
        writer.flush().map_err(|e| csv_err(e.into()))
    })?;
    drop(writer);

    let ckpt = out_dir.join(CHECKPOINT_FILE);
    save_checkpoint(&model, &ckpt)?;

    let mut report = format!(
        "trained {} epochs on {} examples ({} validation); stopped: {}\n",
        history.epochs.len(),
        data.train.len(),
        data.validation.len(),
        history.stop_reason
    );
    if let (Some(epoch), Some(best)) = (history.best_epoch, history.best_metric) {
        let restored = if cfg.train.early_stop.restore_best { " (restored)" } else { "" };
        report.push_str(&format!("best validation emotion accuracy {best:.4} at epoch {epoch}{restored}\n"));
    }
    report.push_str(&format!("wrote {}\n", out_dir.display()));
    Ok(report)
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: &'a Path,
    dataset: &'a Path,
    examples: usize,
    metrics: &'a Metrics,
}

/// Preprocessing that produces inputs of the model's size.
fn preprocess_for(model: &Model, base: PreprocessConfig) -> PreprocessConfig {
    let [h, w, _] = model.config().input;
    PreprocessConfig {
        target_size: [h, w],
        ..base
    }
}

/// Evaluates a checkpoint on a dataset path, printing the per-head table
/// and writing the same numbers as JSON.
pub fn eval(args: &EvalArgs) -> CliResult<String> {
    let (model, cfg) = match args.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            let model = load_checkpoint_for(args.checkpoint, &cfg.model).map_err(CliError::checkpoint)?;
            (model, Some(cfg))
        }
        None => (load_checkpoint(args.checkpoint).map_err(CliError::checkpoint)?, None),
    };
    let (pre, weights) = match &cfg {
        Some(c) => (c.preprocess.clone(), c.train.loss_weights),
        None => (preprocess_for(&model, PreprocessConfig::default()), Default::default()),
    };
    let spec = DatasetSpec::detect(args.dataset, None)?;
    let loaded = load_dataset(&spec, &pre)?;
    let metrics = evaluate(&model, &loaded.examples, &weights)?;
    let report = EvalReport {
        checkpoint: args.checkpoint,
        dataset: args.dataset,
        examples: loaded.examples.len(),
        metrics: &metrics,
    };
    write_file(args.out, json(&report))?;
    Ok(format!(
        "{} examples\n{}total weighted loss {:.4}\n",
        loaded.examples.len(),
        metrics.table(),
        metrics.total_loss
    ))
}

/// Parses `lx,ly,rx,ry` in pixel coordinates.
pub fn parse_eyes(text: &str) -> CliResult<EyePair> {
    let bad = || CliError::usage(format!("--eyes expects four numbers lx,ly,rx,ry, got '{text}'"));
    let values = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(bad)?;
    match values[..] {
        [lx, ly, rx, ry] => Ok(EyePair::new(lx, ly, rx, ry)),
        _ => Err(bad()),
    }
}

pub struct PredictArgs<'a> {
    pub checkpoint: &'a Path,
    pub image: &'a Path,
    pub eyes: Option<&'a str>,
}

/// Classifies one image: the four class names followed by each head's
/// winning probability.
pub fn predict(args: &PredictArgs) -> CliResult<String> {
    let eyes = args.eyes.map(parse_eyes).transpose()?;
    let model = load_checkpoint(args.checkpoint).map_err(CliError::checkpoint)?;
    let img = read_pnm(args.image)?;
    let pre = preprocess(&img, eyes.as_ref(), &preprocess_for(&model, PreprocessConfig::default())).map_err(
        |e| match e {
            Error::Landmark(m) => CliError::usage(format!("--eyes: {m}")),
            other => other.into(),
        },
    )?;
    let p = model.predict(&pre.input)?;
    let names: Vec<&str> = Head::ALL.iter().map(|&h| p.class_name(h)).collect();
    let confidences: Vec<String> = Head::ALL
        .iter()
        .map(|&h| format!("{} {:.4}", h.name(), p.confidences[h.index()]))
        .collect();
    Ok(format!("{} | {}\n", names.join(", "), confidences.join(" ")))
}

pub struct PreprocessArgs<'a> {
    pub dataset: &'a Path,
    pub landmarks: Option<&'a Path>,
    pub out: &'a Path,
}

/// Ingests a FER CSV or RAF-DB directory into the binary cache.
pub fn preprocess_dataset(args: &PreprocessArgs) -> CliResult<String> {
    let spec = DatasetSpec::detect(args.dataset, args.landmarks)?;
    if args.landmarks.is_some() && !matches!(spec, DatasetSpec::Rafdb { .. }) {
        return Err(CliError::usage("--landmarks only applies to RAF-DB directories"));
    }
    let loaded = load_dataset(&spec, &PreprocessConfig::default())?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", parent.display())))?;
    }
    write_cache(&loaded.examples, args.out)?;
    Ok(format!(
        "wrote {} examples to {}\nrotation skipped for {} examples without landmarks\n",
        loaded.examples.len(),
        args.out.display(),
        loaded.rotation_skipped
    ))
}

/// Plots the emotion curves of a metrics file.
pub fn plot(metrics: &Path, out: &Path) -> CliResult<String> {
    let text = fs::read_to_string(metrics)
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", metrics.display())))?;
    let curves = crate::plot::Curves::parse(&text)?;
    write_file(out, crate::plot::render(&curves))?;
    Ok(format!("plotted {} epochs to {}\n", curves.epochs.len(), out.display()))
}

/// Output paths written by [`train`].
pub fn train_outputs(dir: &Path) -> [PathBuf; 3] {
    [dir.join(CHECKPOINT_FILE), dir.join(METRICS_FILE), dir.join(RESOLVED_CONFIG_FILE)]
}
