//! The JSON run configuration and dataset selection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mtfer_core::data::{
    is_cache_file, load_fer_csv, load_rafdb, read_cache, FerEmotionMap, LabeledExample, RafdbLayout, RafdbPaths,
};
use mtfer_core::preprocess::PreprocessConfig;
use mtfer_core::synthetic::{generate, SyntheticConfig};
use mtfer_core::train::TrainConfig;
use mtfer_core::ModelConfig;

use crate::{CliError, CliResult};

pub const DETERMINISTIC_ENV: &str = "MTFER_DETERMINISTIC";

/// Where examples come from. Relative paths are resolved against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    FerCsv {
        path: PathBuf,
        #[serde(default)]
        emotion_map: FerEmotionMap,
    },
    Rafdb {
        image_dir: PathBuf,
        emotion_labels: PathBuf,
        attribute_dir: PathBuf,
        #[serde(default)]
        landmarks: Option<PathBuf>,
        #[serde(default)]
        layout: RafdbLayout,
    },
    Cache {
        path: PathBuf,
    },
    Synthetic {
        #[serde(default = "default_count")]
        count: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_jitter")]
        jitter: usize,
        #[serde(default)]
        emotion_only: bool,
        #[serde(default)]
        seed: u64,
    },
}

fn default_count() -> usize {
    SyntheticConfig::default().count
}

fn default_noise() -> f64 {
    SyntheticConfig::default().noise
}

fn default_jitter() -> usize {
    SyntheticConfig::default().jitter
}

impl DatasetSpec {
    /// Guesses the layout from a path: a cache file by its magic bytes, a
    /// `.csv` file as FER, and a directory as a RAF-DB root.
    pub fn detect(path: &Path, landmarks: Option<&Path>) -> CliResult<DatasetSpec> {
        if !path.exists() {
            return Err(CliError::input(format!("dataset {} does not exist", path.display())));
        }
        if path.is_dir() {
            let p = RafdbPaths::under(path);
            let landmarks = match landmarks {
                Some(l) => Some(l.to_path_buf()),
                None => p.landmarks.filter(|l| l.is_file()),
            };
            return Ok(DatasetSpec::Rafdb {
                image_dir: p.image_dir,
                emotion_labels: p.emotion_labels,
                attribute_dir: p.attribute_dir,
                landmarks,
                layout: RafdbLayout::default(),
            });
        }
        if is_cache_file(path) {
            return Ok(DatasetSpec::Cache { path: path.to_path_buf() });
        }
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            return Ok(DatasetSpec::FerCsv {
                path: path.to_path_buf(),
                emotion_map: FerEmotionMap::default(),
            });
        }
        Err(CliError::usage(format!(
            "cannot tell the dataset layout of {} (expected a cache file, a .csv or a RAF-DB directory)",
            path.display()
        )))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            DatasetSpec::FerCsv { path, .. } | DatasetSpec::Cache { path } => fix(path),
            DatasetSpec::Rafdb {
                image_dir,
                emotion_labels,
                attribute_dir,
                landmarks,
                ..
            } => {
                fix(image_dir);
                fix(emotion_labels);
                fix(attribute_dir);
                if let Some(l) = landmarks {
                    fix(l);
                }
            }
            DatasetSpec::Synthetic { .. } => {}
        }
    }
}

/// Loaded examples and the number that were not pose-normalized for lack
/// of landmarks.
pub struct Loaded {
    pub examples: Vec<LabeledExample>,
    pub rotation_skipped: usize,
}

pub fn load_dataset(spec: &DatasetSpec, preprocess: &PreprocessConfig) -> CliResult<Loaded> {
    preprocess.validate()?;
    let (examples, rotation_skipped) = match spec {
        DatasetSpec::FerCsv { path, emotion_map } => (load_fer_csv(path, emotion_map, preprocess)?, 0),
        DatasetSpec::Rafdb {
            image_dir,
            emotion_labels,
            attribute_dir,
            landmarks,
            layout,
        } => {
            let paths = RafdbPaths {
                image_dir: image_dir.clone(),
                emotion_labels: emotion_labels.clone(),
                attribute_dir: attribute_dir.clone(),
                landmarks: landmarks.clone(),
            };
            let ing = load_rafdb(&paths, layout, preprocess)?;
            (ing.examples, ing.rotation_skipped)
        }
        DatasetSpec::Cache { path } => (read_cache(path)?, 0),
        DatasetSpec::Synthetic {
            count,
            noise,
            jitter,
            emotion_only,
            seed,
        } => (
            generate(&SyntheticConfig {
                count: *count,
                noise: *noise,
                jitter: *jitter,
                emotion_only: *emotion_only,
                seed: *seed,
            })?,
            0,
        ),
    };
    Ok(Loaded {
        examples,
        rotation_skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    pub dataset: DatasetSpec,
    /// Fraction of examples used for training; the rest validate.
    #[serde(default = "default_split")]
    pub train_fraction: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub deterministic: bool,
}

fn default_split() -> f64 {
    0.9
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<RunConfig> {
        serde_json::from_str(text).map_err(|e| CliError::usage(format!("invalid config: {e}")))
    }

    /// Reads, parses and validates a configuration file, resolving relative
    /// dataset paths against its directory.
    pub fn load(path: &Path) -> CliResult<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.dataset.resolve_paths(base);
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.preprocess.validate()?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CliError::usage(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if let DatasetSpec::FerCsv { emotion_map, .. } = &self.dataset {
            emotion_map.validate()?;
        }
        Ok(())
    }

    /// Applies the environment override and copies the flag into the
    /// trainer settings.
    pub fn apply_environment(&mut self) {
        if std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1") {
            self.deterministic = true;
        }
        self.train.deterministic = self.deterministic;
    }
}
