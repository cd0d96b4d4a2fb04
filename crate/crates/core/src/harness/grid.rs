//! Experiment configurations, per-image records and the CSV grid runner.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::attacks::{
    run_attack, run_horizontal, AttackError, AttackOutcome, AttackParams, Execution, Method,
    RunnerConfig,
};
use crate::client::{ServiceClient, DEFAULT_QUERY_LIMIT, DEFAULT_WORKERS};
use crate::codec;
use crate::norm::DEFAULT_EPSILON;
use crate::tensor::ImageTensor;

pub const RECORD_HEADER: [&str; 9] = [
    "method", "mode", "model", "image_id", "success", "queries", "wall_ms", "linf_u8", "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    None,
    Horizontal,
    Vertical,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::None => "none",
            Mode::Horizontal => "horizontal",
            Mode::Vertical => "vertical",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Mode::None),
            "horizontal" => Ok(Mode::Horizontal),
            "vertical" => Ok(Mode::Vertical),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub mode: Mode,
    /// Steps per round in vertical mode.
    pub batch: usize,
    pub model: String,
    pub params: AttackParams,
    pub budget: usize,
    /// Attack at most this many dataset images.
    pub images: usize,
    pub base_seed: u64,
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn new(method: Method, mode: Mode, model: impl Into<String>) -> Self {
        Self {
            method,
            mode,
            batch: 1,
            model: model.into(),
            params: AttackParams::with_epsilon(DEFAULT_EPSILON),
            budget: DEFAULT_QUERY_LIMIT,
            images: usize::MAX,
            base_seed: 0,
            workers: DEFAULT_WORKERS,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let eps = self.params.epsilon;
        if self.batch == 0 {
            return Err(HarnessError::Invalid("batch must be at least 1".into()));
        }
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(HarnessError::Invalid(format!(
                "epsilon {eps} outside (0, 1]"
            )));
        }
        if self.budget == 0 {
            return Err(HarnessError::Invalid("budget must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(HarnessError::Invalid("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn runner(&self) -> RunnerConfig {
        RunnerConfig {
            method: self.method,
            params: self.params.clone(),
            query_limit: self.budget,
            workers: self.workers,
            seed: self.base_seed,
        }
    }

    /// Directory name for this config's final images.
    pub fn slug(&self) -> String {
        match self.mode {
            Mode::Vertical => format!("{}_{}{}_{}", self.method, self.mode, self.batch, self.model),
            _ => format!("{}_{}_{}", self.method, self.mode, self.model),
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub method: String,
    pub mode: String,
    pub model: String,
    pub image_id: String,
    pub success: bool,
    pub queries: usize,
    pub wall_ms: f64,
    pub linf_u8: u8,
    #[serde(default)]
    pub error: String,
}

impl ExperimentRecord {
    fn from_outcome(cfg: &ExperimentConfig, image_id: &str, o: &AttackOutcome) -> Self {
        Self {
            method: cfg.method.to_string(),
            mode: cfg.mode.to_string(),
            model: cfg.model.clone(),
            image_id: image_id.to_string(),
            success: o.success,
            queries: o.queries_used,
            wall_ms: o.wall_ms,
            linf_u8: o.linf_u8,
            error: String::new(),
        }
    }

    fn failed(cfg: &ExperimentConfig, image_id: &str, err: &AttackError) -> Self {
        Self {
            method: cfg.method.to_string(),
            mode: cfg.mode.to_string(),
            model: cfg.model.clone(),
            image_id: image_id.to_string(),
            success: false,
            queries: 0,
            wall_ms: 0.0,
            linf_u8: 0,
            error: err.to_string(),
        }
    }
}

/// Result of one configuration over a set of images.
#[derive(Debug, Clone)]
pub struct ConfigRun {
    pub records: Vec<ExperimentRecord>,
    /// `None` where the image's attack failed with an error.
    pub outcomes: Vec<Option<AttackOutcome>>,
    pub total_ms: f64,
}

/// Runs one configuration. Errors are recorded per row; in horizontal
/// mode an error aborts the shared run and marks every image.
pub async fn run_config(
    client: &ServiceClient,
    images: &[(String, ImageTensor)],
    cfg: &ExperimentConfig,
) -> Result<ConfigRun, HarnessError> {
    cfg.validate()?;
    let images = &images[..images.len().min(cfg.images)];
    let runner = cfg.runner();
    let started = Instant::now();
    let mut records = Vec::with_capacity(images.len());
    let mut outcomes = Vec::with_capacity(images.len());
    match cfg.mode {
        Mode::Horizontal => {
            let tensors: Vec<ImageTensor> = images.iter().map(|(_, t)| t.clone()).collect();
            match run_horizontal(client, &cfg.model, &tensors, &runner).await {
                Ok(done) => {
                    for ((id, _), o) in images.iter().zip(done) {
                        records.push(ExperimentRecord::from_outcome(cfg, id, &o));
                        outcomes.push(Some(o));
                    }
                }
                Err(e) => {
                    tracing::warn!(error = %e, config = %cfg.slug(), "horizontal run failed");
                    for (id, _) in images {
                        records.push(ExperimentRecord::failed(cfg, id, &e));
                        outcomes.push(None);
                    }
                }
            }
        }
        Mode::None | Mode::Vertical => {
            let execution = match cfg.mode {
                Mode::Vertical => Execution::Vertical(cfg.batch),
                _ => Execution::Sequential,
            };
            for (i, (id, image)) in images.iter().enumerate() {
                let per_image = RunnerConfig {
                    seed: runner.seed.wrapping_add(i as u64),
                    ..runner.clone()
                };
                match run_attack(client, &cfg.model, image, &per_image, execution).await {
                    Ok(o) => {
                        records.push(ExperimentRecord::from_outcome(cfg, id, &o));
                        outcomes.push(Some(o));
                    }
                    Err(e) => {
                        tracing::warn!(error = %e, image = %id, config = %cfg.slug(), "attack failed");
                        records.push(ExperimentRecord::failed(cfg, id, &e));
                        outcomes.push(None);
                    }
                }
            }
        }
    }
    Ok(ConfigRun {
        records,
        outcomes,
        total_ms: started.elapsed().as_secs_f64() * 1000.0,
    })
}

/// Stores each outcome's final image as `<dir>/<slug>/<image_id>.png`.
pub fn save_finals(
    dir: &Path,
    cfg: &ExperimentConfig,
    ids: &[String],
    run: &ConfigRun,
) -> Result<PathBuf, HarnessError> {
    let target = dir.join(cfg.slug());
    fs::create_dir_all(&target)?;
    for (id, outcome) in ids.iter().zip(&run.outcomes) {
        if let Some(o) = outcome {
            fs::write(
                target.join(format!("{id}.png")),
                codec::encode_png(&o.final_image)?,
            )?;
        }
    }
    Ok(target)
}

pub fn record_writer<W: Write>(out: W) -> Result<csv::Writer<W>, HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(RECORD_HEADER)?;
    Ok(w)
}

pub fn write_records<W: Write>(out: W, records: &[ExperimentRecord]) -> Result<(), HarnessError> {
    let mut w = record_writer(out)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

/// Runs every config over `images`, writing rows to `csv_path` as each
/// config completes. Final images go under `finals_dir` when given.
pub async fn run_grid(
    client: &ServiceClient,
    images: &[(String, ImageTensor)],
    configs: &[ExperimentConfig],
    csv_path: &Path,
    finals_dir: Option<&Path>,
) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let mut writer = record_writer(fs::File::create(csv_path)?)?;
    let ids: Vec<String> = images.iter().map(|(id, _)| id.clone()).collect();
    let mut all = Vec::new();
    for cfg in configs {
        let run = run_config(client, images, cfg).await?;
        tracing::info!(config = %cfg.slug(), ms = run.total_ms, "config finished");
        if let Some(dir) = finals_dir {
            save_finals(dir, cfg, &ids, &run)?;
        }
        for r in &run.records {
            writer.serialize(r)?;
        }
        writer.flush()?;
        all.extend(run.records);
    }
    Ok(all)
}
