//! Summaries, speedup measurements, verification and plot data.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::{run_config, ExperimentConfig, ExperimentRecord, Mode};
use super::HarnessError;
use crate::client::{ProfileRow, ServiceClient};
use crate::codec;
use crate::tensor::ImageTensor;

/// Aggregate over the rows of one (method, mode, model) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub mode: String,
    pub model: String,
    pub images: usize,
    pub successes: usize,
    pub errors: usize,
    pub success_rate: f64,
    /// Mean over attempted images, successful or not.
    pub mean_queries: f64,
    /// Horizontal rows time from the common start, so the total is their
    /// maximum; other modes run images back to back and are summed.
    pub total_wall_ms: f64,
}

pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.method.clone(), r.mode.clone(), r.model.clone()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((method, mode, model), rows)| {
            let images = rows.len();
            let successes = rows.iter().filter(|r| r.success).count();
            let errors = rows.iter().filter(|r| !r.error.is_empty()).count();
            let queries: usize = rows.iter().map(|r| r.queries).sum();
            let total_wall_ms = if mode == Mode::Horizontal.to_string() {
                rows.iter().map(|r| r.wall_ms).fold(0.0, f64::max)
            } else {
                rows.iter().map(|r| r.wall_ms).sum()
            };
            SummaryRow {
                method,
                mode,
                model,
                images,
                successes,
                errors,
                success_rate: successes as f64 / images as f64,
                mean_queries: queries as f64 / images as f64,
                total_wall_ms,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record([
        "method",
        "mode",
        "model",
        "images",
        "successes",
        "errors",
        "success_rate",
        "mean_queries",
        "total_wall_ms",
    ])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Speedup {
    pub baseline_ms: f64,
    pub distributed_ms: f64,
}

impl Speedup {
    pub fn ratio(&self) -> f64 {
        self.baseline_ms / self.distributed_ms
    }
}

/// Same seeded workload in mode none and horizontal mode.
pub async fn horizontal_speedup(
    client: &ServiceClient,
    images: &[(String, ImageTensor)],
    cfg: &ExperimentConfig,
) -> Result<Speedup, HarnessError> {
    let none = ExperimentConfig {
        mode: Mode::None,
        ..cfg.clone()
    };
    let horizontal = ExperimentConfig {
        mode: Mode::Horizontal,
        ..cfg.clone()
    };
    let a = run_config(client, images, &none).await?;
    let b = run_config(client, images, &horizontal).await?;
    Ok(Speedup {
        baseline_ms: a.total_ms,
        distributed_ms: b.total_ms,
    })
}

/// Single image, vertical batch 1 against vertical batch `b`.
pub async fn vertical_speedup(
    client: &ServiceClient,
    image: &(String, ImageTensor),
    cfg: &ExperimentConfig,
    b: usize,
) -> Result<Speedup, HarnessError> {
    let one = ExperimentConfig {
        mode: Mode::Vertical,
        batch: 1,
        ..cfg.clone()
    };
    let many = ExperimentConfig {
        mode: Mode::Vertical,
        batch: b,
        ..cfg.clone()
    };
    let images = std::slice::from_ref(image);
    let a = run_config(client, images, &one).await?;
    let b = run_config(client, images, &many).await?;
    Ok(Speedup {
        baseline_ms: a.total_ms,
        distributed_ms: b.total_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyFailure {
    pub image_id: String,
    pub reason: String,
}

/// Re-submits the stored final image of every successful row and checks
/// that the server's top-1 differs from the clean image's.
pub async fn verify(
    client: &ServiceClient,
    records: &[ExperimentRecord],
    dataset_dir: &Path,
    finals_dir: &Path,
    slug: impl Fn(&ExperimentRecord) -> String,
) -> Result<(usize, Vec<VerifyFailure>), HarnessError> {
    let mut checked = 0;
    let mut failures = Vec::new();
    for r in records.iter().filter(|r| r.success) {
        let load = |p: &Path| -> Result<ImageTensor, HarnessError> {
            Ok(codec::decode_image(&fs::read(p)?)?.dequantize())
        };
        let clean = load(&dataset_dir.join(format!("{}.png", r.image_id)));
        let adv = load(&finals_dir.join(slug(r)).join(format!("{}.png", r.image_id)));
        let (clean, adv) = match (clean, adv) {
            (Ok(c), Ok(a)) => (c, a),
            (Err(e), _) | (_, Err(e)) => {
                failures.push(VerifyFailure {
                    image_id: r.image_id.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let y = client.query_one(&clean, &r.model, None).await?.top1;
        let z = client.query_one(&adv, &r.model, None).await?.top1;
        checked += 1;
        if y == z {
            failures.push(VerifyFailure {
                image_id: r.image_id.clone(),
                reason: format!("{}/{}: top-1 still {y}", r.method, r.mode),
            });
        }
    }
    Ok((checked, failures))
}

/// Gnuplot data: `concurrency total_ms avg_ms`.
pub fn write_profile_dat<W: Write>(mut out: W, rows: &[ProfileRow]) -> std::io::Result<()> {
    writeln!(out, "# concurrency total_ms avg_ms")?;
    for r in rows {
        writeln!(out, "{} {:.3} {:.3}", r.concurrency, r.total_ms, r.avg_ms)?;
    }
    Ok(())
}

/// Gnuplot data: `label baseline_ms distributed_ms speedup`.
pub fn write_speedup_dat<W: Write>(mut out: W, rows: &[(String, Speedup)]) -> std::io::Result<()> {
    writeln!(out, "# label baseline_ms distributed_ms speedup")?;
    for (label, s) in rows {
        writeln!(
            out,
            "{label} {:.3} {:.3} {:.4}",
            s.baseline_ms,
            s.distributed_ms,
            s.ratio()
        )?;
    }
    Ok(())
}
