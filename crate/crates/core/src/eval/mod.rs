//! Metrics, sequence-only baselines, experiment protocols and reports.

mod baselines;
mod experiment;
pub mod fixtures;
mod metrics;
mod report;

use std::path::Path;

pub use baselines::{Attended, DLinear, DLinearConfig, TransformerConfig, VanillaTransformer, attention};
pub use experiment::{
    ArmResult, ExperimentConfig, ExperimentData, ExperimentKind, ExperimentReport, Improvement, Provenance,
    provenance, run_experiment,
};
pub use metrics::{Metrics, argmax_labels, f1_per_class, relative_improvement};
pub use report::{read_report, render_csv, render_improvements_csv, render_svg, report_render};

use crate::model::{CrashFormer, Network};
use crate::nn::{load_archive, save_archive};
use crate::{Error, Result};

/// Writes `preds.f32` (n × 2 probabilities) and `labels.u8`.
pub fn write_predictions(dir: &Path, probs: &[[f64; 2]], labels: &[u8]) -> Result<()> {
    let bytes: Vec<u8> = probs
        .iter()
        .flat_map(|p| p.iter().flat_map(|&v| (v as f32).to_le_bytes()))
        .collect();
    let p = dir.join("preds.f32");
    std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("labels.u8");
    std::fs::write(&p, labels).map_err(|e| Error::io(&p, e))
}

pub fn read_predictions(dir: &Path) -> Result<(Vec<[f64; 2]>, Vec<u8>)> {
    let p = dir.join("preds.f32");
    let raw = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    let p = dir.join("labels.u8");
    let labels = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    if raw.len() != labels.len() * 8 {
        return Err(Error::Container(format!(
            "preds.f32 has {} bytes for {} labels",
            raw.len(),
            labels.len()
        )));
    }
    let probs = raw
        .chunks_exact(8)
        .map(|c| {
            let a = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
            let b = f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64;
            [a, b]
        })
        .collect();
    Ok((probs, labels))
}

pub fn save_network<N: Network + ?Sized>(net: &N, path: &Path) -> Result<()> {
    save_archive(path, net.describe(), net.params())
}

/// Loads any checkpoint written by [`save_network`].
pub fn load_network(path: &Path) -> Result<Box<dyn Network>> {
    let (meta, store) = load_archive(path)?;
    let kind = meta.get("kind").and_then(|k| k.as_str()).unwrap_or_default().to_string();
    let config = meta.get("config").cloned().unwrap_or_default();
    match kind.as_str() {
        "crashformer" => Ok(Box::new(CrashFormer::from_parts(meta, store)?)),
        "dlinear" => {
            let mut n = DLinear::new(serde_json::from_value(config)?, 0)?;
            n.params.load_values(&store)?;
            Ok(Box::new(n))
        }
        "transformer" => {
            let mut n = VanillaTransformer::new(serde_json::from_value(config)?, 0)?;
            n.params.load_values(&store)?;
            Ok(Box::new(n))
        }
        other => Err(Error::Checkpoint(format!("unknown model kind {other:?}"))),
    }
}
