//! Append-only JSON-lines metrics stream.
//!
//! One record per line keeps the stream crash tolerant. Wall-clock timings
//! are tracked on the in-memory record but stay out of the serialized stream
//! so that rerunning an experiment reproduces the file byte for byte; timing
//! summaries live in the experiment summary instead.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Base,
    Adapt,
}

/// One scored model state: the base model after training, or one adaptation
/// iteration. `target_acc` is measured on the held-out labeled split and is
/// absent when that split is unavailable; nothing downstream of training ever
/// reads it back.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub trial: usize,
    pub phase: Phase,
    pub t: usize,
    pub d_rand: f64,
    pub train_acc: f64,
    pub target_acc: Option<f64>,
    pub n_selected: usize,
    pub mean_kappa: f64,
    pub accepted: bool,
    /// Measured wall time; deliberately not serialized (see module docs).
    #[serde(skip)]
    pub wall_ms: u64,
}

/// Serializes records as JSON lines (with trailing newline per record).
pub fn metrics_to_string(records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes a whole stream, replacing the file.
pub fn write_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(metrics_to_string(records).as_bytes())?;
    Ok(())
}

/// Appends records to an existing stream (creating it if missing).
pub fn append_metrics(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    f.write_all(metrics_to_string(records).as_bytes())?;
    Ok(())
}

/// Reads a JSON-lines stream, reporting the 1-based line on parse failure.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let rec: MetricsRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}

/// SHA-256 of the serialized stream; equals a hash of the file bytes.
pub fn metrics_digest(records: &[MetricsRecord]) -> String {
    let digest = Sha256::digest(metrics_to_string(records).as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}
