//! Append-only JSONL metrics.
//!
//! One record per learner step, episode, adaptation update, or verification
//! check. In deterministic mode the wall-clock field is pinned to zero so
//! two runs of the same seed produce byte-identical files.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("metrics i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics encode: {0}")]
    Encode(#[from] serde_json::Error),
    #[error("non-finite scalar {key} = {value}")]
    NonFinite { key: String, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub timestamp: u64,
    pub phase: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub episode: Option<u64>,
    /// Ordered map keeps serialization stable across runs.
    pub scalars: BTreeMap<String, f64>,
}

impl MetricsRecord {
    pub fn new(phase: &str) -> Self {
        Self {
            timestamp: 0,
            phase: phase.to_string(),
            step: None,
            episode: None,
            scalars: BTreeMap::new(),
        }
    }

    pub fn with_step(mut self, step: u64) -> Self {
        self.step = Some(step);
        self
    }

    pub fn with_episode(mut self, episode: u64) -> Self {
        self.episode = Some(episode);
        self
    }

    pub fn scalar(mut self, key: &str, value: f64) -> Self {
        self.scalars.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug)]
pub struct MetricsWriter {
    out: BufWriter<File>,
    deterministic: bool,
}

impl MetricsWriter {
    pub fn create(path: &Path, deterministic: bool) -> Result<Self, MetricsError> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            deterministic,
        })
    }

    pub fn append(&mut self, mut record: MetricsRecord) -> Result<(), MetricsError> {
        for (key, value) in &record.scalars {
            if !value.is_finite() {
                return Err(MetricsError::NonFinite {
                    key: key.clone(),
                    value: *value,
                });
            }
        }
        record.timestamp = if self.deterministic {
            0
        } else {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        };
        serde_json::to_writer(&mut self.out, &record)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), MetricsError> {
        self.out.flush()?;
        Ok(())
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

/// Read a JSONL metrics file back (reports and tests).
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, MetricsError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
