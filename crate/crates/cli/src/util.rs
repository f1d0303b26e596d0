//! Small shared helpers for run-directory provenance and statistics.

use crate::CliError;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Output directory precedence: CLI flag > IWRL_OUTPUT_DIR > config value.
pub fn resolve_output_dir(flag: Option<PathBuf>, config_dir: &Path) -> PathBuf {
    flag.or_else(|| std::env::var_os("IWRL_OUTPUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| config_dir.to_path_buf())
}

pub fn create_run_dir(base: &Path, name: &str) -> Result<PathBuf, CliError> {
    let dir = base.join(name);
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Failed(format!("cannot hash {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Failed(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Failed(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Median of an unsorted sample; even lengths average the two middles.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Mean and normal-approximation 95% confidence half-width; degenerate for
/// fewer than two samples.
pub fn mean_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    assert!(n > 0);
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, 1.96 * (var / n as f64).sqrt())
}
