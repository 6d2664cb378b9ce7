//! Error plumbing and small file/format helpers shared by the subcommands
//! and the pipeline runner.

use std::fmt::Display;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spectromap::spectral::{DUFit, SupportShape};

/// Configuration schema version, printed by `--version`, stamped into every
/// manifest, and required to match in pipeline configs.
pub const SCHEMA_VERSION: u32 = 1;

/// Subcommand failure categories mapped onto exit codes: usage errors exit 2,
/// data errors exit 1. Both print a machine-readable JSON object on stderr.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

/// Shorthand for mapping module errors into data errors.
pub fn data<E: Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

/// Data error with a location prefix.
pub fn data_at<E: Display>(context: &str, e: E) -> CliError {
    CliError::Data(format!("{context}: {e}"))
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| data_at(&path.display().to_string(), e))
}

pub fn write_text(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| data_at(&dir.display().to_string(), e))?;
        }
    }
    std::fs::write(path, content).map_err(|e| data_at(&path.display().to_string(), e))
}

pub fn sha256_hex(content: &str) -> String {
    hex::encode(Sha256::digest(content.as_bytes()))
}

/// On-disk result of an ensemble fit: the fit itself plus the asymptotic
/// radii of the chosen cell, the support classification, and the extreme
/// moduli of the fitted spectrum.
#[derive(Debug, Serialize, Deserialize)]
pub struct DuFitFile {
    pub fit: DUFit,
    pub r_minus: Option<f64>,
    pub r_plus: f64,
    pub support: SupportShape,
    pub empirical_min: f64,
    pub empirical_max: f64,
    pub metric: String,
}

/// Inclusive evenly spaced float grid; the step must divide the span to
/// rounding accuracy or the last point is dropped.
pub fn float_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>, CliError> {
    if !(step > 0.0 && step.is_finite() && min.is_finite() && max >= min) {
        return Err(CliError::Usage(format!(
            "bad grid: min {min}, max {max}, step {step}"
        )));
    }
    let n = ((max - min) / step).round() as usize;
    let grid: Vec<f64> = (0..=n)
        .map(|k| min + k as f64 * step)
        .filter(|v| *v <= max + 1e-12)
        .collect();
    if grid.is_empty() {
        return Err(CliError::Usage("empty grid".into()));
    }
    Ok(grid)
}

/// Inclusive integer grid.
pub fn int_grid(min: usize, max: usize, step: usize) -> Result<Vec<usize>, CliError> {
    if step == 0 || min == 0 || max < min {
        return Err(CliError::Usage(format!(
            "bad grid: min {min}, max {max}, step {step}"
        )));
    }
    Ok((min..=max).step_by(step).collect())
}
