//! On-disk formats: plant and polytope files and the run ledger are TOML,
//! atlases and trajectories are CSV. Floats are written in shortest
//! round-trip form so every value reads back bit for bit.

mod atlas;
mod ledger;
mod plant_file;
mod polytope_file;
mod trajectory;

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::linalg::Mat;
use crate::plant::PlantError;

pub use atlas::{read_atlas, write_atlas, Atlas};
pub use ledger::{sha256_hex, ArtifactPaths, RunLedger, StageTimings};
pub use plant_file::{parse_gain, PlantSpec};
pub use polytope_file::{read_polytope, write_polytope};
pub use trajectory::{read_trajectory, write_trajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Plant(#[from] PlantError),
}

impl IoError {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        IoError::Field { field: field.into(), message: message.into() }
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> IoError {
    IoError::Parse(format!("{}: {e}", path.display()))
}

/// Row-major nested rows of a matrix.
pub fn matrix_rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Builds a matrix from nested rows, reporting ragged input against `field`.
pub fn rows_to_matrix(field: &str, rows: &[Vec<f64>]) -> Result<Mat, IoError> {
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(IoError::field(field, format!("row {} has {} entries, expected {ncols}", i + 1, r.len())));
        }
    }
    Ok(Mat::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

pub(crate) fn parse_f64(field: &str, s: &str) -> Result<f64, IoError> {
    s.trim().parse().map_err(|_| IoError::field(field, format!("`{s}` is not a number")))
}
