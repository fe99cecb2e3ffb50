use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_text, rows_to_matrix, write_text, IoError};
use crate::linalg::Mat;
use crate::polytope::GainPolytope;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolytopeFile {
    dim: usize,
    center: Vec<f64>,
    #[serde(default)]
    constraint: Vec<Constraint>,
}

/// One row of `G k + h ≥ 0`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Constraint {
    g: Vec<f64>,
    h: f64,
}

pub fn write_polytope(path: &Path, poly: &GainPolytope) -> Result<(), IoError> {
    let file = PolytopeFile {
        dim: poly.dim(),
        center: poly.chebyshev_center.clone(),
        constraint: (0..poly.num_constraints())
            .map(|i| Constraint { g: poly.g.row(i).iter().copied().collect(), h: poly.h[i] })
            .collect(),
    };
    write_text(path, &toml::to_string(&file).expect("polytope serializes"))
}

pub fn read_polytope(path: &Path) -> Result<GainPolytope, IoError> {
    let file: PolytopeFile =
        toml::from_str(&read_text(path)?).map_err(|e| IoError::Parse(format!("{}: {e}", path.display())))?;
    if file.center.len() != file.dim {
        return Err(IoError::field("center", format!("expected {} entries", file.dim)));
    }
    let rows: Vec<Vec<f64>> = file.constraint.iter().map(|c| c.g.clone()).collect();
    let g = if rows.is_empty() { Mat::zeros(0, file.dim) } else { rows_to_matrix("constraint.g", &rows)? };
    if g.ncols() != file.dim {
        return Err(IoError::field("constraint.g", format!("rows must have {} entries", file.dim)));
    }
    Ok(GainPolytope { g, h: file.constraint.iter().map(|c| c.h).collect(), chebyshev_center: file.center })
}
