use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{matrix_rows, read_text, rows_to_matrix, write_text, IoError};
use crate::linalg::Mat;
use crate::passivity::Strictness;
use crate::plant::LtiPlant;

/// Plant file contents:
///
/// ```toml
/// mode = "nonstrict"
/// A = [[-2.0, -1.0], [-1.0, -3.0]]
/// B_u = [[1.0], [2.0]]
/// B_d = [[2.0], [1.0]]
/// C = [[0.0, 1.0]]
/// D = [[0.0]]
/// Q = [[1.0, 0.0], [0.0, 1.0]]
/// R = [[2.0]]
///
/// [labels]
/// name = "coupled two-state"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    #[serde(default = "default_mode")]
    pub mode: Strictness,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B_u")]
    pub b_u: Vec<Vec<f64>>,
    #[serde(rename = "B_d")]
    pub b_d: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

fn default_mode() -> Strictness {
    Strictness::Nonstrict
}

impl PlantSpec {
    pub fn from_plant(plant: &LtiPlant, mode: Strictness) -> Self {
        Self {
            mode,
            a: matrix_rows(&plant.a),
            b_u: matrix_rows(&plant.b_u),
            b_d: matrix_rows(&plant.b_d),
            c: matrix_rows(&plant.c),
            d: matrix_rows(&plant.d),
            q: matrix_rows(&plant.q),
            r: matrix_rows(&plant.r),
            labels: BTreeMap::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| IoError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plant spec serializes")
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        Self::parse(&read_text(path)?).map_err(|e| match e {
            IoError::Parse(msg) => IoError::Parse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.to_toml())
    }

    /// Checks row lengths, dimensions and weights and builds the plant.
    pub fn to_plant(&self) -> Result<LtiPlant, IoError> {
        let m = |name: &str, rows: &[Vec<f64>]| -> Result<Mat, IoError> {
            if rows.is_empty() {
                return Err(IoError::field(name, "matrix has no rows"));
            }
            let mat = rows_to_matrix(name, rows)?;
            if mat.ncols() == 0 {
                return Err(IoError::field(name, "matrix has no columns"));
            }
            Ok(mat)
        };
        Ok(LtiPlant::new(
            m("A", &self.a)?,
            m("B_u", &self.b_u)?,
            m("B_d", &self.b_d)?,
            m("C", &self.c)?,
            m("D", &self.d)?,
            m("Q", &self.q)?,
            m("R", &self.r)?,
        )?)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum GainText {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
struct GainWrapper {
    k: GainText,
}

/// Parses an inline gain such as `[-0.5, 0]` (single input) or
/// `[[2, 2], [0.5, 2]]`.
pub fn parse_gain(text: &str, m: usize, n: usize) -> Result<Mat, IoError> {
    let w: GainWrapper =
        toml::from_str(&format!("k = {}", text.trim())).map_err(|e| IoError::field("gain", e.to_string()))?;
    let k = match w.k {
        GainText::Flat(v) if m == 1 => Mat::from_row_slice(1, v.len(), &v),
        GainText::Flat(_) => return Err(IoError::field("gain", format!("expected {m} nested rows"))),
        GainText::Nested(rows) => rows_to_matrix("gain", &rows)?,
    };
    if k.shape() != (m, n) {
        return Err(IoError::field("gain", format!("expected {m}x{n}, got {}x{}", k.nrows(), k.ncols())));
    }
    Ok(k)
}
