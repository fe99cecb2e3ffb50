use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{read_atlas, read_polytope, read_text, read_trajectory, write_text, IoError, PlantSpec};
use crate::flow::Termination;
use crate::passivity::Strictness;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub precheck: f64,
    pub find_gain: f64,
    pub explore: f64,
    pub approx: f64,
    pub optimize: f64,
    pub plot: f64,
}

/// Artifact file names relative to the ledger's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactPaths {
    pub plant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atlas: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polytope: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<String>,
}

/// Summary of one pipeline run.
///
/// `result_hash` covers everything except timings, artifact paths and the
/// hash itself, so it only changes when the computed results change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub config_hash: String,
    pub result_hash: String,
    pub seed: u64,
    pub mode: Strictness,
    /// `true` when the unconstrained optimum already passivates.
    pub short_circuit: bool,
    pub k_star: Vec<Vec<f64>>,
    pub f_k_star: f64,
    pub terminal_gain: Vec<Vec<f64>>,
    pub f_k_hat: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_gain: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub edge: f64,
    pub verified_cubes: usize,
    pub rejected_cubes: usize,
    /// Normalized largest KYP eigenvalue of the seed gain's certificate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_lambda_max: Option<f64>,
    /// Normalized largest KYP eigenvalue certified for the terminal gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_lambda_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_lambda_min_p: Option<f64>,
    /// Smallest polytope constraint value at the terminal gain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_min_g: Option<f64>,
    pub timings: StageTimings,
    pub artifacts: ArtifactPaths,
}

impl RunLedger {
    pub fn compute_result_hash(&self) -> String {
        let mut core = self.clone();
        core.result_hash.clear();
        core.timings = StageTimings::default();
        core.artifacts = ArtifactPaths::default();
        sha256_hex(toml::to_string(&core).expect("ledger serializes").as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("ledger serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_text(path, &self.to_toml())
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        toml::from_str(&read_text(path)?).map_err(|e| IoError::Parse(format!("{}: {e}", path.display())))
    }

    pub fn resolve(&self, ledger_dir: &Path, name: &str) -> PathBuf {
        ledger_dir.join(name)
    }

    /// Reads every referenced artifact back.
    pub fn check_artifacts(&self, ledger_dir: &Path) -> Result<(), IoError> {
        PlantSpec::load(&self.resolve(ledger_dir, &self.artifacts.plant))?.to_plant()?;
        if let Some(a) = &self.artifacts.atlas {
            read_atlas(&self.resolve(ledger_dir, a))?;
        }
        if let Some(p) = &self.artifacts.polytope {
            read_polytope(&self.resolve(ledger_dir, p))?;
        }
        if let Some(t) = &self.artifacts.trajectory {
            read_trajectory(&self.resolve(ledger_dir, t))?;
        }
        if let Some(s) = &self.artifacts.plot {
            read_text(&self.resolve(ledger_dir, s))?;
        }
        Ok(())
    }
}
