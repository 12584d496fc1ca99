//! Experiment configuration: a JSON file merged with command-line overrides.

use std::path::{Path, PathBuf};

use qpwalk::FieldSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Every parameter any subcommand reads. Unset fields take command defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory. Not part of the config hash.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,

    // classify
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<u64>>,

    // stationary
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_max: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closure: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relation_k: Option<Vec<u64>>,

    // simulate
    #[serde(skip_serializing_if = "Option::is_none")]
    pub engine: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_visits: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory_stride: Option<usize>,

    // bdtest
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bd22: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_n: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<(u64, u64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_terms: Option<u64>,

    // validate-field
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n0: Option<u64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(&mut self, over: &ExperimentConfig) {
        overlay!(self, over; field, seed, out, mode, schedule, rank_max, tol, max_iters, closure, relation_k,
            engine, steps, horizon, replicas, min_visits, trajectory_stride, ratio, lambda, mu, bd22, alpha_n,
            k_max, window, n_terms, n0);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(t) = self.tol {
            if !(t > 0.0) {
                return Err(CliError::config(format!("tolerance must be positive, got {t}")));
            }
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0 && h.is_finite()) {
                return Err(CliError::config(format!("horizon must be positive, got {h}")));
            }
        }
        if let Some(dir) = &self.out {
            if dir.exists() && !dir.is_dir() {
                return Err(CliError::config(format!("{} is not a directory", dir.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, with the command name mixed in.
    pub fn hash(&self, command: &str) -> String {
        let canon = serde_json::to_value(self).expect("config serializes");
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0u8]);
        h.update(canon.to_string().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
