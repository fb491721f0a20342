use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use carmm::cluster::{DEFAULT_TP, DEFAULT_TR};
use carmm::compare::TailSmoothing;
use carmm::model::{AlphaConstraint, Hyperpriors};
use carmm::simulate::{StudyDesign, TruthSpec};
use carmm::{FitConfig, PriorKind};
use serde::{Deserialize, Serialize};

/// Contents of a `--config` JSON file; every field is optional and flags win.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<PriorKind>,
    pub covariates: Option<bool>,
    pub alpha_constraint: Option<AlphaConstraint>,
    pub hyperpriors: Option<Hyperpriors>,
    pub fit: Option<FitConfig>,
    pub loo_smoothing: Option<TailSmoothing>,
    pub rank_normalized_rhat: Option<bool>,
    pub design: Option<StudyDesign>,
    pub truth: Option<TruthSpec>,
    pub tr: Option<f64>,
    pub tp: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).map_err(|e| {
                    anyhow::Error::new(carmm::Error::Parse {
                        path: p.display().to_string(),
                        row: e.line(),
                        message: e.to_string(),
                    })
                })
            }
        }
    }

    pub fn thresholds(&self, tr: Option<f64>, tp: Option<f64>) -> (f64, f64) {
        (
            tr.or(self.tr).unwrap_or(DEFAULT_TR),
            tp.or(self.tp).unwrap_or(DEFAULT_TP),
        )
    }
}

/// Input file locations, either given one by one or found in a directory.
#[derive(Debug, Clone, Serialize)]
pub struct InputPaths {
    pub graph: PathBuf,
    pub membership: PathBuf,
    pub areal_data: PathBuf,
    pub mm_data: PathBuf,
}

pub const GRAPH_FILE: &str = "graph.csv";
pub const MEMBERSHIP_FILE: &str = "membership.csv";
pub const AREAL_FILE: &str = "areal_data.csv";
pub const MM_FILE: &str = "mm_data.csv";

pub fn resolve(
    data_dir: Option<&Path>,
    explicit: Option<&Path>,
    file: &str,
    flag: &str,
) -> Result<PathBuf, crate::UsageError> {
    match (explicit, data_dir) {
        (Some(p), _) => Ok(p.to_path_buf()),
        (None, Some(d)) => Ok(d.join(file)),
        (None, None) => Err(crate::UsageError(format!("{flag} or --data-dir is required"))),
    }
}
