//! Declarative experiment configuration consumed by the sweep and simulate
//! commands.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::SliceSpec;
use crate::synthetic::{ShiftSpec, SyntheticSpec};
use crate::threshold::CalibrationMethod;

/// Where an experiment's scores come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    /// Fixed calibration/test score files.
    Files { cal: PathBuf, test: PathBuf },
    /// One pooled score file, re-split per seed.
    Pool { pool: PathBuf },
    /// Synthetic generator.
    Synthetic { spec: SyntheticSpec },
}

/// Stage-scaling settings for the simulate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingSettings {
    pub k_range: Vec<usize>,
    pub trials: usize,
}

/// A full experiment description: data source, the sweep axes, optional
/// slicing, optional shift injection and optional stage scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub methods: Vec<CalibrationMethod>,
    pub alphas: Vec<f64>,
    pub n_cals: Vec<usize>,
    pub n_test: usize,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub slices: Vec<SliceSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shift: Option<ShiftSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scaling: Option<ScalingSettings>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config {
                reason: "seed list must be non-empty".into(),
            });
        }
        if self.methods.is_empty() || self.alphas.is_empty() || self.n_cals.is_empty() {
            return Err(Error::Config {
                reason: "methods, alphas and n_cals must be non-empty".into(),
            });
        }
        for &alpha in &self.alphas {
            if !(alpha.is_finite() && alpha > 0.0 && alpha < 1.0) {
                return Err(Error::InvalidAlpha { value: alpha });
            }
        }
        let check_file = |path: &Path| -> Result<()> {
            if path.is_file() {
                Ok(())
            } else {
                Err(Error::Config {
                    reason: format!("referenced file does not exist: {}", path.display()),
                })
            }
        };
        match &self.data {
            DataSpec::Files { cal, test } => {
                check_file(cal)?;
                check_file(test)?;
            }
            DataSpec::Pool { pool } => check_file(pool)?,
            DataSpec::Synthetic { spec } => spec.validate()?,
        }
        if let Some(scaling) = &self.scaling {
            if scaling.k_range.is_empty() || scaling.trials == 0 {
                return Err(Error::Config {
                    reason: "scaling requires a non-empty k_range and trials >= 1".into(),
                });
            }
        }
        Ok(())
    }
}

/// Load and validate a JSON experiment config.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let config: ExperimentConfig =
        serde_json::from_str(&content).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
    config.validate()?;
    Ok(config)
}
