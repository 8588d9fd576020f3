//! TOML run and sweep configuration with a versioned schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{DiffusionParams, PipelineConfig, SweepGrid};
use crate::matching::MatchParams;
use crate::posegraph::SolverOptions;
use crate::scenario::{GridConfig, NoiseConfig, SceneParams};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Default output directory; the CLI falls back to `COLLABCAL_OUT_DIR`, then `results`.
    pub dir: Option<PathBuf>,
}

/// Top-level run configuration. Every section is optional and defaults field by field;
/// `schema_version` is required and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scene: SceneParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub matching: MatchParams,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub diffusion: DiffusionParams,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            scene: SceneParams::default(),
            noise: NoiseConfig::default(),
            matching: MatchParams::default(),
            solver: SolverOptions::default(),
            diffusion: DiffusionParams::default(),
            grid: GridConfig::default(),
            outputs: OutputConfig::default(),
        }
    }
}

fn check_schema(version: u32) -> Result<()> {
    if version != CONFIG_SCHEMA_VERSION {
        return Err(Error::config(
            "schema_version",
            format!("expected {CONFIG_SCHEMA_VERSION}, got {version}"),
        ));
    }
    Ok(())
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            scene: self.scene.clone(),
            noise: self.noise.clone(),
            matching: self.matching,
            solver: self.solver,
            diffusion: self.diffusion,
            grid: self.grid,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(self.schema_version)?;
        self.pipeline().validate()
    }

    pub fn from_toml_str(s: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// Sweep grid file: `schema_version` plus a `[sweep]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub schema_version: u32,
    pub sweep: SweepGrid,
}

impl SweepFile {
    pub fn from_toml_str(s: &str) -> Result<SweepGrid> {
        let f: SweepFile = toml::from_str(s).map_err(|e| Error::ConfigParse(e.to_string()))?;
        check_schema(f.schema_version)?;
        f.sweep.validate()?;
        Ok(f.sweep)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SweepGrid> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(grid: &SweepGrid) -> Result<String> {
        let f = SweepFile {
            schema_version: CONFIG_SCHEMA_VERSION,
            sweep: grid.clone(),
        };
        toml::to_string(&f).map_err(|e| Error::ConfigParse(e.to_string()))
    }
}
