//! The single TOML file shared by every tool. All sections are optional and
//! fall back to their defaults:
//!
//! ```toml
//! output_dir = "out"
//!
//! [sim]        # SimConfig
//! [pronk]      # PronkGains
//! [terrain]    # TerrainParams
//! [episode]    # EpisodeConfig used by `run`
//! [suite]      # SuiteSettings used by `suite`
//! [dataset]    # DatasetSettings used by `dataset`
//! [twin]       # TwinConfig
//! [offload]    # OffloadModel
//! [estimator]  # EstimatorConfig
//! [train]      # TrainConfig
//! ```
//!
//! `LUNARHOP_OUT_DIR`, when set, replaces `output_dir`; nothing else is read
//! from the environment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{PronkGains, SimConfig};
use crate::estimator::{EstimatorConfig, TrainConfig};
use crate::terrain::{TerrainParams, PATCH_SIZE};
use crate::twin::{DisturbanceModel, OffloadModel, TwinConfig};

use super::dataset::DatasetSettings;
use super::{EpisodeConfig, HarnessError, ValidationTerrain};

pub const OUT_DIR_ENV: &str = "LUNARHOP_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSettings {
    pub terrains: Vec<ValidationTerrain>,
    pub speeds: Vec<f64>,
    pub repeats: u32,
    pub master_seed: u64,
    pub h_cmd: Option<f64>,
    pub max_duration: f64,
    pub disturbances: DisturbanceModel,
    pub landing_tolerance: f64,
    pub patches: usize,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            terrains: ValidationTerrain::ALL.to_vec(),
            speeds: vec![0.3, 0.5, 0.7],
            repeats: 10,
            master_seed: 2024,
            h_cmd: None,
            max_duration: 20.0,
            disturbances: DisturbanceModel::default(),
            landing_tolerance: 0.2,
            patches: 3,
        }
    }
}

impl SuiteSettings {
    pub(crate) fn episode_template(&self) -> EpisodeConfig {
        EpisodeConfig {
            patches: self.patches,
            h_cmd: self.h_cmd,
            max_duration: self.max_duration,
            disturbances: self.disturbances.clone(),
            landing_tolerance: self.landing_tolerance,
            start: [2.0, PATCH_SIZE / 2.0],
            ..EpisodeConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub output_dir: Option<PathBuf>,
    pub sim: SimConfig,
    pub pronk: PronkGains,
    pub terrain: TerrainParams,
    pub episode: EpisodeConfig,
    pub suite: SuiteSettings,
    pub dataset: DatasetSettings,
    pub twin: TwinConfig,
    pub offload: OffloadModel,
    pub estimator: EstimatorConfig,
    pub train: TrainConfig,
}

impl HarnessConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.sim.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.episode.validate()?;
        cfg.suite.disturbances.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Output directory after the environment override; `out` by default.
    pub fn output_dir(&self) -> PathBuf {
        Self::resolve_output_dir(self.output_dir.as_deref(), std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
    }

    pub fn resolve_output_dir(configured: Option<&Path>, env: Option<PathBuf>) -> PathBuf {
        env.filter(|p| !p.as_os_str().is_empty())
            .or_else(|| configured.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
