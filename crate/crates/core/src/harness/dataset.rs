//! Batches of scripted-pronk episodes written as trajectory logs, plus a JSON
//! manifest listing each file with its step count, seeds and SHA-256.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{PronkGains, ScriptedPronk, SimConfig};
use crate::terrain::{TerrainParams, PATCH_SIZE};
use crate::twin::DisturbanceModel;

use super::suite::derive_seed;
use super::{read_log, run_episode, write_log, EpisodeConfig, HarnessError, LogRecord, ValidationTerrain};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub episodes: usize,
    pub terrains: Vec<ValidationTerrain>,
    pub speeds: Vec<f64>,
    pub h_cmd: Option<f64>,
    pub max_duration: f64,
    pub master_seed: u64,
    pub disturbances: DisturbanceModel,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            episodes: 100,
            terrains: ValidationTerrain::ALL.to_vec(),
            speeds: vec![0.0, 0.3, 0.5, 0.7],
            h_cmd: None,
            max_duration: 20.0,
            master_seed: 7,
            disturbances: DisturbanceModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub steps: usize,
    pub terrain: ValidationTerrain,
    pub terrain_seed: u64,
    pub disturbance_seed: u64,
    pub speed: f64,
    pub gravity: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub master_seed: u64,
    pub total_steps: usize,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let m: Self = serde_json::from_str(text).map_err(|e| HarnessError::Manifest(e.to_string()))?;
        let sum: usize = m.entries.iter().map(|e| e.steps).sum();
        if sum != m.total_steps {
            return Err(HarnessError::Manifest(format!("total_steps {} but entries sum to {sum}", m.total_steps)));
        }
        for e in &m.entries {
            if e.file.contains(['/', '\\']) || e.file.starts_with('.') {
                return Err(HarnessError::Manifest(format!("entry file {:?} must be a plain name", e.file)));
            }
        }
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        Self::parse(&fs::read_to_string(dir.join(MANIFEST_FILE))?)
    }

    /// Reads every listed log.
    pub fn read_episodes(&self, dir: &Path) -> Result<Vec<Vec<LogRecord>>, HarnessError> {
        self.entries.iter().map(|e| read_log(fs::File::open(dir.join(&e.file))?)).collect()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rolls out `settings.episodes` episodes into `out_dir`, cycling terrains and
/// speeds.
pub fn generate_dataset(
    settings: &DatasetSettings,
    sim: &SimConfig,
    gains: &PronkGains,
    params: &TerrainParams,
    out_dir: &Path,
) -> Result<DatasetManifest, HarnessError> {
    if settings.terrains.is_empty() || settings.speeds.is_empty() {
        return Err(HarnessError::Config("dataset needs terrains and speeds".into()));
    }
    fs::create_dir_all(out_dir)?;
    let base = EpisodeConfig {
        h_cmd: settings.h_cmd,
        max_duration: settings.max_duration,
        disturbances: settings.disturbances.clone(),
        start: [2.0, PATCH_SIZE / 2.0],
        ..EpisodeConfig::default()
    };
    let controllers: Vec<ScriptedPronk> = settings
        .speeds
        .par_iter()
        .map(|&v| ScriptedPronk::calibrate(sim, *gains, &EpisodeConfig { v_x_cmd: v, ..base.clone() }.target(sim)))
        .collect();

    let entries: Result<Vec<ManifestEntry>, HarnessError> = (0..settings.episodes)
        .into_par_iter()
        .map(|i| {
            let terrain = settings.terrains[i % settings.terrains.len()];
            let si = (i / settings.terrains.len()) % settings.speeds.len();
            let terrain_seed = derive_seed(settings.master_seed, &[3, i as u64]);
            let disturbance_seed = derive_seed(settings.master_seed, &[4, i as u64]);
            let cfg = EpisodeConfig {
                terrain: terrain.spec(terrain_seed),
                v_x_cmd: settings.speeds[si],
                seed: disturbance_seed,
                ..base.clone()
            };
            let field = cfg.field(params)?;
            let ep = run_episode(&cfg, &field, sim, &controllers[si], None)?;
            let mut bytes = Vec::new();
            write_log(&ep.log, &mut bytes)?;
            let file = format!("episode_{i:05}.csv");
            fs::write(out_dir.join(&file), &bytes)?;
            Ok(ManifestEntry {
                file,
                steps: ep.log.len(),
                terrain,
                terrain_seed,
                disturbance_seed,
                speed: cfg.v_x_cmd,
                gravity: ep.metrics.gravity,
                sha256: sha256_hex(&bytes),
            })
        })
        .collect();
    let entries = entries?;
    let manifest = DatasetManifest {
        master_seed: settings.master_seed,
        total_steps: entries.iter().map(|e| e.steps).sum(),
        entries,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Manifest(e.to_string()))?;
    fs::write(out_dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Files whose contents no longer match their checksum.
pub fn verify_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<Vec<String>, HarnessError> {
    let mut bad = Vec::new();
    for e in &manifest.entries {
        let bytes = fs::read(dir.join(&e.file))?;
        if sha256_hex(&bytes) != e.sha256 {
            bad.push(e.file.clone());
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    /// Indices into the manifest entries.
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles whole episodes with `seed` and holds out `test_fraction` of them.
pub fn split_dataset(manifest: &DatasetManifest, seed: u64, test_fraction: f64) -> DatasetSplit {
    let n = manifest.entries.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = ((n as f64 * test_fraction.clamp(0.0, 1.0)).round() as usize).min(n);
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    DatasetSplit { train, test }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(n: usize) -> DatasetManifest {
        DatasetManifest {
            master_seed: 0,
            total_steps: n,
            entries: (0..n)
                .map(|i| ManifestEntry {
                    file: format!("episode_{i:05}.csv"),
                    steps: 1,
                    terrain: ValidationTerrain::Mare,
                    terrain_seed: 0,
                    disturbance_seed: 0,
                    speed: 0.5,
                    gravity: 1.62,
                    sha256: String::new(),
                })
                .collect(),
        }
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let m = manifest(100);
        let a = split_dataset(&m, 5, 0.1);
        assert_eq!(a, split_dataset(&m, 5, 0.1));
        assert_ne!(a, split_dataset(&m, 6, 0.1));
        assert_eq!((a.train.len(), a.test.len()), (90, 10));
        let mut all: Vec<usize> = a.train.iter().chain(&a.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn manifest_rejects_inconsistent_totals_and_paths() {
        let mut m = manifest(3);
        let ok = serde_json::to_string(&m).unwrap();
        assert!(DatasetManifest::parse(&ok).is_ok());
        m.total_steps = 4;
        assert!(DatasetManifest::parse(&serde_json::to_string(&m).unwrap()).is_err());
        let mut m = manifest(1);
        m.entries[0].file = "../x.csv".into();
        assert!(DatasetManifest::parse(&serde_json::to_string(&m).unwrap()).is_err());
    }
}
