use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PronkGains, ScriptedPronk, SimConfig};
use crate::terrain::TerrainParams;

use super::{run_episode, EpisodeConfig, EpisodeMetrics, HarnessError, SuiteSettings, ValidationTerrain};

/// Mixes a master seed with integer keys (splitmix64 finalizer).
pub(crate) fn derive_seed(master: u64, keys: &[u64]) -> u64 {
    let mut z = master;
    for &k in keys {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(k.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub terrain: ValidationTerrain,
    pub speed: f64,
    pub repeat: u32,
    pub terrain_seed: u64,
    pub disturbance_seed: u64,
    pub result: Result<EpisodeMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub terrain: ValidationTerrain,
    pub speed: f64,
    pub episodes: usize,
    pub failed: usize,
    pub survival: Option<Stat>,
    pub landing_success: Option<Stat>,
    pub peak_height_error: Option<Stat>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub outcomes: Vec<EpisodeOutcome>,
    pub cells: Vec<CellSummary>,
}

impl SuiteResult {
    pub fn cell(&self, terrain: ValidationTerrain, speed: f64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.terrain == terrain && c.speed == speed)
    }
}

/// Runs terrains x speeds x repeats. Terrain and disturbance draws depend on
/// the terrain and repeat only, so every speed faces the same conditions.
pub fn run_suite(
    settings: &SuiteSettings,
    sim: &SimConfig,
    gains: &PronkGains,
    params: &TerrainParams,
) -> Result<SuiteResult, HarnessError> {
    if settings.terrains.is_empty() || settings.speeds.is_empty() || settings.repeats == 0 {
        return Err(HarnessError::Config("suite needs terrains, speeds and repeats".into()));
    }
    let base = settings.episode_template();
    base.validate()?;
    let controllers: Vec<ScriptedPronk> = settings
        .speeds
        .par_iter()
        .map(|&v| {
            let cfg = EpisodeConfig { v_x_cmd: v, ..base.clone() };
            ScriptedPronk::calibrate(sim, *gains, &cfg.target(sim))
        })
        .collect();

    let mut jobs = Vec::new();
    for &terrain in &settings.terrains {
        for (si, &speed) in settings.speeds.iter().enumerate() {
            for repeat in 0..settings.repeats {
                jobs.push((terrain, si, speed, repeat));
            }
        }
    }
    let outcomes: Vec<EpisodeOutcome> = jobs
        .par_iter()
        .map(|&(terrain, si, speed, repeat)| {
            let terrain_seed = derive_seed(settings.master_seed, &[1, terrain as u64, repeat as u64]);
            let disturbance_seed = derive_seed(settings.master_seed, &[2, terrain as u64, repeat as u64]);
            let cfg = EpisodeConfig {
                terrain: terrain.spec(terrain_seed),
                v_x_cmd: speed,
                seed: disturbance_seed,
                ..base.clone()
            };
            let result = cfg
                .field(params)
                .and_then(|field| run_episode(&cfg, &field, sim, &controllers[si], None))
                .map(|ep| ep.metrics)
                .map_err(|e| e.to_string());
            EpisodeOutcome {
                terrain,
                speed,
                repeat,
                terrain_seed,
                disturbance_seed,
                result,
            }
        })
        .collect();

    let mut cells = Vec::new();
    for &terrain in &settings.terrains {
        for &speed in &settings.speeds {
            let runs: Vec<&EpisodeOutcome> = outcomes.iter().filter(|o| o.terrain == terrain && o.speed == speed).collect();
            let ok: Vec<&EpisodeMetrics> = runs.iter().filter_map(|o| o.result.as_ref().ok()).collect();
            let errors: Vec<String> = runs.iter().filter_map(|o| o.result.as_ref().err().cloned()).collect();
            let survival: Vec<f64> = ok.iter().map(|m| m.survival_time).collect();
            let success: Vec<f64> = ok.iter().filter(|m| m.landings_total > 0).map(|m| m.landing_success_rate).collect();
            let peak: Vec<f64> = ok.iter().filter_map(|m| m.peak_height_error).collect();
            cells.push(CellSummary {
                terrain,
                speed,
                episodes: runs.len(),
                failed: errors.len(),
                survival: Stat::of(&survival),
                landing_success: Stat::of(&success),
                peak_height_error: Stat::of(&peak),
                errors,
            });
        }
    }
    Ok(SuiteResult { outcomes, cells })
}

fn stat_fields(s: Option<Stat>) -> [String; 2] {
    match s {
        Some(s) => [format!("{:.6}", s.mean), format!("{:.6}", s.std)],
        None => [String::new(), String::new()],
    }
}

/// One row per cell, in suite order.
pub fn write_suite_csv<W: Write>(result: &SuiteResult, w: W) -> Result<(), HarnessError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "terrain",
        "speed",
        "episodes",
        "failed",
        "survival_mean",
        "survival_std",
        "landing_success_mean",
        "landing_success_std",
        "peak_error_mean",
        "peak_error_std",
    ])?;
    for c in &result.cells {
        let mut row = vec![c.terrain.name().to_string(), format!("{}", c.speed), c.episodes.to_string(), c.failed.to_string()];
        row.extend(stat_fields(c.survival));
        row.extend(stat_fields(c.landing_success));
        row.extend(stat_fields(c.peak_height_error));
        wtr.write_record(row)?;
    }
    wtr.flush()?;
    Ok(())
}
