//! Experiment harness: scripted-pronk episodes on the validation terrains,
//! their metrics, suites over terrain and speed, and estimator datasets.

mod config;
mod dataset;
pub mod log;
mod plot;
mod suite;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Action, Observation, PronkTarget, RobotState, ScriptedPronk, SimConfig, SimError, Simulator};
use crate::reward::{total_reward, ApexTracker, RewardConfig};
use crate::terrain::{generate_strip, Heightfield, TerrainCategory, TerrainError, TerrainParams, TerrainSpec, PATCH_SIZE};
use crate::twin::{sample_disturbances, DisturbanceModel, TwinError};

pub use config::{HarnessConfig, SuiteSettings, OUT_DIR_ENV};
pub use dataset::{
    generate_dataset, split_dataset, verify_manifest, DatasetManifest, DatasetSettings, DatasetSplit, ManifestEntry, MANIFEST_FILE,
};
pub use log::{read_log, write_log, LogRecord};
pub use plot::plot_trajectory;
pub use suite::{run_suite, write_suite_csv, CellSummary, EpisodeOutcome, Stat, SuiteResult};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Twin(#[from] TwinError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("log line {line}: {msg}")]
    Log { line: u64, msg: String },
    #[error("config: {0}")]
    Config(String),
    #[error("trajectory contains no apex")]
    NoApex,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("plot: {0}")]
    Plot(String),
}

/// The four validation terrains and the curriculum cells standing in for them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationTerrain {
    Mare,
    Uneven,
    Hilly,
    Crater,
}

impl ValidationTerrain {
    pub const ALL: [ValidationTerrain; 4] = [Self::Mare, Self::Uneven, Self::Hilly, Self::Crater];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mare => "mare",
            Self::Uneven => "uneven",
            Self::Hilly => "hilly",
            Self::Crater => "crater",
        }
    }

    pub fn spec(self, seed: u64) -> TerrainSpec {
        let (category, d) = match self {
            Self::Mare => (TerrainCategory::PerlinFlat, 0.2),
            Self::Uneven => (TerrainCategory::PerlinFlat, 0.7),
            Self::Hilly => (TerrainCategory::PerlinSlope, 0.5),
            Self::Crater => (TerrainCategory::PerlinCrater, 0.5),
        };
        TerrainSpec::new(category, d, seed)
    }
}

impl std::str::FromStr for ValidationTerrain {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown validation terrain {s:?}")))
    }
}

impl std::fmt::Display for ValidationTerrain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub terrain: TerrainSpec,
    /// Patches tiled along x.
    pub patches: usize,
    pub v_x_cmd: f64,
    /// Apex CoM height above terrain; `None` uses the reward default.
    pub h_cmd: Option<f64>,
    pub max_duration: f64,
    /// Seeds the disturbance draw.
    pub seed: u64,
    pub disturbances: DisturbanceModel,
    pub landing_tolerance: f64,
    /// Roll or pitch beyond this ends the episode, rad.
    pub fall_angle: f64,
    pub start: [f64; 2],
    pub estimator_checkpoint: Option<PathBuf>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            terrain: TerrainSpec::new(TerrainCategory::PureFlat, 0.0, 0),
            patches: 3,
            v_x_cmd: 0.5,
            h_cmd: None,
            max_duration: 20.0,
            seed: 0,
            disturbances: DisturbanceModel::default(),
            landing_tolerance: 0.2,
            fall_angle: 60f64.to_radians(),
            start: [2.0, PATCH_SIZE / 2.0],
            estimator_checkpoint: None,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.max_duration > 0.0) {
            return Err(HarnessError::Config(format!("max_duration {} must be positive", self.max_duration)));
        }
        if !(self.v_x_cmd >= 0.0) {
            return Err(HarnessError::Config(format!("speed {} must be non-negative", self.v_x_cmd)));
        }
        if self.patches == 0 {
            return Err(HarnessError::Config("patches must be at least 1".into()));
        }
        self.disturbances.validate()?;
        Ok(())
    }

    pub fn field(&self, params: &TerrainParams) -> Result<Heightfield, HarnessError> {
        Ok(generate_strip(&self.terrain, params, self.patches)?)
    }

    pub fn reward_config(&self, sim: &SimConfig) -> RewardConfig {
        RewardConfig::for_sim(sim, self.h_cmd, self.v_x_cmd)
    }

    pub fn target(&self, sim: &SimConfig) -> PronkTarget {
        PronkTarget {
            h_cmd: self.reward_config(sim).h_cmd,
            v_x_cmd: self.v_x_cmd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub survival_time: f64,
    pub fell: bool,
    pub landings_total: u32,
    pub landings_successful: u32,
    /// Percent; zero when there were no landings.
    pub landing_success_rate: f64,
    pub apexes: u32,
    pub peak_height_error: Option<f64>,
    /// `(v_z, v_x, v_y, h)`.
    pub estimator_mse: Option<[f64; 4]>,
    pub gravity: f64,
}

/// Parameters the metrics depend on, kept beside a log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub h_cmd: f64,
    pub landing_tolerance: f64,
    pub fall_angle: f64,
    pub max_duration: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub metrics: EpisodeMetrics,
    pub params: MetricParams,
    pub log: Vec<LogRecord>,
}

/// A state estimator fed one observation per control step.
pub trait OnlineEstimator {
    fn reset(&mut self);
    /// Returns `(v_x, v_y, v_z, h)`.
    fn observe(&mut self, obs: &Observation) -> [f64; 4];
}

pub fn landing_success(state: &RobotState, tolerance: f64) -> bool {
    state.roll().abs() <= tolerance && state.pitch().abs() <= tolerance
}

/// Mean absolute apex error.
pub fn peak_height_error(apexes: &[f64], h_cmd: f64) -> Result<f64, HarnessError> {
    if apexes.is_empty() {
        return Err(HarnessError::NoApex);
    }
    Ok(apexes.iter().map(|a| (a - h_cmd).abs()).sum::<f64>() / apexes.len() as f64)
}

fn has_fallen(roll: f64, pitch: f64, z: f64, ground: f64, fall_angle: f64) -> bool {
    roll.abs() > fall_angle || pitch.abs() > fall_angle || z < ground
}

fn record(
    step: u64,
    state: &RobotState,
    obs: &Observation,
    action: &Action,
    reward: &crate::reward::RewardBreakdown,
    apex: Option<f64>,
    landing: Option<bool>,
    estimate: Option<[f64; 4]>,
) -> LogRecord {
    let (roll, pitch, yaw) = state.attitude();
    let hv = state.heading_velocity();
    let q = state.orientation.quaternion();
    let p = state.com_position;
    let v = state.com_velocity;
    let w = state.angular_velocity;
    LogRecord {
        step,
        time: state.time,
        position: [p.x, p.y, p.z],
        velocity: [v.x, v.y, v.z],
        heading_velocity: [hv.x, hv.y],
        orientation: [q.w, q.i, q.j, q.k],
        omega: [w.x, w.y, w.z],
        roll,
        pitch,
        yaw,
        ground: state.ground_height,
        height: state.height(),
        contact: state.contact,
        observation: obs.to_vec(),
        action: action.delta_q,
        reward_total: reward.total,
        r_global: reward.r_global,
        r_takeoff: reward.r_takeoff,
        r_flight: reward.r_flight,
        r_land: reward.r_land,
        r_peak: reward.r_peak,
        phase: [reward.weights.w_takeoff, reward.weights.w_flight, reward.weights.w_land],
        apex,
        touchdown: landing.is_some(),
        landing_ok: landing,
        estimate,
    }
}

fn mse(sum: [f64; 4], n: usize) -> Option<[f64; 4]> {
    (n > 0).then(|| sum.map(|s| s / n as f64))
}

/// Runs one episode of the scripted pronk on `field`. `controller` should be
/// calibrated for the episode target; the episode gravity is drawn from the
/// disturbance model and is unknown to it.
pub fn run_episode(
    cfg: &EpisodeConfig,
    field: &Heightfield,
    sim_config: &SimConfig,
    controller: &ScriptedPronk,
    mut estimator: Option<&mut dyn OnlineEstimator>,
) -> Result<Episode, HarnessError> {
    cfg.validate()?;
    let rcfg = cfg.reward_config(sim_config);
    let target = cfg.target(sim_config);
    let dist = sample_disturbances(&cfg.disturbances, cfg.seed)?;
    let mut scfg = sim_config.clone();
    scfg.gravity = dist.gravity;
    scfg.disturbance_schedule = dist.schedule;
    scfg.phase_gate = Some(rcfg.gate());
    let mut sim = Simulator::standing(scfg, field, cfg.start[0], cfg.start[1])?;
    sim.set_command([cfg.v_x_cmd, 0.0, 0.0]);

    let params = MetricParams {
        h_cmd: target.h_cmd,
        landing_tolerance: cfg.landing_tolerance,
        fall_angle: cfg.fall_angle,
        max_duration: cfg.max_duration,
        gravity: dist.gravity,
    };
    let max_steps = (cfg.max_duration / sim_config.dt).round() as u64;
    let mut tracker = ApexTracker::new();
    let mut apexes = Vec::new();
    let mut landings = 0u32;
    let mut successes = 0u32;
    let mut sq = [0.0; 4];
    let mut n_est = 0usize;

    let mut estimate_for = |obs: &Observation, state: &RobotState, sq: &mut [f64; 4], n: &mut usize| {
        estimator.as_deref_mut().map(|e| {
            let est = e.observe(obs);
            let hv = state.heading_velocity();
            let truth = [hv.x, hv.y, state.com_velocity.z, state.height()];
            // Stored in metric order (v_z, v_x, v_y, h).
            for (k, idx) in [2usize, 0, 1, 3].into_iter().enumerate() {
                let d = est[idx] - truth[idx];
                sq[k] += d * d;
            }
            *n += 1;
            est
        })
    };

    let s0 = sim.state().clone();
    let obs0 = sim.observe();
    tracker.update(s0.height(), s0.com_velocity.z, s0.in_contact());
    let est0 = estimate_for(&obs0, &s0, &mut sq, &mut n_est);
    let r0 = total_reward(&s0, 0.0, None, &rcfg);
    let mut log = vec![record(0, &s0, &obs0, &Action::ZERO, &r0, None, None, est0)];
    let (roll, pitch, _) = s0.attitude();
    let mut fell = has_fallen(roll, pitch, s0.com_position.z, s0.ground_height, cfg.fall_angle);
    let mut prev_contact = s0.in_contact();

    let mut step = 0u64;
    while !fell && step < max_steps {
        let prev_action = *sim.prev_action();
        let action = controller.action(sim.state(), &target);
        let out = match sim.step(&action, field) {
            Ok(out) => out,
            Err(SimError::NonFinite { .. }) => {
                fell = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        step += 1;
        let s = sim.state();
        let applied = *sim.prev_action();
        let apex = tracker.update(s.height(), s.com_velocity.z, s.in_contact());
        if let Some(a) = apex {
            apexes.push(a);
        }
        let landing = (!prev_contact && s.in_contact()).then(|| landing_success(s, cfg.landing_tolerance));
        if let Some(ok) = landing {
            landings += 1;
            successes += ok as u32;
        }
        prev_contact = s.in_contact();
        let est = estimate_for(&out.observation, s, &mut sq, &mut n_est);
        let reward = total_reward(s, applied.rate_penalty(&prev_action), apex, &rcfg);
        log.push(record(step, s, &out.observation, &applied, &reward, apex, landing, est));
        let (roll, pitch, _) = s.attitude();
        fell = has_fallen(roll, pitch, s.com_position.z, s.ground_height, cfg.fall_angle);
    }

    let metrics = EpisodeMetrics {
        survival_time: log.last().map(|r| r.time).unwrap_or(0.0),
        fell,
        landings_total: landings,
        landings_successful: successes,
        landing_success_rate: if landings > 0 { 100.0 * successes as f64 / landings as f64 } else { 0.0 },
        apexes: apexes.len() as u32,
        peak_height_error: peak_height_error(&apexes, target.h_cmd).ok(),
        estimator_mse: mse(sq, n_est),
        gravity: dist.gravity,
    };
    Ok(Episode { metrics, params, log })
}

/// Recomputes episode metrics from a log alone: touchdowns from contact
/// transitions, landing success from attitude, apexes from the height trace.
pub fn recompute_metrics(log: &[LogRecord], params: &MetricParams) -> EpisodeMetrics {
    let mut tracker = ApexTracker::new();
    let mut apexes = Vec::new();
    let mut landings = 0u32;
    let mut successes = 0u32;
    let mut sq = [0.0; 4];
    let mut n = 0usize;
    let mut prev_contact = None;
    let mut fell = false;
    for r in log {
        let contact = r.in_contact();
        if let Some(a) = tracker.update(r.height, r.velocity[2], contact) {
            apexes.push(a);
        }
        if prev_contact == Some(false) && contact {
            landings += 1;
            if r.roll.abs() <= params.landing_tolerance && r.pitch.abs() <= params.landing_tolerance {
                successes += 1;
            }
        }
        prev_contact = Some(contact);
        if let Some(e) = r.estimate {
            let t = r.truth();
            for (k, idx) in [2usize, 0, 1, 3].into_iter().enumerate() {
                sq[k] += (e[idx] - t[idx]).powi(2);
            }
            n += 1;
        }
        fell = has_fallen(r.roll, r.pitch, r.position[2], r.ground, params.fall_angle);
    }
    let survival_time = log.last().map(|r| r.time).unwrap_or(0.0);
    // A log cut short of the cap without a fall row ended on a simulator fault.
    let fell = fell || survival_time < params.max_duration - 1e-9;
    EpisodeMetrics {
        survival_time,
        fell,
        landings_total: landings,
        landings_successful: successes,
        landing_success_rate: if landings > 0 { 100.0 * successes as f64 / landings as f64 } else { 0.0 },
        apexes: apexes.len() as u32,
        peak_height_error: peak_height_error(&apexes, params.h_cmd).ok(),
        estimator_mse: mse(sq, n),
        gravity: params.gravity,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PronkGains;
    use crate::twin::G_LUNAR;

    fn flat_cfg() -> EpisodeConfig {
        EpisodeConfig {
            disturbances: DisturbanceModel::none(G_LUNAR),
            ..Default::default()
        }
    }

    fn calibrated(cfg: &EpisodeConfig, sim: &SimConfig) -> ScriptedPronk {
        ScriptedPronk::calibrate(sim, PronkGains::default(), &cfg.target(sim))
    }

    #[test]
    fn peak_error_arithmetic() {
        assert!((peak_height_error(&[0.28, 0.32], 0.30).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(peak_height_error(&[0.3, 0.3], 0.3).unwrap(), 0.0);
        assert!(matches!(peak_height_error(&[], 0.3), Err(HarnessError::NoApex)));
    }

    #[test]
    fn landing_tolerance_boundary() {
        let field = Heightfield::flat(8.0, 8.0, 0.1).unwrap();
        let sim = Simulator::standing(SimConfig::default(), &field, 4.0, 4.0).unwrap();
        let mut s = sim.state().clone();
        assert!(landing_success(&s, 0.2));
        s.orientation = nalgebra::UnitQuaternion::from_euler_angles(0.0, 0.21, 0.0);
        assert!(!landing_success(&s, 0.2));
    }

    #[test]
    fn flat_episode_survives_and_recomputes() {
        let sim = SimConfig::default();
        let cfg = flat_cfg();
        let field = cfg.field(&TerrainParams::default()).unwrap();
        let ctrl = calibrated(&cfg, &sim);
        let ep = run_episode(&cfg, &field, &sim, &ctrl, None).unwrap();
        assert_eq!(ep.metrics.survival_time, 20.0);
        assert!(!ep.metrics.fell);
        assert_eq!(ep.log.len(), 1001);
        assert!(ep.metrics.peak_height_error.unwrap() <= 0.08, "{:?}", ep.metrics);
        assert!(ep.metrics.landings_total > 5);
        assert_eq!(recompute_metrics(&ep.log, &ep.params), ep.metrics);

        let mut buf = Vec::new();
        write_log(&ep.log, &mut buf).unwrap();
        let back = read_log(buf.as_slice()).unwrap();
        assert_eq!(recompute_metrics(&back, &ep.params), ep.metrics);
    }

    #[test]
    fn tipped_start_falls_immediately() {
        let sim = SimConfig::default();
        let cfg = EpisodeConfig {
            fall_angle: -1.0,
            ..flat_cfg()
        };
        let field = cfg.field(&TerrainParams::default()).unwrap();
        let ctrl = ScriptedPronk::new(&sim, PronkGains::default());
        let ep = run_episode(&cfg, &field, &sim, &ctrl, None).unwrap();
        assert_eq!(ep.metrics.survival_time, 0.0);
        assert_eq!(ep.metrics.landings_total, 0);
        assert!(ep.metrics.fell);
    }
}
