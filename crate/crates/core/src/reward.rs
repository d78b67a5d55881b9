//! Phase-adaptive gated reward.
//!
//! Three indicators built from CoM height `h` and vertical velocity `v_z`
//! switch the stage terms on and off:
//!
//! ```text
//! G      = [h <= h_thr]
//! I_up   = [v_z >  v_thr]
//! I_down = [v_z < -v_thr]
//! w_takeoff = G * I_up,  w_land = G * I_down,  w_flight = 1 - G
//! v_thr  = alpha * sqrt(2 g (h_cmd - h_stance))
//! ```
//!
//! `h` is always the CoM height above the terrain directly below it.

use serde::{Deserialize, Serialize};

use crate::dynamics::{RobotState, SimConfig};

/// Apex height above stance commanded by default, meters.
pub const DEFAULT_JUMP_RISE: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_v: f64,
    pub k_v: f64,
    pub w_r: f64,
    pub k_z: f64,
    pub w_f: f64,
    pub w_h: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_v: 1.0,
            k_v: 4.0,
            w_r: 0.01,
            k_z: 4.0,
            w_f: 0.5,
            w_h: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Commanded apex CoM height above terrain.
    pub h_cmd: f64,
    pub h_thr: f64,
    pub alpha: f64,
    pub g_moon: f64,
    pub h_stance: f64,
    pub delta_h: f64,
    pub v_x_cmd: f64,
    pub weights: RewardWeights,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::for_sim(&SimConfig::default(), None, 0.0)
    }
}

impl RewardConfig {
    /// Defaults tied to a simulator: `h_stance` from its nominal pose,
    /// `h_thr = h_stance + 0.05` and `h_cmd = h_stance + 0.30` unless given.
    pub fn for_sim(sim: &SimConfig, h_cmd: Option<f64>, v_x_cmd: f64) -> Self {
        let h_stance = sim.h_stance();
        Self {
            h_cmd: h_cmd.unwrap_or(h_stance + DEFAULT_JUMP_RISE),
            h_thr: h_stance + 0.05,
            alpha: 0.5,
            g_moon: 1.62,
            h_stance,
            delta_h: 0.04,
            v_x_cmd,
            weights: RewardWeights::default(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.h_cmd > self.h_stance) {
            return Err(format!("h_cmd {} must exceed h_stance {}", self.h_cmd, self.h_stance));
        }
        if !(self.delta_h > 0.0) {
            return Err("delta_h must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err("alpha must lie in (0, 1]".into());
        }
        if !(self.g_moon > 0.0) {
            return Err("g_moon must be positive".into());
        }
        Ok(())
    }

    pub fn v_thr(&self) -> f64 {
        self.alpha * (2.0 * self.g_moon * (self.h_cmd - self.h_stance)).max(0.0).sqrt()
    }

    pub fn gate(&self) -> PhaseGate {
        PhaseGate {
            h_thr: self.h_thr,
            v_thr: self.v_thr(),
        }
    }
}

/// The two thresholds that define the phase indicators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGate {
    pub h_thr: f64,
    pub v_thr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PhaseWeights {
    pub w_takeoff: u8,
    pub w_flight: u8,
    pub w_land: u8,
    pub near_ground: bool,
    pub up: bool,
    pub down: bool,
}

impl PhaseWeights {
    pub fn evaluate(h: f64, v_z: f64, gate: &PhaseGate) -> Self {
        let g = h <= gate.h_thr;
        let up = v_z > gate.v_thr;
        let down = v_z < -gate.v_thr;
        Self {
            w_takeoff: (g && up) as u8,
            w_flight: (!g) as u8,
            w_land: (g && down) as u8,
            near_ground: g,
            up,
            down,
        }
    }
}

pub fn phase_weights(h: f64, v_z: f64, config: &RewardConfig) -> PhaseWeights {
    PhaseWeights::evaluate(h, v_z, &config.gate())
}

/// `1` when a detected apex lies within `delta_h` of `h_cmd`.
pub fn peak_reward(apex: Option<f64>, config: &RewardConfig) -> f64 {
    match apex {
        Some(peak) if (peak - config.h_cmd).abs() <= config.delta_h => 1.0,
        _ => 0.0,
    }
}

/// Velocity tracking, regularization and the sparse peak bonus. `apex` is
/// `Some` only on the step where an apex was detected.
pub fn global_reward(state: &RobotState, action_reg: f64, apex: Option<f64>, config: &RewardConfig) -> f64 {
    let w = &config.weights;
    let v_x = state.heading_velocity().x;
    let err = v_x - config.v_x_cmd;
    w.w_v * (-w.k_v * err * err).exp() - w.w_r * action_reg + peak_reward(apex, config)
}

/// `(r_takeoff, r_flight, r_land)`.
pub fn stage_rewards(state: &RobotState, config: &RewardConfig) -> (f64, f64, f64) {
    let w = &config.weights;
    let v_z = state.com_velocity.z;
    let (roll, pitch, _) = state.attitude();
    let dv = v_z - config.v_thr();
    let takeoff = (-w.k_z * dv * dv).exp();
    let flight = -w.w_f * (roll * roll + pitch * pitch);
    let land = -v_z * v_z - w.w_h * state.max_foot_height();
    (takeoff, flight, land)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub weights: PhaseWeights,
    pub r_global: f64,
    pub r_takeoff: f64,
    pub r_flight: f64,
    pub r_land: f64,
    pub r_peak: f64,
    pub total: f64,
}

pub fn total_reward(state: &RobotState, action_reg: f64, apex: Option<f64>, config: &RewardConfig) -> RewardBreakdown {
    let weights = phase_weights(state.height(), state.com_velocity.z, config);
    let r_global = global_reward(state, action_reg, apex, config);
    let (r_takeoff, r_flight, r_land) = stage_rewards(state, config);
    let total = r_global
        + weights.w_takeoff as f64 * r_takeoff
        + weights.w_flight as f64 * r_flight
        + weights.w_land as f64 * r_land;
    RewardBreakdown {
        weights,
        r_global,
        r_takeoff,
        r_flight,
        r_land,
        r_peak: peak_reward(apex, config),
        total,
    }
}

/// Detects the apex of each jump: a `+ -> -` sign change of `v_z` while no
/// foot is in contact. Reports the highest CoM height seen since liftoff,
/// once per jump.
#[derive(Debug, Clone, Default)]
pub struct ApexTracker {
    prev_vz: Option<f64>,
    running_max: f64,
    airborne: bool,
    granted: bool,
}

impl ApexTracker {
    pub fn new() -> Self {
        Self {
            running_max: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    pub fn update(&mut self, h: f64, v_z: f64, in_contact: bool) -> Option<f64> {
        let mut apex = None;
        if in_contact {
            self.airborne = false;
            self.granted = false;
            self.running_max = f64::NEG_INFINITY;
        } else {
            if !self.airborne {
                self.airborne = true;
                self.granted = false;
                self.running_max = f64::NEG_INFINITY;
            }
            self.running_max = self.running_max.max(h);
            if let Some(prev) = self.prev_vz {
                if prev > 0.0 && v_z <= 0.0 && !self.granted {
                    apex = Some(self.running_max);
                    self.granted = true;
                }
            }
        }
        self.prev_vz = Some(v_z);
        apex
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{UnitQuaternion, Vector3};

    fn config() -> RewardConfig {
        RewardConfig {
            h_cmd: 0.55,
            h_thr: 0.30,
            alpha: 0.5,
            g_moon: 1.62,
            h_stance: 0.25,
            delta_h: 0.04,
            v_x_cmd: 0.5,
            weights: RewardWeights::default(),
        }
    }

    fn state(h: f64, v: [f64; 3], rp: (f64, f64), foot_h: f64) -> RobotState {
        RobotState {
            time: 0.0,
            com_position: Vector3::new(0.0, 0.0, h),
            com_velocity: Vector3::from(v),
            orientation: UnitQuaternion::from_euler_angles(rp.0, rp.1, 0.0),
            angular_velocity: Vector3::zeros(),
            joint_positions: [0.0; 12],
            joint_velocities: [0.0; 12],
            actuator_positions: [0.0; 12],
            actuator_velocities: [0.0; 12],
            foot_heights: [foot_h; 4],
            contact: [false; 4],
            anchors: [None; 4],
            ground_height: 0.0,
        }
    }

    #[test]
    fn v_thr_formula() {
        // h_cmd - h_stance = 0.3, g = 1.62, alpha = 0.5.
        let v = config().v_thr();
        assert!((v - 0.5 * (2.0f64 * 1.62 * 0.3).sqrt()).abs() < 1e-15);
        assert!((v - 0.4930).abs() < 5e-5, "{v}");
    }

    #[test]
    fn takeoff_and_flight_weights() {
        let c = config();
        let w = phase_weights(0.28, 0.6, &c);
        assert_eq!((w.w_takeoff, w.w_flight, w.w_land), (1, 0, 0));
        for vz in [-3.0, -0.1, 0.0, 0.6, 3.0] {
            let w = phase_weights(0.4, vz, &c);
            assert_eq!((w.w_takeoff, w.w_flight, w.w_land), (0, 1, 0));
        }
        let w = phase_weights(0.28, -0.6, &c);
        assert_eq!((w.w_takeoff, w.w_flight, w.w_land), (0, 0, 1));
    }

    #[test]
    fn peak_tolerance() {
        let c = RewardConfig { h_cmd: 0.30, ..config() };
        assert_eq!(peak_reward(Some(0.33), &c), 1.0);
        assert_eq!(peak_reward(Some(0.36), &c), 0.0);
        assert_eq!(peak_reward(None, &c), 0.0);
    }

    #[test]
    fn perfect_tracking_gives_w_v() {
        let c = config();
        let s = state(1.0, [0.5, 0.0, 0.0], (0.0, 0.0), 0.5);
        assert_eq!(global_reward(&s, 0.0, None, &c), c.weights.w_v);
        let b = total_reward(&s, 0.0, None, &c);
        assert_eq!(b.total, c.weights.w_v);
    }

    #[test]
    fn stage_examples() {
        let c = config();
        let s = state(0.28, [0.0, 0.0, c.v_thr()], (0.0, 0.0), 0.0);
        assert_eq!(stage_rewards(&s, &c).0, 1.0);
        assert_eq!(stage_rewards(&s, &c).1, 0.0);
        let s = state(0.28, [0.0, 0.0, -0.5], (0.0, 0.0), 0.1);
        let land = stage_rewards(&s, &c).2;
        assert!((land + 0.35).abs() < 1e-12, "{land}");
    }

    #[test]
    fn dead_zone_total_is_global() {
        let c = config();
        let s = state(0.28, [0.2, 0.0, 0.1], (0.1, -0.1), 0.02);
        let b = total_reward(&s, 0.3, None, &c);
        assert_eq!(b.weights.w_takeoff + b.weights.w_flight + b.weights.w_land, 0);
        assert_eq!(b.total, b.r_global);
    }

    #[test]
    fn apex_once_per_jump() {
        let mut t = ApexTracker::new();
        assert_eq!(t.update(0.25, 0.0, true), None);
        assert_eq!(t.update(0.30, 0.5, false), None);
        assert_eq!(t.update(0.50, 0.1, false), None);
        assert_eq!(t.update(0.49, -0.1, false), Some(0.50));
        assert_eq!(t.update(0.45, 0.05, false), None);
        assert_eq!(t.update(0.44, -0.05, false), None);
        assert_eq!(t.update(0.25, -0.5, true), None);
        assert_eq!(t.update(0.31, 0.4, false), None);
        assert_eq!(t.update(0.32, -0.01, false), Some(0.32));
    }

    #[test]
    fn config_validation() {
        assert!(config().validate().is_ok());
        assert!(RewardConfig { h_cmd: 0.2, ..config() }.validate().is_err());
        assert!(RewardConfig { alpha: 0.0, ..config() }.validate().is_err());
    }
}
