//! Reduced-order pronking quadruped: a rigid CoM body on four massless
//! telescoping legs whose joints are PD-tracked second-order units.


mod controller;
mod kinematics;
mod sim;


pub use controller::{PronkGains, PronkTarget, ScriptedPronk};
pub use kinematics::LegGeometry;
pub use sim::{LegEvent, Simulator, StepOutput};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::reward::PhaseGate;

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;
pub const OBS_DIM: usize = 45;

/// Leg order used for every per-leg array.
pub const LEG_NAMES: [&str; NUM_LEGS] = ["FL", "FR", "RL", "RR"];

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SimError {
    #[error("non-finite {what} at t = {time:.3} s")]
    NonFinite { what: &'static str, time: f64 },
    #[error("invalid sim config: {0}")]
    Config(String),
}

/// Full simulator state. `joint_*` are the measured link angles reported in
/// observations; `actuator_*` are the PD-tracked unit states.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub time: f64,
    pub com_position: Vector3<f64>,
    pub com_velocity: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
    /// Body-frame angular velocity.
    pub angular_velocity: Vector3<f64>,
    pub joint_positions: [f64; NUM_JOINTS],
    pub joint_velocities: [f64; NUM_JOINTS],
    pub actuator_positions: [f64; NUM_JOINTS],
    pub actuator_velocities: [f64; NUM_JOINTS],
    pub foot_heights: [f64; NUM_LEGS],
    pub contact: [bool; NUM_LEGS],
    /// World-frame contact point of each stance foot.
    pub anchors: [Option<Vector3<f64>>; NUM_LEGS],
    /// Terrain height directly below the CoM.
    pub ground_height: f64,
}

impl RobotState {
    /// `(roll, pitch, yaw)`, extrinsic X-Y-Z (yaw-pitch-roll) convention.
    pub fn attitude(&self) -> (f64, f64, f64) {
        self.orientation.euler_angles()
    }

    pub fn roll(&self) -> f64 {
        self.attitude().0
    }

    pub fn pitch(&self) -> f64 {
        self.attitude().1
    }

    /// CoM height above the terrain directly below it.
    pub fn height(&self) -> f64 {
        self.com_position.z - self.ground_height
    }

    pub fn in_contact(&self) -> bool {
        self.contact.iter().any(|c| *c)
    }

    pub fn max_foot_height(&self) -> f64 {
        self.foot_heights.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// CoM velocity in the yaw-aligned heading frame.
    pub fn heading_velocity(&self) -> Vector3<f64> {
        let yaw = self.attitude().2;
        UnitQuaternion::from_euler_angles(0.0, 0.0, -yaw) * self.com_velocity
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite()
            && self.com_position.iter().all(|v| v.is_finite())
            && self.com_velocity.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.joint_positions.iter().all(|v| v.is_finite())
            && self.joint_velocities.iter().all(|v| v.is_finite())
            && self.actuator_positions.iter().all(|v| v.is_finite())
            && self.actuator_velocities.iter().all(|v| v.is_finite())
    }
}

/// Proprioceptive observation, flattened as
/// `[v_cmd(3), omega(3), gravity(3), q(12), qdot(12), prev_action(12)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub v_cmd: [f64; 3],
    pub omega: [f64; 3],
    pub gravity_projected: [f64; 3],
    pub q: [f64; NUM_JOINTS],
    pub qdot: [f64; NUM_JOINTS],
    pub prev_action: [f64; NUM_JOINTS],
}

impl Observation {
    pub fn to_vec(&self) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        out[0..3].copy_from_slice(&self.v_cmd);
        out[3..6].copy_from_slice(&self.omega);
        out[6..9].copy_from_slice(&self.gravity_projected);
        out[9..21].copy_from_slice(&self.q);
        out[21..33].copy_from_slice(&self.qdot);
        out[33..45].copy_from_slice(&self.prev_action);
        out
    }

    pub fn from_slice(v: &[f64]) -> Option<Self> {
        if v.len() != OBS_DIM {
            return None;
        }
        let take = |a: usize, b: usize| -> [f64; NUM_JOINTS] { v[a..b].try_into().unwrap() };
        Some(Self {
            v_cmd: v[0..3].try_into().unwrap(),
            omega: v[3..6].try_into().unwrap(),
            gravity_projected: v[6..9].try_into().unwrap(),
            q: take(9, 21),
            qdot: take(21, 33),
            prev_action: take(33, 45),
        })
    }
}

/// Joint-position increments relative to the nominal configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub delta_q: [f64; NUM_JOINTS],
}

impl Action {
    pub const ZERO: Action = Action {
        delta_q: [0.0; NUM_JOINTS],
    };

    pub fn clipped(mut self, limit: f64) -> Self {
        for a in &mut self.delta_q {
            *a = a.clamp(-limit, limit);
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.delta_q.iter().all(|a| a.is_finite())
    }

    /// Squared action rate `||a_t - a_{t-1}||^2`.
    pub fn rate_penalty(&self, prev: &Action) -> f64 {
        self.delta_q
            .iter()
            .zip(&prev.delta_q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTrigger {
    TakeoffEntry,
    LandingEntry,
}

/// A force pulse fired on the `occurrence`-th entry (0-based) into a phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceEvent {
    pub trigger: PhaseTrigger,
    pub occurrence: u32,
    /// Total impulse, N*s, world frame.
    pub impulse: [f64; 3],
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub gravity: f64,
    /// Control period, seconds.
    pub dt: f64,
    /// Physics substeps per control period.
    pub substeps: u32,
    pub kp: f64,
    pub kd: f64,
    /// Reflected inertia of each joint unit, kg*m^2.
    pub joint_inertia: f64,
    pub mass: f64,
    /// Principal body inertia (x, y, z), kg*m^2.
    pub body_inertia: [f64; 3],
    /// Axial stiffness and damping of each telescoping leg.
    pub leg_stiffness: f64,
    pub leg_damping: f64,
    pub friction: f64,
    pub thigh_length: f64,
    pub calf_length: f64,
    /// Hip positions (|x|, |y|) relative to the CoM.
    pub hip_offset: [f64; 2],
    /// Nominal (abduction, hip, knee), mirrored across legs.
    pub nominal_joint: [f64; 3],
    pub action_clip: f64,
    pub knee_range: [f64; 2],
    pub yaw_stiffness: f64,
    pub yaw_damping: f64,
    pub contact_threshold: f64,
    pub penetration_tolerance: f64,
    pub disturbance_schedule: Vec<DisturbanceEvent>,
    /// Thresholds used to detect takeoff/landing entries for disturbances.
    pub phase_gate: Option<PhaseGate>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gravity: 1.62,
            dt: 0.02,
            substeps: 10,
            kp: 20.0,
            kd: 0.5,
            joint_inertia: 0.01,
            mass: 12.5,
            body_inertia: [0.05, 0.15, 0.17],
            leg_stiffness: 1500.0,
            leg_damping: 30.0,
            friction: 0.7,
            thigh_length: 0.2,
            calf_length: 0.2,
            hip_offset: [0.18, 0.13],
            nominal_joint: [0.0, 0.9, -1.8],
            action_clip: 0.8,
            knee_range: [-2.7, -0.3],
            yaw_stiffness: 2.0,
            yaw_damping: 0.5,
            contact_threshold: 0.01,
            penetration_tolerance: 0.005,
            disturbance_schedule: Vec::new(),
            phase_gate: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("gravity", self.gravity),
            ("dt", self.dt),
            ("mass", self.mass),
            ("joint_inertia", self.joint_inertia),
            ("leg_stiffness", self.leg_stiffness),
            ("thigh_length", self.thigh_length),
            ("calf_length", self.calf_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.substeps == 0 {
            return Err(SimError::Config("substeps must be at least 1".into()));
        }
        if self.body_inertia.iter().any(|i| !(i.is_finite() && *i > 0.0)) {
            return Err(SimError::Config("body inertia must be positive".into()));
        }
        if self.kp < 0.0 || self.kd < 0.0 || self.leg_damping < 0.0 || self.friction < 0.0 {
            return Err(SimError::Config("gains must be non-negative".into()));
        }
        Ok(())
    }

    pub fn leg(&self) -> LegGeometry {
        LegGeometry {
            thigh: self.thigh_length,
            calf: self.calf_length,
        }
    }

    pub fn substep(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    /// Hip position of `leg` in the body frame.
    pub fn hip(&self, leg: usize) -> Vector3<f64> {
        let sx = if leg < 2 { 1.0 } else { -1.0 };
        let sy = if leg % 2 == 0 { 1.0 } else { -1.0 };
        Vector3::new(sx * self.hip_offset[0], sy * self.hip_offset[1], 0.0)
    }

    /// Nominal joint vector, abduction mirrored on the right legs.
    pub fn nominal_q(&self) -> [f64; NUM_JOINTS] {
        let mut q = [0.0; NUM_JOINTS];
        for leg in 0..NUM_LEGS {
            let sy = if leg % 2 == 0 { 1.0 } else { -1.0 };
            q[3 * leg] = sy * self.nominal_joint[0];
            q[3 * leg + 1] = self.nominal_joint[1];
            q[3 * leg + 2] = self.nominal_joint[2];
        }
        q
    }

    pub fn nominal_leg_length(&self) -> f64 {
        self.leg().length(self.nominal_joint[2])
    }

    /// Static CoM height on flat ground at the nominal configuration.
    pub fn h_stance(&self) -> f64 {
        let [abd, hip, knee] = self.nominal_joint;
        let foot = self.leg().forward([abd, hip, knee]);
        let sag = self.mass * self.gravity / (NUM_LEGS as f64 * self.leg_stiffness);
        -foot.z * (1.0 - sag / self.nominal_leg_length())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observation_layout_is_45() {
        let obs = Observation {
            v_cmd: [1.0, 2.0, 3.0],
            omega: [4.0, 5.0, 6.0],
            gravity_projected: [0.0, 0.0, -1.0],
            q: [7.0; 12],
            qdot: [8.0; 12],
            prev_action: [9.0; 12],
        };
        let v = obs.to_vec();
        assert_eq!(v.len(), OBS_DIM);
        assert_eq!(v[0..3], [1.0, 2.0, 3.0]);
        assert_eq!(v[8], -1.0);
        assert_eq!(v[9], 7.0);
        assert_eq!(v[21], 8.0);
        assert_eq!(v[44], 9.0);
        assert_eq!(Observation::from_slice(&v), Some(obs));
        assert_eq!(Observation::from_slice(&v[..44]), None);
    }

    #[test]
    fn action_clip() {
        let mut a = Action::ZERO;
        a.delta_q[0] = 2.0;
        a.delta_q[5] = -1.0;
        let c = a.clipped(0.8);
        assert_eq!(c.delta_q[0], 0.8);
        assert_eq!(c.delta_q[5], -0.8);
    }

    #[test]
    fn stance_height_below_nominal_length() {
        let c = SimConfig::default();
        let h = c.h_stance();
        assert!(h < c.nominal_leg_length() && h > 0.24, "{h}");
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            gravity: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SimConfig {
            dt: -0.02,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
