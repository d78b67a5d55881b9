//! Mapping from the simulated robot onto the offload rig: a tilting platform
//! that follows the terrain under the robot, a treadmill that follows its
//! forward speed, and the counterweight that scales gravity down.
//!
//! Terrain under the robot is sensed with four vertical ray-casts at fixed
//! heading-frame offsets. The fitted plane normal maps to platform roll and
//! pitch through
//!
//! ```text
//! phi   = atan2(n_y, n_z)
//! theta = atan2(-n_x, sqrt(n_y^2 + n_z^2))
//! ```
//!
//! which inverts `n = (-sin theta, cos theta sin phi, cos theta cos phi)`, the
//! world vertical seen from a platform turned by X(phi) and then Y(theta) about
//! fixed axes.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DisturbanceEvent, PhaseTrigger, RobotState};
use crate::terrain::{Heightfield, TerrainError};

pub const G_EARTH: f64 = 9.81;
pub const G_LUNAR: f64 = 1.62;

#[derive(Debug, Error)]
pub enum TwinError {
    #[error("probe offsets do not span a plane")]
    DegenerateProbe,
    #[error("probe height {index} is not finite")]
    NonFiniteHeight { index: usize },
    #[error("normal vector has zero length")]
    ZeroNormal,
    #[error("masses must be positive (robot {robot}, counterweight {counterweight})")]
    InvalidMass { robot: f64, counterweight: f64 },
    #[error("offload exceeds robot weight: effective gravity {0} m/s^2")]
    Overoffload(f64),
    #[error("invalid disturbance model: {0}")]
    InvalidDisturbance(String),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Ray-cast offsets in the heading frame, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeLayout {
    pub forward: f64,
    pub lateral: f64,
}

impl Default for ProbeLayout {
    fn default() -> Self {
        Self {
            forward: 0.2,
            lateral: 0.15,
        }
    }
}

impl ProbeLayout {
    /// F, B, L, R.
    pub fn offsets(&self) -> [[f64; 2]; 4] {
        [
            [self.forward, 0.0],
            [-self.forward, 0.0],
            [0.0, self.lateral],
            [0.0, -self.lateral],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaycastProbe {
    pub offsets: [[f64; 2]; 4],
    pub heights: [f64; 4],
}

impl RaycastProbe {
    pub fn new(layout: &ProbeLayout, heights: [f64; 4]) -> Self {
        Self {
            offsets: layout.offsets(),
            heights,
        }
    }

    /// Casts the four probes around `(x, y)` with the layout turned by `yaw`.
    pub fn cast(layout: &ProbeLayout, field: &Heightfield, x: f64, y: f64, yaw: f64) -> Result<Self, TwinError> {
        let (s, c) = yaw.sin_cos();
        let offsets = layout.offsets();
        let mut heights = [0.0; 4];
        for (h, o) in heights.iter_mut().zip(offsets.iter()) {
            *h = field.sample(x + c * o[0] - s * o[1], y + s * o[0] + c * o[1])?;
        }
        Ok(Self { offsets, heights })
    }
}

/// Least-squares plane `z = a x + b y + c` through the probe points, returned
/// as the upward unit normal.
pub fn fit_plane_normal(probe: &RaycastProbe) -> Result<Vector3<f64>, TwinError> {
    for (index, h) in probe.heights.iter().enumerate() {
        if !h.is_finite() {
            return Err(TwinError::NonFiniteHeight { index });
        }
    }
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (o, &z) in probe.offsets.iter().zip(probe.heights.iter()) {
        let row = Vector3::new(o[0], o[1], 1.0);
        ata += row * row.transpose();
        atb += row * z;
    }
    let scale = ata.norm().max(1e-300);
    if !(ata.determinant().abs() / scale.powi(3) > 1e-12) {
        return Err(TwinError::DegenerateProbe);
    }
    let coef = ata.lu().solve(&atb).ok_or(TwinError::DegenerateProbe)?;
    Ok(Vector3::new(-coef.x, -coef.y, 1.0).normalize())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub phi: f64,
    pub theta: f64,
    pub saturated: bool,
}

/// Platform roll and pitch for normal `n`, clamped to `limit`.
pub fn tilt_angles(n: &Vector3<f64>, limit: f64) -> Result<Tilt, TwinError> {
    let norm = n.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(TwinError::ZeroNormal);
    }
    let n = n / norm;
    let phi = n.y.atan2(n.z);
    let theta = (-n.x).atan2(n.y.hypot(n.z));
    let saturated = phi.abs() > limit || theta.abs() > limit;
    Ok(Tilt {
        phi: phi.clamp(-limit, limit),
        theta: theta.clamp(-limit, limit),
        saturated,
    })
}

/// Normal whose tilt angles are `(phi, theta)`.
pub fn platform_normal(phi: f64, theta: f64) -> Vector3<f64> {
    Vector3::new(-theta.sin(), theta.cos() * phi.sin(), theta.cos() * phi.cos())
}

/// First-order low-pass on the robot's forward speed, discretized exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreadmillFilter {
    pub tau: f64,
    state: f64,
}

impl TreadmillFilter {
    pub fn new(tau: f64) -> Self {
        Self { tau, state: 0.0 }
    }

    pub fn with_state(tau: f64, state: f64) -> Self {
        Self { tau, state }
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn update(&mut self, forward_velocity: f64, dt: f64) -> f64 {
        let alpha = if self.tau > 0.0 { 1.0 - (-dt / self.tau).exp() } else { 1.0 };
        self.state += alpha * (forward_velocity - self.state);
        self.output()
    }

    pub fn output(&self) -> f64 {
        self.state.max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OffloadModel {
    pub robot_mass: f64,
    pub counterweight_mass: f64,
    pub g_earth: f64,
    pub pulley_advantage: f64,
    /// Amplitude of cable tension fluctuations as an equivalent mass, kg.
    pub tension_noise: f64,
}

impl Default for OffloadModel {
    fn default() -> Self {
        Self::lunar(12.5)
    }
}

impl OffloadModel {
    /// Counterweight sized for one-sixth effective weight.
    pub fn lunar(robot_mass: f64) -> Self {
        Self {
            robot_mass,
            counterweight_mass: 5.0 / 12.0 * robot_mass,
            g_earth: G_EARTH,
            pulley_advantage: 2.0,
            tension_noise: 1.2,
        }
    }

    pub fn offload_force(&self) -> f64 {
        self.pulley_advantage * self.counterweight_mass * self.g_earth
    }

    pub fn effective_gravity(&self) -> Result<f64, TwinError> {
        if !(self.robot_mass > 0.0) || !(self.counterweight_mass >= 0.0) {
            return Err(TwinError::InvalidMass {
                robot: self.robot_mass,
                counterweight: self.counterweight_mass,
            });
        }
        let g = self.g_earth - self.offload_force() / self.robot_mass;
        // Within rounding of full offload counts as zero.
        if g < -1e-12 * self.g_earth {
            return Err(TwinError::Overoffload(g));
        }
        Ok(g.max(0.0))
    }

    /// Peak acceleration from the tension fluctuation.
    pub fn tension_perturbation(&self) -> f64 {
        self.tension_noise / self.robot_mass * self.g_earth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceModel {
    pub gravity_range: (f64, f64),
    /// Impulse magnitude range, N*s.
    pub impulse_magnitude: (f64, f64),
    pub impulse_duration: f64,
    pub triggers: Vec<PhaseTrigger>,
    /// Phase entries armed per trigger.
    pub max_events: u32,
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        let duration = 0.04;
        Self {
            gravity_range: (0.8 * G_LUNAR, 1.2 * G_LUNAR),
            impulse_magnitude: (0.0, 1.2 * G_EARTH * duration),
            impulse_duration: duration,
            triggers: vec![PhaseTrigger::TakeoffEntry, PhaseTrigger::LandingEntry],
            max_events: 256,
        }
    }
}

impl DisturbanceModel {
    pub fn none(gravity: f64) -> Self {
        Self {
            gravity_range: (gravity, gravity),
            impulse_magnitude: (0.0, 0.0),
            triggers: Vec::new(),
            max_events: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        let (g0, g1) = self.gravity_range;
        let (i0, i1) = self.impulse_magnitude;
        if !(g0.is_finite() && g1.is_finite() && g0 <= g1 && g0 >= 0.0) {
            return Err(TwinError::InvalidDisturbance(format!("gravity range ({g0}, {g1})")));
        }
        if !(i0.is_finite() && i1.is_finite() && i0 <= i1 && i0 >= 0.0) {
            return Err(TwinError::InvalidDisturbance(format!("impulse range ({i0}, {i1})")));
        }
        if !(self.impulse_duration >= 0.0) {
            return Err(TwinError::InvalidDisturbance(format!("duration {}", self.impulse_duration)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDisturbances {
    pub gravity: f64,
    pub schedule: Vec<DisturbanceEvent>,
}

/// Draws the episode gravity and a downward impulse for each armed phase entry.
pub fn sample_disturbances(model: &DisturbanceModel, episode_seed: u64) -> Result<EpisodeDisturbances, TwinError> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed ^ 0xd157_0b5e);
    let (g0, g1) = model.gravity_range;
    let gravity = if g1 > g0 { rng.random_range(g0..g1) } else { g0 };
    let (i0, i1) = model.impulse_magnitude;
    let mut schedule = Vec::new();
    if i1 > 0.0 {
        for &trigger in &model.triggers {
            for occurrence in 0..model.max_events {
                let magnitude = if i1 > i0 { rng.random_range(i0..i1) } else { i0 };
                schedule.push(DisturbanceEvent {
                    trigger,
                    occurrence,
                    impulse: [0.0, 0.0, -magnitude],
                    duration: model.impulse_duration,
                });
            }
        }
    }
    Ok(EpisodeDisturbances { gravity, schedule })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    pub probe: ProbeLayout,
    /// Platform tilt limit, rad.
    pub tilt_limit: f64,
    /// Platform tilt rate limit, rad/s.
    pub rate_limit: f64,
    pub treadmill_tau: f64,
    pub dt: f64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            probe: ProbeLayout::default(),
            tilt_limit: 0.35,
            rate_limit: 30f64.to_radians(),
            treadmill_tau: 0.2,
            dt: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinCommand {
    pub timestamp: f64,
    pub phi: f64,
    pub theta: f64,
    pub treadmill_speed: f64,
    /// The terrain asked for more tilt, or a faster change, than the platform allows.
    #[serde(default)]
    pub saturated: bool,
}

/// What the twin needs to know about the robot each tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyPose {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    /// Heading-frame forward velocity.
    pub forward_velocity: f64,
}

impl From<&RobotState> for BodyPose {
    fn from(s: &RobotState) -> Self {
        let (_, _, yaw) = s.attitude();
        let v = s.com_velocity;
        Self {
            time: s.time,
            x: s.com_position.x,
            y: s.com_position.y,
            yaw,
            forward_velocity: yaw.cos() * v.x + yaw.sin() * v.y,
        }
    }
}

/// Filter and rate-limiter state carried between ticks.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TwinMemory {
    pub last: Option<TwinCommand>,
    pub treadmill: f64,
}

/// One tick of the twin. Pure: the next memory is returned, not mutated.
pub fn twin_tick(
    pose: &BodyPose,
    field: &Heightfield,
    cfg: &TwinConfig,
    memory: &TwinMemory,
) -> Result<(TwinCommand, TwinMemory), TwinError> {
    let probe = RaycastProbe::cast(&cfg.probe, field, pose.x, pose.y, pose.yaw)?;
    let normal = fit_plane_normal(&probe)?;
    let tilt = tilt_angles(&normal, cfg.tilt_limit)?;
    let mut phi = tilt.phi;
    let mut theta = tilt.theta;
    let mut saturated = tilt.saturated;
    let mut filter = TreadmillFilter::with_state(cfg.treadmill_tau, memory.treadmill);
    let speed = match memory.last {
        Some(prev) => {
            let step = cfg.rate_limit * (pose.time - prev.timestamp).max(0.0);
            let limit = |target: f64, from: f64, sat: &mut bool| {
                let d = target - from;
                if d.abs() > step {
                    *sat = true;
                    from + step.copysign(d)
                } else {
                    target
                }
            };
            phi = limit(phi, prev.phi, &mut saturated);
            theta = limit(theta, prev.theta, &mut saturated);
            filter.update(pose.forward_velocity, pose.time - prev.timestamp)
        }
        None => filter.update(pose.forward_velocity, cfg.dt),
    };
    let cmd = TwinCommand {
        timestamp: pose.time,
        phi,
        theta,
        treadmill_speed: speed,
        saturated,
    };
    Ok((
        cmd,
        TwinMemory {
            last: Some(cmd),
            treadmill: filter.state(),
        },
    ))
}

/// Runs the twin over a sequence of poses.
pub fn twin_rollout(poses: &[BodyPose], field: &Heightfield, cfg: &TwinConfig) -> Result<Vec<TwinCommand>, TwinError> {
    let mut memory = TwinMemory::default();
    let mut out = Vec::with_capacity(poses.len());
    for pose in poses {
        let (cmd, next) = twin_tick(pose, field, cfg, &memory)?;
        memory = next;
        out.push(cmd);
    }
    Ok(out)
}

/// Encodes commands as `t,phi_deg,theta_deg,speed_mps` lines, six decimals each.
pub fn encode_commands(cmds: &[TwinCommand]) -> String {
    let mut s = String::new();
    for c in cmds {
        let _ = writeln!(
            s,
            "{:.6},{:.6},{:.6},{:.6}",
            c.timestamp,
            c.phi.to_degrees(),
            c.theta.to_degrees(),
            c.treadmill_speed
        );
    }
    s
}

fn parse_fixed6(field: &str) -> Option<f64> {
    let body = field.strip_prefix('-').unwrap_or(field);
    let (int, frac) = body.split_once('.')?;
    if int.is_empty() || frac.len() != 6 {
        return None;
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    field.parse().ok()
}

/// A decoded wire record. Angles stay in degrees as written.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandRecord {
    pub t: f64,
    pub phi_deg: f64,
    pub theta_deg: f64,
    pub speed_mps: f64,
}

impl CommandRecord {
    pub fn to_command(&self) -> TwinCommand {
        TwinCommand {
            timestamp: self.t,
            phi: self.phi_deg.to_radians(),
            theta: self.theta_deg.to_radians(),
            treadmill_speed: self.speed_mps,
            saturated: false,
        }
    }
}

/// Strict parser for the command wire format.
pub fn parse_commands(text: &str) -> Result<Vec<CommandRecord>, TwinError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| TwinError::Parse { line: line_no, msg };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0; 4];
        for (slot, f) in v.iter_mut().zip(fields.iter()) {
            *slot = parse_fixed6(f).ok_or_else(|| err(format!("malformed number {f:?}")))?;
        }
        out.push(CommandRecord {
            t: v[0],
            phi_deg: v[1],
            theta_deg: v[2],
            speed_mps: v[3],
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub line: usize,
    pub what: String,
}

/// Checks a decoded command stream against platform limits.
pub fn check_commands(records: &[CommandRecord], cfg: &TwinConfig) -> Vec<Violation> {
    // One unit in the last written place, in the stored units.
    let tol_deg = 1e-6;
    let limit_deg = cfg.tilt_limit.to_degrees();
    let rate_deg = cfg.rate_limit.to_degrees();
    let mut out = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let line = i + 1;
        for (name, a) in [("phi", r.phi_deg), ("theta", r.theta_deg)] {
            if a.abs() > limit_deg + tol_deg {
                out.push(Violation {
                    line,
                    what: format!("{name} {a:.6} deg exceeds limit {limit_deg:.6}"),
                });
            }
        }
        if r.speed_mps < 0.0 {
            out.push(Violation {
                line,
                what: format!("negative treadmill speed {:.6}", r.speed_mps),
            });
        }
        if i > 0 {
            let p = &records[i - 1];
            let dt = r.t - p.t;
            if !(dt > 0.0) {
                out.push(Violation {
                    line,
                    what: format!("timestamp {:.6} does not advance", r.t),
                });
                continue;
            }
            for (name, a, b) in [("phi", r.phi_deg, p.phi_deg), ("theta", r.theta_deg, p.theta_deg)] {
                if (a - b).abs() > rate_deg * dt + 2.0 * tol_deg {
                    out.push(Violation {
                        line,
                        what: format!("{name} changes {:.6} deg in {dt:.6} s", a - b),
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    fn probe_on_plane(a: f64, b: f64, c: f64) -> RaycastProbe {
        let layout = ProbeLayout::default();
        let heights = layout.offsets().map(|o| a * o[0] + b * o[1] + c);
        RaycastProbe::new(&layout, heights)
    }

    #[test]
    fn flat_probe_is_vertical() {
        let n = fit_plane_normal(&probe_on_plane(0.0, 0.0, 0.7)).unwrap();
        assert!((n - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn ten_degree_plane_normal() {
        let a = 10f64.to_radians();
        let n = fit_plane_normal(&probe_on_plane(a.tan(), 0.0, 0.0)).unwrap();
        let expect = Vector3::new(-a.sin(), 0.0, a.cos());
        assert!((n - expect).norm() < 1e-9, "{n}");
    }

    #[test]
    fn coplanar_fit_has_no_residual() {
        let (a, b, c) = (0.13, -0.21, 0.4);
        let p = probe_on_plane(a, b, c);
        let n = fit_plane_normal(&p).unwrap();
        // Plane through the centroid with normal n reproduces every point.
        let cz = p.heights.iter().sum::<f64>() / 4.0;
        for (o, h) in p.offsets.iter().zip(p.heights) {
            let z = cz - (n.x * o[0] + n.y * o[1]) / n.z;
            assert!((z - h).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_probe_is_rejected() {
        let p = RaycastProbe {
            offsets: [[0.2, 0.0], [-0.2, 0.0], [0.1, 0.0], [-0.1, 0.0]],
            heights: [0.0; 4],
        };
        assert!(matches!(fit_plane_normal(&p), Err(TwinError::DegenerateProbe)));
        let p = RaycastProbe::new(&ProbeLayout::default(), [0.0, f64::NAN, 0.0, 0.0]);
        assert!(matches!(fit_plane_normal(&p), Err(TwinError::NonFiniteHeight { index: 1 })));
    }

    #[test]
    fn tilt_from_roll_only_normal() {
        let a = 0.2f64;
        let t = tilt_angles(&Vector3::new(0.0, a.sin(), a.cos()), 0.35).unwrap();
        assert!((t.phi - a).abs() < 1e-15 && t.theta.abs() < 1e-15 && !t.saturated);
        assert!(matches!(tilt_angles(&Vector3::zeros(), 0.35), Err(TwinError::ZeroNormal)));
    }

    #[test]
    fn tilt_round_trip_through_rotations() {
        let step = 5f64.to_radians();
        for i in -11..=11 {
            for j in -11..=11 {
                let (phi, theta) = (i as f64 * step, j as f64 * step);
                // Platform turned by X(phi) and then Y(theta) about fixed axes;
                // the normal is world vertical seen from the platform.
                let r = Rotation3::from_axis_angle(&Vector3::y_axis(), theta)
                    * Rotation3::from_axis_angle(&Vector3::x_axis(), phi);
                let n = r.transpose() * Vector3::z();
                let t = tilt_angles(&n, 2.0).unwrap();
                assert!((t.phi - phi).abs() < 1e-9 && (t.theta - theta).abs() < 1e-9, "{phi} {theta}");
                assert!((platform_normal(phi, theta) - n).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn tilt_saturates_with_flag() {
        let t = tilt_angles(&platform_normal(0.5, -0.1), 0.35).unwrap();
        assert!(t.saturated);
        assert_eq!(t.phi, 0.35);
        assert!((t.theta + 0.1).abs() < 1e-12);
    }

    #[test]
    fn treadmill_step_response() {
        let mut f = TreadmillFilter::new(0.2);
        let mut v = 0.0;
        for _ in 0..10 {
            v = f.update(0.7, 0.02);
        }
        assert!(v >= 0.63 * 0.7, "{v}");
        for _ in 0..500 {
            v = f.update(0.5, 0.02);
        }
        assert!((v - 0.5).abs() < 1e-9);
        let mut f = TreadmillFilter::new(0.2);
        assert_eq!(f.update(0.0, 0.02), 0.0);
        assert_eq!(f.update(-1.0, 0.02), 0.0);
    }

    #[test]
    fn offload_identities() {
        let m = OffloadModel::lunar(12.5);
        assert!((m.effective_gravity().unwrap() - G_EARTH / 6.0).abs() <= f64::EPSILON * G_EARTH);
        let free = OffloadModel { counterweight_mass: 0.0, ..m };
        assert_eq!(free.effective_gravity().unwrap(), G_EARTH);
        let full = OffloadModel { counterweight_mass: 6.25, ..m };
        assert_eq!(full.effective_gravity().unwrap(), 0.0);
        let over = OffloadModel { counterweight_mass: 7.0, ..m };
        assert!(matches!(over.effective_gravity(), Err(TwinError::Overoffload(_))));
        assert!((m.tension_perturbation() - 1.2 / 12.5 * 9.81).abs() < 1e-12);
    }

    #[test]
    fn degenerate_gravity_range_is_constant() {
        let model = DisturbanceModel {
            gravity_range: (1.62, 1.62),
            ..DisturbanceModel::default()
        };
        for seed in 0..20 {
            assert_eq!(sample_disturbances(&model, seed).unwrap().gravity, 1.62);
        }
    }

    #[test]
    fn gravity_monte_carlo() {
        let model = DisturbanceModel {
            gravity_range: (1.30, 1.95),
            max_events: 0,
            ..DisturbanceModel::default()
        };
        let gs: Vec<f64> = (0..10_000).map(|s| sample_disturbances(&model, s).unwrap().gravity).collect();
        let mean = gs.iter().sum::<f64>() / gs.len() as f64;
        assert!(gs.iter().all(|g| (1.30..=1.95).contains(g)));
        assert!((mean - 1.625).abs() < 0.02 * 1.625, "{mean}");
    }

    #[test]
    fn impulses_are_downward_and_bounded() {
        let model = DisturbanceModel::default();
        let d = sample_disturbances(&model, 3).unwrap();
        assert_eq!(d.schedule.len(), 2 * model.max_events as usize);
        let bound = 1.2 * 9.81 * 0.04;
        for ev in &d.schedule {
            assert!(ev.impulse[2] <= 0.0 && -ev.impulse[2] <= bound);
            assert_eq!(ev.impulse[0], 0.0);
            assert_eq!(ev.duration, 0.04);
        }
        assert_eq!(d, sample_disturbances(&model, 3).unwrap());
        let bad = DisturbanceModel {
            gravity_range: (2.0, 1.0),
            ..model
        };
        assert!(sample_disturbances(&bad, 0).is_err());
    }

    #[test]
    fn wire_format_round_trip() {
        let cmds = [
            TwinCommand {
                timestamp: 0.02,
                phi: 0.01,
                theta: -0.2,
                treadmill_speed: 0.5,
                saturated: false,
            },
            TwinCommand {
                timestamp: 0.04,
                phi: 0.0,
                theta: -0.19,
                treadmill_speed: 0.51,
                saturated: false,
            },
        ];
        let text = encode_commands(&cmds);
        assert_eq!(text.lines().next().unwrap(), "0.020000,0.572958,-11.459156,0.500000");
        let recs = parse_commands(&text).unwrap();
        assert_eq!(encode_commands(&recs.iter().map(|r| r.to_command()).collect::<Vec<_>>()), text);
        assert!(check_commands(&recs, &TwinConfig::default()).is_empty());
    }

    #[test]
    fn parser_rejects_loose_numbers() {
        for bad in ["0.02,0,0,0", "0.020000,1e-3,0.000000,0.000000", "0.020000,0.000000,0.000000", " 0.020000,0.000000,0.000000,0.000000", "0.020000,+0.000000,0.000000,0.000000", ""] {
            let text = format!("{bad}\n");
            assert!(parse_commands(&text).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn checker_flags_limit_and_rate() {
        let recs = parse_commands("0.000000,0.000000,0.000000,0.100000\n0.020000,1.000000,0.000000,0.100000\n0.040000,25.000000,0.000000,-0.100000\n").unwrap();
        let v = check_commands(&recs, &TwinConfig::default());
        let lines: Vec<usize> = v.iter().map(|v| v.line).collect();
        assert!(lines.contains(&2), "{v:?}");
        assert_eq!(lines.iter().filter(|&&l| l == 3).count(), 3, "{v:?}");
    }
}
