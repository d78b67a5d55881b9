//! Scripted crouch-extend-retract pronk used to generate data and run
//! experiments in place of a learned policy.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{Action, RobotState, SimConfig, Simulator, NUM_JOINTS, NUM_LEGS};
use crate::reward::ApexTracker;
use crate::terrain::Heightfield;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PronkTarget {
    /// Apex CoM height above terrain, meters.
    pub h_cmd: f64,
    pub v_x_cmd: f64,
}

/// Leg-length schedule and feedback gains of the scripted pronk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PronkGains {
    /// Shortest leg before the push starts regardless of vertical speed.
    pub crouch_length: f64,
    /// Added to the commanded apex; found by [`ScriptedPronk::calibrate`].
    pub apex_bias: f64,
    /// Leg lead per m/s of vertical velocity error in stance, s.
    pub push_gain: f64,
    pub brake_gain: f64,
    /// Bound on the stance lead, m.
    pub max_lead: f64,
    /// Leg shortening commanded once the takeoff velocity is reached, m.
    pub retract: f64,
    /// Rest length prepared for touchdown while descending.
    pub touchdown_length: f64,
    /// Smallest gap between touchdown leg length and commanded apex, m.
    pub min_rise: f64,
    /// Leg shortening per m/s of upward flight velocity.
    pub tuck_gain: f64,
    /// Foot-placement feedback on velocity error, s.
    pub placement_gain: f64,
    /// Stance duration used for the neutral foot point, s.
    pub stance_time: f64,
    /// Leg-length leveling gains in stance, m/rad and m*s/rad.
    pub level_kp: f64,
    pub level_kd: f64,
    pub max_placement: f64,
    /// Bound on the per-leg touchdown length correction, m.
    pub max_level: f64,
}

impl Default for PronkGains {
    fn default() -> Self {
        Self {
            crouch_length: 0.20,
            apex_bias: 0.0,
            push_gain: 0.15,
            brake_gain: 0.08,
            max_lead: 0.05,
            retract: 0.03,
            touchdown_length: 0.30,
            min_rise: 0.06,
            tuck_gain: 0.06,
            placement_gain: 0.1,
            stance_time: 0.1,
            level_kp: 0.02,
            level_kd: 0.02,
            max_placement: 0.12,
            max_level: 0.08,
        }
    }
}

impl PronkGains {
    /// All lengths at the nominal pose: the robot never leaves the ground.
    pub fn zero_crouch(config: &SimConfig) -> Self {
        let l = config.nominal_leg_length();
        Self {
            crouch_length: l,
            push_gain: 0.0,
            brake_gain: 0.0,
            touchdown_length: l,
            tuck_gain: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedPronk {
    pub gains: PronkGains,
    config: SimConfig,
}

impl ScriptedPronk {
    pub fn new(config: &SimConfig, gains: PronkGains) -> Self {
        Self {
            gains,
            config: config.clone(),
        }
    }

    /// Joint increments for the current state. Pure in `(state, target)`.
    pub fn action(&self, state: &RobotState, target: &PronkTarget) -> Action {
        let cfg = &self.config;
        let g = &self.gains;
        let leg = cfg.leg();
        let nominal = cfg.nominal_q();
        let (roll, pitch, yaw) = state.attitude();
        let rot = state.orientation;
        let heading = UnitQuaternion::from_euler_angles(0.0, 0.0, yaw);
        let v = state.heading_velocity();
        let w = state.angular_velocity;
        let v_z = state.com_velocity.z;
        let stance = state.in_contact();
        let all_down = state.contact.iter().all(|c| *c);
        // Hip height over the ground below each foot; unlike the foot clearance
        // it does not move with the commanded leg length.
        let hip_clearance: [f64; NUM_LEGS] = std::array::from_fn(|i| {
            let q = [state.joint_positions[3 * i], state.joint_positions[3 * i + 1], state.joint_positions[3 * i + 2]];
            let foot = rot * (cfg.hip(i) + leg.forward(q));
            state.foot_heights[i] - foot.z + rot.transform_vector(&cfg.hip(i)).z
        });
        let mean_clearance = hip_clearance.iter().sum::<f64>() / NUM_LEGS as f64;
        // Reachable lengths under both the knee range and the action clip.
        let knee_lo = cfg.knee_range[0].max(nominal[2] - cfg.action_clip);
        let knee_hi = cfg.knee_range[1].min(nominal[2] + cfg.action_clip);
        let min_len = leg.length(knee_lo) + 0.01;
        let max_len = leg.length(knee_hi) - 0.01;

        // Stance: brake the landing, extend until the ballistic apex reaches the
        // command, then retract so the feet unload.
        let rise = (target.h_cmd + g.apex_bias - state.height()).max(0.0);
        let v_req = (2.0 * cfg.gravity * rise).sqrt();
        let support = cfg.mass * cfg.gravity / (NUM_LEGS as f64 * cfg.leg_stiffness);
        // Land low enough that braking leaves room for a push below the apex.
        let touchdown = g.touchdown_length.min(target.h_cmd - g.min_rise);
        let flight_length = touchdown - g.tuck_gain * v_z.max(0.0);

        // Foot placement, heading frame.
        let fx = (v.x * g.stance_time / 2.0 + g.placement_gain * (v.x - target.v_x_cmd))
            .clamp(-g.max_placement, g.max_placement);
        let fy = (v.y * g.stance_time / 2.0 + g.placement_gain * v.y).clamp(-g.max_placement, g.max_placement);

        // Stance lengths, shifted together when one leg would saturate so the
        // remaining legs do not push alone.
        let mut stance_len = [None; NUM_LEGS];
        if stance {
            for i in 0..NUM_LEGS {
                let Some(anchor) = state.anchors[i] else { continue };
                let hip = cfg.hip(i);
                let current = (state.com_position + rot * hip - anchor).norm();
                // Brake and push only on all four feet so no pair carries the
                // whole impulse; retract together once a foot has left.
                let lead = if !all_down {
                    if v_z < 0.0 { 0.0 } else { -g.retract }
                } else if v_z < 0.0 && current > g.crouch_length {
                    (-g.brake_gain * v_z).min(g.max_lead)
                } else if v_z < v_req {
                    (g.push_gain * (v_req - v_z)).min(g.max_lead)
                } else {
                    -g.retract
                };
                let level = g.level_kp * (pitch * hip.x - roll * hip.y) + g.level_kd * (w.y * hip.x - w.x * hip.y);
                stance_len[i] = Some(current + support + lead + level);
            }
            let hi = stance_len.iter().flatten().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
            let lo = stance_len.iter().flatten().fold(f64::INFINITY, |m, &l| m.min(l));
            let shift = if hi > max_len { max_len - hi } else if lo < min_len { min_len - lo } else { 0.0 };
            for l in stance_len.iter_mut().flatten() {
                *l = (*l + shift).clamp(min_len, max_len);
            }
        }

        let mut q_target = [0.0; NUM_JOINTS];
        for i in 0..NUM_LEGS {
            let joints = match stance_len[i] {
                Some(length) => {
                    // Keep the measured stance direction, change only the length.
                    let knee_now = state.joint_positions[3 * i + 2];
                    let knee = leg.knee_for_length(length);
                    [
                        state.joint_positions[3 * i],
                        state.joint_positions[3 * i + 1] - 0.5 * (knee - knee_now),
                        knee,
                    ]
                }
                _ => {
                    // Clear the ground while rising off it; on the way down the late feet
                    // keep reaching for the ground.
                    let length = if v_z > 0.0 && (stance || state.height() < touchdown) {
                        g.crouch_length
                    } else {
                        // Even out the foot clearances so all feet land together.
                        flight_length + (hip_clearance[i] - mean_clearance).clamp(-g.max_level, g.max_level)
                    };
                    let length = length.clamp(min_len, max_len);
                    let reach = fx.hypot(fy);
                    let scale = if reach > 0.0 { reach.min(length * 0.9) / reach } else { 0.0 };
                    let (px, py) = (fx * scale, fy * scale);
                    let foot_heading = Vector3::new(px, py, -(length * length - px * px - py * py).sqrt());
                    let foot_body = rot.inverse() * (heading * foot_heading);
                    leg.inverse(&foot_body)
                }
            };
            q_target[3 * i..3 * i + 3].copy_from_slice(&joints);
        }
        let mut action = Action::ZERO;
        for j in 0..NUM_JOINTS {
            action.delta_q[j] = q_target[j] - nominal[j];
        }
        action.clipped(cfg.action_clip)
    }

    /// Apex heights of the first `jumps` jumps from standing on flat ground.
    pub fn flat_apexes(&self, target: &PronkTarget, jumps: usize) -> Vec<f64> {
        let field = Heightfield::flat(48.0, 8.0, 0.1).expect("valid flat field");
        let Ok(mut sim) = Simulator::standing(self.config.clone(), &field, 4.0, 4.0) else {
            return Vec::new();
        };
        sim.set_command([target.v_x_cmd, 0.0, 0.0]);
        let mut tracker = ApexTracker::new();
        let mut apexes = Vec::new();
        let max_steps = (jumps as f64 * 4.0 / self.config.dt) as usize;
        for _ in 0..max_steps {
            let a = self.action(sim.state(), target);
            if sim.step(&a, &field).is_err() {
                break;
            }
            let s = sim.state();
            if let Some(apex) = tracker.update(s.height(), s.com_velocity.z, s.in_contact()) {
                apexes.push(apex);
                if apexes.len() >= jumps {
                    break;
                }
            }
            if s.roll().abs() > 1.0 || s.pitch().abs() > 1.0 {
                break;
            }
        }
        apexes
    }

    /// Mean of the apexes after the first, which starts from standing.
    pub fn steady_apex(&self, target: &PronkTarget) -> Option<f64> {
        let apexes = self.flat_apexes(target, 5);
        (apexes.len() >= 3).then(|| apexes[1..].iter().sum::<f64>() / (apexes.len() - 1) as f64)
    }

    /// Tunes `apex_bias` so the steady apex on flat ground matches
    /// `target.h_cmd` under the configured gravity.
    pub fn calibrate(config: &SimConfig, gains: PronkGains, target: &PronkTarget) -> Self {
        let mut ctrl = ScriptedPronk::new(config, gains);
        let (mut lo, mut hi) = (-0.3, 0.3);
        for _ in 0..24 {
            let mid = 0.5 * (lo + hi);
            ctrl.gains.apex_bias = mid;
            match ctrl.steady_apex(target) {
                Some(apex) if apex >= target.h_cmd => hi = mid,
                _ => lo = mid,
            }
        }
        ctrl.gains.apex_bias = 0.5 * (lo + hi);
        ctrl
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::LegEvent;

    fn flat() -> Heightfield {
        Heightfield::flat(48.0, 8.0, 0.05).unwrap()
    }

    #[test]
    fn zero_crouch_never_lifts_off() {
        let cfg = SimConfig::default();
        let field = flat();
        let ctrl = ScriptedPronk::new(&cfg, PronkGains::zero_crouch(&cfg));
        let mut sim = Simulator::standing(cfg, &field, 4.0, 4.0).unwrap();
        let target = PronkTarget { h_cmd: 0.55, v_x_cmd: 0.0 };
        for _ in 0..200 {
            let a = ctrl.action(sim.state(), &target);
            sim.step(&a, &field).unwrap();
            assert!(sim.state().contact.iter().all(|c| *c));
        }
    }

    #[test]
    fn action_is_deterministic_and_clipped() {
        let cfg = SimConfig::default();
        let field = flat();
        let sim = Simulator::standing(cfg.clone(), &field, 4.0, 4.0).unwrap();
        let ctrl = ScriptedPronk::new(&cfg, PronkGains::default());
        let t = PronkTarget { h_cmd: 0.55, v_x_cmd: 0.5 };
        let a = ctrl.action(sim.state(), &t);
        assert_eq!(a, ctrl.action(sim.state(), &t));
        assert!(a.delta_q.iter().all(|x| x.abs() <= cfg.action_clip));
    }

    #[test]
    fn calibrated_apex_tracks_command() {
        let cfg = SimConfig::default();
        for h_cmd in [0.3, cfg.h_stance() + 0.3] {
            let t = PronkTarget { h_cmd, v_x_cmd: 0.0 };
            let ctrl = ScriptedPronk::calibrate(&cfg, PronkGains::default(), &t);
            let apexes = ctrl.flat_apexes(&t, 12);
            assert_eq!(apexes.len(), 12);
            for a in &apexes[1..] {
                assert!((a - h_cmd).abs() <= 0.08, "h_cmd {h_cmd}: apex {a}");
            }
        }
    }

    #[test]
    fn no_drift_without_speed_command() {
        let cfg = SimConfig::default();
        let field = flat();
        let t = PronkTarget { h_cmd: cfg.h_stance() + 0.3, v_x_cmd: 0.0 };
        let ctrl = ScriptedPronk::calibrate(&cfg, PronkGains::default(), &t);
        let mut sim = Simulator::standing(cfg, &field, 4.0, 4.0).unwrap();
        let start = sim.state().com_position;
        let mut tracker = ApexTracker::new();
        let mut jumps = 0;
        while jumps < 10 {
            let a = ctrl.action(sim.state(), &t);
            sim.step(&a, &field).unwrap();
            let s = sim.state();
            if tracker.update(s.height(), s.com_velocity.z, s.in_contact()).is_some() {
                jumps += 1;
            }
        }
        let d = sim.state().com_position - start;
        assert!(d.x.hypot(d.y) < 0.1, "drift {d:?}");
    }

    #[test]
    fn takeoff_impulse_lowers_apex() {
        let cfg = SimConfig::default();
        let field = flat();
        let t = PronkTarget { h_cmd: cfg.h_stance() + 0.3, v_x_cmd: 0.0 };
        let ctrl = ScriptedPronk::calibrate(&cfg, PronkGains::default(), &t);
        let run = |impulse: f64| {
            let mut sim = Simulator::standing(cfg.clone(), &field, 4.0, 4.0).unwrap();
            let mut tracker = ApexTracker::new();
            let mut liftoffs = 0;
            let mut apexes = Vec::new();
            while apexes.len() < 4 {
                let a = ctrl.action(sim.state(), &t);
                let out = sim.step(&a, &field).unwrap();
                let all_up = !sim.state().in_contact();
                if all_up && out.events.iter().any(|e| matches!(e, LegEvent::Liftoff { .. })) {
                    liftoffs += 1;
                    if liftoffs == 3 {
                        sim.apply_impulse(Vector3::new(0.0, 0.0, -impulse));
                    }
                }
                let s = sim.state();
                if let Some(apex) = tracker.update(s.height(), s.com_velocity.z, s.in_contact()) {
                    apexes.push(apex);
                }
            }
            apexes[2]
        };
        let base = run(0.0);
        let hit = run(2.5);
        assert!(hit < base - 0.05, "undisturbed {base}, disturbed {hit}");
    }
}
