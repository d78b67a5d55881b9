use nalgebra::{UnitQuaternion, Vector3};

use super::{
    Action, DisturbanceEvent, LegGeometry, Observation, PhaseTrigger, RobotState, SimConfig, SimError,
    NUM_JOINTS, NUM_LEGS,
};
use crate::reward::PhaseWeights;
use crate::terrain::Heightfield;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LegEvent {
    Liftoff { leg: usize, time: f64 },
    /// `time` is interpolated within the physics substep.
    Touchdown { leg: usize, time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub observation: Observation,
    pub events: Vec<LegEvent>,
}

#[derive(Debug, Clone, Copy)]
struct ActivePulse {
    force: Vector3<f64>,
    remaining: f64,
}

/// One simulated robot. Owns its state; all terrain access is read-only.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimConfig,
    leg: LegGeometry,
    state: RobotState,
    prev_action: Action,
    command: [f64; 3],
    steps: u64,
    pulses: Vec<ActivePulse>,
    takeoff_entries: u32,
    landing_entries: u32,
    prev_phase: PhaseWeights,
}

/// Adds `impulse / mass` to the CoM velocity and changes nothing else.
pub fn apply_impulse(state: &RobotState, impulse: Vector3<f64>, mass: f64) -> RobotState {
    let mut next = state.clone();
    next.com_velocity += impulse / mass;
    next
}

impl Simulator {
    /// Robot standing level at `(x, y)` with all four feet on the terrain.
    pub fn standing(config: SimConfig, field: &Heightfield, x: f64, y: f64) -> Result<Self, SimError> {
        config.validate()?;
        let leg = config.leg();
        let q = config.nominal_q();
        let mut anchors = [None; NUM_LEGS];
        let mut ground_sum = 0.0;
        for (i, anchor) in anchors.iter_mut().enumerate() {
            let hip = config.hip(i);
            let foot = hip + leg.forward(leg_q(&q, i));
            let gz = field.sample_clamped(x + foot.x, y + foot.y);
            ground_sum += gz;
            *anchor = Some(Vector3::new(x + foot.x, y + foot.y, gz));
        }
        let z = ground_sum / NUM_LEGS as f64 + config.h_stance();
        let com = Vector3::new(x, y, z);
        // Each leg carries an equal share of the weight on uneven ground.
        let support = config.mass * config.gravity / (NUM_LEGS as f64 * config.leg_stiffness);
        let mut measured = q;
        let mut actuators = q;
        for (i, anchor) in anchors.iter().enumerate() {
            let local = anchor.expect("anchor set above") - (com + config.hip(i));
            let joints = leg.inverse(&local);
            let knee = leg.knee_for_length(local.norm() + support);
            for k in 0..3 {
                measured[3 * i + k] = joints[k];
                actuators[3 * i + k] = joints[k];
            }
            actuators[3 * i + 2] = knee;
            actuators[3 * i + 1] = joints[1] - 0.5 * (knee - joints[2]);
        }
        let state = RobotState {
            time: 0.0,
            com_position: com,
            com_velocity: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
            joint_positions: measured,
            joint_velocities: [0.0; NUM_JOINTS],
            actuator_positions: actuators,
            actuator_velocities: [0.0; NUM_JOINTS],
            foot_heights: [0.0; NUM_LEGS],
            contact: [true; NUM_LEGS],
            anchors,
            ground_height: field.sample_clamped(x, y),
        };
        let mut sim = Self::from_state(config, state)?;
        sim.refresh_measurements(field, None);
        Ok(sim)
    }

    /// Robot in flight at the nominal pose, feet `clearance` above the terrain
    /// below the hips, moving with `velocity`.
    pub fn airborne(
        config: SimConfig,
        field: &Heightfield,
        x: f64,
        y: f64,
        clearance: f64,
        velocity: Vector3<f64>,
    ) -> Result<Self, SimError> {
        config.validate()?;
        let q = config.nominal_q();
        let leg = config.leg();
        let foot_drop = -leg.forward(leg_q(&q, 0)).z;
        let ground_max = (0..NUM_LEGS)
            .map(|i| {
                let h = config.hip(i);
                field.sample_clamped(x + h.x, y + h.y)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let state = RobotState {
            time: 0.0,
            com_position: Vector3::new(x, y, ground_max + foot_drop + clearance),
            com_velocity: velocity,
            orientation: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
            joint_positions: q,
            joint_velocities: [0.0; NUM_JOINTS],
            actuator_positions: q,
            actuator_velocities: [0.0; NUM_JOINTS],
            foot_heights: [clearance; NUM_LEGS],
            contact: [false; NUM_LEGS],
            anchors: [None; NUM_LEGS],
            ground_height: field.sample_clamped(x, y),
        };
        let mut sim = Self::from_state(config, state)?;
        sim.refresh_measurements(field, None);
        Ok(sim)
    }

    pub fn from_state(config: SimConfig, state: RobotState) -> Result<Self, SimError> {
        config.validate()?;
        if !state.is_finite() {
            return Err(SimError::NonFinite {
                what: "initial state",
                time: state.time,
            });
        }
        Ok(Self {
            leg: config.leg(),
            config,
            state,
            prev_action: Action::ZERO,
            command: [0.0; 3],
            steps: 0,
            pulses: Vec::new(),
            takeoff_entries: 0,
            landing_entries: 0,
            prev_phase: PhaseWeights::default(),
        })
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn prev_action(&self) -> &Action {
        &self.prev_action
    }

    pub fn set_command(&mut self, v_cmd: [f64; 3]) {
        self.command = v_cmd;
    }

    pub fn set_gravity(&mut self, g: f64) {
        self.config.gravity = g;
    }

    pub fn set_disturbances(&mut self, schedule: Vec<DisturbanceEvent>) {
        self.config.disturbance_schedule = schedule;
    }

    /// Number of takeoff and landing phase entries seen so far.
    pub fn phase_entries(&self) -> (u32, u32) {
        (self.takeoff_entries, self.landing_entries)
    }

    pub fn apply_impulse(&mut self, impulse: Vector3<f64>) {
        self.state = apply_impulse(&self.state, impulse, self.config.mass);
    }

    /// Starts a rectangular force pulse delivering `impulse` over `duration`.
    pub fn start_pulse(&mut self, impulse: Vector3<f64>, duration: f64) {
        if duration <= 0.0 {
            self.apply_impulse(impulse);
        } else {
            self.pulses.push(ActivePulse {
                force: impulse / duration,
                remaining: duration,
            });
        }
    }

    pub fn observe(&self) -> Observation {
        let r = self.state.orientation;
        let g = r.inverse() * Vector3::new(0.0, 0.0, -1.0);
        let w = self.state.angular_velocity;
        Observation {
            v_cmd: self.command,
            omega: [w.x, w.y, w.z],
            gravity_projected: [g.x, g.y, g.z],
            q: self.state.joint_positions,
            qdot: self.state.joint_velocities,
            prev_action: self.prev_action.delta_q,
        }
    }

    /// Advances one control period under `action`.
    pub fn step(&mut self, action: &Action, field: &Heightfield) -> Result<StepOutput, SimError> {
        if !action.is_finite() {
            return Err(SimError::NonFinite {
                what: "action",
                time: self.state.time,
            });
        }
        let action = action.clipped(self.config.action_clip);
        let nominal = self.config.nominal_q();
        let mut target = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            target[j] = nominal[j] + action.delta_q[j];
            if j % 3 == 2 {
                target[j] = target[j].clamp(self.config.knee_range[0], self.config.knee_range[1]);
            }
        }

        let h = self.config.substep();
        let t0 = self.steps as f64 * self.config.dt;
        let mut events = Vec::new();
        for s in 0..self.config.substeps {
            let t_start = t0 + s as f64 * h;
            self.substep(h, t_start, &target, field, &mut events);
        }
        self.steps += 1;
        self.state.time = self.steps as f64 * self.config.dt;
        self.prev_action = action;

        if !self.state.is_finite() {
            return Err(SimError::NonFinite {
                what: "state",
                time: self.state.time,
            });
        }
        self.arm_phase_disturbances();
        Ok(StepOutput {
            observation: self.observe(),
            events,
        })
    }

    fn arm_phase_disturbances(&mut self) {
        let Some(gate) = self.config.phase_gate else {
            return;
        };
        let w = PhaseWeights::evaluate(self.state.height(), self.state.com_velocity.z, &gate);
        let mut fire = |trigger: PhaseTrigger, occurrence: u32, pulses: &mut Vec<ActivePulse>| {
            for ev in &self.config.disturbance_schedule {
                if ev.trigger == trigger && ev.occurrence == occurrence {
                    let impulse = Vector3::from(ev.impulse);
                    if ev.duration > 0.0 {
                        pulses.push(ActivePulse {
                            force: impulse / ev.duration,
                            remaining: ev.duration,
                        });
                    } else {
                        self.state.com_velocity += impulse / self.config.mass;
                    }
                }
            }
        };
        if w.w_takeoff == 1 && self.prev_phase.w_takeoff == 0 {
            fire(PhaseTrigger::TakeoffEntry, self.takeoff_entries, &mut self.pulses);
            self.takeoff_entries += 1;
        }
        if w.w_land == 1 && self.prev_phase.w_land == 0 {
            fire(PhaseTrigger::LandingEntry, self.landing_entries, &mut self.pulses);
            self.landing_entries += 1;
        }
        self.prev_phase = w;
    }

    fn substep(&mut self, h: f64, t_start: f64, target: &[f64; NUM_JOINTS], field: &Heightfield, events: &mut Vec<LegEvent>) {
        let cfg = &self.config;
        let leg = self.leg;
        let st = &mut self.state;

        // Joint units.
        for j in 0..NUM_JOINTS {
            let acc = (cfg.kp * (target[j] - st.actuator_positions[j]) - cfg.kd * st.actuator_velocities[j])
                / cfg.joint_inertia;
            st.actuator_velocities[j] += acc * h;
            st.actuator_positions[j] += st.actuator_velocities[j] * h;
            if j % 3 == 2 {
                let [lo, hi] = cfg.knee_range;
                if st.actuator_positions[j] < lo || st.actuator_positions[j] > hi {
                    st.actuator_positions[j] = st.actuator_positions[j].clamp(lo, hi);
                    st.actuator_velocities[j] = 0.0;
                }
            }
        }

        // Leg forces.
        let rot = st.orientation.to_rotation_matrix();
        let omega_w = rot * st.angular_velocity;
        let mut force = Vector3::new(0.0, 0.0, -cfg.mass * cfg.gravity);
        let mut torque_w = Vector3::zeros();
        for pulse in &mut self.pulses {
            let frac = pulse.remaining.min(h) / h;
            force += pulse.force * frac;
            pulse.remaining -= h;
        }
        self.pulses.retain(|p| p.remaining > 1e-12);

        for i in 0..NUM_LEGS {
            let Some(mut anchor) = st.anchors[i] else {
                continue;
            };
            let r_hip = rot * cfg.hip(i);
            let hip_w = st.com_position + r_hip;
            let knee = st.actuator_positions[3 * i + 2];
            let rest = leg.length(knee);
            let rest_rate = -leg.thigh * leg.calf * knee.sin() / rest.max(1e-6) * st.actuator_velocities[3 * i + 2];
            let v_hip = st.com_velocity + omega_w.cross(&r_hip);

            let mut axis = hip_w - anchor;
            let mut length = axis.norm().max(1e-9);
            let mut unit = axis / length;
            // The foot leaves once the spring is unloaded; the damper alone
            // cannot pull it off the ground.
            let spring = cfg.leg_stiffness * (rest - length);
            let mut magnitude = (spring + cfg.leg_damping * (rest_rate - unit.dot(&v_hip))).max(0.0);
            if spring <= 0.0 {
                st.contact[i] = false;
                st.anchors[i] = None;
                events.push(LegEvent::Liftoff { leg: i, time: t_start });
                continue;
            }
            let mut f = unit * magnitude;
            let tangential = (f.x * f.x + f.y * f.y).sqrt();
            if magnitude > 0.0 && (f.z <= 0.0 || tangential > cfg.friction * f.z) {
                // Slide the foot until the leg sits on the friction cone.
                let dz = (hip_w.z - anchor.z).max(1e-6);
                let dir = Vector3::new(axis.x, axis.y, 0.0);
                let n = dir.norm();
                if n > 0.0 {
                    let reach = cfg.friction * dz;
                    anchor.x = hip_w.x - dir.x / n * reach;
                    anchor.y = hip_w.y - dir.y / n * reach;
                    anchor.z = field.sample_clamped(anchor.x, anchor.y);
                    st.anchors[i] = Some(anchor);
                }
                axis = hip_w - anchor;
                length = axis.norm().max(1e-9);
                unit = axis / length;
                magnitude = (cfg.leg_stiffness * (rest - length) + cfg.leg_damping * (rest_rate - unit.dot(&v_hip))).max(0.0);
                f = unit * magnitude;
            }
            force += f;
            torque_w += r_hip.cross(&f);
        }

        // Body rotation, body frame.
        let mut torque_b = rot.inverse() * torque_w;
        let yaw = st.orientation.euler_angles().2;
        torque_b.z += -cfg.yaw_stiffness * yaw - cfg.yaw_damping * st.angular_velocity.z;
        let w = st.angular_velocity;
        let w_dot = Vector3::new(
            (torque_b.x - (w.y * w.z * (cfg.body_inertia[2] - cfg.body_inertia[1]))) / cfg.body_inertia[0],
            (torque_b.y - (w.z * w.x * (cfg.body_inertia[0] - cfg.body_inertia[2]))) / cfg.body_inertia[1],
            (torque_b.z - (w.x * w.y * (cfg.body_inertia[1] - cfg.body_inertia[0]))) / cfg.body_inertia[2],
        );
        st.angular_velocity += w_dot * h;
        st.orientation = st.orientation * UnitQuaternion::from_scaled_axis(st.angular_velocity * h);

        // Translation: exact update for the acceleration held over the substep.
        let acc = force / cfg.mass;
        st.com_position += st.com_velocity * h + acc * (0.5 * h * h);
        st.com_velocity += acc * h;

        let prev_foot_heights = st.foot_heights;
        self.refresh_measurements(field, Some((h, t_start, &prev_foot_heights, events)));
    }

    /// Recomputes touchdowns, measured joints, foot heights and ground height.
    fn refresh_measurements(
        &mut self,
        field: &Heightfield,
        step: Option<(f64, f64, &[f64; NUM_LEGS], &mut Vec<LegEvent>)>,
    ) {
        let cfg = &self.config;
        let leg = self.leg;
        let st = &mut self.state;
        let rot = st.orientation.to_rotation_matrix();
        let stepping = step.is_some();
        let (h, t_start, prev_heights, mut events) = match step {
            Some((h, t, p, e)) => (h, t, Some(p), Some(e)),
            None => (0.0, st.time, None, None),
        };

        for i in 0..NUM_LEGS {
            let r_hip = rot * cfg.hip(i);
            let hip_w = st.com_position + r_hip;
            if st.anchors[i].is_none() {
                let q = leg_q(&st.actuator_positions, i);
                let foot_w = hip_w + rot * leg.forward(q);
                let ground = field.sample_clamped(foot_w.x, foot_w.y);
                let fh = foot_w.z - ground;
                // Touchdown needs the foot to cross the ground from above or to
                // sink past the tolerance, not just sit below it right after a liftoff.
                let prev = prev_heights.map(|p| p[i]).unwrap_or(0.0);
                if fh <= 0.0 && stepping && (prev > 0.0 || fh < -cfg.penetration_tolerance) {
                    st.anchors[i] = Some(Vector3::new(foot_w.x, foot_w.y, ground));
                    st.contact[i] = true;
                    st.foot_heights[i] = 0.0;
                    let frac = if prev > 0.0 && prev - fh > 0.0 { prev / (prev - fh) } else { 1.0 };
                    if let Some(ev) = events.as_mut() {
                        ev.push(LegEvent::Touchdown {
                            leg: i,
                            time: t_start + frac.clamp(0.0, 1.0) * h,
                        });
                    }
                } else {
                    st.contact[i] = false;
                    st.foot_heights[i] = fh;
                    for k in 0..3 {
                        st.joint_positions[3 * i + k] = st.actuator_positions[3 * i + k];
                        st.joint_velocities[3 * i + k] = st.actuator_velocities[3 * i + k];
                    }
                    continue;
                }
            }
            let anchor = st.anchors[i].expect("stance leg has an anchor");
            st.contact[i] = true;
            st.foot_heights[i] = anchor.z - field.sample_clamped(anchor.x, anchor.y);
            let local = rot.inverse() * (anchor - hip_w);
            let measured = leg.inverse(&local);
            for k in 0..3 {
                let j = 3 * i + k;
                if h > 0.0 {
                    st.joint_velocities[j] = (measured[k] - st.joint_positions[j]) / h;
                }
                st.joint_positions[j] = measured[k];
            }
        }
        st.ground_height = field.sample_clamped(st.com_position.x, st.com_position.y);
    }
}

fn leg_q(q: &[f64; NUM_JOINTS], leg: usize) -> [f64; 3] {
    [q[3 * leg], q[3 * leg + 1], q[3 * leg + 2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat() -> Heightfield {
        Heightfield::flat(8.0, 8.0, 0.05).unwrap()
    }

    #[test]
    fn ballistic_velocity_drop() {
        let field = flat();
        let cfg = SimConfig::default();
        let mut sim = Simulator::airborne(cfg.clone(), &field, 4.0, 4.0, 0.5, Vector3::new(0.0, 0.0, 1.0)).unwrap();
        for _ in 0..10 {
            sim.step(&Action::ZERO, &field).unwrap();
        }
        let vz = sim.state().com_velocity.z;
        assert!((vz - (1.0 - cfg.gravity * 0.2)).abs() < 1e-12, "{vz}");
        assert!(!sim.state().in_contact());
    }

    #[test]
    fn flight_energy_conserved() {
        let field = flat();
        let cfg = SimConfig::default();
        let mut sim = Simulator::airborne(cfg.clone(), &field, 4.0, 4.0, 0.0, Vector3::new(0.0, 0.0, 0.9859)).unwrap();
        let energy = |s: &RobotState| 0.5 * s.com_velocity.z.powi(2) + cfg.gravity * s.com_position.z;
        let e0 = energy(sim.state());
        while sim.state().com_velocity.z > 0.0 {
            sim.step(&Action::ZERO, &field).unwrap();
            let e = energy(sim.state());
            assert!(((e - e0) / e0).abs() < 1e-6);
        }
    }

    #[test]
    fn standing_is_static() {
        let field = flat();
        let cfg = SimConfig::default();
        let mut sim = Simulator::standing(cfg.clone(), &field, 4.0, 4.0).unwrap();
        let z0 = sim.state().com_position.z;
        for _ in 0..100 {
            let out = sim.step(&Action::ZERO, &field).unwrap();
            assert_eq!(out.observation.to_vec().len(), 45);
        }
        let s = sim.state();
        assert!(s.contact.iter().all(|c| *c));
        assert!((s.com_position.z - z0).abs() < 1e-3, "{} vs {}", s.com_position.z, z0);
        assert!((s.height() - cfg.h_stance()).abs() < 1e-3);
        assert!(s.roll().abs() < 1e-9 && s.pitch().abs() < 1e-9);
    }

    #[test]
    fn gravity_projection_is_unit() {
        let field = flat();
        let mut sim = Simulator::standing(SimConfig::default(), &field, 4.0, 4.0).unwrap();
        sim.state.orientation = UnitQuaternion::from_euler_angles(0.2, -0.1, 0.3);
        let g = sim.observe().gravity_projected;
        let n = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nan_action_rejected() {
        let field = flat();
        let mut sim = Simulator::standing(SimConfig::default(), &field, 4.0, 4.0).unwrap();
        let mut a = Action::ZERO;
        a.delta_q[4] = f64::NAN;
        assert!(matches!(sim.step(&a, &field), Err(SimError::NonFinite { what: "action", .. })));
    }

    #[test]
    fn impulse_changes_only_velocity() {
        let field = flat();
        let sim = Simulator::standing(SimConfig::default(), &field, 4.0, 4.0).unwrap();
        let s0 = sim.state().clone();
        let s1 = apply_impulse(&s0, Vector3::new(0.0, 0.0, -2.5), 12.5);
        assert!((s1.com_velocity.z - (s0.com_velocity.z - 0.2)).abs() < 1e-15);
        let mut s1b = s1.clone();
        s1b.com_velocity = s0.com_velocity;
        assert_eq!(s1b, s0);
        assert_eq!(apply_impulse(&s0, Vector3::zeros(), 12.5), s0);
    }

    #[test]
    fn deterministic_rollout() {
        let field = flat();
        let run = || {
            let mut sim = Simulator::standing(SimConfig::default(), &field, 4.0, 4.0).unwrap();
            let mut a = Action::ZERO;
            for k in 0..50 {
                a.delta_q[2] = 0.3 * ((k as f64) * 0.3).sin();
                a.delta_q[5] = -0.3 * ((k as f64) * 0.2).cos();
                sim.step(&a, &field).unwrap();
            }
            sim.state().clone()
        };
        assert_eq!(run(), run());
    }
}
