//! Two-segment leg geometry. Each leg has abduction (about body x), hip pitch
//! and knee joints; the knee sets the hip-to-foot distance of the telescoping
//! leg template and hip pitch plus half the knee flexion sets its direction.

use nalgebra::Vector3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegGeometry {
    pub thigh: f64,
    pub calf: f64,
}

impl LegGeometry {
    /// Hip-to-foot distance for a knee angle (knee angles are negative when flexed).
    pub fn length(&self, knee: f64) -> f64 {
        let (a, b) = (self.thigh, self.calf);
        (a * a + b * b + 2.0 * a * b * knee.cos()).max(0.0).sqrt()
    }

    /// Inverse of [`length`](Self::length) on the flexed branch.
    pub fn knee_for_length(&self, length: f64) -> f64 {
        let (a, b) = (self.thigh, self.calf);
        let cos_k = ((length * length - a * a - b * b) / (2.0 * a * b)).clamp(-1.0, 1.0);
        -cos_k.acos()
    }

    pub fn max_length(&self) -> f64 {
        self.thigh + self.calf
    }

    /// Foot position relative to the hip, body frame.
    pub fn forward(&self, q: [f64; 3]) -> Vector3<f64> {
        let [abd, hip, knee] = q;
        let xs = -self.thigh * hip.sin() - self.calf * (hip + knee).sin();
        let zs = -self.thigh * hip.cos() - self.calf * (hip + knee).cos();
        Vector3::new(xs, -abd.sin() * zs, abd.cos() * zs)
    }

    /// Joint angles that place the foot at `foot` (hip frame). Lengths beyond
    /// the reachable range are clamped.
    pub fn inverse(&self, foot: &Vector3<f64>) -> [f64; 3] {
        let abd = foot.y.atan2(-foot.z);
        let zs = -(foot.y * foot.y + foot.z * foot.z).sqrt();
        let xs = foot.x;
        let length = (xs * xs + zs * zs).sqrt().min(self.max_length());
        let knee = self.knee_for_length(length);
        let direction = (-xs).atan2(-zs);
        // Equal segments: the foot direction bisects thigh and calf, so the
        // general form reduces to direction - knee / 2.
        let hip = direction - self.thigh_offset(knee);
        [abd, hip, knee]
    }

    /// Angle between the thigh and the hip-to-foot line.
    fn thigh_offset(&self, knee: f64) -> f64 {
        let (a, b) = (self.thigh, self.calf);
        // Foot angle measured from the thigh direction.
        let x = a + b * knee.cos();
        let y = b * knee.sin();
        y.atan2(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LEG: LegGeometry = LegGeometry {
        thigh: 0.2,
        calf: 0.2,
    };

    #[test]
    fn nominal_leg_is_vertical() {
        let p = LEG.forward([0.0, 0.9, -1.8]);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((-p.z - LEG.length(-1.8)).abs() < 1e-12);
    }

    #[test]
    fn length_inverse() {
        for k in 1..=27 {
            let knee = -(k as f64) * 0.1;
            let l = LEG.length(knee);
            assert!((LEG.knee_for_length(l) - knee).abs() < 1e-9, "knee {knee}");
        }
    }

    #[test]
    fn fk_ik_round_trip() {
        for abd in [-0.3, 0.0, 0.2] {
            for hip in [0.2, 0.9, 1.4] {
                for knee in [-2.4, -1.8, -1.0] {
                    let q = [abd, hip, knee];
                    let p = LEG.forward(q);
                    let back = LEG.inverse(&p);
                    for i in 0..3 {
                        assert!((back[i] - q[i]).abs() < 1e-9, "{q:?} -> {back:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn unequal_segments_round_trip() {
        let leg = LegGeometry { thigh: 0.22, calf: 0.18 };
        let q = [0.1, 0.7, -1.5];
        let back = leg.inverse(&leg.forward(q));
        for i in 0..3 {
            assert!((back[i] - q[i]).abs() < 1e-9);
        }
    }
}
