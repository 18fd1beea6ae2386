//! Shared geometric primitives. Right-handed frame, z up, meters, origin at
//! the chamber corner. Yaw rotates about z; a pose's local +x is "forward".

use nalgebra::{UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Pose {
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self { position, orientation }
    }

    /// Pose at `position` with identity orientation (facing +x).
    pub fn at(position: Vec3) -> Self {
        Self::new(position, UnitQuaternion::identity())
    }

    /// Builds a pose from yaw (about z), pitch (about y) and roll (about x), radians.
    pub fn from_ypr(position: Vec3, yaw: f64, pitch: f64, roll: f64) -> Self {
        Self::new(position, UnitQuaternion::from_euler_angles(roll, pitch, yaw))
    }

    /// Returns (yaw, pitch, roll) in radians.
    pub fn ypr(&self) -> (f64, f64, f64) {
        let (roll, pitch, yaw) = self.orientation.euler_angles();
        (yaw, pitch, roll)
    }

    /// Local +x axis in world coordinates.
    pub fn forward(&self) -> Vec3 {
        self.orientation * Vec3::x()
    }

    /// Expresses a world point in this pose's local frame.
    pub fn to_local(&self, world: &Vec3) -> Vec3 {
        self.orientation.inverse() * (world - self.position)
    }

    /// Rotates a world direction into the local frame.
    pub fn dir_to_local(&self, world_dir: &Vec3) -> Vec3 {
        self.orientation.inverse() * world_dir
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.orientation * local + self.position
    }
}

/// Axis-aligned box, closed on all faces.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center_size(center: Vec3, size: Vec3) -> Self {
        let half = size * 0.5;
        Self::new(center - half, center + half)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_extents(&self) -> Vec3 {
        (self.max - self.min) * 0.5
    }

    /// Same extents, moved so that its center is `center`.
    pub fn recentered(&self, center: Vec3) -> Self {
        let half = self.half_extents();
        Self::new(center - half, center + half)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// Slab method: the parameter interval `[t_enter, t_exit]` over which
    /// `origin + t * dir` lies inside the box, or `None` if the line misses.
    /// `dir` need not be normalized.
    pub fn line_interval(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let t1 = (self.min[i] - origin[i]) * inv;
            let t2 = (self.max[i] - origin[i]) * inv;
            t_enter = t_enter.max(t1.min(t2));
            t_exit = t_exit.min(t1.max(t2));
            if t_enter > t_exit {
                return None;
            }
        }
        Some((t_enter, t_exit))
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(std::f64::consts::TAU);
    // rem_euclid can return exactly TAU for tiny negative inputs.
    if w >= std::f64::consts::TAU {
        0.0
    } else {
        w
    }
}

/// Signed circular difference `a - b` wrapped into `(-π, π]`.
pub fn circular_diff(a: f64, b: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn yaw_rotates_forward_about_z() {
        let p = Pose::from_ypr(Vec3::zeros(), std::f64::consts::FRAC_PI_2, 0.0, 0.0);
        let f = p.forward();
        assert!((f - Vec3::y()).norm() < 1e-12);
        let (yaw, pitch, roll) = p.ypr();
        assert!((yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!(pitch.abs() < 1e-12 && roll.abs() < 1e-12);
    }

    #[test]
    fn local_world_round_trip() {
        let p = Pose::from_ypr(Vec3::new(1.0, 2.0, 3.0), 0.3, -0.2, 0.1);
        let w = Vec3::new(4.0, -1.0, 0.5);
        assert!((p.to_world(&p.to_local(&w)) - w).norm() < 1e-12);
    }

    #[test]
    fn wrap_phase_range() {
        assert_eq!(wrap_phase(-1e-300), 0.0);
        assert!((wrap_phase(-0.5) - (std::f64::consts::TAU - 0.5)).abs() < 1e-15);
        assert!((circular_diff(0.1, 6.2) - (0.1 + std::f64::consts::TAU - 6.2)).abs() < 1e-12);
    }
}
