//! The chamber's world state: geometry, device placements and trajectories,
//! plus the ray and occlusion queries the radio and vision models rely on.
//!
//! Scenes are immutable snapshots. Every mutating operation returns a new
//! `Scene`; `Scene::at_time` resolves trajectories into a positioned snapshot.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Pose, Vec3};
use crate::scenario::{self, ScenarioError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("validation failed at `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("unknown obstacle `{0}`")]
    UnknownObstacle(String),
    #[error("`{field}` lies outside the chamber")]
    OutOfBounds { field: String },
    #[error("ray direction is zero or not finite")]
    DegenerateRay,
    #[error("segment endpoints coincide")]
    DegenerateSegment,
}

impl SceneError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        SceneError::Validation { field: field.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Gnb,
    Ue,
    Lis,
    Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevicePlacement {
    pub device_id: String,
    pub kind: DeviceKind,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub id: String,
    pub bounds: Aabb,
    pub material_loss_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Linear,
    Hold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub time_s: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    pub interpolation: Interpolation,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Waypoint>, interpolation: Interpolation) -> Result<Self, SceneError> {
        if waypoints.is_empty() {
            return Err(SceneError::invalid("waypoints", "trajectory needs at least one waypoint"));
        }
        for (i, pair) in waypoints.windows(2).enumerate() {
            if !(pair[1].time_s > pair[0].time_s) {
                return Err(SceneError::invalid(
                    format!("waypoints[{}].t", i + 1),
                    "waypoint times must be strictly increasing",
                ));
            }
        }
        Ok(Self { waypoints, interpolation })
    }
}

/// Samples a trajectory at time `t`. Ends are held: before the first
/// waypoint the first pose is returned, after the last the last one.
pub fn sample_trajectory(trajectory: &Trajectory, t: f64) -> Pose {
    let wps = &trajectory.waypoints;
    let first = &wps[0];
    let last = &wps[wps.len() - 1];
    if t <= first.time_s {
        return first.pose.clone();
    }
    if t >= last.time_s {
        return last.pose.clone();
    }
    // First waypoint strictly after t; exists because t < last.time_s.
    let next = wps.partition_point(|w| w.time_s <= t);
    let (a, b) = (&wps[next - 1], &wps[next]);
    if t == a.time_s {
        return a.pose.clone();
    }
    match trajectory.interpolation {
        Interpolation::Hold => a.pose.clone(),
        Interpolation::Linear => {
            let s = (t - a.time_s) / (b.time_s - a.time_s);
            let position = a.pose.position + (b.pose.position - a.pose.position) * s;
            let orientation = a
                .pose
                .orientation
                .try_slerp(&b.pose.orientation, s, 1e-12)
                .unwrap_or(a.pose.orientation);
            Pose::new(position, orientation)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub obstacle_id: String,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionReport {
    pub occluded: bool,
    pub blockers: Vec<String>,
    pub total_penetration_loss_db: f64,
    /// Distance from the nearer segment endpoint to the closest blocker face.
    pub first_hit_distance_m: Option<f64>,
}

impl OcclusionReport {
    pub fn clear() -> Self {
        Self { occluded: false, blockers: Vec::new(), total_penetration_loss_db: 0.0, first_hit_distance_m: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub chamber_dims: Vec3,
    pub obstacles: Vec<Obstacle>,
    pub devices: BTreeMap<String, DevicePlacement>,
    /// Keyed by device id or obstacle id. For obstacles, the pose position
    /// is the box center.
    pub trajectories: BTreeMap<String, Trajectory>,
}

/// Parses and validates a scenario document, returning its scene.
pub fn load_scene(document: &str) -> Result<Scene, ScenarioError> {
    Ok(scenario::Scenario::parse(document)?.scene)
}

impl Scene {
    pub fn chamber(&self) -> Aabb {
        Aabb::new(Vec3::zeros(), self.chamber_dims)
    }

    pub fn in_chamber(&self, p: &Vec3) -> bool {
        p.iter().all(|c| c.is_finite()) && self.chamber().contains(p)
    }

    pub fn device(&self, id: &str) -> Result<&DevicePlacement, SceneError> {
        self.devices.get(id).ok_or_else(|| SceneError::UnknownDevice(id.to_string()))
    }

    pub fn obstacle(&self, id: &str) -> Option<&Obstacle> {
        self.obstacles.iter().find(|o| o.id == id)
    }

    pub fn devices_of_kind(&self, kind: DeviceKind) -> impl Iterator<Item = &DevicePlacement> {
        self.devices.values().filter(move |d| d.kind == kind)
    }

    /// Checks every scene invariant, naming the first offending field.
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.chamber_dims.iter().all(|d| d.is_finite() && *d > 0.0) {
            return Err(SceneError::invalid("chamber.dims", "chamber dimensions must be strictly positive"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (i, o) in self.obstacles.iter().enumerate() {
            let field = format!("obstacles[{}]", i);
            if !ids.insert(o.id.as_str()) {
                return Err(SceneError::invalid(format!("{field}.id"), format!("duplicate id `{}`", o.id)));
            }
            if !(0..3).all(|k| o.bounds.min[k] < o.bounds.max[k]) {
                return Err(SceneError::invalid(format!("{field}.size"), "box min corner must be below max corner"));
            }
            if !(o.material_loss_db >= 0.0 && o.material_loss_db.is_finite()) {
                return Err(SceneError::invalid(format!("{field}.material_loss_db"), "must be finite and >= 0"));
            }
            if !self.in_chamber(&o.bounds.min) || !self.in_chamber(&o.bounds.max) {
                return Err(SceneError::OutOfBounds { field: format!("obstacles.{}", o.id) });
            }
        }
        for (id, d) in &self.devices {
            if id != &d.device_id {
                return Err(SceneError::invalid(format!("devices.{id}.id"), "key does not match device id"));
            }
            if !ids.insert(id.as_str()) {
                return Err(SceneError::invalid(format!("devices.{id}.id"), format!("duplicate id `{id}`")));
            }
            if !self.in_chamber(&d.pose.position) {
                return Err(SceneError::OutOfBounds { field: format!("devices.{id}.position") });
            }
        }
        for (target, traj) in &self.trajectories {
            let field = format!("trajectories.{target}");
            Trajectory::new(traj.waypoints.clone(), traj.interpolation)
                .map_err(|e| prefix_field(e, &field))?;
            if let Some(o) = self.obstacle(target) {
                for (i, w) in traj.waypoints.iter().enumerate() {
                    let b = o.bounds.recentered(w.pose.position);
                    if !self.in_chamber(&b.min) || !self.in_chamber(&b.max) {
                        return Err(SceneError::OutOfBounds { field: format!("{field}.waypoints[{i}]") });
                    }
                }
            } else if self.devices.contains_key(target) {
                for (i, w) in traj.waypoints.iter().enumerate() {
                    if !self.in_chamber(&w.pose.position) {
                        return Err(SceneError::OutOfBounds { field: format!("{field}.waypoints[{i}]") });
                    }
                }
            } else {
                return Err(SceneError::invalid(format!("{field}.target"), "no device or obstacle with this id"));
            }
        }
        Ok(())
    }

    /// Returns a copy with `device_id` moved to `pose`. A trajectory bound to
    /// the device is dropped, since the explicit placement overrides it.
    pub fn set_placement(&self, device_id: &str, pose: Pose) -> Result<Scene, SceneError> {
        if !self.devices.contains_key(device_id) {
            return Err(SceneError::UnknownDevice(device_id.to_string()));
        }
        if !self.in_chamber(&pose.position) {
            return Err(SceneError::OutOfBounds { field: format!("devices.{device_id}.position") });
        }
        let mut next = self.clone();
        next.devices.get_mut(device_id).expect("checked above").pose = pose;
        next.trajectories.remove(device_id);
        Ok(next)
    }

    pub fn placement(&self, device_id: &str) -> Result<&Pose, SceneError> {
        Ok(&self.device(device_id)?.pose)
    }

    /// Adds an obstacle (optionally moving), validating the result.
    pub fn with_obstacle(&self, obstacle: Obstacle, trajectory: Option<Trajectory>) -> Result<Scene, SceneError> {
        let mut next = self.clone();
        let id = obstacle.id.clone();
        next.obstacles.push(obstacle);
        if let Some(t) = trajectory {
            next.trajectories.insert(id, t);
        }
        next.validate()?;
        Ok(next)
    }

    pub fn without_obstacle(&self, obstacle_id: &str) -> Result<Scene, SceneError> {
        if self.obstacle(obstacle_id).is_none() {
            return Err(SceneError::UnknownObstacle(obstacle_id.to_string()));
        }
        let mut next = self.clone();
        next.obstacles.retain(|o| o.id != obstacle_id);
        next.trajectories.remove(obstacle_id);
        Ok(next)
    }

    /// Resolves every trajectory at time `t`, returning the positioned
    /// snapshot. Trajectories are kept so the result can be re-sampled.
    pub fn at_time(&self, t: f64) -> Scene {
        let mut next = self.clone();
        for (target, traj) in &self.trajectories {
            let pose = sample_trajectory(traj, t);
            if let Some(d) = next.devices.get_mut(target) {
                d.pose = pose;
            } else if let Some(o) = next.obstacles.iter_mut().find(|o| &o.id == target) {
                o.bounds = o.bounds.recentered(pose.position);
            }
        }
        next
    }

    /// Nearest obstacle hit by the ray. A ray starting inside a box hits it
    /// at distance 0. Ties keep the obstacle listed first.
    pub fn cast_ray(&self, origin: &Vec3, direction: &Vec3) -> Result<Option<Hit>, SceneError> {
        let norm = direction.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(SceneError::DegenerateRay);
        }
        let dir = direction / norm;
        let mut best: Option<Hit> = None;
        for o in &self.obstacles {
            let Some((t_enter, t_exit)) = o.bounds.line_interval(origin, &dir) else { continue };
            if t_exit < 0.0 {
                continue;
            }
            let distance_m = t_enter.max(0.0);
            if best.as_ref().is_none_or(|b| distance_m < b.distance_m) {
                best = Some(Hit { obstacle_id: o.id.clone(), distance_m });
            }
        }
        Ok(best)
    }

    /// Reports every obstacle whose box meets the open segment (a, b).
    /// The result is bit-identical when a and b are swapped.
    pub fn segment_occluded(&self, a: &Vec3, b: &Vec3) -> Result<OcclusionReport, SceneError> {
        if a == b {
            return Err(SceneError::DegenerateSegment);
        }
        // Canonical endpoint order makes the arithmetic identical for (a,b) and (b,a).
        let (p, q) = if lex_less(a, b) { (a, b) } else { (b, a) };
        let d = q - p;
        let length = d.norm();
        let mut report = OcclusionReport::clear();
        let mut first: Option<f64> = None;
        for o in &self.obstacles {
            let Some((t_enter, t_exit)) = o.bounds.line_interval(p, &d) else { continue };
            if t_enter < 1.0 && t_exit > 0.0 {
                report.blockers.push(o.id.clone());
                report.total_penetration_loss_db += o.material_loss_db;
                let from_p = t_enter.max(0.0) * length;
                let from_q = (1.0 - t_exit.min(1.0)) * length;
                let near = from_p.min(from_q);
                first = Some(first.map_or(near, |f: f64| f.min(near)));
            }
        }
        report.occluded = !report.blockers.is_empty();
        report.first_hit_distance_m = first;
        Ok(report)
    }
}

fn lex_less(a: &Vec3, b: &Vec3) -> bool {
    for i in 0..3 {
        if a[i] != b[i] {
            return a[i] < b[i];
        }
    }
    false
}

fn prefix_field(err: SceneError, prefix: &str) -> SceneError {
    match err {
        SceneError::Validation { field, message } => SceneError::Validation { field: format!("{prefix}.{field}"), message },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene_with(obstacles: Vec<Obstacle>) -> Scene {
        let mut devices = BTreeMap::new();
        devices.insert(
            "gnb".to_string(),
            DevicePlacement { device_id: "gnb".into(), kind: DeviceKind::Gnb, pose: Pose::at(Vec3::new(1.0, 1.0, 2.0)) },
        );
        Scene { chamber_dims: Vec3::new(10.0, 6.0, 4.0), obstacles, devices, trajectories: BTreeMap::new() }
    }

    fn unit_box(id: &str, center: Vec3) -> Obstacle {
        Obstacle { id: id.into(), bounds: Aabb::from_center_size(center, Vec3::new(1.0, 1.0, 1.0)), material_loss_db: 30.0 }
    }

    fn free_scene(obstacles: Vec<Obstacle>) -> Scene {
        // Geometry-only tests use coordinates outside the chamber.
        Scene { chamber_dims: Vec3::new(100.0, 100.0, 100.0), obstacles, devices: BTreeMap::new(), trajectories: BTreeMap::new() }
    }

    #[test]
    fn minimal_scene_validates() {
        let s = scene_with(vec![]);
        s.validate().unwrap();
        assert_eq!(s.devices.len(), 1);
        assert!(s.obstacles.is_empty());
    }

    #[test]
    fn out_of_chamber_device_names_position() {
        let mut s = scene_with(vec![]);
        s.devices.get_mut("gnb").unwrap().pose.position = Vec3::new(11.0, 1.0, 2.0);
        let err = s.validate().unwrap_err();
        assert_eq!(err, SceneError::OutOfBounds { field: "devices.gnb.position".into() });
    }

    #[test]
    fn placement_write_read_and_idempotence() {
        let s = scene_with(vec![]);
        let pose = Pose::from_ypr(Vec3::new(5.0, 3.0, 1.5), 0.25, 0.0, 0.0);
        let a = s.set_placement("gnb", pose.clone()).unwrap();
        assert_eq!(a.placement("gnb").unwrap(), &pose);
        let b = a.set_placement("gnb", pose.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            s.set_placement("gnb", Pose::at(Vec3::new(5.0, 7.0, 1.0))).unwrap_err(),
            SceneError::OutOfBounds { field: "devices.gnb.position".into() }
        );
        assert_eq!(s.set_placement("nope", pose).unwrap_err(), SceneError::UnknownDevice("nope".into()));
    }

    #[test]
    fn ray_hits_slab_face() {
        let b = Obstacle {
            id: "b".into(),
            bounds: Aabb::new(Vec3::new(2.0, -1.0, -1.0), Vec3::new(3.0, 1.0, 1.0)),
            material_loss_db: 0.0,
        };
        let s = free_scene(vec![b]);
        let hit = s.cast_ray(&Vec3::zeros(), &Vec3::x()).unwrap().unwrap();
        assert_eq!(hit, Hit { obstacle_id: "b".into(), distance_m: 2.0 });
    }

    #[test]
    fn ray_miss_and_inside() {
        let off = Obstacle {
            id: "b".into(),
            bounds: Aabb::new(Vec3::new(2.0, 5.0, -1.0), Vec3::new(3.0, 6.0, 1.0)),
            material_loss_db: 0.0,
        };
        let s = free_scene(vec![off]);
        assert_eq!(s.cast_ray(&Vec3::zeros(), &Vec3::x()).unwrap(), None);

        let s = free_scene(vec![unit_box("c", Vec3::new(0.0, 0.0, 0.0))]);
        let hit = s.cast_ray(&Vec3::new(0.1, 0.1, 0.1), &Vec3::new(0.0, 3.0, 0.0)).unwrap().unwrap();
        assert_eq!(hit.distance_m, 0.0);
        assert_eq!(s.cast_ray(&Vec3::zeros(), &Vec3::zeros()), Err(SceneError::DegenerateRay));
    }

    #[test]
    fn blocker_on_and_off_segment() {
        let a = Vec3::new(0.0, 0.0, 2.0);
        let b = Vec3::new(5.0, 0.0, 1.5);
        let on = free_scene(vec![unit_box("blk", Vec3::new(2.5, 0.0, 1.75))]);
        let r = on.segment_occluded(&a, &b).unwrap();
        assert!(r.occluded);
        assert_eq!(r.blockers, vec!["blk".to_string()]);
        assert_eq!(r.total_penetration_loss_db, 30.0);
        assert!((r.first_hit_distance_m.unwrap() - 2.0 * (b - a).norm() / 5.0).abs() < 1e-9);

        let off = free_scene(vec![unit_box("blk", Vec3::new(2.5, 3.0, 1.75))]);
        let r = off.segment_occluded(&a, &b).unwrap();
        assert_eq!(r, OcclusionReport::clear());
        assert_eq!(off.segment_occluded(&a, &a), Err(SceneError::DegenerateSegment));
    }

    #[test]
    fn endpoint_touching_face_is_not_occluded() {
        let s = free_scene(vec![unit_box("blk", Vec3::new(0.0, 0.0, 0.0))]);
        let r = s.segment_occluded(&Vec3::new(0.5, 0.0, 0.0), &Vec3::new(3.0, 0.0, 0.0)).unwrap();
        assert!(!r.occluded);
    }

    #[test]
    fn trajectory_sampling() {
        let traj = Trajectory::new(
            vec![
                Waypoint { time_s: 0.0, pose: Pose::at(Vec3::zeros()) },
                Waypoint { time_s: 10.0, pose: Pose::at(Vec3::new(10.0, 0.0, 0.0)) },
            ],
            Interpolation::Linear,
        )
        .unwrap();
        assert_eq!(sample_trajectory(&traj, 5.0).position, Vec3::new(5.0, 0.0, 0.0));
        assert_eq!(sample_trajectory(&traj, 20.0).position, Vec3::new(10.0, 0.0, 0.0));
        assert_eq!(sample_trajectory(&traj, 10.0).position, Vec3::new(10.0, 0.0, 0.0));
        assert_eq!(sample_trajectory(&traj, 0.0).position, Vec3::zeros());

        let hold = Trajectory { interpolation: Interpolation::Hold, ..traj.clone() };
        assert_eq!(sample_trajectory(&hold, 9.99).position, Vec3::zeros());
    }

    #[test]
    fn trajectory_rejects_non_increasing_times() {
        let w = |t| Waypoint { time_s: t, pose: Pose::at(Vec3::zeros()) };
        assert!(Trajectory::new(vec![w(0.0), w(0.0)], Interpolation::Linear).is_err());
        assert!(Trajectory::new(vec![], Interpolation::Linear).is_err());
    }

    #[test]
    fn moving_obstacle_follows_trajectory() {
        let mut s = scene_with(vec![unit_box("blk", Vec3::new(2.0, 2.0, 1.0))]);
        s.trajectories.insert(
            "blk".into(),
            Trajectory::new(
                vec![
                    Waypoint { time_s: 0.0, pose: Pose::at(Vec3::new(2.0, 2.0, 1.0)) },
                    Waypoint { time_s: 2.0, pose: Pose::at(Vec3::new(4.0, 2.0, 1.0)) },
                ],
                Interpolation::Linear,
            )
            .unwrap(),
        );
        s.validate().unwrap();
        let at = s.at_time(1.0);
        assert_eq!(at.obstacle("blk").unwrap().bounds.center(), Vec3::new(3.0, 2.0, 1.0));
    }
}
