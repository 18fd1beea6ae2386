//! Synthetic video sensing. Cameras are ideal pinholes; detections are
//! produced straight from scene geometry (no rendering), with optional
//! seeded Gaussian jitter, and consumed as velocity-estimating tracks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, Vec3};
use crate::scene::{DeviceKind, Scene};

pub const DEFAULT_TRACK_WINDOW: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VisionError {
    #[error("camera `{0}` is not placed in the scene")]
    UnknownCamera(String),
    #[error("detection at {got}s is not after the last track sample at {last}s")]
    NonMonotonicTimestamp { last: f64, got: f64 },
    #[error("detection is for `{got}` but the track follows `{expected}`")]
    WrongObject { expected: String, got: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub device_id: String,
    pub pose: Pose,
    pub focal_px: f64,
    pub image_width_px: f64,
    pub image_height_px: f64,
    pub frame_rate_hz: f64,
    /// Bounding-box corner jitter.
    pub noise_std_px: f64,
    /// Jitter applied to the reported world position.
    pub position_noise_std_m: f64,
}

impl CameraModel {
    /// Horizontal field of view.
    pub fn fov_rad(&self) -> f64 {
        2.0 * (self.image_width_px / (2.0 * self.focal_px)).atan()
    }

    /// Focal length giving the requested horizontal field of view.
    pub fn focal_for_fov(image_width_px: f64, fov_rad: f64) -> f64 {
        image_width_px / (2.0 * (fov_rad / 2.0).tan())
    }

    /// Raw pinhole projection without bounds checks; `None` behind the camera.
    /// `u` grows with the camera-frame +y axis and `v` grows downward.
    fn project_unbounded(&self, point: &Vec3) -> Option<(f64, f64)> {
        let local = self.pose.to_local(point);
        if local.x <= 1e-9 {
            return None;
        }
        let u = self.image_width_px / 2.0 + self.focal_px * local.y / local.x;
        let v = self.image_height_px / 2.0 - self.focal_px * local.z / local.x;
        Some((u, v))
    }

    fn in_image(&self, u: f64, v: f64) -> bool {
        (0.0..=self.image_width_px).contains(&u) && (0.0..=self.image_height_px).contains(&v)
    }
}

pub fn project_point(camera: &CameraModel, point: &Vec3) -> Option<(f64, f64)> {
    camera.project_unbounded(point).filter(|&(u, v)| camera.in_image(u, v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl BoundingBox {
    fn area(&self) -> f64 {
        (self.u_max - self.u_min).max(0.0) * (self.v_max - self.v_min).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub timestamp_s: f64,
    pub camera_id: String,
    pub object_id: String,
    pub bbox_px: BoundingBox,
    pub world_position_m: Vec3,
    pub confidence: f64,
}

fn stream_seed(seed: u64, camera_id: &str, t: f64) -> u64 {
    // FNV-1a over the camera id, folded with the seed and the time bits.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in camera_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.rotate_left(17) ^ t.to_bits().rotate_left(41)
}

/// One detection per obstacle whose center projects into the frame and is
/// not hidden behind another obstacle. The camera pose comes from the
/// scene placement of `camera.device_id`.
pub fn detect_objects(scene: &Scene, camera: &CameraModel, t: f64, rng_seed: u64) -> Result<Vec<Detection>, VisionError> {
    let placed = scene
        .devices
        .get(&camera.device_id)
        .filter(|d| d.kind == DeviceKind::Camera)
        .ok_or_else(|| VisionError::UnknownCamera(camera.device_id.clone()))?;
    let cam = CameraModel { pose: placed.pose.clone(), ..camera.clone() };
    let eye = cam.pose.position;

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(rng_seed, &cam.device_id, t));
    let pos_noise = Normal::new(0.0, cam.position_noise_std_m.max(0.0)).expect("std is finite");
    let px_noise = Normal::new(0.0, cam.noise_std_px.max(0.0)).expect("std is finite");

    let mut out = Vec::new();
    for obstacle in &scene.obstacles {
        let center = obstacle.bounds.center();
        if project_point(&cam, &center).is_none() {
            continue;
        }
        if center == eye {
            continue;
        }
        let occ = scene.segment_occluded(&eye, &center).expect("endpoints differ");
        if occ.blockers.iter().any(|b| b != &obstacle.id) {
            continue;
        }
        let corners: Vec<(f64, f64)> =
            obstacle.bounds.corners().iter().filter_map(|c| cam.project_unbounded(c)).collect();
        let raw = BoundingBox {
            u_min: corners.iter().map(|c| c.0).fold(f64::INFINITY, f64::min),
            v_min: corners.iter().map(|c| c.1).fold(f64::INFINITY, f64::min),
            u_max: corners.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max),
            v_max: corners.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max),
        };
        let mut bbox = clamp_box(&raw, &cam);
        let confidence = if raw.area() > 0.0 { (bbox.area() / raw.area()).clamp(0.0, 1.0) } else { 1.0 };
        if cam.noise_std_px > 0.0 {
            bbox.u_min += px_noise.sample(&mut rng);
            bbox.v_min += px_noise.sample(&mut rng);
            bbox.u_max += px_noise.sample(&mut rng);
            bbox.v_max += px_noise.sample(&mut rng);
            bbox = clamp_box(&bbox, &cam);
            if bbox.u_min > bbox.u_max {
                std::mem::swap(&mut bbox.u_min, &mut bbox.u_max);
            }
            if bbox.v_min > bbox.v_max {
                std::mem::swap(&mut bbox.v_min, &mut bbox.v_max);
            }
        }
        let mut world_position_m = center;
        if cam.position_noise_std_m > 0.0 {
            for i in 0..3 {
                world_position_m[i] += pos_noise.sample(&mut rng);
            }
        }
        out.push(Detection {
            timestamp_s: t,
            camera_id: cam.device_id.clone(),
            object_id: obstacle.id.clone(),
            bbox_px: bbox,
            world_position_m,
            confidence,
        });
    }
    Ok(out)
}

fn clamp_box(b: &BoundingBox, cam: &CameraModel) -> BoundingBox {
    let cu = |u: f64| u.clamp(0.0, cam.image_width_px);
    let cv = |v: f64| v.clamp(0.0, cam.image_height_px);
    BoundingBox { u_min: cu(b.u_min), v_min: cv(b.v_min), u_max: cu(b.u_max), v_max: cv(b.v_max) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub object_id: String,
    pub history: Vec<Detection>,
    pub velocity_mps: Vec3,
    pub window: usize,
}

impl Track {
    pub fn new(object_id: impl Into<String>) -> Self {
        Self { object_id: object_id.into(), history: Vec::new(), velocity_mps: Vec3::zeros(), window: DEFAULT_TRACK_WINDOW }
    }

    pub fn latest(&self) -> Option<&Detection> {
        self.history.last()
    }
}

/// Appends `detection` and refits the velocity by per-axis least squares
/// over the last `window` samples. Fewer than two samples give zero velocity.
pub fn update_track(track: &Track, detection: Detection) -> Result<Track, VisionError> {
    if detection.object_id != track.object_id {
        return Err(VisionError::WrongObject { expected: track.object_id.clone(), got: detection.object_id });
    }
    if let Some(last) = track.latest() {
        if !(detection.timestamp_s > last.timestamp_s) {
            return Err(VisionError::NonMonotonicTimestamp { last: last.timestamp_s, got: detection.timestamp_s });
        }
    }
    let mut next = track.clone();
    next.history.push(detection);
    let start = next.history.len().saturating_sub(next.window.max(2));
    next.velocity_mps = least_squares_velocity(&next.history[start..]);
    Ok(next)
}

fn least_squares_velocity(samples: &[Detection]) -> Vec3 {
    if samples.len() < 2 {
        return Vec3::zeros();
    }
    let n = samples.len() as f64;
    let t_mean = samples.iter().map(|d| d.timestamp_s).sum::<f64>() / n;
    let p_mean = samples.iter().map(|d| d.world_position_m).sum::<Vec3>() / n;
    let mut stt = 0.0;
    let mut stp = Vec3::zeros();
    for d in samples {
        let dt = d.timestamp_s - t_mean;
        stt += dt * dt;
        stp += (d.world_position_m - p_mean) * dt;
    }
    if stt == 0.0 {
        Vec3::zeros()
    } else {
        stp / stt
    }
}
