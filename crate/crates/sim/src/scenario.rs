//! Scenario documents: the TOML files that author a chamber, its devices,
//! moving objects and the simulator settings. See `scenarios/README.md` for
//! the schema; `schema_version` must be 1.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::channel::{ChannelParams, PanelSet};
use crate::geometry::{Aabb, Pose, Vec3};
use crate::netsim::adaptation::{McsRow, McsTable};
use crate::netsim::codebook::{Beam, BeamCodebook};
use crate::netsim::SimConfig;
use crate::ris::{RisPanel, WaveContext};
use crate::scene::{
    DeviceKind, DevicePlacement, Interpolation, Obstacle, Scene, SceneError, Trajectory, Waypoint,
};
use crate::vision::CameraModel;
use crate::xapp::{Fallback, SwitchPolicy, XappConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// The shipped flagship scenario: a blocker crossing the gNB–UE line of sight
/// at t = 3 s with a wall-mounted LIS as fallback.
pub const FLAGSHIP: &str = include_str!("../../../scenarios/flagship.toml");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

impl ScenarioError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ScenarioError::Validation { field: field.into(), message: message.into() }
    }

    /// Field path of a validation error.
    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Validation { field, .. } => Some(field),
            ScenarioError::Parse(_) => None,
        }
    }
}

impl From<SceneError> for ScenarioError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Validation { field, message } => ScenarioError::Validation { field, message },
            SceneError::OutOfBounds { field } => {
                ScenarioError::Validation { field, message: "lies outside the chamber".into() }
            }
            other => ScenarioError::Validation { field: "scene".into(), message: other.to_string() },
        }
    }
}

/// How a LIS profile is initialized when a simulation starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProfileInit {
    /// Steering profile from the transmitter toward the receiver.
    #[default]
    Steer,
    /// Focusing profile from the transmitter onto the receiver.
    Focus,
    /// All-zero (specular mirror).
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub scene: Scene,
    pub radio: ChannelParams,
    pub panels: PanelSet,
    pub profile_init: BTreeMap<String, ProfileInit>,
    pub cameras: Vec<CameraModel>,
    pub sim: SimConfig,
    pub xapp: XappConfig,
}

impl Scenario {
    pub fn parse(document: &str) -> Result<Self, ScenarioError> {
        let doc: Doc = toml::from_str(document).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        doc.build()
    }

    pub fn flagship() -> Self {
        Self::parse(FLAGSHIP).expect("shipped flagship scenario is valid")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    schema_version: u32,
    #[serde(default)]
    name: Option<String>,
    chamber: ChamberDoc,
    #[serde(default)]
    radio: RadioDoc,
    #[serde(default)]
    sim: SimDoc,
    #[serde(default)]
    codebook: CodebookDoc,
    #[serde(default)]
    mcs: Option<Vec<McsRow>>,
    #[serde(default)]
    xapp: XappDoc,
    #[serde(default)]
    devices: Vec<DeviceDoc>,
    #[serde(default)]
    obstacles: Vec<ObstacleDoc>,
    #[serde(default)]
    trajectories: Vec<TrajectoryDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChamberDoc {
    dims: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RadioDoc {
    frequency_hz: f64,
    bandwidth_hz: f64,
    tx_power_dbm: f64,
    tx_antenna_gain_dbi: f64,
    rx_antenna_gain_dbi: f64,
    noise_figure_db: f64,
}

impl Default for RadioDoc {
    fn default() -> Self {
        let p = ChannelParams::default();
        Self {
            frequency_hz: p.frequency_hz,
            bandwidth_hz: p.bandwidth_hz,
            tx_power_dbm: p.tx_power_dbm,
            tx_antenna_gain_dbi: p.tx_antenna_gain_dbi,
            rx_antenna_gain_dbi: p.rx_antenna_gain_dbi,
            noise_figure_db: p.noise_figure_db,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct SimDoc {
    tick_s: f64,
    detection_window_s: f64,
    duration_s: f64,
    seed: u64,
    overhead_fraction: f64,
    tx: Option<String>,
    rx: Option<String>,
}

impl Default for SimDoc {
    fn default() -> Self {
        Self {
            tick_s: 0.010,
            detection_window_s: 0.040,
            duration_s: 10.0,
            seed: 42,
            overhead_fraction: 0.0,
            tx: None,
            rx: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CodebookDoc {
    count: usize,
    azimuth_start_deg: f64,
    azimuth_step_deg: f64,
    elevation_deg: f64,
    gain_dbi: f64,
    sweep_dwell_s: f64,
    sidelobe_gain_dbi: f64,
    beams: Option<Vec<Beam>>,
}

impl Default for CodebookDoc {
    fn default() -> Self {
        Self {
            count: 16,
            azimuth_start_deg: -56.0,
            azimuth_step_deg: 8.0,
            elevation_deg: 0.0,
            gain_dbi: 15.0,
            sweep_dwell_s: 0.005,
            sidelobe_gain_dbi: -10.0,
            beams: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct XappDoc {
    lead_time_s: f64,
    confidence_threshold: f64,
    horizon_s: f64,
    fallback: Fallback,
}

impl Default for XappDoc {
    fn default() -> Self {
        let p = SwitchPolicy::default();
        Self {
            lead_time_s: p.lead_time_s,
            confidence_threshold: p.confidence_threshold,
            horizon_s: XappConfig::default().horizon_s,
            fallback: p.preferred_fallback,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceDoc {
    id: String,
    kind: DeviceKind,
    position: [f64; 3],
    #[serde(default)]
    yaw_deg: f64,
    #[serde(default)]
    pitch_deg: f64,
    #[serde(default)]
    roll_deg: f64,
    #[serde(default)]
    panel: Option<PanelDoc>,
    #[serde(default)]
    camera: Option<CameraDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PanelDoc {
    rows: usize,
    cols: usize,
    spacing_m: Option<f64>,
    quantization_bits: u8,
    element_gain_dbi: f64,
    profile: ProfileInit,
}

impl Default for PanelDoc {
    fn default() -> Self {
        Self { rows: 16, cols: 16, spacing_m: None, quantization_bits: 2, element_gain_dbi: 5.0, profile: ProfileInit::Steer }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct CameraDoc {
    fov_deg: f64,
    focal_px: Option<f64>,
    image_width_px: f64,
    image_height_px: f64,
    frame_rate_hz: f64,
    noise_std_px: f64,
    position_noise_std_m: f64,
}

impl Default for CameraDoc {
    fn default() -> Self {
        Self {
            fov_deg: 90.0,
            focal_px: None,
            image_width_px: 1280.0,
            image_height_px: 720.0,
            frame_rate_hz: 30.0,
            noise_std_px: 0.0,
            position_noise_std_m: 0.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ObstacleDoc {
    id: String,
    center: [f64; 3],
    size: [f64; 3],
    #[serde(default = "default_material_loss")]
    material_loss_db: f64,
}

fn default_material_loss() -> f64 {
    30.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryDoc {
    target: String,
    #[serde(default)]
    interpolation: Interpolation,
    waypoints: Vec<WaypointDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WaypointDoc {
    t: f64,
    position: [f64; 3],
    #[serde(default)]
    yaw_deg: f64,
    #[serde(default)]
    pitch_deg: f64,
    #[serde(default)]
    roll_deg: f64,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn pose(position: [f64; 3], yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Pose {
    Pose::from_ypr(v3(position), yaw_deg.to_radians(), pitch_deg.to_radians(), roll_deg.to_radians())
}

fn positive(field: &str, value: f64) -> Result<f64, ScenarioError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ScenarioError::invalid(field, "must be > 0"))
    }
}

impl Doc {
    fn build(self) -> Result<Scenario, ScenarioError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ScenarioError::invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let radio = ChannelParams {
            frequency_hz: positive("radio.frequency_hz", self.radio.frequency_hz)?,
            bandwidth_hz: positive("radio.bandwidth_hz", self.radio.bandwidth_hz)?,
            tx_power_dbm: self.radio.tx_power_dbm,
            tx_antenna_gain_dbi: self.radio.tx_antenna_gain_dbi,
            rx_antenna_gain_dbi: self.radio.rx_antenna_gain_dbi,
            noise_figure_db: self.radio.noise_figure_db,
        };
        let wave = WaveContext::new(radio.frequency_hz);

        let mut devices = BTreeMap::new();
        let mut panels = PanelSet::new();
        let mut profile_init = BTreeMap::new();
        let mut cameras = Vec::new();
        for (i, d) in self.devices.into_iter().enumerate() {
            let field = format!("devices[{i}]");
            if devices.contains_key(&d.id) {
                return Err(ScenarioError::invalid(format!("{field}.id"), format!("duplicate device id `{}`", d.id)));
            }
            let p = pose(d.position, d.yaw_deg, d.pitch_deg, d.roll_deg);
            if d.panel.is_some() && d.kind != DeviceKind::Lis {
                return Err(ScenarioError::invalid(format!("{field}.panel"), "only LIS devices carry a panel"));
            }
            if d.camera.is_some() && d.kind != DeviceKind::Camera {
                return Err(ScenarioError::invalid(format!("{field}.camera"), "only cameras carry intrinsics"));
            }
            match d.kind {
                DeviceKind::Lis => {
                    let pd = d.panel.unwrap_or_default();
                    let panel = RisPanel {
                        rows: pd.rows,
                        cols: pd.cols,
                        spacing_m: pd.spacing_m.unwrap_or(wave.wavelength_m() / 2.0),
                        pose: p.clone(),
                        element_gain_dbi: pd.element_gain_dbi,
                        quantization_bits: pd.quantization_bits,
                    };
                    panel.validate().map_err(|e| ScenarioError::invalid(format!("devices.{}.panel", d.id), e.to_string()))?;
                    panels.insert(d.id.clone(), panel);
                    profile_init.insert(d.id.clone(), pd.profile);
                }
                DeviceKind::Camera => {
                    let cd = d.camera.unwrap_or_default();
                    let cf = format!("devices.{}.camera", d.id);
                    let width = positive(&format!("{cf}.image_width_px"), cd.image_width_px)?;
                    let height = positive(&format!("{cf}.image_height_px"), cd.image_height_px)?;
                    let focal = match cd.focal_px {
                        Some(f) => positive(&format!("{cf}.focal_px"), f)?,
                        None => {
                            if !(cd.fov_deg > 0.0 && cd.fov_deg < 180.0) {
                                return Err(ScenarioError::invalid(format!("{cf}.fov_deg"), "must be in (0, 180)"));
                            }
                            CameraModel::focal_for_fov(width, cd.fov_deg.to_radians())
                        }
                    };
                    if !(cd.noise_std_px >= 0.0 && cd.position_noise_std_m >= 0.0) {
                        return Err(ScenarioError::invalid(cf.to_string(), "noise std must be >= 0"));
                    }
                    cameras.push(CameraModel {
                        device_id: d.id.clone(),
                        pose: p.clone(),
                        focal_px: focal,
                        image_width_px: width,
                        image_height_px: height,
                        frame_rate_hz: positive(&format!("{cf}.frame_rate_hz"), cd.frame_rate_hz)?,
                        noise_std_px: cd.noise_std_px,
                        position_noise_std_m: cd.position_noise_std_m,
                    });
                }
                DeviceKind::Gnb | DeviceKind::Ue => {}
            }
            devices.insert(d.id.clone(), DevicePlacement { device_id: d.id, kind: d.kind, pose: p });
        }

        let obstacles = self
            .obstacles
            .into_iter()
            .map(|o| Obstacle {
                id: o.id,
                bounds: Aabb::from_center_size(v3(o.center), v3(o.size)),
                material_loss_db: o.material_loss_db,
            })
            .collect();

        let mut trajectories = BTreeMap::new();
        for (i, t) in self.trajectories.into_iter().enumerate() {
            let waypoints = t
                .waypoints
                .iter()
                .map(|w| Waypoint { time_s: w.t, pose: pose(w.position, w.yaw_deg, w.pitch_deg, w.roll_deg) })
                .collect();
            let traj = Trajectory::new(waypoints, t.interpolation).map_err(|e| match e {
                SceneError::Validation { field, message } => {
                    ScenarioError::invalid(format!("trajectories[{i}].{field}"), message)
                }
                other => ScenarioError::from(other),
            })?;
            if trajectories.insert(t.target.clone(), traj).is_some() {
                return Err(ScenarioError::invalid(format!("trajectories[{i}].target"), "target already has a trajectory"));
            }
        }

        let scene = Scene { chamber_dims: v3(self.chamber.dims), obstacles, devices, trajectories };
        scene.validate()?;

        let pick = |explicit: Option<String>, kind: DeviceKind, field: &str| -> Result<String, ScenarioError> {
            match explicit {
                Some(id) => match scene.devices.get(&id) {
                    Some(d) if d.kind == kind => Ok(id),
                    _ => Err(ScenarioError::invalid(field, format!("`{id}` is not a {kind:?} device"))),
                },
                None => {
                    let mut it = scene.devices_of_kind(kind);
                    match (it.next(), it.next()) {
                        (Some(d), None) => Ok(d.device_id.clone()),
                        (None, _) => Err(ScenarioError::invalid(field, format!("scenario has no {kind:?} device"))),
                        _ => Err(ScenarioError::invalid(field, format!("several {kind:?} devices; name one"))),
                    }
                }
            }
        };
        let tx_id = pick(self.sim.tx, DeviceKind::Gnb, "sim.tx")?;
        let rx_id = pick(self.sim.rx, DeviceKind::Ue, "sim.rx")?;

        let cb = self.codebook;
        let codebook = match cb.beams {
            Some(beams) => BeamCodebook::new(beams, cb.sweep_dwell_s, cb.sidelobe_gain_dbi),
            None => BeamCodebook::azimuth_fan(
                cb.count,
                cb.azimuth_start_deg,
                cb.azimuth_step_deg,
                cb.elevation_deg,
                cb.gain_dbi,
                cb.sweep_dwell_s,
                cb.sidelobe_gain_dbi,
            ),
        }
        .map_err(|e| ScenarioError::invalid("codebook", e.0))?;

        let mcs_table = match self.mcs {
            Some(rows) => McsTable::new(rows).map_err(|e| ScenarioError::invalid("mcs", e.0))?,
            None => McsTable::default(),
        };
        if !(0.0..1.0).contains(&self.sim.overhead_fraction) {
            return Err(ScenarioError::invalid("sim.overhead_fraction", "must be in [0, 1)"));
        }
        let sim = SimConfig {
            tick_s: positive("sim.tick_s", self.sim.tick_s)?,
            detection_window_s: positive("sim.detection_window_s", self.sim.detection_window_s)?,
            duration_s: positive("sim.duration_s", self.sim.duration_s)?,
            rng_seed: self.sim.seed,
            overhead_fraction: self.sim.overhead_fraction,
            mcs_table,
            codebook,
            tx_id,
            rx_id,
        };

        let xapp = XappConfig {
            policy: SwitchPolicy {
                lead_time_s: positive("xapp.lead_time_s", self.xapp.lead_time_s)?,
                confidence_threshold: self.xapp.confidence_threshold,
                preferred_fallback: self.xapp.fallback,
            },
            horizon_s: positive("xapp.horizon_s", self.xapp.horizon_s)?,
        };

        Ok(Scenario {
            name: self.name.unwrap_or_else(|| "unnamed".into()),
            scene,
            radio,
            panels,
            profile_init,
            cameras,
            sim,
            xapp,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
[chamber]
dims = [10.0, 6.0, 4.0]
[[devices]]
id = "gnb"
kind = "gnb"
position = [1.0, 1.0, 2.0]
[[devices]]
id = "ue"
kind = "ue"
position = [5.0, 1.0, 1.5]
"#;

    #[test]
    fn minimal_document() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.scene.devices.len(), 2);
        assert!(s.scene.obstacles.is_empty());
        assert_eq!(s.sim.tx_id, "gnb");
        assert_eq!(s.sim.codebook.len(), 16);
    }

    #[test]
    fn out_of_chamber_names_device_position() {
        let doc = MINIMAL.replace("[1.0, 1.0, 2.0]", "[11.0, 1.0, 2.0]");
        let err = Scenario::parse(&doc).unwrap_err();
        assert_eq!(err.field(), Some("devices.gnb.position"));
    }

    #[test]
    fn malformed_and_versioned() {
        assert!(matches!(Scenario::parse("schema_version = "), Err(ScenarioError::Parse(_))));
        let err = Scenario::parse(&MINIMAL.replace("schema_version = 1", "schema_version = 2")).unwrap_err();
        assert_eq!(err.field(), Some("schema_version"));
        assert!(matches!(Scenario::parse(&format!("{MINIMAL}\nbogus = 1\n")), Err(ScenarioError::Parse(_))));
    }

    #[test]
    fn flagship_has_expected_inventory() {
        let s = Scenario::flagship();
        assert_eq!(s.scene.devices.len(), 5);
        assert_eq!(s.scene.obstacles.len(), 1);
        assert_eq!(s.cameras.len(), 2);
        assert_eq!(s.panels.len(), 1);
        assert_eq!(s.sim.codebook.len(), 16);
        assert_eq!(s.sim.codebook.sweep_dwell_s, 0.005);
        assert_eq!(s.sim.detection_window_s, 0.040);
        assert_eq!(s.sim.tick_s, 0.010);
    }
}
