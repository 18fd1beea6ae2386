//! Request bodies for session control, and their translation into
//! simulator commands.

use converge_sim::channel::PathKind;
use converge_sim::geometry::{Aabb, Pose, Vec3};
use converge_sim::netsim::fsm::ProactiveSwitch;
use converge_sim::netsim::Command;
use converge_sim::ris::PhaseProfile;
use converge_sim::scenario::ProfileInit;
use converge_sim::scene::{Interpolation, Obstacle, Trajectory, Waypoint};
use converge_sim::Policy;
use serde::Deserialize;

use crate::error::CoreError;
use crate::executor::Request;

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn pose(position: [f64; 3], yaw_deg: f64, pitch_deg: f64, roll_deg: f64) -> Pose {
    Pose::from_ypr(v3(position), yaw_deg.to_radians(), pitch_deg.to_radians(), roll_deg.to_radians())
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementRequest {
    pub position_m: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
    #[serde(default)]
    pub pitch_deg: f64,
    #[serde(default)]
    pub roll_deg: f64,
}

impl PlacementRequest {
    pub fn into_request(self, device_id: &str) -> Request {
        Request::Command(Command::SetPlacement {
            device_id: device_id.into(),
            pose: pose(self.position_m, self.yaw_deg, self.pitch_deg, self.roll_deg),
        })
    }
}

/// Either a preset designed against current placements, or an explicit
/// row-major phase matrix.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisProfileRequest {
    #[serde(default)]
    pub preset: Option<ProfileInit>,
    #[serde(default)]
    pub phases_rad: Option<Vec<Vec<f64>>>,
    /// Bits of the supplied matrix; 0 means continuous.
    #[serde(default)]
    pub quantization_bits: u8,
}

impl RisProfileRequest {
    pub fn into_request(self, lis_id: &str) -> Result<Request, CoreError> {
        match (self.preset, self.phases_rad) {
            (Some(preset), None) => Ok(Request::RisPreset { lis_id: lis_id.into(), preset }),
            (None, Some(m)) => {
                let profile = PhaseProfile::from_matrix(&m, self.quantization_bits)
                    .map_err(|e| CoreError::invalid("phases_rad", e))?;
                Ok(Request::Command(Command::SetRisProfile { lis_id: lis_id.into(), profile }))
            }
            _ => Err(CoreError::invalid("profile", "give exactly one of `preset` or `phases_rad`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub id: String,
    pub center_m: [f64; 3],
    pub size_m: [f64; 3],
    #[serde(default = "default_material_loss")]
    pub material_loss_db: f64,
}

fn default_material_loss() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    /// Session time.
    pub t_s: f64,
    /// Box center for obstacles.
    pub position_m: [f64; 3],
    #[serde(default)]
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    #[serde(default)]
    pub interpolation: Interpolation,
    pub waypoints: Vec<WaypointSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CommandRequest {
    InjectObstacle {
        obstacle: ObstacleSpec,
        #[serde(default)]
        trajectory: Option<TrajectorySpec>,
    },
    RemoveObstacle {
        obstacle_id: String,
    },
    SetPolicy {
        policy: Policy,
    },
    /// Operator-initiated switch; `target` is `direct` or `via_lis:<id>`.
    ProactiveSwitch {
        target: String,
    },
}

impl CommandRequest {
    pub fn into_request(self) -> Result<Request, CoreError> {
        let cmd = match self {
            CommandRequest::InjectObstacle { obstacle, trajectory } => {
                if obstacle.size_m.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                    return Err(CoreError::invalid("obstacle.size_m", "components must be > 0"));
                }
                let trajectory = trajectory
                    .map(|t| {
                        let waypoints = t
                            .waypoints
                            .into_iter()
                            .map(|w| Waypoint { time_s: w.t_s, pose: pose(w.position_m, w.yaw_deg, 0.0, 0.0) })
                            .collect();
                        Trajectory::new(waypoints, t.interpolation).map_err(|e| CoreError::invalid("trajectory", e))
                    })
                    .transpose()?;
                Command::InjectObstacle {
                    obstacle: Obstacle {
                        id: obstacle.id,
                        bounds: Aabb::from_center_size(v3(obstacle.center_m), v3(obstacle.size_m)),
                        material_loss_db: obstacle.material_loss_db,
                    },
                    trajectory,
                }
            }
            CommandRequest::RemoveObstacle { obstacle_id } => Command::RemoveObstacle { obstacle_id },
            CommandRequest::SetPolicy { policy } => Command::SetPolicy(policy),
            CommandRequest::ProactiveSwitch { target } => {
                let target: PathKind = target.parse().map_err(|e: String| CoreError::invalid("target", e))?;
                Command::ProactiveSwitch(ProactiveSwitch { target, object_id: None })
            }
        };
        Ok(Request::Command(cmd))
    }
}
