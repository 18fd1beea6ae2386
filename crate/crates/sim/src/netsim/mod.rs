//! Fixed-tick network simulator. Each tick positions the scene, evaluates
//! every path for every beam, runs the cameras and the optional controller,
//! advances the beam state machine and emits trace records.

pub mod adaptation;
pub mod codebook;
pub mod fsm;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    noise_power_dbm, path_gain_db, path_kinds, placed_panel, trace_path, ChannelError, ChannelParams, LinkState,
    PanelSet, Path, PathKind, ProfileSet,
};
use crate::geometry::{Pose, Vec3};
use crate::ris::{
    design_focusing_profile, design_steering_profile, quantize_profile, PhaseProfile, RisError, GAIN_FLOOR_DB,
};
use crate::scenario::{ProfileInit, Scenario};
use crate::scene::{Obstacle, Scene, SceneError, Trajectory};
use crate::trace::{DetectionPayload, EventPayload, Payload, RadioPayload, RisProfilePayload, TraceRecord};
use crate::vision::{detect_objects, CameraModel, Detection, VisionError};
use crate::xapp::VisionAidedXapp;

use adaptation::McsTable;
use codebook::BeamCodebook;
use fsm::{beam_fsm_step, BeamFsmState, BeamMeasurement, BeamMode, FsmConfig, FsmError, FsmEvent, FsmInput, ProactiveSwitch};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub tick_s: f64,
    pub detection_window_s: f64,
    pub duration_s: f64,
    pub rng_seed: u64,
    pub overhead_fraction: f64,
    pub mcs_table: McsTable,
    pub codebook: BeamCodebook,
    pub tx_id: String,
    pub rx_id: String,
}

impl SimConfig {
    pub fn total_ticks(&self) -> u64 {
        (self.duration_s / self.tick_s + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Policy {
    #[default]
    Reactive,
    Proactive,
}

impl Policy {
    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Reactive => "REACTIVE",
            Policy::Proactive => "PROACTIVE",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "REACTIVE" => Ok(Policy::Reactive),
            "PROACTIVE" => Ok(Policy::Proactive),
            other => Err(format!("unknown policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    SetPlacement { device_id: String, pose: Pose },
    SetRisProfile { lis_id: String, profile: PhaseProfile },
    InjectObstacle { obstacle: Obstacle, trajectory: Option<Trajectory> },
    RemoveObstacle { obstacle_id: String },
    ProactiveSwitch(ProactiveSwitch),
    SetPolicy(Policy),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Ris(#[from] RisError),
    #[error(transparent)]
    Vision(#[from] VisionError),
    #[error(transparent)]
    Fsm(#[from] FsmError),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error("simulation already reached its duration")]
    Finished,
}

/// One candidate route as seen this tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PathView {
    /// Geometry and occlusion; `gain_db` excludes the transmit antenna.
    pub path: Path,
    /// Beam that serves this path at full gain.
    pub beam: usize,
    /// SNR through `beam`.
    pub snr_db: f64,
}

impl PathView {
    pub fn kind(&self) -> &PathKind {
        &self.path.kind
    }
}

/// What a controller sees on each tick.
pub struct TickView<'a> {
    pub now_s: f64,
    pub tick: u64,
    pub scene: &'a Scene,
    pub detections: &'a [Detection],
    pub paths: &'a [PathView],
    pub serving: &'a PathKind,
    pub mode: BeamMode,
    pub outage_threshold_db: f64,
}

/// Per-tick decision hook (the xApp). Proactive switches returned here are
/// applied on the same tick; any other command takes effect on the next one.
pub trait Controller {
    fn on_tick(&mut self, view: &TickView<'_>) -> Vec<Command>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    /// Authored scene, trajectories unresolved.
    pub base_scene: Scene,
    /// Scene positioned at `t_s`.
    pub scene: Scene,
    pub t_s: f64,
    pub tick: u64,
    pub link: LinkState,
    pub beam_fsm: BeamFsmState,
    pub ris_profiles: ProfileSet,
    pub pending_commands: Vec<Command>,
    pub policy: Policy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchLatency {
    pub completed_at_s: f64,
    pub latency_s: f64,
    pub proactive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: Policy,
    pub ticks: u64,
    pub duration_s: f64,
    pub outage_ticks: u64,
    pub outage_s: f64,
    pub mean_throughput_bps: f64,
    pub switch_count: usize,
    pub switch_latencies: Vec<SwitchLatency>,
    /// Simulated seconds spent in each beam mode.
    pub mode_time_s: BTreeMap<BeamMode, f64>,
}

#[derive(Debug, Clone, Default)]
struct Stats {
    ticks: u64,
    outage_ticks: u64,
    throughput_sum: f64,
    latencies: Vec<SwitchLatency>,
    mode_ticks: [u64; 4],
}

/// Records and state-machine events produced by one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub records: Vec<TraceRecord>,
    pub events: Vec<FsmEvent>,
}

pub struct Simulation {
    session_id: String,
    config: SimConfig,
    radio: ChannelParams,
    panels: PanelSet,
    cameras: Vec<CameraModel>,
    world: WorldState,
    stats: Stats,
    announce_profiles: BTreeSet<String>,
}

fn pos(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn initial_profile(scene: &Scene, panels: &PanelSet, lis_id: &str, init: ProfileInit, tx_id: &str, rx_id: &str, radio: &ChannelParams) -> Result<PhaseProfile, SimError> {
    let panel = placed_panel(scene, panels, lis_id)?;
    let wave = radio.wave();
    let tx = scene.device(tx_id)?.pose.position;
    let rx = scene.device(rx_id)?.pose.position;
    let c = panel.pose.position;
    let designed = match init {
        ProfileInit::Zero => Ok(PhaseProfile::uniform(panel.rows, panel.cols, 0.0)),
        ProfileInit::Steer => design_steering_profile(&panel, &(tx - c), &(rx - c), &wave),
        ProfileInit::Focus => design_focusing_profile(&panel, &tx, &rx, &wave),
    };
    // A panel that cannot see both ends reflects nothing useful; keep it specular.
    let profile = designed.unwrap_or_else(|_| PhaseProfile::uniform(panel.rows, panel.cols, 0.0));
    Ok(quantize_to_panel(profile, panel.quantization_bits))
}

fn quantize_to_panel(profile: PhaseProfile, bits: u8) -> PhaseProfile {
    if bits == 0 || profile.quantization_bits == bits {
        profile
    } else {
        quantize_profile(&profile, bits)
    }
}

impl Simulation {
    pub fn new(scenario: &Scenario, policy: Policy, session_id: impl Into<String>) -> Result<Self, SimError> {
        let config = scenario.sim.clone();
        let base_scene = scenario.scene.clone();
        let scene = base_scene.at_time(0.0);
        let mut ris_profiles = ProfileSet::new();
        for (id, init) in &scenario.profile_init {
            let p = initial_profile(&scene, &scenario.panels, id, *init, &config.tx_id, &config.rx_id, &scenario.radio)?;
            ris_profiles.insert(id.clone(), p);
        }
        let mut sim = Self {
            session_id: session_id.into(),
            radio: scenario.radio,
            panels: scenario.panels.clone(),
            cameras: scenario.cameras.clone(),
            world: WorldState {
                base_scene,
                scene: scene.clone(),
                t_s: 0.0,
                tick: 0,
                link: LinkState {
                    serving_path: trace_path(&scene, &config.tx_id, &config.rx_id, &PathKind::Direct)?,
                    rx_power_dbm: f64::NEG_INFINITY,
                    snr_db: f64::NEG_INFINITY,
                    mcs_index: None,
                    throughput_bps: 0.0,
                    beam_index: None,
                    timestamp_s: 0.0,
                },
                beam_fsm: BeamFsmState::tracking(0, PathKind::Direct),
                ris_profiles,
                pending_commands: Vec::new(),
                policy,
            },
            stats: Stats::default(),
            announce_profiles: scenario.profile_init.keys().cloned().collect(),
            config,
        };
        // Initial acquisition: the strongest beam/path pair at t = 0.
        let views = sim.evaluate_paths(&scene, &sim.world.ris_profiles)?;
        let measurements = sim.measurements(&scene, &views)?;
        let best = measurements
            .iter()
            .fold(None::<&BeamMeasurement>, |acc, m| match acc {
                Some(b) if b.snr_db >= m.snr_db => Some(b),
                _ => Some(m),
            })
            .expect("codebook is never empty");
        sim.world.beam_fsm = BeamFsmState::tracking(best.beam, best.target.clone());
        sim.world.link = sim.serving_link(&scene, &views, &sim.world.beam_fsm, 0.0)?;
        Ok(sim)
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    /// A preset profile for `lis_id` designed against the current placements,
    /// quantized to the panel.
    pub fn design_profile(&self, lis_id: &str, init: ProfileInit) -> Result<PhaseProfile, SimError> {
        if !self.panels.contains_key(lis_id) {
            return Err(SimError::InvalidCommand(format!("`{lis_id}` is not a LIS")));
        }
        let scene = self.world.base_scene.at_time(self.world.t_s);
        initial_profile(&scene, &self.panels, lis_id, init, &self.config.tx_id, &self.config.rx_id, &self.radio)
    }

    pub fn is_finished(&self) -> bool {
        self.world.tick >= self.config.total_ticks()
    }

    /// Validates and queues a command for the next tick.
    pub fn enqueue(&mut self, command: Command) -> Result<(), SimError> {
        self.validate_command(&command)?;
        self.world.pending_commands.push(command);
        Ok(())
    }

    fn validate_command(&self, command: &Command) -> Result<(), SimError> {
        let base = &self.world.base_scene;
        match command {
            Command::SetPlacement { device_id, pose } => {
                base.set_placement(device_id, pose.clone())?;
            }
            Command::SetRisProfile { lis_id, profile } => {
                let panel = self
                    .panels
                    .get(lis_id)
                    .ok_or_else(|| SimError::InvalidCommand(format!("`{lis_id}` is not a LIS")))?;
                if profile.rows != panel.rows || profile.cols != panel.cols {
                    return Err(RisError::ShapeMismatch {
                        rows: panel.rows,
                        cols: panel.cols,
                        profile_rows: profile.rows,
                        profile_cols: profile.cols,
                    }
                    .into());
                }
            }
            Command::InjectObstacle { obstacle, trajectory } => {
                base.with_obstacle(obstacle.clone(), trajectory.clone())?;
            }
            Command::RemoveObstacle { obstacle_id } => {
                base.without_obstacle(obstacle_id)?;
            }
            Command::ProactiveSwitch(cmd) => {
                let kinds = path_kinds(base, &self.config.tx_id, &self.config.rx_id);
                if !kinds.contains(&cmd.target) {
                    return Err(FsmError::InvalidCommand(cmd.target.clone()).into());
                }
            }
            Command::SetPolicy(_) => {}
        }
        Ok(())
    }

    /// Path geometry and gains (without the transmit antenna) for every route.
    fn evaluate_paths(&self, scene: &Scene, profiles: &ProfileSet) -> Result<Vec<PathView>, SimError> {
        let tx_pose = scene.device(&self.config.tx_id)?.pose.clone();
        let base_params = self.radio.with_tx_gain(0.0);
        let wave = self.radio.wave();
        let noise = noise_power_dbm(&self.radio);
        let mut out = Vec::new();
        for kind in path_kinds(scene, &self.config.tx_id, &self.config.rx_id) {
            let mut path = trace_path(scene, &self.config.tx_id, &self.config.rx_id, &kind)?;
            path.gain_db = match &kind {
                PathKind::Direct => path_gain_db(&path, None, &base_params, &wave)?,
                PathKind::ViaLis(id) => {
                    let panel = placed_panel(scene, &self.panels, id)?;
                    let profile = profiles.get(id).ok_or_else(|| ChannelError::MissingProfile(id.clone()))?;
                    path_gain_db(&path, Some((&panel, profile)), &base_params, &wave)?
                }
            };
            let dir = path.departure_dir();
            let beam = self.config.codebook.nearest_beam(&tx_pose, &dir);
            let gt = self.config.codebook.effective_gain_dbi(beam, &tx_pose, &dir);
            let snr_db = self.radio.tx_power_dbm + path.gain_db + gt - noise;
            out.push(PathView { path, beam, snr_db });
        }
        Ok(out)
    }

    /// Best path seen by every beam, in codebook order.
    fn measurements(&self, scene: &Scene, views: &[PathView]) -> Result<Vec<BeamMeasurement>, SimError> {
        let tx_pose = &scene.device(&self.config.tx_id)?.pose;
        let noise = noise_power_dbm(&self.radio);
        Ok(self
            .config
            .codebook
            .beams()
            .iter()
            .map(|b| {
                let mut best: Option<BeamMeasurement> = None;
                for v in views {
                    let gt = self.config.codebook.effective_gain_dbi(b.index, tx_pose, &v.path.departure_dir());
                    let snr_db = self.radio.tx_power_dbm + v.path.gain_db + gt - noise;
                    if best.as_ref().is_none_or(|m| snr_db > m.snr_db) {
                        best = Some(BeamMeasurement { beam: b.index, target: v.path.kind.clone(), snr_db });
                    }
                }
                best.expect("the direct path is always present")
            })
            .collect())
    }

    fn serving_link(&self, scene: &Scene, views: &[PathView], fsm: &BeamFsmState, t: f64) -> Result<LinkState, SimError> {
        let tx_pose = &scene.device(&self.config.tx_id)?.pose;
        let path = match views.iter().find(|v| v.path.kind == fsm.target) {
            Some(v) => {
                let mut path = v.path.clone();
                path.gain_db += self.config.codebook.effective_gain_dbi(fsm.serving_beam, tx_pose, &path.departure_dir());
                path
            }
            None => {
                // The serving LIS disappeared; the link carries nothing.
                let mut path = trace_path(scene, &self.config.tx_id, &self.config.rx_id, &PathKind::Direct)?;
                path.kind = fsm.target.clone();
                path.gain_db = GAIN_FLOOR_DB;
                path
            }
        };
        Ok(LinkState::from_path(
            path,
            &self.radio,
            &self.config.mcs_table,
            self.config.overhead_fraction,
            Some(fsm.serving_beam),
            t,
        ))
    }

    fn camera_fires(&self, camera: &CameraModel, tick: u64) -> bool {
        let frame = |k: u64| (k as f64 * self.config.tick_s * camera.frame_rate_hz + 1e-9).floor() as u64;
        tick == 1 || frame(tick) > frame(tick - 1)
    }

    /// Advances one tick. On error the world is left exactly as it was.
    pub fn step(&mut self, controller: Option<&mut dyn Controller>) -> Result<StepOutput, SimError> {
        if self.is_finished() {
            return Err(SimError::Finished);
        }
        let tick = self.world.tick + 1;
        let t = tick as f64 * self.config.tick_s;
        let mut world = self.world.clone();
        let mut announce = std::mem::take(&mut self.announce_profiles);
        let stats = self.stats.clone();
        let result = self.step_inner(&mut world, &mut announce, controller, tick, t);
        match result {
            Ok(out) => {
                self.world = world;
                Ok(out)
            }
            Err(e) => {
                self.announce_profiles = announce;
                self.stats = stats;
                Err(e)
            }
        }
    }

    fn event(&self, t: f64, device: &str, at: &Vec3, payload: EventPayload) -> TraceRecord {
        TraceRecord {
            session_id: self.session_id.clone(),
            timestamp_s: t,
            device_id: device.to_string(),
            position_m: pos(at),
            payload: Payload::Event(payload),
        }
    }

    fn step_inner(
        &mut self,
        world: &mut WorldState,
        announce: &mut BTreeSet<String>,
        controller: Option<&mut dyn Controller>,
        tick: u64,
        t: f64,
    ) -> Result<StepOutput, SimError> {
        let mut records = Vec::new();
        let mut command = None;

        // Applied commands are echoed as events so clients can confirm them.
        let mut applied = Vec::new();
        for cmd in std::mem::take(&mut world.pending_commands) {
            match cmd {
                Command::SetPlacement { device_id, pose } => {
                    let at = pose.position;
                    world.base_scene = world.base_scene.set_placement(&device_id, pose)?;
                    applied.push((device_id, at, "placement_applied", None));
                }
                Command::SetRisProfile { lis_id, profile } => {
                    let bits = self.panels.get(&lis_id).map_or(0, |p| p.quantization_bits);
                    world.ris_profiles.insert(lis_id.clone(), quantize_to_panel(profile, bits));
                    let at = world.base_scene.device(&lis_id)?.pose.position;
                    announce.insert(lis_id.clone());
                    applied.push((lis_id, at, "ris_profile_applied", None));
                }
                Command::InjectObstacle { obstacle, trajectory } => {
                    let (id, at) = (obstacle.id.clone(), obstacle.bounds.center());
                    world.base_scene = world.base_scene.with_obstacle(obstacle, trajectory)?;
                    applied.push((id, at, "obstacle_injected", None));
                }
                Command::RemoveObstacle { obstacle_id } => {
                    let at = world.base_scene.obstacle(&obstacle_id).map_or(Vec3::zeros(), |o| o.bounds.center());
                    world.base_scene = world.base_scene.without_obstacle(&obstacle_id)?;
                    applied.push((obstacle_id, at, "obstacle_removed", None));
                }
                Command::ProactiveSwitch(c) => command = Some(c),
                Command::SetPolicy(p) => {
                    world.policy = p;
                    let at = world.base_scene.device(&self.config.tx_id)?.pose.position;
                    applied.push((self.config.tx_id.clone(), at, "policy_changed", Some(p.as_str().to_string())));
                }
            }
        }
        let applied: Vec<TraceRecord> = applied
            .into_iter()
            .map(|(device, at, event, detail)| {
                self.event(t, &device, &at, EventPayload { event: event.into(), detail, ..Default::default() })
            })
            .collect();

        let scene = world.base_scene.at_time(t);
        let tx_pos = scene.device(&self.config.tx_id)?.pose.position;
        let views = self.evaluate_paths(&scene, &world.ris_profiles)?;
        let measurements = self.measurements(&scene, &views)?;
        let mut link = self.serving_link(&scene, &views, &world.beam_fsm, t)?;

        let mut detections = Vec::new();
        for cam in &self.cameras {
            if self.camera_fires(cam, tick) {
                detections.extend(detect_objects(&scene, cam, t, self.config.rng_seed)?);
            }
        }

        if world.policy == Policy::Proactive {
            if let Some(ctrl) = controller {
                let view = TickView {
                    now_s: t,
                    tick,
                    scene: &scene,
                    detections: &detections,
                    paths: &views,
                    serving: &world.beam_fsm.target,
                    mode: world.beam_fsm.mode,
                    outage_threshold_db: self.config.mcs_table.outage_threshold_db(),
                };
                for c in ctrl.on_tick(&view) {
                    match c {
                        Command::ProactiveSwitch(p) => {
                            records.push(self.event(
                                t,
                                &self.config.tx_id,
                                &tx_pos,
                                EventPayload {
                                    event: "proactive_switch_requested".into(),
                                    target: Some(p.target.to_string()),
                                    detail: p.object_id.clone(),
                                    ..Default::default()
                                },
                            ));
                            command = Some(p);
                        }
                        other => {
                            self.validate_command(&other)?;
                            world.pending_commands.push(other);
                        }
                    }
                }
            }
        }

        let targets: Vec<(PathKind, usize)> = views.iter().map(|v| (v.path.kind.clone(), v.beam)).collect();
        let fsm_config = FsmConfig {
            tick_s: self.config.tick_s,
            detection_window_s: self.config.detection_window_s,
            sweep_dwell_s: self.config.codebook.sweep_dwell_s,
            outage_threshold_db: self.config.mcs_table.outage_threshold_db(),
        };
        let input = FsmInput {
            now_s: t,
            link_ok: !link.in_outage(),
            command: command.as_ref(),
            measurements: &measurements,
            targets: &targets,
        };
        let (next_fsm, events) = beam_fsm_step(&world.beam_fsm, &input, &fsm_config)?;
        world.beam_fsm = next_fsm;

        let mut switched = false;
        for e in &events {
            let payload = match e {
                FsmEvent::ModeChanged { from, to } => EventPayload {
                    event: "mode_changed".into(),
                    from: Some(from.as_str().into()),
                    to: Some(to.as_str().into()),
                    ..Default::default()
                },
                FsmEvent::SwitchStarted { target, beam, proactive } => EventPayload {
                    event: "switch_started".into(),
                    target: Some(target.to_string()),
                    beam: Some(*beam),
                    proactive: Some(*proactive),
                    ..Default::default()
                },
                FsmEvent::SwitchCompleted { target, beam, proactive, latency_s } => {
                    switched = true;
                    self.stats.latencies.push(SwitchLatency { completed_at_s: t, latency_s: *latency_s, proactive: *proactive });
                    EventPayload {
                        event: "switch_completed".into(),
                        target: Some(target.to_string()),
                        beam: Some(*beam),
                        proactive: Some(*proactive),
                        latency_s: Some(*latency_s),
                        ..Default::default()
                    }
                }
                FsmEvent::SweepRestarted => EventPayload { event: "sweep_restarted".into(), ..Default::default() },
            };
            records.push(self.event(t, &self.config.tx_id, &tx_pos, payload));
        }
        if switched {
            // The new beam is in place for the rest of this tick.
            link = self.serving_link(&scene, &views, &world.beam_fsm, t)?;
        }

        let rx_pos = scene.device(&self.config.rx_id)?.pose.position;
        records.insert(
            0,
            TraceRecord {
                session_id: self.session_id.clone(),
                timestamp_s: t,
                device_id: self.config.rx_id.clone(),
                position_m: pos(&rx_pos),
                payload: Payload::Radio(RadioPayload {
                    rx_power_dbm: link.rx_power_dbm,
                    snr_db: link.snr_db,
                    mcs: link.mcs_index,
                    throughput_bps: link.throughput_bps,
                    serving_path: link.serving_path.kind.to_string(),
                    beam_index: link.beam_index,
                }),
            },
        );
        records.splice(1..1, applied);
        for d in &detections {
            records.push(TraceRecord {
                session_id: self.session_id.clone(),
                timestamp_s: t,
                device_id: d.camera_id.clone(),
                position_m: pos(&d.world_position_m),
                payload: Payload::Detection(DetectionPayload {
                    camera_id: d.camera_id.clone(),
                    object_id: d.object_id.clone(),
                    bbox_px: d.bbox_px,
                    confidence: d.confidence,
                }),
            });
        }
        for lis_id in std::mem::take(announce) {
            if let (Some(profile), Ok(dev)) = (world.ris_profiles.get(&lis_id), scene.device(&lis_id)) {
                records.push(TraceRecord {
                    session_id: self.session_id.clone(),
                    timestamp_s: t,
                    device_id: lis_id.clone(),
                    position_m: pos(&dev.pose.position),
                    payload: Payload::RisProfile(RisProfilePayload::from_profile(profile)),
                });
            }
        }

        self.stats.ticks += 1;
        if link.in_outage() {
            self.stats.outage_ticks += 1;
        }
        self.stats.throughput_sum += link.throughput_bps;
        self.stats.mode_ticks[world.beam_fsm.mode.slot()] += 1;

        world.scene = scene;
        world.t_s = t;
        world.tick = tick;
        world.link = link;
        Ok(StepOutput { records, events })
    }

    pub fn summary(&self) -> Summary {
        let s = &self.stats;
        let tick = self.config.tick_s;
        Summary {
            policy: self.world.policy,
            ticks: s.ticks,
            duration_s: s.ticks as f64 * tick,
            outage_ticks: s.outage_ticks,
            outage_s: s.outage_ticks as f64 * tick,
            mean_throughput_bps: if s.ticks == 0 { 0.0 } else { s.throughput_sum / s.ticks as f64 },
            switch_count: s.latencies.len(),
            switch_latencies: s.latencies.clone(),
            mode_time_s: BeamMode::ALL.iter().map(|m| (*m, s.mode_ticks[m.slot()] as f64 * tick)).collect(),
        }
    }
}

/// Output of a complete run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub records: Vec<TraceRecord>,
    pub summary: Summary,
}

/// Runs a scenario to completion. The proactive policy drives the
/// vision-aided xApp configured in the scenario.
pub fn run_scenario(scenario: &Scenario, policy: Policy, session_id: &str) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(scenario, policy, session_id)?;
    let mut xapp = VisionAidedXapp::new(scenario.xapp);
    let mut records = Vec::new();
    while !sim.is_finished() {
        let out = sim.step(Some(&mut xapp))?;
        records.extend(out.records);
    }
    Ok(RunOutput { records, summary: sim.summary() })
}
