//! One thread per RUNNING session. The thread owns the simulation, so all
//! mutations of a session are serialized through its control queue.

use std::sync::mpsc::{self, RecvTimeoutError, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use converge_sim::geometry::Vec3;
use converge_sim::netsim::fsm::BeamMode;
use converge_sim::netsim::Command;
use converge_sim::scenario::ProfileInit;
use converge_sim::scene::DeviceKind;
use converge_sim::xapp::VisionAidedXapp;
use converge_sim::{Policy, Simulation};
use serde::Serialize;

use crate::error::CoreError;
use crate::events::EventHub;
use crate::repository::Repository;

#[derive(Debug, Clone)]
pub enum Request {
    Command(Command),
    RisPreset { lis_id: String, preset: ProfileInit },
    Snapshot,
}

#[derive(Debug, Clone, Serialize)]
pub struct Accepted {
    /// The command takes effect at the start of this tick.
    pub applies_at_tick: u64,
    pub applies_at_s: f64,
}

#[derive(Debug, Clone)]
pub enum Reply {
    Accepted(Accepted),
    Snapshot(Box<WorldSnapshot>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeviceView {
    pub device_id: String,
    pub kind: DeviceKind,
    pub position_m: [f64; 3],
    pub yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObstacleView {
    pub obstacle_id: String,
    pub center_m: [f64; 3],
    pub size_m: [f64; 3],
    pub material_loss_db: f64,
}

/// Positioned world state, enough to draw the chamber and the serving ray.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldSnapshot {
    pub t_s: f64,
    pub tick: u64,
    pub chamber_dims_m: [f64; 3],
    pub devices: Vec<DeviceView>,
    pub obstacles: Vec<ObstacleView>,
    pub serving_path: String,
    /// Polyline of the serving path, transmitter first.
    pub path_points_m: Vec<[f64; 3]>,
    pub beam_index: Option<usize>,
    pub snr_db: f64,
    pub throughput_bps: f64,
    pub mode: BeamMode,
    pub policy: Policy,
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn snapshot(sim: &Simulation) -> WorldSnapshot {
    let w = sim.world();
    let link = &w.link;
    let mut path_points_m: Vec<[f64; 3]> = link.serving_path.segments.iter().map(|s| arr(&s.from)).collect();
    if let Some(last) = link.serving_path.segments.last() {
        path_points_m.push(arr(&last.to));
    }
    WorldSnapshot {
        t_s: w.t_s,
        tick: w.tick,
        chamber_dims_m: arr(&w.scene.chamber_dims),
        devices: w
            .scene
            .devices
            .values()
            .map(|d| DeviceView {
                device_id: d.device_id.clone(),
                kind: d.kind,
                position_m: arr(&d.pose.position),
                yaw_deg: d.pose.ypr().0.to_degrees(),
            })
            .collect(),
        obstacles: w
            .scene
            .obstacles
            .iter()
            .map(|o| ObstacleView {
                obstacle_id: o.id.clone(),
                center_m: arr(&o.bounds.center()),
                size_m: arr(&(o.bounds.half_extents() * 2.0)),
                material_loss_db: o.material_loss_db,
            })
            .collect(),
        serving_path: link.serving_path.kind.to_string(),
        path_points_m,
        beam_index: link.beam_index,
        snr_db: link.snr_db,
        throughput_bps: link.throughput_bps,
        mode: w.beam_fsm.mode,
        policy: w.policy,
    }
}

/// Applies a request on the executor thread.
pub fn handle(sim: &mut Simulation, request: Request) -> Result<Reply, CoreError> {
    let accepted = |sim: &Simulation| {
        let tick = sim.world().tick + 1;
        Reply::Accepted(Accepted { applies_at_tick: tick, applies_at_s: tick as f64 * sim.config().tick_s })
    };
    let reject = |e: converge_sim::netsim::SimError| CoreError::invalid("command", e);
    match request {
        Request::Command(cmd) => {
            sim.enqueue(cmd).map_err(reject)?;
            Ok(accepted(sim))
        }
        Request::RisPreset { lis_id, preset } => {
            let profile = sim.design_profile(&lis_id, preset).map_err(reject)?;
            sim.enqueue(Command::SetRisProfile { lis_id, profile }).map_err(reject)?;
            Ok(accepted(sim))
        }
        Request::Snapshot => Ok(Reply::Snapshot(Box::new(snapshot(sim)))),
    }
}

enum Control {
    Request(Request, mpsc::Sender<Result<Reply, CoreError>>),
    Stop,
}

/// How a run ended on its own.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Completed,
    Failed(String),
}

pub struct ExecutorHandle {
    tx: mpsc::Sender<Control>,
    thread: Option<JoinHandle<()>>,
}

/// Request side of an executor, usable without holding the handle.
#[derive(Clone)]
pub struct ExecutorClient {
    tx: mpsc::Sender<Control>,
}

impl ExecutorClient {
    /// `None` once the executor has exited.
    pub fn request(&self, request: Request) -> Option<Result<Reply, CoreError>> {
        let (reply_tx, reply_rx) = mpsc::channel();
        self.tx.send(Control::Request(request, reply_tx)).ok()?;
        reply_rx.recv().ok()
    }
}

impl ExecutorHandle {
    pub fn client(&self) -> ExecutorClient {
        ExecutorClient { tx: self.tx.clone() }
    }

    /// Stops the run without calling the finish hook and waits for the
    /// thread; every record it published has been acknowledged.
    pub fn stop(mut self) {
        let _ = self.tx.send(Control::Stop);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub struct ExecutorConfig {
    /// Simulated seconds per wall-clock second; 0 runs unpaced.
    pub pace: f64,
}

/// Starts the run. `on_finish` is called from the executor thread when the
/// simulation reaches its duration or fails, never after `stop`.
pub fn spawn(
    mut sim: Simulation,
    mut xapp: VisionAidedXapp,
    repo: Arc<Repository>,
    hub: Arc<EventHub>,
    config: ExecutorConfig,
    on_finish: Box<dyn FnOnce(Outcome) + Send>,
) -> Result<ExecutorHandle, CoreError> {
    let (tx, rx) = mpsc::channel::<Control>();
    let session_id = sim.session_id().to_string();
    let thread = std::thread::Builder::new().name(format!("session-{session_id}")).spawn(move || {
        let start = Instant::now();
        // Returns false once the executor must exit.
        let serve = |msg: Control, sim: &mut Simulation| match msg {
            Control::Stop => false,
            Control::Request(req, reply) => {
                let _ = reply.send(handle(sim, req));
                true
            }
        };
        loop {
            loop {
                match rx.try_recv() {
                    Ok(msg) => {
                        if !serve(msg, &mut sim) {
                            return;
                        }
                    }
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return,
                }
            }
            if sim.is_finished() {
                on_finish(Outcome::Completed);
                return;
            }
            let out = match sim.step(Some(&mut xapp)) {
                Ok(out) => out,
                Err(e) => {
                    on_finish(Outcome::Failed(e.to_string()));
                    return;
                }
            };
            if let Err(e) = repo.append(&session_id, &out.records) {
                on_finish(Outcome::Failed(e.to_string()));
                return;
            }
            for r in &out.records {
                hub.publish_record(r);
            }
            if config.pace > 0.0 {
                let due = start + Duration::from_secs_f64(sim.world().t_s / config.pace);
                loop {
                    let now = Instant::now();
                    if now >= due {
                        break;
                    }
                    match rx.recv_timeout(due - now) {
                        Ok(msg) => {
                            if !serve(msg, &mut sim) {
                                return;
                            }
                        }
                        Err(RecvTimeoutError::Timeout) => break,
                        Err(RecvTimeoutError::Disconnected) => return,
                    }
                }
            }
        }
    })?;
    Ok(ExecutorHandle { tx, thread: Some(thread) })
}
