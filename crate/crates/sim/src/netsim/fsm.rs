//! Beam-management state machine.
//!
//! Reactive recovery: a failed link accrues a detection timer; once it
//! reaches the detection window the gNB sweeps the whole codebook (advancing
//! `tick / dwell` beams per tick), picks the strongest beam above outage and
//! spends one tick switching to it. A proactive switch command skips
//! detection and sweep and goes straight to the switching state.

use serde::{Deserialize, Serialize};

use crate::channel::PathKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BeamMode {
    Tracking,
    FailureDetection,
    Sweeping,
    Switching,
}

impl BeamMode {
    pub const ALL: [BeamMode; 4] = [BeamMode::Tracking, BeamMode::FailureDetection, BeamMode::Sweeping, BeamMode::Switching];

    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BeamMode::Tracking => "TRACKING",
            BeamMode::FailureDetection => "FAILURE_DETECTION",
            BeamMode::Sweeping => "SWEEPING",
            BeamMode::Switching => "SWITCHING",
        }
    }
}

/// What a single beam sees: its best path and the SNR it would deliver.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamMeasurement {
    pub beam: usize,
    pub target: PathKind,
    pub snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProactiveSwitch {
    pub target: PathKind,
    /// Object whose predicted blockage triggered the command, if any.
    pub object_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchPlan {
    pub beam: usize,
    pub target: PathKind,
    pub proactive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamFsmState {
    pub mode: BeamMode,
    pub serving_beam: usize,
    pub target: PathKind,
    pub failure_timer_s: f64,
    /// Beams tested in the current sweep.
    pub sweep_progress: usize,
    pub sweep_elapsed_s: f64,
    pub sweep_best: Option<BeamMeasurement>,
    pub plan: Option<SwitchPlan>,
    /// Time the current recovery episode started (first failure or command).
    pub episode_start_s: Option<f64>,
}

impl BeamFsmState {
    pub fn tracking(serving_beam: usize, target: PathKind) -> Self {
        Self {
            mode: BeamMode::Tracking,
            serving_beam,
            target,
            failure_timer_s: 0.0,
            sweep_progress: 0,
            sweep_elapsed_s: 0.0,
            sweep_best: None,
            plan: None,
            episode_start_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsmConfig {
    pub tick_s: f64,
    pub detection_window_s: f64,
    pub sweep_dwell_s: f64,
    pub outage_threshold_db: f64,
}

pub struct FsmInput<'a> {
    pub now_s: f64,
    pub link_ok: bool,
    pub command: Option<&'a ProactiveSwitch>,
    /// Per-beam measurements in sweep (codebook) order.
    pub measurements: &'a [BeamMeasurement],
    /// Routes a switch may target, with the beam that serves each.
    pub targets: &'a [(PathKind, usize)],
}

#[derive(Debug, Clone, PartialEq)]
pub enum FsmEvent {
    ModeChanged { from: BeamMode, to: BeamMode },
    SwitchStarted { target: PathKind, beam: usize, proactive: bool },
    SwitchCompleted { target: PathKind, beam: usize, proactive: bool, latency_s: f64 },
    SweepRestarted,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FsmError {
    #[error("proactive switch names unknown target `{0}`")]
    InvalidCommand(PathKind),
}

const EPS: f64 = 1e-9;

/// Advances the state machine by one tick.
pub fn beam_fsm_step(
    state: &BeamFsmState,
    input: &FsmInput<'_>,
    config: &FsmConfig,
) -> Result<(BeamFsmState, Vec<FsmEvent>), FsmError> {
    let mut next = state.clone();
    let mut events = Vec::new();

    if let Some(cmd) = input.command {
        let beam = input
            .targets
            .iter()
            .find(|(k, _)| k == &cmd.target)
            .map(|(_, b)| *b)
            .ok_or_else(|| FsmError::InvalidCommand(cmd.target.clone()))?;
        let already_there = state.mode == BeamMode::Tracking && state.target == cmd.target && state.serving_beam == beam;
        let already_switching = state.mode == BeamMode::Switching;
        if !already_there && !already_switching {
            next.plan = Some(SwitchPlan { beam, target: cmd.target.clone(), proactive: true });
            next.failure_timer_s = 0.0;
            next.episode_start_s.get_or_insert(input.now_s);
            enter(&mut next, &mut events, BeamMode::Switching);
            events.push(FsmEvent::SwitchStarted { target: cmd.target.clone(), beam, proactive: true });
            return Ok((next, events));
        }
    }

    match state.mode {
        BeamMode::Tracking => {
            if input.link_ok {
                next.failure_timer_s = 0.0;
            } else {
                next.failure_timer_s = config.tick_s.min(config.detection_window_s);
                next.episode_start_s = Some(input.now_s);
                enter(&mut next, &mut events, BeamMode::FailureDetection);
            }
        }
        BeamMode::FailureDetection => {
            if input.link_ok {
                next.failure_timer_s = 0.0;
                next.episode_start_s = None;
                enter(&mut next, &mut events, BeamMode::Tracking);
            } else {
                next.failure_timer_s = (state.failure_timer_s + config.tick_s).min(config.detection_window_s);
                if next.failure_timer_s >= config.detection_window_s - EPS {
                    start_sweep(&mut next);
                    enter(&mut next, &mut events, BeamMode::Sweeping);
                }
            }
        }
        BeamMode::Sweeping => {
            let total = input.measurements.len();
            next.sweep_elapsed_s = state.sweep_elapsed_s + config.tick_s;
            let reached = ((next.sweep_elapsed_s / config.sweep_dwell_s + EPS).floor() as usize).min(total);
            for m in &input.measurements[state.sweep_progress.min(reached)..reached] {
                if m.snr_db >= config.outage_threshold_db
                    && next.sweep_best.as_ref().is_none_or(|b| m.snr_db > b.snr_db)
                {
                    next.sweep_best = Some(m.clone());
                }
            }
            next.sweep_progress = reached;
            if reached >= total {
                match next.sweep_best.take() {
                    Some(best) => {
                        next.plan = Some(SwitchPlan { beam: best.beam, target: best.target.clone(), proactive: false });
                        enter(&mut next, &mut events, BeamMode::Switching);
                        events.push(FsmEvent::SwitchStarted { target: best.target, beam: best.beam, proactive: false });
                    }
                    None => {
                        start_sweep(&mut next);
                        events.push(FsmEvent::SweepRestarted);
                    }
                }
            }
        }
        BeamMode::Switching => {
            let plan = next.plan.take().expect("switching always carries a plan");
            next.serving_beam = plan.beam;
            next.target = plan.target.clone();
            next.failure_timer_s = 0.0;
            next.sweep_progress = 0;
            next.sweep_elapsed_s = 0.0;
            let latency_s = input.now_s - next.episode_start_s.take().unwrap_or(input.now_s);
            enter(&mut next, &mut events, BeamMode::Tracking);
            events.push(FsmEvent::SwitchCompleted {
                target: plan.target,
                beam: plan.beam,
                proactive: plan.proactive,
                latency_s,
            });
        }
    }
    Ok((next, events))
}

fn start_sweep(state: &mut BeamFsmState) {
    state.sweep_progress = 0;
    state.sweep_elapsed_s = 0.0;
    state.sweep_best = None;
}

fn enter(state: &mut BeamFsmState, events: &mut Vec<FsmEvent>, to: BeamMode) {
    if state.mode != to {
        events.push(FsmEvent::ModeChanged { from: state.mode, to });
        state.mode = to;
    }
}
