//! Vision-aided beam-management xApp: predicts when a tracked object will
//! cut the serving path and requests a switch before it happens.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::channel::{PathKind, Segment};
use crate::geometry::Vec3;
use crate::netsim::fsm::{BeamMode, ProactiveSwitch};
use crate::netsim::{run_scenario, Command, Controller, Policy, SimError, Summary, TickView};
use crate::scenario::Scenario;
use crate::vision::{update_track, Detection, Track};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Fallback {
    /// Prefer the strongest LIS route; fall back to any route.
    #[default]
    #[serde(alias = "best_lis")]
    BestLis,
    /// Strongest route regardless of kind.
    #[serde(alias = "best_beam")]
    BestBeam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchPolicy {
    pub lead_time_s: f64,
    pub confidence_threshold: f64,
    pub preferred_fallback: Fallback,
}

impl Default for SwitchPolicy {
    fn default() -> Self {
        Self { lead_time_s: 0.100, confidence_threshold: 0.5, preferred_fallback: Fallback::BestLis }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XappConfig {
    pub policy: SwitchPolicy,
    /// How far ahead tracks are extrapolated.
    pub horizon_s: f64,
}

impl Default for XappConfig {
    fn default() -> Self {
        Self { policy: SwitchPolicy::default(), horizon_s: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectExtent {
    pub object_id: String,
    pub half_extents_m: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockagePrediction {
    pub object_id: String,
    /// `f64::INFINITY` when no contact happens within the horizon.
    pub time_to_block_s: f64,
    /// Point on the segment where contact first happens.
    pub crossing_point_m: Option<Vec3>,
    pub confidence: f64,
}

impl BlockagePrediction {
    pub fn is_finite(&self) -> bool {
        self.time_to_block_s.is_finite()
    }
}

/// Earliest `τ ∈ [0, horizon]` at which a box of half-extents `half`,
/// centered at `center + velocity·τ`, touches the closed segment. Returns
/// `τ` and the segment parameter `s ∈ [0, 1]` of a contact point.
///
/// Box/segment contact is linear in `(τ, s)` where `s` parameterizes the
/// segment, so this is a two-variable LP; the minimum sits on a vertex of
/// the feasible polygon, found by intersecting constraint pairs.
pub fn earliest_intersection(center: &Vec3, velocity: &Vec3, half: &Vec3, segment: &Segment, horizon_s: f64) -> Option<(f64, f64)> {
    let d = segment.to - segment.from;
    let e = segment.from - center;
    // Rows (a_tau, a_s, b) meaning a_tau·τ + a_s·s ≤ b.
    let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(10);
    for i in 0..3 {
        rows.push((-velocity[i], d[i], half[i] - e[i]));
        rows.push((velocity[i], -d[i], half[i] + e[i]));
    }
    rows.extend([(-1.0, 0.0, 0.0), (1.0, 0.0, horizon_s), (0.0, -1.0, 0.0), (0.0, 1.0, 1.0)]);

    let scale = 1.0 + d.norm() + e.norm() + velocity.norm() * horizon_s + half.norm();
    let tol = 1e-9 * scale;
    let feasible = |tau: f64, s: f64| rows.iter().all(|&(a, b, c)| a * tau + b * s <= c + tol);

    let mut best: Option<(f64, f64)> = None;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a1, b1, c1) = rows[i];
            let (a2, b2, c2) = rows[j];
            let det = a1 * b2 - a2 * b1;
            if det.abs() < 1e-12 {
                continue;
            }
            let tau = (c1 * b2 - c2 * b1) / det;
            let s = (a1 * c2 - a2 * c1) / det;
            if feasible(tau, s) && best.is_none_or(|b| tau < b.0) {
                best = Some((tau, s));
            }
        }
    }
    best.map(|(t, s)| (t.clamp(0.0, horizon_s), s.clamp(0.0, 1.0)))
}

/// Constant-velocity extrapolation of every track against `segment`, one
/// prediction per track with a known extent. Confidence is the latest
/// detection confidence discounted by `exp(-τ / horizon)`, hence 0 for
/// objects that never reach the segment. Sorted by time to block.
pub fn predict_blockage(
    tracks: &[Track],
    segment: &Segment,
    extents: &[ObjectExtent],
    horizon_s: f64,
    now_s: f64,
) -> Vec<BlockagePrediction> {
    let mut out = Vec::new();
    for track in tracks {
        let (Some(last), Some(extent)) = (track.latest(), extents.iter().find(|e| e.object_id == track.object_id))
        else {
            continue;
        };
        let center = last.world_position_m + track.velocity_mps * (now_s - last.timestamp_s);
        let contact = earliest_intersection(&center, &track.velocity_mps, &extent.half_extents_m, segment, horizon_s);
        out.push(match contact {
            Some((tau, s)) => BlockagePrediction {
                object_id: track.object_id.clone(),
                time_to_block_s: tau,
                crossing_point_m: Some(segment.from + (segment.to - segment.from) * s),
                confidence: last.confidence * (-tau / horizon_s).exp(),
            },
            None => BlockagePrediction {
                object_id: track.object_id.clone(),
                time_to_block_s: f64::INFINITY,
                crossing_point_m: None,
                confidence: 0.0,
            },
        });
    }
    out.sort_by(|a, b| a.time_to_block_s.total_cmp(&b.time_to_block_s).then_with(|| a.object_id.cmp(&b.object_id)));
    out
}

/// A route as the xApp sees it: current quality plus the blockage
/// predictions computed against its segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutlook {
    pub kind: PathKind,
    pub beam: usize,
    pub snr_db: f64,
    /// Some segment is occluded right now.
    pub blocked_now: bool,
    pub predictions: Vec<BlockagePrediction>,
}

impl PathOutlook {
    /// Blocked now, or confidently predicted to be within the horizon.
    pub fn threatened(&self, policy: &SwitchPolicy) -> bool {
        self.blocked_now || self.predictions.iter().any(|p| p.is_finite() && p.confidence >= policy.confidence_threshold)
    }
}

/// Switch when a confident blockage of the serving path is due within the
/// lead time and an unthreatened route above outage exists. Predictions on
/// other paths never trigger a switch. A command already issued for the
/// same (object, target) is not repeated.
pub fn decide_switch(
    serving: &PathKind,
    outlooks: &[PathOutlook],
    policy: &SwitchPolicy,
    outage_threshold_db: f64,
    pending: &BTreeSet<(String, PathKind)>,
) -> Option<ProactiveSwitch> {
    let threat = outlooks
        .iter()
        .find(|o| &o.kind == serving)?
        .predictions
        .iter()
        .filter(|p| p.time_to_block_s <= policy.lead_time_s && p.confidence >= policy.confidence_threshold)
        .min_by(|a, b| a.time_to_block_s.total_cmp(&b.time_to_block_s))?;
    let candidates: Vec<&PathOutlook> = outlooks
        .iter()
        .filter(|o| &o.kind != serving && !o.threatened(policy) && o.snr_db >= outage_threshold_db)
        .collect();
    let lis = candidates.iter().copied().filter(|o| matches!(o.kind, PathKind::ViaLis(_)));
    let pick = match policy.preferred_fallback {
        Fallback::BestLis => strongest(lis).or_else(|| strongest(candidates.iter().copied())),
        Fallback::BestBeam => strongest(candidates.iter().copied()),
    }?;
    if pending.contains(&(threat.object_id.clone(), pick.kind.clone())) {
        return None;
    }
    Some(ProactiveSwitch { target: pick.kind.clone(), object_id: Some(threat.object_id.clone()) })
}

/// Highest SNR; ties go to the lower path kind.
fn strongest<'a>(it: impl Iterator<Item = &'a PathOutlook>) -> Option<&'a PathOutlook> {
    it.fold(None, |acc: Option<&PathOutlook>, o| match acc {
        Some(b) if b.snr_db > o.snr_db || (b.snr_db == o.snr_db && b.kind <= o.kind) => Some(b),
        _ => Some(o),
    })
}

/// The controller plugged into the simulator for the proactive policy.
#[derive(Debug, Clone)]
pub struct VisionAidedXapp {
    pub config: XappConfig,
    tracks: BTreeMap<String, Track>,
    pending: BTreeSet<(String, PathKind)>,
}

impl VisionAidedXapp {
    pub fn new(config: XappConfig) -> Self {
        Self { config, tracks: BTreeMap::new(), pending: BTreeSet::new() }
    }

    pub fn tracks(&self) -> impl Iterator<Item = &Track> {
        self.tracks.values()
    }

    /// Merges the detections of one frame (possibly from several cameras)
    /// into one sample per object.
    fn ingest(&mut self, detections: &[Detection]) {
        let mut by_object: BTreeMap<&str, Vec<&Detection>> = BTreeMap::new();
        for d in detections {
            by_object.entry(d.object_id.as_str()).or_default().push(d);
        }
        for (object_id, ds) in by_object {
            let n = ds.len() as f64;
            let fused = Detection {
                timestamp_s: ds[0].timestamp_s,
                camera_id: ds.iter().map(|d| d.camera_id.as_str()).collect::<Vec<_>>().join("+"),
                object_id: object_id.to_string(),
                bbox_px: ds[0].bbox_px,
                world_position_m: ds.iter().map(|d| d.world_position_m).sum::<Vec3>() / n,
                confidence: ds.iter().map(|d| d.confidence).fold(0.0, f64::max),
            };
            let track = self.tracks.entry(object_id.to_string()).or_insert_with(|| Track::new(object_id));
            if let Ok(next) = update_track(track, fused) {
                *track = next;
            }
        }
    }
}

impl Controller for VisionAidedXapp {
    fn on_tick(&mut self, view: &TickView<'_>) -> Vec<Command> {
        self.ingest(view.detections);
        self.tracks.retain(|id, _| view.scene.obstacle(id).is_some());
        self.pending.retain(|(_, target)| target != view.serving);
        if view.mode != BeamMode::Tracking {
            return Vec::new();
        }

        let extents: Vec<ObjectExtent> = view
            .scene
            .obstacles
            .iter()
            .map(|o| ObjectExtent { object_id: o.id.clone(), half_extents_m: o.bounds.half_extents() })
            .collect();
        let tracks: Vec<Track> = self.tracks.values().cloned().collect();
        let outlooks: Vec<PathOutlook> = view
            .paths
            .iter()
            .map(|p| {
                let mut predictions: Vec<BlockagePrediction> = p
                    .path
                    .segments
                    .iter()
                    .flat_map(|s| predict_blockage(&tracks, s, &extents, self.config.horizon_s, view.now_s))
                    .collect();
                predictions.sort_by(|a, b| a.time_to_block_s.total_cmp(&b.time_to_block_s));
                PathOutlook {
                    kind: p.kind().clone(),
                    beam: p.beam,
                    snr_db: p.snr_db,
                    blocked_now: !p.path.is_clear(),
                    predictions,
                }
            })
            .collect();
        let decision =
            decide_switch(view.serving, &outlooks, &self.config.policy, view.outage_threshold_db, &self.pending);
        match decision {
            Some(cmd) => {
                if let Some(obj) = &cmd.object_id {
                    self.pending.insert((obj.clone(), cmd.target.clone()));
                }
                vec![Command::ProactiveSwitch(cmd)]
            }
            None => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub reactive: Summary,
    pub proactive: Summary,
    /// Reactive minus proactive outage.
    pub outage_delta_s: f64,
    /// Proactive minus reactive mean throughput.
    pub throughput_delta_bps: f64,
    /// How long before the reactive run first lost the link the proactive
    /// run had already completed its switch.
    pub switch_lead_s: Option<f64>,
}

/// Runs the scenario under both policies with the scenario's seed.
pub fn evaluate_policies(scenario: &Scenario) -> Result<PolicyComparison, SimError> {
    let reactive = run_scenario(scenario, Policy::Reactive, "reactive")?.summary;
    let proactive = run_scenario(scenario, Policy::Proactive, "proactive")?.summary;
    let first_failure = reactive.switch_latencies.first().map(|l| l.completed_at_s - l.latency_s);
    let first_proactive = proactive.switch_latencies.iter().find(|l| l.proactive).map(|l| l.completed_at_s);
    let switch_lead_s = match (first_failure, first_proactive) {
        (Some(f), Some(p)) => Some(f - p),
        _ => None,
    };
    Ok(PolicyComparison {
        outage_delta_s: reactive.outage_s - proactive.outage_s,
        throughput_delta_bps: proactive.mean_throughput_bps - reactive.mean_throughput_bps,
        switch_lead_s,
        reactive,
        proactive,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vision::BoundingBox;

    fn seg(a: [f64; 3], b: [f64; 3]) -> Segment {
        Segment { from: Vec3::new(a[0], a[1], a[2]), to: Vec3::new(b[0], b[1], b[2]) }
    }

    fn track(id: &str, samples: &[(f64, [f64; 3])]) -> Track {
        let mut t = Track::new(id);
        for &(ts, p) in samples {
            let d = Detection {
                timestamp_s: ts,
                camera_id: "cam".into(),
                object_id: id.into(),
                bbox_px: BoundingBox { u_min: 0.0, v_min: 0.0, u_max: 1.0, v_max: 1.0 },
                world_position_m: Vec3::new(p[0], p[1], p[2]),
                confidence: 1.0,
            };
            t = update_track(&t, d).unwrap();
        }
        t
    }

    #[test]
    fn crossing_object_predicted_at_contact_time() {
        // Box of half-width 0.5 moving +y at 1 m/s from y = 0; path along y = 2.
        let path = seg([0.0, 2.0, 1.0], [10.0, 2.0, 1.0]);
        let t = track("blk", &[(0.0, [5.0, 0.0, 1.0]), (0.1, [5.0, 0.1, 1.0]), (0.2, [5.0, 0.2, 1.0])]);
        let ext = [ObjectExtent { object_id: "blk".into(), half_extents_m: Vec3::new(0.5, 0.5, 0.5) }];
        let p = predict_blockage(&[t], &path, &ext, 3.0, 0.2);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].crossing_point_m.unwrap().y, 2.0);
        assert!((p[0].time_to_block_s - 1.3).abs() < 1e-9, "{:?}", p);
        assert!((p[0].confidence - (-1.3f64 / 3.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn no_prediction_beyond_horizon_or_when_moving_away() {
        let path = seg([0.0, 2.0, 1.0], [10.0, 2.0, 1.0]);
        let ext = [ObjectExtent { object_id: "blk".into(), half_extents_m: Vec3::new(0.5, 0.5, 0.5) }];
        let away = track("blk", &[(0.0, [5.0, 0.0, 1.0]), (0.1, [5.0, -0.1, 1.0])]);
        let p = predict_blockage(&[away], &path, &ext, 10.0, 0.1);
        assert_eq!(p[0].time_to_block_s, f64::INFINITY);
        assert_eq!(p[0].confidence, 0.0);
        let slow = track("blk", &[(0.0, [5.0, 0.0, 1.0]), (1.0, [5.0, 0.1, 1.0])]);
        assert!(!predict_blockage(&[slow], &path, &ext, 1.0, 1.0)[0].is_finite());
        let parallel = track("blk", &[(0.0, [0.0, 0.0, 1.0]), (0.1, [0.1, 0.0, 1.0])]);
        assert!(!predict_blockage(&[parallel], &path, &ext, 10.0, 0.1)[0].is_finite());
    }

    #[test]
    fn already_intersecting_is_immediate() {
        let path = seg([0.0, 0.0, 0.0], [10.0, 0.0, 0.0]);
        let tau = earliest_intersection(&Vec3::new(3.0, 0.0, 0.0), &Vec3::zeros(), &Vec3::new(0.2, 0.2, 0.2), &path, 1.0);
        assert_eq!(tau.map(|t| t.0), Some(0.0));
    }

    fn prediction(ttb: f64, confidence: f64) -> BlockagePrediction {
        BlockagePrediction { object_id: "blk".into(), time_to_block_s: ttb, crossing_point_m: None, confidence }
    }

    fn outlooks(direct: Vec<BlockagePrediction>, lis: Vec<BlockagePrediction>) -> Vec<PathOutlook> {
        vec![
            PathOutlook { kind: PathKind::Direct, beam: 7, snr_db: 30.0, blocked_now: false, predictions: direct },
            PathOutlook { kind: PathKind::ViaLis("lis".into()), beam: 12, snr_db: 15.0, blocked_now: false, predictions: lis },
        ]
    }

    #[test]
    fn spec_style_crossing_at_one_and_a_half_seconds() {
        let path = seg([2.0, -5.0, 1.0], [2.0, 5.0, 1.0]);
        let t = track("blk", &[(0.0, [-0.2, 0.0, 1.0]), (0.1, [-0.1, 0.0, 1.0]), (0.2, [0.0, 0.0, 1.0])]);
        let ext = [ObjectExtent { object_id: "blk".into(), half_extents_m: Vec3::new(0.5, 0.5, 0.5) }];
        let p = predict_blockage(&[t], &path, &ext, 2.0, 0.2);
        assert!((p[0].time_to_block_s - 1.5).abs() < 1e-9);
        assert!((p[0].confidence - (-0.75f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn decide_switch_gates() {
        let policy = SwitchPolicy::default();
        let none = BTreeSet::new();
        let lis = PathKind::ViaLis("lis".into());
        let cmd = decide_switch(&PathKind::Direct, &outlooks(vec![prediction(0.08, 0.9)], vec![]), &policy, 0.0, &none)
            .unwrap();
        assert_eq!(cmd.target, lis);
        assert_eq!(cmd.object_id.as_deref(), Some("blk"));

        let far = outlooks(vec![prediction(5.0, 0.9)], vec![]);
        assert!(decide_switch(&PathKind::Direct, &far, &policy, 0.0, &none).is_none());
        let unsure = outlooks(vec![prediction(0.08, 0.2)], vec![]);
        assert!(decide_switch(&PathKind::Direct, &unsure, &policy, 0.0, &none).is_none());
        // Blockage predicted on a path we are not using.
        let elsewhere = outlooks(vec![], vec![prediction(0.05, 0.9)]);
        assert!(decide_switch(&PathKind::Direct, &elsewhere, &policy, 0.0, &none).is_none());
        // No alternative above outage.
        let near = outlooks(vec![prediction(0.08, 0.9)], vec![]);
        assert!(decide_switch(&PathKind::Direct, &near, &policy, 20.0, &none).is_none());
        // Alternative also threatened.
        let both = outlooks(vec![prediction(0.08, 0.9)], vec![prediction(0.5, 0.6)]);
        assert!(decide_switch(&PathKind::Direct, &both, &policy, 0.0, &none).is_none());

        let pending = BTreeSet::from([("blk".to_string(), lis)]);
        assert!(decide_switch(&PathKind::Direct, &near, &policy, 0.0, &pending).is_none());
    }
}
