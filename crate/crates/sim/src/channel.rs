//! Radio link budget: direct and single-bounce via-LIS paths, free-space
//! loss, penetration loss through blockers, noise and SNR.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::netsim::adaptation::{mcs_from_snr, throughput_bps, McsTable};
use crate::ris::{reflection_gain_db, PhaseProfile, RisPanel, WaveContext, GAIN_FLOOR_DB, SPEED_OF_LIGHT_MPS};
use crate::scene::{DeviceKind, OcclusionReport, Scene, SceneError};

pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("{0} must be > 0")]
    Domain(&'static str),
    #[error("via-LIS path through `{0}` needs a phase profile")]
    MissingProfile(String),
    #[error("no panel description for LIS `{0}`")]
    MissingPanel(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Ris(#[from] crate::ris::RisError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub tx_antenna_gain_dbi: f64,
    pub rx_antenna_gain_dbi: f64,
    pub noise_figure_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            frequency_hz: 28e9,
            bandwidth_hz: 100e6,
            tx_power_dbm: 30.0,
            tx_antenna_gain_dbi: 20.0,
            rx_antenna_gain_dbi: 0.0,
            noise_figure_db: 7.0,
        }
    }
}

impl ChannelParams {
    pub fn wave(&self) -> WaveContext {
        WaveContext::new(self.frequency_hz)
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.frequency_hz > 0.0) {
            return Err(ChannelError::Domain("frequency_hz"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(ChannelError::Domain("bandwidth_hz"));
        }
        Ok(())
    }

    pub fn with_tx_gain(&self, gain_dbi: f64) -> Self {
        Self { tx_antenna_gain_dbi: gain_dbi, ..*self }
    }
}

/// Friis free-space loss `20·log10(4π·d·f/c)`.
pub fn fspl_db(distance_m: f64, frequency_hz: f64) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::Domain("distance_m"));
    }
    if !(frequency_hz > 0.0) {
        return Err(ChannelError::Domain("frequency_hz"));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * distance_m * frequency_hz / SPEED_OF_LIGHT_MPS).log10())
}

pub fn noise_power_dbm(params: &ChannelParams) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * params.bandwidth_hz.log10() + params.noise_figure_db
}

/// Which route a path takes. `Direct` orders before any `ViaLis`, and LIS
/// routes order by id, which is the tie-break for equal-gain paths.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "lis_id", rename_all = "snake_case")]
pub enum PathKind {
    Direct,
    ViaLis(String),
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathKind::Direct => f.write_str("direct"),
            PathKind::ViaLis(id) => write!(f, "via_lis:{id}"),
        }
    }
}

impl std::str::FromStr for PathKind {
    type Err = String;

    /// Inverse of `Display`: `direct` or `via_lis:<id>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "direct" => Ok(PathKind::Direct),
            Some(("via_lis", id)) if !id.is_empty() => Ok(PathKind::ViaLis(id.to_string())),
            _ => Err(format!("unknown path `{s}`, expected `direct` or `via_lis:<id>`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub from: Vec3,
    pub to: Vec3,
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.to - self.from).norm()
    }

    pub fn direction(&self) -> Vec3 {
        (self.to - self.from).normalize()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub kind: PathKind,
    pub segments: Vec<Segment>,
    pub total_length_m: f64,
    pub occlusion: Vec<OcclusionReport>,
    /// End-to-end gain excluding transmit power, dB.
    pub gain_db: f64,
}

impl Path {
    fn new(kind: PathKind, segments: Vec<Segment>, occlusion: Vec<OcclusionReport>) -> Self {
        let total_length_m = segments.iter().map(Segment::length).sum();
        Self { kind, segments, total_length_m, occlusion, gain_db: f64::NEG_INFINITY }
    }

    /// Unit direction in which the path leaves the transmitter.
    pub fn departure_dir(&self) -> Vec3 {
        self.segments[0].direction()
    }

    pub fn penetration_loss_db(&self) -> f64 {
        self.occlusion.iter().map(|o| o.total_penetration_loss_db).sum()
    }

    pub fn is_clear(&self) -> bool {
        self.occlusion.iter().all(|o| !o.occluded)
    }
}

/// Gain of a path, excluding transmit power.
///
/// Direct: `Gt + Gr − FSPL(d) − L_pen`. Via LIS:
/// `Gt + Gr − FSPL(d1) − FSPL(d2) + G_ris − L_pen1 − L_pen2`. A leg arriving
/// from behind the panel reflects nothing and yields the gain floor.
pub fn path_gain_db(
    path: &Path,
    ris: Option<(&RisPanel, &PhaseProfile)>,
    params: &ChannelParams,
    wave: &WaveContext,
) -> Result<f64, ChannelError> {
    let antennas = params.tx_antenna_gain_dbi + params.rx_antenna_gain_dbi;
    match &path.kind {
        PathKind::Direct => {
            let loss = fspl_db(path.segments[0].length(), wave.frequency_hz)?;
            Ok(antennas - loss - path.penetration_loss_db())
        }
        PathKind::ViaLis(id) => {
            let (panel, profile) = ris.ok_or_else(|| ChannelError::MissingProfile(id.clone()))?;
            let (leg_in, leg_out) = (&path.segments[0], &path.segments[1]);
            let free = fspl_db(leg_in.length(), wave.frequency_hz)? + fspl_db(leg_out.length(), wave.frequency_hz)?;
            // Both directions point away from the panel.
            let u_in = -leg_in.direction();
            let u_out = leg_out.direction();
            let normal = panel.normal();
            let reflection = if u_in.dot(&normal) > 0.0 && u_out.dot(&normal) > 0.0 {
                reflection_gain_db(panel, profile, &u_in, &u_out, wave)?
            } else {
                GAIN_FLOOR_DB
            };
            Ok(antennas - free + reflection - path.penetration_loss_db())
        }
    }
}

/// LIS panel descriptions keyed by device id. The panel pose is taken from
/// the scene placement at evaluation time.
pub type PanelSet = BTreeMap<String, RisPanel>;
pub type ProfileSet = BTreeMap<String, PhaseProfile>;

/// Panel description positioned at the LIS's current scene pose.
pub fn placed_panel(scene: &Scene, panels: &PanelSet, lis_id: &str) -> Result<RisPanel, ChannelError> {
    let mut panel = panels.get(lis_id).cloned().ok_or_else(|| ChannelError::MissingPanel(lis_id.to_string()))?;
    panel.pose = scene.device(lis_id)?.pose.clone();
    Ok(panel)
}

/// Builds the geometry and occlusion of one path without evaluating its gain.
pub fn trace_path(scene: &Scene, tx_id: &str, rx_id: &str, kind: &PathKind) -> Result<Path, ChannelError> {
    let tx = scene.device(tx_id)?.pose.position;
    let rx = scene.device(rx_id)?.pose.position;
    let path = match kind {
        PathKind::Direct => {
            let occ = scene.segment_occluded(&tx, &rx)?;
            Path::new(PathKind::Direct, vec![Segment { from: tx, to: rx }], vec![occ])
        }
        PathKind::ViaLis(id) => {
            let lis = scene.device(id)?.pose.position;
            let occ_in = scene.segment_occluded(&tx, &lis)?;
            let occ_out = scene.segment_occluded(&lis, &rx)?;
            Path::new(
                kind.clone(),
                vec![Segment { from: tx, to: lis }, Segment { from: lis, to: rx }],
                vec![occ_in, occ_out],
            )
        }
    };
    Ok(path)
}

/// Traces and evaluates a single path with the given parameters.
pub fn evaluate_path(
    scene: &Scene,
    tx_id: &str,
    rx_id: &str,
    kind: &PathKind,
    panels: &PanelSet,
    profiles: &ProfileSet,
    params: &ChannelParams,
) -> Result<Path, ChannelError> {
    let mut path = trace_path(scene, tx_id, rx_id, kind)?;
    let wave = params.wave();
    path.gain_db = match kind {
        PathKind::Direct => path_gain_db(&path, None, params, &wave)?,
        PathKind::ViaLis(id) => {
            let panel = placed_panel(scene, panels, id)?;
            let profile = profiles.get(id).ok_or_else(|| ChannelError::MissingProfile(id.clone()))?;
            path_gain_db(&path, Some((&panel, profile)), params, &wave)?
        }
    };
    Ok(path)
}

/// Candidate routes from tx to rx: the direct path and one per LIS in the
/// scene.
pub fn path_kinds(scene: &Scene, tx_id: &str, rx_id: &str) -> Vec<PathKind> {
    std::iter::once(PathKind::Direct)
        .chain(
            scene
                .devices_of_kind(DeviceKind::Lis)
                .filter(|d| d.device_id != tx_id && d.device_id != rx_id)
                .map(|d| PathKind::ViaLis(d.device_id.clone())),
        )
        .collect()
}

/// Orders paths by gain, best first; equal gains put the direct path first,
/// then LIS paths by id.
pub fn rank_paths(paths: &mut [Path]) {
    paths.sort_by(|a, b| match b.gain_db.total_cmp(&a.gain_db) {
        Ordering::Equal => a.kind.cmp(&b.kind),
        other => other,
    });
}

/// Direct path plus one via-LIS path per panel, sorted by gain descending.
/// Blocked segments keep their path and pay the blockers' penetration loss.
pub fn enumerate_paths(
    scene: &Scene,
    tx_id: &str,
    rx_id: &str,
    panels: &PanelSet,
    profiles: &ProfileSet,
    params: &ChannelParams,
) -> Result<Vec<Path>, ChannelError> {
    let mut paths = path_kinds(scene, tx_id, rx_id)
        .iter()
        .map(|kind| evaluate_path(scene, tx_id, rx_id, kind, panels, profiles, params))
        .collect::<Result<Vec<_>, _>>()?;
    rank_paths(&mut paths);
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkState {
    pub serving_path: Path,
    pub rx_power_dbm: f64,
    pub snr_db: f64,
    pub mcs_index: Option<u8>,
    pub throughput_bps: f64,
    pub beam_index: Option<usize>,
    pub timestamp_s: f64,
}

impl LinkState {
    /// Fills power, SNR, MCS and throughput for an already-evaluated path.
    pub fn from_path(
        serving_path: Path,
        params: &ChannelParams,
        table: &McsTable,
        overhead_fraction: f64,
        beam_index: Option<usize>,
        timestamp_s: f64,
    ) -> Self {
        let rx_power_dbm = params.tx_power_dbm + serving_path.gain_db;
        let snr_db = rx_power_dbm - noise_power_dbm(params);
        let mcs = mcs_from_snr(snr_db, table);
        Self {
            serving_path,
            rx_power_dbm,
            snr_db,
            mcs_index: mcs.map(|m| m.mcs_index),
            throughput_bps: throughput_bps(mcs.as_ref(), params.bandwidth_hz, overhead_fraction),
            beam_index,
            timestamp_s,
        }
    }

    pub fn in_outage(&self) -> bool {
        self.mcs_index.is_none()
    }
}

/// Link on the best available path at time `t` (the scene is expected to be
/// positioned at `t` already).
#[allow(clippy::too_many_arguments)]
pub fn link_state(
    scene: &Scene,
    tx_id: &str,
    rx_id: &str,
    panels: &PanelSet,
    profiles: &ProfileSet,
    params: &ChannelParams,
    table: &McsTable,
    overhead_fraction: f64,
    t: f64,
) -> Result<LinkState, ChannelError> {
    let paths = enumerate_paths(scene, tx_id, rx_id, panels, profiles, params)?;
    let best = paths.into_iter().next().expect("the direct path is always enumerated");
    Ok(LinkState::from_path(best, params, table, overhead_fraction, None, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fspl_reference_values() {
        assert!((fspl_db(1.0, 28e9).unwrap() - 61.38).abs() < 0.05);
        assert!((fspl_db(10.0, 28e9).unwrap() - 81.38).abs() < 0.05);
        let d = fspl_db(7.0, 3.5e9).unwrap();
        assert!((fspl_db(14.0, 3.5e9).unwrap() - d - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert_eq!(fspl_db(0.0, 28e9), Err(ChannelError::Domain("distance_m")));
        assert_eq!(fspl_db(-1.0, 28e9), Err(ChannelError::Domain("distance_m")));
    }

    #[test]
    fn noise_floor() {
        let p = ChannelParams { bandwidth_hz: 100e6, noise_figure_db: 7.0, ..Default::default() };
        assert_eq!(noise_power_dbm(&p), -87.0);
        let p1 = ChannelParams { bandwidth_hz: 1.0, noise_figure_db: 0.0, ..Default::default() };
        assert_eq!(noise_power_dbm(&p1), -174.0);
        let p10 = ChannelParams { bandwidth_hz: 1e9, ..p };
        assert!((noise_power_dbm(&p10) - noise_power_dbm(&p) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn direct_path_budget() {
        let p = ChannelParams { tx_antenna_gain_dbi: 20.0, rx_antenna_gain_dbi: 20.0, ..Default::default() };
        let wave = p.wave();
        let seg = Segment { from: Vec3::zeros(), to: Vec3::new(5.0, 0.0, 0.0) };
        let mut path = Path::new(PathKind::Direct, vec![seg], vec![OcclusionReport::clear()]);
        let g = path_gain_db(&path, None, &p, &wave).unwrap();
        assert!((g + 35.36).abs() < 0.05, "{g}");
        path.occlusion[0] = OcclusionReport {
            occluded: true,
            blockers: vec!["b".into()],
            total_penetration_loss_db: 30.0,
            first_hit_distance_m: Some(2.0),
        };
        let blocked = path_gain_db(&path, None, &p, &wave).unwrap();
        assert!((blocked - (g - 30.0)).abs() < 1e-12);
    }

    #[test]
    fn via_lis_without_profile_is_an_error() {
        let p = ChannelParams::default();
        let path = Path::new(
            PathKind::ViaLis("lis".into()),
            vec![
                Segment { from: Vec3::zeros(), to: Vec3::new(1.0, 1.0, 0.0) },
                Segment { from: Vec3::new(1.0, 1.0, 0.0), to: Vec3::new(2.0, 0.0, 0.0) },
            ],
            vec![OcclusionReport::clear(), OcclusionReport::clear()],
        );
        assert_eq!(path_gain_db(&path, None, &p, &p.wave()), Err(ChannelError::MissingProfile("lis".into())));
        assert!((path.total_length_m - 2.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn path_kind_ordering_breaks_ties() {
        assert!(PathKind::Direct < PathKind::ViaLis("a".into()));
        assert!(PathKind::ViaLis("a".into()) < PathKind::ViaLis("b".into()));
        let mk = |kind, gain_db| Path { kind, segments: vec![], total_length_m: 0.0, occlusion: vec![], gain_db };
        let mut paths = vec![
            mk(PathKind::ViaLis("b".into()), -50.0),
            mk(PathKind::ViaLis("a".into()), -50.0),
            mk(PathKind::Direct, -50.0),
            mk(PathKind::ViaLis("c".into()), -10.0),
        ];
        rank_paths(&mut paths);
        let order: Vec<String> = paths.iter().map(|p| p.kind.to_string()).collect();
        assert_eq!(order, ["via_lis:c", "direct", "via_lis:a", "via_lis:b"]);
        for text in order {
            assert_eq!(text.parse::<PathKind>().unwrap().to_string(), text);
        }
        assert!("via_lis:".parse::<PathKind>().is_err());
        assert!("lis".parse::<PathKind>().is_err());
    }
}
