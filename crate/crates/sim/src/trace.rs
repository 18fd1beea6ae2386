//! Timestamped, space-referenced trace records shared by the simulator,
//! the repository and the dataset format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::vision::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecordKind {
    Radio,
    Detection,
    Event,
    RisProfile,
}

impl RecordKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Radio => "RADIO",
            RecordKind::Detection => "DETECTION",
            RecordKind::Event => "EVENT",
            RecordKind::RisProfile => "RIS_PROFILE",
        }
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "RADIO" => Ok(RecordKind::Radio),
            "DETECTION" => Ok(RecordKind::Detection),
            "EVENT" => Ok(RecordKind::Event),
            "RIS_PROFILE" => Ok(RecordKind::RisProfile),
            other => Err(format!("unknown record kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioPayload {
    pub rx_power_dbm: f64,
    pub snr_db: f64,
    pub mcs: Option<u8>,
    pub throughput_bps: f64,
    pub serving_path: String,
    pub beam_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionPayload {
    pub camera_id: String,
    pub object_id: String,
    pub bbox_px: BoundingBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventPayload {
    pub event: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beam: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proactive: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RisProfilePayload {
    pub rows: usize,
    pub cols: usize,
    pub quantization_bits: u8,
    /// Row-major phase matrix, radians rounded to 6 decimals.
    pub phases_rad: Vec<Vec<f64>>,
}

impl RisProfilePayload {
    pub fn from_profile(profile: &crate::ris::PhaseProfile) -> Self {
        let phases_rad = profile
            .to_matrix()
            .into_iter()
            .map(|row| row.into_iter().map(|p| (p * 1e6).round() / 1e6).collect())
            .collect();
        Self { rows: profile.rows, cols: profile.cols, quantization_bits: profile.quantization_bits, phases_rad }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Payload {
    Radio(RadioPayload),
    Detection(DetectionPayload),
    Event(EventPayload),
    RisProfile(RisProfilePayload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub session_id: String,
    pub timestamp_s: f64,
    pub device_id: String,
    pub position_m: [f64; 3],
    #[serde(flatten)]
    pub payload: Payload,
}

impl TraceRecord {
    pub fn kind(&self) -> RecordKind {
        match self.payload {
            Payload::Radio(_) => RecordKind::Radio,
            Payload::Detection(_) => RecordKind::Detection,
            Payload::Event(_) => RecordKind::Event,
            Payload::RisProfile(_) => RecordKind::RisProfile,
        }
    }

    /// Key of the per-stream ordering invariant. Detections stream per
    /// (camera, object); other kinds per device.
    pub fn stream_key(&self) -> (RecordKind, String, String) {
        let sub = match &self.payload {
            Payload::Detection(d) => d.object_id.clone(),
            _ => String::new(),
        };
        (self.kind(), self.device_id.clone(), sub)
    }
}

/// Link-quality metrics recomputed from a record stream.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StreamMetrics {
    pub radio_records: usize,
    pub outage_s: f64,
    pub mean_throughput_bps: f64,
    pub switch_count: usize,
}

/// Outage is the summed tick length of RADIO records with zero throughput;
/// each record covers the interval since the previous RADIO record.
pub fn metrics_from_records(records: &[TraceRecord]) -> StreamMetrics {
    let mut m = StreamMetrics::default();
    let mut prev_t = 0.0;
    let mut throughput_sum = 0.0;
    for r in records {
        match &r.payload {
            Payload::Radio(p) => {
                m.radio_records += 1;
                if p.throughput_bps == 0.0 {
                    m.outage_s += r.timestamp_s - prev_t;
                }
                throughput_sum += p.throughput_bps;
                prev_t = r.timestamp_s;
            }
            Payload::Event(e) if e.event == "switch_completed" => m.switch_count += 1,
            _ => {}
        }
    }
    if m.radio_records > 0 {
        m.mean_throughput_bps = throughput_sum / m.radio_records as f64;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radio(t: f64, tp: f64) -> TraceRecord {
        TraceRecord {
            session_id: "s".into(),
            timestamp_s: t,
            device_id: "ue".into(),
            position_m: [1.0, 2.0, 0.1 + 0.2],
            payload: Payload::Radio(RadioPayload {
                rx_power_dbm: -53.123456789,
                snr_db: 33.68,
                mcs: if tp > 0.0 { Some(7) } else { None },
                throughput_bps: tp,
                serving_path: "direct".into(),
                beam_index: Some(7),
            }),
        }
    }

    #[test]
    fn json_shape_and_round_trip() {
        let r = radio(0.01, 4.5e8);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"kind\":\"RADIO\""), "{json}");
        let back: TraceRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.kind(), RecordKind::Radio);
        assert_eq!("ris_profile".parse::<RecordKind>(), Ok(RecordKind::RisProfile));
    }

    #[test]
    fn metrics_count_zero_throughput_intervals() {
        let recs = vec![radio(0.01, 1.0), radio(0.02, 0.0), radio(0.03, 0.0), radio(0.04, 3.0)];
        let m = metrics_from_records(&recs);
        assert_eq!(m.radio_records, 4);
        assert!((m.outage_s - 0.02).abs() < 1e-12);
        assert_eq!(m.mean_throughput_bps, 1.0);
    }
}
