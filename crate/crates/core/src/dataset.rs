//! Dataset export format: one header line, then one record per line.
//!
//! The header carries the schema version and a CRC-64/XZ over the record
//! lines (each including its trailing newline) in order. Encoding is a pure
//! function of the records, so equal inputs give identical bytes.

use std::collections::HashMap;

use converge_sim::trace::{RecordKind, TraceRecord};
use crc::{Crc, CRC_64_XZ};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;
pub const FORMAT: &str = "converge-trace";
pub const CHECKSUM_ALGORITHM: &str = "CRC-64/XZ";

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub schema_version: u32,
    pub dataset_id: String,
    pub session_id: String,
    pub record_count: u64,
    pub checksum_algorithm: String,
    pub checksum: String,
}

/// Metadata of a dataset held by the repository.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub session_id: String,
    pub schema_version: u32,
    pub record_count: u64,
    pub checksum: Option<String>,
    /// Sealed datasets never change again.
    pub immutable: bool,
}

impl From<&Header> for Dataset {
    fn from(h: &Header) -> Self {
        Dataset {
            dataset_id: h.dataset_id.clone(),
            session_id: h.session_id.clone(),
            schema_version: h.schema_version,
            record_count: h.record_count,
            checksum: Some(h.checksum.clone()),
            immutable: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported schema_version {0}")]
    UnsupportedSchema(u32),
    #[error("checksum mismatch: header says {expected}, content is {actual}")]
    ChecksumMismatch { expected: String, actual: String },
    #[error("header announces {expected} records, found {actual}")]
    CountMismatch { expected: u64, actual: u64 },
    #[error("line {line}: timestamp {got} precedes {last} on stream {stream}")]
    NonMonotonic { line: usize, stream: String, last: f64, got: f64 },
}

pub fn stream_label(r: &TraceRecord) -> String {
    let (kind, device, sub) = r.stream_key();
    if sub.is_empty() {
        format!("{kind}/{device}")
    } else {
        format!("{kind}/{device}/{sub}")
    }
}

/// Tracks the last timestamp per stream.
#[derive(Debug, Clone, Default)]
pub struct StreamClock {
    last: HashMap<(RecordKind, String, String), f64>,
}

impl StreamClock {
    /// Checks `r` against its stream without recording it.
    pub fn check(&self, r: &TraceRecord) -> Result<(), (f64, f64)> {
        if !r.timestamp_s.is_finite() {
            return Err((f64::NAN, r.timestamp_s));
        }
        match self.last.get(&r.stream_key()) {
            Some(&last) if r.timestamp_s < last => Err((last, r.timestamp_s)),
            _ => Ok(()),
        }
    }

    pub fn observe(&mut self, r: &TraceRecord) {
        self.last.insert(r.stream_key(), r.timestamp_s);
    }
}

pub fn record_line(r: &TraceRecord) -> String {
    let mut line = serde_json::to_string(r).expect("trace records always serialize");
    line.push('\n');
    line
}

pub fn checksum_hex(bytes: &[u8]) -> String {
    format!("{:016x}", CRC64.checksum(bytes))
}

/// Serializes a dataset in export format.
pub fn encode(dataset_id: &str, session_id: &str, records: &[TraceRecord]) -> Vec<u8> {
    let body: String = records.iter().map(record_line).collect();
    let header = Header {
        format: FORMAT.into(),
        schema_version: SCHEMA_VERSION,
        dataset_id: dataset_id.into(),
        session_id: session_id.into(),
        record_count: records.len() as u64,
        checksum_algorithm: CHECKSUM_ALGORITHM.into(),
        checksum: checksum_hex(body.as_bytes()),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(body.as_bytes());
    out
}

/// Reads only the header line.
pub fn decode_header(bytes: &[u8]) -> Result<Header, DatasetError> {
    let end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let header: Header = serde_json::from_slice(&bytes[..end])
        .map_err(|e| DatasetError::Malformed { line: 1, message: format!("bad header: {e}") })?;
    if header.format != FORMAT {
        return Err(DatasetError::Malformed { line: 1, message: format!("format is `{}`", header.format) });
    }
    if header.checksum_algorithm != CHECKSUM_ALGORITHM {
        return Err(DatasetError::Malformed {
            line: 1,
            message: format!("unsupported checksum algorithm `{}`", header.checksum_algorithm),
        });
    }
    Ok(header)
}

/// Parses and verifies an exported dataset: checksum, record count and
/// per-stream timestamp order.
pub fn decode(bytes: &[u8]) -> Result<(Header, Vec<TraceRecord>), DatasetError> {
    let header = decode_header(bytes)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::UnsupportedSchema(header.schema_version));
    }
    let start = bytes.iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| i + 1);
    let body = &bytes[start..];
    let actual = checksum_hex(body);
    if actual != header.checksum {
        return Err(DatasetError::ChecksumMismatch { expected: header.checksum.clone(), actual });
    }
    let text = std::str::from_utf8(body).map_err(|e| DatasetError::Malformed { line: 2, message: e.to_string() })?;
    let mut records = Vec::new();
    let mut clock = StreamClock::default();
    for (i, line) in text.lines().enumerate() {
        let r: TraceRecord = serde_json::from_str(line)
            .map_err(|e| DatasetError::Malformed { line: i + 2, message: e.to_string() })?;
        if let Err((last, got)) = clock.check(&r) {
            return Err(DatasetError::NonMonotonic { line: i + 2, stream: stream_label(&r), last, got });
        }
        clock.observe(&r);
        records.push(r);
    }
    if records.len() as u64 != header.record_count {
        return Err(DatasetError::CountMismatch { expected: header.record_count, actual: records.len() as u64 });
    }
    Ok((header, records))
}

/// Selection for trace queries. The time range is half-open: `from_s <= t < to_s`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceFilter {
    pub from_s: Option<f64>,
    pub to_s: Option<f64>,
    pub kind: Option<RecordKind>,
    pub device_id: Option<String>,
}

impl TraceFilter {
    pub fn matches(&self, r: &TraceRecord) -> bool {
        self.from_s.is_none_or(|f| r.timestamp_s >= f)
            && self.to_s.is_none_or(|t| r.timestamp_s < t)
            && self.kind.is_none_or(|k| r.kind() == k)
            && self.device_id.as_ref().is_none_or(|d| &r.device_id == d)
    }

    /// Matching records in time order; ties keep storage order.
    pub fn apply<'a>(&self, records: impl IntoIterator<Item = &'a TraceRecord>) -> Vec<TraceRecord> {
        let mut out: Vec<TraceRecord> = records.into_iter().filter(|r| self.matches(r)).cloned().collect();
        out.sort_by(|a, b| a.timestamp_s.total_cmp(&b.timestamp_s));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use converge_sim::trace::{EventPayload, Payload};

    fn event(t: f64, device: &str) -> TraceRecord {
        TraceRecord {
            session_id: "s".into(),
            timestamp_s: t,
            device_id: device.into(),
            position_m: [0.1, 0.2, 0.30000000000000004],
            payload: Payload::Event(EventPayload { event: "x".into(), ..Default::default() }),
        }
    }

    #[test]
    fn crc64_xz_check_value() {
        // Standard check input for CRC catalogues.
        assert_eq!(checksum_hex(b"123456789"), "995dc9bbdf1939fa");
    }

    #[test]
    fn round_trip_and_tamper_detection() {
        let recs = vec![event(0.0, "a"), event(0.5, "b"), event(0.5, "a")];
        let bytes = encode("ds", "s", &recs);
        let (h, back) = decode(&bytes).unwrap();
        assert_eq!(back, recs);
        assert_eq!(h.record_count, 3);
        assert_eq!(encode("ds", "s", &back), bytes);

        let mut tampered = bytes.clone();
        let n = tampered.len();
        tampered[n - 3] ^= 1;
        assert!(matches!(decode(&tampered), Err(DatasetError::ChecksumMismatch { .. })));
    }

    #[test]
    fn stream_order_is_verified() {
        let recs = vec![event(1.0, "a"), event(0.5, "b"), event(0.5, "a")];
        let bytes = encode("ds", "s", &recs);
        assert!(matches!(decode(&bytes), Err(DatasetError::NonMonotonic { line: 4, .. })));
    }

    #[test]
    fn other_schema_versions_are_refused() {
        let bytes = encode("ds", "s", &[]);
        let text = String::from_utf8(bytes).unwrap().replace("\"schema_version\":1", "\"schema_version\":2");
        assert_eq!(decode(text.as_bytes()), Err(DatasetError::UnsupportedSchema(2)));
        assert_eq!(decode_header(text.as_bytes()).unwrap().schema_version, 2);
    }

    #[test]
    fn filter_is_half_open_and_time_ordered() {
        let recs = vec![event(0.2, "a"), event(0.1, "b"), event(0.3, "a")];
        let f = TraceFilter { from_s: Some(0.1), to_s: Some(0.3), ..Default::default() };
        let got: Vec<f64> = f.apply(&recs).iter().map(|r| r.timestamp_s).collect();
        assert_eq!(got, [0.1, 0.2]);
        let empty = TraceFilter { from_s: Some(0.2), to_s: Some(0.2), ..Default::default() };
        assert!(empty.apply(&recs).is_empty());
        let dev = TraceFilter { device_id: Some("a".into()), kind: Some(RecordKind::Event), ..Default::default() };
        assert_eq!(dev.apply(&recs).len(), 2);
    }
}
