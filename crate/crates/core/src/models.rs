//! Model registry and in-process inference.
//!
//! Schemas are deliberately small: a document is a JSON object whose
//! top-level fields are declared with a type, required or optional.
//! Builtin models also reject inputs their typed decoder cannot read.

use std::collections::BTreeMap;

use converge_sim::channel::Segment;
use converge_sim::geometry::Vec3;
use converge_sim::vision::{update_track, BoundingBox, Detection, Track};
use converge_sim::xapp::{predict_blockage, ObjectExtent};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::CoreError;

pub const BLOCKAGE_MODEL_ID: &str = "cv-blockage-linear";
pub const BLOCKAGE_MODEL_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InvocationKind {
    Builtin,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Number,
    String,
    Boolean,
    Array,
    Object,
    Any,
}

impl FieldType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            FieldType::Number => v.is_number(),
            FieldType::String => v.is_string(),
            FieldType::Boolean => v.is_boolean(),
            FieldType::Array => v.is_array(),
            FieldType::Object => v.is_object(),
            FieldType::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaDescriptor {
    #[serde(default)]
    pub required: BTreeMap<String, FieldType>,
    #[serde(default)]
    pub optional: BTreeMap<String, FieldType>,
}

impl SchemaDescriptor {
    pub fn validate(&self, doc: &Value) -> Result<(), String> {
        let obj = doc.as_object().ok_or("document must be an object")?;
        for (name, ty) in &self.required {
            match obj.get(name) {
                None => return Err(format!("missing field `{name}`")),
                Some(v) if !ty.accepts(v) => return Err(format!("field `{name}` must be {ty:?}").to_lowercase()),
                _ => {}
            }
        }
        for (name, v) in obj {
            if self.required.contains_key(name) {
                continue;
            }
            match self.optional.get(name) {
                None => return Err(format!("unexpected field `{name}`")),
                Some(ty) if !v.is_null() && !ty.accepts(v) => {
                    return Err(format!("field `{name}` must be {ty:?}").to_lowercase())
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub model_id: String,
    pub version: String,
    pub input_schema: SchemaDescriptor,
    pub output_schema: SchemaDescriptor,
    pub invocation: InvocationKind,
    #[serde(default)]
    pub description: String,
    /// Where an external model is served; informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl ModelEntry {
    pub fn key(&self) -> String {
        format!("{}/{}", self.model_id, self.version)
    }
}

type Builtin = fn(&Value) -> Result<Value, CoreError>;

fn builtin(model_id: &str, version: &str) -> Option<Builtin> {
    match (model_id, version) {
        (BLOCKAGE_MODEL_ID, BLOCKAGE_MODEL_VERSION) => Some(blockage_linear),
        _ => None,
    }
}

pub fn blockage_model_entry() -> ModelEntry {
    let schema = |req: &[(&str, FieldType)], opt: &[(&str, FieldType)]| SchemaDescriptor {
        required: req.iter().map(|(k, t)| (k.to_string(), *t)).collect(),
        optional: opt.iter().map(|(k, t)| (k.to_string(), *t)).collect(),
    };
    ModelEntry {
        model_id: BLOCKAGE_MODEL_ID.into(),
        version: BLOCKAGE_MODEL_VERSION.into(),
        input_schema: schema(
            &[("tracks", FieldType::Array), ("segment", FieldType::Object), ("horizon_s", FieldType::Number)],
            &[("now_s", FieldType::Number)],
        ),
        output_schema: schema(&[("predictions", FieldType::Array)], &[]),
        invocation: InvocationKind::Builtin,
        description: "Constant-velocity box extrapolation against a line-of-sight segment".into(),
        endpoint: None,
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockageInput {
    tracks: Vec<TrackInput>,
    segment: SegmentInput,
    horizon_s: f64,
    /// Defaults to the latest observation time.
    #[serde(default)]
    now_s: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackInput {
    object_id: String,
    half_extents_m: [f64; 3],
    observations: Vec<Observation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Observation {
    t: f64,
    position_m: [f64; 3],
    #[serde(default = "full_confidence")]
    confidence: f64,
}

fn full_confidence() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentInput {
    from: [f64; 3],
    to: [f64; 3],
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn blockage_linear(input: &Value) -> Result<Value, CoreError> {
    let input: BlockageInput =
        serde_json::from_value(input.clone()).map_err(|e| CoreError::SchemaMismatch(e.to_string()))?;
    if !(input.horizon_s > 0.0 && input.horizon_s.is_finite()) {
        return Err(CoreError::SchemaMismatch("horizon_s must be > 0".into()));
    }
    let mut tracks = Vec::new();
    let mut extents = Vec::new();
    let mut latest = f64::NEG_INFINITY;
    for t in input.tracks {
        let mut track = Track::new(t.object_id.clone());
        for o in t.observations {
            latest = latest.max(o.t);
            let det = Detection {
                timestamp_s: o.t,
                camera_id: String::new(),
                object_id: t.object_id.clone(),
                bbox_px: BoundingBox { u_min: 0.0, v_min: 0.0, u_max: 0.0, v_max: 0.0 },
                world_position_m: v3(o.position_m),
                confidence: o.confidence.clamp(0.0, 1.0),
            };
            track = update_track(&track, det).map_err(|e| CoreError::SchemaMismatch(e.to_string()))?;
        }
        extents.push(ObjectExtent { object_id: t.object_id, half_extents_m: v3(t.half_extents_m) });
        tracks.push(track);
    }
    let segment = Segment { from: v3(input.segment.from), to: v3(input.segment.to) };
    let now = input.now_s.unwrap_or(if latest.is_finite() { latest } else { 0.0 });
    let predictions: Vec<Value> = predict_blockage(&tracks, &segment, &extents, input.horizon_s, now)
        .into_iter()
        .map(|p| {
            json!({
                "object_id": p.object_id,
                // JSON has no infinity; null means no blockage within the horizon.
                "time_to_block_s": p.time_to_block_s.is_finite().then_some(p.time_to_block_s),
                "crossing_point_m": p.crossing_point_m.map(|c| [c.x, c.y, c.z]),
                "confidence": p.confidence,
            })
        })
        .collect();
    Ok(json!({ "predictions": predictions }))
}

#[derive(Debug, Clone)]
pub struct ModelRegistry {
    entries: BTreeMap<(String, String), ModelEntry>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(blockage_model_entry()).expect("builtin registers");
        r
    }

    pub fn register(&mut self, entry: ModelEntry) -> Result<ModelEntry, CoreError> {
        let bad = |s: &str| s.is_empty() || s.contains(['/', ':']) || s.chars().any(char::is_whitespace);
        if bad(&entry.model_id) {
            return Err(CoreError::invalid("model_id", "must be non-empty without `/`, `:` or spaces"));
        }
        if bad(&entry.version) {
            return Err(CoreError::invalid("version", "must be non-empty without `/`, `:` or spaces"));
        }
        if entry.invocation == InvocationKind::Builtin && builtin(&entry.model_id, &entry.version).is_none() {
            return Err(CoreError::invalid("invocation", format!("no builtin implements {}", entry.key())));
        }
        let key = (entry.model_id.clone(), entry.version.clone());
        if self.entries.contains_key(&key) {
            return Err(CoreError::DuplicateModel(entry.key()));
        }
        self.entries.insert(key, entry.clone());
        Ok(entry)
    }

    pub fn get(&self, model_id: &str, version: &str) -> Result<&ModelEntry, CoreError> {
        self.entries
            .get(&(model_id.to_string(), version.to_string()))
            .ok_or_else(|| CoreError::UnknownModel(format!("{model_id}/{version}")))
    }

    pub fn list(&self) -> Vec<ModelEntry> {
        self.entries.values().cloned().collect()
    }

    pub fn invoke(&self, model_id: &str, version: &str, input: &Value) -> Result<Value, CoreError> {
        let entry = self.get(model_id, version)?;
        entry.input_schema.validate(input).map_err(CoreError::SchemaMismatch)?;
        let output = match entry.invocation {
            InvocationKind::Builtin => builtin(model_id, version).expect("checked at registration")(input)?,
            InvocationKind::External => return Err(CoreError::NotInvocable(entry.key())),
        };
        entry
            .output_schema
            .validate(&output)
            .map_err(|e| CoreError::SchemaMismatch(format!("model output: {e}")))?;
        Ok(output)
    }
}
