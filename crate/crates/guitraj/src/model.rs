//! Shared domain types used by every pipeline stage.
//!
//! All types are immutable after construction and safe to share across
//! worker threads. Canonical JSON encodings are the serde derivations below;
//! maps are `BTreeMap` so serialization order is deterministic.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One candidate video's textual metadata, the unit of coarse filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetadata {
    pub video_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub channel: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub subtitles: Option<String>,
    /// Seconds; must be non-negative.
    #[serde(default)]
    pub duration: f64,
}

/// Three rubric scores on `[1, 5]`: topic relevance, instruction clarity,
/// recording quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawQualityScore")]
pub struct QualityScore {
    pub topic_relevance: f64,
    pub instruction_clarity: f64,
    pub recording_quality: f64,
}

#[derive(Deserialize)]
struct RawQualityScore {
    topic_relevance: f64,
    instruction_clarity: f64,
    recording_quality: f64,
}

impl TryFrom<RawQualityScore> for QualityScore {
    type Error = ModelError;
    fn try_from(raw: RawQualityScore) -> Result<Self, ModelError> {
        QualityScore::new(
            raw.topic_relevance,
            raw.instruction_clarity,
            raw.recording_quality,
        )
    }
}

impl QualityScore {
    pub fn new(
        topic_relevance: f64,
        instruction_clarity: f64,
        recording_quality: f64,
    ) -> Result<Self, ModelError> {
        for (name, v) in [
            ("topic_relevance", topic_relevance),
            ("instruction_clarity", instruction_clarity),
            ("recording_quality", recording_quality),
        ] {
            if !(1.0..=5.0).contains(&v) {
                return Err(ModelError::ScoreOutOfRange {
                    dimension: name.to_string(),
                    value: v,
                });
            }
        }
        Ok(Self {
            topic_relevance,
            instruction_clarity,
            recording_quality,
        })
    }

    /// The minimum of the three dimensions, which is what the quality gate
    /// compares against the threshold.
    pub fn min_dimension(&self) -> f64 {
        self.topic_relevance
            .min(self.instruction_clarity)
            .min(self.recording_quality)
    }
}

/// A point in video time, seconds from the start.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub f64);

impl Timestamp {
    pub fn seconds(&self) -> f64 {
        self.0
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}s", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TimestampError {
    /// MALFORMED_TIMESTAMP
    #[error("MALFORMED_TIMESTAMP: {0:?} is not mm:ss with two-digit seconds 00-59")]
    Malformed(String),
    /// Formatting is only defined for 0..=5999 seconds (mm:ss with mm <= 99).
    #[error("TIMESTAMP_OUT_OF_RANGE: {0} seconds does not fit mm:ss")]
    OutOfRange(f64),
}

impl TimestampError {
    pub fn code(&self) -> &'static str {
        match self {
            TimestampError::Malformed(_) => "MALFORMED_TIMESTAMP",
            TimestampError::OutOfRange(_) => "TIMESTAMP_OUT_OF_RANGE",
        }
    }
}

/// Parse `"mm:ss"` into seconds. Minutes may be one or two digits (max 99);
/// the seconds field must be exactly two digits, 00-59.
pub fn parse_timestamp(text: &str) -> Result<Timestamp, TimestampError> {
    let malformed = || TimestampError::Malformed(text.to_string());
    let (mm, ss) = text.split_once(':').ok_or_else(malformed)?;
    if mm.is_empty() || mm.len() > 2 || ss.len() != 2 {
        return Err(malformed());
    }
    if !mm.bytes().all(|b| b.is_ascii_digit()) || !ss.bytes().all(|b| b.is_ascii_digit()) {
        return Err(malformed());
    }
    let minutes: u32 = mm.parse().map_err(|_| malformed())?;
    let secs: u32 = ss.parse().map_err(|_| malformed())?;
    if secs > 59 {
        return Err(malformed());
    }
    Ok(Timestamp(f64::from(minutes * 60 + secs)))
}

/// Format whole seconds as `"mm:ss"`, zero-padded. Defined on `[0, 5999]`.
pub fn format_timestamp(seconds: f64) -> Result<String, TimestampError> {
    let rounded = seconds.round();
    if !(0.0..=5999.0).contains(&rounded) || !rounded.is_finite() {
        return Err(TimestampError::OutOfRange(seconds));
    }
    let total = rounded as u32;
    Ok(format!("{:02}:{:02}", total / 60, total % 60))
}

/// One tile of a video's `[0, duration]` time axis, at most 240 s long.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub video_id: String,
    /// 1-based position within the video.
    pub index: u32,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

/// Operating system declared for a task; fixes which action space applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Platform {
    Windows,
    Mac,
    Linux,
    Android,
    Ios,
}

impl Platform {
    pub fn class(&self) -> PlatformClass {
        match self {
            Platform::Windows | Platform::Mac | Platform::Linux => PlatformClass::Desktop,
            Platform::Android | Platform::Ios => PlatformClass::Mobile,
        }
    }

    pub fn parse(s: &str) -> Option<Platform> {
        match s.to_ascii_lowercase().as_str() {
            "windows" => Some(Platform::Windows),
            "mac" | "macos" | "osx" => Some(Platform::Mac),
            "linux" => Some(Platform::Linux),
            "android" => Some(Platform::Android),
            "ios" => Some(Platform::Ios),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Platform::Windows => "windows",
            Platform::Mac => "mac",
            Platform::Linux => "linux",
            Platform::Android => "android",
            Platform::Ios => "ios",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlatformClass {
    Desktop,
    Mobile,
}

impl fmt::Display for PlatformClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlatformClass::Desktop => write!(f, "desktop"),
            PlatformClass::Mobile => write!(f, "mobile"),
        }
    }
}

/// One finger's path in a multi-touch gesture: ordered `[y, x]` waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointerPath {
    pub id: i64,
    pub path: Vec<[i64; 2]>,
}

/// Tagged action-parameter value. Keeps validation total: every parameter a
/// backend can legally emit maps onto exactly one of these shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    /// `[y, x]`
    Point([i64; 2]),
    /// `[y1, x1, y2, x2]`
    BBox([i64; 4]),
    Number(f64),
    Text(String),
    TextList(Vec<String>),
    PointerPaths(Vec<PointerPath>),
}

impl ParamValue {
    /// Convert an arbitrary JSON value into the tagged union, or report why
    /// it fits no shape.
    pub fn from_json(value: &serde_json::Value) -> Result<ParamValue, String> {
        use serde_json::Value;
        match value {
            Value::Number(n) => n
                .as_f64()
                .map(ParamValue::Number)
                .ok_or_else(|| "non-finite number".to_string()),
            Value::String(s) => Ok(ParamValue::Text(s.clone())),
            Value::Array(items) => {
                if items.len() == 2 && items.iter().all(|v| v.is_i64()) {
                    let y = items[0].as_i64().unwrap();
                    let x = items[1].as_i64().unwrap();
                    return Ok(ParamValue::Point([y, x]));
                }
                if items.len() == 4 && items.iter().all(|v| v.is_i64()) {
                    let mut c = [0i64; 4];
                    for (dst, src) in c.iter_mut().zip(items) {
                        *dst = src.as_i64().unwrap();
                    }
                    return Ok(ParamValue::BBox(c));
                }
                if items.iter().all(|v| v.is_string()) {
                    return Ok(ParamValue::TextList(
                        items
                            .iter()
                            .map(|v| v.as_str().unwrap().to_string())
                            .collect(),
                    ));
                }
                if items.iter().all(|v| v.is_object()) {
                    let paths: Result<Vec<PointerPath>, _> = items
                        .iter()
                        .map(|v| serde_json::from_value(v.clone()))
                        .collect();
                    if let Ok(paths) = paths {
                        return Ok(ParamValue::PointerPaths(paths));
                    }
                }
                Err("array is not a point, bbox, string list, or pointer paths".to_string())
            }
            other => Err(format!("unsupported JSON value: {other}")),
        }
    }
}

/// One extracted user action, pre-grounding. `action_parameters` must match
/// the schema the platform's action space declares for `action_type`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserAction {
    /// Absolute position in the video.
    pub timestamp: Timestamp,
    pub action_type: String,
    /// Natural-language reference to the UI element, used as the grounding query.
    pub grounding_instruction: String,
    pub action_reason: String,
    pub action_parameters: BTreeMap<String, ParamValue>,
    pub core_change_reason: String,
    pub core_change: String,
}

/// One extracted sub-task: an instruction plus its typed action list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskAnnotation {
    pub task_id: u64,
    pub instruction: String,
    pub dense_caption: String,
    pub plan: String,
    pub platform: Platform,
    pub software: String,
    pub website: Option<String>,
    pub user_actions: Vec<UserAction>,
    /// True iff the task ends with a `finish` action.
    pub complete: bool,
}

impl TaskAnnotation {
    pub fn ends_with_finish(&self) -> bool {
        self.user_actions
            .last()
            .is_some_and(|a| a.action_type == "finish")
    }

    /// Recompute the `complete` flag from the action list.
    pub fn with_recomputed_completeness(mut self) -> Self {
        self.complete = self.ends_with_finish();
        self
    }
}

/// A point on the resolution-independent 0-1000 grid, y first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRelPoint")]
pub struct RelPoint {
    pub y: u16,
    pub x: u16,
}

#[derive(Deserialize)]
struct RawRelPoint {
    y: u16,
    x: u16,
}

impl TryFrom<RawRelPoint> for RelPoint {
    type Error = ModelError;
    fn try_from(raw: RawRelPoint) -> Result<Self, ModelError> {
        RelPoint::new(raw.y, raw.x)
    }
}

impl RelPoint {
    pub fn new(y: u16, x: u16) -> Result<Self, ModelError> {
        if y > 1000 || x > 1000 {
            return Err(ModelError::RelCoordOutOfRange {
                value: i64::from(y.max(x)),
            });
        }
        Ok(Self { y, x })
    }
}

/// A box on the 0-1000 grid, `y1 <= y2`, `x1 <= x2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRelBBox")]
pub struct RelBBox {
    pub y1: u16,
    pub x1: u16,
    pub y2: u16,
    pub x2: u16,
}

#[derive(Deserialize)]
struct RawRelBBox {
    y1: u16,
    x1: u16,
    y2: u16,
    x2: u16,
}

impl TryFrom<RawRelBBox> for RelBBox {
    type Error = ModelError;
    fn try_from(raw: RawRelBBox) -> Result<Self, ModelError> {
        RelBBox::new(raw.y1, raw.x1, raw.y2, raw.x2)
    }
}

impl RelBBox {
    pub fn new(y1: u16, x1: u16, y2: u16, x2: u16) -> Result<Self, ModelError> {
        for v in [y1, x1, y2, x2] {
            if v > 1000 {
                return Err(ModelError::RelCoordOutOfRange {
                    value: i64::from(v),
                });
            }
        }
        if y1 > y2 || x1 > x2 {
            return Err(ModelError::BBoxInverted { y1, x1, y2, x2 });
        }
        Ok(Self { y1, x1, y2, x2 })
    }
}

/// Pixel-space point, `(x, y)` within a concrete frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: u32,
    pub y: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelBBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

/// Reference to one extracted high-resolution frame on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub video_id: String,
    /// Seconds into the video.
    pub time: f64,
    pub path: String,
    pub width: u32,
    pub height: u32,
}

/// Grounding result for one spatial parameter: the backend's relative
/// coordinates plus their pixel conversion against the chosen frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTarget {
    pub rel_point: RelPoint,
    pub rel_bbox: RelBBox,
    pub pixel_point: PixelPoint,
    pub pixel_bbox: Option<PixelBBox>,
}

/// An action whose spatial parameters have been resolved against a frame.
/// Non-spatial actions have an empty `resolved` map and offset 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedAction {
    pub base: UserAction,
    /// Keyed by spatial parameter name; covers exactly the action's
    /// spatial_param_names.
    pub resolved: BTreeMap<String, ResolvedTarget>,
    /// Which triplet slot supplied the frame: -0.5, 0.0, or +0.5 seconds.
    pub source_frame_offset: f64,
    pub frame: FrameRef,
}

/// An instruction plus its fully grounded action/observation trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedEpisode {
    pub video_id: String,
    pub task_id: u64,
    pub instruction: String,
    pub platform: Platform,
    pub software: String,
    pub website: Option<String>,
    pub steps: Vec<GroundedAction>,
    /// Finish-terminated. Incomplete episodes are kept for grounding and
    /// action-prediction export but excluded from trajectory modeling.
    pub complete: bool,
}

/// Which pretraining task a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Grounding,
    ActionPrediction,
    TrajectoryModeling,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Grounding => "grounding",
            TaskKind::ActionPrediction => "action_prediction",
            TaskKind::TrajectoryModeling => "trajectory_modeling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One message part: text or an image reference, with its loss mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    #[serde(flatten)]
    pub content: PartContent,
    /// True when the part's tokens contribute no training loss.
    pub loss_masked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PartContent {
    Text { text: String },
    Image { image: String },
}

impl Part {
    pub fn text(text: impl Into<String>, loss_masked: bool) -> Self {
        Part {
            content: PartContent::Text { text: text.into() },
            loss_masked,
        }
    }

    pub fn image(image: impl Into<String>, loss_masked: bool) -> Self {
        Part {
            content: PartContent::Image {
                image: image.into(),
            },
            loss_masked,
        }
    }

    pub fn is_image(&self) -> bool {
        matches!(self.content, PartContent::Image { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

/// Source references carried with every exported sample.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub video_id: String,
    pub task_id: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub point_name: Option<String>,
    /// Which prompt template variant was chosen (0-based).
    pub variant: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_point: Option<PixelPoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixel_bbox: Option<PixelBBox>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub step_notes: BTreeMap<String, String>,
}

/// One exported pretraining item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub task_kind: TaskKind,
    pub messages: Vec<Message>,
    pub meta: SampleMeta,
}

impl TrainingSample {
    /// Loss-mask law: trajectory-modeling samples may not contain an
    /// unmasked image part, and every sample needs at least one unmasked part.
    pub fn check_loss_mask(&self) -> Result<(), ModelError> {
        let parts = self.messages.iter().flat_map(|m| m.parts.iter());
        let mut any_unmasked = false;
        for part in parts {
            if !part.loss_masked {
                any_unmasked = true;
                if part.is_image() && self.task_kind == TaskKind::TrajectoryModeling {
                    return Err(ModelError::UnmaskedImage);
                }
            }
        }
        if !any_unmasked {
            return Err(ModelError::FullyMasked);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("SCORE_OUT_OF_RANGE: {dimension} = {value}, rubric range is [1, 5]")]
    ScoreOutOfRange { dimension: String, value: f64 },
    #[error("OUT_OF_RANGE: relative coordinate {value} outside [0, 1000]")]
    RelCoordOutOfRange { value: i64 },
    #[error("BBOX_INVERTED: ({y1}, {x1}, {y2}, {x2})")]
    BBoxInverted { y1: u16, x1: u16, y2: u16, x2: u16 },
    #[error("UNMASKED_IMAGE: trajectory-modeling sample has an unmasked image part")]
    UnmaskedImage,
    #[error("FULLY_MASKED: sample has no unmasked part")]
    FullyMasked,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_timestamp_zero() {
        assert_eq!(parse_timestamp("00:00").unwrap(), Timestamp(0.0));
    }

    #[test]
    fn parse_timestamp_basic() {
        assert_eq!(parse_timestamp("03:27").unwrap(), Timestamp(207.0));
    }

    #[test]
    fn parse_timestamp_one_digit_minutes() {
        assert_eq!(parse_timestamp("3:07").unwrap(), Timestamp(187.0));
    }

    #[test]
    fn parse_timestamp_rejects_one_digit_seconds() {
        assert_eq!(
            parse_timestamp("3:7"),
            Err(TimestampError::Malformed("3:7".into()))
        );
    }

    #[test]
    fn parse_timestamp_rejects_out_of_range_seconds() {
        assert!(matches!(
            parse_timestamp("01:60"),
            Err(TimestampError::Malformed(_))
        ));
    }

    #[test]
    fn parse_timestamp_rejects_garbage() {
        for bad in ["", ":", "0327", "aa:bb", "100:00", "-1:00", "01:0x"] {
            assert!(parse_timestamp(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn format_round_trip_is_identity_on_full_range() {
        for s in 0..=5999u32 {
            let text = format_timestamp(f64::from(s)).unwrap();
            assert_eq!(parse_timestamp(&text).unwrap().0, f64::from(s));
        }
    }

    #[test]
    fn format_timestamp_rejects_out_of_range() {
        assert!(format_timestamp(6000.0).is_err());
        assert!(format_timestamp(-1.0).is_err());
    }

    #[test]
    fn quality_score_rejects_out_of_range() {
        assert!(QualityScore::new(0.0, 4.0, 4.0).is_err());
        assert!(QualityScore::new(4.0, 4.0, 5.1).is_err());
        assert!(QualityScore::new(1.0, 5.0, 4.2).is_ok());
    }

    #[test]
    fn quality_score_deserialization_validates() {
        let bad = r#"{"topic_relevance": 0.5, "instruction_clarity": 4, "recording_quality": 4}"#;
        assert!(serde_json::from_str::<QualityScore>(bad).is_err());
    }

    #[test]
    fn rel_point_bounds() {
        assert!(RelPoint::new(1000, 0).is_ok());
        assert!(RelPoint::new(1001, 0).is_err());
    }

    #[test]
    fn rel_bbox_ordering() {
        assert!(RelBBox::new(400, 300, 500, 340).is_ok());
        assert!(matches!(
            RelBBox::new(500, 300, 400, 340),
            Err(ModelError::BBoxInverted { .. })
        ));
    }

    #[test]
    fn param_value_from_json_shapes() {
        use serde_json::json;
        assert_eq!(
            ParamValue::from_json(&json!([450, 320])).unwrap(),
            ParamValue::Point([450, 320])
        );
        assert_eq!(
            ParamValue::from_json(&json!([400, 300, 500, 340])).unwrap(),
            ParamValue::BBox([400, 300, 500, 340])
        );
        assert_eq!(
            ParamValue::from_json(&json!("down")).unwrap(),
            ParamValue::Text("down".into())
        );
        assert_eq!(
            ParamValue::from_json(&json!(["ctrl", "c"])).unwrap(),
            ParamValue::TextList(vec!["ctrl".into(), "c".into()])
        );
        let paths = json!([
            {"id": 0, "path": [[1, 2], [3, 4]]},
            {"id": 1, "path": [[5, 6], [7, 8]]}
        ]);
        assert!(matches!(
            ParamValue::from_json(&paths).unwrap(),
            ParamValue::PointerPaths(p) if p.len() == 2
        ));
        assert!(ParamValue::from_json(&serde_json::Value::Null).is_err());
    }

    #[test]
    fn platform_class_split() {
        assert_eq!(Platform::Windows.class(), PlatformClass::Desktop);
        assert_eq!(Platform::Mac.class(), PlatformClass::Desktop);
        assert_eq!(Platform::Linux.class(), PlatformClass::Desktop);
        assert_eq!(Platform::Android.class(), PlatformClass::Mobile);
        assert_eq!(Platform::Ios.class(), PlatformClass::Mobile);
    }

    #[test]
    fn loss_mask_law() {
        let sample = TrainingSample {
            task_kind: TaskKind::TrajectoryModeling,
            messages: vec![
                Message {
                    role: Role::User,
                    parts: vec![Part::image("f.png", true), Part::text("goal", true)],
                },
                Message {
                    role: Role::Assistant,
                    parts: vec![Part::text("action", false)],
                },
            ],
            meta: SampleMeta::default(),
        };
        assert!(sample.check_loss_mask().is_ok());

        let mut bad = sample.clone();
        bad.messages[0].parts[0].loss_masked = false;
        assert_eq!(bad.check_loss_mask(), Err(ModelError::UnmaskedImage));

        let mut masked = sample;
        masked.messages[1].parts[0].loss_masked = true;
        assert_eq!(masked.check_loss_mask(), Err(ModelError::FullyMasked));
    }
}
