//! Action spatial grounding: frame-triplet planning, grounding request and
//! response handling, tagged-coordinate parsing, relative-to-pixel
//! conversion, first-feasible-frame selection, and the discard rule.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::spatial_param_names;
use crate::backend::{AnnotationBackend, Attachment, BackendRequest, Stage};
use crate::extract::parse::first_json_object;
use crate::extract::prompts::grounding_prompt;
use crate::model::{
    FrameRef, GroundedAction, GroundedEpisode, PixelBBox, PixelPoint, RelBBox, RelPoint,
    ResolvedTarget, TaskAnnotation, UserAction,
};

pub const DEFAULT_FRAME_OFFSET: f64 = 0.5;

/// The frame times to try for an action at `t`: `[t - offset, t, t + offset]`
/// clamped to `[0, duration]`, duplicates removed preserving order.
pub fn plan_frame_times(t: f64, duration: f64, offset: f64) -> Vec<f64> {
    let mut times = Vec::with_capacity(3);
    for candidate in [t - offset, t, t + offset] {
        let clamped = candidate.clamp(0.0, duration);
        if !times.contains(&clamped) {
            times.push(clamped);
        }
    }
    times
}

#[derive(Debug, Error, PartialEq)]
pub enum TagError {
    #[error("TAG_MALFORMED: {0}")]
    Malformed(String),
    #[error("OUT_OF_RANGE: {0} outside [0, 1000]")]
    OutOfRange(i64),
    #[error("BBOX_INVERTED: y1 {y1} x1 {x1} y2 {y2} x2 {x2}")]
    Inverted { y1: u16, x1: u16, y2: u16, x2: u16 },
}

impl TagError {
    pub fn code(&self) -> &'static str {
        match self {
            TagError::Malformed(_) => "TAG_MALFORMED",
            TagError::OutOfRange(_) => "OUT_OF_RANGE",
            TagError::Inverted { .. } => "BBOX_INVERTED",
        }
    }
}

fn tag_integers(text: &str, tag: &str, count: usize) -> Result<Vec<i64>, TagError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = text
        .find(&open)
        .ok_or_else(|| TagError::Malformed(format!("no {open} tag in {text:?}")))?;
    let rest = &text[start + open.len()..];
    let end = rest
        .find(&close)
        .ok_or_else(|| TagError::Malformed(format!("unclosed {open} tag")))?;
    let inner = &rest[..end];
    let numbers: Result<Vec<i64>, _> = inner
        .split_whitespace()
        .map(|token| token.parse::<i64>())
        .collect();
    let numbers =
        numbers.map_err(|_| TagError::Malformed(format!("non-integer content {inner:?}")))?;
    if numbers.len() != count {
        return Err(TagError::Malformed(format!(
            "expected {count} integers in {open}, got {}",
            numbers.len()
        )));
    }
    for &n in &numbers {
        if !(0..=1000).contains(&n) {
            return Err(TagError::OutOfRange(n));
        }
    }
    Ok(numbers)
}

/// Parse `<point>y x</point>` (y first), range-checked to `[0, 1000]`.
pub fn parse_point_tag(text: &str) -> Result<RelPoint, TagError> {
    let v = tag_integers(text, "point", 2)?;
    Ok(RelPoint {
        y: v[0] as u16,
        x: v[1] as u16,
    })
}

/// Parse `<bbox>y1 x1 y2 x2</bbox>`, range- and ordering-checked.
pub fn parse_bbox_tag(text: &str) -> Result<RelBBox, TagError> {
    let v = tag_integers(text, "bbox", 4)?;
    let (y1, x1, y2, x2) = (v[0] as u16, v[1] as u16, v[2] as u16, v[3] as u16);
    if y1 > y2 || x1 > x2 {
        return Err(TagError::Inverted { y1, x1, y2, x2 });
    }
    Ok(RelBBox { y1, x1, y2, x2 })
}

/// Map a relative 0-1000 coordinate onto a concrete frame:
/// `clamp(round(rel * extent / 1000), 0, extent - 1)` per axis.
pub fn rel_to_pixel(p: RelPoint, width: u32, height: u32) -> PixelPoint {
    let scale = |rel: u16, extent: u32| -> u32 {
        let exact = f64::from(rel) * f64::from(extent) / 1000.0;
        (exact.round() as i64).clamp(0, i64::from(extent) - 1) as u32
    };
    PixelPoint {
        x: scale(p.x, width),
        y: scale(p.y, height),
    }
}

pub fn rel_bbox_to_pixel(b: RelBBox, width: u32, height: u32) -> PixelBBox {
    let p1 = rel_to_pixel(
        RelPoint { y: b.y1, x: b.x1 },
        width,
        height,
    );
    let p2 = rel_to_pixel(
        RelPoint { y: b.y2, x: b.x2 },
        width,
        height,
    );
    PixelBBox {
        x1: p1.x,
        y1: p1.y,
        x2: p2.x,
        y2: p2.y,
    }
}

/// What one grounding response said about one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroundingOutcome {
    Feasible {
        /// point_name -> (center point, bounding box). Nonempty.
        predictions: BTreeMap<String, (RelPoint, RelBBox)>,
    },
    Infeasible {
        reason: String,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum GroundingParseError {
    #[error("PARSE_ERROR: {0}")]
    Parse(String),
    #[error("PARSE_ERROR: {0}")]
    Tag(#[from] TagError),
    #[error("NAME_MISMATCH: missing {missing:?}, extra {extra:?}")]
    NameMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
}

impl GroundingParseError {
    pub fn code(&self) -> &'static str {
        match self {
            GroundingParseError::Parse(_) | GroundingParseError::Tag(_) => "PARSE_ERROR",
            GroundingParseError::NameMismatch { .. } => "NAME_MISMATCH",
        }
    }
}

/// Parse one grounding response. Feasible responses must cover exactly the
/// expected point names; infeasible ones must carry a reason.
pub fn parse_grounding_response(
    text: &str,
    expected_point_names: &[&str],
) -> Result<GroundingOutcome, GroundingParseError> {
    let value = first_json_object(text)
        .ok_or_else(|| GroundingParseError::Parse("no JSON object in response".to_string()))?;
    let obj = value.as_object().expect("first_json_object returns objects");

    let feasible = obj
        .get("feasible")
        .and_then(|v| v.as_bool())
        .ok_or_else(|| GroundingParseError::Parse("missing boolean \"feasible\"".to_string()))?;

    if !feasible {
        let reason = obj
            .get("reason")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                GroundingParseError::Parse("infeasible response missing \"reason\"".to_string())
            })?
            .to_string();
        return Ok(GroundingOutcome::Infeasible { reason });
    }

    let predictions_value = obj
        .get("predictions")
        .and_then(|v| v.as_array())
        .ok_or_else(|| {
            GroundingParseError::Parse("feasible response missing \"predictions\" array".to_string())
        })?;

    let mut predictions = BTreeMap::new();
    let mut extra = Vec::new();
    for item in predictions_value {
        let name = item
            .get("point_name")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                GroundingParseError::Parse("prediction missing \"point_name\"".to_string())
            })?;
        let center = item
            .get("center_point")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                GroundingParseError::Parse(format!("prediction {name:?} missing center_point"))
            })?;
        let bbox = item
            .get("bounding_box")
            .and_then(|v| v.as_str())
            .ok_or_else(|| {
                GroundingParseError::Parse(format!("prediction {name:?} missing bounding_box"))
            })?;
        let point = parse_point_tag(center)?;
        let bbox = parse_bbox_tag(bbox)?;
        if !expected_point_names.contains(&name) || predictions.contains_key(name) {
            extra.push(name.to_string());
        } else {
            predictions.insert(name.to_string(), (point, bbox));
        }
    }
    let missing: Vec<String> = expected_point_names
        .iter()
        .filter(|n| !predictions.contains_key(**n))
        .map(|n| n.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(GroundingParseError::NameMismatch { missing, extra });
    }
    Ok(GroundingOutcome::Feasible { predictions })
}

/// Where frames come from. The default layout is
/// `{root}/{video_id}/{time_ms}.png`.
pub trait FrameProvider: Send + Sync {
    fn frame(&self, video_id: &str, time: f64) -> Result<FrameRef, FrameError>;
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("FRAME_MISSING: {0}")]
    Missing(PathBuf),
    #[error("FRAME_UNREADABLE: {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
    #[error("EXTRACT_COMMAND_FAILED: {0}")]
    CommandFailed(String),
}

pub fn frame_rel_path(video_id: &str, time: f64) -> PathBuf {
    let time_ms = (time * 1000.0).round() as u64;
    PathBuf::from(video_id).join(format!("{time_ms}.png"))
}

/// Frames pre-extracted on disk, with an optional extraction-command hook
/// run on miss. The command template sees `{video_id}`, `{time}`, `{out}`.
pub struct DirFrameStore {
    pub root: PathBuf,
    pub extract_command: Option<String>,
    /// When set, a missing frame is synthesized as a blank PNG of this size
    /// instead of failing; used for mock-backed desk runs.
    pub synthesize: Option<(u32, u32)>,
}

impl DirFrameStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirFrameStore {
            root: root.into(),
            extract_command: None,
            synthesize: None,
        }
    }

    pub fn synthesizing(root: impl Into<PathBuf>, width: u32, height: u32) -> Self {
        DirFrameStore {
            root: root.into(),
            extract_command: None,
            synthesize: Some((width, height)),
        }
    }

    fn run_extract_command(&self, video_id: &str, time: f64, out: &Path) -> Result<(), FrameError> {
        let Some(template) = &self.extract_command else {
            return Err(FrameError::Missing(out.to_path_buf()));
        };
        let rendered = template
            .replace("{video_id}", video_id)
            .replace("{time}", &format!("{time}"))
            .replace("{out}", &out.to_string_lossy());
        let status = std::process::Command::new("sh")
            .arg("-c")
            .arg(&rendered)
            .status()
            .map_err(|e| FrameError::CommandFailed(e.to_string()))?;
        if !status.success() {
            return Err(FrameError::CommandFailed(format!(
                "{rendered:?} exited with {status}"
            )));
        }
        Ok(())
    }
}

impl FrameProvider for DirFrameStore {
    fn frame(&self, video_id: &str, time: f64) -> Result<FrameRef, FrameError> {
        let path = self.root.join(frame_rel_path(video_id, time));
        if !path.exists() {
            if let Some((w, h)) = self.synthesize {
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| FrameError::Unreadable {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                }
                image::RgbImage::new(w, h)
                    .save(&path)
                    .map_err(|e| FrameError::Unreadable {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
            } else {
                self.run_extract_command(video_id, time, &path)?;
            }
        }
        let (width, height) =
            image::image_dimensions(&path).map_err(|e| FrameError::Unreadable {
                path: path.clone(),
                message: e.to_string(),
            })?;
        Ok(FrameRef {
            video_id: video_id.to_string(),
            time,
            path: path.to_string_lossy().into_owned(),
            width,
            height,
        })
    }
}

/// One frame attempt in the grounding audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAttempt {
    pub time: f64,
    pub offset: f64,
    pub outcome: AttemptOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttemptOutcome {
    Feasible,
    Infeasible { reason: String },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundActionResult {
    Grounded(GroundedAction),
    /// All frames infeasible or erroneous; the action leaves the trajectory.
    Discarded { reasons: Vec<String> },
}

pub fn build_grounding_request(action: &UserAction, point_names: &[&str], frame: &FrameRef) -> BackendRequest {
    BackendRequest {
        stage: Stage::Ground,
        prompt: grounding_prompt(&action.grounding_instruction, &action.action_type, point_names),
        attachments: vec![Attachment::frame(&frame.path)],
        context: None,
    }
}

/// The triplet slot a frame occupies relative to the action timestamp.
fn nominal_offset(frame_time: f64, action_time: f64) -> f64 {
    if frame_time < action_time {
        -0.5
    } else if frame_time > action_time {
        0.5
    } else {
        0.0
    }
}

/// Ground one spatial action against its planned frames, in order. The first
/// feasible frame wins and later frames are never queried; backend or parse
/// errors on a frame count as infeasible for that frame only.
pub fn ground_action(
    action: &UserAction,
    point_names: &[&str],
    frames: &[FrameRef],
    backend: &dyn AnnotationBackend,
) -> (GroundActionResult, Vec<FrameAttempt>) {
    let mut attempts = Vec::with_capacity(frames.len());
    let mut reasons = Vec::new();
    for frame in frames {
        let offset = nominal_offset(frame.time, action.timestamp.0);
        let request = build_grounding_request(action, point_names, frame);
        let outcome = match backend.call(&request) {
            Err(e) => {
                let message = e.to_string();
                attempts.push(FrameAttempt {
                    time: frame.time,
                    offset,
                    outcome: AttemptOutcome::Error {
                        message: message.clone(),
                    },
                });
                reasons.push(format!("offset {offset}: {message}"));
                continue;
            }
            Ok(text) => parse_grounding_response(&text, point_names),
        };
        match outcome {
            Ok(GroundingOutcome::Feasible { predictions }) => {
                attempts.push(FrameAttempt {
                    time: frame.time,
                    offset,
                    outcome: AttemptOutcome::Feasible,
                });
                let resolved: BTreeMap<String, ResolvedTarget> = predictions
                    .into_iter()
                    .map(|(name, (rel_point, rel_bbox))| {
                        let pixel_point = rel_to_pixel(rel_point, frame.width, frame.height);
                        let pixel_bbox = rel_bbox_to_pixel(rel_bbox, frame.width, frame.height);
                        (
                            name,
                            ResolvedTarget {
                                rel_point,
                                rel_bbox,
                                pixel_point,
                                pixel_bbox: Some(pixel_bbox),
                            },
                        )
                    })
                    .collect();
                return (
                    GroundActionResult::Grounded(GroundedAction {
                        base: action.clone(),
                        resolved,
                        source_frame_offset: offset,
                        frame: frame.clone(),
                    }),
                    attempts,
                );
            }
            Ok(GroundingOutcome::Infeasible { reason }) => {
                attempts.push(FrameAttempt {
                    time: frame.time,
                    offset,
                    outcome: AttemptOutcome::Infeasible {
                        reason: reason.clone(),
                    },
                });
                reasons.push(format!("offset {offset}: {reason}"));
            }
            Err(e) => {
                let message = e.to_string();
                attempts.push(FrameAttempt {
                    time: frame.time,
                    offset,
                    outcome: AttemptOutcome::Error {
                        message: message.clone(),
                    },
                });
                reasons.push(format!("offset {offset}: {message}"));
            }
        }
    }
    (GroundActionResult::Discarded { reasons }, attempts)
}

/// Per-action disposition recorded while grounding a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionAudit {
    pub action_index: usize,
    pub action_type: String,
    pub timestamp: f64,
    pub disposition: Disposition,
    pub backend_calls: u32,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub attempts: Vec<FrameAttempt>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disposition {
    Grounded { source_frame_offset: f64 },
    Passthrough,
    Discarded { reasons: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAudit {
    pub video_id: String,
    pub task_id: u64,
    pub actions: Vec<ActionAudit>,
    pub backend_calls: u32,
    pub discarded: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GroundTrajectoryResult {
    Episode(GroundedEpisode),
    Rejected { code: String, message: String },
}

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("frame: {0}")]
    Frame(#[from] FrameError),
    #[error("action space: {0}")]
    ActionSpace(#[from] crate::actions::ActionSpaceError),
}

/// Ground a validated task. Non-spatial actions pass through with the frame
/// at their own timestamp as observation; spatial actions go through the
/// triplet protocol; discarded actions are removed (order preserved).
pub fn ground_trajectory(
    video_id: &str,
    task: &TaskAnnotation,
    video_duration: f64,
    frame_offset: f64,
    frames: &dyn FrameProvider,
    backend: &dyn AnnotationBackend,
) -> Result<(GroundTrajectoryResult, TrajectoryAudit), GroundError> {
    let mut audit = TrajectoryAudit {
        video_id: video_id.to_string(),
        task_id: task.task_id,
        actions: Vec::with_capacity(task.user_actions.len()),
        backend_calls: 0,
        discarded: 0,
    };

    if task.user_actions.is_empty() {
        return Ok((
            GroundTrajectoryResult::Rejected {
                code: "EMPTY_TASK".to_string(),
                message: "task has no actions".to_string(),
            },
            audit,
        ));
    }

    let class = task.platform.class();
    let mut steps = Vec::with_capacity(task.user_actions.len());

    for (i, action) in task.user_actions.iter().enumerate() {
        let point_names = spatial_param_names(class, &action.action_type)?;
        let t = action.timestamp.0.clamp(0.0, video_duration);
        if point_names.is_empty() {
            let frame = frames.frame(video_id, t)?;
            steps.push(GroundedAction {
                base: action.clone(),
                resolved: BTreeMap::new(),
                source_frame_offset: 0.0,
                frame,
            });
            audit.actions.push(ActionAudit {
                action_index: i,
                action_type: action.action_type.clone(),
                timestamp: action.timestamp.0,
                disposition: Disposition::Passthrough,
                backend_calls: 0,
                attempts: Vec::new(),
                warnings: Vec::new(),
            });
            continue;
        }

        let mut frame_refs = Vec::new();
        let mut frame_errors = Vec::new();
        for time in plan_frame_times(t, video_duration, frame_offset) {
            match frames.frame(video_id, time) {
                Ok(f) => frame_refs.push(f),
                Err(e) => frame_errors.push(format!("frame at {time}: {e}")),
            }
        }
        if frame_refs.is_empty() {
            audit.discarded += 1;
            audit.actions.push(ActionAudit {
                action_index: i,
                action_type: action.action_type.clone(),
                timestamp: action.timestamp.0,
                disposition: Disposition::Discarded {
                    reasons: frame_errors,
                },
                backend_calls: 0,
                attempts: Vec::new(),
                warnings: Vec::new(),
            });
            continue;
        }

        let (result, attempts) = ground_action(action, &point_names, &frame_refs, backend);
        let calls = attempts.len() as u32;
        audit.backend_calls += calls;
        match result {
            GroundActionResult::Grounded(grounded) => {
                let warnings = containment_warnings(&grounded);
                audit.actions.push(ActionAudit {
                    action_index: i,
                    action_type: action.action_type.clone(),
                    timestamp: action.timestamp.0,
                    disposition: Disposition::Grounded {
                        source_frame_offset: grounded.source_frame_offset,
                    },
                    backend_calls: calls,
                    attempts,
                    warnings,
                });
                steps.push(grounded);
            }
            GroundActionResult::Discarded { mut reasons } => {
                reasons.extend(frame_errors);
                audit.discarded += 1;
                audit.actions.push(ActionAudit {
                    action_index: i,
                    action_type: action.action_type.clone(),
                    timestamp: action.timestamp.0,
                    disposition: Disposition::Discarded { reasons },
                    backend_calls: calls,
                    attempts,
                    warnings: Vec::new(),
                });
            }
        }
    }

    if steps.is_empty() {
        return Ok((
            GroundTrajectoryResult::Rejected {
                code: "ALL_ACTIONS_DISCARDED".to_string(),
                message: "every action failed grounding".to_string(),
            },
            audit,
        ));
    }

    Ok((
        GroundTrajectoryResult::Episode(GroundedEpisode {
            video_id: video_id.to_string(),
            task_id: task.task_id,
            instruction: task.instruction.clone(),
            platform: task.platform,
            software: task.software.clone(),
            website: task.website.clone(),
            steps,
            complete: task.ends_with_finish(),
        }),
        audit,
    ))
}

// The center point is authoritative; a bbox that fails to contain it is
// logged, not rejected.
fn containment_warnings(grounded: &GroundedAction) -> Vec<String> {
    let mut warnings = Vec::new();
    for (name, target) in &grounded.resolved {
        let p = target.rel_point;
        let b = target.rel_bbox;
        if p.y < b.y1 || p.y > b.y2 || p.x < b.x1 || p.x > b.x2 {
            warnings.push(format!(
                "BBOX_POINT_MISMATCH: {name} center ({}, {}) outside bbox ({}, {}, {}, {})",
                p.y, p.x, b.y1, b.x1, b.y2, b.x2
            ));
        }
    }
    warnings
}

/// Seeded sampler that renders grounded actions with overlaid coordinates
/// for manual review. Returns the written overlay paths, deterministic
/// naming: `{video_id}_{task_id}_{step}_{point}.png`.
pub fn render_audit_overlays(
    episodes: &[GroundedEpisode],
    sample_count: usize,
    seed: u64,
    out_dir: &Path,
) -> std::io::Result<Vec<PathBuf>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for (e, episode) in episodes.iter().enumerate() {
        for (s, step) in episode.steps.iter().enumerate() {
            if !step.resolved.is_empty() {
                candidates.push((e, s));
            }
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates.truncate(sample_count);
    candidates.sort_unstable();

    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (e, s) in candidates {
        let episode = &episodes[e];
        let step = &episode.steps[s];
        let mut img = match image::open(&step.frame.path) {
            Ok(img) => img.to_rgb8(),
            // Frame unreadable: draw on a blank canvas so the audit stays
            // inspectable rather than aborting the sampler.
            Err(_) => image::RgbImage::new(step.frame.width.max(1), step.frame.height.max(1)),
        };
        for (name, target) in &step.resolved {
            draw_crosshair(&mut img, target.pixel_point);
            if let Some(b) = target.pixel_bbox {
                draw_rect(&mut img, b);
            }
            let path = out_dir.join(format!(
                "{}_{}_{}_{}.png",
                episode.video_id, episode.task_id, s, name
            ));
            img.save(&path).map_err(std::io::Error::other)?;
            written.push(path);
        }
    }
    Ok(written)
}

const OVERLAY_COLOR: image::Rgb<u8> = image::Rgb([255, 0, 0]);

fn draw_crosshair(img: &mut image::RgbImage, p: PixelPoint) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    for d in -8i64..=8 {
        let x = i64::from(p.x) + d;
        if (0..w).contains(&x) {
            img.put_pixel(x as u32, p.y.min(h as u32 - 1), OVERLAY_COLOR);
        }
        let y = i64::from(p.y) + d;
        if (0..h).contains(&y) {
            img.put_pixel(p.x.min(w as u32 - 1), y as u32, OVERLAY_COLOR);
        }
    }
}

fn draw_rect(img: &mut image::RgbImage, b: PixelBBox) {
    let (w, h) = (img.width(), img.height());
    let x2 = b.x2.min(w - 1);
    let y2 = b.y2.min(h - 1);
    for x in b.x1..=x2 {
        img.put_pixel(x, b.y1.min(h - 1), OVERLAY_COLOR);
        img.put_pixel(x, y2, OVERLAY_COLOR);
    }
    for y in b.y1..=y2 {
        img.put_pixel(b.x1.min(w - 1), y, OVERLAY_COLOR);
        img.put_pixel(x2, y, OVERLAY_COLOR);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendError;
    use crate::model::Timestamp;
    use std::sync::Mutex;

    #[test]
    fn triplet_in_order() {
        assert_eq!(plan_frame_times(10.0, 600.0, 0.5), vec![9.5, 10.0, 10.5]);
    }

    #[test]
    fn triplet_clamps_at_start() {
        assert_eq!(plan_frame_times(0.0, 600.0, 0.5), vec![0.0, 0.5]);
    }

    #[test]
    fn triplet_clamps_at_end() {
        assert_eq!(plan_frame_times(600.0, 600.0, 0.5), vec![599.5, 600.0]);
    }

    #[test]
    fn point_tag_round_trip() {
        let p = parse_point_tag("<point>450 320</point>").unwrap();
        assert_eq!((p.y, p.x), (450, 320));
    }

    #[test]
    fn bbox_tag_round_trip() {
        let b = parse_bbox_tag("<bbox>400 300 500 340</bbox>").unwrap();
        assert_eq!((b.y1, b.x1, b.y2, b.x2), (400, 300, 500, 340));
    }

    #[test]
    fn point_tag_out_of_range() {
        assert_eq!(
            parse_point_tag("<point>450 1200</point>").unwrap_err().code(),
            "OUT_OF_RANGE"
        );
    }

    #[test]
    fn tag_malformed_variants() {
        for bad in [
            "no tag",
            "<point>450</point>",
            "<point>a b</point>",
            "<point>450 320",
        ] {
            assert_eq!(parse_point_tag(bad).unwrap_err().code(), "TAG_MALFORMED", "{bad}");
        }
        // Negative integers fit the tag grammar but fail the range check.
        assert_eq!(
            parse_point_tag("<point>-1 5</point>").unwrap_err().code(),
            "OUT_OF_RANGE"
        );
    }

    #[test]
    fn bbox_inverted() {
        assert_eq!(
            parse_bbox_tag("<bbox>500 300 400 340</bbox>").unwrap_err().code(),
            "BBOX_INVERTED"
        );
    }

    #[test]
    fn rel_to_pixel_identity_at_1000() {
        let p = rel_to_pixel(RelPoint { y: 500, x: 500 }, 1000, 1000);
        assert_eq!((p.x, p.y), (500, 500));
    }

    #[test]
    fn rel_to_pixel_clamps_max() {
        let p = rel_to_pixel(RelPoint { y: 0, x: 1000 }, 1920, 1080);
        assert_eq!(p.x, 1919);
        assert_eq!(p.y, 0);
    }

    #[test]
    fn rel_to_pixel_zero_is_zero() {
        let p = rel_to_pixel(RelPoint { y: 0, x: 0 }, 640, 480);
        assert_eq!((p.x, p.y), (0, 0));
    }

    #[test]
    fn grounding_response_feasible() {
        let text = r#"{
            "feasible": true,
            "predictions": [
                {"point_name": "start_point", "center_point": "<point>450 320</point>", "bounding_box": "<bbox>400 300 500 340</bbox>"},
                {"point_name": "end_point", "center_point": "<point>100 200</point>", "bounding_box": "<bbox>90 180 110 220</bbox>"}
            ]
        }"#;
        let outcome =
            parse_grounding_response(text, &["start_point", "end_point"]).unwrap();
        match outcome {
            GroundingOutcome::Feasible { predictions } => {
                assert_eq!(predictions.len(), 2);
                assert_eq!(predictions["start_point"].0.y, 450);
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn grounding_response_infeasible() {
        let text = r#"{"feasible": false, "reason": "element not visible"}"#;
        assert_eq!(
            parse_grounding_response(text, &["point"]).unwrap(),
            GroundingOutcome::Infeasible {
                reason: "element not visible".to_string()
            }
        );
    }

    #[test]
    fn grounding_response_name_mismatch() {
        let text = r#"{
            "feasible": true,
            "predictions": [
                {"point_name": "start_point", "center_point": "<point>450 320</point>", "bounding_box": "<bbox>400 300 500 340</bbox>"}
            ]
        }"#;
        let err =
            parse_grounding_response(text, &["start_point", "end_point"]).unwrap_err();
        assert_eq!(err.code(), "NAME_MISMATCH");
    }

    #[test]
    fn grounding_response_infeasible_without_reason_is_parse_error() {
        let err = parse_grounding_response(r#"{"feasible": false}"#, &["point"]).unwrap_err();
        assert_eq!(err.code(), "PARSE_ERROR");
    }

    /// Scripted backend: answers per call according to a feasibility pattern.
    struct ScriptedGrounder {
        pattern: Vec<bool>,
        calls: Mutex<usize>,
    }

    impl ScriptedGrounder {
        fn new(pattern: &[bool]) -> Self {
            ScriptedGrounder {
                pattern: pattern.to_vec(),
                calls: Mutex::new(0),
            }
        }

        fn calls(&self) -> usize {
            *self.calls.lock().unwrap()
        }
    }

    impl AnnotationBackend for ScriptedGrounder {
        fn call(&self, _request: &BackendRequest) -> Result<String, BackendError> {
            let mut calls = self.calls.lock().unwrap();
            let feasible = self.pattern[*calls];
            *calls += 1;
            if feasible {
                Ok(r#"{"feasible": true, "predictions": [{"point_name": "point", "center_point": "<point>500 500</point>", "bounding_box": "<bbox>450 450 550 550</bbox>"}]}"#.to_string())
            } else {
                Ok(r#"{"feasible": false, "reason": "scripted miss"}"#.to_string())
            }
        }
    }

    fn frame_at(time: f64) -> FrameRef {
        FrameRef {
            video_id: "v".to_string(),
            time,
            path: format!("frames/v/{}.png", (time * 1000.0) as u64),
            width: 1920,
            height: 1080,
        }
    }

    fn click_action(t: f64) -> UserAction {
        UserAction {
            timestamp: Timestamp(t),
            action_type: "click".to_string(),
            grounding_instruction: "the OK button".to_string(),
            action_reason: String::new(),
            action_parameters: Default::default(),
            core_change_reason: String::new(),
            core_change: String::new(),
        }
    }

    #[test]
    fn first_feasible_frame_wins_and_short_circuits() {
        let frames = [frame_at(9.5), frame_at(10.0), frame_at(10.5)];
        // (Infeasible, Feasible, never queried)
        let backend = ScriptedGrounder::new(&[false, true, true]);
        let (result, attempts) =
            ground_action(&click_action(10.0), &["point"], &frames, &backend);
        match result {
            GroundActionResult::Grounded(g) => {
                assert_eq!(g.source_frame_offset, 0.0);
                assert_eq!(g.frame.time, 10.0);
            }
            other => panic!("expected grounded, got {other:?}"),
        }
        assert_eq!(backend.calls(), 2);
        assert_eq!(attempts.len(), 2);
    }

    #[test]
    fn all_infeasible_is_discarded() {
        let frames = [frame_at(9.5), frame_at(10.0), frame_at(10.5)];
        let backend = ScriptedGrounder::new(&[false, false, false]);
        let (result, attempts) =
            ground_action(&click_action(10.0), &["point"], &frames, &backend);
        match result {
            GroundActionResult::Discarded { reasons } => assert_eq!(reasons.len(), 3),
            other => panic!("expected discarded, got {other:?}"),
        }
        assert_eq!(backend.calls(), 3);
        assert_eq!(attempts.len(), 3);
    }

    #[test]
    fn immediate_feasible_makes_exactly_one_call() {
        let frames = [frame_at(9.5), frame_at(10.0), frame_at(10.5)];
        let backend = ScriptedGrounder::new(&[true, true, true]);
        let (result, _) = ground_action(&click_action(10.0), &["point"], &frames, &backend);
        match result {
            GroundActionResult::Grounded(g) => assert_eq!(g.source_frame_offset, -0.5),
            other => panic!("expected grounded, got {other:?}"),
        }
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn backend_error_counts_as_infeasible_for_that_frame() {
        struct ErrThenOk {
            calls: Mutex<usize>,
        }
        impl AnnotationBackend for ErrThenOk {
            fn call(&self, _request: &BackendRequest) -> Result<String, BackendError> {
                let mut calls = self.calls.lock().unwrap();
                *calls += 1;
                if *calls == 1 {
                    Err(BackendError::Exhausted {
                        attempts: 3,
                        last: "boom".to_string(),
                    })
                } else {
                    Ok(r#"{"feasible": true, "predictions": [{"point_name": "point", "center_point": "<point>10 10</point>", "bounding_box": "<bbox>0 0 20 20</bbox>"}]}"#.to_string())
                }
            }
        }
        let frames = [frame_at(9.5), frame_at(10.0)];
        let backend = ErrThenOk {
            calls: Mutex::new(0),
        };
        let (result, attempts) =
            ground_action(&click_action(10.0), &["point"], &frames, &backend);
        assert!(matches!(result, GroundActionResult::Grounded(_)));
        assert!(matches!(attempts[0].outcome, AttemptOutcome::Error { .. }));
    }

    struct TestFrames {
        dir: PathBuf,
    }

    impl FrameProvider for TestFrames {
        fn frame(&self, video_id: &str, time: f64) -> Result<FrameRef, FrameError> {
            let _ = &self.dir;
            Ok(FrameRef {
                video_id: video_id.to_string(),
                time,
                path: self
                    .dir
                    .join(frame_rel_path(video_id, time))
                    .to_string_lossy()
                    .into_owned(),
                width: 1280,
                height: 720,
            })
        }
    }

    fn full_task() -> TaskAnnotation {
        use crate::model::{ParamValue, Platform};
        use std::collections::BTreeMap;
        let mk = |t: f64, action_type: &str, params: Vec<(&str, ParamValue)>| UserAction {
            timestamp: Timestamp(t),
            action_type: action_type.to_string(),
            grounding_instruction: format!("target at {t}"),
            action_reason: String::new(),
            action_parameters: params
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect::<BTreeMap<_, _>>(),
            core_change_reason: String::new(),
            core_change: String::new(),
        };
        TaskAnnotation {
            task_id: 0,
            instruction: "do the thing".to_string(),
            dense_caption: String::new(),
            plan: String::new(),
            platform: Platform::Windows,
            software: "App".to_string(),
            website: None,
            user_actions: vec![
                mk(1.0, "click", vec![("point", ParamValue::Point([5, 5]))]),
                mk(2.0, "write", vec![("text", ParamValue::Text("hi".into()))]),
                mk(3.0, "click", vec![("point", ParamValue::Point([7, 7]))]),
                mk(4.0, "wait", vec![("duration", ParamValue::Number(100.0))]),
                mk(5.0, "finish", vec![("status", ParamValue::Text("success".into()))]),
            ],
            complete: true,
        }
    }

    #[test]
    fn ground_trajectory_keeps_all_steps_when_feasible() {
        let task = full_task();
        let backend = ScriptedGrounder::new(&[true, true]);
        let frames = TestFrames {
            dir: PathBuf::from("frames"),
        };
        let (result, audit) =
            ground_trajectory("v", &task, 600.0, 0.5, &frames, &backend).unwrap();
        match result {
            GroundTrajectoryResult::Episode(e) => {
                assert_eq!(e.steps.len(), 5);
                assert!(e.complete);
            }
            other => panic!("expected episode, got {other:?}"),
        }
        assert_eq!(audit.backend_calls, 2);
        assert_eq!(audit.discarded, 0);
    }

    #[test]
    fn ground_trajectory_drops_discarded_click() {
        let task = full_task();
        // First click infeasible on all 3 frames, second click feasible at once.
        let backend = ScriptedGrounder::new(&[false, false, false, true]);
        let frames = TestFrames {
            dir: PathBuf::from("frames"),
        };
        let (result, audit) =
            ground_trajectory("v", &task, 600.0, 0.5, &frames, &backend).unwrap();
        match result {
            GroundTrajectoryResult::Episode(e) => assert_eq!(e.steps.len(), 4),
            other => panic!("expected episode, got {other:?}"),
        }
        assert_eq!(audit.discarded, 1);
        assert_eq!(audit.backend_calls, 4);
    }

    #[test]
    fn ground_trajectory_rejects_empty_task() {
        let mut task = full_task();
        task.user_actions.clear();
        let backend = ScriptedGrounder::new(&[]);
        let frames = TestFrames {
            dir: PathBuf::from("frames"),
        };
        let (result, _) = ground_trajectory("v", &task, 600.0, 0.5, &frames, &backend).unwrap();
        assert!(matches!(
            result,
            GroundTrajectoryResult::Rejected { ref code, .. } if code == "EMPTY_TASK"
        ));
    }

    #[test]
    fn grounded_episode_has_no_unresolved_spatial_params() {
        let task = full_task();
        let backend = ScriptedGrounder::new(&[true, true]);
        let frames = TestFrames {
            dir: PathBuf::from("frames"),
        };
        let (result, _) = ground_trajectory("v", &task, 600.0, 0.5, &frames, &backend).unwrap();
        let GroundTrajectoryResult::Episode(episode) = result else {
            panic!("expected episode");
        };
        for step in &episode.steps {
            let expected =
                spatial_param_names(episode.platform.class(), &step.base.action_type).unwrap();
            let got: Vec<&str> = step.resolved.keys().map(|s| s.as_str()).collect();
            let mut expected_sorted = expected.clone();
            expected_sorted.sort_unstable();
            let mut got_sorted = got.clone();
            got_sorted.sort_unstable();
            assert_eq!(expected_sorted, got_sorted);
        }
    }

    #[test]
    fn overlay_sampler_writes_deterministic_names() {
        let task = full_task();
        let backend = ScriptedGrounder::new(&[true, true]);
        let dir = tempfile::tempdir().unwrap();
        let frames = TestFrames {
            dir: dir.path().to_path_buf(),
        };
        let (result, _) = ground_trajectory("v", &task, 600.0, 0.5, &frames, &backend).unwrap();
        let GroundTrajectoryResult::Episode(episode) = result else {
            panic!("expected episode");
        };
        let out = dir.path().join("overlays");
        let written = render_audit_overlays(&[episode], 2, 1, &out).unwrap();
        assert_eq!(written.len(), 2);
        for path in &written {
            assert!(path.exists());
            let name = path.file_name().unwrap().to_string_lossy();
            assert!(name.starts_with("v_0_"), "{name}");
        }
    }
}
