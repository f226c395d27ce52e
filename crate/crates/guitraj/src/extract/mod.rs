//! Trajectory extraction: 4-minute segmentation, sliding-window request
//! assembly with history, response parsing, cross-segment task merging, and
//! trajectory-level validation.

pub mod parse;
pub mod prompts;

pub use parse::{parse_annotation_response, ParseError, ParsedAnnotation, ShotList};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{validate_action, ValidationReport};
use crate::backend::{Attachment, BackendRequest, Stage};
use crate::model::{format_timestamp, Segment, TaskAnnotation};

pub const DEFAULT_WINDOW_SECONDS: f64 = 240.0;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("NONPOSITIVE_DURATION: {0}")]
    NonpositiveDuration(f64),
    #[error("HISTORY_FOR_FIRST_SEGMENT: segment 1 must have no prior tasks")]
    HistoryForFirstSegment,
    #[error("BAD_SEGMENT: {0}")]
    BadSegment(String),
}

/// Tile `[0, duration]` into consecutive segments of at most `window`
/// seconds: `ceil(duration / window)` tiles, no gaps, no overlap, no empty
/// trailing tile.
pub fn segment_video(
    video_id: &str,
    duration: f64,
    window: f64,
) -> Result<Vec<Segment>, ExtractError> {
    if !(duration > 0.0) {
        return Err(ExtractError::NonpositiveDuration(duration));
    }
    if !(window > 0.0) {
        return Err(ExtractError::BadSegment(format!(
            "window must be positive, got {window}"
        )));
    }
    let count = (duration / window).ceil() as u32;
    let mut segments = Vec::with_capacity(count as usize);
    for j in 1..=count {
        let start = window * f64::from(j - 1);
        let end = (window * f64::from(j)).min(duration);
        segments.push(Segment {
            video_id: video_id.to_string(),
            index: j,
            start,
            end,
        });
    }
    Ok(segments)
}

/// Everything needed to build one segment's annotation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionContext {
    pub video_id: String,
    pub segment: Segment,
    /// Extracted results from preceding segments, sorted by task_id.
    pub prior_tasks: Vec<TaskAnnotation>,
}

/// Deterministically assemble the annotation request for one segment: the
/// base extraction prompt for the first segment, the continuation template
/// (absolute mm:ss bounds, serialized history) for later ones.
pub fn build_extraction_request(ctx: &ExtractionContext) -> Result<BackendRequest, ExtractError> {
    let prompt = if ctx.segment.index == 1 {
        if !ctx.prior_tasks.is_empty() {
            return Err(ExtractError::HistoryForFirstSegment);
        }
        prompts::EXTRACTION_PROMPT.to_string()
    } else {
        let start = format_timestamp(ctx.segment.start)
            .map_err(|e| ExtractError::BadSegment(e.to_string()))?;
        let end = format_timestamp(ctx.segment.end)
            .map_err(|e| ExtractError::BadSegment(e.to_string()))?;
        let history = serde_json::to_string_pretty(&ctx.prior_tasks)
            .expect("task annotations serialize");
        prompts::CONTINUATION_TEMPLATE
            .replace("[Current Start Time]", &start)
            .replace("[Current End Time]", &end)
            .replace("[Insert Previous Analysis History Here]", &history)
            .replace("[Insert Specific Task Prompt Here]", prompts::EXTRACTION_PROMPT)
    };
    Ok(BackendRequest {
        stage: Stage::Extract,
        prompt,
        attachments: vec![Attachment::clip(
            &ctx.video_id,
            ctx.segment.start,
            ctx.segment.end,
        )],
        context: None,
    })
}

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("TASK_ID_CONFLICT: task {task_id} {reason}")]
    TaskIdConflict { task_id: u64, reason: String },
    #[error("TIMESTAMP_REGRESSION: task {task_id} continues at {new} before prior end {prior}")]
    TimestampRegression { task_id: u64, prior: f64, new: f64 },
    #[error("INPUT_ORDER: {0}")]
    InputOrder(String),
}

impl MergeError {
    pub fn code(&self) -> &'static str {
        match self {
            MergeError::TaskIdConflict { .. } => "TASK_ID_CONFLICT",
            MergeError::TimestampRegression { .. } => "TIMESTAMP_REGRESSION",
            MergeError::InputOrder(_) => "INPUT_ORDER",
        }
    }
}

/// Merge a new segment's tasks into the prior segments' accumulated list.
///
/// If the prior list ends with an incomplete task and the new list carries
/// the same task_id, its actions are appended (timestamps must continue
/// non-decreasing) and completeness is recomputed; the prior task keeps its
/// identity fields. Genuinely new tasks must use consecutive next ids.
pub fn merge_segments(
    prior: &[TaskAnnotation],
    new: Vec<TaskAnnotation>,
) -> Result<Vec<TaskAnnotation>, MergeError> {
    if prior.windows(2).any(|w| w[0].task_id >= w[1].task_id) {
        return Err(MergeError::InputOrder(
            "prior task_ids must be strictly increasing".to_string(),
        ));
    }
    if new.windows(2).any(|w| w[0].task_id > w[1].task_id) {
        return Err(MergeError::InputOrder(
            "new task_ids must be non-decreasing".to_string(),
        ));
    }

    let mut merged: Vec<TaskAnnotation> = prior.to_vec();
    let continuation_id = merged
        .last()
        .filter(|t| !t.complete)
        .map(|t| t.task_id);
    let mut next_id = merged.last().map_or(0, |t| t.task_id + 1);

    for task in new {
        if Some(task.task_id) == continuation_id {
            let target = merged.last_mut().expect("continuation id implies a prior task");
            if target.complete {
                return Err(MergeError::TaskIdConflict {
                    task_id: task.task_id,
                    reason: "appeared twice in one segment after completion".to_string(),
                });
            }
            if let (Some(prior_last), Some(new_first)) =
                (target.user_actions.last(), task.user_actions.first())
            {
                if new_first.timestamp.0 < prior_last.timestamp.0 {
                    return Err(MergeError::TimestampRegression {
                        task_id: task.task_id,
                        prior: prior_last.timestamp.0,
                        new: new_first.timestamp.0,
                    });
                }
            }
            target.user_actions.extend(task.user_actions);
            target.complete = target.ends_with_finish();
        } else if task.task_id == next_id {
            next_id += 1;
            merged.push(task.with_recomputed_completeness());
        } else {
            let reason = if task.task_id < next_id {
                "reuses an already-completed id".to_string()
            } else {
                format!("skips ahead; next available id is {next_id}")
            };
            return Err(MergeError::TaskIdConflict {
                task_id: task.task_id,
                reason,
            });
        }
    }
    Ok(merged)
}

/// Per-task validation outcome. Violations beyond per-action schema checks
/// carry their own codes; warnings never invalidate a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task_id: u64,
    pub complete: bool,
    pub violations: Vec<TrajectoryViolation>,
    pub warnings: Vec<String>,
    pub action_reports: Vec<ValidationReport>,
}

impl TaskReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty() && self.action_reports.iter().all(|r| r.is_ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryViolation {
    pub code: String,
    pub action_index: Option<usize>,
    pub message: String,
}

const BROWSERS: &[&str] = &[
    "chrome", "google chrome", "firefox", "safari", "edge", "microsoft edge", "opera", "brave",
    "browser", "chromium", "vivaldi",
];

fn is_browser(software: &str) -> bool {
    let folded = software.to_lowercase();
    BROWSERS.iter().any(|b| folded == *b || folded.contains(b))
}

/// Validate each task: monotone in-range timestamps, per-action schema
/// validity, finish at most once and only last. Report-producing; never
/// fails.
pub fn validate_trajectory(tasks: &[TaskAnnotation], video_duration: f64) -> Vec<TaskReport> {
    tasks
        .iter()
        .map(|task| {
            let mut violations = Vec::new();
            let mut warnings = Vec::new();

            let mut prev = f64::NEG_INFINITY;
            for (i, action) in task.user_actions.iter().enumerate() {
                let t = action.timestamp.0;
                if t < prev {
                    violations.push(TrajectoryViolation {
                        code: "TIMESTAMP_ORDER".to_string(),
                        action_index: Some(i),
                        message: format!("timestamp {t} before previous {prev}"),
                    });
                }
                prev = prev.max(t);
                if t < 0.0 || t > video_duration {
                    violations.push(TrajectoryViolation {
                        code: "OUT_OF_RANGE".to_string(),
                        action_index: Some(i),
                        message: format!("timestamp {t} outside [0, {video_duration}]"),
                    });
                }
                let is_last = i + 1 == task.user_actions.len();
                if action.action_type == "finish" && !is_last {
                    violations.push(TrajectoryViolation {
                        code: "FINISH_NOT_LAST".to_string(),
                        action_index: Some(i),
                        message: "finish must appear at most once, as the final action"
                            .to_string(),
                    });
                }
            }

            if task.website.is_some() && !is_browser(&task.software) {
                warnings.push(format!(
                    "WEBSITE_WITHOUT_BROWSER: website set but software is {:?}",
                    task.software
                ));
            }

            let action_reports = task
                .user_actions
                .iter()
                .map(|a| validate_action(task.platform, a))
                .collect();

            TaskReport {
                task_id: task.task_id,
                complete: task.ends_with_finish(),
                violations,
                warnings,
                action_reports,
            }
        })
        .collect()
}
