//! Parsing of two-part extraction responses: a "Shot Splitting" markdown
//! list followed by a JSON task list. Tolerates fenced code blocks and
//! surrounding prose unless strict mode is on.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    parse_timestamp, ParamValue, Platform, TaskAnnotation, Timestamp, TimestampError, UserAction,
};

/// Ordered `(start, end)` shot boundaries, audit data only; the actions'
/// own timestamps are authoritative downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotList {
    pub shots: Vec<(Timestamp, Timestamp)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("MISSING_SHOT_SECTION: {0}")]
    MissingShotSection(String),
    #[error("MISSING_JSON: no top-level JSON task array found")]
    MissingJson,
    #[error("JSON_SCHEMA_ERROR at {path}: {message}")]
    JsonSchemaError { path: String, message: String },
    #[error("TIMESTAMP_ERROR in task {task_id:?} action {action_index:?}: {source}")]
    TimestampError {
        task_id: Option<u64>,
        action_index: Option<usize>,
        source: TimestampError,
    },
    #[error("INVALID_SHOT at entry {index}: {message}")]
    InvalidShot { index: usize, message: String },
    #[error("STRICT_MODE: {0}")]
    Strict(String),
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::MissingShotSection(_) => "MISSING_SHOT_SECTION",
            ParseError::MissingJson => "MISSING_JSON",
            ParseError::JsonSchemaError { .. } => "JSON_SCHEMA_ERROR",
            ParseError::TimestampError { .. } => "TIMESTAMP_ERROR",
            ParseError::InvalidShot { .. } => "INVALID_SHOT",
            ParseError::Strict(_) => "STRICT_MODE",
        }
    }
}

/// Parsed response plus a sidecar of unknown JSON fields, keyed by path.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAnnotation {
    pub shots: ShotList,
    pub tasks: Vec<TaskAnnotation>,
    pub unknown_fields: Vec<(String, serde_json::Value)>,
}

/// Scan for the first balanced JSON container starting with `open`, skipping
/// over string literals and escapes. Returns the byte range.
fn balanced_ranges(text: &str, open: u8, close: u8) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut ranges = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != open {
            i += 1;
            continue;
        }
        let start = i;
        let mut depth = 0usize;
        let mut in_string = false;
        let mut escaped = false;
        let mut j = i;
        let mut end = None;
        while j < bytes.len() {
            let b = bytes[j];
            if in_string {
                if escaped {
                    escaped = false;
                } else if b == b'\\' {
                    escaped = true;
                } else if b == b'"' {
                    in_string = false;
                }
            } else if b == b'"' {
                in_string = true;
            } else if b == open {
                depth += 1;
            } else if b == close {
                depth -= 1;
                if depth == 0 {
                    end = Some(j + 1);
                    break;
                }
            }
            j += 1;
        }
        match end {
            Some(e) => {
                ranges.push((start, e));
                i = start + 1;
            }
            None => break,
        }
    }
    ranges
}

/// First complete top-level JSON array whose elements are all objects
/// (a task list), wherever it sits: bare, fenced, or wrapped in prose.
pub fn first_json_array(text: &str) -> Option<(serde_json::Value, (usize, usize))> {
    for (start, end) in balanced_ranges(text, b'[', b']') {
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text[start..end]) {
            if let Some(items) = value.as_array() {
                if items.iter().all(|v| v.is_object()) {
                    return Some((value, (start, end)));
                }
            }
        }
    }
    None
}

/// First complete JSON object anywhere in the text.
pub fn first_json_object(text: &str) -> Option<serde_json::Value> {
    for (start, end) in balanced_ranges(text, b'{', b'}') {
        if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text[start..end]) {
            if value.is_object() {
                return Some(value);
            }
        }
    }
    None
}

/// Parse the numbered shot list that follows one "Shot Splitting" header
/// occurrence. Returns the shots and the byte offset where the list ends.
fn parse_shots_after(text: &str, after_header: usize) -> Result<(ShotList, usize), ParseError> {
    let line_re = regex::Regex::new(r"^\s*\d+\.\s*(\S+)\s*-\s*(\S+)\s*$").unwrap();
    let mut shots: Vec<(Timestamp, Timestamp)> = Vec::new();
    let mut consumed = after_header;
    for line in text[after_header..].lines() {
        let line_start = consumed;
        consumed += line.len() + 1;
        if line.trim().is_empty() && shots.is_empty() {
            continue;
        }
        let Some(caps) = line_re.captures(line) else {
            consumed = line_start;
            break;
        };
        let index = shots.len() + 1;
        let start = parse_timestamp(&caps[1]).map_err(|source| ParseError::TimestampError {
            task_id: None,
            action_index: None,
            source,
        })?;
        let end = parse_timestamp(&caps[2]).map_err(|source| ParseError::TimestampError {
            task_id: None,
            action_index: None,
            source,
        })?;
        if start.0 >= end.0 {
            return Err(ParseError::InvalidShot {
                index,
                message: format!("start {} not before end {}", &caps[1], &caps[2]),
            });
        }
        if let Some(prev) = shots.last() {
            if start.0 < prev.0 .0 {
                return Err(ParseError::InvalidShot {
                    index,
                    message: "shot starts are not non-decreasing".to_string(),
                });
            }
        }
        shots.push((start, end));
    }
    if shots.is_empty() {
        return Err(ParseError::MissingShotSection(
            "header present but no shot entries follow".into(),
        ));
    }
    Ok((ShotList { shots }, consumed.min(text.len())))
}

/// Locate the "Shot Splitting" numbered list. Every header occurrence is
/// tried in order, so a mention of the phrase in surrounding prose does not
/// shadow the real section.
fn parse_shot_section(text: &str) -> Result<(ShotList, usize), ParseError> {
    const HEADER: &str = "Shot Splitting";
    let mut first_error = None;
    let mut search_from = 0;
    while let Some(found) = text[search_from..].find(HEADER) {
        let after_header = search_from + found + HEADER.len();
        match parse_shots_after(text, after_header) {
            Ok(ok) => return Ok(ok),
            Err(e) => {
                first_error.get_or_insert(e);
                search_from = after_header;
            }
        }
    }
    Err(first_error.unwrap_or_else(|| {
        ParseError::MissingShotSection("no \"Shot Splitting\" header".into())
    }))
}

fn str_field(
    obj: &serde_json::Map<String, serde_json::Value>,
    key: &str,
    path: &str,
) -> Result<String, ParseError> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(other) => Err(ParseError::JsonSchemaError {
            path: format!("{path}.{key}"),
            message: format!("expected string, got {other}"),
        }),
        None => Err(ParseError::JsonSchemaError {
            path: format!("{path}.{key}"),
            message: "missing required field".to_string(),
        }),
    }
}

const TASK_FIELDS: &[&str] = &[
    "task_id",
    "instruction",
    "dense_caption",
    "plan",
    "platform",
    "software",
    "website",
    "user_actions",
];

const ACTION_FIELDS: &[&str] = &[
    "timestamp",
    "action_type",
    "grounding_instruction",
    "action_reason",
    "action_parameters",
    "core_change_reason",
    "core_change",
];

fn parse_task(
    value: &serde_json::Value,
    path: &str,
    unknown: &mut Vec<(String, serde_json::Value)>,
) -> Result<TaskAnnotation, ParseError> {
    let obj = value.as_object().ok_or_else(|| ParseError::JsonSchemaError {
        path: path.to_string(),
        message: "task must be an object".to_string(),
    })?;

    let task_id = obj
        .get("task_id")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| ParseError::JsonSchemaError {
            path: format!("{path}.task_id"),
            message: "missing or non-integer task_id".to_string(),
        })?;

    let platform_name = str_field(obj, "platform", path)?;
    let platform =
        Platform::parse(&platform_name).ok_or_else(|| ParseError::JsonSchemaError {
            path: format!("{path}.platform"),
            message: format!("unknown platform {platform_name:?}"),
        })?;

    let website = match obj.get("website") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::String(s)) if s.is_empty() => None,
        Some(serde_json::Value::String(s)) => Some(s.clone()),
        Some(other) => {
            return Err(ParseError::JsonSchemaError {
                path: format!("{path}.website"),
                message: format!("expected string or null, got {other}"),
            })
        }
    };

    let actions_value = obj
        .get("user_actions")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ParseError::JsonSchemaError {
            path: format!("{path}.user_actions"),
            message: "missing or non-array user_actions".to_string(),
        })?;

    let mut user_actions = Vec::with_capacity(actions_value.len());
    for (i, action_value) in actions_value.iter().enumerate() {
        let action_path = format!("{path}.user_actions[{i}]");
        user_actions.push(parse_action(action_value, &action_path, task_id, i, unknown)?);
    }

    for (key, value) in obj {
        if !TASK_FIELDS.contains(&key.as_str()) {
            unknown.push((format!("{path}.{key}"), value.clone()));
        }
    }

    Ok(TaskAnnotation {
        task_id,
        instruction: str_field(obj, "instruction", path)?,
        dense_caption: str_field(obj, "dense_caption", path)?,
        plan: str_field(obj, "plan", path)?,
        platform,
        software: str_field(obj, "software", path)?,
        website,
        user_actions,
        complete: false,
    }
    .with_recomputed_completeness())
}

fn parse_action(
    value: &serde_json::Value,
    path: &str,
    task_id: u64,
    action_index: usize,
    unknown: &mut Vec<(String, serde_json::Value)>,
) -> Result<UserAction, ParseError> {
    let obj = value.as_object().ok_or_else(|| ParseError::JsonSchemaError {
        path: path.to_string(),
        message: "action must be an object".to_string(),
    })?;

    let ts_text = str_field(obj, "timestamp", path)?;
    let timestamp = parse_timestamp(&ts_text).map_err(|source| ParseError::TimestampError {
        task_id: Some(task_id),
        action_index: Some(action_index),
        source,
    })?;

    let mut action_parameters = BTreeMap::new();
    if let Some(params) = obj.get("action_parameters") {
        let params = params.as_object().ok_or_else(|| ParseError::JsonSchemaError {
            path: format!("{path}.action_parameters"),
            message: "must be an object".to_string(),
        })?;
        for (name, raw) in params {
            let value = ParamValue::from_json(raw).map_err(|message| {
                ParseError::JsonSchemaError {
                    path: format!("{path}.action_parameters.{name}"),
                    message,
                }
            })?;
            action_parameters.insert(name.clone(), value);
        }
    } else {
        return Err(ParseError::JsonSchemaError {
            path: format!("{path}.action_parameters"),
            message: "missing required field".to_string(),
        });
    }

    for (key, value) in obj {
        if !ACTION_FIELDS.contains(&key.as_str()) {
            unknown.push((format!("{path}.{key}"), value.clone()));
        }
    }

    Ok(UserAction {
        timestamp,
        action_type: str_field(obj, "action_type", path)?,
        grounding_instruction: str_field(obj, "grounding_instruction", path)?,
        action_reason: str_field(obj, "action_reason", path)?,
        action_parameters,
        core_change_reason: str_field(obj, "core_change_reason", path)?,
        core_change: str_field(obj, "core_change", path)?,
    })
}

/// Parse a two-part extraction response into its shot list and validated
/// task annotations.
///
/// Strict mode additionally requires the task array to be bare: it must
/// start right after the shot list (whitespace only in between, no code
/// fence) and run to the end of the response.
pub fn parse_annotation_response(
    text: &str,
    strict: bool,
) -> Result<ParsedAnnotation, ParseError> {
    let (shots, shot_end) = parse_shot_section(text)?;
    let (value, (array_start, array_end)) =
        first_json_array(text).ok_or(ParseError::MissingJson)?;

    if strict {
        let between = &text[shot_end.min(array_start)..array_start];
        if !between.trim().is_empty() {
            return Err(ParseError::Strict(format!(
                "non-whitespace between shot list and JSON: {:?}",
                between.trim().chars().take(40).collect::<String>()
            )));
        }
        if !text[array_end..].trim().is_empty() {
            return Err(ParseError::Strict(
                "trailing content after the JSON task list".to_string(),
            ));
        }
    }

    let items = value.as_array().expect("first_json_array returns arrays");
    let mut unknown_fields = Vec::new();
    let mut tasks = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        tasks.push(parse_task(item, &format!("[{i}]"), &mut unknown_fields)?);
    }

    Ok(ParsedAnnotation {
        shots,
        tasks,
        unknown_fields,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const WELL_FORMED: &str = r#"Shot Splitting
1. 00:00 - 00:05
2. 00:05 - 00:12
3. 00:12 - 00:20

[
  {
    "task_id": 0,
    "instruction": "Open the settings page",
    "dense_caption": "The user opens settings.",
    "plan": "step1: open menu, step2: click settings",
    "platform": "windows",
    "software": "Explorer",
    "website": null,
    "user_actions": [
      {
        "timestamp": "00:00",
        "action_type": "click",
        "grounding_instruction": "Click the Start button",
        "action_reason": "I need to open the menu first.",
        "action_parameters": {"point": [980, 20], "bbox": [960, 5, 1000, 40]},
        "core_change_reason": "The shell opens the Start menu overlay.",
        "core_change": "Start menu appears."
      },
      {
        "timestamp": "00:05",
        "action_type": "write",
        "grounding_instruction": "Type into the search box",
        "action_reason": "Searching is faster than browsing.",
        "action_parameters": {"text": "settings"},
        "core_change_reason": "Search results update as text is entered.",
        "core_change": "Results list shows Settings."
      },
      {
        "timestamp": "00:12",
        "action_type": "click",
        "grounding_instruction": "Click the Settings entry",
        "action_reason": "The result I need is visible now.",
        "action_parameters": {"point": [400, 500]},
        "core_change_reason": "Activating the entry launches the app.",
        "core_change": "Settings window opens."
      },
      {
        "timestamp": "00:20",
        "action_type": "finish",
        "grounding_instruction": "",
        "action_reason": "The settings page is open; the task is done.",
        "action_parameters": {"status": "success"},
        "core_change_reason": "No further change.",
        "core_change": "None."
      }
    ]
  }
]"#;

    #[test]
    fn well_formed_counts() {
        let parsed = parse_annotation_response(WELL_FORMED, false).unwrap();
        assert_eq!(parsed.shots.shots.len(), 3);
        assert_eq!(parsed.tasks.len(), 1);
        assert_eq!(parsed.tasks[0].user_actions.len(), 4);
        assert!(parsed.tasks[0].complete);
        assert!(parsed.unknown_fields.is_empty());
    }

    #[test]
    fn json_only_is_missing_shot_section() {
        let text = r#"[{"task_id": 0}]"#;
        assert_eq!(
            parse_annotation_response(text, false).unwrap_err().code(),
            "MISSING_SHOT_SECTION"
        );
    }

    #[test]
    fn shots_only_is_missing_json() {
        let text = "Shot Splitting\n1. 00:00 - 00:10\n\nNo json here.";
        assert_eq!(
            parse_annotation_response(text, false).unwrap_err().code(),
            "MISSING_JSON"
        );
    }

    #[test]
    fn bad_action_timestamp_reports_task_and_index() {
        let text = WELL_FORMED.replace("\"timestamp\": \"00:05\"", "\"timestamp\": \"aa:bb\"");
        match parse_annotation_response(&text, false).unwrap_err() {
            ParseError::TimestampError {
                task_id: Some(0),
                action_index: Some(1),
                ..
            } => {}
            other => panic!("wrong error: {other:?}"),
        }
    }

    #[test]
    fn fenced_json_is_accepted_lenient() {
        let fenced = WELL_FORMED.replace("\n[\n", "\nHere is the result:\n```json\n[\n");
        let fenced = format!("{fenced}\n```\nThat is all.");
        let parsed = parse_annotation_response(&fenced, false).unwrap();
        assert_eq!(parsed.tasks.len(), 1);
    }

    #[test]
    fn fenced_json_rejected_in_strict_mode() {
        let fenced = WELL_FORMED.replace("\n[\n", "\n```json\n[\n");
        let fenced = format!("{fenced}\n```");
        assert_eq!(
            parse_annotation_response(&fenced, true).unwrap_err().code(),
            "STRICT_MODE"
        );
    }

    #[test]
    fn strict_mode_accepts_bare_output() {
        assert!(parse_annotation_response(WELL_FORMED, true).is_ok());
    }

    #[test]
    fn unknown_fields_go_to_sidecar() {
        let text = WELL_FORMED.replace(
            "\"task_id\": 0,",
            "\"task_id\": 0, \"confidence\": 0.9,",
        );
        let parsed = parse_annotation_response(&text, false).unwrap();
        assert_eq!(parsed.unknown_fields.len(), 1);
        assert_eq!(parsed.unknown_fields[0].0, "[0].confidence");
    }

    #[test]
    fn inverted_shot_is_invalid() {
        let text = WELL_FORMED.replace("1. 00:00 - 00:05", "1. 00:07 - 00:05");
        assert_eq!(
            parse_annotation_response(text.as_str(), false)
                .unwrap_err()
                .code(),
            "INVALID_SHOT"
        );
    }

    #[test]
    fn unknown_platform_is_schema_error() {
        let text = WELL_FORMED.replace("\"windows\"", "\"amiga\"");
        match parse_annotation_response(&text, false).unwrap_err() {
            ParseError::JsonSchemaError { path, .. } => assert_eq!(path, "[0].platform"),
            other => panic!("wrong error: {other:?}"),
        }
    }

    #[test]
    fn round_trip_parsed_tasks() {
        let parsed = parse_annotation_response(WELL_FORMED, false).unwrap();
        let json = serde_json::to_string(&parsed.tasks).unwrap();
        let back: Vec<TaskAnnotation> = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.tasks, back);
    }

    #[test]
    fn first_json_array_skips_non_object_arrays() {
        let text = "numbers [1, 2, 3] then [ {\"a\": 1} ] end";
        let (value, _) = first_json_array(text).unwrap();
        assert_eq!(value, serde_json::json!([{"a": 1}]));
    }

    #[test]
    fn first_json_object_finds_fenced() {
        let text = "prose\n```json\n{\"feasible\": false, \"reason\": \"gone\"}\n```";
        let obj = first_json_object(text).unwrap();
        assert_eq!(obj["feasible"], serde_json::json!(false));
    }
}
