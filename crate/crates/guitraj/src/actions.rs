//! Platform action spaces: 13 desktop and 10 mobile action types, each with
//! its parameter schema, plus schema-level validation of extracted actions.
//!
//! Validation is pure and report-producing: bad data yields violations with
//! machine-readable codes, never an `Err`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ParamValue, Platform, PlatformClass, UserAction};

/// Allowed value shape of one action parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// `[y, x]` pair.
    Point,
    /// `[y1, x1, y2, x2]`.
    BBox,
    /// A number (pixels, percent, milliseconds, ...).
    Scalar,
    Text,
    /// Text restricted to a fixed set.
    Enum(&'static [&'static str]),
    /// A single key name or a list of key names.
    KeyList,
    /// Multi-touch pointer paths: >= 2 pointers, each with >= 2 waypoints.
    PointerPaths,
}

impl ParamKind {
    pub fn name(&self) -> &'static str {
        match self {
            ParamKind::Point => "point",
            ParamKind::BBox => "bbox",
            ParamKind::Scalar => "scalar",
            ParamKind::Text => "text",
            ParamKind::Enum(_) => "enum",
            ParamKind::KeyList => "key-list",
            ParamKind::PointerPaths => "pointer-paths",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    /// Must be present for the action to validate. Spatial parameters are
    /// exempt from the presence check pre-grounding: the grounding stage
    /// resolves them against high-resolution frames.
    pub required: bool,
    /// Needs grounding; always a subset of the required parameters.
    pub spatial: bool,
}

const fn req(name: &'static str, kind: ParamKind) -> ParamSpec {
    ParamSpec {
        name,
        kind,
        required: true,
        spatial: false,
    }
}

const fn spatial(name: &'static str) -> ParamSpec {
    ParamSpec {
        name,
        kind: ParamKind::Point,
        required: true,
        spatial: true,
    }
}

/// Companion bounding box emitted by the extractor alongside a point. The
/// authoritative box comes from the grounding stage, so this one is optional.
const fn aux_bbox() -> ParamSpec {
    ParamSpec {
        name: "bbox",
        kind: ParamKind::BBox,
        required: false,
        spatial: false,
    }
}

/// One entry of a platform action space.
#[derive(Debug, Clone, Copy)]
pub struct ActionSpec {
    pub action_type: &'static str,
    pub platform_class: PlatformClass,
    pub params: &'static [ParamSpec],
    pub description: &'static str,
}

impl ActionSpec {
    pub fn required_params(&self) -> impl Iterator<Item = &ParamSpec> {
        self.params.iter().filter(|p| p.required)
    }

    pub fn spatial_param_names(&self) -> Vec<&'static str> {
        self.params
            .iter()
            .filter(|p| p.spatial)
            .map(|p| p.name)
            .collect()
    }
}

const DIR_SCROLL: &[&str] = &["up", "down", "left", "right"];
const DIR_PINCH: &[&str] = &["in", "out"];

pub const DESKTOP_ACTIONS: &[ActionSpec] = &[
    ActionSpec {
        action_type: "click",
        platform_class: PlatformClass::Desktop,
        params: &[spatial("point"), aux_bbox()],
        description: "Single click at the specified coordinates.",
    },
    ActionSpec {
        action_type: "doubleClick",
        platform_class: PlatformClass::Desktop,
        params: &[spatial("point"), aux_bbox()],
        description: "Double click at the specified coordinates.",
    },
    ActionSpec {
        action_type: "tripleClick",
        platform_class: PlatformClass::Desktop,
        params: &[spatial("point"), aux_bbox()],
        description: "Triple click at the specified coordinates.",
    },
    ActionSpec {
        action_type: "rightClick",
        platform_class: PlatformClass::Desktop,
        params: &[spatial("point"), aux_bbox()],
        description: "Right click at the specified coordinates.",
    },
    ActionSpec {
        action_type: "middleClick",
        platform_class: PlatformClass::Desktop,
        params: &[spatial("point"), aux_bbox()],
        description: "Middle click at the specified coordinates.",
    },
    ActionSpec {
        action_type: "press",
        platform_class: PlatformClass::Desktop,
        params: &[req("key_name", ParamKind::KeyList)],
        description: "Press a single key or a sequence of keys.",
    },
    ActionSpec {
        action_type: "write",
        platform_class: PlatformClass::Desktop,
        params: &[req("text", ParamKind::Text)],
        description: "Input text into the currently focused element.",
    },
    ActionSpec {
        action_type: "hotkey",
        platform_class: PlatformClass::Desktop,
        params: &[req("keys", ParamKind::KeyList)],
        description: "Trigger a system hotkey combination.",
    },
    ActionSpec {
        action_type: "scroll",
        platform_class: PlatformClass::Desktop,
        params: &[
            req("direction", ParamKind::Enum(DIR_SCROLL)),
            spatial("point"),
            req("magnitude_pixels", ParamKind::Scalar),
        ],
        description: "Scroll in a direction at specific coordinates.",
    },
    ActionSpec {
        action_type: "moveTo",
        platform_class: PlatformClass::Desktop,
        params: &[spatial("point")],
        description: "Move the cursor to the target position.",
    },
    ActionSpec {
        action_type: "dragTo",
        platform_class: PlatformClass::Desktop,
        params: &[spatial("start_point"), spatial("end_point")],
        description: "Drag from start point to end point.",
    },
    ActionSpec {
        action_type: "wait",
        platform_class: PlatformClass::Desktop,
        params: &[req("duration", ParamKind::Scalar)],
        description: "Pause execution for a given time period.",
    },
    ActionSpec {
        action_type: "finish",
        platform_class: PlatformClass::Desktop,
        params: &[req("status", ParamKind::Text)],
        description: "End the task and return the goal status.",
    },
];

pub const MOBILE_ACTIONS: &[ActionSpec] = &[
    ActionSpec {
        action_type: "click",
        platform_class: PlatformClass::Mobile,
        params: &[spatial("point"), aux_bbox()],
        description: "Tap at the specified coordinates.",
    },
    ActionSpec {
        action_type: "long_press",
        platform_class: PlatformClass::Mobile,
        params: &[
            spatial("point"),
            req("duration_ms", ParamKind::Scalar),
            aux_bbox(),
        ],
        description: "Press and hold for a specific duration.",
    },
    ActionSpec {
        action_type: "scroll",
        platform_class: PlatformClass::Mobile,
        params: &[req("direction", ParamKind::Enum(DIR_SCROLL))],
        description: "Scroll or swipe in the specified direction.",
    },
    ActionSpec {
        action_type: "pinch",
        platform_class: PlatformClass::Mobile,
        params: &[
            ParamSpec {
                name: "center_point",
                kind: ParamKind::Point,
                required: true,
                spatial: true,
            },
            req("direction", ParamKind::Enum(DIR_PINCH)),
            req("magnitude_percent", ParamKind::Scalar),
        ],
        description: "Zoom in or out at the specified coordinates.",
    },
    ActionSpec {
        action_type: "input",
        platform_class: PlatformClass::Mobile,
        params: &[req("text", ParamKind::Text)],
        description: "Type text into the active input field.",
    },
    ActionSpec {
        action_type: "drag",
        platform_class: PlatformClass::Mobile,
        params: &[
            spatial("start_point"),
            spatial("end_point"),
            req("duration_ms", ParamKind::Scalar),
        ],
        description: "Perform a drag-and-drop gesture.",
    },
    ActionSpec {
        action_type: "press",
        platform_class: PlatformClass::Mobile,
        params: &[req("key", ParamKind::KeyList)],
        description: "Simulate hardware keys (Home, Back, etc.).",
    },
    ActionSpec {
        action_type: "open",
        platform_class: PlatformClass::Mobile,
        params: &[req("app", ParamKind::Text)],
        description: "Launch a mobile app by its name.",
    },
    ActionSpec {
        action_type: "multi_touch_gesture",
        platform_class: PlatformClass::Mobile,
        params: &[req("pointers", ParamKind::PointerPaths)],
        description: "Execute complex multi-finger gestures.",
    },
    ActionSpec {
        action_type: "finish",
        platform_class: PlatformClass::Mobile,
        params: &[req("status", ParamKind::Text)],
        description: "Terminate task and report status.",
    },
];

pub fn action_space(class: PlatformClass) -> &'static [ActionSpec] {
    match class {
        PlatformClass::Desktop => DESKTOP_ACTIONS,
        PlatformClass::Mobile => MOBILE_ACTIONS,
    }
}

pub fn find_action(class: PlatformClass, action_type: &str) -> Option<&'static ActionSpec> {
    action_space(class)
        .iter()
        .find(|a| a.action_type == action_type)
}

#[derive(Debug, Error, PartialEq)]
pub enum ActionSpaceError {
    #[error("UNKNOWN_ACTION: {action_type:?} is not a {class} action")]
    UnknownAction {
        class: PlatformClass,
        action_type: String,
    },
}

/// Parameter names the grounding stage must resolve for this action type.
/// Empty for non-spatial actions (press, write/input, hotkey, wait, open,
/// finish, mobile scroll, multi_touch_gesture).
pub fn spatial_param_names(
    class: PlatformClass,
    action_type: &str,
) -> Result<Vec<&'static str>, ActionSpaceError> {
    find_action(class, action_type)
        .map(|spec| spec.spatial_param_names())
        .ok_or_else(|| ActionSpaceError::UnknownAction {
            class,
            action_type: action_type.to_string(),
        })
}

/// Machine-readable violation codes for [`validate_action`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationCode {
    #[serde(rename = "UNKNOWN_ACTION")]
    UnknownAction,
    #[serde(rename = "MISSING_PARAM")]
    MissingParam,
    #[serde(rename = "UNKNOWN_PARAM")]
    UnknownParam,
    #[serde(rename = "WRONG_KIND")]
    WrongKind,
    #[serde(rename = "INVALID_VALUE")]
    InvalidValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub action_type: String,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

// WRONG_KIND means the value has the wrong shape entirely; INVALID_VALUE
// means the shape fits but the value breaks the kind's constraints.
fn check_kind(kind: ParamKind, value: &ParamValue) -> Result<(), (ViolationCode, String)> {
    use ViolationCode::{InvalidValue, WrongKind};
    match (kind, value) {
        (ParamKind::Point, ParamValue::Point(_)) => Ok(()),
        (ParamKind::BBox, ParamValue::BBox([y1, x1, y2, x2])) => {
            if y1 > y2 || x1 > x2 {
                Err((
                    InvalidValue,
                    format!("bbox corners inverted: [{y1}, {x1}, {y2}, {x2}]"),
                ))
            } else {
                Ok(())
            }
        }
        (ParamKind::Scalar, ParamValue::Number(n)) => {
            if n.is_finite() {
                Ok(())
            } else {
                Err((InvalidValue, "scalar must be finite".to_string()))
            }
        }
        (ParamKind::Text, ParamValue::Text(_)) => Ok(()),
        (ParamKind::Enum(allowed), ParamValue::Text(s)) => {
            if allowed.contains(&s.as_str()) {
                Ok(())
            } else {
                Err((InvalidValue, format!("{s:?} not in {allowed:?}")))
            }
        }
        (ParamKind::KeyList, ParamValue::Text(s)) => {
            if s.is_empty() {
                Err((InvalidValue, "empty key".to_string()))
            } else {
                Ok(())
            }
        }
        (ParamKind::KeyList, ParamValue::TextList(keys)) => {
            if keys.is_empty() {
                Err((InvalidValue, "empty key list".to_string()))
            } else {
                Ok(())
            }
        }
        (ParamKind::PointerPaths, ParamValue::PointerPaths(pointers)) => {
            if pointers.len() < 2 {
                return Err((
                    InvalidValue,
                    format!("multi-touch gesture needs >= 2 pointers, got {}", pointers.len()),
                ));
            }
            for p in pointers {
                if p.path.len() < 2 {
                    return Err((
                        InvalidValue,
                        format!("pointer {} path needs >= 2 points", p.id),
                    ));
                }
            }
            Ok(())
        }
        (kind, value) => Err((WrongKind, format!("expected {}, got {value:?}", kind.name()))),
    }
}

/// Schema-validate one extracted action against its platform's action space.
/// Pure and deterministic; violations are data, not failures.
pub fn validate_action(platform: Platform, action: &UserAction) -> ValidationReport {
    let mut violations = Vec::new();
    let class = platform.class();
    let Some(spec) = find_action(class, &action.action_type) else {
        violations.push(Violation {
            code: ViolationCode::UnknownAction,
            param: None,
            message: format!(
                "{:?} is not in the {class} action space",
                action.action_type
            ),
        });
        return ValidationReport {
            action_type: action.action_type.clone(),
            violations,
        };
    };

    for param in spec.required_params() {
        if param.spatial {
            // Presence is the grounding stage's job.
            continue;
        }
        if !action.action_parameters.contains_key(param.name) {
            violations.push(Violation {
                code: ViolationCode::MissingParam,
                param: Some(param.name.to_string()),
                message: format!("required parameter {:?} absent", param.name),
            });
        }
    }

    for (name, value) in &action.action_parameters {
        let Some(param) = spec.params.iter().find(|p| p.name == name.as_str()) else {
            violations.push(Violation {
                code: ViolationCode::UnknownParam,
                param: Some(name.clone()),
                message: format!(
                    "{name:?} is not a parameter of {:?}",
                    action.action_type
                ),
            });
            continue;
        };
        if let Err((code, why)) = check_kind(param.kind, value) {
            violations.push(Violation {
                code,
                param: Some(name.clone()),
                message: why,
            });
        }
    }

    ValidationReport {
        action_type: action.action_type.clone(),
        violations,
    }
}

/// Human-readable action-space description, used verbatim in the
/// action-prediction export prompt.
pub fn describe_action_space(class: PlatformClass) -> String {
    let mut out = String::new();
    for spec in action_space(class) {
        let params: Vec<String> = spec
            .params
            .iter()
            .map(|p| {
                if p.required {
                    p.name.to_string()
                } else {
                    format!("{}?", p.name)
                }
            })
            .collect();
        out.push_str(&format!(
            "- {}({}): {}\n",
            spec.action_type,
            params.join(", "),
            spec.description
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Timestamp;
    use std::collections::BTreeMap;

    fn action(action_type: &str, params: &[(&str, ParamValue)]) -> UserAction {
        UserAction {
            timestamp: Timestamp(1.0),
            action_type: action_type.to_string(),
            grounding_instruction: "the button".to_string(),
            action_reason: "because".to_string(),
            action_parameters: params
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            core_change_reason: String::new(),
            core_change: String::new(),
        }
    }

    #[test]
    fn table_totality() {
        assert_eq!(DESKTOP_ACTIONS.len(), 13);
        assert_eq!(MOBILE_ACTIONS.len(), 10);
        let desktop: Vec<&str> = DESKTOP_ACTIONS.iter().map(|a| a.action_type).collect();
        assert_eq!(
            desktop,
            [
                "click",
                "doubleClick",
                "tripleClick",
                "rightClick",
                "middleClick",
                "press",
                "write",
                "hotkey",
                "scroll",
                "moveTo",
                "dragTo",
                "wait",
                "finish"
            ]
        );
        let mobile: Vec<&str> = MOBILE_ACTIONS.iter().map(|a| a.action_type).collect();
        assert_eq!(
            mobile,
            [
                "click",
                "long_press",
                "scroll",
                "pinch",
                "input",
                "drag",
                "press",
                "open",
                "multi_touch_gesture",
                "finish"
            ]
        );
        // Each name appears exactly once per table.
        for table in [DESKTOP_ACTIONS, MOBILE_ACTIONS] {
            let mut names: Vec<&str> = table.iter().map(|a| a.action_type).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), table.len());
        }
    }

    #[test]
    fn spatial_is_subset_of_required() {
        for spec in DESKTOP_ACTIONS.iter().chain(MOBILE_ACTIONS) {
            for p in spec.params {
                if p.spatial {
                    assert!(p.required, "{}.{} spatial but optional", spec.action_type, p.name);
                }
            }
        }
    }

    #[test]
    fn desktop_click_with_point_and_bbox_is_ok() {
        let a = action(
            "click",
            &[
                ("point", ParamValue::Point([450, 320])),
                ("bbox", ParamValue::BBox([400, 300, 500, 340])),
            ],
        );
        assert!(validate_action(Platform::Windows, &a).is_ok());
    }

    #[test]
    fn mobile_pinch_missing_magnitude_is_missing_param() {
        let a = action(
            "pinch",
            &[
                ("center_point", ParamValue::Point([500, 500])),
                ("direction", ParamValue::Text("in".into())),
            ],
        );
        let report = validate_action(Platform::Android, &a);
        assert!(report.has(ViolationCode::MissingParam));
        assert_eq!(
            report.violations[0].param.as_deref(),
            Some("magnitude_percent")
        );
    }

    #[test]
    fn desktop_tap_is_unknown_action() {
        let a = action("tap", &[("point", ParamValue::Point([1, 1]))]);
        let report = validate_action(Platform::Linux, &a);
        assert!(report.has(ViolationCode::UnknownAction));
    }

    #[test]
    fn spatial_names_match_contract() {
        assert_eq!(
            spatial_param_names(PlatformClass::Desktop, "dragTo").unwrap(),
            vec!["start_point", "end_point"]
        );
        assert_eq!(
            spatial_param_names(PlatformClass::Desktop, "click").unwrap(),
            vec!["point"]
        );
        assert!(spatial_param_names(PlatformClass::Desktop, "hotkey")
            .unwrap()
            .is_empty());
        assert_eq!(
            spatial_param_names(PlatformClass::Mobile, "pinch").unwrap(),
            vec!["center_point"]
        );
        assert!(matches!(
            spatial_param_names(PlatformClass::Desktop, "tap"),
            Err(ActionSpaceError::UnknownAction { .. })
        ));
    }

    #[test]
    fn nonspatial_actions_have_no_grounding_params() {
        for (class, name) in [
            (PlatformClass::Desktop, "press"),
            (PlatformClass::Desktop, "write"),
            (PlatformClass::Desktop, "hotkey"),
            (PlatformClass::Desktop, "wait"),
            (PlatformClass::Desktop, "finish"),
            (PlatformClass::Mobile, "input"),
            (PlatformClass::Mobile, "press"),
            (PlatformClass::Mobile, "open"),
            (PlatformClass::Mobile, "scroll"),
            (PlatformClass::Mobile, "multi_touch_gesture"),
            (PlatformClass::Mobile, "finish"),
        ] {
            assert!(
                spatial_param_names(class, name).unwrap().is_empty(),
                "{class} {name} should be non-spatial"
            );
        }
    }

    #[test]
    fn wrong_kind_and_unknown_param() {
        let a = action(
            "write",
            &[
                ("text", ParamValue::Number(3.0)),
                ("bogus", ParamValue::Text("x".into())),
            ],
        );
        let report = validate_action(Platform::Windows, &a);
        assert!(report.has(ViolationCode::WrongKind));
        assert!(report.has(ViolationCode::UnknownParam));
    }

    #[test]
    fn enum_rejects_out_of_set_direction() {
        let a = action(
            "scroll",
            &[
                ("direction", ParamValue::Text("sideways".into())),
                ("point", ParamValue::Point([10, 10])),
                ("magnitude_pixels", ParamValue::Number(100.0)),
            ],
        );
        let report = validate_action(Platform::Windows, &a);
        assert!(report.has(ViolationCode::InvalidValue));
    }

    #[test]
    fn multi_touch_needs_two_pointers_with_two_points() {
        use crate::model::PointerPath;
        let one_pointer = action(
            "multi_touch_gesture",
            &[(
                "pointers",
                ParamValue::PointerPaths(vec![PointerPath {
                    id: 0,
                    path: vec![[0, 0], [10, 10]],
                }]),
            )],
        );
        assert!(validate_action(Platform::Android, &one_pointer).has(ViolationCode::InvalidValue));

        let short_path = action(
            "multi_touch_gesture",
            &[(
                "pointers",
                ParamValue::PointerPaths(vec![
                    PointerPath {
                        id: 0,
                        path: vec![[0, 0], [10, 10]],
                    },
                    PointerPath {
                        id: 1,
                        path: vec![[5, 5]],
                    },
                ]),
            )],
        );
        assert!(validate_action(Platform::Android, &short_path).has(ViolationCode::InvalidValue));

        let good = action(
            "multi_touch_gesture",
            &[(
                "pointers",
                ParamValue::PointerPaths(vec![
                    PointerPath {
                        id: 0,
                        path: vec![[0, 0], [10, 10]],
                    },
                    PointerPath {
                        id: 1,
                        path: vec![[5, 5], [20, 20]],
                    },
                ]),
            )],
        );
        assert!(validate_action(Platform::Android, &good).is_ok());
    }

    #[test]
    fn validation_is_deterministic() {
        let a = action("pinch", &[("direction", ParamValue::Text("in".into()))]);
        let first = validate_action(Platform::Ios, &a);
        let second = validate_action(Platform::Ios, &a);
        assert_eq!(first, second);
    }

    #[test]
    fn keylist_accepts_string_or_list() {
        let single = action("hotkey", &[("keys", ParamValue::Text("Ctrl+C".into()))]);
        assert!(validate_action(Platform::Windows, &single).is_ok());
        let list = action(
            "hotkey",
            &[(
                "keys",
                ParamValue::TextList(vec!["ctrl".into(), "c".into()]),
            )],
        );
        assert!(validate_action(Platform::Windows, &list).is_ok());
        let empty = action("hotkey", &[("keys", ParamValue::TextList(vec![]))]);
        assert!(!validate_action(Platform::Windows, &empty).is_ok());
    }

    #[test]
    fn describe_action_space_lists_every_action() {
        let desc = describe_action_space(PlatformClass::Desktop);
        for spec in DESKTOP_ACTIONS {
            assert!(desc.contains(spec.action_type));
        }
    }
}
