//! Fine-grained quality gating: clip selection, three-dimension scoring via
//! a backend, the MSE objective for scorer evaluation, the quality gate, and
//! the duration gate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AnnotationBackend, Attachment, BackendRequest, Stage};
use crate::extract::parse::first_json_object;
use crate::extract::prompts::SCORING_PROMPT;
use crate::model::{QualityScore, VideoMetadata};

pub const DEFAULT_QUALITY_GATE: f64 = 4.2;
pub const DEFAULT_MAX_DURATION: f64 = 720.0;
pub const SCORING_CLIP_SECONDS: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScorerError {
    #[error("NONPOSITIVE_DURATION: {0}")]
    NonpositiveDuration(f64),
    #[error("EMPTY_INPUT: at least one score pair required")]
    EmptyInput,
    #[error("LENGTH_MISMATCH: {left} predictions vs {right} gold")]
    LengthMismatch { left: usize, right: usize },
    #[error("PARSE_ERROR: {0}")]
    Parse(String),
    #[error("BACKEND_ERROR: {0}")]
    Backend(String),
}

impl ScorerError {
    pub fn code(&self) -> &'static str {
        match self {
            ScorerError::NonpositiveDuration(_) => "NONPOSITIVE_DURATION",
            ScorerError::EmptyInput => "EMPTY_INPUT",
            ScorerError::LengthMismatch { .. } => "LENGTH_MISMATCH",
            ScorerError::Parse(_) => "PARSE_ERROR",
            ScorerError::Backend(_) => "BACKEND_ERROR",
        }
    }
}

/// The clip the scorer looks at: the first minute, or the whole video when
/// shorter.
pub fn select_scoring_clip(duration: f64) -> Result<(f64, f64), ScorerError> {
    if !(duration > 0.0) {
        return Err(ScorerError::NonpositiveDuration(duration));
    }
    Ok((0.0, SCORING_CLIP_SECONDS.min(duration)))
}

/// Strict duration gate: true iff `duration < max`.
pub fn duration_gate(meta: &VideoMetadata, max_seconds: f64) -> bool {
    meta.duration < max_seconds
}

/// Mean over samples of the summed squared error across the three
/// dimensions (sums over dimensions, not averages).
pub fn mse_loss(pred: &[QualityScore], gold: &[QualityScore]) -> Result<f64, ScorerError> {
    if pred.len() != gold.len() {
        return Err(ScorerError::LengthMismatch {
            left: pred.len(),
            right: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(ScorerError::EmptyInput);
    }
    let total: f64 = pred
        .iter()
        .zip(gold)
        .map(|(p, g)| {
            (p.topic_relevance - g.topic_relevance).powi(2)
                + (p.instruction_clarity - g.instruction_clarity).powi(2)
                + (p.recording_quality - g.recording_quality).powi(2)
        })
        .sum();
    Ok(total / pred.len() as f64)
}

/// Inclusive all-dimensions gate: true iff every dimension >= threshold.
pub fn passes_quality_gate(score: &QualityScore, threshold: f64) -> bool {
    score.min_dimension() >= threshold
}

/// Per-dimension reasoning strings returned by the scoring backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreReasoning {
    pub topic_relevance: String,
    pub instruction_clarity: String,
    pub recording_quality: String,
    #[serde(default)]
    pub overall_summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringDecision {
    pub video_id: String,
    pub score: QualityScore,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_dim_reasoning: Option<ScoreReasoning>,
    pub passed: bool,
}

pub fn build_scoring_request(video_id: &str, clip: (f64, f64)) -> BackendRequest {
    BackendRequest {
        stage: Stage::Score,
        prompt: SCORING_PROMPT.to_string(),
        attachments: vec![Attachment::clip(video_id, clip.0, clip.1)],
        context: None,
    }
}

fn dimension(
    scores: &serde_json::Value,
    name: &str,
) -> Result<(f64, String), ScorerError> {
    let entry = scores
        .get(name)
        .ok_or_else(|| ScorerError::Parse(format!("missing score dimension {name:?}")))?;
    let value = entry
        .get("score")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| ScorerError::Parse(format!("{name}.score missing or non-numeric")))?;
    // Out-of-rubric values are a hard error: clamping would corrupt the
    // gate's semantics.
    if !(1.0..=5.0).contains(&value) {
        return Err(ScorerError::Parse(format!(
            "{name}.score {value} outside the 1-5 rubric"
        )));
    }
    let reasoning = entry
        .get("reasoning")
        .and_then(|v| v.as_str())
        .unwrap_or_default()
        .to_string();
    Ok((value, reasoning))
}

/// Parse a scoring response (fenced JSON tolerated) into a validated score
/// plus retained reasoning.
pub fn parse_scoring_response(text: &str) -> Result<(QualityScore, ScoreReasoning), ScorerError> {
    let value = first_json_object(text)
        .ok_or_else(|| ScorerError::Parse("no JSON object in scoring response".to_string()))?;
    let scores = value
        .get("scores")
        .ok_or_else(|| ScorerError::Parse("missing \"scores\" object".to_string()))?;
    let (topic, topic_r) = dimension(scores, "topic_relevance")?;
    let (clarity, clarity_r) = dimension(scores, "instruction_clarity")?;
    let (recording, recording_r) = dimension(scores, "recording_quality")?;
    let score = QualityScore::new(topic, clarity, recording)
        .map_err(|e| ScorerError::Parse(e.to_string()))?;
    let reasoning = ScoreReasoning {
        topic_relevance: topic_r,
        instruction_clarity: clarity_r,
        recording_quality: recording_r,
        overall_summary: value
            .get("overall_summary")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string(),
    };
    Ok((score, reasoning))
}

/// Score one video's selected clip through the backend and apply the gate.
pub fn score_video(
    meta: &VideoMetadata,
    clip: (f64, f64),
    backend: &dyn AnnotationBackend,
    gate_threshold: f64,
) -> Result<ScoringDecision, ScorerError> {
    let request = build_scoring_request(&meta.video_id, clip);
    let text = backend
        .call(&request)
        .map_err(|e| ScorerError::Backend(e.to_string()))?;
    let (score, reasoning) = parse_scoring_response(&text)?;
    Ok(ScoringDecision {
        video_id: meta.video_id.clone(),
        score,
        per_dim_reasoning: Some(reasoning),
        passed: passes_quality_gate(&score, gate_threshold),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendError;

    #[test]
    fn clip_shorter_than_a_minute_is_whole_video() {
        assert_eq!(select_scoring_clip(45.0).unwrap(), (0.0, 45.0));
    }

    #[test]
    fn clip_caps_at_first_minute() {
        assert_eq!(select_scoring_clip(300.0).unwrap(), (0.0, 60.0));
    }

    #[test]
    fn clip_exact_minute_boundary() {
        assert_eq!(select_scoring_clip(60.0).unwrap(), (0.0, 60.0));
    }

    #[test]
    fn clip_rejects_nonpositive() {
        assert_eq!(
            select_scoring_clip(0.0).unwrap_err().code(),
            "NONPOSITIVE_DURATION"
        );
    }

    fn meta_with_duration(duration: f64) -> VideoMetadata {
        VideoMetadata {
            video_id: "v".to_string(),
            title: String::new(),
            description: String::new(),
            keywords: vec![],
            channel: String::new(),
            category: String::new(),
            subtitles: None,
            duration,
        }
    }

    #[test]
    fn duration_gate_is_strict() {
        assert!(duration_gate(&meta_with_duration(700.0), 720.0));
        assert!(!duration_gate(&meta_with_duration(720.0), 720.0));
        assert!(duration_gate(&meta_with_duration(0.0), 720.0));
    }

    fn qs(a: f64, b: f64, c: f64) -> QualityScore {
        QualityScore::new(a, b, c).unwrap()
    }

    #[test]
    fn mse_zero_when_equal() {
        let s = vec![qs(4.0, 3.5, 5.0)];
        assert_eq!(mse_loss(&s, &s).unwrap(), 0.0);
    }

    #[test]
    fn mse_single_sample_unit_errors() {
        // gold (5,5,5), pred (4,4,4): 3 * 1^2 / 1 = 3.0
        let loss = mse_loss(&[qs(4.0, 4.0, 4.0)], &[qs(5.0, 5.0, 5.0)]).unwrap();
        assert_eq!(loss, 3.0);
    }

    #[test]
    fn mse_two_samples_half_errors() {
        // six dimension errors of 0.5 across two samples: 6 * 0.25 / 2 = 0.75
        let pred = vec![qs(4.5, 4.5, 4.5), qs(4.5, 4.5, 4.5)];
        let gold = vec![qs(4.0, 4.0, 4.0), qs(5.0, 5.0, 5.0)];
        assert!((mse_loss(&pred, &gold).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn mse_is_symmetric() {
        let a = vec![qs(4.0, 3.0, 5.0), qs(2.0, 2.5, 3.0)];
        let b = vec![qs(5.0, 3.5, 4.0), qs(1.0, 2.0, 4.5)];
        assert_eq!(mse_loss(&a, &b).unwrap(), mse_loss(&b, &a).unwrap());
    }

    #[test]
    fn mse_errors() {
        assert_eq!(mse_loss(&[], &[]).unwrap_err().code(), "EMPTY_INPUT");
        assert_eq!(
            mse_loss(&[qs(4.0, 4.0, 4.0)], &[]).unwrap_err().code(),
            "LENGTH_MISMATCH"
        );
    }

    #[test]
    fn gate_boundary_is_inclusive() {
        assert!(passes_quality_gate(&qs(4.2, 4.2, 4.2), 4.2));
    }

    #[test]
    fn gate_rejects_one_low_dimension() {
        assert!(!passes_quality_gate(&qs(4.5, 4.1, 5.0), 4.2));
    }

    #[test]
    fn gate_accepts_perfect() {
        assert!(passes_quality_gate(&qs(5.0, 5.0, 5.0), 4.2));
    }

    #[test]
    fn gate_is_monotone_per_dimension() {
        let base = qs(4.2, 4.3, 4.4);
        assert!(passes_quality_gate(&base, 4.2));
        // Raising any dimension never flips true to false.
        for bumped in [
            qs(5.0, 4.3, 4.4),
            qs(4.2, 5.0, 4.4),
            qs(4.2, 4.3, 5.0),
        ] {
            assert!(passes_quality_gate(&bumped, 4.2));
        }
    }

    const GOOD_RESPONSE: &str = r#"```json
{
  "scores": {
    "topic_relevance": {"score": 5, "reasoning": "fully on-topic"},
    "instruction_clarity": {"score": 4, "reasoning": "mostly narrated"},
    "recording_quality": {"score": 5, "reasoning": "sharp capture"}
  },
  "overall_summary": "solid walkthrough"
}
```"#;

    #[test]
    fn parse_scoring_fixture() {
        let (score, reasoning) = parse_scoring_response(GOOD_RESPONSE).unwrap();
        assert_eq!(score, qs(5.0, 4.0, 5.0));
        assert_eq!(reasoning.topic_relevance, "fully on-topic");
        assert_eq!(reasoning.overall_summary, "solid walkthrough");
    }

    #[test]
    fn parse_scoring_rejects_zero_score() {
        let text = GOOD_RESPONSE.replace("\"score\": 4", "\"score\": 0");
        assert_eq!(parse_scoring_response(&text).unwrap_err().code(), "PARSE_ERROR");
    }

    #[test]
    fn parse_scoring_rejects_missing_dimension() {
        let text = GOOD_RESPONSE.replace(
            "\"recording_quality\": {\"score\": 5, \"reasoning\": \"sharp capture\"}",
            "\"other\": {}",
        );
        assert_eq!(parse_scoring_response(&text).unwrap_err().code(), "PARSE_ERROR");
    }

    #[test]
    fn score_video_round_trips_through_backend() {
        struct Fixture;
        impl AnnotationBackend for Fixture {
            fn call(&self, request: &BackendRequest) -> Result<String, BackendError> {
                assert_eq!(request.stage, Stage::Score);
                assert_eq!(request.attachments[0].time_range, Some((0.0, 60.0)));
                Ok(GOOD_RESPONSE.to_string())
            }
        }
        let meta = meta_with_duration(300.0);
        let clip = select_scoring_clip(meta.duration).unwrap();
        let decision = score_video(&meta, clip, &Fixture, 4.2).unwrap();
        assert_eq!(decision.score, qs(5.0, 4.0, 5.0));
        assert!(!decision.passed); // instruction_clarity 4.0 < 4.2
    }
}
