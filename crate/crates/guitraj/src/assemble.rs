//! Converts grounded episodes into the three pretraining sample formats and
//! writes sharded JSONL dataset files with a checksummed manifest.
//!
//! Count laws: one grounding sample per grounded spatial action, one
//! action-prediction sample per step (finish included), one trajectory
//! sample per complete episode. Trajectory samples mask every image part;
//! the loss lands on text only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::describe_action_space;
use crate::model::{
    GroundedAction, GroundedEpisode, Message, Part, Role, SampleMeta, TaskKind, TrainingSample,
};
use crate::util::{fnv1a64, write_atomic};

#[derive(Debug, Error, PartialEq)]
pub enum AssembleError {
    #[error("NO_TASKS_ENABLED: enable at least one export task")]
    NoTasksEnabled,
    #[error("BAD_SHARD_SIZE: shard size must be >= 1")]
    BadShardSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub grounding: bool,
    pub action_prediction: bool,
    pub trajectory_modeling: bool,
    /// Relative weight of each prompt variant, per task; two variants each.
    pub grounding_variant_weights: [f64; 2],
    pub action_variant_weights: [f64; 2],
    pub trajectory_variant_weights: [f64; 2],
    pub shard_size: usize,
    pub seed: u64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        ExportConfig {
            grounding: true,
            action_prediction: true,
            trajectory_modeling: true,
            grounding_variant_weights: [1.0, 1.0],
            action_variant_weights: [1.0, 1.0],
            trajectory_variant_weights: [1.0, 1.0],
            shard_size: 1000,
            seed: 0,
        }
    }
}

impl ExportConfig {
    pub fn validate(&self) -> Result<(), AssembleError> {
        if !(self.grounding || self.action_prediction || self.trajectory_modeling) {
            return Err(AssembleError::NoTasksEnabled);
        }
        if self.shard_size == 0 {
            return Err(AssembleError::BadShardSize);
        }
        Ok(())
    }
}

/// Seeded weighted choice between the two template variants, keyed by the
/// sample's identity so export order cannot change the outcome.
fn pick_variant(seed: u64, key: &str, weights: [f64; 2]) -> usize {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(key.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a64(&bytes));
    let total = weights[0] + weights[1];
    if total <= 0.0 {
        return 0;
    }
    let x: f64 = rng.gen_range(0.0..total);
    usize::from(x >= weights[0])
}

/// Serialize one step's action as the target JSON: action type, non-spatial
/// parameters as extracted, spatial parameters as grounded relative
/// `[y, x]` points (resolution-independent).
pub fn action_target_json(step: &GroundedAction) -> serde_json::Value {
    let mut obj = serde_json::Map::new();
    obj.insert(
        "action".to_string(),
        serde_json::Value::String(step.base.action_type.clone()),
    );
    for (name, value) in &step.base.action_parameters {
        if step.resolved.contains_key(name) || name == "bbox" {
            continue;
        }
        obj.insert(name.clone(), serde_json::to_value(value).unwrap());
    }
    for (name, target) in &step.resolved {
        obj.insert(
            name.clone(),
            serde_json::json!([target.rel_point.y, target.rel_point.x]),
        );
    }
    serde_json::Value::Object(obj)
}

fn action_json_line(step: &GroundedAction) -> String {
    serde_json::Value::Array(vec![action_target_json(step)]).to_string()
}

const GROUNDING_POINT_PROMPT: &str = "Locate UI components that match the command: \"{}\". Output a JSON in the format [{\"point\": [...], \"label\": \"{the_whole_command}\"}, ...].";
const GROUNDING_BBOX_PROMPT: &str = "Locate UI components that match the command: \"{}\". Output a JSON in the format [{\"bbox_2d\": [...], \"label\": \"{the_whole_command}\"}, ...].";

/// One sample per grounded spatial action: locate the element named by the
/// step's grounding instruction on the step's source frame.
pub fn export_grounding_samples(
    episodes: &[GroundedEpisode],
    config: &ExportConfig,
) -> Vec<TrainingSample> {
    let mut samples = Vec::new();
    for episode in episodes {
        for (step_index, step) in episode.steps.iter().enumerate() {
            for (point_name, target) in &step.resolved {
                let key = format!(
                    "ground/{}/{}/{}/{}",
                    episode.video_id, episode.task_id, step_index, point_name
                );
                let variant = pick_variant(config.seed, &key, config.grounding_variant_weights);
                let command = &step.base.grounding_instruction;
                let (template, label) = match variant {
                    0 => (
                        GROUNDING_POINT_PROMPT,
                        serde_json::json!([{
                            "point": [target.rel_point.y, target.rel_point.x],
                            "label": command,
                        }]),
                    ),
                    _ => (
                        GROUNDING_BBOX_PROMPT,
                        serde_json::json!([{
                            "bbox_2d": [
                                target.rel_bbox.y1,
                                target.rel_bbox.x1,
                                target.rel_bbox.y2,
                                target.rel_bbox.x2,
                            ],
                            "label": command,
                        }]),
                    ),
                };
                let prompt = template.replacen("{}", command, 1);
                samples.push(TrainingSample {
                    task_kind: TaskKind::Grounding,
                    messages: vec![
                        Message {
                            role: Role::User,
                            parts: vec![
                                Part::image(&step.frame.path, true),
                                Part::text(prompt, true),
                            ],
                        },
                        Message {
                            role: Role::Assistant,
                            parts: vec![Part::text(label.to_string(), false)],
                        },
                    ],
                    meta: SampleMeta {
                        video_id: episode.video_id.clone(),
                        task_id: episode.task_id,
                        step_index: Some(step_index),
                        point_name: Some(point_name.clone()),
                        variant,
                        pixel_point: Some(target.pixel_point),
                        pixel_bbox: target.pixel_bbox,
                        step_notes: BTreeMap::new(),
                    },
                });
            }
        }
    }
    samples
}

const ACTION_PROMPT_PLAIN: &str = "You are a GUI agent. You will be provided with a screenshot, a goal, and your action history. You need to perform the next action to complete the task.\n\n## Action Space\n{action_space}\n\n## Goal\n{goal}\n\n## Previous Actions\n{history}\n\nNow, output the next action in json format [{\"action\": \"{action_name}\"}, ...].";
const ACTION_PROMPT_THOUGHT: &str = "You are a GUI agent. You will be provided with a screenshot, a goal, and your action history. You need to analyze the current situation and perform the next action to complete the task.\n\n## Action Space\n{action_space}\n\n## Goal\n{goal}\n\n## Previous Actions\n{history}\n\nPlease output your response in the following format:\n\nThought: <your reasoning about what to do next>\nAction: <the action you will take>\n\n```json\n[{\"action\": \"{action_name}\"}, ...]\n```";

fn step_notes(step: &GroundedAction) -> BTreeMap<String, String> {
    let mut notes = BTreeMap::new();
    if !step.base.core_change.is_empty() {
        notes.insert("core_change".to_string(), step.base.core_change.clone());
    }
    if !step.base.core_change_reason.is_empty() {
        notes.insert(
            "core_change_reason".to_string(),
            step.base.core_change_reason.clone(),
        );
    }
    notes
}

/// One sample per step: predict the step's action from the step frame, the
/// goal, and the serialized preceding actions. Finish steps included.
pub fn export_action_prediction_samples(
    episodes: &[GroundedEpisode],
    config: &ExportConfig,
) -> Vec<TrainingSample> {
    let mut samples = Vec::new();
    for episode in episodes {
        let action_space = describe_action_space(episode.platform.class());
        for (step_index, step) in episode.steps.iter().enumerate() {
            let key = format!(
                "action/{}/{}/{}",
                episode.video_id, episode.task_id, step_index
            );
            let variant = pick_variant(config.seed, &key, config.action_variant_weights);
            let history = episode.steps[..step_index]
                .iter()
                .map(action_json_line)
                .collect::<Vec<_>>()
                .join("\n");
            let template = if variant == 0 {
                ACTION_PROMPT_PLAIN
            } else {
                ACTION_PROMPT_THOUGHT
            };
            let prompt = template
                .replace("{action_space}", &action_space)
                .replace("{goal}", &episode.instruction)
                .replace("{history}", &history);
            let target = if variant == 0 {
                action_json_line(step)
            } else {
                format!(
                    "Thought: {}\nAction: {}\n\n```json\n{}\n```",
                    step.base.action_reason,
                    step.base.action_type,
                    action_json_line(step)
                )
            };
            samples.push(TrainingSample {
                task_kind: TaskKind::ActionPrediction,
                messages: vec![
                    Message {
                        role: Role::User,
                        parts: vec![
                            Part::image(&step.frame.path, true),
                            Part::text(prompt, true),
                        ],
                    },
                    Message {
                        role: Role::Assistant,
                        parts: vec![Part::text(target, false)],
                    },
                ],
                meta: SampleMeta {
                    video_id: episode.video_id.clone(),
                    task_id: episode.task_id,
                    step_index: Some(step_index),
                    point_name: None,
                    variant,
                    pixel_point: None,
                    pixel_bbox: None,
                    step_notes: step_notes(step),
                },
            });
        }
    }
    samples
}

const TRAJECTORY_PROMPT_PLAIN: &str = "Based on the screenshot and the goal: \"{goal}\", perform the next action to complete the task. Output a JSON in the format [{\"action\": \"{action_name}\"}, ...].";
const TRAJECTORY_PROMPT_THOUGHT: &str = "Based on the screenshot and the goal: \"{goal}\", analyze the current situation and perform the next action to complete the task.\n\nPlease output your response in the following format:\n\nThought: <your reasoning about what to do next>\nAction: <the action you will take>\n\n```json\n[{\"action\": \"{action_name}\"}, ...]\n```";

/// One multi-turn sample per complete episode: the goal prompt, then
/// alternating (frame, action) turns. Loss is computed exclusively on text:
/// every image part is masked.
pub fn export_trajectory_samples(
    episodes: &[GroundedEpisode],
    config: &ExportConfig,
) -> Vec<TrainingSample> {
    let mut samples = Vec::new();
    for episode in episodes {
        if !episode.complete || episode.steps.is_empty() {
            continue;
        }
        let key = format!("traj/{}/{}", episode.video_id, episode.task_id);
        let variant = pick_variant(config.seed, &key, config.trajectory_variant_weights);
        let template = if variant == 0 {
            TRAJECTORY_PROMPT_PLAIN
        } else {
            TRAJECTORY_PROMPT_THOUGHT
        };
        let prompt = template.replace("{goal}", &episode.instruction);

        let mut messages = Vec::with_capacity(episode.steps.len() * 2);
        for (step_index, step) in episode.steps.iter().enumerate() {
            let mut parts = Vec::new();
            if step_index == 0 {
                parts.push(Part::text(prompt.clone(), true));
            }
            parts.push(Part::image(&step.frame.path, true));
            messages.push(Message {
                role: Role::User,
                parts,
            });
            let target = if variant == 0 {
                action_json_line(step)
            } else {
                format!(
                    "Thought: {}\nAction: {}\n\n```json\n{}\n```",
                    step.base.action_reason,
                    step.base.action_type,
                    action_json_line(step)
                )
            };
            messages.push(Message {
                role: Role::Assistant,
                parts: vec![Part::text(target, false)],
            });
        }
        samples.push(TrainingSample {
            task_kind: TaskKind::TrajectoryModeling,
            messages,
            meta: SampleMeta {
                video_id: episode.video_id.clone(),
                task_id: episode.task_id,
                step_index: None,
                point_name: None,
                variant,
                pixel_point: None,
                pixel_bbox: None,
                step_notes: BTreeMap::new(),
            },
        });
    }
    samples
}

/// Run the enabled exports over the episodes. Sample order is deterministic:
/// episodes in input order, task streams concatenated grounding, action
/// prediction, trajectory modeling.
pub fn export_samples(
    episodes: &[GroundedEpisode],
    config: &ExportConfig,
) -> Result<Vec<TrainingSample>, AssembleError> {
    config.validate()?;
    let mut samples = Vec::new();
    if config.grounding {
        samples.extend(export_grounding_samples(episodes, config));
    }
    if config.action_prediction {
        samples.extend(export_action_prediction_samples(episodes, config));
    }
    if config.trajectory_modeling {
        samples.extend(export_trajectory_samples(episodes, config));
    }
    for sample in &samples {
        sample
            .check_loss_mask()
            .expect("exported samples satisfy the loss-mask law");
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub path: String,
    pub task_kind: TaskKind,
    pub samples: usize,
    /// 64-bit FNV-1a over the shard's bytes, hex.
    pub fnv1a64: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub counts: BTreeMap<String, usize>,
    pub shards: Vec<ShardInfo>,
}

/// Write per-kind JSONL shards of at most `shard_size` samples under
/// `out_dir`. Identical inputs and seed produce byte-identical shards; zero
/// samples produce a zero-count manifest and no shard files.
pub fn write_shards(
    samples: &[TrainingSample],
    shard_size: usize,
    out_dir: &Path,
) -> std::io::Result<ShardManifest> {
    if shard_size == 0 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            AssembleError::BadShardSize.to_string(),
        ));
    }
    let mut by_kind: BTreeMap<&'static str, Vec<&TrainingSample>> = BTreeMap::new();
    for sample in samples {
        by_kind
            .entry(sample.task_kind.as_str())
            .or_default()
            .push(sample);
    }

    let mut manifest = ShardManifest::default();
    for kind in [
        TaskKind::Grounding,
        TaskKind::ActionPrediction,
        TaskKind::TrajectoryModeling,
    ] {
        let kind_samples = by_kind.remove(kind.as_str()).unwrap_or_default();
        manifest
            .counts
            .insert(kind.as_str().to_string(), kind_samples.len());
        for (i, chunk) in kind_samples.chunks(shard_size).enumerate() {
            let mut bytes = Vec::new();
            for sample in chunk {
                bytes.extend_from_slice(serde_json::to_string(sample)?.as_bytes());
                bytes.push(b'\n');
            }
            let name = format!("{}-{:05}.jsonl", kind.as_str(), i);
            let path = out_dir.join(&name);
            write_atomic(&path, &bytes)?;
            manifest.shards.push(ShardInfo {
                path: name,
                task_kind: kind,
                samples: chunk.len(),
                fnv1a64: format!("{:016x}", fnv1a64(&bytes)),
            });
        }
    }
    write_atomic(
        &out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

/// Returns paths of sample image parts that do not exist on disk, for the
/// export-time frame-resolution check.
pub fn missing_image_refs(samples: &[TrainingSample]) -> Vec<PathBuf> {
    use crate::model::PartContent;
    let mut missing = Vec::new();
    for sample in samples {
        for message in &sample.messages {
            for part in &message.parts {
                if let PartContent::Image { image } = &part.content {
                    let path = PathBuf::from(image);
                    if !path.exists() && !missing.contains(&path) {
                        missing.push(path);
                    }
                }
            }
        }
    }
    missing
}
