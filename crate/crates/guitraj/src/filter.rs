//! Coarse metadata filtering.
//!
//! The built-in desk-scale classifier is a hashed bag-of-words logistic
//! regression trained with the cross-entropy objective and class balancing by
//! upsampling; a remote classifier backend can be plugged in instead. Either
//! way, [`filter_stream`] emits pass/fail decisions with probabilities.

use std::collections::BTreeMap;
use std::io::BufRead;

use base64::Engine;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AnnotationBackend, Attachment, BackendError, BackendRequest, Stage};
use crate::model::VideoMetadata;
use crate::util::fnv1a64;

pub const DEFAULT_FEATURE_DIM: usize = 1 << 18;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
const PROB_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum FilterError {
    #[error("ONE_CLASS_ONLY: both classes must be present (positives={positives}, negatives={negatives})")]
    OneClassOnly { positives: usize, negatives: usize },
    #[error("EMPTY_INPUT: at least one sample required")]
    EmptyInput,
    #[error("LENGTH_MISMATCH: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
}

impl FilterError {
    pub fn code(&self) -> &'static str {
        match self {
            FilterError::OneClassOnly { .. } => "ONE_CLASS_ONLY",
            FilterError::EmptyInput => "EMPTY_INPUT",
            FilterError::LengthMismatch { .. } => "LENGTH_MISMATCH",
        }
    }
}

/// One metadata record with its relevance label (1 = GUI tutorial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMetadata {
    pub meta: VideoMetadata,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

/// Sparse L2-normalized feature vector: sorted `(index, weight)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub entries: Vec<(u32, f64)>,
    pub dim: usize,
}

impl FeatureVector {
    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries
            .iter()
            .map(|&(i, w)| w * dense[i as usize])
            .sum()
    }
}

fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Deterministic hashed bag-of-words over the textual metadata fields, each
/// token prefixed by its field name before hashing, then L2-normalized.
pub fn featurize(meta: &VideoMetadata, dim: usize) -> FeatureVector {
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut add_field = |field: &str, text: &str| {
        for token in tokenize(text) {
            let key = format!("{field}:{token}");
            let index = (fnv1a64(key.as_bytes()) % dim as u64) as u32;
            *counts.entry(index).or_insert(0.0) += 1.0;
        }
    };
    add_field("title", &meta.title);
    add_field("description", &meta.description);
    for kw in &meta.keywords {
        add_field("keywords", kw);
    }
    add_field("channel", &meta.channel);
    add_field("category", &meta.category);
    if let Some(subs) = &meta.subtitles {
        add_field("subtitles", subs);
    }

    let norm = counts.values().map(|w| w * w).sum::<f64>().sqrt();
    let entries = if norm > 0.0 {
        counts.into_iter().map(|(i, w)| (i, w / norm)).collect()
    } else {
        Vec::new()
    };
    FeatureVector { entries, dim }
}

/// Duplicate the minority class (cyclically, after a seeded shuffle) until
/// class counts are equal. All originals are retained in input order.
pub fn upsample_balance(
    data: &[LabeledMetadata],
    seed: u64,
) -> Result<Vec<LabeledMetadata>, FilterError> {
    let positives = data.iter().filter(|d| d.label == 1).count();
    let negatives = data.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(FilterError::OneClassOnly {
            positives,
            negatives,
        });
    }

    let mut out: Vec<LabeledMetadata> = data.to_vec();
    if positives == negatives {
        return Ok(out);
    }
    let minority_label = if positives < negatives { 1 } else { 0 };
    let mut minority: Vec<&LabeledMetadata> =
        data.iter().filter(|d| d.label == minority_label).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    minority.shuffle(&mut rng);

    let deficit = positives.abs_diff(negatives);
    for i in 0..deficit {
        out.push(minority[i % minority.len()].clone());
    }
    Ok(out)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Mean binary cross-entropy: `-(1/N) sum [y ln p + (1-y) ln(1-p)]`, with
/// probabilities clipped to `[1e-12, 1 - 1e-12]` before the logs.
pub fn ce_loss(predictions: &[f64], labels: &[u8]) -> Result<f64, FilterError> {
    if predictions.len() != labels.len() {
        return Err(FilterError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(FilterError::EmptyInput);
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = clip_prob(p);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum();
    Ok(-total / predictions.len() as f64)
}

/// Analytic gradient of mean CE over `sigmoid(w.x + b)` with respect to the
/// weights and bias: `(1/N) sum (p_i - y_i) x_i`.
pub fn ce_gradient(
    weights: &[f64],
    bias: f64,
    features: &[FeatureVector],
    labels: &[u8],
) -> (Vec<f64>, f64) {
    let n = features.len() as f64;
    let mut grad_w = vec![0.0; weights.len()];
    let mut grad_b = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let residual = sigmoid(x.dot(weights) + bias) - f64::from(y);
        for &(i, w) in &x.entries {
            grad_w[i as usize] += residual * w;
        }
        grad_b += residual;
    }
    for g in &mut grad_w {
        *g /= n;
    }
    (grad_w, grad_b / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub feature_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            learning_rate: 2e-5,
            seed: 0,
            batch_size: 32,
            feature_dim: DEFAULT_FEATURE_DIM,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub training_meta: TrainConfig,
    /// Mean training CE after each epoch, in order.
    pub epoch_losses: Vec<f64>,
}

impl LinearClassifier {
    pub fn predict_proba(&self, features: &FeatureVector) -> f64 {
        sigmoid(features.dot(&self.weights) + self.bias)
    }
}

/// Minimize the CE objective over `sigmoid(w.x + b)` with seeded mini-batch
/// SGD. Deterministic given the seed.
pub fn train_classifier(
    data: &[LabeledMetadata],
    config: &TrainConfig,
) -> Result<LinearClassifier, FilterError> {
    if data.is_empty() {
        return Err(FilterError::EmptyInput);
    }
    let positives = data.iter().filter(|d| d.label == 1).count();
    if positives == 0 || positives == data.len() {
        return Err(FilterError::OneClassOnly {
            positives,
            negatives: data.len() - positives,
        });
    }

    let features: Vec<FeatureVector> = data
        .iter()
        .map(|d| featurize(&d.meta, config.feature_dim))
        .collect();
    let labels: Vec<u8> = data.iter().map(|d| d.label).collect();

    let mut weights = vec![0.0; config.feature_dim];
    let mut bias = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs as usize);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size.max(1)) {
            let scale = config.learning_rate / batch.len() as f64;
            let mut bias_step = 0.0;
            // Residuals computed against the pre-batch weights.
            let residuals: Vec<(usize, f64)> = batch
                .iter()
                .map(|&i| {
                    let p = sigmoid(features[i].dot(&weights) + bias);
                    (i, p - f64::from(labels[i]))
                })
                .collect();
            for (i, residual) in residuals {
                for &(j, w) in &features[i].entries {
                    weights[j as usize] -= scale * residual * w;
                }
                bias_step += residual;
            }
            bias -= scale * bias_step;
        }
        let preds: Vec<f64> = features
            .iter()
            .map(|x| sigmoid(x.dot(&weights) + bias))
            .collect();
        epoch_losses.push(ce_loss(&preds, &labels)?);
    }

    Ok(LinearClassifier {
        weights,
        bias,
        training_meta: config.clone(),
        epoch_losses,
    })
}

/// Probability and inclusive-threshold pass decision for one metadata record.
pub fn classify(meta: &VideoMetadata, model: &LinearClassifier, threshold: f64) -> (f64, bool) {
    let features = featurize(meta, model.training_meta.feature_dim);
    let probability = model.predict_proba(&features);
    (probability, probability >= threshold)
}

// ---------------------------------------------------------------------------
// Model checkpoint: single JSON file, weights as base64 little-endian f64.

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    feature_dim: usize,
    weights_b64: String,
    bias: f64,
    training_meta: TrainConfig,
    epoch_losses: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

pub fn save_checkpoint(
    model: &LinearClassifier,
    path: &std::path::Path,
) -> Result<(), CheckpointError> {
    let mut bytes = Vec::with_capacity(model.weights.len() * 8);
    for w in &model.weights {
        bytes.extend_from_slice(&w.to_le_bytes());
    }
    let ckpt = Checkpoint {
        feature_dim: model.training_meta.feature_dim,
        weights_b64: base64::engine::general_purpose::STANDARD.encode(&bytes),
        bias: model.bias,
        training_meta: model.training_meta.clone(),
        epoch_losses: model.epoch_losses.clone(),
    };
    crate::util::write_atomic(path, serde_json::to_string_pretty(&ckpt)?.as_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<LinearClassifier, CheckpointError> {
    let ckpt: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(&ckpt.weights_b64)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    if bytes.len() % 8 != 0 || bytes.len() / 8 != ckpt.feature_dim {
        return Err(CheckpointError::Corrupt(format!(
            "weight bytes {} do not match feature_dim {}",
            bytes.len(),
            ckpt.feature_dim
        )));
    }
    let weights = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<f64>>();
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(CheckpointError::Corrupt("non-finite weight".to_string()));
    }
    Ok(LinearClassifier {
        weights,
        bias: ckpt.bias,
        training_meta: ckpt.training_meta,
        epoch_losses: ckpt.epoch_losses,
    })
}

// ---------------------------------------------------------------------------
// Streaming filter over metadata JSONL.

/// Anything that can turn metadata into a (probability, pass) decision.
pub trait MetaDecider: Send + Sync {
    fn decide(&self, meta: &VideoMetadata) -> Result<(f64, bool), BackendError>;
}

pub struct LocalDecider {
    pub model: LinearClassifier,
    pub threshold: f64,
}

impl MetaDecider for LocalDecider {
    fn decide(&self, meta: &VideoMetadata) -> Result<(f64, bool), BackendError> {
        Ok(classify(meta, &self.model, self.threshold))
    }
}

/// Remote classification through the annotation backend protocol. The
/// response is the classifier prompt's JSON: `is_gui_content`, `confidence`,
/// `reasoning`.
pub struct RemoteDecider<'a> {
    pub backend: &'a dyn AnnotationBackend,
    pub threshold: f64,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    is_gui_content: bool,
    confidence: f64,
    #[allow(dead_code)]
    #[serde(default)]
    reasoning: String,
}

pub fn build_classify_request(meta: &VideoMetadata) -> BackendRequest {
    let input = serde_json::json!({
        "Title": meta.title,
        "Description": meta.description,
        "Tags": meta.keywords,
        "Channel": meta.channel,
        "Category": meta.category,
        "Subtitle": meta.subtitles,
    });
    BackendRequest {
        stage: Stage::Classify,
        prompt: format!(
            "{}\n\n# Metadata\n{}\n",
            crate::extract::prompts::CLASSIFY_PROMPT,
            serde_json::to_string_pretty(&input).expect("metadata serializes")
        ),
        attachments: vec![Attachment::none(&meta.video_id)],
        context: None,
    }
}

impl MetaDecider for RemoteDecider<'_> {
    fn decide(&self, meta: &VideoMetadata) -> Result<(f64, bool), BackendError> {
        let text = self.backend.call(&build_classify_request(meta))?;
        let json = crate::extract::parse::first_json_object(&text).ok_or_else(|| {
            BackendError::InvalidResponse("classifier response has no JSON object".to_string())
        })?;
        let resp: ClassifyResponse = serde_json::from_value(json)
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let confidence = resp.confidence.clamp(0.0, 1.0);
        let probability = if resp.is_gui_content {
            confidence
        } else {
            1.0 - confidence
        };
        Ok((probability, probability >= self.threshold))
    }
}

/// Per-video decision written to the decisions sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub video_id: String,
    pub probability: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCounts {
    pub read: u64,
    pub passed: u64,
    pub failed: u64,
    pub malformed: u64,
}

/// Output of one streaming filter run: decisions in input order, passing
/// metadata, and quarantined raw lines. Malformed lines never abort the run.
#[derive(Debug, Default)]
pub struct FilterOutput {
    pub counts: FilterCounts,
    pub passing: Vec<VideoMetadata>,
    pub decisions: Vec<FilterDecision>,
    pub quarantined: Vec<String>,
}

pub fn filter_stream(
    input: impl BufRead,
    decider: &dyn MetaDecider,
) -> Result<FilterOutput, BackendError> {
    let mut out = FilterOutput::default();
    for line in input.lines() {
        let line = line.map_err(|e| BackendError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.counts.read += 1;
        let meta: VideoMetadata = match serde_json::from_str(&line) {
            Ok(m) => m,
            Err(_) => {
                out.counts.malformed += 1;
                out.quarantined.push(line);
                continue;
            }
        };
        let (probability, pass) = decider.decide(&meta)?;
        out.decisions.push(FilterDecision {
            video_id: meta.video_id.clone(),
            probability,
            pass,
        });
        if pass {
            out.counts.passed += 1;
            out.passing.push(meta);
        } else {
            out.counts.failed += 1;
        }
    }
    Ok(out)
}
