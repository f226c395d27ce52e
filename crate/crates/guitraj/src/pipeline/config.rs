//! Pipeline configuration: one TOML document, every pipeline constant
//! surfaced as a key with its standard value as the default. Relative paths
//! resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub filter: FilterStageConfig,
    pub scorer: ScorerStageConfig,
    pub extract: ExtractStageConfig,
    pub ground: GroundStageConfig,
    pub assemble: AssembleStageConfig,
    pub stats: StatsStageConfig,
    pub backend: BackendConfig,
    pub run: RunConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: PathsConfig::default(),
            filter: FilterStageConfig::default(),
            scorer: ScorerStageConfig::default(),
            extract: ExtractStageConfig::default(),
            ground: GroundStageConfig::default(),
            assemble: AssembleStageConfig::default(),
            stats: StatsStageConfig::default(),
            backend: BackendConfig::default(),
            run: RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Root for all stage outputs and manifests.
    pub stage_dir: PathBuf,
    /// Frame files live at `{frames_dir}/{video_id}/{time_ms}.png`.
    pub frames_dir: PathBuf,
    /// Input video metadata, one JSON object per line.
    pub input_metadata: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            stage_dir: PathBuf::from("out"),
            frames_dir: PathBuf::from("frames"),
            input_metadata: PathBuf::from("videos.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterStageConfig {
    /// Inclusive pass threshold on the relevance probability.
    pub threshold: f64,
    /// "model" (local checkpoint) or "backend" (remote classifier).
    pub decider: String,
    pub model_checkpoint: Option<PathBuf>,
}

impl Default for FilterStageConfig {
    fn default() -> Self {
        FilterStageConfig {
            threshold: 0.5,
            decider: "backend".to_string(),
            model_checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerStageConfig {
    /// All three dimensions must be >= this (inclusive).
    pub quality_gate: f64,
    /// Videos must be strictly shorter than this.
    pub max_duration_seconds: f64,
}

impl Default for ScorerStageConfig {
    fn default() -> Self {
        ScorerStageConfig {
            quality_gate: 4.2,
            max_duration_seconds: 720.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractStageConfig {
    pub window_seconds: f64,
    pub strict_parse: bool,
}

impl Default for ExtractStageConfig {
    fn default() -> Self {
        ExtractStageConfig {
            window_seconds: 240.0,
            strict_parse: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundStageConfig {
    pub frame_offset_seconds: f64,
    /// Dimensions used when synthesizing frames.
    pub frame_width: u32,
    pub frame_height: u32,
    /// Create blank frames on demand instead of requiring pre-extracted
    /// ones; for mock-backed desk runs and tests.
    pub synthesize_frames: bool,
    /// Shell template run when a frame is missing; sees {video_id}, {time},
    /// {out}. Ignored when synthesize_frames is set.
    pub extract_command: Option<String>,
    /// Number of grounded actions rendered with coordinate overlays for
    /// manual review; 0 disables the sampler.
    pub audit_samples: usize,
}

impl Default for GroundStageConfig {
    fn default() -> Self {
        GroundStageConfig {
            frame_offset_seconds: 0.5,
            frame_width: 1920,
            frame_height: 1080,
            synthesize_frames: false,
            extract_command: None,
            audit_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleStageConfig {
    pub shard_size: usize,
    pub grounding: bool,
    pub action_prediction: bool,
    pub trajectory_modeling: bool,
    pub grounding_variant_weights: [f64; 2],
    pub action_variant_weights: [f64; 2],
    pub trajectory_variant_weights: [f64; 2],
}

impl Default for AssembleStageConfig {
    fn default() -> Self {
        AssembleStageConfig {
            shard_size: 1000,
            grounding: true,
            action_prediction: true,
            trajectory_modeling: true,
            grounding_variant_weights: [1.0, 1.0],
            action_variant_weights: [1.0, 1.0],
            trajectory_variant_weights: [1.0, 1.0],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsStageConfig {
    /// Two-column TSV mapping software/website names to categories.
    pub category_map: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// "mock" or "http".
    pub mode: String,
    pub endpoint: String,
    /// Env var holding the bearer token for the HTTP backend.
    pub auth_token_env: String,
    pub cache_dir: Option<PathBuf>,
    pub mock_fixture_dir: Option<PathBuf>,
    pub rate_limit_rps: Option<f64>,
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            mode: "mock".to_string(),
            endpoint: String::new(),
            auth_token_env: "GUITRAJ_BACKEND_TOKEN".to_string(),
            cache_dir: None,
            mock_fixture_dir: None,
            rate_limit_rps: None,
            max_attempts: 3,
            base_backoff_ms: 500,
            timeout_ms: 120_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub concurrency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            concurrency: 4,
        }
    }
}

fn config_err(path: &str, message: impl Into<String>) -> PipelineError {
    PipelineError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(&path.display().to_string(), e.to_string()))?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| {
            // toml errors carry the offending key path in their message.
            config_err(&path.display().to_string(), e.to_string())
        })?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve(base: &Path, p: &mut PathBuf) {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        Self::resolve(base, &mut self.paths.stage_dir);
        Self::resolve(base, &mut self.paths.frames_dir);
        Self::resolve(base, &mut self.paths.input_metadata);
        if let Some(p) = &mut self.filter.model_checkpoint {
            Self::resolve(base, p);
        }
        if let Some(p) = &mut self.backend.cache_dir {
            Self::resolve(base, p);
        }
        if let Some(p) = &mut self.backend.mock_fixture_dir {
            Self::resolve(base, p);
        }
        if let Some(p) = &mut self.stats.category_map {
            Self::resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(0.0..=1.0).contains(&self.filter.threshold) {
            return Err(config_err(
                "filter.threshold",
                format!("{} not in [0, 1]", self.filter.threshold),
            ));
        }
        match self.filter.decider.as_str() {
            "model" => {
                if self.filter.model_checkpoint.is_none() {
                    return Err(config_err(
                        "filter.model_checkpoint",
                        "required when filter.decider = \"model\"",
                    ));
                }
            }
            "backend" => {}
            other => {
                return Err(config_err(
                    "filter.decider",
                    format!("{other:?} is not \"model\" or \"backend\""),
                ))
            }
        }
        if self.scorer.quality_gate <= 0.0 {
            return Err(config_err(
                "scorer.quality_gate",
                "must be positive".to_string(),
            ));
        }
        if self.scorer.max_duration_seconds <= 0.0 {
            return Err(config_err(
                "scorer.max_duration_seconds",
                "must be positive",
            ));
        }
        if self.extract.window_seconds <= 0.0 {
            return Err(config_err("extract.window_seconds", "must be positive"));
        }
        if self.ground.frame_offset_seconds < 0.0 {
            return Err(config_err(
                "ground.frame_offset_seconds",
                "must be non-negative",
            ));
        }
        if self.ground.frame_width == 0 || self.ground.frame_height == 0 {
            return Err(config_err("ground.frame_width", "dimensions must be > 0"));
        }
        if self.assemble.shard_size == 0 {
            return Err(config_err("assemble.shard_size", "must be >= 1"));
        }
        if !(self.assemble.grounding
            || self.assemble.action_prediction
            || self.assemble.trajectory_modeling)
        {
            return Err(config_err(
                "assemble",
                "enable at least one export task",
            ));
        }
        match self.backend.mode.as_str() {
            "mock" => {}
            "http" => {
                if self.backend.endpoint.is_empty() {
                    return Err(config_err(
                        "backend.endpoint",
                        "required when backend.mode = \"http\"",
                    ));
                }
            }
            other => {
                return Err(config_err(
                    "backend.mode",
                    format!("{other:?} is not \"mock\" or \"http\""),
                ))
            }
        }
        if self.backend.max_attempts == 0 {
            return Err(config_err("backend.max_attempts", "must be >= 1"));
        }
        if self.run.concurrency == 0 {
            return Err(config_err("run.concurrency", "must be >= 1"));
        }
        Ok(())
    }

    pub fn export_config(&self) -> crate::assemble::ExportConfig {
        crate::assemble::ExportConfig {
            grounding: self.assemble.grounding,
            action_prediction: self.assemble.action_prediction,
            trajectory_modeling: self.assemble.trajectory_modeling,
            grounding_variant_weights: self.assemble.grounding_variant_weights,
            action_variant_weights: self.assemble.action_variant_weights,
            trajectory_variant_weights: self.assemble.trajectory_variant_weights,
            shard_size: self.assemble.shard_size,
            seed: self.run.seed,
        }
    }
}
