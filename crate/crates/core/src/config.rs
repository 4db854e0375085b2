//! One JSON document configures a trial, a sweep, and a live session.
//!
//! ```json
//! { "seed": 7, "max_steps": 10000, "tail_window": 5000,
//!   "learner": {...}, "env": {...}, "coder": {...},
//!   "feedback": {...} | null, "sweep": {...}, "output": {...}, "live": {...} }
//! ```
//!
//! Every section and field is optional and falls back to the defaults.
//! Dotted overrides such as `learner.alpha_v=0.02` are applied to the raw JSON
//! before it is typed, so they are checked exactly like file content.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::env::EnvConfig;
use crate::error::{config_err, Error, Result};
use crate::feedback::FeedbackModelConfig;
use crate::learner::LearnerConfig;
use crate::tiles::TileCoderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub seed: u64,
    pub max_steps: usize,
    pub tail_window: usize,
    pub learner: LearnerConfig,
    pub env: EnvConfig,
    pub coder: TileCoderConfig,
    pub feedback: Option<FeedbackModelConfig>,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_steps: 10_000,
            tail_window: 5_000,
            learner: LearnerConfig::default(),
            env: EnvConfig::default(),
            coder: TileCoderConfig::default(),
            feedback: None,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps == 0 {
            return config_err("max_steps must be at least 1");
        }
        if self.tail_window == 0 || self.tail_window > self.max_steps {
            return config_err(format!(
                "tail_window ({}) must lie in [1, max_steps = {}]",
                self.tail_window, self.max_steps
            ));
        }
        self.learner.validate()?;
        self.env.validate()?;
        self.coder.validate()?;
        if let Some(fb) = &self.feedback {
            fb.validate()?;
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_feedback(mut self, feedback: Option<FeedbackModelConfig>) -> Self {
        self.feedback = feedback;
        self
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub p_feedback: Vec<f64>,
    pub p_correct: Vec<f64>,
    pub smear: Vec<f64>,
    pub seeds_per_cell: usize,
    pub control_seeds: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    /// Optional additional P(feedback) level appended to the grid.
    pub extra_p_feedback: Option<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            p_feedback: vec![0.03, 0.05, 0.09],
            p_correct: vec![0.6, 0.75, 0.9],
            smear: vec![0.2, 0.5, 0.9],
            seeds_per_cell: 8,
            control_seeds: 60,
            base_seed: 0,
            jobs: 0,
            extra_p_feedback: None,
        }
    }
}

impl SweepConfig {
    pub fn p_feedback_levels(&self) -> Vec<f64> {
        let mut levels = self.p_feedback.clone();
        if let Some(extra) = self.extra_p_feedback {
            if !levels.contains(&extra) {
                levels.push(extra);
            }
        }
        levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_feedback.is_empty() || self.p_correct.is_empty() || self.smear.is_empty() {
            return config_err("sweep grid needs at least one level per parameter");
        }
        if self.seeds_per_cell == 0 {
            return config_err("sweep.seeds_per_cell must be at least 1");
        }
        for p in self.p_feedback_levels() {
            for q in &self.p_correct {
                for s in &self.smear {
                    FeedbackModelConfig::new(p, *q, *s).validate()?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
    pub dump_weights: bool,
    pub per_step_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LiveConfig {
    pub bind: String,
    pub port: u16,
    /// Pacing period; 30 ms is roughly the nominal 33 Hz rate.
    pub period_ms: u64,
    pub log_path: Option<String>,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: 8737, period_ms: 30, log_path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub max_steps: usize,
    pub tail_window: usize,
    pub learner: LearnerConfig,
    pub env: EnvConfig,
    pub coder: TileCoderConfig,
    pub feedback: Option<FeedbackModelConfig>,
    pub sweep: SweepConfig,
    pub output: OutputConfig,
    pub live: LiveConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::from_trial(TrialConfig::default())
    }
}

impl ExperimentConfig {
    pub fn from_trial(trial: TrialConfig) -> Self {
        Self {
            seed: trial.seed,
            max_steps: trial.max_steps,
            tail_window: trial.tail_window,
            learner: trial.learner,
            env: trial.env,
            coder: trial.coder,
            feedback: trial.feedback,
            sweep: SweepConfig::default(),
            output: OutputConfig::default(),
            live: LiveConfig::default(),
        }
    }

    pub fn trial(&self) -> TrialConfig {
        TrialConfig {
            seed: self.seed,
            max_steps: self.max_steps,
            tail_window: self.tail_window,
            learner: self.learner.clone(),
            env: self.env.clone(),
            coder: self.coder.clone(),
            feedback: self.feedback.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trial().validate()?;
        self.sweep.validate()
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_path_to_error::deserialize(value)
            .map_err(|e| Error::Validation { path: e.path().to_string(), message: e.inner().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::load(text, &[])
    }

    /// Parses `text`, applies `key=value` overrides, types and validates.
    pub fn load(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Validation {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        Self::from_value(value)
    }

    pub fn load_path(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::load(&text, overrides)
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Applies one `dotted.key=value` override. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::Validation {
        path: assignment.to_string(),
        message: "override must look like key=value".into(),
    })?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Validation { path: assignment.into(), message: "empty override key".into() });
    }
    let new_value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    if !root.is_object() {
        return Err(Error::Validation { path: key.into(), message: "config root must be an object".into() });
    }
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Validation { path: key.into(), message: format!("`{part}` is not a section") })?;
        let child = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if child.is_null() {
            *child = Value::Object(Default::default());
        }
        node = child;
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Validation { path: key.into(), message: "parent is not a section".into() })?;
    obj.insert(parts[parts.len() - 1].to_string(), new_value);
    Ok(())
}
