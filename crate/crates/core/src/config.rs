//! Run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::grpo::{GrpoConfig, OptimizerKind};
use crate::tracer::DEFAULT_BUDGET;

pub const SEED_ENV: &str = "SEMTRACE_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub mini_batch: usize,
    pub learning_rate: f64,
    pub max_steps: u64,
    pub group_size: usize,
    pub align_ratio: f64,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
    pub optimizer: OptimizerKind,
    pub step_budget: u64,
    pub buffer_capacity: usize,
    /// Write a checkpoint every this many steps (and always at the end).
    pub checkpoint_every: u64,
    pub dataset: PathBuf,
    pub run_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            batch_size: 128,
            mini_batch: 64,
            learning_rate: 1e-6,
            max_steps: 1000,
            group_size: 8,
            align_ratio: 0.4,
            clip_eps: 0.2,
            kl_beta: 1e-3,
            std_floor: 1e-6,
            optimizer: OptimizerKind::Sgd,
            step_budget: DEFAULT_BUDGET,
            buffer_capacity: 4096,
            checkpoint_every: 25,
            dataset: PathBuf::from("data/problems.jsonl"),
            run_dir: PathBuf::from("runs/default"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {message}")]
    Field { field: &'static str, message: String },
    #[error("cannot read config: {0}")]
    Read(String),
}

fn field(field: &'static str, message: &str) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.to_string(),
    }
}

impl RunConfig {
    /// Reads JSON; missing fields take their defaults. Relative dataset and
    /// run paths stay relative to the working directory.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Read(e.to_string()))
    }

    /// Applies `SEMTRACE_SEED` if set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| field("seed", &format!("{SEED_ENV}={s:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.batch_size == 0 {
            return Err(field("batch_size", "must be at least 1"));
        }
        if self.mini_batch == 0 {
            return Err(field("mini_batch", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(field("learning_rate", "must be a positive number"));
        }
        if self.group_size < 2 {
            return Err(field("group_size", "must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.align_ratio) {
            return Err(field("align_ratio", "must lie in [0, 1]"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(field("clip_eps", "must lie in (0, 1)"));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(field("kl_beta", "must be a non-negative number"));
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return Err(field("std_floor", "must be a positive number"));
        }
        if self.step_budget == 0 {
            return Err(field("step_budget", "must be at least 1"));
        }
        if self.buffer_capacity == 0 {
            return Err(field("buffer_capacity", "must be at least 1"));
        }
        if self.checkpoint_every == 0 {
            return Err(field("checkpoint_every", "must be at least 1"));
        }
        self.grpo()
            .validate()
            .map_err(|e| field("optimizer", &e.to_string()))
    }

    pub fn grpo(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            clip_eps: self.clip_eps,
            kl_beta: self.kl_beta,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            std_floor: self.std_floor,
            mini_batch: self.mini_batch,
        }
    }

    /// Number of alignment slots per batch.
    pub fn align_slots(&self) -> usize {
        align_count(self.align_ratio, self.batch_size)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// `floor(ratio * b)`, with a tolerance so that e.g. 0.4 * 10 gives 4.
pub fn align_count(ratio: f64, b: usize) -> usize {
    ((ratio * b as f64) + 1e-9).floor() as usize
}
