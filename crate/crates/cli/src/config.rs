//! Experiment configuration files.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use noisy_rm::learner::{Method, TrainConfig};
use serde::{Deserialize, Serialize};

pub const ENVS: [&str; 1] = ["gold"];

/// One experiment: every listed method trained once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub methods: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon: f64,
    pub total_steps: u64,
    pub eval_every: u64,
    pub horizon: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            env: "gold".into(),
            methods: vec!["tdm".into()],
            seeds: vec![0],
            out: None,
            learning_rate: t.learning_rate,
            discount: t.discount,
            epsilon: t.epsilon,
            total_steps: t.total_steps,
            eval_every: t.eval_every,
            horizon: t.horizon,
        }
    }
}

/// A run manifest embeds the config that produced it.
#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub file: String,
}

impl ExperimentConfig {
    /// Reads a config file, or the config embedded in a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("{} is not valid JSON", path.display()))?;
        let value = match value.get("config") {
            Some(inner) if value.get("runs").is_some() => inner.clone(),
            _ => value,
        };
        serde_json::from_value(value)
            .with_context(|| format!("invalid config in {}", path.display()))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            discount: self.discount,
            epsilon: self.epsilon,
            total_steps: self.total_steps,
            eval_every: self.eval_every,
            horizon: self.horizon,
            seed,
        }
    }

    /// Checks every name and hyperparameter, returning the parsed methods.
    pub fn check(&self) -> Result<Vec<Method>> {
        if !ENVS.contains(&self.env.as_str()) {
            bail!(
                "unknown env `{}` (expected one of: {})",
                self.env,
                ENVS.join(", ")
            );
        }
        if self.methods.is_empty() || self.seeds.is_empty() {
            bail!("at least one method and one seed are required");
        }
        let methods = self
            .methods
            .iter()
            .map(|m| m.parse::<Method>().map_err(anyhow::Error::msg))
            .collect::<Result<Vec<_>>>()?;
        self.train_config(0).validate()?;
        Ok(methods)
    }
}
