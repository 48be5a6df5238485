use std::path::{Path, PathBuf};

use lstd_ac::learner::LearnerConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

/// Everything a training run needs. JSON keys are the long flag names of
/// the `train` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunConfig {
    /// Grid text file.
    pub grid: Option<PathBuf>,
    /// Roughness CSV; when absent roughness is drawn from `env_seed`.
    pub roughness: Option<PathBuf>,
    pub env_seed: u64,
    pub train_seed: u64,
    /// Trace decay λ.
    pub lambda: f64,
    /// Gain clip radius D.
    pub clip_radius: f64,
    /// Actor step constant c.
    pub actor_step: f64,
    /// Safety neighbourhood radius r_n.
    pub radius: usize,
    pub theta0: Vec<f64>,
    pub ridge_delta: f64,
    pub actor_warmup_steps: Option<u64>,
    pub trace_reset_on_restart: bool,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub max_episode_steps: u64,
    /// Run the critic only (β ≡ 0).
    pub freeze_actor: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let learner = LearnerConfig::default();
        Self {
            grid: None,
            roughness: None,
            env_seed: 1,
            train_seed: 1,
            lambda: learner.lambda,
            clip_radius: learner.clip_radius,
            actor_step: learner.actor_step,
            radius: 2,
            theta0: vec![50.0, -10.0],
            ridge_delta: learner.ridge_delta,
            actor_warmup_steps: learner.actor_warmup_steps,
            trace_reset_on_restart: learner.trace_reset_on_restart,
            total_steps: 1_000_000,
            checkpoint_every: 10_000,
            max_episode_steps: learner.max_episode_steps,
            freeze_actor: false,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config file.
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_value(serde_json::from_str(&text)?)
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        serde_json::from_value(value).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Overlays the keys of `overrides` onto this config.
    pub fn merged(&self, overrides: Value) -> CliResult<Self> {
        let mut base = serde_json::to_value(self)?;
        if let (Value::Object(b), Value::Object(o)) = (&mut base, overrides) {
            for (k, v) in o {
                b.insert(k, v);
            }
        }
        Self::from_value(base)
    }

    pub fn grid_path(&self) -> CliResult<&Path> {
        self.grid.as_deref().ok_or_else(|| CliError::Validation("no grid file given".into()))
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig {
            lambda: self.lambda,
            clip_radius: self.clip_radius,
            actor_step: self.actor_step,
            dim: self.theta0.len(),
            trace_reset_on_restart: self.trace_reset_on_restart,
            actor_warmup_steps: self.actor_warmup_steps,
            ridge_delta: self.ridge_delta,
            max_episode_steps: self.max_episode_steps,
            actor_enabled: !self.freeze_actor,
            actor_uses_updated_critic: false,
            record_stride: u64::MAX,
            checkpoint_every: self.checkpoint_every,
        }
    }

    /// Checks file references and numeric ranges.
    pub fn validate(&self) -> CliResult<()> {
        let grid = self.grid_path()?;
        for path in std::iter::once(grid).chain(self.roughness.as_deref()) {
            if !path.is_file() {
                return Err(CliError::Validation(format!("{} does not exist", path.display())));
            }
        }
        if self.theta0.len() != 2 {
            return Err(CliError::Validation(format!("theta0 must have 2 entries, got {}", self.theta0.len())));
        }
        if self.theta0.iter().any(|t| !t.is_finite()) {
            return Err(CliError::Validation("theta0 must be finite".into()));
        }
        self.learner_config().validate()?;
        Ok(())
    }
}
