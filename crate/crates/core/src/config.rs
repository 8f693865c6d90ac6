//! Run configuration, read from TOML with one section per component.
//!
//! Keys under `[world_model]`, `[swag]`, `[safety]` and `[general]` carry the
//! usual hyperparameter names (`penalty_power_factor`, `update_steps`, ...).
//! [`Config::default`] is sized for a laptop CPU; [`Config::reference`] holds
//! the full-scale values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::critics::CriticConfig;
use crate::envs::{ActionRepeat, Environment, GridLayout, GridNavigation, PointHazard2D, PointHazardConfig};
use crate::error::{Error, Result};
use crate::ucb::BoundMode;
use crate::world_model::{SwagConfig, WorldModelConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// `grid8` or `point`.
    pub name: String,
    /// Constraint threshold `d`; overrides the task's own default when set.
    pub threshold: Option<f64>,
    pub grid: GridLayout,
    pub point: PointHazardConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self { name: "grid8".into(), threshold: None, grid: GridLayout::default(), point: PointHazardConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldModelSection {
    pub batch_size: usize,
    pub sequence_length: usize,
    pub learning_rate: f64,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub unsafe_weight: f64,
    pub min_stddev: f64,
}

impl Default for WorldModelSection {
    fn default() -> Self {
        Self {
            batch_size: 8,
            sequence_length: 8,
            learning_rate: 3e-3,
            hidden_units: 32,
            hidden_layers: 2,
            unsafe_weight: 10.0,
            min_stddev: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwagSection {
    pub burn_in_steps: u64,
    pub period_steps: u64,
    pub models: usize,
    pub decay: f64,
    pub cyclic_lr_factor: f64,
    pub posterior_samples: usize,
}

impl Default for SwagSection {
    fn default() -> Self {
        Self { burn_in_steps: 200, period_steps: 20, models: 20, decay: 0.8, cyclic_lr_factor: 5.0, posterior_samples: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetySection {
    pub safety_critic_learning_rate: f64,
    pub initial_penalty: f64,
    pub initial_lagrangian: f64,
    /// `μ` grows by the factor `1 + penalty_power_factor` each update.
    pub penalty_power_factor: f64,
    pub safety_discount_factor: f64,
}

impl Default for SafetySection {
    fn default() -> Self {
        Self {
            safety_critic_learning_rate: 3e-3,
            initial_penalty: 1e-3,
            initial_lagrangian: 1e-6,
            penalty_power_factor: 1e-3,
            safety_discount_factor: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneralSection {
    pub update_steps: usize,
    pub critic_learning_rate: f64,
    pub policy_learning_rate: f64,
    pub action_repeat: usize,
    pub discount_factor: f64,
    pub td_lambda_factor: f64,
    pub sequence_generation_horizon: usize,
}

impl Default for GeneralSection {
    fn default() -> Self {
        Self {
            update_steps: 20,
            critic_learning_rate: 3e-3,
            policy_learning_rate: 1e-3,
            action_repeat: 1,
            discount_factor: 0.99,
            td_lambda_factor: 0.95,
            sequence_generation_horizon: 15,
        }
    }
}

/// Which agent to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Optimistic task bound, pessimistic cost bounds, Augmented Lagrangian.
    #[default]
    Lambda,
    /// Posterior mean for both task and costs, Augmented Lagrangian.
    Greedy,
    /// Optimistic task bound and no constraint term.
    Unsafe,
}

impl Variant {
    pub fn bound_mode(self) -> BoundMode {
        match self {
            Variant::Greedy => BoundMode::Greedy,
            _ => BoundMode::Optimistic,
        }
    }

    pub fn penalized(self) -> bool {
        self != Variant::Unsafe
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Variant::Lambda),
            "greedy" => Ok(Variant::Greedy),
            "unsafe" => Ok(Variant::Unsafe),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub variant: Variant,
    pub episodes: usize,
    pub initial_random_episodes: usize,
    pub eval_episodes: usize,
    pub deterministic_eval: bool,
    /// Decision steps per evaluation episode; the task horizon when absent.
    pub eval_episode_length: Option<usize>,
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub policy_min_stddev: f64,
    pub clip_grad_norm: f64,
    pub replay_capacity: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            variant: Variant::Lambda,
            episodes: 200,
            initial_random_episodes: 5,
            eval_episodes: 10,
            deterministic_eval: true,
            eval_episode_length: None,
            hidden_units: 32,
            hidden_layers: 2,
            policy_min_stddev: 1e-4,
            clip_grad_norm: 100.0,
            replay_capacity: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub env: EnvSection,
    pub world_model: WorldModelSection,
    pub swag: SwagSection,
    pub safety: SafetySection,
    pub general: GeneralSection,
    pub agent: AgentSection,
}

impl Config {
    /// Full-scale hyperparameters.
    pub fn reference() -> Self {
        Self {
            env: EnvSection::default(),
            world_model: WorldModelSection { batch_size: 32, sequence_length: 50, learning_rate: 1e-4, ..Default::default() },
            swag: SwagSection { burn_in_steps: 500, period_steps: 200, models: 20, decay: 0.8, cyclic_lr_factor: 5.0, posterior_samples: 5 },
            safety: SafetySection {
                safety_critic_learning_rate: 2e-4,
                initial_penalty: 5e-9,
                initial_lagrangian: 1e-6,
                penalty_power_factor: 1e-5,
                safety_discount_factor: 0.995,
            },
            general: GeneralSection {
                update_steps: 100,
                critic_learning_rate: 8e-5,
                policy_learning_rate: 8e-5,
                action_repeat: 2,
                discount_factor: 0.99,
                td_lambda_factor: 0.95,
                sequence_generation_horizon: 15,
            },
            agent: AgentSection { episodes: 200, ..AgentSection::default() },
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.world_model;
        let g = &self.general;
        let checks = [
            (w.batch_size >= 1, "world_model.batch_size must be at least 1"),
            (w.sequence_length >= 1, "world_model.sequence_length must be at least 1"),
            (self.swag.posterior_samples >= 1, "swag.posterior_samples must be at least 1"),
            (g.update_steps >= 1, "general.update_steps must be at least 1"),
            (g.action_repeat >= 1, "general.action_repeat must be at least 1"),
            (g.sequence_generation_horizon >= 1, "general.sequence_generation_horizon must be at least 1"),
            (self.agent.eval_episodes >= 1, "agent.eval_episodes must be at least 1"),
            (self.safety.initial_penalty > 0.0, "safety.initial_penalty must be positive"),
            (self.env.threshold.is_none_or(|d| d >= 0.0), "env.threshold must be non-negative"),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.into()));
            }
        }
        Ok(())
    }

    pub fn world_model_config(&self) -> WorldModelConfig {
        WorldModelConfig {
            hidden_units: self.world_model.hidden_units,
            hidden_layers: self.world_model.hidden_layers,
            learning_rate: self.world_model.learning_rate,
            unsafe_weight: self.world_model.unsafe_weight,
            min_stddev: self.world_model.min_stddev,
            clip_grad_norm: self.agent.clip_grad_norm,
        }
    }

    pub fn swag_config(&self) -> SwagConfig {
        SwagConfig {
            burn_in_steps: self.swag.burn_in_steps,
            period_steps: self.swag.period_steps,
            models: self.swag.models,
            decay: self.swag.decay,
            cyclic_lr_factor: self.swag.cyclic_lr_factor,
        }
    }

    pub fn critic_config(&self) -> CriticConfig {
        CriticConfig {
            hidden_units: self.agent.hidden_units,
            hidden_layers: self.agent.hidden_layers,
            critic_learning_rate: self.general.critic_learning_rate,
            safety_critic_learning_rate: self.safety.safety_critic_learning_rate,
            discount_factor: self.general.discount_factor,
            safety_discount_factor: self.safety.safety_discount_factor,
            td_lambda_factor: self.general.td_lambda_factor,
            update_steps: self.general.update_steps as u64,
            clip_grad_norm: self.agent.clip_grad_norm,
        }
    }

    /// Constraint thresholds of the configured task.
    pub fn thresholds(&self) -> Vec<f64> {
        let own = match self.env.name.as_str() {
            "point" => self.env.point.threshold,
            _ => self.env.grid.threshold,
        };
        vec![self.env.threshold.unwrap_or(own)]
    }

    /// Grid layout with the configured threshold applied.
    pub fn grid_layout(&self) -> GridLayout {
        let mut layout = self.env.grid.clone();
        if let Some(d) = self.env.threshold {
            layout.threshold = d;
        }
        layout
    }

    /// Builds the configured task with action repeat applied.
    pub fn make_env(&self) -> Result<Box<dyn Environment>> {
        let k = self.general.action_repeat;
        match self.env.name.as_str() {
            "grid8" => Ok(Box::new(ActionRepeat::new(GridNavigation::new("grid8", self.grid_layout())?, k)?)),
            "point" => Ok(Box::new(ActionRepeat::new(PointHazard2D::new(self.env.point.clone()), k)?)),
            other => Err(Error::Config(format!("unknown task {other:?}; expected grid8 or point"))),
        }
    }
}
