use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::net::ActionSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Ppo,
    A2c,
    Ddqn,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::A2c => "a2c",
            Algorithm::Ddqn => "ddqn",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, TrainError> {
        match s.to_ascii_lowercase().as_str() {
            "ppo" => Ok(Algorithm::Ppo),
            "a2c" => Ok(Algorithm::A2c),
            "ddqn" => Ok(Algorithm::Ddqn),
            _ => Err(TrainError::Config(format!("unknown algorithm {s:?}"))),
        }
    }
}

/// Learning hyperparameters. `lr` and `gamma` default per algorithm:
/// 3e-4 / 0.99 for PPO and A2C, 5e-5 / 0.95 for DDQN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub action_space: ActionSpace,
    pub lr: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: f64,
    pub clip: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub t_max: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// Global L2 gradient clipping threshold; 0 disables clipping.
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_update: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which epsilon is annealed.
    pub epsilon_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Ppo,
            action_space: ActionSpace::Discrete,
            lr: None,
            gamma: None,
            lambda: 0.95,
            clip: 0.2,
            minibatch: 4096,
            epochs: 4,
            t_max: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            replay_capacity: 100_000,
            batch_size: 64,
            target_update: 250,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr.unwrap_or(match self.algorithm {
            Algorithm::Ppo | Algorithm::A2c => 3e-4,
            Algorithm::Ddqn => 5e-5,
        })
    }

    pub fn discount(&self) -> f64 {
        self.gamma.unwrap_or(match self.algorithm {
            Algorithm::Ppo | Algorithm::A2c => 0.99,
            Algorithm::Ddqn => 0.95,
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.learning_rate() > 0.0 && self.learning_rate().is_finite()) {
            return bad("lr must be positive".into());
        }
        if !unit(self.discount()) || !unit(self.lambda) {
            return bad(format!("gamma {} and lambda {} must lie in (0, 1]", self.discount(), self.lambda));
        }
        if self.t_max == 0 {
            return bad("t_max must be >= 1".into());
        }
        match self.algorithm {
            Algorithm::Ppo | Algorithm::A2c => {
                if !(self.clip > 0.0) || self.minibatch == 0 || self.epochs == 0 {
                    return bad("clip, minibatch and epochs must be positive".into());
                }
            }
            Algorithm::Ddqn => {
                if self.action_space != ActionSpace::Discrete {
                    return Err(TrainError::ContinuousDdqn);
                }
                if self.batch_size == 0 || self.replay_capacity < self.batch_size || self.target_update == 0 {
                    return bad("ddqn needs batch_size > 0, replay_capacity >= batch_size, target_update > 0".into());
                }
                if !(0.0..=1.0).contains(&self.epsilon_end)
                    || !(0.0..=1.0).contains(&self.epsilon_start)
                    || !(self.epsilon_fraction > 0.0)
                {
                    return bad("epsilon schedule out of range".into());
                }
            }
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm < 0.0 {
            return bad("loss coefficients and max_grad_norm must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCriteria {
    /// Agent-episode budget.
    pub max_episodes: u64,
    /// Stop once the success rate over the last `success_window` agent-episodes reaches this.
    pub success_threshold: Option<f64>,
    pub success_window: usize,
    pub max_updates: Option<u64>,
}

impl Default for StopCriteria {
    fn default() -> Self {
        Self {
            max_episodes: 25_000,
            success_threshold: Some(0.995),
            success_window: 1000,
            max_updates: None,
        }
    }
}
