//! Multi-agent PPO with a parameter-shared actor and a centralized critic.

mod buffer;
mod gae;
pub mod gradcheck;
mod loss;
mod normalizer;
mod policy;
mod trainer;

pub use buffer::RolloutBuffer;
pub use gae::{compute_gae, normalize_advantages, ADV_STD_FLOOR};
pub use loss::{huber, ppo_policy_loss, value_loss};
pub use normalizer::RunningNormalizer;
pub use policy::{ActOutput, ActorCritic};
pub use trainer::{loss_and_grads, Batch, LossReport, LossWeights, MappoTrainer, TrainStats};

use crate::nn::NnError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MappoError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("invalid trainer config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Trainer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub huber_delta: f64,
    pub ppo_epochs: usize,
    pub num_minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub lr: f64,
    pub critic_lr: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub hidden_size: usize,
    /// Hidden layers per network (two feature layers plus one before the head).
    pub hidden_layers: usize,
    pub normalize_rewards: bool,
    pub normalize_features: bool,
    /// Linear learning-rate decay to zero over the run.
    pub lr_decay: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            gae_lambda: 0.95,
            gamma: 0.99,
            huber_delta: 10.0,
            ppo_epochs: 5,
            num_minibatches: 1,
            value_coef: 1.0,
            entropy_coef: 0.01,
            max_grad_norm: 10.0,
            lr: 5e-4,
            critic_lr: 5e-4,
            adam_eps: 1e-5,
            weight_decay: 0.0,
            hidden_size: 64,
            hidden_layers: 3,
            normalize_rewards: true,
            normalize_features: true,
            lr_decay: false,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), MappoError> {
        let bad = |msg: &str| Err(MappoError::InvalidConfig(msg.to_string()));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad("clip_eps must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) || !(0.0..=1.0).contains(&self.gamma) {
            return bad("gae_lambda and gamma must lie in [0, 1]");
        }
        if !(self.huber_delta > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("huber_delta and max_grad_norm must be positive");
        }
        if self.ppo_epochs == 0 || self.num_minibatches == 0 {
            return bad("ppo_epochs and num_minibatches must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.critic_lr > 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning rates and adam_eps must be positive");
        }
        if !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("loss coefficients and weight_decay must be non-negative");
        }
        if self.hidden_size == 0 || self.hidden_layers == 0 {
            return bad("networks need at least one non-empty hidden layer");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_bad_values_are_rejected() {
        PpoConfig::default().validate().unwrap();
        for cfg in [
            PpoConfig { clip_eps: 1.0, ..Default::default() },
            PpoConfig { gamma: 1.5, ..Default::default() },
            PpoConfig { gae_lambda: -0.1, ..Default::default() },
            PpoConfig { ppo_epochs: 0, ..Default::default() },
            PpoConfig { lr: 0.0, ..Default::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
