//! Proximal policy optimization with a shared policy across UEs.
//!
//! Every UE of every parallel simulator feeds its own observation through the
//! same actor, so one simulator step yields `n_ue` transitions. The critic is
//! used only to compute advantages and is never consulted when acting.

mod buffer;
mod critic;
mod eval;
mod heuristic;
mod loss;
mod rollout;
mod train;

pub use buffer::{compute_gae, normalize, RolloutBuffer};
pub use critic::Critic;
pub use eval::{evaluate, evaluate_observed, Decider, Decision, EvalStats, GreedyPolicy};
pub use heuristic::{Heuristic, DEFAULT_DISCONNECT_THRESHOLD};
pub use loss::{actor_loss, clipped_ratio, ActorLoss, MiniBatch};
pub use rollout::{collect_rollouts, ActionMode, VecEnv};
pub use train::{ppo_update, MetricsRecord, Optimizers, TrainStats, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::senn::ActorKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Simulator steps summed over all parallel simulators.
    pub total_timesteps: usize,
    pub n_envs: usize,
    /// Steps per simulator between updates.
    pub horizon: usize,
    pub minibatch_size: usize,
    pub epochs: usize,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Weight of the robustness penalty in the actor loss.
    pub robustness_lambda: f64,
    pub max_grad_norm: f64,
    pub seed: u64,
    pub actor: ActorKind,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Timesteps between greedy evaluations during training; 0 disables them.
    pub eval_interval: usize,
    pub eval_steps: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            total_timesteps: 200_000,
            n_envs: 4,
            horizon: 256,
            minibatch_size: 256,
            epochs: 10,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.01,
            robustness_lambda: 0.001,
            max_grad_norm: 0.5,
            seed: 0,
            actor: ActorKind::Senn,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            eval_interval: 20_480,
            eval_steps: 3_000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.clip > 0.0) {
            return fail("clip must be positive");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gamma and gae_lambda must lie in [0, 1]");
        }
        if self.n_envs == 0 || self.horizon == 0 || self.minibatch_size == 0 || self.epochs == 0 {
            return fail("n_envs, horizon, minibatch_size and epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return fail("learning_rate and max_grad_norm must be positive");
        }
        if !(self.robustness_lambda >= 0.0) || !(self.entropy_coef >= 0.0) || !(self.value_coef >= 0.0) {
            return fail("loss coefficients must be nonnegative");
        }
        if self.actor_hidden.contains(&0) || self.critic_hidden.contains(&0) {
            return fail("hidden layer widths must be positive");
        }
        Ok(())
    }

    /// Simulator steps consumed by one rollout.
    pub fn steps_per_rollout(&self) -> usize {
        self.n_envs * self.horizon
    }
}

/// Numerically stable log-softmax of one logit vector.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}
