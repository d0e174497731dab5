use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfex_autodiff::{clip_grad_norm, Adam, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::env::SimConfig;
use crate::error::{Error, Result};
use crate::senn::{Actor, PolicyModel};

use super::buffer::RolloutBuffer;
use super::critic::Critic;
use super::eval::{evaluate, GreedyPolicy};
use super::loss::{actor_loss, MiniBatch};
use super::rollout::{collect_rollouts, ActionMode, VecEnv};
use super::PpoConfig;

// RNG streams derived from the training seed.
const STREAM_INIT: u64 = 0;
const STREAM_ACTIONS: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_ENVS: u64 = 3;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Separate Adam states for actor and critic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Optimizers {
    pub actor: Adam,
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(lr: f64) -> Self {
        Self {
            actor: Adam::new(lr),
            critic: Adam::new(lr),
        }
    }
}

/// Loss components averaged over the minibatches of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub surrogate: f64,
    pub entropy: f64,
    pub value_loss: f64,
    /// Unweighted mean robustness penalty.
    pub robustness: f64,
    /// Contribution of the penalty to the actor loss.
    pub weighted_robustness: f64,
    pub actor_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub minibatches: usize,
}

impl TrainStats {
    fn accumulate(&mut self, other: &TrainStats) {
        self.surrogate += other.surrogate;
        self.entropy += other.entropy;
        self.value_loss += other.value_loss;
        self.robustness += other.robustness;
        self.weighted_robustness += other.weighted_robustness;
        self.actor_loss += other.actor_loss;
        self.approx_kl += other.approx_kl;
        self.clip_fraction += other.clip_fraction;
        self.actor_grad_norm += other.actor_grad_norm;
        self.critic_grad_norm += other.critic_grad_norm;
        self.minibatches += 1;
    }

    fn averaged(mut self) -> Self {
        let k = self.minibatches.max(1) as f64;
        for v in [
            &mut self.surrogate,
            &mut self.entropy,
            &mut self.value_loss,
            &mut self.robustness,
            &mut self.weighted_robustness,
            &mut self.actor_loss,
            &mut self.approx_kl,
            &mut self.clip_fraction,
            &mut self.actor_grad_norm,
            &mut self.critic_grad_norm,
        ] {
            *v /= k;
        }
        self
    }
}

fn minibatch(buf: &RolloutBuffer, idx: &[usize]) -> Result<MiniBatch> {
    let n = buf.obs_dim;
    let mut obs = Vec::with_capacity(idx.len() * n);
    for &i in idx {
        obs.extend_from_slice(buf.observation(i));
    }
    Ok(MiniBatch {
        observations: Tensor::matrix(idx.len(), n, obs)?,
        actions: idx.iter().map(|&i| buf.actions[i]).collect(),
        old_log_probs: idx.iter().map(|&i| buf.log_probs[i]).collect(),
        advantages: idx.iter().map(|&i| buf.advantages[i]).collect(),
        returns: idx.iter().map(|&i| buf.returns[i]).collect(),
    })
}

fn finite(grads: &[Tensor]) -> bool {
    grads.iter().all(Tensor::is_finite)
}

/// Epochs of shuffled minibatch updates on a finished buffer. `update` only
/// labels diagnostics.
pub fn ppo_update(
    actor: &mut Actor,
    critic: &mut Critic,
    opt: &mut Optimizers,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
    update: usize,
) -> Result<TrainStats> {
    if !buf.has_advantages() {
        return Err(Error::InvalidArgument("advantages must be computed before updating".into()));
    }
    if buf.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut total = TrainStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch_size) {
            let batch = minibatch(buf, idx)?;
            let mut s = TrainStats::default();

            let tape = Tape::new();
            let vars = actor.params().record(&tape);
            let loss = actor_loss(
                actor,
                &tape,
                &vars,
                &batch,
                cfg.clip,
                cfg.entropy_coef,
                cfg.robustness_lambda,
            )?;
            let value = loss.total.item();
            let mut grads: Vec<Tensor> = tape
                .grad_allow_unused(loss.total, &vars)?
                .iter()
                .map(|g| (*g.value()).clone())
                .collect();
            if !value.is_finite() || !finite(&grads) {
                let detail = format!(
                    "surrogate={} entropy={} robustness={} loss={value}",
                    loss.surrogate, loss.entropy, loss.robustness
                );
                log::error!("non-finite actor loss at update {update}: {detail}");
                return Err(Error::NonFiniteLoss {
                    what: "actor".into(),
                    update,
                    detail,
                });
            }
            s.actor_grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.actor.step(actor.params_mut(), &grads, |_| true);
            s.surrogate = loss.surrogate;
            s.entropy = loss.entropy;
            s.robustness = loss.robustness;
            s.weighted_robustness = loss.weighted_robustness;
            s.actor_loss = value;
            s.approx_kl = loss.approx_kl;
            s.clip_fraction = loss.clip_fraction;
            drop(tape);

            let tape = Tape::new();
            let vars = critic.params().record(&tape);
            let x = tape.constant(batch.observations.clone());
            let target = tape.constant(Tensor::column(batch.returns.clone())?);
            let vloss = critic.value_on(&vars, x)?.sub(target)?.square().mean();
            let scaled = vloss.scale(cfg.value_coef);
            let mut grads: Vec<Tensor> = tape
                .grad(scaled, &vars)?
                .iter()
                .map(|g| (*g.value()).clone())
                .collect();
            s.value_loss = vloss.item();
            if !s.value_loss.is_finite() || !finite(&grads) {
                let detail = format!("value_loss={}", s.value_loss);
                log::error!("non-finite critic loss at update {update}: {detail}");
                return Err(Error::NonFiniteLoss {
                    what: "critic".into(),
                    update,
                    detail,
                });
            }
            s.critic_grad_norm = clip_grad_norm(&mut grads, cfg.max_grad_norm);
            opt.critic.step(critic.params_mut(), &grads, |_| true);
            total.accumulate(&s);
        }
    }
    Ok(total.averaged())
}

/// One line of the training metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub update: usize,
    pub episodes: usize,
    pub return_mean: Option<f64>,
    pub return_std: Option<f64>,
    #[serde(flatten)]
    pub stats: TrainStats,
    pub eval_return: Option<f64>,
}

/// Owns everything that changes during training.
pub struct Trainer {
    cfg: PpoConfig,
    sim: SimConfig,
    actor: Actor,
    critic: Critic,
    opt: Optimizers,
    envs: VecEnv,
    action_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    steps: usize,
    updates: usize,
    next_eval: usize,
}

impl Trainer {
    pub fn new(cfg: PpoConfig, sim: SimConfig) -> Result<Self> {
        cfg.validate()?;
        sim.validate()?;
        let mut init = stream(cfg.seed, STREAM_INIT);
        let (n, m) = (sim.obs_dim(), sim.n_actions());
        let actor = Actor::new(cfg.actor, n, m, &cfg.actor_hidden, &mut init)?;
        let critic = Critic::new(n, &cfg.critic_hidden, &mut init)?;
        let env_seed = {
            use rand::Rng;
            stream(cfg.seed, STREAM_ENVS).random()
        };
        let envs = VecEnv::new(&sim, cfg.n_envs, env_seed)?;
        Ok(Self {
            opt: Optimizers::new(cfg.learning_rate),
            action_rng: stream(cfg.seed, STREAM_ACTIONS),
            shuffle_rng: stream(cfg.seed, STREAM_SHUFFLE),
            next_eval: cfg.eval_interval,
            steps: 0,
            updates: 0,
            cfg,
            sim,
            actor,
            critic,
            envs,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn sim(&self) -> &SimConfig {
        &self.sim
    }

    pub fn actor(&self) -> &Actor {
        &self.actor
    }

    pub fn critic(&self) -> &Critic {
        &self.critic
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_finished(&self) -> bool {
        self.steps >= self.cfg.total_timesteps
    }

    pub fn into_models(self) -> (Actor, Critic) {
        (self.actor, self.critic)
    }

    /// One rollout followed by one update.
    pub fn iterate(&mut self) -> Result<MetricsRecord> {
        let mut buf = collect_rollouts(
            &self.actor,
            &mut self.envs,
            self.cfg.horizon,
            ActionMode::Sample(&mut self.action_rng),
        )?;
        buf.values = self.critic.values(&buf.observation_tensor()?)?;
        let last = Tensor::matrix(buf.streams, buf.obs_dim, buf.last_observations.clone())?;
        buf.last_values = self.critic.values(&last)?;
        buf.finish(self.cfg.gamma, self.cfg.gae_lambda)?;
        let stats = ppo_update(
            &mut self.actor,
            &mut self.critic,
            &mut self.opt,
            &buf,
            &self.cfg,
            &mut self.shuffle_rng,
            self.updates,
        )?;
        self.steps += self.cfg.steps_per_rollout();
        self.updates += 1;

        let returns = self.envs.drain_episode_returns();
        let (return_mean, return_std) = if returns.is_empty() {
            (None, None)
        } else {
            let k = returns.len() as f64;
            let mean = returns.iter().sum::<f64>() / k;
            let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
            (Some(mean), Some(var.sqrt()))
        };
        let mut eval_return = None;
        if self.cfg.eval_interval > 0 && (self.steps >= self.next_eval || self.is_finished()) {
            while self.next_eval <= self.steps {
                self.next_eval += self.cfg.eval_interval;
            }
            let stats = evaluate(&self.sim, self.cfg.eval_steps, self.cfg.seed, &GreedyPolicy::new(&self.actor))?;
            eval_return = Some(stats.mean);
        }
        let record = MetricsRecord {
            step: self.steps,
            update: self.updates,
            episodes: returns.len(),
            return_mean,
            return_std,
            stats,
            eval_return,
        };
        log::info!(
            "step {} return {:?} surrogate {:.4} value {:.4} robustness {:.4}",
            record.step,
            record.return_mean,
            record.stats.surrogate,
            record.stats.value_loss,
            record.stats.robustness
        );
        Ok(record)
    }

    /// Trains until the timestep budget is spent.
    pub fn run(&mut self, mut on_metrics: impl FnMut(&MetricsRecord) -> Result<()>) -> Result<()> {
        while !self.is_finished() {
            let record = self.iterate()?;
            on_metrics(&record)?;
        }
        Ok(())
    }
}
