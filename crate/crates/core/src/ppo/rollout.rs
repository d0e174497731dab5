use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfex_autodiff::Tensor;

use crate::env::{MobileEnv, Observation, SimConfig};
use crate::error::{Error, Result};
use crate::senn::{argmax, Actor, PolicyModel};

use super::buffer::RolloutBuffer;
use super::log_softmax;

/// Independently seeded simulators that reset themselves when an episode
/// ends.
pub struct VecEnv {
    envs: Vec<MobileEnv>,
    obs: Vec<Vec<Observation>>,
    seeds: ChaCha8Rng,
    running: Vec<f64>,
    completed: Vec<f64>,
}

impl VecEnv {
    pub fn new(config: &SimConfig, n_envs: usize, seed: u64) -> Result<Self> {
        let mut seeds = ChaCha8Rng::seed_from_u64(seed);
        let mut envs = Vec::with_capacity(n_envs);
        let mut obs = Vec::with_capacity(n_envs);
        for _ in 0..n_envs {
            let mut env = MobileEnv::new(config.clone())?;
            obs.push(env.reset(seeds.random()));
            envs.push(env);
        }
        Ok(Self {
            envs,
            obs,
            seeds,
            running: vec![0.0; n_envs],
            completed: Vec::new(),
        })
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn n_ue(&self) -> usize {
        self.envs[0].config().n_ue
    }

    pub fn obs_dim(&self) -> usize {
        self.envs[0].config().obs_dim()
    }

    pub fn observations(&self) -> &[Vec<Observation>] {
        &self.obs
    }

    /// Current observations of every (simulator, UE) stream as rows.
    pub fn feature_matrix(&self) -> Result<Tensor> {
        let data: Vec<f64> = self.obs.iter().flatten().flat_map(|o| o.features()).collect();
        Ok(Tensor::matrix(self.envs.len() * self.n_ue(), self.obs_dim(), data)?)
    }

    /// Steps every simulator; returns per-stream rewards and per-simulator
    /// done flags. Finished simulators are reset with a fresh seed.
    pub fn step(&mut self, actions: &[usize]) -> Result<(Vec<f64>, Vec<bool>)> {
        let u = self.n_ue();
        let mut rewards = Vec::with_capacity(actions.len());
        let mut dones = Vec::with_capacity(self.envs.len());
        for (e, env) in self.envs.iter_mut().enumerate() {
            let r = env
                .step(&actions[e * u..(e + 1) * u])
                .map_err(|source| Error::Environment { env: e, source: Box::new(source) })?;
            self.running[e] += r.rewards.iter().sum::<f64>() / u as f64;
            rewards.extend_from_slice(&r.rewards);
            dones.push(r.done);
            if r.done {
                self.completed.push(std::mem::take(&mut self.running[e]));
                self.obs[e] = env.reset(self.seeds.random());
            } else {
                self.obs[e] = r.observations;
            }
        }
        Ok((rewards, dones))
    }

    /// Returns of episodes finished since the last call, each the per-UE
    /// mean of summed rewards.
    pub fn drain_episode_returns(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.completed)
    }
}

pub enum ActionMode<'r> {
    Sample(&'r mut ChaCha8Rng),
    Greedy,
}

fn sample(log_probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Runs `horizon` steps of every simulator under a fixed policy. Values are
/// left empty; the caller fills them from the critic.
pub fn collect_rollouts(
    actor: &Actor,
    envs: &mut VecEnv,
    horizon: usize,
    mut mode: ActionMode<'_>,
) -> Result<RolloutBuffer> {
    let streams = envs.n_envs() * envs.n_ue();
    let n = envs.obs_dim();
    let m = actor.n_actions();
    let mut buf = RolloutBuffer::new(n, streams, horizon);
    for _ in 0..horizon {
        let x = envs.feature_matrix()?;
        let logits = actor.logits_batch(&x)?;
        let mut actions = Vec::with_capacity(streams);
        let mut lps = Vec::with_capacity(streams);
        for s in 0..streams {
            let lp = log_softmax(&logits.data()[s * m..(s + 1) * m]);
            let a = match &mut mode {
                ActionMode::Sample(rng) => sample(&lp, rng),
                ActionMode::Greedy => argmax(&lp),
            };
            actions.push(a);
            lps.push(lp[a]);
        }
        let (rewards, dones) = envs.step(&actions)?;
        let u = envs.n_ue();
        for s in 0..streams {
            buf.push(x.row_slice(s), actions[s], rewards[s], dones[s / u], lps[s]);
        }
    }
    buf.last_observations = envs.feature_matrix()?.into_data();
    Ok(buf)
}
