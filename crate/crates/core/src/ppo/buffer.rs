use selfex_autodiff::Tensor;

use crate::error::{Error, Result};

/// Transitions from one rollout, time-major: entry `t * streams + s` belongs
/// to step `t` of stream `s`, where a stream is one (simulator, UE) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub streams: usize,
    pub horizon: usize,
    /// Row-major `len x obs_dim`.
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// True when the episode ended with this transition.
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Observations following the final step, one row per stream.
    pub last_observations: Vec<f64>,
    /// Value estimates of `last_observations`.
    pub last_values: Vec<f64>,
    advantages_ready: bool,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, streams: usize, horizon: usize) -> Self {
        let cap = streams * horizon;
        Self {
            obs_dim,
            streams,
            horizon,
            observations: Vec::with_capacity(cap * obs_dim),
            actions: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            values: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
            last_observations: Vec::new(),
            last_values: Vec::new(),
            advantages_ready: false,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, obs: &[f64], action: usize, reward: f64, done: bool, log_prob: f64) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        self.observations.extend_from_slice(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.dones.push(done);
        self.log_probs.push(log_prob);
        self.advantages_ready = false;
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_dim..(i + 1) * self.obs_dim]
    }

    pub fn observation_tensor(&self) -> Result<Tensor> {
        Ok(Tensor::matrix(self.len(), self.obs_dim, self.observations.clone())?)
    }

    pub fn has_advantages(&self) -> bool {
        self.advantages_ready
    }

    /// Checks that every per-transition array has the same length and the
    /// layout is complete.
    pub fn check(&self) -> Result<()> {
        let n = self.streams * self.horizon;
        let lens = [
            self.actions.len(),
            self.rewards.len(),
            self.dones.len(),
            self.log_probs.len(),
            self.values.len(),
            self.observations.len() / self.obs_dim.max(1),
        ];
        if lens.iter().any(|&l| l != n) || self.last_values.len() != self.streams {
            return Err(Error::DimensionMismatch(format!(
                "rollout buffer arrays {lens:?} do not match {} streams x {} steps",
                self.streams, self.horizon
            )));
        }
        Ok(())
    }

    /// Fills advantages (normalized) and return targets.
    pub fn finish(&mut self, gamma: f64, gae_lambda: f64) -> Result<()> {
        self.check()?;
        let (mut adv, ret) = compute_gae(
            &self.rewards,
            &self.values,
            &self.dones,
            &self.last_values,
            self.streams,
            gamma,
            gae_lambda,
        );
        normalize(&mut adv);
        self.advantages = adv;
        self.returns = ret;
        self.advantages_ready = true;
        Ok(())
    }
}

/// Generalized advantage estimates and return targets for time-major data
/// with `streams` interleaved trajectories. Bootstrapping stops at `dones`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    streams: usize,
    gamma: f64,
    gae_lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let len = rewards.len();
    let horizon = len / streams;
    let mut adv = vec![0.0; len];
    for s in 0..streams {
        let mut gae = 0.0;
        for t in (0..horizon).rev() {
            let i = t * streams + s;
            let next_value = if t + 1 == horizon { last_values[s] } else { values[i + streams] };
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            gae = delta + gamma * gae_lambda * live * gae;
            adv[i] = gae;
        }
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Shifts and scales `v` to zero mean and unit (population) variance.
pub fn normalize(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    for x in v.iter_mut() {
        *x = (*x - mean) / std;
    }
}
