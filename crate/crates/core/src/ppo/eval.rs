use serde::{Deserialize, Serialize};
use selfex_autodiff::Tensor;

use crate::env::{MobileEnv, Observation, SimConfig};
use crate::error::Result;
use crate::senn::{argmax, Actor, PolicyModel};

/// Maps the observations of all UEs in one simulator to their actions.
pub trait Decider {
    fn decide(&self, obs: &[Observation]) -> Result<Vec<usize>>;
}

/// Deterministic inference: the argmax of the actor's logits. Holds only the
/// actor, so value estimates cannot influence decisions.
#[derive(Debug, Clone, Copy)]
pub struct GreedyPolicy<'a> {
    actor: &'a Actor,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(actor: &'a Actor) -> Self {
        Self { actor }
    }

    pub fn act(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.actor.logits_one(x)?))
    }
}

impl Decider for GreedyPolicy<'_> {
    fn decide(&self, obs: &[Observation]) -> Result<Vec<usize>> {
        let n = self.actor.obs_dim();
        let data: Vec<f64> = obs.iter().flat_map(|o| o.features()).collect();
        let logits = self.actor.logits_batch(&Tensor::matrix(obs.len(), n, data)?)?;
        Ok(logits
            .data()
            .chunks(self.actor.n_actions())
            .map(argmax)
            .collect())
    }
}

/// One UE decision seen during evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Decision<'a> {
    pub episode: usize,
    pub step: usize,
    pub ue: usize,
    pub features: &'a [f64],
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Per-UE mean of summed rewards, one entry per completed episode.
    pub episode_returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub steps: usize,
}

impl EvalStats {
    pub fn from_returns(episode_returns: Vec<f64>, steps: usize) -> Self {
        let n = episode_returns.len().max(1) as f64;
        let mean = episode_returns.iter().sum::<f64>() / n;
        let var = episode_returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            episode_returns,
            mean,
            std: var.sqrt(),
            steps,
        }
    }

    /// Standard error of the mean episode return.
    pub fn std_error(&self) -> f64 {
        let n = self.episode_returns.len();
        if n < 2 {
            return 0.0;
        }
        self.std * (n as f64 / (n - 1) as f64).sqrt() / (n as f64).sqrt()
    }
}

pub fn evaluate(config: &SimConfig, steps: usize, seed: u64, decider: &impl Decider) -> Result<EvalStats> {
    evaluate_observed(config, steps, seed, decider, |_| {})
}

/// Runs `steps` simulator steps; episode `i` starts from `reset(seed + i)`.
/// Only completed episodes contribute returns.
pub fn evaluate_observed(
    config: &SimConfig,
    steps: usize,
    seed: u64,
    decider: &impl Decider,
    mut observer: impl FnMut(&Decision<'_>),
) -> Result<EvalStats> {
    let mut env = MobileEnv::new(config.clone())?;
    let u = config.n_ue;
    let mut episode = 0;
    let mut obs = env.reset(seed);
    let mut ret = 0.0;
    let mut returns = Vec::new();
    for _ in 0..steps {
        let actions = decider.decide(&obs)?;
        let step = env.step_count();
        for (ue, (o, &action)) in obs.iter().zip(&actions).enumerate() {
            let features = o.features();
            observer(&Decision {
                episode,
                step,
                ue,
                features: &features,
                action,
            });
        }
        let r = env.step(&actions)?;
        ret += r.rewards.iter().sum::<f64>() / u as f64;
        if r.done {
            returns.push(ret);
            ret = 0.0;
            episode += 1;
            obs = env.reset(seed.wrapping_add(episode as u64));
        } else {
            obs = r.observations;
        }
    }
    Ok(EvalStats::from_returns(returns, steps))
}
