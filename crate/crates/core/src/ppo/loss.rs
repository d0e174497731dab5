use selfex_autodiff::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::senn::{robustness_penalty, Actor, PolicyModel};

/// Transitions consumed by one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    /// `B x n`.
    pub observations: Tensor,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn one_hot(&self, m: usize) -> Tensor {
        let mut t = Tensor::zeros(self.len(), m);
        for (r, &a) in self.actions.iter().enumerate() {
            t.data_mut()[r * m + a] = 1.0;
        }
        t
    }
}

/// Actor objective and its parts. `robustness` is the unweighted batch
/// mean; it is reported even when `lambda` is zero.
pub struct ActorLoss<'t> {
    pub total: Var<'t>,
    pub surrogate: f64,
    pub entropy: f64,
    pub robustness: f64,
    pub weighted_robustness: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Probability ratio after PPO clipping for a given advantage sign:
/// the objective uses `min(r·A, clip(r)·A)`.
pub fn clipped_ratio(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    if ratio * advantage <= clipped * advantage {
        ratio
    } else {
        clipped
    }
}

/// Clipped surrogate minus the entropy bonus plus `lambda` times the mean
/// robustness penalty (SENN actors only).
pub fn actor_loss<'t>(
    actor: &Actor,
    tape: &'t Tape,
    vars: &[Var<'t>],
    batch: &MiniBatch,
    clip: f64,
    entropy_coef: f64,
    lambda: f64,
) -> Result<ActorLoss<'t>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let m = actor.n_actions();
    if let Some(&a) = batch.actions.iter().find(|&&a| a >= m) {
        return Err(Error::UnknownAction { action: a, n_actions: m });
    }
    let x = tape.leaf(batch.observations.clone());
    let (logits, robustness) = match actor {
        Actor::Senn(p) => {
            let theta = p.relevance_on(vars, x)?;
            let logits = p.aggregate_on(tape, vars, theta, x)?;
            let rob = robustness_penalty(tape, x, theta, logits)?.mean();
            (logits, Some(rob))
        }
        Actor::Dnn(_) => (actor.logits(tape, vars, x)?, None),
    };
    let log_probs = logits.log_softmax()?;
    let taken = log_probs.mul(tape.constant(batch.one_hot(m)))?.sum_cols();
    let old = tape.constant(Tensor::column(batch.old_log_probs.clone())?);
    let log_ratio = taken.sub(old)?;
    let ratio = log_ratio.exp();
    let adv = tape.constant(Tensor::column(batch.advantages.clone())?);
    let unclipped = ratio.mul(adv)?;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip).mul(adv)?;
    let surrogate = unclipped.minimum(clipped)?.mean().neg();
    let entropy = log_probs.softmax()?.mul(log_probs)?.sum_cols().mean().neg();
    let mut total = surrogate.sub(entropy.scale(entropy_coef))?;
    let mut weighted = 0.0;
    if let Some(rob) = robustness {
        if lambda != 0.0 {
            let term = rob.scale(lambda);
            weighted = term.item();
            total = total.add(term)?;
        }
    }

    let lr = log_ratio.value();
    let b = batch.len() as f64;
    let approx_kl = lr.data().iter().map(|&l| (l.exp() - 1.0) - l).sum::<f64>() / b;
    let clip_fraction = lr.data().iter().filter(|l| (l.exp() - 1.0).abs() > clip).count() as f64 / b;
    Ok(ActorLoss {
        total,
        surrogate: surrogate.item(),
        entropy: entropy.item(),
        robustness: robustness.map_or(0.0, |r| r.item()),
        weighted_robustness: weighted,
        approx_kl,
        clip_fraction,
    })
}
