//! Local and global explanations of a trained SENN actor.
//!
//! Local: relevance, effects and logits per decision ([`DecisionRecord`]).
//! Global: per-action effect distributions, k-means over the chosen action's
//! relevance rows with action-pure cluster sets and importance vectors, and
//! the aggregator bias. Lipschitz estimation and post-hoc attributions serve
//! as stability and cross-validation checks.

mod attribution;
mod cluster;
mod lipschitz;

pub use attribution::{
    attribution_compare, gradient_shap, input_x_gradient, integrated_gradients, AttributionComparison,
    AttributionReport, BaselineSampler, GradShapConfig, PairwiseAgreement, METHOD_CLUSTER, METHOD_GRADSHAP,
    METHOD_IG, METHOD_IXG,
};
pub use cluster::{
    cluster_sets, contingency, davies_bouldin, importance, kmeans, purity, silhouette, ClusterMetrics, ClusterModel,
    KMeans, MAX_LLOYD_ITERATIONS,
};
pub use lipschitz::{lipschitz_estimate, LipschitzConfig, LipschitzEstimate};

use serde::{Deserialize, Serialize};

use crate::env::action_names;
use crate::error::{Error, Result};
use crate::senn::SennPolicy;

/// Everything the actor exposed for one decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub episode: usize,
    pub step: usize,
    pub ue: usize,
    pub observation: Vec<f64>,
    /// `m x n`.
    pub relevance: Vec<Vec<f64>>,
    pub effects: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
    pub bias: Vec<f64>,
    pub action: usize,
}

impl DecisionRecord {
    pub fn n_features(&self) -> usize {
        self.observation.len()
    }

    pub fn n_actions(&self) -> usize {
        self.logits.len()
    }

    /// Relevance row of the chosen action.
    pub fn chosen_relevance(&self) -> &[f64] {
        &self.relevance[self.action]
    }

    /// Largest `|Σ_j E_ij + b_i − logits_i|`.
    pub fn decomposition_error(&self) -> f64 {
        self.effects
            .iter()
            .zip(&self.bias)
            .zip(&self.logits)
            .map(|((e, b), l)| (e.iter().sum::<f64>() + b - l).abs())
            .fold(0.0, f64::max)
    }

    /// Checks shapes against `(n, m)` and the action range.
    pub fn check(&self, n: usize, m: usize) -> Result<()> {
        let rows_ok = |v: &Vec<Vec<f64>>| v.len() == m && v.iter().all(|r| r.len() == n);
        if self.observation.len() != n
            || self.logits.len() != m
            || self.bias.len() != m
            || !rows_ok(&self.relevance)
            || !rows_ok(&self.effects)
        {
            return Err(Error::DimensionMismatch(format!(
                "record at episode {} step {} does not match n={n}, m={m}",
                self.episode, self.step
            )));
        }
        if self.action >= m {
            return Err(Error::UnknownAction {
                action: self.action,
                n_actions: m,
            });
        }
        Ok(())
    }
}

/// Explains the greedy decision at `x`.
pub fn local_explanation(policy: &SennPolicy, x: &[f64]) -> Result<DecisionRecord> {
    let e = policy.explain(x)?;
    Ok(DecisionRecord {
        episode: 0,
        step: 0,
        ue: 0,
        observation: e.observation,
        relevance: e.relevance,
        effects: e.effects,
        logits: e.logits,
        bias: e.bias,
        action: e.action,
    })
}

/// Effects of one action's row over the decisions that chose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectDistribution {
    pub action: usize,
    /// `samples[j]` holds feature j's effect for every matching decision.
    pub samples: Vec<Vec<f64>>,
    /// `None` when no decision chose the action.
    pub means: Option<Vec<f64>>,
}

impl EffectDistribution {
    pub fn count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_none()
    }
}

pub fn effect_distribution(records: &[DecisionRecord], action: usize) -> Result<EffectDistribution> {
    let first = records.first().ok_or(Error::EmptyBatch)?;
    let (n, m) = (first.n_features(), first.n_actions());
    if action >= m {
        return Err(Error::UnknownAction { action, n_actions: m });
    }
    let mut samples = vec![Vec::new(); n];
    for r in records.iter().filter(|r| r.action == action) {
        for (j, &e) in r.effects[action].iter().enumerate() {
            samples[j].push(e);
        }
    }
    let means = (!samples[0].is_empty())
        .then(|| samples.iter().map(|s| s.iter().sum::<f64>() / s.len() as f64).collect());
    Ok(EffectDistribution { action, samples, means })
}

/// Aggregator bias labelled by action.
pub fn bias_report(policy: &SennPolicy) -> Vec<(String, f64)> {
    use crate::senn::PolicyModel;
    let names = action_names(policy.n_actions() - 1);
    names.into_iter().zip(policy.bias()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub k: usize,
    pub tau: f64,
    pub seed: u64,
    pub silhouette_sample: usize,
    /// Cluster the flattened m x n relevance matrix instead of the chosen
    /// action's row.
    pub full_matrix: bool,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            k: 14,
            tau: 0.6,
            seed: 0,
            silhouette_sample: 2000,
            full_matrix: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalExplanation {
    pub n_records: usize,
    pub effect_distributions: Vec<EffectDistribution>,
    pub clusters: ClusterModel,
    pub bias: Vec<(String, f64)>,
}

/// Effect distributions for every action plus the clustering summary.
pub fn global_explanation(records: &[DecisionRecord], cfg: &GlobalConfig) -> Result<GlobalExplanation> {
    let first = records.first().ok_or(Error::EmptyBatch)?;
    let (n, m) = (first.n_features(), first.n_actions());
    for r in records {
        r.check(n, m)?;
    }
    let effect_distributions = (0..m)
        .map(|a| effect_distribution(records, a))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<Vec<f64>> = records
        .iter()
        .map(|r| {
            if cfg.full_matrix {
                r.relevance.concat()
            } else {
                r.chosen_relevance().to_vec()
            }
        })
        .collect();
    let labels: Vec<usize> = records.iter().map(|r| r.action).collect();
    let clusters = ClusterModel::fit(&points, &labels, m, cfg.k, cfg.tau, cfg.seed, cfg.silhouette_sample)?;
    let bias = action_names(m - 1).into_iter().zip(first.bias.iter().copied()).collect();
    Ok(GlobalExplanation {
        n_records: records.len(),
        effect_distributions,
        clusters,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use selfex_autodiff::Tensor;

    fn record(action: usize, effects: Vec<Vec<f64>>) -> DecisionRecord {
        let m = effects.len();
        let n = effects[0].len();
        DecisionRecord {
            episode: 0,
            step: 0,
            ue: 0,
            observation: vec![1.0; n],
            relevance: effects.clone(),
            logits: effects.iter().map(|r| r.iter().sum()).collect(),
            effects,
            bias: vec![0.0; m],
            action,
        }
    }

    #[test]
    fn effect_mean_and_filtering() {
        let d = vec![
            record(1, vec![vec![9.0, 9.0], vec![1.0, 0.0]]),
            record(1, vec![vec![9.0, 9.0], vec![3.0, 2.0]]),
            record(0, vec![vec![100.0, 100.0], vec![50.0, 50.0]]),
        ];
        let e = effect_distribution(&d, 1).unwrap();
        assert_eq!(e.means.as_deref(), Some(&[2.0, 1.0][..]));
        assert_eq!(e.count(), 2);
        assert!(matches!(effect_distribution(&d, 2), Err(Error::UnknownAction { .. })));
    }

    #[test]
    fn empty_action_is_marked() {
        let d = vec![record(0, vec![vec![1.0], vec![2.0]])];
        let e = effect_distribution(&d, 1).unwrap();
        assert!(e.is_empty());
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn zero_input_picks_argmax_bias() {
        let p = SennPolicy::with_constant_relevance(&Tensor::filled(4, 13, 0.3), Some(vec![0.1, 0.9, -0.2, 0.4]))
            .unwrap();
        let r = local_explanation(&p, &[0.0; 13]).unwrap();
        assert_eq!(r.action, 1);
        assert!(r.effects.iter().flatten().all(|&e| e == 0.0));
        assert_eq!(r.relevance.len(), 4);
        assert_eq!(r.relevance[0].len(), 13);
    }

    #[test]
    fn bias_report_labels() {
        let p = SennPolicy::with_constant_relevance(&Tensor::zeros(4, 13), Some(vec![1.08, 1.12, 1.06, 0.79]))
            .unwrap();
        let rep = bias_report(&p);
        assert_eq!(rep[0], ("no_action".to_string(), 1.08));
        assert_eq!(rep[3], ("toggle_bs3".to_string(), 0.79));
    }
}
