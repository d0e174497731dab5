use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use selfex_autodiff::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::senn::{check_len, PolicyModel};

pub const METHOD_IXG: &str = "input_x_gradient";
pub const METHOD_IG: &str = "integrated_gradients";
pub const METHOD_GRADSHAP: &str = "gradient_shap";
pub const METHOD_CLUSTER: &str = "cluster_importance";

const METHODS: [&str; 4] = [METHOD_IXG, METHOD_IG, METHOD_GRADSHAP, METHOD_CLUSTER];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub method: String,
    pub action: usize,
    pub values: Vec<f64>,
    pub baseline: String,
}

impl AttributionReport {
    pub fn new(method: &str, action: usize, values: Vec<f64>, baseline: impl Into<String>) -> Result<Self> {
        if !METHODS.contains(&method) {
            return Err(Error::InvalidArgument(format!("unknown attribution method `{method}`")));
        }
        Ok(Self {
            method: method.to_string(),
            action,
            values,
            baseline: baseline.into(),
        })
    }
}

fn check_action(policy: &impl PolicyModel, action: usize) -> Result<()> {
    if action >= policy.n_actions() {
        return Err(Error::UnknownAction {
            action,
            n_actions: policy.n_actions(),
        });
    }
    Ok(())
}

/// Gradients of `logits[action]` at every row of `xs`.
fn action_gradients(policy: &impl PolicyModel, xs: Tensor, action: usize) -> Result<Tensor> {
    let (b, m) = (xs.rows(), policy.n_actions());
    let tape = Tape::new();
    let vars = policy.params().record(&tape);
    let x = tape.leaf(xs);
    let logits = policy.logits(&tape, &vars, x)?;
    let mut pick = Tensor::zeros(b, m);
    for r in 0..b {
        pick.data_mut()[r * m + action] = 1.0;
    }
    let total = logits.mul(tape.constant(pick))?.sum();
    Ok((*tape.grad(total, &[x])?[0].value()).clone())
}

pub fn input_x_gradient(policy: &impl PolicyModel, x: &[f64], action: usize) -> Result<AttributionReport> {
    check_len(x, policy.obs_dim())?;
    check_action(policy, action)?;
    let g = action_gradients(policy, Tensor::row(x.to_vec())?, action)?;
    let values = g.data().iter().zip(x).map(|(g, x)| g * x).collect();
    AttributionReport::new(METHOD_IXG, action, values, "none")
}

/// Midpoint Riemann sum of the path integral from `baseline` (zeros when
/// `None`) to `x`.
pub fn integrated_gradients(
    policy: &impl PolicyModel,
    x: &[f64],
    baseline: Option<&[f64]>,
    steps: usize,
    action: usize,
) -> Result<AttributionReport> {
    let n = policy.obs_dim();
    check_len(x, n)?;
    check_action(policy, action)?;
    if steps < 16 {
        return Err(Error::InvalidArgument(format!("steps = {steps}, need at least 16")));
    }
    let zeros = vec![0.0; n];
    let base = baseline.unwrap_or(&zeros);
    check_len(base, n)?;
    let mut path = Vec::with_capacity(steps * n);
    for s in 0..steps {
        let alpha = (s as f64 + 0.5) / steps as f64;
        path.extend(base.iter().zip(x).map(|(b, x)| b + alpha * (x - b)));
    }
    let g = action_gradients(policy, Tensor::matrix(steps, n, path)?, action)?;
    let values = (0..n)
        .map(|j| {
            let avg = (0..steps).map(|s| g.get(s, j)).sum::<f64>() / steps as f64;
            (x[j] - base[j]) * avg
        })
        .collect();
    let label = if baseline.is_some() { "custom" } else { "zero" };
    AttributionReport::new(METHOD_IG, action, values, label)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineSampler {
    Fixed(Vec<f64>),
    /// Uniform draw from a set of reference observations.
    Pool(Vec<Vec<f64>>),
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl BaselineSampler {
    fn describe(&self) -> String {
        match self {
            Self::Fixed(_) => "fixed".into(),
            Self::Pool(p) => format!("pool of {}", p.len()),
            Self::Gaussian { std, .. } => format!("gaussian std {std}"),
        }
    }

    fn dim(&self) -> Option<usize> {
        match self {
            Self::Fixed(b) => Some(b.len()),
            Self::Pool(p) => p.first().map(Vec::len),
            Self::Gaussian { mean, .. } => Some(mean.len()),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(match self {
            Self::Fixed(b) => b.clone(),
            Self::Pool(p) => p[rng.random_range(0..p.len())].clone(),
            Self::Gaussian { mean, std } => {
                let normal = Normal::new(0.0, *std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
                mean.iter().map(|m| m + normal.sample(rng)).collect()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradShapConfig {
    pub n_samples: usize,
    /// Standard deviation of Gaussian noise added to the input.
    pub noise_std: f64,
    /// Interpolation point; uniform on [0, 1) per sample when `None`.
    pub alpha: Option<f64>,
    pub seed: u64,
}

impl Default for GradShapConfig {
    fn default() -> Self {
        Self {
            n_samples: 512,
            noise_std: 0.0,
            alpha: None,
            seed: 0,
        }
    }
}

/// Expected `∇f(b + α(x̃ − b)) ⊙ (x − b)` over sampled baselines `b`,
/// interpolation points `α` and noisy inputs `x̃`.
pub fn gradient_shap(
    policy: &impl PolicyModel,
    x: &[f64],
    sampler: &BaselineSampler,
    cfg: &GradShapConfig,
    action: usize,
) -> Result<AttributionReport> {
    let n = policy.obs_dim();
    check_len(x, n)?;
    check_action(policy, action)?;
    if cfg.n_samples < 8 {
        return Err(Error::InvalidArgument(format!("n_samples = {}, need at least 8", cfg.n_samples)));
    }
    if sampler.dim() != Some(n) {
        return Err(Error::DimensionMismatch("baseline sampler does not match the input".into()));
    }
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut points = Vec::with_capacity(cfg.n_samples * n);
    let mut diffs = Vec::with_capacity(cfg.n_samples * n);
    for _ in 0..cfg.n_samples {
        let b = sampler.draw(&mut rng)?;
        let alpha = cfg.alpha.unwrap_or_else(|| rng.random::<f64>());
        for j in 0..n {
            let noisy = if cfg.noise_std > 0.0 { x[j] + noise.sample(&mut rng) } else { x[j] };
            points.push(b[j] + alpha * (noisy - b[j]));
            diffs.push(x[j] - b[j]);
        }
    }
    let g = action_gradients(policy, Tensor::matrix(cfg.n_samples, n, points)?, action)?;
    let mut values = vec![0.0; n];
    for (k, (gi, d)) in g.data().iter().zip(&diffs).enumerate() {
        values[k % n] += gi * d;
    }
    for v in &mut values {
        *v /= cfg.n_samples as f64;
    }
    AttributionReport::new(METHOD_GRADSHAP, action, values, sampler.describe())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseAgreement {
    pub first: String,
    pub second: String,
    /// Share of features, among those nonzero in both, with matching sign.
    pub sign_agreement: f64,
    /// Spearman correlation with average ranks for ties.
    pub rank_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionComparison {
    pub action: usize,
    pub methods: Vec<String>,
    /// `table[j][r]` is report `r`'s value for feature `j`.
    pub table: Vec<Vec<f64>>,
    pub pairs: Vec<PairwiseAgreement>,
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    cov / (va * vb).sqrt()
}

pub fn sign_agreement(a: &[f64], b: &[f64]) -> f64 {
    let both: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| **x != 0.0 && **y != 0.0)
        .map(|(x, y)| (*x, *y))
        .collect();
    if both.is_empty() {
        return 1.0;
    }
    both.iter().filter(|(x, y)| x.signum() == y.signum()).count() as f64 / both.len() as f64
}

pub fn attribution_compare(reports: &[AttributionReport]) -> Result<AttributionComparison> {
    if reports.len() < 2 {
        return Err(Error::InvalidArgument("at least two reports are needed".into()));
    }
    let action = reports[0].action;
    let n = reports[0].values.len();
    for r in reports {
        if r.action != action {
            return Err(Error::InvalidArgument(format!(
                "reports mix actions {action} and {}",
                r.action
            )));
        }
        if r.values.len() != n {
            return Err(Error::DimensionMismatch("reports differ in length".into()));
        }
    }
    let table = (0..n).map(|j| reports.iter().map(|r| r.values[j]).collect()).collect();
    let mut pairs = Vec::new();
    for i in 0..reports.len() {
        for k in i + 1..reports.len() {
            let (a, b) = (&reports[i].values, &reports[k].values);
            pairs.push(PairwiseAgreement {
                first: reports[i].method.clone(),
                second: reports[k].method.clone(),
                sign_agreement: sign_agreement(a, b),
                rank_correlation: pearson(&ranks(a), &ranks(b)),
            });
        }
    }
    Ok(AttributionComparison {
        action,
        methods: reports.iter().map(|r| r.method.clone()).collect(),
        table,
        pairs,
    })
}
