use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfex_autodiff::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::senn::PolicyModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    /// Radius of the search ball around each anchor.
    pub radius: f64,
    pub iterations: usize,
    pub step: f64,
    /// Length of the initial random displacement.
    pub start_scale: f64,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self {
            radius: 0.5,
            iterations: 40,
            step: 0.01,
            start_scale: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub per_anchor: Vec<f64>,
    pub max: f64,
    pub mean: f64,
    /// Population standard deviation across anchors.
    pub std: f64,
    pub anchors: usize,
    pub config: LipschitzConfig,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// Seeds depend on the anchor's contents so results ignore anchor order.
fn anchor_seed(seed: u64, x: &[f64]) -> u64 {
    x.iter().fold(mix(seed), |h, v| mix(h ^ v.to_bits()))
}

fn project(x: &mut [f64], x0: &[f64], radius: f64, bounds: &[(f64, f64)]) {
    let dist = x.iter().zip(x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    if dist > radius {
        for (a, b) in x.iter_mut().zip(x0) {
            *a = b + (*a - b) * radius / dist;
        }
    }
    for (a, &(lo, hi)) in x.iter_mut().zip(bounds) {
        *a = a.clamp(lo, hi);
    }
}

/// Ratio `‖f(x) − f(x0)‖ / ‖x − x0‖` and its gradient with respect to `x`.
fn ratio_and_grad(policy: &impl PolicyModel, x: &[f64], x0: &[f64], f0: &[f64]) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars = policy.params().record(&tape);
    let xv = tape.leaf(Tensor::row(x.to_vec())?);
    let f = policy.logits(&tape, &vars, xv)?;
    let num = f.sub(tape.constant(Tensor::row(f0.to_vec())?))?.norm();
    let den = xv.sub(tape.constant(Tensor::row(x0.to_vec())?))?.norm();
    let ratio = num.mul(den.recip())?;
    let g = tape.grad(ratio, &[xv])?[0].value();
    Ok((ratio.item(), g.data().to_vec()))
}

fn anchor_max(policy: &impl PolicyModel, x0: &[f64], bounds: &[(f64, f64)], cfg: &LipschitzConfig) -> Result<f64> {
    let f0 = policy.logits_one(x0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(anchor_seed(cfg.seed, x0));
    let mut delta: Vec<f64> = x0.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
    let dn = delta.iter().map(|d| d * d).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for d in &mut delta {
        *d *= cfg.start_scale / dn;
    }
    let start = |sign: f64| {
        let mut x: Vec<f64> = x0.iter().zip(&delta).map(|(a, d)| a + sign * d).collect();
        project(&mut x, x0, cfg.radius, bounds);
        x
    };
    let mut x = start(1.0);
    if x == x0 {
        x = start(-1.0);
    }
    if x == x0 {
        log::warn!("anchor admits no feasible displacement; ratio set to 0");
        return Ok(0.0);
    }
    let mut best = 0.0f64;
    for it in 0..=cfg.iterations {
        let (r, g) = ratio_and_grad(policy, &x, x0, &f0)?;
        best = best.max(r);
        if it == cfg.iterations {
            break;
        }
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gn > 0.0) {
            break;
        }
        let mut next: Vec<f64> = x.iter().zip(&g).map(|(a, gi)| a + cfg.step * gi / gn).collect();
        project(&mut next, x0, cfg.radius, bounds);
        if next == x0 {
            break;
        }
        x = next;
    }
    Ok(best)
}

/// Local Lipschitz estimate of the policy's logits around each anchor, by
/// projected normalized-gradient ascent inside `radius` and `bounds`.
pub fn lipschitz_estimate(
    policy: &impl PolicyModel,
    anchors: &[Vec<f64>],
    bounds: &[(f64, f64)],
    cfg: &LipschitzConfig,
) -> Result<LipschitzEstimate> {
    if !(cfg.radius > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    if anchors.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if bounds.len() != policy.obs_dim() {
        return Err(Error::DimensionMismatch(format!(
            "{} bounds for {} features",
            bounds.len(),
            policy.obs_dim()
        )));
    }
    let per_anchor = anchors
        .iter()
        .map(|a| anchor_max(policy, a, bounds, cfg))
        .collect::<Result<Vec<f64>>>()?;
    let k = per_anchor.len() as f64;
    let mean = per_anchor.iter().sum::<f64>() / k;
    let std = (per_anchor.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k).sqrt();
    Ok(LipschitzEstimate {
        max: per_anchor.iter().copied().fold(0.0, f64::max),
        mean,
        std,
        anchors: per_anchor.len(),
        per_anchor,
        config: cfg.clone(),
    })
}
