use std::path::Path;

use anyhow::Context;
use selfex::env::SimConfig;
use selfex::explain::{GlobalConfig, LipschitzConfig};
use selfex::ppo::PpoConfig;
use serde::{Deserialize, Serialize};

/// Everything a command may need, loadable from one TOML document with a
/// table per section. Missing keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub sim: SimConfig,
    pub ppo: PpoConfig,
    pub eval: EvalSection,
    pub explain: ExplainSection,
    pub lipschitz: LipschitzSection,
    pub attribution: AttributionSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub steps: usize,
    pub seed: u64,
    /// Leading evaluation steps whose decisions are written to the trace.
    pub trace_steps: usize,
    pub disconnect_threshold: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            steps: 30_000,
            seed: 12_345,
            trace_steps: 12_000,
            disconnect_threshold: selfex::ppo::DEFAULT_DISCONNECT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainSection {
    pub k: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub tau: f64,
    pub seed: u64,
    pub silhouette_sample: usize,
    pub full_matrix: bool,
}

impl Default for ExplainSection {
    fn default() -> Self {
        Self {
            k: 14,
            k_min: 6,
            k_max: 20,
            tau: 0.6,
            seed: 0,
            silhouette_sample: 2000,
            full_matrix: false,
        }
    }
}

impl ExplainSection {
    pub fn global(&self) -> GlobalConfig {
        GlobalConfig {
            k: self.k,
            tau: self.tau,
            seed: self.seed,
            silhouette_sample: self.silhouette_sample,
            full_matrix: self.full_matrix,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzSection {
    pub anchors: usize,
    pub radius: f64,
    pub iterations: usize,
    pub step: f64,
    pub start_scale: f64,
    pub seed: u64,
}

impl Default for LipschitzSection {
    fn default() -> Self {
        let c = LipschitzConfig::default();
        Self {
            anchors: 800,
            radius: c.radius,
            iterations: c.iterations,
            step: c.step,
            start_scale: c.start_scale,
            seed: c.seed,
        }
    }
}

impl LipschitzSection {
    pub fn search(&self) -> LipschitzConfig {
        LipschitzConfig {
            radius: self.radius,
            iterations: self.iterations,
            step: self.step,
            start_scale: self.start_scale,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSection {
    pub ig_steps: usize,
    pub shap_samples: usize,
    pub shap_noise: f64,
    /// Decisions averaged per action.
    pub records_per_action: usize,
    pub seed: u64,
}

impl Default for AttributionSection {
    fn default() -> Self {
        Self {
            ig_steps: 128,
            shap_samples: 512,
            shap_noise: 0.0,
            records_per_action: 100,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.sim.validate()?;
        self.ppo.validate()?;
        anyhow::ensure!(self.eval.steps > 0, "eval.steps must be positive");
        anyhow::ensure!(
            self.explain.k_min >= 1 && self.explain.k_min <= self.explain.k_max,
            "explain.k_min..=k_max must be a nonempty range"
        );
        anyhow::ensure!(self.lipschitz.anchors > 0, "lipschitz.anchors must be positive");
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
