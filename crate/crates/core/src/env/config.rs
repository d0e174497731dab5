use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Scenario, radio and QoE constants for [`MobileEnv`](super::MobileEnv).
///
/// Defaults describe a 200 m x 200 m cell area with three base stations and
/// three moving UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub width: f64,
    pub height: f64,
    pub n_bs: usize,
    pub n_ue: usize,
    pub bs_positions: Vec<[f64; 2]>,
    /// Metres per step.
    pub ue_speed: f64,
    pub episode_length: usize,
    /// Largest heading change per step, in degrees.
    pub max_turn_deg: f64,
    pub carrier_mhz: f64,
    pub bs_height_m: f64,
    pub ue_height_m: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_dbm: f64,
    /// SNR values (dB) mapped to the ends of the observed (0, 1) range.
    pub snr_db_range: (f64, f64),
    pub qoe_scale: f64,
    /// Rate (bit/s) at which QoE is 0.
    pub target_rate: f64,
    /// Reward every UE with the mean QoE over all UEs instead of its own.
    pub aggregate_reward: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            width: 200.0,
            height: 200.0,
            n_bs: 3,
            n_ue: 3,
            bs_positions: vec![[110.0, 130.0], [65.0, 80.0], [120.0, 30.0]],
            ue_speed: 1.5,
            episode_length: 100,
            max_turn_deg: 30.0,
            carrier_mhz: 1500.0,
            bs_height_m: 50.0,
            ue_height_m: 1.5,
            bandwidth_hz: 9e6,
            tx_power_dbm: 40.0,
            noise_dbm: -95.0,
            snr_db_range: (0.0, 120.0),
            qoe_scale: 10.0,
            target_rate: 2e6,
            aggregate_reward: false,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.width > 0.0 && self.height > 0.0) {
            return fail(format!("area {}x{} must be positive", self.width, self.height));
        }
        if self.n_bs == 0 || self.n_ue == 0 {
            return fail("n_bs and n_ue must be at least 1".into());
        }
        if self.bs_positions.len() != self.n_bs {
            return fail(format!(
                "n_bs = {} but {} positions given",
                self.n_bs,
                self.bs_positions.len()
            ));
        }
        for (i, p) in self.bs_positions.iter().enumerate() {
            if !(0.0..=self.width).contains(&p[0]) || !(0.0..=self.height).contains(&p[1]) {
                return fail(format!("BS {} at {:?} lies outside the area", i + 1, p));
            }
        }
        if self.episode_length == 0 {
            return fail("episode_length must be at least 1".into());
        }
        if !(self.snr_db_range.0 < self.snr_db_range.1) {
            return fail(format!("snr_db_range {:?} must be increasing", self.snr_db_range));
        }
        if !(self.ue_speed >= 0.0) || !(self.max_turn_deg >= 0.0) {
            return fail("ue_speed and max_turn_deg must be nonnegative".into());
        }
        if !(self.carrier_mhz > 0.0
            && self.bs_height_m > 0.0
            && self.ue_height_m > 0.0
            && self.bandwidth_hz > 0.0)
        {
            return fail("radio constants must be positive".into());
        }
        if !(self.qoe_scale > 0.0 && self.target_rate > 0.0) {
            return fail("qoe_scale and target_rate must be positive".into());
        }
        Ok(())
    }

    /// Length of the per-UE observation vector.
    pub fn obs_dim(&self) -> usize {
        4 * self.n_bs + 1
    }

    /// Number of discrete actions (no-op plus one toggle per BS).
    pub fn n_actions(&self) -> usize {
        self.n_bs + 1
    }

    /// Content hash of the scenario; the seed is excluded so that runs with
    /// different seeds share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let unseeded = Self {
            seed: 0,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&unseeded).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
