//! Multi-UE cell association simulator.
//!
//! UEs walk at constant speed among static base stations and, every step,
//! either toggle one BS connection or do nothing. Each BS splits its bandwidth
//! equally over its connected UEs; a UE's rate is the sum of its shares'
//! Shannon capacities and its reward is the logarithmic QoE of that rate.

mod config;
pub mod radio;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::SimConfig;

use crate::error::{Error, Result};

/// What one UE perceives. [`Observation::features`] concatenates the fields
/// in declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub conn_status: Vec<f64>,
    pub snr: Vec<f64>,
    pub ue_utility: f64,
    pub ues_per_bs: Vec<f64>,
    pub bs_utility: Vec<f64>,
}

impl Observation {
    pub fn features(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.snr.len() + 1);
        v.extend_from_slice(&self.conn_status);
        v.extend_from_slice(&self.snr);
        v.push(self.ue_utility);
        v.extend_from_slice(&self.ues_per_bs);
        v.extend_from_slice(&self.bs_utility);
        v
    }

    pub fn from_features(n_bs: usize, x: &[f64]) -> Result<Self> {
        if x.len() != 4 * n_bs + 1 {
            return Err(Error::InputLength {
                expected: 4 * n_bs + 1,
                actual: x.len(),
            });
        }
        Ok(Self {
            conn_status: x[..n_bs].to_vec(),
            snr: x[n_bs..2 * n_bs].to_vec(),
            ue_utility: x[2 * n_bs],
            ues_per_bs: x[2 * n_bs + 1..3 * n_bs + 1].to_vec(),
            bs_utility: x[3 * n_bs + 1..].to_vec(),
        })
    }

    /// Checks every field against its domain.
    pub fn is_valid(&self, n_ue: usize) -> bool {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        let signed_unit = |v: f64| (-1.0..=1.0).contains(&v);
        self.conn_status.iter().all(|&c| c == 0.0 || c == 1.0)
            && self.snr.iter().all(|&s| open_unit(s))
            && signed_unit(self.ue_utility)
            && self
                .ues_per_bs
                .iter()
                .all(|&k| k >= 0.0 && k.fract() == 0.0 && k <= n_ue as f64)
            && self.bs_utility.iter().all(|&u| signed_unit(u))
    }
}

/// Human-readable feature labels, matching [`Observation::features`].
pub fn feature_names(n_bs: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(4 * n_bs + 1);
    names.extend((1..=n_bs).map(|i| format!("conn_bs{i}")));
    names.extend((1..=n_bs).map(|i| format!("snr_bs{i}")));
    names.push("ue_utility".to_string());
    names.extend((1..=n_bs).map(|i| format!("ues_at_bs{i}")));
    names.extend((1..=n_bs).map(|i| format!("utility_bs{i}")));
    names
}

/// Box bounds of every feature, for projecting perturbed observations.
pub fn feature_bounds(n_bs: usize, n_ue: usize) -> Vec<(f64, f64)> {
    let mut b = Vec::with_capacity(4 * n_bs + 1);
    b.extend(std::iter::repeat_n((0.0, 1.0), 2 * n_bs));
    b.push((-1.0, 1.0));
    b.extend(std::iter::repeat_n((0.0, n_ue as f64), n_bs));
    b.extend(std::iter::repeat_n((-1.0, 1.0), n_bs));
    b
}

pub fn action_names(n_bs: usize) -> Vec<String> {
    std::iter::once("no_action".to_string())
        .chain((1..=n_bs).map(|i| format!("toggle_bs{i}")))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeState {
    pub position: [f64; 2],
    pub heading: [f64; 2],
    pub connections: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub done: bool,
}

pub struct MobileEnv {
    config: SimConfig,
    rng: ChaCha8Rng,
    ues: Vec<UeState>,
    step_count: usize,
    done: bool,
    utilities: Vec<f64>,
}

impl MobileEnv {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed;
        let mut env = Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            ues: Vec::new(),
            step_count: 0,
            done: false,
            utilities: Vec::new(),
            config,
        };
        env.reset(seed);
        Ok(env)
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn ues(&self) -> &[UeState] {
        &self.ues
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Starts a new episode: uniform UE positions and headings, no
    /// connections.
    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &self.config;
        self.ues = (0..c.n_ue)
            .map(|_| {
                let x = self.rng.random_range(0.0..=c.width);
                let y = self.rng.random_range(0.0..=c.height);
                let angle = self.rng.random_range(0.0..std::f64::consts::TAU);
                UeState {
                    position: [x, y],
                    heading: [angle.cos(), angle.sin()],
                    connections: vec![false; c.n_bs],
                }
            })
            .collect();
        self.step_count = 0;
        self.done = false;
        self.utilities = self.compute_utilities();
        self.observations()
    }

    /// Applies one action per UE (0 = no-op, k = toggle BS k), moves UEs,
    /// and returns rewards with fresh observations.
    pub fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::StepAfterDone);
        }
        let n_bs = self.config.n_bs;
        if actions.len() != self.ues.len() {
            return Err(Error::ActionCount {
                expected: self.ues.len(),
                actual: actions.len(),
            });
        }
        if let Some((ue, &action)) = actions.iter().enumerate().find(|(_, &a)| a > n_bs) {
            return Err(Error::InvalidAction {
                ue,
                action,
                max: n_bs,
            });
        }
        for (ue, &a) in self.ues.iter_mut().zip(actions) {
            if a > 0 {
                ue.connections[a - 1] = !ue.connections[a - 1];
            }
        }
        self.move_ues();
        self.utilities = self.compute_utilities();
        self.step_count += 1;
        self.done = self.step_count == self.config.episode_length;

        let rewards = if self.config.aggregate_reward {
            let mean = self.utilities.iter().sum::<f64>() / self.utilities.len() as f64;
            vec![mean; self.utilities.len()]
        } else {
            self.utilities.clone()
        };
        Ok(StepResult {
            observations: self.observations(),
            rewards,
            done: self.done,
        })
    }

    fn move_ues(&mut self) {
        let c = &self.config;
        let max_turn = c.max_turn_deg.to_radians();
        for ue in &mut self.ues {
            let turn = if max_turn > 0.0 {
                self.rng.random_range(-max_turn..=max_turn)
            } else {
                0.0
            };
            let (s, co) = turn.sin_cos();
            let [hx, hy] = ue.heading;
            let mut heading = [hx * co - hy * s, hx * s + hy * co];
            let norm = (heading[0] * heading[0] + heading[1] * heading[1]).sqrt();
            heading = [heading[0] / norm, heading[1] / norm];
            let mut pos = [
                ue.position[0] + c.ue_speed * heading[0],
                ue.position[1] + c.ue_speed * heading[1],
            ];
            for (axis, limit) in [(0, c.width), (1, c.height)] {
                if pos[axis] < 0.0 {
                    pos[axis] = -pos[axis];
                    heading[axis] = -heading[axis];
                } else if pos[axis] > limit {
                    pos[axis] = 2.0 * limit - pos[axis];
                    heading[axis] = -heading[axis];
                }
                pos[axis] = pos[axis].clamp(0.0, limit);
            }
            ue.position = pos;
            ue.heading = heading;
        }
    }

    /// Connected-UE count per BS.
    pub fn load(&self) -> Vec<usize> {
        (0..self.config.n_bs)
            .map(|b| self.ues.iter().filter(|u| u.connections[b]).count())
            .collect()
    }

    /// Bandwidth assigned to each (UE, BS) link; zero when not connected.
    pub fn bandwidth_shares(&self) -> Vec<Vec<f64>> {
        let load = self.load();
        self.ues
            .iter()
            .map(|u| {
                (0..self.config.n_bs)
                    .map(|b| {
                        if u.connections[b] {
                            self.config.bandwidth_hz / load[b] as f64
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        let shares = self.bandwidth_shares();
        self.ues
            .iter()
            .zip(&shares)
            .map(|(u, share)| {
                self.config
                    .bs_positions
                    .iter()
                    .zip(share)
                    .filter(|(_, &bw)| bw > 0.0)
                    .map(|(&bs, &bw)| radio::shannon_rate(bw, radio::snr_db(u.position, bs, &self.config)))
                    .sum()
            })
            .collect()
    }

    fn compute_utilities(&self) -> Vec<f64> {
        self.rates()
            .into_iter()
            .map(|r| radio::qoe(r, &self.config))
            .collect()
    }

    /// Current per-UE QoE in `[-20, 20]`.
    pub fn utilities(&self) -> &[f64] {
        &self.utilities
    }

    pub fn observations(&self) -> Vec<Observation> {
        let c = &self.config;
        let load = self.load();
        let scaled: Vec<f64> = self.utilities.iter().map(|u| u / radio::QOE_BOUND).collect();
        let bs_utility: Vec<f64> = (0..c.n_bs)
            .map(|b| {
                if load[b] == 0 {
                    0.0
                } else {
                    self.ues
                        .iter()
                        .zip(&scaled)
                        .filter(|(u, _)| u.connections[b])
                        .map(|(_, s)| s)
                        .sum::<f64>()
                        / load[b] as f64
                }
            })
            .collect();
        let ues_per_bs: Vec<f64> = load.iter().map(|&k| k as f64).collect();
        self.ues
            .iter()
            .zip(&scaled)
            .map(|(u, &util)| Observation {
                conn_status: u.connections.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                snr: c
                    .bs_positions
                    .iter()
                    .map(|&bs| radio::snr_observed(u.position, bs, c))
                    .collect(),
                ue_utility: util,
                ues_per_bs: ues_per_bs.clone(),
                bs_utility: bs_utility.clone(),
            })
            .collect()
    }
}
