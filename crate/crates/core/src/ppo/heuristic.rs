use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::Result;

use super::eval::Decider;

pub const DEFAULT_DISCONNECT_THRESHOLD: f64 = 0.2;

/// Greedy baseline: stay on the strongest BS and drop weak links.
///
/// Rules, in order: connect to the strongest-SNR BS if not yet connected;
/// otherwise disconnect the first connected BS whose observed SNR is below
/// the threshold; otherwise do nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heuristic {
    pub disconnect_threshold: f64,
}

impl Default for Heuristic {
    fn default() -> Self {
        Self {
            disconnect_threshold: DEFAULT_DISCONNECT_THRESHOLD,
        }
    }
}

impl Heuristic {
    pub fn act(&self, obs: &Observation) -> usize {
        let mut best = 0;
        for (i, &s) in obs.snr.iter().enumerate() {
            if s > obs.snr[best] {
                best = i;
            }
        }
        if obs.conn_status[best] == 0.0 {
            return best + 1;
        }
        obs.conn_status
            .iter()
            .zip(&obs.snr)
            .position(|(&c, &s)| c == 1.0 && s < self.disconnect_threshold)
            .map_or(0, |i| i + 1)
    }
}

impl Decider for Heuristic {
    fn decide(&self, obs: &[Observation]) -> Result<Vec<usize>> {
        Ok(obs.iter().map(|o| self.act(o)).collect())
    }
}
