//! Self-explaining PPO agents for mobile-network cell association.
//!
//! * [`env`]: the multi-UE simulator producing 13-feature observations.
//! * [`senn`]: the biased self-explaining actor, its explanations and
//!   robustness penalty.
//! * [`ppo`]: rollout collection, GAE, clipped-surrogate updates and the
//!   greedy heuristic baseline.
//! * [`explain`]: effect distributions, clustering-based importance,
//!   Lipschitz stability and post-hoc attribution baselines.
//! * [`store`]: checkpoints, decision traces, run manifests and metrics.

pub mod env;
pub mod error;
pub mod explain;
pub mod mlp;
pub mod ppo;
pub mod senn;
pub mod store;

pub use error::{Error, Result};
