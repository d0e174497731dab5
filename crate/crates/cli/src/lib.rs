//! Command implementations behind the `selfex` binary. Every command writes
//! into its own run directory and seals a manifest there.

pub mod config;
pub mod eval;
pub mod explain;
mod export;
pub mod run;
pub mod stability;
pub mod train;

pub use config::RunConfig;
pub use eval::{eval, rerun_eval, EvalOutcome, EvalReport, Rerun};
pub use explain::{attrib_compare, attribution_table, explain_global, explain_local, GlobalOutcome, LocalInput};
pub use stability::{lipschitz, sweep_lambda, SweepCell, SweepOutcome, SweepSummary};
pub use train::{train, TrainOutcome};
