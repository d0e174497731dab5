use std::path::{Path, PathBuf};

use anyhow::Context;
use selfex::explain::local_explanation;
use selfex::ppo::{evaluate, evaluate_observed, EvalStats, GreedyPolicy, Heuristic};
use selfex::senn::{Actor, PolicyModel};
use selfex::store::{load_checkpoint, Checkpoint, TraceHeader, TraceWriter};
use selfex::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::export::{fmt, fmt_opt, write_csv, write_json};
use crate::run::{load_run, RunDir};

pub const REPORT_FILE: &str = "eval.json";
pub const RETURNS_FILE: &str = "returns.csv";
pub const TRACE_FILE: &str = "trace.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub steps: usize,
    pub seed: u64,
    pub fingerprint: String,
    pub policy: EvalStats,
    pub heuristic: EvalStats,
    pub trace_records: usize,
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub run_dir: PathBuf,
    pub report: EvalReport,
    pub trace: Option<PathBuf>,
}

/// Loads a checkpoint and rejects it when it was trained on a different
/// simulator configuration.
pub fn load_for(cfg: &RunConfig, path: &Path) -> anyhow::Result<Checkpoint> {
    let ck = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    let expected = cfg.sim.fingerprint();
    if ck.sim_fingerprint != expected {
        return Err(Error::FingerprintMismatch(format!(
            "checkpoint {} was trained on simulator {}, configuration is {}",
            path.display(),
            ck.sim_fingerprint,
            expected
        ))
        .into());
    }
    Ok(ck)
}

/// Greedy evaluation plus the heuristic baseline on identical seeds. For
/// SENN actors the first `trace_steps` steps are written as decision records.
fn run_eval(cfg: &RunConfig, actor: &Actor, fingerprint: &str, trace: Option<&Path>) -> anyhow::Result<EvalReport> {
    let greedy = GreedyPolicy::new(actor);
    let (steps, seed) = (cfg.eval.steps, cfg.eval.seed);
    let (policy, trace_records) = match (trace, actor.as_senn()) {
        (Some(path), Some(senn)) => {
            let header = TraceHeader::new(actor.obs_dim(), actor.n_actions(), fingerprint);
            let mut writer = TraceWriter::create(path, header)?;
            let limit = cfg.eval.trace_steps * cfg.sim.n_ue;
            let mut seen = 0;
            let mut failure = None;
            let stats = evaluate_observed(&cfg.sim, steps, seed, &greedy, |d| {
                if seen >= limit || failure.is_some() {
                    return;
                }
                seen += 1;
                let written = local_explanation(senn, d.features).and_then(|mut r| {
                    r.episode = d.episode;
                    r.step = d.step;
                    r.ue = d.ue;
                    r.action = d.action;
                    writer.append(&r)
                });
                if let Err(e) = written {
                    failure = Some(e);
                }
            })?;
            if let Some(e) = failure {
                return Err(e.into());
            }
            (stats, writer.finish()?)
        }
        _ => (evaluate(&cfg.sim, steps, seed, &greedy)?, 0),
    };
    let heuristic = Heuristic {
        disconnect_threshold: cfg.eval.disconnect_threshold,
    };
    let heuristic = evaluate(&cfg.sim, steps, seed, &heuristic)?;
    Ok(EvalReport {
        steps,
        seed,
        fingerprint: fingerprint.to_string(),
        policy,
        heuristic,
        trace_records,
    })
}

fn write_returns(path: &Path, report: &EvalReport) -> anyhow::Result<()> {
    let (p, h) = (&report.policy.episode_returns, &report.heuristic.episode_returns);
    let rows = (0..p.len().max(h.len())).map(|i| {
        vec![
            i.to_string(),
            fmt_opt(p.get(i).copied()),
            fmt_opt(h.get(i).copied()),
        ]
    });
    write_csv(path, &["episode".into(), "policy".into(), "heuristic".into()], rows)
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, out: &Path, run_id: Option<&str>) -> anyhow::Result<EvalOutcome> {
    cfg.validate()?;
    let ck = load_for(cfg, checkpoint)?;
    let mut run = RunDir::create(out, "eval", run_id, cfg)?;
    run.input("checkpoint", checkpoint)?;
    run.manifest.add_seed("eval", cfg.eval.seed)?;
    run.finish(|run| {
        let trace_path = run.file(TRACE_FILE);
        let want_trace = cfg.eval.trace_steps > 0 && ck.actor.as_senn().is_some();
        if cfg.eval.trace_steps > 0 && !want_trace {
            log::warn!("{} actors expose no relevance; no trace is written", ck.actor.kind());
        }
        let report = run_eval(cfg, &ck.actor, &ck.fingerprint, want_trace.then_some(trace_path.as_path()))?;
        let trace = if want_trace {
            Some(run.record("trace", TRACE_FILE)?)
        } else {
            None
        };
        write_json(&run.file(REPORT_FILE), &report)?;
        run.record("report", REPORT_FILE)?;
        write_returns(&run.file(RETURNS_FILE), &report)?;
        run.record("returns", RETURNS_FILE)?;
        run.manifest.set_result("policy_mean", report.policy.mean)?;
        run.manifest.set_result("policy_std", report.policy.std)?;
        run.manifest.set_result("heuristic_mean", report.heuristic.mean)?;
        run.manifest.set_result("heuristic_std", report.heuristic.std)?;
        run.manifest.set_result("episodes", report.policy.episode_returns.len())?;
        log::info!(
            "policy {} ± {} vs heuristic {} ± {}",
            fmt(report.policy.mean),
            fmt(report.policy.std),
            fmt(report.heuristic.mean),
            fmt(report.heuristic.std)
        );
        Ok(EvalOutcome {
            run_dir: run.path.clone(),
            report,
            trace,
        })
    })
}

#[derive(Debug, Clone)]
pub struct Rerun {
    pub outcome: EvalOutcome,
    pub original: EvalReport,
    /// Return statistics of both runs agree bit for bit.
    pub identical: bool,
}

/// Repeats an evaluation from its sealed manifest with the recorded
/// configuration, seed and checkpoint.
pub fn rerun_eval(manifest: &Path, out: &Path, run_id: Option<&str>) -> anyhow::Result<Rerun> {
    let (m, cfg, dir) = load_run(manifest)?;
    anyhow::ensure!(m.command == "eval", "{} records a {} run", manifest.display(), m.command);
    let checkpoint = m.inputs.get("checkpoint").context("manifest lists no checkpoint")?;
    let report_path = m.artifact_path(&dir, "report").context("manifest lists no report")?;
    let original: EvalReport = serde_json::from_slice(&std::fs::read(&report_path)?)?;
    let outcome = eval(&cfg, Path::new(checkpoint), out, run_id)?;
    let identical = outcome.report.policy == original.policy && outcome.report.heuristic == original.heuristic;
    Ok(Rerun {
        outcome,
        original,
        identical,
    })
}
