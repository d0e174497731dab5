use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfex::env::feature_bounds;
use selfex::explain::{lipschitz_estimate, LipschitzEstimate};
use selfex::ppo::{evaluate, evaluate_observed, EvalStats, GreedyPolicy, Heuristic};
use selfex::senn::Actor;
use selfex::store::{read_trace, TraceFilter};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::eval::load_for;
use crate::export::{fmt, fmt_opt, strings, write_csv, write_json};
use crate::run::RunDir;
use crate::train::train;

/// Draws `count` anchors without replacement, keeping their original order.
pub fn sample_anchors(pool: &[Vec<f64>], count: usize, seed: u64) -> Vec<Vec<f64>> {
    if pool.len() <= count {
        if pool.len() < count {
            log::warn!("only {} observations available for {count} anchors", pool.len());
        }
        return pool.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, pool.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

pub fn estimate(cfg: &RunConfig, actor: &Actor, anchors: &[Vec<f64>]) -> anyhow::Result<LipschitzEstimate> {
    let bounds = feature_bounds(cfg.sim.n_bs, cfg.sim.n_ue);
    Ok(lipschitz_estimate(actor, anchors, &bounds, &cfg.lipschitz.search())?)
}

fn write_estimate(run: &mut RunDir, est: &LipschitzEstimate) -> anyhow::Result<()> {
    let rows = est.per_anchor.iter().enumerate().map(|(i, v)| vec![i.to_string(), fmt(*v)]);
    write_csv(&run.file("per_anchor.csv"), &strings(["anchor", "lipschitz"]), rows)?;
    run.record("per_anchor", "per_anchor.csv")?;
    write_json(&run.file("lipschitz.json"), est)?;
    run.record("summary", "lipschitz.json")?;
    run.manifest.set_result("mean", est.mean)?;
    run.manifest.set_result("std", est.std)?;
    run.manifest.set_result("max", est.max)?;
    Ok(())
}

/// Lipschitz estimate of a checkpoint around anchors drawn from a trace.
pub fn lipschitz(
    cfg: &RunConfig,
    checkpoint: &Path,
    trace: &Path,
    out: &Path,
    run_id: Option<&str>,
) -> anyhow::Result<(PathBuf, LipschitzEstimate)> {
    cfg.validate()?;
    let ck = load_for(cfg, checkpoint)?;
    let mut run = RunDir::create(out, "lipschitz", run_id, cfg)?;
    run.input("checkpoint", checkpoint)?;
    run.input("trace", trace)?;
    run.manifest.add_seed("lipschitz", cfg.lipschitz.seed)?;
    run.finish(|run| {
        let (header, records) = read_trace(trace, TraceFilter::default())?;
        header.check_fingerprint(&ck.fingerprint);
        let pool: Vec<Vec<f64>> = records.into_iter().map(|r| r.observation).collect();
        anyhow::ensure!(!pool.is_empty(), "trace {} holds no records", trace.display());
        let anchors = sample_anchors(&pool, cfg.lipschitz.anchors, cfg.lipschitz.seed);
        let est = estimate(cfg, &ck.actor, &anchors)?;
        write_estimate(run, &est)?;
        Ok((run.path.clone(), est))
    })
}

/// One (λ, seed) cell. Metric fields are empty when the cell failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub seed: u64,
    pub run_id: Option<String>,
    pub return_mean: Option<f64>,
    pub return_std: Option<f64>,
    pub return_se: Option<f64>,
    pub lipschitz_mean: Option<f64>,
    pub lipschitz_std: Option<f64>,
    pub lipschitz_max: Option<f64>,
    pub error: Option<String>,
}

/// Cells of one λ pooled across seeds. Spreads are sample standard
/// deviations of the per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub lambda: f64,
    pub completed: usize,
    pub return_mean: Option<f64>,
    pub return_seed_std: Option<f64>,
    pub lipschitz_mean: Option<f64>,
    pub lipschitz_seed_std: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub run_dir: PathBuf,
    pub heuristic: EvalStats,
    pub cells: Vec<SweepCell>,
    pub summary: Vec<SweepSummary>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn cell(&self, lambda: f64, seed: u64) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.lambda == lambda && c.seed == seed)
    }

    pub fn summary_for(&self, lambda: f64) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.lambda == lambda)
    }
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

fn summarize(lambdas: &[f64], cells: &[SweepCell]) -> Vec<SweepSummary> {
    lambdas
        .iter()
        .map(|&lambda| {
            let done: Vec<&SweepCell> = cells.iter().filter(|c| c.lambda == lambda && c.error.is_none()).collect();
            let returns: Vec<f64> = done.iter().filter_map(|c| c.return_mean).collect();
            let lips: Vec<f64> = done.iter().filter_map(|c| c.lipschitz_mean).collect();
            let (return_mean, return_seed_std) = mean_std(&returns);
            let (lipschitz_mean, lipschitz_seed_std) = mean_std(&lips);
            SweepSummary {
                lambda,
                completed: done.len(),
                return_mean,
                return_seed_std,
                lipschitz_mean,
                lipschitz_seed_std,
            }
        })
        .collect()
}

fn run_cell(cfg: &RunConfig, lambda: f64, seed: u64, anchors: &[Vec<f64>], cells_dir: &Path) -> anyhow::Result<SweepCell> {
    let mut cell_cfg = cfg.clone();
    cell_cfg.ppo.robustness_lambda = lambda;
    cell_cfg.ppo.seed = seed;
    let id = format!("lambda-{lambda}-seed-{seed}");
    log::info!("sweep cell {id}");
    let trained = train(&cell_cfg, cells_dir, Some(&id))?;
    let ck = load_for(&cell_cfg, &trained.checkpoint)?;
    let stats = evaluate(&cfg.sim, cfg.eval.steps, cfg.eval.seed, &GreedyPolicy::new(&ck.actor))?;
    let est = estimate(cfg, &ck.actor, anchors)?;
    Ok(SweepCell {
        lambda,
        seed,
        run_id: Some(id),
        return_mean: Some(stats.mean),
        return_std: Some(stats.std),
        return_se: Some(stats.std_error()),
        lipschitz_mean: Some(est.mean),
        lipschitz_std: Some(est.std),
        lipschitz_max: Some(est.max),
        error: None,
    })
}

/// Trains, evaluates and estimates stability for every (λ, seed) pair. All
/// cells share the training seeds, the evaluation seed and one anchor set
/// drawn from a heuristic-policy evaluation, so only λ differs between
/// columns. A failing cell is recorded and the sweep moves on.
pub fn sweep_lambda(
    cfg: &RunConfig,
    lambdas: &[f64],
    seeds: &[u64],
    out: &Path,
    run_id: Option<&str>,
) -> anyhow::Result<SweepOutcome> {
    cfg.validate()?;
    anyhow::ensure!(lambdas.len() >= 2, "a sweep needs at least two λ values");
    anyhow::ensure!(!seeds.is_empty(), "a sweep needs at least one seed");
    let mut run = RunDir::create(out, "sweep-lambda", run_id, cfg)?;
    for &s in seeds {
        run.manifest.add_seed(format!("train-{s}"), s)?;
    }
    run.manifest.add_seed("eval", cfg.eval.seed)?;
    run.manifest.add_seed("lipschitz", cfg.lipschitz.seed)?;
    run.manifest.set_result("lambdas", lambdas)?;
    run.finish(|run| {
        let heuristic = Heuristic {
            disconnect_threshold: cfg.eval.disconnect_threshold,
        };
        let mut pool = Vec::new();
        let heuristic_stats = evaluate_observed(&cfg.sim, cfg.eval.steps, cfg.eval.seed, &heuristic, |d| {
            pool.push(d.features.to_vec());
        })?;
        let anchors = sample_anchors(&pool, cfg.lipschitz.anchors, cfg.lipschitz.seed);
        drop(pool);

        let cells_dir = run.file("cells");
        std::fs::create_dir_all(&cells_dir)?;
        let mut cells = Vec::new();
        for &lambda in lambdas {
            for &seed in seeds {
                let cell = run_cell(cfg, lambda, seed, &anchors, &cells_dir).unwrap_or_else(|e| {
                    log::error!("cell λ={lambda} seed={seed} failed: {e:#}");
                    SweepCell {
                        lambda,
                        seed,
                        run_id: None,
                        return_mean: None,
                        return_std: None,
                        return_se: None,
                        lipschitz_mean: None,
                        lipschitz_std: None,
                        lipschitz_max: None,
                        error: Some(format!("{e:#}")),
                    }
                });
                cells.push(cell);
            }
        }
        let summary = summarize(lambdas, &cells);

        let rows = cells.iter().map(|c| {
            vec![
                fmt(c.lambda),
                c.seed.to_string(),
                fmt_opt(c.return_mean),
                fmt_opt(c.return_std),
                fmt_opt(c.return_se),
                fmt_opt(c.lipschitz_mean),
                fmt_opt(c.lipschitz_std),
                fmt_opt(c.lipschitz_max),
                c.error.clone().unwrap_or_default(),
            ]
        });
        write_csv(
            &run.file("sweep.csv"),
            &strings([
                "lambda",
                "seed",
                "return_mean",
                "return_std",
                "return_se",
                "lipschitz_mean",
                "lipschitz_std",
                "lipschitz_max",
                "error",
            ]),
            rows,
        )?;
        run.record("cells", "sweep.csv")?;
        let rows = summary.iter().map(|s| {
            vec![
                fmt(s.lambda),
                s.completed.to_string(),
                fmt_opt(s.return_mean),
                fmt_opt(s.return_seed_std),
                fmt_opt(s.lipschitz_mean),
                fmt_opt(s.lipschitz_seed_std),
            ]
        });
        write_csv(
            &run.file("summary.csv"),
            &strings([
                "lambda",
                "completed",
                "return_mean",
                "return_seed_std",
                "lipschitz_mean",
                "lipschitz_seed_std",
            ]),
            rows,
        )?;
        run.record("summary", "summary.csv")?;
        let outcome = SweepOutcome {
            run_dir: run.path.clone(),
            heuristic: heuristic_stats,
            cells,
            summary,
        };
        write_json(
            &run.file("sweep.json"),
            &serde_json::json!({
                "heuristic": { "mean": outcome.heuristic.mean, "std": outcome.heuristic.std },
                "cells": outcome.cells,
                "summary": outcome.summary,
            }),
        )?;
        run.record("report", "sweep.json")?;
        run.manifest.set_result("failures", outcome.failures())?;
        run.manifest.set_result("heuristic_mean", outcome.heuristic.mean)?;
        Ok(outcome)
    })
}
