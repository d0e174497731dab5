use std::path::{Path, PathBuf};

use anyhow::Context;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfex::env::{action_names, feature_names};
use selfex::explain::{
    attribution_compare, bias_report, global_explanation, gradient_shap, input_x_gradient, integrated_gradients,
    local_explanation, AttributionComparison, AttributionReport, BaselineSampler, ClusterModel, DecisionRecord,
    GlobalExplanation, GradShapConfig, METHOD_CLUSTER,
};
use selfex::senn::{Actor, PolicyModel};
use selfex::store::{read_trace, Checkpoint, TraceFilter, TraceHeader};
use selfex::Error;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::eval::load_for;
use crate::export::{fmt, fmt_opt, strings, summary, write_csv, write_json};
use crate::run::RunDir;

/// Where a local explanation's observation comes from.
#[derive(Debug, Clone)]
pub enum LocalInput {
    Observation(Vec<f64>),
    TraceRecord { trace: PathBuf, index: usize },
}

fn labels(cfg: &RunConfig) -> (Vec<String>, Vec<String>) {
    (feature_names(cfg.sim.n_bs), action_names(cfg.sim.n_bs))
}

fn senn_of(ck: &Checkpoint) -> anyhow::Result<&selfex::senn::SennPolicy> {
    ck.actor.as_senn().with_context(|| {
        format!("{} actors expose no relevance scores; explanations need a SENN checkpoint", ck.actor.kind())
    })
}

pub fn explain_local(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &LocalInput,
    out: &Path,
    run_id: Option<&str>,
) -> anyhow::Result<(PathBuf, DecisionRecord)> {
    let ck = load_for(cfg, checkpoint)?;
    let policy = senn_of(&ck)?;
    let mut run = RunDir::create(out, "explain-local", run_id, cfg)?;
    run.input("checkpoint", checkpoint)?;
    run.finish(|run| {
        let record = match input {
            LocalInput::Observation(x) => local_explanation(policy, x)?,
            LocalInput::TraceRecord { trace, index } => {
                run.input("trace", trace)?;
                let (_, records) = read_trace(trace, TraceFilter::default())?;
                let r = records
                    .get(*index)
                    .with_context(|| format!("trace holds {} records, index {index} is out of range", records.len()))?;
                let mut fresh = local_explanation(policy, &r.observation)?;
                fresh.episode = r.episode;
                fresh.step = r.step;
                fresh.ue = r.ue;
                fresh
            }
        };
        let (features, actions) = labels(cfg);
        write_json(&run.file("local.json"), &record)?;
        run.record("explanation", "local.json")?;

        let mut header = strings(["feature", "value"]);
        for a in &actions {
            header.push(format!("relevance[{a}]"));
            header.push(format!("effect[{a}]"));
        }
        let rows = features.iter().enumerate().map(|(j, name)| {
            let mut row = vec![name.clone(), fmt(record.observation[j])];
            for a in 0..actions.len() {
                row.push(fmt(record.relevance[a][j]));
                row.push(fmt(record.effects[a][j]));
            }
            row
        });
        write_csv(&run.file("local.csv"), &header, rows)?;
        run.record("table", "local.csv")?;

        let rows = actions
            .iter()
            .enumerate()
            .map(|(a, name)| vec![name.clone(), fmt(record.logits[a]), fmt(record.bias[a])]);
        write_csv(&run.file("logits.csv"), &strings(["action", "logit", "bias"]), rows)?;
        run.record("logits", "logits.csv")?;
        run.manifest.set_result("action", record.action)?;
        run.manifest.set_result("decomposition_error", record.decomposition_error())?;
        Ok((run.path.clone(), record))
    })
}

/// Reads a trace, optionally checking it against the checkpoint that is
/// supposed to have produced it.
fn load_trace(trace: &Path, checkpoint: Option<&Checkpoint>) -> anyhow::Result<(TraceHeader, Vec<DecisionRecord>)> {
    let (header, records) = read_trace(trace, TraceFilter::default())?;
    if let Some(ck) = checkpoint {
        if !header.check_fingerprint(&ck.fingerprint) {
            return Err(Error::FingerprintMismatch(format!(
                "trace {} was written by model {}, checkpoint is {}",
                trace.display(),
                header.fingerprint,
                ck.fingerprint
            ))
            .into());
        }
        if (header.n, header.m) != (ck.actor.obs_dim(), ck.actor.n_actions()) {
            return Err(Error::DimensionMismatch(format!(
                "trace is {}x{}, checkpoint is {}x{}",
                header.m,
                header.n,
                ck.actor.n_actions(),
                ck.actor.obs_dim()
            ))
            .into());
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyBatch).with_context(|| format!("trace {} holds no records", trace.display()));
    }
    Ok((header, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweepRow {
    pub k: usize,
    pub distortion: f64,
    pub silhouette: Option<f64>,
    pub davies_bouldin: Option<f64>,
    pub purity: f64,
}

#[derive(Debug, Clone)]
pub struct GlobalOutcome {
    pub run_dir: PathBuf,
    pub explanation: GlobalExplanation,
    pub k_sweep: Vec<KSweepRow>,
    pub effect_samples: usize,
}

#[derive(Serialize)]
struct GlobalSummary<'a> {
    n_records: usize,
    effect_samples: usize,
    effect_counts: Vec<usize>,
    k: usize,
    tau: f64,
    cluster_sizes: Vec<usize>,
    metrics: &'a selfex::explain::ClusterMetrics,
    cluster_sets: &'a [Vec<usize>],
    importance: &'a [Option<Vec<f64>>],
    bias: &'a [(String, f64)],
    k_sweep: &'a [KSweepRow],
}

fn points_of(records: &[DecisionRecord], full_matrix: bool) -> Vec<Vec<f64>> {
    records
        .iter()
        .map(|r| if full_matrix { r.relevance.concat() } else { r.chosen_relevance().to_vec() })
        .collect()
}

pub fn explain_global(
    cfg: &RunConfig,
    trace: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
    run_id: Option<&str>,
) -> anyhow::Result<GlobalOutcome> {
    cfg.validate()?;
    let ck = checkpoint.map(|p| load_for(cfg, p)).transpose()?;
    let mut run = RunDir::create(out, "explain-global", run_id, cfg)?;
    run.input("trace", trace)?;
    if let Some(p) = checkpoint {
        run.input("checkpoint", p)?;
    }
    run.manifest.add_seed("kmeans", cfg.explain.seed)?;
    run.finish(|run| {
        let (header, records) = load_trace(trace, ck.as_ref())?;
        let (features, actions) = labels(cfg);
        anyhow::ensure!(
            (header.n, header.m) == (features.len(), actions.len()),
            "trace is {}x{}, configuration expects {}x{}",
            header.m,
            header.n,
            actions.len(),
            features.len()
        );
        let global = cfg.explain.global();
        let explanation = global_explanation(&records, &global)?;
        let bias = match ck.as_ref().map(senn_of).transpose()? {
            Some(policy) => bias_report(policy),
            None => explanation.bias.clone(),
        };

        let points = points_of(&records, global.full_matrix);
        let labels: Vec<usize> = records.iter().map(|r| r.action).collect();
        let mut k_sweep = Vec::new();
        for k in cfg.explain.k_min..=cfg.explain.k_max {
            let model = if k == explanation.clusters.k {
                explanation.clusters.clone()
            } else {
                ClusterModel::fit(&points, &labels, header.m, k, global.tau, global.seed, global.silhouette_sample)?
            };
            log::info!("k = {k}: silhouette {:?}", model.metrics.silhouette);
            k_sweep.push(KSweepRow {
                k,
                distortion: model.distortion,
                silhouette: model.metrics.silhouette,
                davies_bouldin: model.metrics.davies_bouldin,
                purity: model.metrics.overall_purity,
            });
        }
        let rows = k_sweep.iter().map(|r| {
            vec![
                r.k.to_string(),
                fmt(r.distortion),
                fmt_opt(r.silhouette),
                fmt_opt(r.davies_bouldin),
                fmt(r.purity),
            ]
        });
        write_csv(
            &run.file("k_sweep.csv"),
            &strings(["k", "distortion", "silhouette", "davies_bouldin", "purity"]),
            rows,
        )?;
        run.record("k_sweep", "k_sweep.csv")?;

        for d in &explanation.effect_distributions {
            let file = format!("effects_{}.csv", d.action);
            let rows = (0..d.count()).map(|i| d.samples.iter().map(|s| fmt(s[i])).collect::<Vec<_>>());
            write_csv(&run.file(&file), &features, rows)?;
            run.record(&format!("effects_{}", d.action), &file)?;
        }
        let mut rows = Vec::new();
        for d in &explanation.effect_distributions {
            for (j, s) in d.samples.iter().enumerate() {
                let mut row = vec![actions[d.action].clone(), features[j].clone(), s.len().to_string()];
                match summary(s) {
                    Some(stats) => row.extend(stats.iter().map(|v| fmt(*v))),
                    None => row.extend(std::iter::repeat_n(String::new(), 7)),
                }
                rows.push(row);
            }
        }
        write_csv(
            &run.file("effect_summary.csv"),
            &strings(["action", "feature", "count", "mean", "std", "min", "q25", "median", "q75", "max"]),
            rows,
        )?;
        run.record("effect_summary", "effect_summary.csv")?;

        let c = &explanation.clusters;
        let sizes = c.cluster_sizes();
        let mut header_row = strings(["cluster", "size", "purity"]);
        header_row.extend(actions.iter().cloned());
        let rows = c.contingency.iter().enumerate().map(|(i, counts)| {
            let mut row = vec![i.to_string(), sizes[i].to_string(), fmt(c.metrics.purity[i])];
            row.extend(counts.iter().map(ToString::to_string));
            row
        });
        write_csv(&run.file("contingency.csv"), &header_row, rows)?;
        run.record("contingency", "contingency.csv")?;

        let mut header_row = vec!["cluster".to_string()];
        header_row.extend(centroid_labels(&features, &actions, global.full_matrix));
        let rows = c.centroids.iter().enumerate().map(|(i, centroid)| {
            let mut row = vec![i.to_string()];
            row.extend(centroid.iter().map(|v| fmt(*v)));
            row
        });
        write_csv(&run.file("centroids.csv"), &header_row, rows)?;
        run.record("centroids", "centroids.csv")?;

        let mut header_row = strings(["action", "clusters"]);
        header_row.extend(centroid_labels(&features, &actions, global.full_matrix));
        let rows = actions.iter().enumerate().map(|(a, name)| {
            let set: Vec<String> = c.cluster_sets[a].iter().map(ToString::to_string).collect();
            let mut row = vec![name.clone(), set.join(";")];
            match &c.importance[a] {
                Some(v) => row.extend(v.iter().map(|x| fmt(*x))),
                None => row.extend(std::iter::repeat_n(String::new(), c.centroids[0].len())),
            }
            row
        });
        write_csv(&run.file("importance.csv"), &header_row, rows)?;
        run.record("importance", "importance.csv")?;

        let rows = bias.iter().map(|(name, v)| vec![name.clone(), fmt(*v)]);
        write_csv(&run.file("bias.csv"), &strings(["action", "bias"]), rows)?;
        run.record("bias", "bias.csv")?;

        let effect_counts: Vec<usize> = explanation.effect_distributions.iter().map(|d| d.count()).collect();
        let effect_samples = effect_counts.iter().sum::<usize>();
        write_json(
            &run.file("global.json"),
            &GlobalSummary {
                n_records: explanation.n_records,
                effect_samples,
                effect_counts,
                k: c.k,
                tau: c.tau,
                cluster_sizes: sizes,
                metrics: &c.metrics,
                cluster_sets: &c.cluster_sets,
                importance: &c.importance,
                bias: &bias,
                k_sweep: &k_sweep,
            },
        )?;
        run.record("summary", "global.json")?;
        run.manifest.set_result("n_records", explanation.n_records)?;
        run.manifest.set_result("effect_samples", effect_samples)?;
        run.manifest.set_result("silhouette", c.metrics.silhouette)?;
        run.manifest.set_result("purity", c.metrics.overall_purity)?;
        Ok(GlobalOutcome {
            run_dir: run.path.clone(),
            explanation: GlobalExplanation { bias, ..explanation },
            k_sweep,
            effect_samples,
        })
    })
}

fn centroid_labels(features: &[String], actions: &[String], full_matrix: bool) -> Vec<String> {
    if full_matrix {
        actions
            .iter()
            .flat_map(|a| features.iter().map(move |f| format!("{a}:{f}")))
            .collect()
    } else {
        features.to_vec()
    }
}

/// Picks up to `count` records, preferring those that chose `action`.
fn pick(records: &[DecisionRecord], action: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let chosen: Vec<&DecisionRecord> = records.iter().filter(|r| r.action == action).collect();
    let pool: Vec<&DecisionRecord> = if chosen.is_empty() { records.iter().collect() } else { chosen };
    let take = count.min(pool.len());
    let mut idx = sample(rng, pool.len(), take).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].observation.clone()).collect()
}

fn mean_report(reports: &[AttributionReport]) -> anyhow::Result<AttributionReport> {
    let first = reports.first().context("no reports to average")?;
    let mut values = vec![0.0; first.values.len()];
    for r in reports {
        for (v, x) in values.iter_mut().zip(&r.values) {
            *v += x;
        }
    }
    values.iter_mut().for_each(|v| *v /= reports.len() as f64);
    Ok(AttributionReport::new(&first.method, first.action, values, first.baseline.clone())?)
}

/// Per-action attribution comparison: input x gradient, integrated gradients
/// and gradient SHAP averaged over sampled decisions, next to the clustering
/// importance vector when the action owns clusters.
pub fn attribution_table(
    cfg: &RunConfig,
    actor: &Actor,
    records: &[DecisionRecord],
) -> anyhow::Result<Vec<AttributionComparison>> {
    let a_cfg = &cfg.attribution;
    let mut rng = ChaCha8Rng::seed_from_u64(a_cfg.seed);
    let pool: Vec<Vec<f64>> = records.iter().map(|r| r.observation.clone()).collect();
    let sampler = BaselineSampler::Pool(pool);
    let shap = GradShapConfig {
        n_samples: a_cfg.shap_samples,
        noise_std: a_cfg.shap_noise,
        alpha: None,
        seed: a_cfg.seed,
    };
    let points = points_of(records, false);
    let labels: Vec<usize> = records.iter().map(|r| r.action).collect();
    let ex = &cfg.explain;
    let clusters = ClusterModel::fit(&points, &labels, actor.n_actions(), ex.k, ex.tau, ex.seed, 0)?;

    let mut out = Vec::new();
    for action in 0..actor.n_actions() {
        let xs = pick(records, action, a_cfg.records_per_action, &mut rng);
        let mut ixg = Vec::new();
        let mut ig = Vec::new();
        let mut gs = Vec::new();
        for x in &xs {
            ixg.push(input_x_gradient(actor, x, action)?);
            ig.push(integrated_gradients(actor, x, None, a_cfg.ig_steps, action)?);
            gs.push(gradient_shap(actor, x, &sampler, &shap, action)?);
        }
        let mut reports = vec![mean_report(&ixg)?, mean_report(&ig)?, mean_report(&gs)?];
        if let Some(v) = &clusters.importance[action] {
            reports.push(AttributionReport::new(METHOD_CLUSTER, action, v.clone(), "centroid mean")?);
        }
        out.push(attribution_compare(&reports)?);
    }
    Ok(out)
}

pub fn attrib_compare(
    cfg: &RunConfig,
    checkpoint: &Path,
    trace: &Path,
    out: &Path,
    run_id: Option<&str>,
) -> anyhow::Result<(PathBuf, Vec<AttributionComparison>)> {
    cfg.validate()?;
    let ck = load_for(cfg, checkpoint)?;
    let mut run = RunDir::create(out, "attrib-compare", run_id, cfg)?;
    run.input("checkpoint", checkpoint)?;
    run.input("trace", trace)?;
    run.manifest.add_seed("attribution", cfg.attribution.seed)?;
    run.manifest.add_seed("kmeans", cfg.explain.seed)?;
    run.finish(|run| {
        let (_, records) = load_trace(trace, Some(&ck))?;
        let table = attribution_table(cfg, &ck.actor, &records)?;
        let (features, actions) = labels(cfg);
        for cmp in &table {
            let file = format!("attribution_{}.csv", cmp.action);
            let mut header = vec!["feature".to_string()];
            header.extend(cmp.methods.iter().cloned());
            let rows = cmp.table.iter().enumerate().map(|(j, vals)| {
                let mut row = vec![features[j].clone()];
                row.extend(vals.iter().map(|v| fmt(*v)));
                row
            });
            write_csv(&run.file(&file), &header, rows)?;
            run.record(&format!("attribution_{}", cmp.action), &file)?;
        }
        let rows = table.iter().flat_map(|cmp| {
            cmp.pairs.iter().map(|p| {
                vec![
                    actions[cmp.action].clone(),
                    p.first.clone(),
                    p.second.clone(),
                    fmt(p.sign_agreement),
                    fmt(p.rank_correlation),
                ]
            })
        });
        write_csv(
            &run.file("agreement.csv"),
            &strings(["action", "first", "second", "sign_agreement", "rank_correlation"]),
            rows,
        )?;
        run.record("agreement", "agreement.csv")?;
        write_json(&run.file("attribution.json"), &table)?;
        run.record("summary", "attribution.json")?;
        run.manifest.set_result("actions", table.len())?;
        Ok((run.path.clone(), table))
    })
}
