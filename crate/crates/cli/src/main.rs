use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use selfex::senn::ActorKind;
use selfex_cli::{LocalInput, RunConfig};

/// Self-explaining PPO agents for a mobile-network cell-selection simulator.
///
/// Every command writes into `<out>/<run-id>/` and seals a `manifest.json`
/// describing configuration, seeds, inputs and artifacts. Configuration is a
/// TOML file with the tables [sim], [ppo], [eval], [explain], [lipschitz] and
/// [attribution]; omitted keys take their defaults. Flags override the file.
#[derive(Debug, Parser)]
#[command(name = "selfex", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// TOML configuration file.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Parent directory for run directories.
    #[arg(long, short, global = true, default_value = "runs")]
    out: PathBuf,
    /// Name of the run directory; derived from the command and clock if absent.
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Seed of the command's randomized step (training, evaluation, k-means,
    /// anchor sampling or attribution sampling).
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an actor-critic pair with PPO.
    Train {
        /// senn, senn-nobias or dnn.
        #[arg(long)]
        actor: Option<ActorKind>,
        /// Robustness-loss factor λ.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        timesteps: Option<usize>,
    },
    /// Greedy evaluation against the heuristic baseline on identical seeds,
    /// writing the decision trace for SENN actors.
    Eval {
        #[arg(long, required_unless_present = "from_manifest")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        /// Repeat an earlier evaluation from its manifest.
        #[arg(long, conflicts_with_all = ["checkpoint", "steps"])]
        from_manifest: Option<PathBuf>,
    },
    /// Relevance, effects and logits for one observation.
    ExplainLocal {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated feature vector.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required_unless_present = "trace")]
        obs: Option<Vec<f64>>,
        /// Take the observation from this trace...
        #[arg(long, requires = "index", conflicts_with = "obs")]
        trace: Option<PathBuf>,
        /// ...at this record index.
        #[arg(long)]
        index: Option<usize>,
    },
    /// Effect distributions, k-means sweep, cluster sets, importance vectors
    /// and bias report from an evaluation trace.
    ExplainGlobal {
        #[arg(long)]
        trace: PathBuf,
        /// Checkpoint that produced the trace; enables the consistency check.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Local Lipschitz estimate around anchors sampled from a trace.
    Lipschitz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        anchors: Option<usize>,
    },
    /// Compare post-hoc attributions with the clustering importance, per action.
    AttribCompare {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trace: PathBuf,
    },
    /// Train, evaluate and estimate stability over a grid of λ and seeds.
    SweepLambda {
        #[arg(long, value_delimiter = ',', default_value = "0,0.001,0.01,0.1")]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
    },
}

fn load_config(shared: &Shared) -> anyhow::Result<RunConfig> {
    match &shared.config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut cfg = load_config(&cli.shared)?;
    let out = cli.shared.out.as_path();
    let id = cli.shared.run_id.as_deref();
    let seed = cli.shared.seed;
    match cli.command {
        Command::Train {
            actor,
            lambda,
            timesteps,
        } => {
            if let Some(a) = actor {
                cfg.ppo.actor = a;
            }
            if let Some(l) = lambda {
                cfg.ppo.robustness_lambda = l;
            }
            if let Some(t) = timesteps {
                cfg.ppo.total_timesteps = t;
            }
            if let Some(s) = seed {
                cfg.ppo.seed = s;
            }
            let t = selfex_cli::train(&cfg, out, id)?;
            println!("run {}", t.run_dir.display());
            println!("checkpoint {}", t.checkpoint.display());
            println!("fingerprint {}", t.fingerprint);
            if let Some(r) = t.last_eval_return {
                println!("last evaluation return {r:.3}");
            }
        }
        Command::Eval {
            checkpoint,
            steps,
            from_manifest,
        } => {
            if let Some(manifest) = from_manifest {
                let r = selfex_cli::rerun_eval(&manifest, out, id)?;
                print_eval(&r.outcome);
                println!(
                    "original policy {:.3} heuristic {:.3}",
                    r.original.policy.mean, r.original.heuristic.mean
                );
                println!("reproduced {}", if r.identical { "identical" } else { "DIFFERENT" });
                return Ok(r.identical);
            }
            if let Some(s) = steps {
                cfg.eval.steps = s;
            }
            if let Some(s) = seed {
                cfg.eval.seed = s;
            }
            let checkpoint = checkpoint.context("--checkpoint is required")?;
            print_eval(&selfex_cli::eval(&cfg, &checkpoint, out, id)?);
        }
        Command::ExplainLocal {
            checkpoint,
            obs,
            trace,
            index,
        } => {
            let input = match (obs, trace, index) {
                (Some(x), _, _) => LocalInput::Observation(x),
                (None, Some(trace), Some(index)) => LocalInput::TraceRecord { trace, index },
                _ => anyhow::bail!("give either --obs or --trace with --index"),
            };
            let (dir, r) = selfex_cli::explain_local(&cfg, &checkpoint, &input, out, id)?;
            println!("run {}", dir.display());
            println!("action {} logits {:?}", r.action, r.logits);
            println!("decomposition error {:e}", r.decomposition_error());
        }
        Command::ExplainGlobal {
            trace,
            checkpoint,
            k,
            k_min,
            k_max,
            tau,
        } => {
            let e = &mut cfg.explain;
            e.k = k.unwrap_or(e.k);
            e.k_min = k_min.unwrap_or(e.k_min);
            e.k_max = k_max.unwrap_or(e.k_max);
            e.tau = tau.unwrap_or(e.tau);
            e.seed = seed.unwrap_or(e.seed);
            let g = selfex_cli::explain_global(&cfg, &trace, checkpoint.as_deref(), out, id)?;
            println!("run {}", g.run_dir.display());
            println!("records {} effect samples {}", g.explanation.n_records, g.effect_samples);
            println!("k\tsilhouette\tdavies_bouldin\tpurity");
            for r in &g.k_sweep {
                println!(
                    "{}\t{}\t{}\t{:.4}",
                    r.k,
                    r.silhouette.map_or("-".into(), |v| format!("{v:.4}")),
                    r.davies_bouldin.map_or("-".into(), |v| format!("{v:.4}")),
                    r.purity
                );
            }
            for (a, set) in g.explanation.clusters.cluster_sets.iter().enumerate() {
                println!("C({a}) = {set:?}");
            }
        }
        Command::Lipschitz {
            checkpoint,
            trace,
            anchors,
        } => {
            cfg.lipschitz.anchors = anchors.unwrap_or(cfg.lipschitz.anchors);
            cfg.lipschitz.seed = seed.unwrap_or(cfg.lipschitz.seed);
            let (dir, est) = selfex_cli::lipschitz(&cfg, &checkpoint, &trace, out, id)?;
            println!("run {}", dir.display());
            println!("lipschitz mean {:.4} std {:.4} max {:.4} over {} anchors", est.mean, est.std, est.max, est.anchors);
        }
        Command::AttribCompare { checkpoint, trace } => {
            cfg.attribution.seed = seed.unwrap_or(cfg.attribution.seed);
            let (dir, table) = selfex_cli::attrib_compare(&cfg, &checkpoint, &trace, out, id)?;
            println!("run {}", dir.display());
            for cmp in &table {
                for p in &cmp.pairs {
                    println!(
                        "action {} {} vs {}: sign {:.3} rank {:.3}",
                        cmp.action, p.first, p.second, p.sign_agreement, p.rank_correlation
                    );
                }
            }
        }
        Command::SweepLambda { lambdas, seeds } => {
            let s = selfex_cli::sweep_lambda(&cfg, &lambdas, &seeds, out, id)?;
            println!("run {}", s.run_dir.display());
            println!("heuristic {:.3}", s.heuristic.mean);
            println!("lambda\tcompleted\treturn\tseed_std\tlipschitz\tseed_std");
            let show = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
            for r in &s.summary {
                println!(
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    r.lambda,
                    r.completed,
                    show(r.return_mean),
                    show(r.return_seed_std),
                    show(r.lipschitz_mean),
                    show(r.lipschitz_seed_std)
                );
            }
            if s.failures() > 0 {
                eprintln!("{} cell(s) failed; see sweep.csv", s.failures());
                return Ok(false);
            }
        }
    }
    Ok(true)
}

fn print_eval(o: &selfex_cli::EvalOutcome) {
    let r = &o.report;
    println!("run {}", o.run_dir.display());
    println!(
        "policy {:.3} ± {:.3} heuristic {:.3} ± {:.3} over {} episodes",
        r.policy.mean,
        r.policy.std,
        r.heuristic.mean,
        r.heuristic.std,
        r.policy.episode_returns.len()
    );
    if let Some(t) = &o.trace {
        println!("trace {} ({} records)", t.display(), r.trace_records);
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
