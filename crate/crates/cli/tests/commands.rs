use std::path::Path;
use std::process::Command;

use selfex::store::{RunManifest, MANIFEST_FILE};
use selfex::Error;
use selfex_cli::{
    attrib_compare, eval, explain_global, explain_local, lipschitz, rerun_eval, sweep_lambda, train, LocalInput,
    RunConfig,
};

fn small() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.ppo.total_timesteps = 1024;
    cfg.ppo.n_envs = 2;
    cfg.ppo.horizon = 128;
    cfg.ppo.epochs = 2;
    cfg.ppo.actor_hidden = vec![16, 16];
    cfg.ppo.critic_hidden = vec![16];
    cfg.ppo.eval_interval = 512;
    cfg.ppo.eval_steps = 200;
    cfg.eval.steps = 400;
    cfg.eval.trace_steps = 150;
    cfg.explain.k = 4;
    cfg.explain.k_min = 3;
    cfg.explain.k_max = 5;
    cfg.lipschitz.anchors = 20;
    cfg.lipschitz.iterations = 5;
    cfg.attribution.records_per_action = 3;
    cfg.attribution.shap_samples = 16;
    cfg.attribution.ig_steps = 16;
    cfg
}

fn sealed(dir: &Path) -> RunManifest {
    let m = RunManifest::load(&dir.join(MANIFEST_FILE)).unwrap();
    assert!(m.is_sealed());
    for rel in m.artifacts.values() {
        assert!(dir.join(rel).exists(), "{rel}");
    }
    m
}

#[test]
fn full_pipeline_writes_sealed_manifests() {
    let out = tempfile::tempdir().unwrap();
    let out = out.path();
    let cfg = small();
    let t = train(&cfg, out, Some("train")).unwrap();
    let m = sealed(&t.run_dir);
    assert_eq!(m.command, "train");
    assert_eq!(m.seeds["train"], 0);
    assert!(m.artifacts.contains_key("checkpoint") && m.artifacts.contains_key("metrics"));
    assert!(t.last_eval_return.is_some());

    let e = eval(&cfg, &t.checkpoint, out, Some("eval")).unwrap();
    sealed(&e.run_dir);
    assert_eq!(e.report.trace_records, 150 * cfg.sim.n_ue);
    assert_eq!(e.report.policy.episode_returns.len(), 4);
    assert_eq!(e.report.heuristic.episode_returns.len(), 4);
    let trace = e.trace.clone().unwrap();

    let again = rerun_eval(&e.run_dir.join(MANIFEST_FILE), out, Some("rerun")).unwrap();
    assert!(again.identical);
    assert_eq!(
        std::fs::read(trace.as_path()).unwrap(),
        std::fs::read(again.outcome.trace.unwrap()).unwrap()
    );

    let (dir, rec) = explain_local(
        &cfg,
        &t.checkpoint,
        &LocalInput::TraceRecord {
            trace: trace.clone(),
            index: 7,
        },
        out,
        None,
    )
    .unwrap();
    sealed(&dir);
    assert!(rec.decomposition_error() < 1e-10);

    let g = explain_global(&cfg, &trace, Some(&t.checkpoint), out, None).unwrap();
    sealed(&g.run_dir);
    assert_eq!(g.k_sweep.iter().map(|r| r.k).collect::<Vec<_>>(), vec![3, 4, 5]);
    assert_eq!(g.explanation.clusters.k, 4);
    assert_eq!(g.effect_samples, 150 * cfg.sim.n_ue);
    let contingency = std::fs::read_to_string(g.run_dir.join("contingency.csv")).unwrap();
    assert!(contingency.starts_with("cluster,size,purity,"));
    assert_eq!(contingency.lines().count(), 5);

    let (dir, est) = lipschitz(&cfg, &t.checkpoint, &trace, out, None).unwrap();
    sealed(&dir);
    assert_eq!(est.anchors, 20);

    let (dir, table) = attrib_compare(&cfg, &t.checkpoint, &trace, out, None).unwrap();
    sealed(&dir);
    assert_eq!(table.len(), cfg.sim.n_actions());

    // Explanations never touch the checkpoint.
    let before = std::fs::read(&t.checkpoint).unwrap();
    explain_global(&cfg, &trace, Some(&t.checkpoint), out, None).unwrap();
    assert_eq!(std::fs::read(&t.checkpoint).unwrap(), before);
}

#[test]
fn training_is_reproducible_from_config() {
    let out = tempfile::tempdir().unwrap();
    let cfg = small();
    let a = train(&cfg, out.path(), Some("a")).unwrap();
    let b = train(&cfg, out.path(), Some("b")).unwrap();
    assert_eq!(a.fingerprint, b.fingerprint);
    assert_eq!(
        std::fs::read(a.run_dir.join("metrics.jsonl")).unwrap(),
        std::fs::read(b.run_dir.join("metrics.jsonl")).unwrap()
    );
    assert!(train(&cfg, out.path(), Some("a")).is_err(), "run ids are never reused");
}

#[test]
fn mismatched_simulator_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let cfg = small();
    let t = train(&cfg, out.path(), None).unwrap();
    let mut other = cfg.clone();
    other.sim.ue_speed += 1.0;
    let err = eval(&other, &t.checkpoint, out.path(), None).unwrap_err();
    assert!(matches!(err.downcast_ref::<Error>(), Some(Error::FingerprintMismatch(_))));
}

#[test]
fn trace_from_another_model_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let cfg = small();
    let first = train(&cfg, out.path(), Some("first")).unwrap();
    let mut reseeded = cfg.clone();
    reseeded.ppo.seed = 9;
    let second = train(&reseeded, out.path(), Some("second")).unwrap();
    let e = eval(&cfg, &first.checkpoint, out.path(), None).unwrap();
    let err = explain_global(&cfg, &e.trace.unwrap(), Some(&second.checkpoint), out.path(), None).unwrap_err();
    assert!(matches!(err.downcast_ref::<Error>(), Some(Error::FingerprintMismatch(_))));
}

#[test]
fn dnn_actors_evaluate_without_trace() {
    let out = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.ppo.actor = selfex::senn::ActorKind::Dnn;
    let t = train(&cfg, out.path(), None).unwrap();
    let e = eval(&cfg, &t.checkpoint, out.path(), None).unwrap();
    assert!(e.trace.is_none());
    assert_eq!(e.report.trace_records, 0);
    assert!(explain_local(&cfg, &t.checkpoint, &LocalInput::Observation(vec![0.5; 13]), out.path(), None).is_err());
}

#[test]
fn sweep_records_failed_cells_and_continues() {
    let out = tempfile::tempdir().unwrap();
    let cfg = small();
    let s = sweep_lambda(&cfg, &[0.0, -1.0, 0.1], &[1], out.path(), Some("sweep")).unwrap();
    assert_eq!(s.cells.len(), 3);
    assert_eq!(s.failures(), 1);
    assert!(s.cell(-1.0, 1).unwrap().error.is_some());
    assert!(s.cell(0.1, 1).unwrap().lipschitz_mean.is_some());
    let m = sealed(&s.run_dir);
    assert_eq!(m.results["failures"], 1);
    let csv = std::fs::read_to_string(s.run_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(sweep_lambda(&cfg, &[0.0], &[1], out.path(), None).is_err());
}

#[test]
fn binary_reports_failure_through_exit_code() {
    let out = tempfile::tempdir().unwrap();
    let cfg_path = out.path().join("small.toml");
    std::fs::write(&cfg_path, small().to_toml().unwrap()).unwrap();
    let bin = env!("CARGO_BIN_EXE_selfex");

    let ok = Command::new(bin)
        .args(["--config", cfg_path.to_str().unwrap(), "--out", out.path().to_str().unwrap()])
        .args(["train", "--run-id", "t", "--lambda", "0.01", "--seed", "4"])
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let m = sealed(&out.path().join("t"));
    assert_eq!(m.ppo.unwrap().robustness_lambda, 0.01);
    assert_eq!(m.seeds["train"], 4);

    let missing = Command::new(bin)
        .args(["--out", out.path().to_str().unwrap(), "eval", "--checkpoint", "/nonexistent.json"])
        .output()
        .unwrap();
    assert!(!missing.status.success());

    let help = Command::new(bin).args(["sweep-lambda", "--help"]).output().unwrap();
    assert!(String::from_utf8_lossy(&help.stdout).contains("--lambdas"));

    std::fs::write(&cfg_path, "[ppo]\nno_such_key = 1\n").unwrap();
    let bad = Command::new(bin)
        .args(["--config", cfg_path.to_str().unwrap(), "--out", out.path().to_str().unwrap(), "train"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small();
    let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    let partial: RunConfig = toml::from_str("[eval]\nsteps = 10\n").unwrap();
    assert_eq!(partial.eval.steps, 10);
    assert_eq!(partial.explain.k, 14);
    assert_eq!(partial.explain.tau, 0.6);
    assert_eq!(partial.lipschitz.anchors, 800);
}
