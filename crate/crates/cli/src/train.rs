use std::path::{Path, PathBuf};

use selfex::ppo::Trainer;
use selfex::store::{save_checkpoint, MetricsWriter};

use crate::config::RunConfig;
use crate::run::RunDir;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub checkpoint: PathBuf,
    pub fingerprint: String,
    pub updates: usize,
    pub last_eval_return: Option<f64>,
}

pub fn train(cfg: &RunConfig, out: &Path, run_id: Option<&str>) -> anyhow::Result<TrainOutcome> {
    cfg.validate()?;
    let mut run = RunDir::create(out, "train", run_id, cfg)?;
    run.manifest.set_ppo(cfg.ppo.clone())?;
    run.manifest.add_seed("train", cfg.ppo.seed)?;
    let run_dir = run.path.clone();
    run.finish(|run| {
        let mut trainer = Trainer::new(cfg.ppo.clone(), cfg.sim.clone())?;
        let metrics_path = run.record("metrics", METRICS_FILE)?;
        let mut metrics = MetricsWriter::create(&metrics_path)?;
        let mut updates = 0;
        let mut last_eval_return = None;
        trainer.run(|record| {
            updates = record.update;
            if record.eval_return.is_some() {
                last_eval_return = record.eval_return;
            }
            metrics.write(record)
        })?;
        drop(metrics);

        let (actor, critic) = trainer.into_models();
        let checkpoint = run.file(CHECKPOINT_FILE);
        let fingerprint = save_checkpoint(&checkpoint, &actor, Some(&critic), &cfg.sim.fingerprint())?;
        run.record("checkpoint", CHECKPOINT_FILE)?;
        run.manifest.set_result("fingerprint", &fingerprint)?;
        run.manifest.set_result("updates", updates)?;
        run.manifest.set_result("last_eval_return", last_eval_return)?;
        Ok(TrainOutcome {
            run_dir: run_dir.clone(),
            checkpoint,
            fingerprint,
            updates,
            last_eval_return,
        })
    })
}

