use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use selfex::env::SimConfig;
use selfex::explain::{bias_report, local_explanation, DecisionRecord};
use selfex::ppo::{Critic, MetricsRecord, TrainStats};
use selfex::senn::{Actor, ActorKind, PolicyModel, BIAS_NAME};
use selfex::store::{
    fingerprint, load_checkpoint, read_metrics, read_trace, save_checkpoint, MetricsWriter, RunManifest, TraceFilter,
    TraceHeader, TraceWriter,
};
use selfex::Error;
use selfex_autodiff::Tensor;

fn models(kind: ActorKind, seed: u64) -> (Actor, Critic) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut actor = Actor::new(kind, 13, 4, &[32, 32], &mut rng).unwrap();
    for (_, t) in actor.params_mut().iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let critic = Critic::new(13, &[32, 32], &mut rng).unwrap();
    (actor, critic)
}

fn inputs(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| (0..13).map(|_| rng.random::<f64>()).collect()).collect()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ActorKind::Senn, ActorKind::SennNobias, ActorKind::Dnn] {
        let (actor, critic) = models(kind, 1);
        let path = dir.path().join(format!("{kind}.json"));
        let fp = save_checkpoint(&path, &actor, Some(&critic), "sim").unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.fingerprint, fp);
        assert_eq!(ck.sim_fingerprint, "sim");
        assert_eq!(ck.actor.kind(), kind);
        let loaded_critic = ck.critic.unwrap();
        for x in inputs(100, 2) {
            let a = actor.logits_one(&x).unwrap();
            let b = ck.actor.logits_one(&x).unwrap();
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            let xs = Tensor::row(x.clone()).unwrap();
            assert_eq!(critic.values(&xs).unwrap(), loaded_critic.values(&xs).unwrap());
        }
    }
}

#[test]
fn bias_report_matches_stored_bias() {
    let dir = tempfile::tempdir().unwrap();
    let (actor, _) = models(ActorKind::Senn, 3);
    let path = dir.path().join("a.json");
    save_checkpoint(&path, &actor, None, "sim").unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert!(ck.critic.is_none());
    let stored = ck.actor.params().get(BIAS_NAME).unwrap().data().to_vec();
    let report: Vec<f64> = bias_report(ck.actor.as_senn().unwrap()).into_iter().map(|(_, v)| v).collect();
    assert_eq!(report, stored);
}

#[test]
fn checkpoint_failures_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let (actor, critic) = models(ActorKind::Senn, 4);
    let path = dir.path().join("c.json");
    save_checkpoint(&path, &actor, Some(&critic), "sim").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();

    let truncated = dir.path().join("t.json");
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(matches!(load_checkpoint(&truncated), Err(Error::Corrupt { .. })));

    let versioned = dir.path().join("v.json");
    std::fs::write(&versioned, text.replacen("\"version\":1", "\"version\":99", 1)).unwrap();
    assert!(matches!(load_checkpoint(&versioned), Err(Error::VersionMismatch { .. })));

    let resized = dir.path().join("d.json");
    std::fs::write(&resized, text.replacen("\"actor_hidden\":[32,32]", "\"actor_hidden\":[32,16]", 1)).unwrap();
    assert!(matches!(load_checkpoint(&resized), Err(Error::DimensionMismatch(_))));
}

#[test]
fn fingerprint_tracks_every_bit() {
    let (actor, critic) = models(ActorKind::Senn, 5);
    let base = fingerprint(&actor, Some(&critic));
    assert_eq!(base, fingerprint(&actor.clone(), Some(&critic.clone())));
    let names: Vec<String> = actor.params().names().map(String::from).collect();
    for name in names {
        let mut changed = actor.clone();
        let v = &mut changed.params_mut().get_mut(&name).unwrap().data_mut()[0];
        *v = f64::from_bits(v.to_bits() ^ 1);
        assert_ne!(fingerprint(&changed, Some(&critic)), base, "{name}");
    }
}

fn records(count: usize) -> Vec<DecisionRecord> {
    let (actor, _) = models(ActorKind::Senn, 6);
    let policy = actor.as_senn().unwrap();
    inputs(64, 7)
        .iter()
        .cycle()
        .take(count)
        .enumerate()
        .map(|(i, x)| {
            let mut r = local_explanation(policy, x).unwrap();
            r.episode = i / 300;
            r.step = (i / 3) % 100;
            r.ue = i % 3;
            r.action = i % 4;
            r
        })
        .collect()
}

#[test]
fn trace_of_36000_records_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.jsonl");
    let recs = records(36_000);
    let mut w = TraceWriter::create(&path, TraceHeader::new(13, 4, "fp")).unwrap();
    w.append_all(&recs).unwrap();
    assert_eq!(w.finish().unwrap(), 36_000);

    let (header, back) = read_trace(&path, TraceFilter::default()).unwrap();
    assert_eq!(header, TraceHeader::new(13, 4, "fp"));
    assert_eq!(back.len(), 36_000);
    assert_eq!(back, recs);

    let (_, only2) = read_trace(&path, TraceFilter { action: Some(2), episode: None }).unwrap();
    assert_eq!(only2, recs.iter().filter(|r| r.action == 2).cloned().collect::<Vec<_>>());
    let (_, ep) = read_trace(&path, TraceFilter { action: None, episode: Some(7) }).unwrap();
    assert_eq!(ep.len(), 300);
    assert!(header.check_fingerprint("fp"));
    assert!(!header.check_fingerprint("other"));
}

#[test]
fn trace_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.jsonl");
    TraceWriter::create(&path, TraceHeader::new(13, 4, "fp")).unwrap().finish().unwrap();
    assert!(read_trace(&path, TraceFilter::default()).unwrap().1.is_empty());

    let mut w = TraceWriter::append_to(&path).unwrap();
    let mut bad = records(1).remove(0);
    bad.observation.pop();
    assert!(matches!(w.append(&bad), Err(Error::DimensionMismatch(_))));
    w.append(&records(1)[0]).unwrap();
    w.finish().unwrap();
    assert_eq!(read_trace(&path, TraceFilter::default()).unwrap().1.len(), 1);

    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, &text[..text.len() - 40]).unwrap();
    assert!(matches!(read_trace(&path, TraceFilter::default()), Err(Error::Corrupt { .. })));
}

#[test]
fn manifest_seals_once_with_existing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new("run-1", "train", SimConfig::default());
    m.add_seed("train", 3).unwrap();
    m.add_artifact("checkpoint", "model.json").unwrap();
    assert!(m.seal(dir.path()).is_err());
    std::fs::write(dir.path().join("model.json"), "{}").unwrap();
    m.set_result("eval_mean", 1.5).unwrap();
    m.seal(dir.path()).unwrap();
    assert!(m.add_seed("x", 1).is_err());
    let back = RunManifest::load(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(back, m);
}

#[test]
fn metrics_stream_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.jsonl");
    let recs: Vec<MetricsRecord> = (0..5)
        .map(|i| MetricsRecord {
            step: i * 1024,
            update: i,
            episodes: 2,
            return_mean: Some(0.1 * i as f64),
            return_std: None,
            stats: TrainStats { surrogate: -0.01, robustness: 0.3, ..Default::default() },
            eval_return: None,
        })
        .collect();
    let mut w = MetricsWriter::create(&path).unwrap();
    for r in &recs {
        w.write(r).unwrap();
    }
    assert_eq!(read_metrics(&path).unwrap(), recs);
}
