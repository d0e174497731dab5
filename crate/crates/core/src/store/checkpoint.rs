use std::path::Path;

use selfex_autodiff::{ParameterSet, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ppo::Critic;
use crate::senn::{Actor, ActorKind, DnnPolicy, PolicyModel, SennPolicy};

use super::{corrupt, write_atomic};

pub const CHECKPOINT_FORMAT: &str = "selfex-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    actor_kind: ActorKind,
    n: usize,
    m: usize,
    actor_hidden: Vec<usize>,
    actor: ParameterSet,
    critic_hidden: Option<Vec<usize>>,
    critic: Option<ParameterSet>,
    sim_fingerprint: String,
    fingerprint: String,
}

/// A loaded model. The critic is optional so that inference-only exports
/// stay small.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub actor: Actor,
    pub critic: Option<Critic>,
    pub sim_fingerprint: String,
    pub fingerprint: String,
}

fn hash_params(h: &mut Sha256, params: &ParameterSet) {
    for (name, t) in params.iter() {
        h.update(name.as_bytes());
        h.update([0]);
        for d in t.shape() {
            h.update((*d as u64).to_le_bytes());
        }
        for v in t.data() {
            h.update(v.to_bits().to_le_bytes());
        }
    }
}

/// SHA-256 over parameter names, shapes and raw bits.
pub fn fingerprint(actor: &Actor, critic: Option<&Critic>) -> String {
    let mut h = Sha256::new();
    h.update(actor.kind().to_string().as_bytes());
    hash_params(&mut h, actor.params());
    if let Some(c) = critic {
        h.update(b"critic");
        hash_params(&mut h, c.params());
    }
    hex::encode(h.finalize())
}

pub fn save_checkpoint(path: &Path, actor: &Actor, critic: Option<&Critic>, sim_fingerprint: &str) -> Result<String> {
    let fp = fingerprint(actor, critic);
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        actor_kind: actor.kind(),
        n: actor.obs_dim(),
        m: actor.n_actions(),
        actor_hidden: actor.hidden_sizes(),
        actor: actor.params().clone(),
        critic_hidden: critic.map(Critic::hidden_sizes),
        critic: critic.map(|c| c.params().clone()),
        sim_fingerprint: sim_fingerprint.into(),
        fingerprint: fp.clone(),
    };
    write_atomic(path, &serde_json::to_vec(&file)?)?;
    Ok(fp)
}

fn revalidate(path: &Path, params: &ParameterSet) -> Result<()> {
    for (name, t) in params.iter() {
        Tensor::new(t.shape().to_vec(), t.data().to_vec())
            .map_err(|e| corrupt(path, format!("parameter {name}: {e}")))?;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes).map_err(|e| corrupt(path, e))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
        other => {
            return Err(Error::VersionMismatch {
                found: other.map_or_else(|| "missing".into(), |v| v.to_string()),
                expected: CHECKPOINT_VERSION,
            })
        }
    }
    let file: CheckpointFile = serde_json::from_value(value).map_err(|e| corrupt(path, e))?;
    revalidate(path, &file.actor)?;
    let actor = match file.actor_kind {
        ActorKind::Senn | ActorKind::SennNobias => Actor::Senn(SennPolicy::from_params(
            file.n,
            file.m,
            &file.actor_hidden,
            file.actor_kind == ActorKind::Senn,
            file.actor,
        )?),
        ActorKind::Dnn => Actor::Dnn(DnnPolicy::from_params(file.n, file.m, &file.actor_hidden, file.actor)?),
    };
    let critic = match (file.critic_hidden, file.critic) {
        (Some(h), Some(p)) => {
            revalidate(path, &p)?;
            Some(Critic::from_params(file.n, &h, p)?)
        }
        (None, None) => None,
        _ => return Err(corrupt(path, "critic layout and parameters must appear together")),
    };
    let fp = fingerprint(&actor, critic.as_ref());
    if fp != file.fingerprint {
        return Err(corrupt(path, "stored fingerprint does not match the parameters"));
    }
    Ok(Checkpoint {
        actor,
        critic,
        sim_fingerprint: file.sim_fingerprint,
        fingerprint: fp,
    })
}
