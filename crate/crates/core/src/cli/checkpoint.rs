//! Binary checkpoint format with a named-tensor directory.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic        8 bytes "SOCOCKPT"
//! version      u32     1
//! tensor_count u32
//! directory    per tensor: name_len u32, name bytes,
//!              ndim u32, dims u64 * ndim, offset u64 (into data section)
//! data_len     u64
//! data         f64 little-endian blobs
//! trailer_len  u32
//! trailer      UTF-8 JSON (config snapshot, step count, solo parameter hash)
//! ```
//!
//! Round trips are bit-exact. For cooperative checkpoints the trailer records
//! the hash of the frozen solo parameters; the loader recomputes and verifies
//! it, so a violated freezing contract refuses to load.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::demos::{mlp_param_hash, write_atomic, SoloPolicy};
use crate::envs::ParticleConfig;
use crate::error::{Result, SocoError};
use crate::fusion::{ActionEditor, FusedPolicy, GatingMode, GatingSelector};
use crate::marl::{Agent, FusionParams};
use crate::numerics::{AdamState, Mlp, OutputActivation, Tensor};

pub const CKPT_MAGIC: &[u8; 8] = b"SOCOCKPT";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointTrailer {
    /// One of `solo-expert`, `solo-bc`, `vanilla`, `soco`.
    pub kind: String,
    pub step: u64,
    /// Snapshot of the run configuration that produced this checkpoint.
    pub config: serde_json::Value,
    /// Hash of the frozen solo parameters, when the checkpoint carries any.
    pub solo_hash: Option<String>,
}

impl CheckpointTrailer {
    /// Parses the embedded configuration snapshot.
    pub fn run_config(&self) -> Result<crate::cli::config::RunConfig> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| SocoError::Config(format!("checkpoint config snapshot: {e}")))
    }
}

pub fn save_checkpoint(
    path: &Path,
    tensors: &[(String, Tensor)],
    trailer: &CheckpointTrailer,
) -> Result<()> {
    let mut dir: Vec<u8> = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    for (name, t) in tensors {
        let offset = data.len() as u64;
        dir.extend_from_slice(&(name.len() as u32).to_le_bytes());
        dir.extend_from_slice(name.as_bytes());
        dir.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            dir.extend_from_slice(&(d as u64).to_le_bytes());
        }
        dir.extend_from_slice(&offset.to_le_bytes());
        data.extend_from_slice(&t.to_le_bytes());
    }
    let trailer_bytes = serde_json::to_vec(trailer)
        .map_err(|e| SocoError::Invalid(format!("trailer serialization: {e}")))?;

    let mut buf = Vec::with_capacity(24 + dir.len() + data.len() + trailer_bytes.len());
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    buf.extend_from_slice(&dir);
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    buf.extend_from_slice(&data);
    buf.extend_from_slice(&(trailer_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&trailer_bytes);
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<(BTreeMap<String, Tensor>, CheckpointTrailer)> {
    if !path.exists() {
        return Err(SocoError::MissingInput {
            path: path.to_path_buf(),
        });
    }
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| SocoError::io("open checkpoint", e))?
        .read_to_end(&mut buf)
        .map_err(|e| SocoError::io("read checkpoint", e))?;
    let bad = |reason: &str| SocoError::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > buf.len() {
            return Err(bad("truncated"));
        }
        let s = &buf[*off..*off + n];
        *off += n;
        Ok(s)
    };

    if take(&mut off, 8)? != CKPT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;

    struct Entry {
        name: String,
        shape: Vec<usize>,
        offset: u64,
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| bad("tensor name is not UTF-8"))?;
        let ndim = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize);
        }
        let offset = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
        entries.push(Entry {
            name,
            shape,
            offset,
        });
    }

    let data_len = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
    let data = take(&mut off, data_len)?;

    let mut tensors = BTreeMap::new();
    for e in &entries {
        let n: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * n;
        if end > data.len() {
            return Err(bad(&format!("tensor {} overruns data section", e.name)));
        }
        let mut vals = Vec::with_capacity(n);
        for i in 0..n {
            let b: [u8; 8] = data[start + 8 * i..start + 8 * i + 8].try_into().unwrap();
            vals.push(f64::from_le_bytes(b));
        }
        let t = Tensor::from_vec(&e.shape, vals)?;
        if tensors.insert(e.name.clone(), t).is_some() {
            return Err(bad(&format!("duplicate tensor name {}", e.name)));
        }
    }

    let trailer_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
    let trailer_bytes = take(&mut off, trailer_len)?;
    if off != buf.len() {
        return Err(bad("trailing bytes"));
    }
    let trailer: CheckpointTrailer =
        serde_json::from_slice(trailer_bytes).map_err(|_| bad("trailer is not valid JSON"))?;

    // Freezing contract: recompute the solo hash when the file claims one.
    if let Some(expected) = &trailer.solo_hash {
        let solo = mlp_from_map(&tensors, "solo", OutputActivation::Tanh)?;
        let actual = mlp_param_hash(&solo);
        if &actual != expected {
            return Err(SocoError::FrozenHashMismatch {
                expected: expected.clone(),
                actual,
            });
        }
    }
    Ok((tensors, trailer))
}

pub fn mlp_from_map(
    map: &BTreeMap<String, Tensor>,
    prefix: &str,
    out_act: OutputActivation,
) -> Result<Mlp> {
    Mlp::from_named_tensors(prefix, out_act, &|k| map.get(k).cloned())
}

/// Loads a frozen solo policy from a behavior-cloning checkpoint.
pub fn load_solo_policy(path: &Path) -> Result<(SoloPolicy, CheckpointTrailer)> {
    let (tensors, trailer) = load_checkpoint(path)?;
    if trailer.solo_hash.is_none() {
        return Err(SocoError::Format {
            path: path.to_path_buf(),
            reason: "checkpoint does not carry a frozen solo policy".into(),
        });
    }
    let net = mlp_from_map(&tensors, "solo", OutputActivation::Tanh)?;
    let policy = SoloPolicy::from_net(net, true)?;
    Ok((policy, trailer))
}

/// Loads the expert actor network from a single-agent training checkpoint.
pub fn load_expert_actor(path: &Path) -> Result<(Mlp, CheckpointTrailer)> {
    let (tensors, trailer) = load_checkpoint(path)?;
    let net = mlp_from_map(&tensors, "agent0.actor", OutputActivation::Tanh)?;
    Ok((net, trailer))
}

/// Rebuilds evaluation agents from a cooperative (or solo-expert) checkpoint.
pub fn agents_from_checkpoint(
    tensors: &BTreeMap<String, Tensor>,
    trailer: &CheckpointTrailer,
    env_cfg: &ParticleConfig,
    fusion: &FusionParams,
) -> Result<Vec<Agent>> {
    let n = env_cfg.n_agents;
    let mut agents = Vec::with_capacity(n);
    match trailer.kind.as_str() {
        "vanilla" | "solo-expert" => {
            for i in 0..n {
                let net = mlp_from_map(tensors, &format!("agent{i}.actor"), OutputActivation::Tanh)?;
                let target = net.clone();
                let opt = AdamState::new(net.params(), 1e-3);
                agents.push(Agent::Vanilla { net, target, opt });
            }
        }
        // A cloned solo policy acts directly on the single-agent world.
        "solo-bc" => {
            if n != 1 {
                return Err(SocoError::Invalid(
                    "a solo policy checkpoint evaluates on the single-agent world".into(),
                ));
            }
            let net = mlp_from_map(tensors, "solo", OutputActivation::Tanh)?;
            let target = net.clone();
            let opt = AdamState::new(net.params(), 1e-3);
            agents.push(Agent::Vanilla { net, target, opt });
        }
        "soco" => {
            let solo_net = mlp_from_map(tensors, "solo", OutputActivation::Tanh)?;
            let solo = Arc::new(SoloPolicy::from_net(solo_net, true)?);
            let layout = crate::decomp::ObservationLayout::for_env(env_cfg);
            for i in 0..n {
                let gate_net =
                    mlp_from_map(tensors, &format!("agent{i}.gate"), OutputActivation::Identity)?;
                let editor_net =
                    mlp_from_map(tensors, &format!("agent{i}.editor"), OutputActivation::Identity)?;
                let gate = GatingSelector {
                    net: gate_net,
                    temperature: fusion.gate_temperature,
                    mode: fusion.gating,
                };
                let editor = ActionEditor {
                    net: editor_net,
                    strength: fusion.strength,
                };
                let policy =
                    FusedPolicy::new(solo.clone(), gate, editor, fusion.clip, layout.clone(), i)?;
                let target = policy.clone();
                agents.push(Agent::Fused {
                    policy,
                    target,
                    gate_opt: None,
                    editor_opt: None,
                });
            }
            // Rule-based gating needs no logits; learned gating was checked
            // during construction.
            if fusion.gating == GatingMode::Learned && layout.group_count() == 0 {
                return Err(SocoError::Invalid("layout without landmark groups".into()));
            }
        }
        other => {
            return Err(SocoError::Invalid(format!(
                "checkpoint kind {other} has no evaluation policy"
            )))
        }
    }
    Ok(agents)
}
