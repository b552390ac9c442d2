//! Solo demonstrations and the frozen shared solo policy.
//!
//! A converged single-agent expert is rolled out deterministically (no
//! exploration noise) to produce an observation/action dataset, and a fresh
//! policy is behavior-cloned against it with a mean-squared-error objective.
//! Once cloning finishes the solo policy is frozen; cooperative training
//! never writes to it.
//!
//! Dataset file format (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "SOCODEMO"
//! version u32      1
//! count   u64      M
//! obs_w   u32
//! act_w   u32
//! obs     M * obs_w  f32 little-endian
//! actions M * act_w  f32 little-endian
//! meta    u32 length prefix + UTF-8 JSON
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{ParticleConfig, ParticleEnv, ACTION_WIDTH};
use crate::error::{Result, SocoError};
use crate::numerics::{adam_step, AdamState, Mlp, OutputActivation, Tensor};

pub const DEMO_MAGIC: &[u8; 8] = b"SOCODEMO";
pub const DEMO_VERSION: u32 = 1;

/// Hex SHA-256 over a network's parameters in storage order (little-endian
/// f64 bytes). Used for the demo provenance field and the freezing contract.
pub fn mlp_param_hash(net: &Mlp) -> String {
    let mut hasher = Sha256::new();
    for p in net.params() {
        hasher.update(p.to_le_bytes());
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Provenance carried inside the dataset file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DemoMeta {
    pub env_id: String,
    pub policy_hash: String,
    pub seed: u64,
    pub count: u64,
    /// Mean return of the episodes rolled out during collection.
    pub mean_episode_return: Option<f64>,
}

/// In-memory demonstration dataset. Replay-style data is stored at 32 bits.
#[derive(Debug, Clone)]
pub struct DemoDataset {
    obs_width: usize,
    act_width: usize,
    obs: Vec<f32>,
    actions: Vec<f32>,
    pub meta: DemoMeta,
}

impl DemoDataset {
    pub fn new(obs_width: usize, act_width: usize, meta: DemoMeta) -> Self {
        DemoDataset {
            obs_width,
            act_width,
            obs: Vec::new(),
            actions: Vec::new(),
            meta,
        }
    }

    pub fn len(&self) -> usize {
        if self.obs_width == 0 {
            0
        } else {
            self.obs.len() / self.obs_width
        }
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn obs_width(&self) -> usize {
        self.obs_width
    }

    pub fn act_width(&self) -> usize {
        self.act_width
    }

    pub fn push(&mut self, obs: &[f64], action: &[f64]) -> Result<()> {
        if obs.len() != self.obs_width || action.len() != self.act_width {
            return Err(SocoError::shape(
                "DemoDataset::push",
                format!("obs {} / act {}", self.obs_width, self.act_width),
                format!("obs {} / act {}", obs.len(), action.len()),
            ));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(SocoError::non_finite("demo observation"));
        }
        if let Some(&v) = action.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(SocoError::Invalid(format!(
                "demo action component {v} outside [-1, 1]"
            )));
        }
        self.obs.extend(obs.iter().map(|&v| v as f32));
        self.actions.extend(action.iter().map(|&v| v as f32));
        Ok(())
    }

    /// Gathers rows `idx` into f64 batch tensors `([B, obs_w], [B, act_w])`.
    pub fn gather(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut o = Vec::with_capacity(idx.len() * self.obs_width);
        let mut a = Vec::with_capacity(idx.len() * self.act_width);
        for &i in idx {
            if i >= self.len() {
                return Err(SocoError::Invalid(format!("demo row {i} out of range")));
            }
            o.extend(
                self.obs[i * self.obs_width..(i + 1) * self.obs_width]
                    .iter()
                    .map(|&v| v as f64),
            );
            a.extend(
                self.actions[i * self.act_width..(i + 1) * self.act_width]
                    .iter()
                    .map(|&v| v as f64),
            );
        }
        Ok((
            Tensor::from_vec(&[idx.len(), self.obs_width], o)?,
            Tensor::from_vec(&[idx.len(), self.act_width], a)?,
        ))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(DEMO_MAGIC);
        buf.extend_from_slice(&DEMO_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.obs_width as u32).to_le_bytes());
        buf.extend_from_slice(&(self.act_width as u32).to_le_bytes());
        for v in &self.obs {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.actions {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| SocoError::Invalid(format!("metadata serialization: {e}")))?;
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(&meta);
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(SocoError::MissingInput {
                path: path.to_path_buf(),
            });
        }
        let mut file = fs::File::open(path).map_err(|e| SocoError::io("open demo file", e))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)
            .map_err(|e| SocoError::io("read demo file", e))?;
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

        if take(&mut off, 8)? != DEMO_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap());
        if version != DEMO_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap()) as usize;
        let obs_width = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let act_width = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;

        let read_f32s = |off: &mut usize, n: usize| -> Result<Vec<f32>> {
            if *off + 4 * n > buf.len() {
                return Err(bad("truncated float block"));
            }
            let mut out = Vec::with_capacity(n);
            for i in 0..n {
                let b: [u8; 4] = buf[*off + 4 * i..*off + 4 * i + 4].try_into().unwrap();
                out.push(f32::from_le_bytes(b));
            }
            *off += 4 * n;
            Ok(out)
        };
        let obs = read_f32s(&mut off, count * obs_width)?;
        let actions = read_f32s(&mut off, count * act_width)?;

        let meta_len = u32::from_le_bytes(take(&mut off, 4)?.try_into().unwrap()) as usize;
        let meta_bytes = take(&mut off, meta_len)?;
        let meta: DemoMeta = serde_json::from_slice(meta_bytes)
            .map_err(|_| bad("metadata is not valid JSON"))?;
        if off != buf.len() {
            return Err(bad("trailing bytes"));
        }
        if meta.count != count as u64 {
            return Err(bad("metadata count disagrees with header"));
        }
        if obs.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite observation"));
        }
        if actions.iter().any(|&v| !(-1.0..=1.0).contains(&(v as f64))) {
            return Err(bad("action outside [-1, 1]"));
        }
        Ok(DemoDataset {
            obs_width,
            act_width,
            obs,
            actions,
            meta,
        })
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| SocoError::io("create output dir", e))?;
        }
    }
    {
        let mut f = fs::File::create(&tmp).map_err(|e| SocoError::io("create temp file", e))?;
        f.write_all(bytes).map_err(|e| SocoError::io("write temp file", e))?;
        f.sync_all().map_err(|e| SocoError::io("sync temp file", e))?;
    }
    fs::rename(&tmp, path).map_err(|e| SocoError::io("rename temp file", e))
}

/// The shared solo policy: a tanh-headed MLP from solo observation to action.
/// Freezing is one-way; a frozen policy rejects further training.
#[derive(Debug, Clone)]
pub struct SoloPolicy {
    net: Mlp,
    frozen: bool,
}

impl SoloPolicy {
    pub fn new<R: Rng>(obs_width: usize, hidden: usize, rng: &mut R) -> Self {
        SoloPolicy {
            net: Mlp::new(
                [obs_width, hidden, hidden, ACTION_WIDTH],
                OutputActivation::Tanh,
                rng,
            ),
            frozen: false,
        }
    }

    pub fn from_net(net: Mlp, frozen: bool) -> Result<Self> {
        if net.output_activation() != OutputActivation::Tanh {
            return Err(SocoError::Invalid(
                "solo policy requires a tanh output head".into(),
            ));
        }
        Ok(SoloPolicy { net, frozen })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn obs_width(&self) -> usize {
        self.net.input_dim()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn param_hash(&self) -> String {
        mlp_param_hash(&self.net)
    }

    pub fn act(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let input = Tensor::from_vec(&[1, obs.len()], obs.to_vec())?;
        Ok(self.net.forward(&input)?.as_slice().to_vec())
    }

    /// Batched forward, rows of `obs` are observations.
    pub fn act_batch(&self, obs: &Tensor) -> Result<Tensor> {
        self.net.forward(obs)
    }
}

/// Report produced by demo collection.
#[derive(Debug, Clone)]
pub struct CollectReport {
    pub episodes: usize,
    pub mean_episode_return: Option<f64>,
}

/// Rolls out `expert` deterministically on the single-agent world until `m`
/// observation/action pairs are collected. Whole episodes are rolled out; the
/// pair arrays are truncated to exactly `m`.
pub fn collect_demos(
    expert: &Mlp,
    env_cfg: &ParticleConfig,
    m: usize,
    seed: u64,
) -> Result<(DemoDataset, CollectReport)> {
    if env_cfg.n_agents != 1 {
        return Err(SocoError::Config(
            "demo collection runs on the single-agent world".into(),
        ));
    }
    let mut env = ParticleEnv::new(env_cfg.clone(), seed)?;
    if expert.input_dim() != env.config().obs_width() {
        return Err(SocoError::shape(
            "collect_demos expert input",
            format!("{}", env.config().obs_width()),
            format!("{}", expert.input_dim()),
        ));
    }
    if expert.output_dim() != ACTION_WIDTH {
        return Err(SocoError::shape(
            "collect_demos expert output",
            format!("{ACTION_WIDTH}"),
            format!("{}", expert.output_dim()),
        ));
    }

    let meta = DemoMeta {
        env_id: "solonav".into(),
        policy_hash: mlp_param_hash(expert),
        seed,
        count: m as u64,
        mean_episode_return: None,
    };
    let mut ds = DemoDataset::new(env.config().obs_width(), ACTION_WIDTH, meta);

    let mut episode_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returns = Vec::new();
    while ds.len() < m {
        let mut obs = env.reset(episode_rng.random())?;
        let mut ep_return = 0.0;
        loop {
            let action = {
                let input = Tensor::from_vec(&[1, obs[0].len()], obs[0].clone())?;
                expert.forward(&input)?.as_slice().to_vec()
            };
            if ds.len() < m {
                ds.push(&obs[0], &action)?;
            }
            let out = env.step(&[[action[0], action[1]]])?;
            ep_return += out.reward;
            obs = out.observations;
            if out.done {
                break;
            }
        }
        returns.push(ep_return);
    }

    let mean_return = if returns.is_empty() {
        None
    } else {
        Some(returns.iter().sum::<f64>() / returns.len() as f64)
    };
    ds.meta.mean_episode_return = mean_return;
    ds.meta.count = ds.len() as u64;
    Ok((
        ds,
        CollectReport {
            episodes: returns.len(),
            mean_episode_return: mean_return,
        },
    ))
}

/// Behavior-cloning trainer holding the policy and its optimizer.
pub struct BcTrainer {
    pub policy: SoloPolicy,
    opt: AdamState,
}

impl BcTrainer {
    pub fn new(policy: SoloPolicy, learning_rate: f64) -> Self {
        let opt = AdamState::new(policy.net.params(), learning_rate);
        BcTrainer { policy, opt }
    }

    /// One mean-squared-error step: `loss = mean_b ||policy(o_b) - a_b||^2`.
    pub fn update(&mut self, obs: &Tensor, actions: &Tensor) -> Result<f64> {
        if self.policy.frozen {
            return Err(SocoError::Invalid(
                "behavior cloning on a frozen solo policy".into(),
            ));
        }
        let batch = obs.rows();
        if actions.shape() != [batch, ACTION_WIDTH] {
            return Err(SocoError::shape(
                "bc_update actions",
                format!("[{batch}, {ACTION_WIDTH}]"),
                format!("{:?}", actions.shape()),
            ));
        }
        let cache = self.policy.net.forward_train(obs)?;
        let pred = cache.output();
        let mut loss = 0.0;
        let mut upstream = Tensor::zeros(&[batch, ACTION_WIDTH]);
        {
            let u = upstream.as_mut_slice();
            for (i, (&p, &a)) in pred.as_slice().iter().zip(actions.as_slice()).enumerate() {
                let d = p - a;
                loss += d * d;
                u[i] = 2.0 * d / batch as f64;
            }
        }
        loss /= batch as f64;
        let (grads, _) = self.policy.net.backward(&cache, &upstream)?;
        adam_step(self.policy.net.params_mut(), &grads.params, &mut self.opt)?;
        Ok(loss)
    }

    /// Loss without updating, for monitoring.
    pub fn loss(&self, obs: &Tensor, actions: &Tensor) -> Result<f64> {
        let pred = self.policy.net.forward(obs)?;
        let batch = obs.rows();
        let mut loss = 0.0;
        for (&p, &a) in pred.as_slice().iter().zip(actions.as_slice()) {
            let d = p - a;
            loss += d * d;
        }
        Ok(loss / batch as f64)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcParams {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
}

impl Default for BcParams {
    fn default() -> Self {
        BcParams {
            steps: 5_000,
            batch_size: 256,
            learning_rate: 1e-3,
            hidden: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcReport {
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Clones a fresh policy against the dataset and freezes it.
pub fn train_bc(dataset: &DemoDataset, params: &BcParams, seed: u64) -> Result<(SoloPolicy, BcReport)> {
    if dataset.is_empty() {
        return Err(SocoError::Invalid("behavior cloning needs a non-empty dataset".into()));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = SoloPolicy::new(dataset.obs_width(), params.hidden, &mut init_rng);
    let mut trainer = BcTrainer::new(policy, params.learning_rate);
    let mut batch_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);

    // Fixed probe set for the monitored start/end losses.
    let probe: Vec<usize> = (0..dataset.len().min(10_000)).collect();
    let (probe_obs, probe_act) = dataset.gather(&probe)?;
    let initial_loss = trainer.loss(&probe_obs, &probe_act)?;

    for _ in 0..params.steps {
        let idx: Vec<usize> = (0..params.batch_size)
            .map(|_| batch_rng.random_range(0..dataset.len()))
            .collect();
        let (obs, act) = dataset.gather(&idx)?;
        trainer.update(&obs, &act)?;
    }

    let final_loss = trainer.loss(&probe_obs, &probe_act)?;
    let mut policy = trainer.policy;
    policy.freeze();
    Ok((
        policy,
        BcReport {
            initial_loss,
            final_loss,
        },
    ))
}

/// Summary statistics of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoStats {
    pub count: usize,
    pub action_mean: Option<Vec<f64>>,
    pub action_std: Option<Vec<f64>>,
    pub mean_episode_return: Option<f64>,
}

pub fn demo_stats(dataset: &DemoDataset) -> DemoStats {
    let count = dataset.len();
    if count == 0 {
        return DemoStats {
            count: 0,
            action_mean: None,
            action_std: None,
            mean_episode_return: None,
        };
    }
    let w = dataset.act_width();
    let mut mean = vec![0.0f64; w];
    for i in 0..count {
        for d in 0..w {
            mean[d] += dataset.actions[i * w + d] as f64;
        }
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    let mut var = vec![0.0f64; w];
    for i in 0..count {
        for d in 0..w {
            let diff = dataset.actions[i * w + d] as f64 - mean[d];
            var[d] += diff * diff;
        }
    }
    let std: Vec<f64> = var.iter().map(|v| (v / count as f64).sqrt()).collect();
    DemoStats {
        count,
        action_mean: Some(mean),
        action_std: Some(std),
        mean_episode_return: dataset.meta.mean_episode_return,
    }
}
