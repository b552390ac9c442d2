//! Twin-critic deterministic-policy-gradient backbone and the cooperative
//! training loop.
//!
//! Two centralized critics regress on the min-critic bootstrap target with
//! target-policy smoothing; per-agent actors update on a delay against the
//! first critic; all target networks track their online copies through soft
//! updates. Actors are either plain tanh-headed MLPs (the vanilla baseline;
//! with one agent this is exactly single-agent TD3) or fused policies built
//! on a frozen solo policy (gating selector + action editor).

pub mod replay;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::decomp::{build_solo_views, ObservationLayout};
use crate::demos::SoloPolicy;
use crate::envs::{ParticleConfig, ParticleEnv, ACTION_WIDTH};
use crate::error::{Result, SocoError};
use crate::fusion::{
    candidate_actions, ActionEditor, ClipMode, FusedDiag, FusedPolicy, GatingMode, GatingSelector,
};
use crate::numerics::{adam_step, AdamState, Mlp, OutputActivation, Tensor};

pub use replay::{Batch, ReplayBuffer, TransitionRef};

// Fixed RNG stream ids; every consumer of randomness in a run draws from its
// own stream derived from (master seed, stream id).
const STREAM_INIT: u64 = 0;
const STREAM_ENV: u64 = 1;
const STREAM_EXPLORE: u64 = 2;
const STREAM_GUMBEL: u64 = 3;
const STREAM_SAMPLE: u64 = 4;
const STREAM_TARGET_NOISE: u64 = 5;
const STREAM_WARMUP: u64 = 6;
const STREAM_EPISODE_GATE: u64 = 7;
const STREAM_EVAL: u64 = 8;

/// Independent deterministic RNG stream.
pub(crate) fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&master.to_le_bytes());
    seed[8..16].copy_from_slice(&stream.to_le_bytes());
    seed[16..24].copy_from_slice(&0x9e37_79b9_7f4a_7c15u64.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

/// Backbone hyperparameters. Defaults are the shared settings used across
/// all runs on the particle world.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub explore_noise: f64,
    pub policy_noise: f64,
    pub noise_clip: f64,
    pub policy_delay: u32,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub n_step: usize,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub buffer_capacity: usize,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// One critic update is performed every `update_every` environment steps.
    pub update_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            batch_size: 1000,
            hidden: 128,
            explore_noise: 0.1,
            policy_noise: 0.2,
            noise_clip: 0.5,
            policy_delay: 2,
            tau: 0.005,
            actor_lr: 5e-4,
            critic_lr: 1e-3,
            n_step: 1,
            warmup_steps: 10_000,
            total_steps: 300_000,
            buffer_capacity: 1_000_000,
            eval_interval: 10_000,
            eval_episodes: 40,
            update_every: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SocoError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad("batch_size must be in 1..=buffer_capacity");
        }
        if self.hidden == 0 {
            return bad("hidden width must be positive");
        }
        if self.explore_noise < 0.0 || self.policy_noise < 0.0 || self.noise_clip < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be >= 1");
        }
        if !(self.tau >= 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in [0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.n_step == 0 {
            return bad("n_step must be >= 1");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return bad("evaluation cadence and episode count must be positive");
        }
        if self.update_every == 0 {
            return bad("update_every must be >= 1");
        }
        Ok(())
    }
}

/// Fusion hyperparameters for cooperative runs built on a solo policy.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionParams {
    /// Correction strength L; 0 disables the editor entirely.
    pub strength: f64,
    pub gating: GatingMode,
    pub clip: ClipMode,
    pub gate_temperature: f64,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            strength: 0.0,
            gating: GatingMode::Learned,
            clip: ClipMode::Tanh,
            gate_temperature: 1.0,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.strength < 0.0 {
            return Err(SocoError::Config("fusion strength L must be >= 0".into()));
        }
        if !(self.gate_temperature > 0.0) {
            return Err(SocoError::Config("gate temperature must be > 0".into()));
        }
        Ok(())
    }
}

/// Which actor family a run trains.
#[derive(Clone)]
pub enum AlgoSpec {
    /// Per-agent tanh-headed MLP actors trained from scratch.
    Vanilla,
    /// Fused policies over a frozen solo policy.
    Soco {
        solo: Arc<SoloPolicy>,
        fusion: FusionParams,
    },
}

impl AlgoSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            AlgoSpec::Vanilla => "vanilla",
            AlgoSpec::Soco { .. } => "soco",
        }
    }
}

/// Polyak update: `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.sizes() != online.sizes() {
        return Err(SocoError::shape(
            "soft_update",
            format!("{:?}", online.sizes()),
            format!("{:?}", target.sizes()),
        ));
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        for (tv, &ov) in t.as_mut_slice().iter_mut().zip(o.as_slice()) {
            *tv = tau * ov + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

/// The two centralized critics with their targets and optimizers.
pub struct TwinCritics {
    pub q1: Mlp,
    pub q2: Mlp,
    pub t1: Mlp,
    pub t2: Mlp,
    pub opt1: AdamState,
    pub opt2: AdamState,
}

impl TwinCritics {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, lr: f64, rng: &mut R) -> Self {
        let q1 = Mlp::new([input_dim, hidden, hidden, 1], OutputActivation::Identity, rng);
        let q2 = Mlp::new([input_dim, hidden, hidden, 1], OutputActivation::Identity, rng);
        let t1 = q1.clone();
        let t2 = q2.clone();
        let opt1 = AdamState::new(q1.params(), lr);
        let opt2 = AdamState::new(q2.params(), lr);
        TwinCritics {
            q1,
            q2,
            t1,
            t2,
            opt1,
            opt2,
        }
    }
}

/// One agent's actor (online + target) and its optimizer state.
pub enum Agent {
    Vanilla {
        net: Mlp,
        target: Mlp,
        opt: AdamState,
    },
    Fused {
        policy: FusedPolicy,
        target: FusedPolicy,
        gate_opt: Option<AdamState>,
        editor_opt: Option<AdamState>,
    },
}

impl Agent {
    pub fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng, train: bool) -> Result<(Vec<f64>, Option<FusedDiag>)> {
        match self {
            Agent::Vanilla { net, .. } => {
                let input = Tensor::from_vec(&[1, obs.len()], obs.to_vec())?;
                Ok((net.forward(&input)?.as_slice().to_vec(), None))
            }
            Agent::Fused { policy, .. } => {
                let (a, diag) = policy.act(obs, rng, train)?;
                Ok((a, Some(diag)))
            }
        }
    }

    pub fn begin_episode(&mut self, rng: &mut ChaCha8Rng) {
        match self {
            Agent::Vanilla { .. } => {}
            Agent::Fused { policy, target, .. } => {
                policy.begin_episode(rng);
                target.episode_choice_sync(policy);
            }
        }
    }

    /// Deterministic evaluation copy of the online policy.
    pub fn clone_for_eval(&self) -> Agent {
        match self {
            Agent::Vanilla { net, target, opt } => Agent::Vanilla {
                net: net.clone(),
                target: target.clone(),
                opt: opt.clone(),
            },
            Agent::Fused {
                policy,
                target,
                ..
            } => Agent::Fused {
                policy: policy.clone(),
                target: target.clone(),
                gate_opt: None,
                editor_opt: None,
            },
        }
    }
}

impl FusedPolicy {
    fn episode_choice_sync(&mut self, other: &FusedPolicy) {
        self.set_episode_choice(other.episode_choice_raw());
    }
}

/// Bootstrap targets `y = R + gamma^n * min_k targetQ_k(s', a')` with
/// target-policy smoothing: `a'_i = clamp(targetPi_i(o'_i) + eps, -1, 1)`,
/// `eps ~ clip(Normal(0, policy_noise), -noise_clip, +noise_clip)` i.i.d. per
/// component. Terminal windows use `y = R`.
pub fn critic_target(
    batch: &Batch,
    t1: &Mlp,
    t2: &Mlp,
    agents: &[Agent],
    policy_noise: f64,
    noise_clip: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let b = batch.len();
    let n = agents.len();
    let mut next_joint = Tensor::zeros(&[b, n * ACTION_WIDTH]);

    let normal = if policy_noise > 0.0 {
        Some(Normal::new(0.0, policy_noise).map_err(|e| SocoError::Invalid(e.to_string()))?)
    } else {
        None
    };

    for (i, agent) in agents.iter().enumerate() {
        let base = match agent {
            Agent::Vanilla { target, .. } => target.forward(&batch.next_obs[i])?,
            Agent::Fused { target, .. } => {
                let cand = batch
                    .next_cand
                    .as_ref()
                    .ok_or_else(|| SocoError::Invalid("fused targets need stored candidates".into()))?;
                target.forward_batch_eval(&batch.next_obs[i], &cand[i], rng)?
            }
        };
        for row in 0..b {
            for c in 0..ACTION_WIDTH {
                let mut v = base.row(row)[c];
                if let Some(normal) = &normal {
                    let eps = normal.sample(rng).clamp(-noise_clip, noise_clip);
                    v += eps;
                }
                next_joint.row_mut(row)[i * ACTION_WIDTH + c] = v.clamp(-1.0, 1.0);
            }
        }
    }

    let q_in = concat_columns(&batch.next_state, &next_joint)?;
    let q1 = t1.forward(&q_in)?;
    let q2 = t2.forward(&q_in)?;
    let mut y = Vec::with_capacity(b);
    for row in 0..b {
        let mut v = batch.nstep_return[row];
        if batch.bootstrap[row] {
            v += batch.discount[row] * q1.row(row)[0].min(q2.row(row)[0]);
        }
        y.push(v);
    }
    Ok(y)
}

/// Regresses both critics on the shared target; returns the two losses.
pub fn critic_update(critics: &mut TwinCritics, q_in: &Tensor, y: &[f64]) -> Result<(f64, f64)> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SocoError::non_finite("critic target"));
    }
    let l1 = critic_update_one(&mut critics.q1, &mut critics.opt1, q_in, y)?;
    let l2 = critic_update_one(&mut critics.q2, &mut critics.opt2, q_in, y)?;
    Ok((l1, l2))
}

fn critic_update_one(net: &mut Mlp, opt: &mut AdamState, q_in: &Tensor, y: &[f64]) -> Result<f64> {
    let b = q_in.rows();
    let cache = net.forward_train(q_in)?;
    let mut loss = 0.0;
    let mut upstream = Tensor::zeros(&[b, 1]);
    {
        let u = upstream.as_mut_slice();
        for (row, (&q, &target)) in cache.output().as_slice().iter().zip(y).enumerate() {
            let d = q - target;
            loss += d * d;
            u[row] = 2.0 * d / b as f64;
        }
    }
    loss /= b as f64;
    let (grads, _) = net.backward(&cache, &upstream)?;
    adam_step(net.params_mut(), &grads.params, opt)?;
    Ok(loss)
}

/// `[state || joint_action]` rows for critic input.
pub fn concat_columns(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let rows = a.rows();
    if b.rows() != rows {
        return Err(SocoError::shape(
            "concat_columns",
            format!("{rows} rows"),
            format!("{}", b.rows()),
        ));
    }
    let (wa, wb) = (a.cols(), b.cols());
    let mut out = Vec::with_capacity(rows * (wa + wb));
    for r in 0..rows {
        out.extend_from_slice(a.row(r));
        out.extend_from_slice(b.row(r));
    }
    Tensor::from_vec(&[rows, wa + wb], out)
}

/// One metrics row per evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub mean_return: f64,
    pub std_return: f64,
    pub critic_loss_1: f64,
    pub critic_loss_2: f64,
    pub actor_loss: f64,
    pub mean_edit_norm: f64,
    pub gating_entropy: f64,
}

/// Evaluation-side diagnostics averaged over all (step, agent) pairs.
#[derive(Debug, Clone, Default)]
pub struct EvalDiag {
    pub mean_edit_norm: f64,
    pub gating_entropy: f64,
    pub chosen_counts: Vec<u64>,
}

/// Deterministic evaluation: no exploration noise, noiseless argmax gating,
/// a fixed ladder of episode seeds derived from `seed`.
pub fn evaluate(
    agents: &[Agent],
    env_cfg: &ParticleConfig,
    episodes: usize,
    seed: u64,
) -> Result<(f64, f64, EvalDiag)> {
    let mut seed_rng = stream_rng(seed, STREAM_EVAL);
    let mut eval_agents: Vec<Agent> = agents.iter().map(|a| a.clone_for_eval()).collect();
    let mut env = ParticleEnv::new(env_cfg.clone(), 0)?;

    let mut returns = Vec::with_capacity(episodes);
    let mut edit_sum = 0.0;
    let mut entropy_sum = 0.0;
    let mut diag_count = 0u64;
    let mut chosen_counts = Vec::new();

    for _ in 0..episodes {
        let env_seed: u64 = seed_rng.random();
        let ep_seed: u64 = seed_rng.random();
        let mut ep_rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let mut obs = env.reset(env_seed)?;
        for agent in eval_agents.iter_mut() {
            agent.begin_episode(&mut ep_rng);
        }
        let mut ep_return = 0.0;
        loop {
            let mut actions = Vec::with_capacity(eval_agents.len());
            for (i, agent) in eval_agents.iter().enumerate() {
                let (a, diag) = agent.act(&obs[i], &mut ep_rng, false)?;
                if let Some(diag) = diag {
                    edit_sum += diag.edit_norm;
                    entropy_sum += entropy(&diag.soft_weights);
                    if chosen_counts.len() <= diag.chosen {
                        chosen_counts.resize(diag.chosen + 1, 0);
                    }
                    chosen_counts[diag.chosen] += 1;
                    diag_count += 1;
                }
                actions.push([a[0], a[1]]);
            }
            let out = env.step(&actions)?;
            ep_return += out.reward;
            obs = out.observations;
            if out.done {
                break;
            }
        }
        returns.push(ep_return);
    }

    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / episodes as f64;
    let d = if diag_count > 0 { diag_count as f64 } else { 1.0 };
    Ok((
        mean,
        var.sqrt(),
        EvalDiag {
            mean_edit_norm: edit_sum / d,
            gating_entropy: entropy_sum / d,
            chosen_counts,
        },
    ))
}

fn entropy(w: &[f64]) -> f64 {
    -w.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Everything needed to start a run.
pub struct MarlRunSpec {
    pub env: ParticleConfig,
    pub trainer: TrainerConfig,
    pub algo: AlgoSpec,
    pub seed: u64,
}

/// Full training state.
pub struct Trainer {
    pub env_cfg: ParticleConfig,
    pub cfg: TrainerConfig,
    pub layout: ObservationLayout,
    pub critics: TwinCritics,
    pub agents: Vec<Agent>,
    pub buffer: ReplayBuffer,
    env: ParticleEnv,
    soco: Option<(Arc<SoloPolicy>, FusionParams)>,
    rng_env: ChaCha8Rng,
    rng_explore: ChaCha8Rng,
    rng_gumbel: ChaCha8Rng,
    rng_sample: ChaCha8Rng,
    rng_target_noise: ChaCha8Rng,
    rng_warmup: ChaCha8Rng,
    rng_episode_gate: ChaCha8Rng,
    eval_base: u64,
    pub critic_updates: u64,
    pub actor_updates: u64,
    acc: LossAccum,
    obs: Vec<Vec<f64>>,
}

#[derive(Default)]
struct LossAccum {
    c1: f64,
    c2: f64,
    a: f64,
    n_critic: u64,
    n_actor: u64,
}

impl LossAccum {
    fn row_values(&mut self) -> (f64, f64, f64) {
        let c = self.n_critic.max(1) as f64;
        let a = self.n_actor.max(1) as f64;
        let out = (self.c1 / c, self.c2 / c, self.a / a);
        *self = LossAccum::default();
        out
    }
}

impl Trainer {
    pub fn new(spec: &MarlRunSpec) -> Result<Self> {
        spec.env.validate()?;
        spec.trainer.validate()?;
        let env_cfg = spec.env.clone();
        let cfg = spec.trainer.clone();
        let layout = ObservationLayout::for_env(&env_cfg);
        layout.validate()?;

        let n = env_cfg.n_agents;
        let obs_w = env_cfg.obs_width();
        let state_w = env_cfg.state_width();
        let critic_in = state_w + n * ACTION_WIDTH;

        let mut rng_init = stream_rng(spec.seed, STREAM_INIT);
        let critics = TwinCritics::new(critic_in, cfg.hidden, cfg.critic_lr, &mut rng_init);

        let mut agents = Vec::with_capacity(n);
        let mut soco = None;
        match &spec.algo {
            AlgoSpec::Vanilla => {
                for _ in 0..n {
                    let net = Mlp::new(
                        [obs_w, cfg.hidden, cfg.hidden, ACTION_WIDTH],
                        OutputActivation::Tanh,
                        &mut rng_init,
                    );
                    let target = net.clone();
                    let opt = AdamState::new(net.params(), cfg.actor_lr);
                    agents.push(Agent::Vanilla { net, target, opt });
                }
            }
            AlgoSpec::Soco { solo, fusion } => {
                fusion.validate()?;
                if !solo.is_frozen() {
                    return Err(SocoError::Invalid(
                        "cooperative training requires a frozen solo policy".into(),
                    ));
                }
                if solo.obs_width() != layout.solo_view_width {
                    return Err(SocoError::shape(
                        "solo policy input width",
                        format!("{}", layout.solo_view_width),
                        format!("{}", solo.obs_width()),
                    ));
                }
                for i in 0..n {
                    let gate = GatingSelector::new(
                        obs_w,
                        cfg.hidden,
                        layout.group_count(),
                        fusion.gate_temperature,
                        fusion.gating,
                        &mut rng_init,
                    );
                    let editor = ActionEditor::new(
                        obs_w,
                        cfg.hidden,
                        ACTION_WIDTH,
                        fusion.strength,
                        &mut rng_init,
                    );
                    let policy = FusedPolicy::new(
                        solo.clone(),
                        gate,
                        editor,
                        fusion.clip,
                        layout.clone(),
                        i,
                    )?;
                    let target = policy.clone();
                    let gate_opt = (fusion.gating == GatingMode::Learned)
                        .then(|| AdamState::new(policy.gate.net.params(), cfg.actor_lr));
                    let editor_opt = (fusion.strength > 0.0)
                        .then(|| AdamState::new(policy.editor.net.params(), cfg.actor_lr));
                    agents.push(Agent::Fused {
                        policy,
                        target,
                        gate_opt,
                        editor_opt,
                    });
                }
                soco = Some((solo.clone(), fusion.clone()));
            }
        }

        let groups = if soco.is_some() { layout.group_count() } else { 0 };
        let buffer = ReplayBuffer::new(cfg.buffer_capacity, n, state_w, obs_w, ACTION_WIDTH, groups);

        let mut rng_env = stream_rng(spec.seed, STREAM_ENV);
        let first_seed: u64 = rng_env.random();
        let env = ParticleEnv::new(env_cfg.clone(), first_seed)?;
        let obs = env.observations();
        let eval_base = stream_rng(spec.seed, STREAM_EVAL).random();

        let mut trainer = Trainer {
            env_cfg,
            cfg,
            layout,
            critics,
            agents,
            buffer,
            env,
            soco,
            rng_env,
            rng_explore: stream_rng(spec.seed, STREAM_EXPLORE),
            rng_gumbel: stream_rng(spec.seed, STREAM_GUMBEL),
            rng_sample: stream_rng(spec.seed, STREAM_SAMPLE),
            rng_target_noise: stream_rng(spec.seed, STREAM_TARGET_NOISE),
            rng_warmup: stream_rng(spec.seed, STREAM_WARMUP),
            rng_episode_gate: stream_rng(spec.seed, STREAM_EPISODE_GATE),
            eval_base,
            critic_updates: 0,
            actor_updates: 0,
            acc: LossAccum::default(),
            obs,
        };
        let mut gate_rng = trainer.rng_episode_gate.clone();
        for agent in trainer.agents.iter_mut() {
            agent.begin_episode(&mut gate_rng);
        }
        trainer.rng_episode_gate = gate_rng;
        Ok(trainer)
    }

    pub fn solo_hash(&self) -> Option<String> {
        self.soco.as_ref().map(|(solo, _)| solo.param_hash())
    }

    pub fn fusion_params(&self) -> Option<&FusionParams> {
        self.soco.as_ref().map(|(_, f)| f)
    }

    fn reset_env(&mut self) -> Result<()> {
        let seed: u64 = self.rng_env.random();
        self.obs = self.env.reset(seed)?;
        let mut gate_rng = self.rng_episode_gate.clone();
        for agent in self.agents.iter_mut() {
            agent.begin_episode(&mut gate_rng);
        }
        self.rng_episode_gate = gate_rng;
        Ok(())
    }

    /// Flattened per-agent candidate actions for an observation set, in the
    /// replay layout `[n_agents * groups * act_w]`.
    fn candidates_for(&self, obs: &[Vec<f64>]) -> Result<Option<Vec<f64>>> {
        let Some((solo, _)) = &self.soco else {
            return Ok(None);
        };
        let mut flat = Vec::with_capacity(
            self.env_cfg.n_agents * self.layout.group_count() * ACTION_WIDTH,
        );
        for o in obs {
            let views = build_solo_views(o, &self.layout)?;
            let c = candidate_actions(solo, &views)?;
            flat.extend_from_slice(c.as_slice());
        }
        Ok(Some(flat))
    }

    /// Acts in the environment with the given joint action, pushes the
    /// transition, and resets on episode end. Returns the shared reward.
    fn step_env(&mut self, actions: Vec<Vec<f64>>, cand: Option<Vec<f64>>) -> Result<f64> {
        let state = self.env.global_state();
        let action_pairs: Vec<[f64; 2]> = actions.iter().map(|a| [a[0], a[1]]).collect();
        let out = self.env.step(&action_pairs)?;
        let next_state = self.env.global_state();
        let next_cand = self.candidates_for(&out.observations)?;
        self.buffer.push(TransitionRef {
            state: &state,
            obs: &self.obs,
            actions: &actions,
            reward: out.reward,
            next_state: &next_state,
            next_obs: &out.observations,
            done: out.done,
            cand: cand.as_deref(),
            next_cand: next_cand.as_deref(),
        })?;
        self.obs = out.observations;
        if out.done {
            self.reset_env()?;
        }
        Ok(out.reward)
    }

    fn warmup(&mut self) -> Result<()> {
        for _ in 0..self.cfg.warmup_steps {
            let cand = self.candidates_for(&self.obs.clone())?;
            let mut rng = self.rng_warmup.clone();
            let actions: Vec<Vec<f64>> = (0..self.env_cfg.n_agents)
                .map(|_| {
                    (0..ACTION_WIDTH)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect()
                })
                .collect();
            self.rng_warmup = rng;
            self.step_env(actions, cand)?;
        }
        Ok(())
    }

    /// Exploration acting: online policy plus clamped Gaussian noise.
    fn act_explore(&mut self) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
        let cand = self.candidates_for(&self.obs.clone())?;
        let normal = if self.cfg.explore_noise > 0.0 {
            Some(Normal::new(0.0, self.cfg.explore_noise).map_err(|e| SocoError::Invalid(e.to_string()))?)
        } else {
            None
        };
        let mut gumbel = self.rng_gumbel.clone();
        let mut explore = self.rng_explore.clone();
        let mut actions = Vec::with_capacity(self.agents.len());
        for (i, agent) in self.agents.iter().enumerate() {
            let (mut a, _) = agent.act(&self.obs[i], &mut gumbel, true)?;
            if let Some(normal) = &normal {
                for v in a.iter_mut() {
                    *v = (*v + normal.sample(&mut explore)).clamp(-1.0, 1.0);
                }
            }
            actions.push(a);
        }
        self.rng_gumbel = gumbel;
        self.rng_explore = explore;
        Ok((actions, cand))
    }

    fn update(&mut self) -> Result<()> {
        if self.buffer.len() < self.cfg.batch_size {
            return Ok(());
        }
        let mut sample_rng = self.rng_sample.clone();
        let batch = self
            .buffer
            .sample(self.cfg.batch_size, self.cfg.n_step, self.cfg.gamma, &mut sample_rng)?;
        self.rng_sample = sample_rng;

        let mut tn_rng = self.rng_target_noise.clone();
        let y = critic_target(
            &batch,
            &self.critics.t1,
            &self.critics.t2,
            &self.agents,
            self.cfg.policy_noise,
            self.cfg.noise_clip,
            &mut tn_rng,
        )?;
        self.rng_target_noise = tn_rng;

        let q_in = concat_columns(&batch.state, &batch.joint_act)?;
        let (l1, l2) = critic_update(&mut self.critics, &q_in, &y)?;
        self.acc.c1 += l1;
        self.acc.c2 += l2;
        self.acc.n_critic += 1;
        self.critic_updates += 1;

        if self.critic_updates % self.cfg.policy_delay as u64 == 0 {
            for i in 0..self.agents.len() {
                let loss = self.actor_update(i, &batch)?;
                self.acc.a += loss;
                self.acc.n_actor += 1;
            }
            self.soft_updates()?;
            self.actor_updates += 1;
        }
        Ok(())
    }

    /// Deterministic-policy-gradient step for agent `i`: replace its action
    /// slot with the differentiable online policy output and ascend the first
    /// critic. Gradients reach only this agent's trainable actor parameters.
    pub fn actor_update(&mut self, i: usize, batch: &Batch) -> Result<f64> {
        let b = batch.len();
        let sw = self.env_cfg.state_width();

        enum Fwd {
            Vanilla(crate::numerics::ForwardCache),
            Fused(crate::fusion::FusionForward),
        }

        let mut gumbel = self.rng_gumbel.clone();
        let (fwd, a_i) = match &self.agents[i] {
            Agent::Vanilla { net, .. } => {
                let cache = net.forward_train(&batch.obs[i])?;
                let out = cache.output().clone();
                (Fwd::Vanilla(cache), out)
            }
            Agent::Fused { policy, .. } => {
                let cand = batch
                    .cand
                    .as_ref()
                    .ok_or_else(|| SocoError::Invalid("fused actor update needs candidates".into()))?;
                let fwd = policy.forward_batch_train(&batch.obs[i], &cand[i], &mut gumbel)?;
                let out = fwd.out.clone();
                (Fwd::Fused(fwd), out)
            }
        };
        self.rng_gumbel = gumbel;

        let mut joint = batch.joint_act.clone();
        for row in 0..b {
            let dst = &mut joint.row_mut(row)[i * ACTION_WIDTH..(i + 1) * ACTION_WIDTH];
            dst.copy_from_slice(a_i.row(row));
        }
        let q_in = concat_columns(&batch.state, &joint)?;
        let q_cache = self.critics.q1.forward_train(&q_in)?;
        let loss = -q_cache.output().as_slice().iter().sum::<f64>() / b as f64;

        let upstream = Tensor::from_vec(&[b, 1], vec![-1.0 / b as f64; b])?;
        let d_q_in = self.critics.q1.input_backward(&q_cache, &upstream)?;

        let mut d_ai = Tensor::zeros(&[b, ACTION_WIDTH]);
        for row in 0..b {
            let src = &d_q_in.row(row)[sw + i * ACTION_WIDTH..sw + (i + 1) * ACTION_WIDTH];
            d_ai.row_mut(row).copy_from_slice(src);
        }

        match (&mut self.agents[i], fwd) {
            (Agent::Vanilla { net, opt, .. }, Fwd::Vanilla(cache)) => {
                let (grads, _) = net.backward(&cache, &d_ai)?;
                adam_step(net.params_mut(), &grads.params, opt)?;
            }
            (
                Agent::Fused {
                    policy,
                    gate_opt,
                    editor_opt,
                    ..
                },
                Fwd::Fused(fwd),
            ) => {
                let grads = policy.backward_batch(&fwd, &d_ai)?;
                if let (Some(g), Some(opt)) = (grads.gate, gate_opt.as_mut()) {
                    adam_step(policy.gate.net.params_mut(), &g.params, opt)?;
                }
                if let (Some(g), Some(opt)) = (grads.editor, editor_opt.as_mut()) {
                    adam_step(policy.editor.net.params_mut(), &g.params, opt)?;
                }
            }
            _ => unreachable!("actor kind cannot change mid-update"),
        }
        Ok(loss)
    }

    fn soft_updates(&mut self) -> Result<()> {
        let tau = self.cfg.tau;
        soft_update(&mut self.critics.t1, &self.critics.q1, tau)?;
        soft_update(&mut self.critics.t2, &self.critics.q2, tau)?;
        for agent in self.agents.iter_mut() {
            match agent {
                Agent::Vanilla { net, target, .. } => soft_update(target, net, tau)?,
                Agent::Fused { policy, target, .. } => {
                    soft_update(&mut target.gate.net, &policy.gate.net, tau)?;
                    soft_update(&mut target.editor.net, &policy.editor.net, tau)?;
                }
            }
        }
        Ok(())
    }

    fn emit_row(&mut self, step: u64) -> Result<MetricsRow> {
        let (mean, std, diag) = evaluate(
            &self.agents,
            &self.env_cfg,
            self.cfg.eval_episodes,
            self.eval_base,
        )?;
        let (c1, c2, a) = self.acc.row_values();
        Ok(MetricsRow {
            step,
            mean_return: mean,
            std_return: std,
            critic_loss_1: c1,
            critic_loss_2: c2,
            actor_loss: a,
            mean_edit_norm: diag.mean_edit_norm,
            gating_entropy: diag.gating_entropy,
        })
    }

    /// Warm-up, then the interleaved act/update loop with periodic
    /// evaluations. `on_row` sees each metrics row as it is produced.
    pub fn run(
        &mut self,
        on_row: &mut dyn FnMut(&MetricsRow) -> Result<()>,
    ) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        self.warmup()?;

        let row = self.emit_row(0)?;
        on_row(&row)?;
        rows.push(row);

        for step in 1..=self.cfg.total_steps {
            let (actions, cand) = self.act_explore()?;
            self.step_env(actions, cand)?;
            if step % self.cfg.update_every == 0 {
                self.update()?;
            }
            if step % self.cfg.eval_interval == 0 {
                let row = self.emit_row(step)?;
                on_row(&row)?;
                rows.push(row);
            }
        }
        Ok(rows)
    }

    /// Named parameter tensors for checkpointing: online critics, per-agent
    /// actor networks, and (for fused runs) the shared solo policy.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.extend(self.critics.q1.named_tensors("critic1"));
        out.extend(self.critics.q2.named_tensors("critic2"));
        for (i, agent) in self.agents.iter().enumerate() {
            match agent {
                Agent::Vanilla { net, .. } => {
                    out.extend(net.named_tensors(&format!("agent{i}.actor")));
                }
                Agent::Fused { policy, .. } => {
                    out.extend(policy.gate.net.named_tensors(&format!("agent{i}.gate")));
                    out.extend(policy.editor.net.named_tensors(&format!("agent{i}.editor")));
                }
            }
        }
        if let Some((solo, _)) = &self.soco {
            out.extend(solo.net().named_tensors("solo"));
        }
        out
    }
}

/// Builds a trainer from the spec and runs it to completion.
pub fn train_marl(
    spec: &MarlRunSpec,
    on_row: &mut dyn FnMut(&MetricsRow) -> Result<()>,
) -> Result<(Trainer, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(spec)?;
    let rows = trainer.run(on_row)?;
    Ok((trainer, rows))
}

#[cfg(test)]
mod tests;
