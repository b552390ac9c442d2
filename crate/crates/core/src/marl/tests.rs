use super::*;
use crate::numerics::finite_diff_grad;

fn tiny_cfg() -> TrainerConfig {
    TrainerConfig {
        batch_size: 8,
        hidden: 8,
        warmup_steps: 16,
        total_steps: 0,
        buffer_capacity: 256,
        eval_interval: 20,
        eval_episodes: 2,
        ..TrainerConfig::default()
    }
}

fn frozen_solo(seed: u64) -> Arc<SoloPolicy> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut solo = SoloPolicy::new(6, 8, &mut rng);
    solo.freeze();
    Arc::new(solo)
}

fn soco_spec(n_agents: usize, strength: f64, gating: GatingMode, seed: u64) -> MarlRunSpec {
    MarlRunSpec {
        env: ParticleConfig::spread(n_agents),
        trainer: tiny_cfg(),
        algo: AlgoSpec::Soco {
            solo: frozen_solo(1000 + seed),
            fusion: FusionParams {
                strength,
                gating,
                clip: ClipMode::Tanh,
                gate_temperature: 1.0,
            },
        },
        seed,
    }
}

/// Critic with constant output: all-zero network plus an output bias.
fn constant_critic(input_dim: usize, value: f64) -> Mlp {
    let mut net = Mlp::zeros([input_dim, 4, 4, 1], OutputActivation::Identity);
    net.params_mut()[5].as_mut_slice()[0] = value;
    net
}

fn zero_vanilla_agent(obs_w: usize) -> Agent {
    let net = Mlp::zeros([obs_w, 4, 4, ACTION_WIDTH], OutputActivation::Tanh);
    let target = net.clone();
    let opt = AdamState::new(net.params(), 1e-3);
    Agent::Vanilla { net, target, opt }
}

fn hand_batch(rewards: &[f64], bootstrap: &[bool], state_w: usize, obs_w: usize) -> Batch {
    let b = rewards.len();
    let zeros = |w: usize| Tensor::zeros(&[b, w]);
    Batch {
        state: zeros(state_w),
        obs: vec![zeros(obs_w)],
        joint_act: zeros(ACTION_WIDTH),
        nstep_return: rewards.to_vec(),
        discount: vec![0.99; b],
        bootstrap: bootstrap.to_vec(),
        next_state: zeros(state_w),
        next_obs: vec![zeros(obs_w)],
        cand: None,
        next_cand: None,
    }
}

/// Independent scalar recomputation of an identity-head MLP forward pass.
fn naive_forward(net: &Mlp, x: &[f64]) -> f64 {
    let p = net.params();
    let sizes = net.sizes();
    let layer = |input: &[f64], w: &Tensor, b: &Tensor, relu: bool| -> Vec<f64> {
        let (fin, fout) = (w.shape()[0], w.shape()[1]);
        let mut out = vec![0.0; fout];
        for j in 0..fout {
            let mut acc = b.as_slice()[j];
            for i in 0..fin {
                acc += input[i] * w.as_slice()[i * fout + j];
            }
            out[j] = if relu { acc.max(0.0) } else { acc };
        }
        out
    };
    let h1 = layer(x, &p[0], &p[1], true);
    let h2 = layer(&h1, &p[2], &p[3], true);
    let out = layer(&h2, &p[4], &p[5], false);
    assert_eq!(sizes[3], 1);
    out[0]
}

#[test]
fn critic_target_min_critic_hand_value() {
    let state_w = 6;
    let obs_w = 6;
    let t1 = constant_critic(state_w + ACTION_WIDTH, 2.0);
    let t2 = constant_critic(state_w + ACTION_WIDTH, 3.0);
    let agents = vec![zero_vanilla_agent(obs_w)];
    let batch = hand_batch(&[1.0, 1.0], &[true, false], state_w, obs_w);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let y = critic_target(&batch, &t1, &t2, &agents, 0.0, 0.5, &mut rng).unwrap();
    // Bootstrap row: 1 + 0.99 * min(2, 3) = 2.98. Terminal row: 1.
    assert!((y[0] - 2.98).abs() < 1e-12);
    assert!((y[1] - 1.0).abs() < 1e-12);
}

#[test]
fn critic_target_never_exceeds_single_critic_targets() {
    let state_w = 6;
    let obs_w = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let t1 = Mlp::new([state_w + ACTION_WIDTH, 8, 8, 1], OutputActivation::Identity, &mut rng);
    let t2 = Mlp::new([state_w + ACTION_WIDTH, 8, 8, 1], OutputActivation::Identity, &mut rng);
    let agents = vec![zero_vanilla_agent(obs_w)];
    let batch = hand_batch(&[0.3; 16], &[true; 16], state_w, obs_w);

    let y_min = critic_target(&batch, &t1, &t2, &agents, 0.0, 0.5, &mut rng.clone()).unwrap();
    let y_1 = critic_target(&batch, &t1, &t1, &agents, 0.0, 0.5, &mut rng.clone()).unwrap();
    let y_2 = critic_target(&batch, &t2, &t2, &agents, 0.0, 0.5, &mut rng.clone()).unwrap();
    for i in 0..16 {
        assert!(y_min[i] <= y_1[i] + 1e-12);
        assert!(y_min[i] <= y_2[i] + 1e-12);
    }
}

#[test]
fn target_smoothing_noise_is_clipped_and_actions_clamped() {
    let state_w = 6;
    let obs_w = 6;
    let t = constant_critic(state_w + ACTION_WIDTH, 0.0);
    let agents = vec![zero_vanilla_agent(obs_w)];
    let batch = hand_batch(&[0.0; 64], &[true; 64], state_w, obs_w);
    // Huge sigma: every draw saturates the clip. The zero actor emits 0, so
    // each smoothed action component must be exactly +-0.5.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut probe = Tensor::zeros(&[64, ACTION_WIDTH]);
    let normal = Normal::new(0.0, 1e6).unwrap();
    for row in 0..64 {
        for c in 0..ACTION_WIDTH {
            let draw: f64 = normal.sample(&mut rng);
            let eps = draw.clamp(-0.5, 0.5);
            probe.row_mut(row)[c] = eps;
        }
    }
    assert!(probe.as_slice().iter().all(|v| v.abs() == 0.5));
    // And through the real path the target stays finite/valid.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y = critic_target(&batch, &t, &t, &agents, 1e6, 0.5, &mut rng).unwrap();
    assert!(y.iter().all(|v| v.is_finite()));
}

#[test]
fn critic_loss_single_element_square() {
    let input_dim = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut critics = TwinCritics::new(input_dim, 4, 1e-3, &mut rng);
    critics.q1 = Mlp::zeros([input_dim, 4, 4, 1], OutputActivation::Identity);
    critics.q2 = Mlp::zeros([input_dim, 4, 4, 1], OutputActivation::Identity);
    critics.opt1 = AdamState::new(critics.q1.params(), 1e-3);
    critics.opt2 = AdamState::new(critics.q2.params(), 1e-3);
    let q_in = Tensor::zeros(&[1, input_dim]);
    let (l1, l2) = critic_update(&mut critics, &q_in, &[2.98]).unwrap();
    assert!((l1 - 8.8804).abs() < 1e-12);
    assert!((l2 - 8.8804).abs() < 1e-12);
}

#[test]
fn critic_loss_matches_scalar_recomputation_on_hand_batch() {
    let input_dim = 7;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut critics = TwinCritics::new(input_dim, 6, 1e-3, &mut rng);
    let data: Vec<f64> = (0..5 * input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let q_in = Tensor::from_vec(&[5, input_dim], data).unwrap();
    let y: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();

    // Oracle before the update mutates the parameters.
    let oracle: f64 = (0..5)
        .map(|r| {
            let q = naive_forward(&critics.q1, q_in.row(r));
            (q - y[r]) * (q - y[r])
        })
        .sum::<f64>()
        / 5.0;

    let (l1, _) = critic_update(&mut critics, &q_in, &y).unwrap();
    assert!((l1 - oracle).abs() < 1e-10, "loss {l1} oracle {oracle}");
}

#[test]
fn critic_update_when_already_exact_has_zero_loss_and_zero_motion() {
    let input_dim = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut critics = TwinCritics::new(input_dim, 4, 1e-3, &mut rng);
    critics.q1 = constant_critic(input_dim, 1.5);
    critics.q2 = constant_critic(input_dim, 1.5);
    critics.opt1 = AdamState::new(critics.q1.params(), 1e-3);
    critics.opt2 = AdamState::new(critics.q2.params(), 1e-3);
    let before = critics.q1.flat_params();
    let q_in = Tensor::zeros(&[3, input_dim]);
    let (l1, l2) = critic_update(&mut critics, &q_in, &[1.5, 1.5, 1.5]).unwrap();
    assert_eq!(l1, 0.0);
    assert_eq!(l2, 0.0);
    assert_eq!(critics.q1.flat_params(), before);
}

#[test]
fn critic_update_rejects_non_finite_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut critics = TwinCritics::new(3, 4, 1e-3, &mut rng);
    let q_in = Tensor::zeros(&[1, 3]);
    assert!(critic_update(&mut critics, &q_in, &[f64::NAN]).is_err());
}

#[test]
fn targets_are_constants_for_the_online_update() {
    // Perturbing target networks changes y but the online gradient for a
    // fixed y is unchanged, and the update never touches the targets.
    let state_w = 6;
    let obs_w = 6;
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let mut critics = TwinCritics::new(state_w + ACTION_WIDTH, 6, 1e-3, &mut rng);
    let agents = vec![zero_vanilla_agent(obs_w)];
    let batch = hand_batch(&[0.5; 4], &[true; 4], state_w, obs_w);

    let y_a = critic_target(&batch, &critics.t1, &critics.t2, &agents, 0.0, 0.5, &mut rng.clone()).unwrap();
    let mut t1_perturbed = critics.t1.clone();
    t1_perturbed.params_mut()[5].as_mut_slice()[0] -= 10.0;
    let y_b = critic_target(&batch, &t1_perturbed, &critics.t2, &agents, 0.0, 0.5, &mut rng.clone()).unwrap();
    assert!(y_a.iter().zip(&y_b).any(|(a, b)| (a - b).abs() > 1.0));

    let t1_before = critics.t1.flat_params();
    let t2_before = critics.t2.flat_params();
    let q_in = concat_columns(&batch.state, &batch.joint_act).unwrap();
    critic_update(&mut critics, &q_in, &y_a).unwrap();
    assert_eq!(critics.t1.flat_params(), t1_before);
    assert_eq!(critics.t2.flat_params(), t2_before);
}

#[test]
fn soft_update_endpoints() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let online = Mlp::new([3, 4, 4, 2], OutputActivation::Identity, &mut rng);
    let fresh = Mlp::new([3, 4, 4, 2], OutputActivation::Identity, &mut rng);

    let mut target = fresh.clone();
    soft_update(&mut target, &online, 1.0).unwrap();
    assert_eq!(target.flat_params(), online.flat_params());

    let mut target = fresh.clone();
    soft_update(&mut target, &online, 0.0).unwrap();
    assert_eq!(target.flat_params(), fresh.flat_params());

    let mut target = Mlp::zeros([1, 1, 1, 1], OutputActivation::Identity);
    let mut ones = Mlp::zeros([1, 1, 1, 1], OutputActivation::Identity);
    for p in ones.params_mut() {
        for v in p.as_mut_slice() {
            *v = 1.0;
        }
    }
    soft_update(&mut target, &ones, 0.005).unwrap();
    assert!(target.flat_params().iter().all(|&v| (v - 0.005).abs() < 1e-15));
}

#[test]
fn soft_update_shape_mismatch_is_an_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let online = Mlp::new([3, 4, 4, 2], OutputActivation::Identity, &mut rng);
    let mut target = Mlp::zeros([3, 5, 5, 2], OutputActivation::Identity);
    assert!(soft_update(&mut target, &online, 0.5).is_err());
}

/// Constant critic => actor gradient is exactly zero.
#[test]
fn actor_update_zero_gradient_under_constant_critic() {
    let mut spec = soco_spec(2, 0.0, GatingMode::Learned, 5);
    spec.trainer.warmup_steps = 16;
    let mut trainer = Trainer::new(&spec).unwrap();
    trainer.warmup().unwrap();
    let critic_in = spec.env.state_width() + 2 * ACTION_WIDTH;
    trainer.critics.q1 = constant_critic(critic_in, 3.0);

    let gate_before = match &trainer.agents[0] {
        Agent::Fused { policy, .. } => policy.gate.net.flat_params(),
        _ => unreachable!(),
    };
    let batch = trainer
        .buffer
        .sample(8, 1, 0.99, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let loss = trainer.actor_update(0, &batch).unwrap();
    assert!((loss + 3.0).abs() < 1e-12);
    match &trainer.agents[0] {
        Agent::Fused { policy, .. } => {
            assert_eq!(policy.gate.net.flat_params(), gate_before);
        }
        _ => unreachable!(),
    }
}

/// At L = 0 the editor receives exactly zero gradient while the learned
/// gate generally moves.
#[test]
fn actor_update_zero_strength_trains_gate_only() {
    let mut spec = soco_spec(2, 0.0, GatingMode::Learned, 6);
    spec.trainer.warmup_steps = 32;
    let mut trainer = Trainer::new(&spec).unwrap();
    trainer.warmup().unwrap();
    let (gate_before, editor_before) = match &trainer.agents[0] {
        Agent::Fused { policy, .. } => {
            (policy.gate.net.flat_params(), policy.editor.net.flat_params())
        }
        _ => unreachable!(),
    };
    let batch = trainer
        .buffer
        .sample(16, 1, 0.99, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap();
    trainer.actor_update(0, &batch).unwrap();
    match &trainer.agents[0] {
        Agent::Fused { policy, .. } => {
            assert_eq!(policy.editor.net.flat_params(), editor_before);
            assert_ne!(policy.gate.net.flat_params(), gate_before);
        }
        _ => unreachable!(),
    }
}

/// Finite-difference oracle through the critic + actor composition for the
/// smooth parameter paths (vanilla actor; fused editor).
#[test]
fn actor_gradient_matches_finite_differences() {
    // Vanilla two-agent case first.
    let spec = MarlRunSpec {
        env: ParticleConfig::spread(2),
        trainer: TrainerConfig {
            batch_size: 4,
            hidden: 6,
            warmup_steps: 8,
            ..tiny_cfg()
        },
        algo: AlgoSpec::Vanilla,
        seed: 11,
    };
    let mut trainer = Trainer::new(&spec).unwrap();
    trainer.warmup().unwrap();
    let batch = trainer
        .buffer
        .sample(4, 1, 0.99, &mut ChaCha8Rng::seed_from_u64(7))
        .unwrap();

    let agent_i = 1usize;
    let sw = spec.env.state_width();
    let (net, analytic) = match &trainer.agents[agent_i] {
        Agent::Vanilla { net, .. } => {
            let cache = net.forward_train(&batch.obs[agent_i]).unwrap();
            let mut joint = batch.joint_act.clone();
            for row in 0..4 {
                joint.row_mut(row)[agent_i * ACTION_WIDTH..(agent_i + 1) * ACTION_WIDTH]
                    .copy_from_slice(cache.output().row(row));
            }
            let q_in = concat_columns(&batch.state, &joint).unwrap();
            let q_cache = trainer.critics.q1.forward_train(&q_in).unwrap();
            let upstream = Tensor::from_vec(&[4, 1], vec![-0.25; 4]).unwrap();
            let d_q_in = trainer.critics.q1.input_backward(&q_cache, &upstream).unwrap();
            let mut d_ai = Tensor::zeros(&[4, ACTION_WIDTH]);
            for row in 0..4 {
                d_ai.row_mut(row).copy_from_slice(
                    &d_q_in.row(row)[sw + agent_i * ACTION_WIDTH..sw + (agent_i + 1) * ACTION_WIDTH],
                );
            }
            let (grads, _) = net.backward(&cache, &d_ai).unwrap();
            (net.clone(), grads)
        }
        _ => unreachable!(),
    };

    let critic = trainer.critics.q1.clone();
    let mut probe = net.clone();
    let flat = net.flat_params();
    let fd = finite_diff_grad(
        &mut |p: &[f64]| {
            probe.set_flat_params(p)?;
            let out = probe.forward(&batch.obs[agent_i])?;
            let mut joint = batch.joint_act.clone();
            for row in 0..4 {
                joint.row_mut(row)[agent_i * ACTION_WIDTH..(agent_i + 1) * ACTION_WIDTH]
                    .copy_from_slice(out.row(row));
            }
            let q_in = concat_columns(&batch.state, &joint)?;
            let q = critic.forward(&q_in)?;
            Ok(-q.as_slice().iter().sum::<f64>() / 4.0)
        },
        &flat,
        1e-6,
    )
    .unwrap();
    let analytic: Vec<f64> = analytic.params.iter().flat_map(|t| t.as_slice().to_vec()).collect();
    let mut max_rel = 0.0f64;
    for (a, f) in analytic.iter().zip(&fd) {
        max_rel = max_rel.max((a - f).abs() / a.abs().max(f.abs()).max(1e-3));
    }
    assert!(max_rel < 1e-3, "vanilla actor max rel err {max_rel}");
}

#[test]
fn fused_editor_gradient_matches_finite_differences_through_critic() {
    let mut spec = soco_spec(2, 1.1, GatingMode::Learned, 13);
    spec.trainer.batch_size = 4;
    spec.trainer.hidden = 6;
    spec.trainer.warmup_steps = 8;
    let mut trainer = Trainer::new(&spec).unwrap();
    trainer.warmup().unwrap();
    let batch = trainer
        .buffer
        .sample(4, 1, 0.99, &mut ChaCha8Rng::seed_from_u64(3))
        .unwrap();

    let i = 0usize;
    let sw = spec.env.state_width();
    let cand = batch.cand.as_ref().unwrap();
    let policy = match &trainer.agents[i] {
        Agent::Fused { policy, .. } => policy.clone(),
        _ => unreachable!(),
    };

    // Analytic path, with a pinned Gumbel stream.
    let fwd = policy
        .forward_batch_train(&batch.obs[i], &cand[i], &mut ChaCha8Rng::seed_from_u64(99))
        .unwrap();
    let mut joint = batch.joint_act.clone();
    for row in 0..4 {
        joint.row_mut(row)[i * ACTION_WIDTH..(i + 1) * ACTION_WIDTH]
            .copy_from_slice(fwd.out.row(row));
    }
    let q_in = concat_columns(&batch.state, &joint).unwrap();
    let q_cache = trainer.critics.q1.forward_train(&q_in).unwrap();
    let upstream = Tensor::from_vec(&[4, 1], vec![-0.25; 4]).unwrap();
    let d_q_in = trainer.critics.q1.input_backward(&q_cache, &upstream).unwrap();
    let mut d_ai = Tensor::zeros(&[4, ACTION_WIDTH]);
    for row in 0..4 {
        d_ai.row_mut(row)
            .copy_from_slice(&d_q_in.row(row)[sw + i * ACTION_WIDTH..sw + (i + 1) * ACTION_WIDTH]);
    }
    let grads = policy.backward_batch(&fwd, &d_ai).unwrap();
    let analytic: Vec<f64> = grads
        .editor
        .unwrap()
        .params
        .iter()
        .flat_map(|t| t.as_slice().to_vec())
        .collect();

    // FD over editor parameters; the same Gumbel stream keeps the gate fixed.
    let critic = trainer.critics.q1.clone();
    let mut probe = policy.clone();
    let flat = policy.editor.net.flat_params();
    let fd = finite_diff_grad(
        &mut |p: &[f64]| {
            probe.editor.net.set_flat_params(p)?;
            let fwd =
                probe.forward_batch_train(&batch.obs[i], &cand[i], &mut ChaCha8Rng::seed_from_u64(99))?;
            let mut joint = batch.joint_act.clone();
            for row in 0..4 {
                joint.row_mut(row)[i * ACTION_WIDTH..(i + 1) * ACTION_WIDTH]
                    .copy_from_slice(fwd.out.row(row));
            }
            let q_in = concat_columns(&batch.state, &joint)?;
            let q = critic.forward(&q_in)?;
            Ok(-q.as_slice().iter().sum::<f64>() / 4.0)
        },
        &flat,
        1e-6,
    )
    .unwrap();
    let mut max_rel = 0.0f64;
    for (a, f) in analytic.iter().zip(&fd) {
        max_rel = max_rel.max((a - f).abs() / a.abs().max(f.abs()).max(1e-3));
    }
    assert!(max_rel < 1e-3, "editor max rel err {max_rel}");
}

#[test]
fn delay_discipline_counts() {
    let spec = MarlRunSpec {
        env: ParticleConfig::solo_nav(),
        trainer: TrainerConfig {
            total_steps: 10,
            eval_interval: 10,
            ..tiny_cfg()
        },
        algo: AlgoSpec::Vanilla,
        seed: 3,
    };
    let (trainer, _) = train_marl(&spec, &mut |_| Ok(())).unwrap();
    assert_eq!(trainer.critic_updates, 10);
    assert_eq!(trainer.actor_updates, 5);
}

#[test]
fn zero_step_budget_emits_single_post_warmup_row() {
    let spec = MarlRunSpec {
        env: ParticleConfig::solo_nav(),
        trainer: tiny_cfg(),
        algo: AlgoSpec::Vanilla,
        seed: 8,
    };
    let (_, rows) = train_marl(&spec, &mut |_| Ok(())).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].step, 0);
    assert_eq!(rows[0].critic_loss_1, 0.0);
}

#[test]
fn identical_seed_gives_bit_identical_metrics() {
    let spec = || MarlRunSpec {
        env: ParticleConfig::spread(2),
        trainer: TrainerConfig {
            total_steps: 40,
            eval_interval: 20,
            ..tiny_cfg()
        },
        algo: AlgoSpec::Soco {
            solo: frozen_solo(500),
            fusion: FusionParams::default(),
        },
        seed: 42,
    };
    let (_, rows_a) = train_marl(&spec(), &mut |_| Ok(())).unwrap();
    let (_, rows_b) = train_marl(&spec(), &mut |_| Ok(())).unwrap();
    assert_eq!(rows_a, rows_b);
    assert_eq!(rows_a.len(), 3);
}

#[test]
fn different_seeds_diverge() {
    let spec = |seed| MarlRunSpec {
        env: ParticleConfig::solo_nav(),
        trainer: TrainerConfig {
            total_steps: 20,
            eval_interval: 20,
            ..tiny_cfg()
        },
        algo: AlgoSpec::Vanilla,
        seed,
    };
    let (_, a) = train_marl(&spec(1), &mut |_| Ok(())).unwrap();
    let (_, b) = train_marl(&spec(2), &mut |_| Ok(())).unwrap();
    assert_ne!(a[0].mean_return, b[0].mean_return);
}

#[test]
fn frozen_solo_hash_is_invariant_across_training() {
    let spec = soco_spec(2, 0.5, GatingMode::Learned, 77);
    let mut spec = spec;
    spec.trainer.total_steps = 30;
    spec.trainer.eval_interval = 30;
    let solo_hash_before = match &spec.algo {
        AlgoSpec::Soco { solo, .. } => solo.param_hash(),
        _ => unreachable!(),
    };
    let (trainer, _) = train_marl(&spec, &mut |_| Ok(())).unwrap();
    assert_eq!(trainer.solo_hash().unwrap(), solo_hash_before);
}

#[test]
fn unfrozen_solo_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let solo = Arc::new(SoloPolicy::new(6, 8, &mut rng));
    let spec = MarlRunSpec {
        env: ParticleConfig::spread(2),
        trainer: tiny_cfg(),
        algo: AlgoSpec::Soco {
            solo,
            fusion: FusionParams::default(),
        },
        seed: 0,
    };
    assert!(Trainer::new(&spec).is_err());
}

#[test]
fn evaluate_is_deterministic_and_single_episode_has_zero_std() {
    let spec = soco_spec(2, 0.0, GatingMode::FixedByIndex, 15);
    let trainer = Trainer::new(&spec).unwrap();
    let (m1, s1, _) = evaluate(&trainer.agents, &spec.env, 5, 123).unwrap();
    let (m2, s2, _) = evaluate(&trainer.agents, &spec.env, 5, 123).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(s1, s2);

    let (_, s_one, _) = evaluate(&trainer.agents, &spec.env, 1, 9).unwrap();
    assert_eq!(s_one, 0.0);
}

#[test]
fn config_validation_rejects_bad_values() {
    let mut cfg = TrainerConfig::default();
    cfg.policy_delay = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainerConfig::default();
    cfg.gamma = 1.5;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainerConfig::default();
    cfg.batch_size = 0;
    assert!(cfg.validate().is_err());
    let mut cfg = TrainerConfig::default();
    cfg.n_step = 0;
    assert!(cfg.validate().is_err());
    let fusion = FusionParams {
        strength: -1.0,
        ..FusionParams::default()
    };
    assert!(fusion.validate().is_err());
}
