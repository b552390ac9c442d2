//! Native cooperative particle world.
//!
//! `Spread`: N agents and K = N landmarks on a bounded 2D plane; agents must
//! cover distinct landmarks while avoiding collisions. `SoloNav` is the same
//! world with a single agent and a single landmark, so its observation layout
//! is exactly the cooperative layout restricted to N = 1 — which is what makes
//! the solo-view decomposition lossless.
//!
//! Dynamics are a damped double integrator: `v <- (1-d)v + a*dt/m`,
//! `p <- p + v*dt` with `d = 0.25`, `dt = 0.1`, `m = 1`. Collisions are
//! penalized in the reward but do not affect motion. Episodes run a fixed
//! horizon of 25 steps.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SocoError};

/// Planar force action, componentwise in [-1, 1].
pub const ACTION_WIDTH: usize = 2;
/// Leading own-feature block of every observation: velocity then position.
pub const SELF_FEATURE_WIDTH: usize = 4;

const RESAMPLE_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleConfig {
    pub n_agents: usize,
    pub horizon: u32,
    pub dt: f64,
    pub damping: f64,
    pub mass: f64,
    pub agent_radius: f64,
    pub landmark_radius: f64,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        ParticleConfig {
            n_agents: 3,
            horizon: 25,
            dt: 0.1,
            damping: 0.25,
            mass: 1.0,
            agent_radius: 0.15,
            landmark_radius: 0.05,
        }
    }
}

impl ParticleConfig {
    pub fn spread(n_agents: usize) -> Self {
        ParticleConfig {
            n_agents,
            ..ParticleConfig::default()
        }
    }

    /// Single agent, single landmark; observation width 6.
    pub fn solo_nav() -> Self {
        Self::spread(1)
    }

    pub fn n_landmarks(&self) -> usize {
        self.n_agents
    }

    /// `4 + 2K + 2(N-1)`: own features, landmark offsets, other-agent offsets.
    pub fn obs_width(&self) -> usize {
        SELF_FEATURE_WIDTH + 2 * self.n_landmarks() + 2 * (self.n_agents - 1)
    }

    /// Global state: all positions, then all velocities, then all landmarks.
    pub fn state_width(&self) -> usize {
        4 * self.n_agents + 2 * self.n_landmarks()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 1 {
            return Err(SocoError::Config("n_agents must be >= 1".into()));
        }
        if !(self.dt > 0.0) || !(self.mass > 0.0) {
            return Err(SocoError::Config("dt and mass must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(SocoError::Config("damping must lie in [0, 1)".into()));
        }
        if self.horizon == 0 {
            return Err(SocoError::Config("horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Full simulator state.
#[derive(Debug, Clone)]
pub struct SpreadState {
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
    pub landmarks: Vec<[f64; 2]>,
    pub t: u32,
}

/// Result of one simulator step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observations: Vec<Vec<f64>>,
    /// Shared reward `R_t` (sum of per-agent rewards).
    pub reward: f64,
    pub agent_rewards: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ParticleEnv {
    cfg: ParticleConfig,
    state: SpreadState,
}

impl ParticleEnv {
    /// Builds and resets the environment.
    pub fn new(cfg: ParticleConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut env = ParticleEnv {
            cfg,
            state: SpreadState {
                positions: Vec::new(),
                velocities: Vec::new(),
                landmarks: Vec::new(),
                t: 0,
            },
        };
        env.reset(seed)?;
        Ok(env)
    }

    pub fn config(&self) -> &ParticleConfig {
        &self.cfg
    }

    pub fn state(&self) -> &SpreadState {
        &self.state
    }

    /// Fresh episode: agents and landmarks i.i.d. uniform in [-1, 1]^2, with
    /// landmarks rejection-resampled until pairwise separation exceeds the
    /// landmark diameter. Velocities zero.
    pub fn reset(&mut self, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.cfg.n_agents;
        let k = self.cfg.n_landmarks();

        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            positions.push([rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        }

        let min_sep = 2.0 * self.cfg.landmark_radius;
        let mut landmarks: Vec<[f64; 2]> = Vec::with_capacity(k);
        let mut attempts = 0;
        while landmarks.len() < k {
            let cand = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let clear = landmarks
                .iter()
                .all(|l| dist(*l, cand) > min_sep);
            if clear {
                landmarks.push(cand);
            } else {
                attempts += 1;
                if attempts >= RESAMPLE_ATTEMPTS {
                    return Err(SocoError::Invalid(format!(
                        "landmark placement failed after {RESAMPLE_ATTEMPTS} attempts"
                    )));
                }
            }
        }

        self.state = SpreadState {
            positions,
            velocities: vec![[0.0, 0.0]; n],
            landmarks,
            t: 0,
        };
        Ok(self.observations())
    }

    /// Applies the joint action. Out-of-range components are clamped with a
    /// warning; non-finite components are an error.
    pub fn step(&mut self, actions: &[[f64; 2]]) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        if actions.len() != cfg.n_agents {
            return Err(SocoError::shape(
                "spread_step actions",
                format!("{} agents", cfg.n_agents),
                format!("{}", actions.len()),
            ));
        }
        for (i, a) in actions.iter().enumerate() {
            for (c, &v) in a.iter().enumerate() {
                if !v.is_finite() {
                    return Err(SocoError::non_finite(format!(
                        "action[{i}][{c}] in spread_step"
                    )));
                }
                if !(-1.0..=1.0).contains(&v) {
                    log::warn!("clamping out-of-range action component {v} for agent {i}");
                }
            }
        }

        let accel_scale = cfg.dt / cfg.mass;
        for i in 0..cfg.n_agents {
            let a = [actions[i][0].clamp(-1.0, 1.0), actions[i][1].clamp(-1.0, 1.0)];
            let v = &mut self.state.velocities[i];
            v[0] = (1.0 - cfg.damping) * v[0] + a[0] * accel_scale;
            v[1] = (1.0 - cfg.damping) * v[1] + a[1] * accel_scale;
            self.state.positions[i][0] += v[0] * cfg.dt;
            self.state.positions[i][1] += v[1] * cfg.dt;
        }
        self.state.t += 1;

        let radii = vec![cfg.agent_radius; cfg.n_agents];
        let (reward, agent_rewards) =
            spread_reward(&self.state.positions, &self.state.landmarks, &radii);
        Ok(StepOutcome {
            observations: self.observations(),
            reward,
            agent_rewards,
            done: self.state.t >= cfg.horizon,
        })
    }

    /// Local observation of each agent:
    /// `[self vel(2), self pos(2), landmark offsets(2K), other-agent offsets(2(N-1))]`,
    /// landmarks by index, other agents by ascending index skipping self.
    pub fn observations(&self) -> Vec<Vec<f64>> {
        (0..self.cfg.n_agents).map(|i| self.observe(i)).collect()
    }

    fn observe(&self, i: usize) -> Vec<f64> {
        let st = &self.state;
        let mut obs = Vec::with_capacity(self.cfg.obs_width());
        obs.extend_from_slice(&st.velocities[i]);
        obs.extend_from_slice(&st.positions[i]);
        let p = st.positions[i];
        for l in &st.landmarks {
            obs.push(l[0] - p[0]);
            obs.push(l[1] - p[1]);
        }
        for (j, q) in st.positions.iter().enumerate() {
            if j != i {
                obs.push(q[0] - p[0]);
                obs.push(q[1] - p[1]);
            }
        }
        obs
    }

    /// Centralized-critic state: all positions, all velocities, all landmarks.
    pub fn global_state(&self) -> Vec<f64> {
        let st = &self.state;
        let mut out = Vec::with_capacity(self.cfg.state_width());
        for p in &st.positions {
            out.extend_from_slice(p);
        }
        for v in &st.velocities {
            out.extend_from_slice(v);
        }
        for l in &st.landmarks {
            out.extend_from_slice(l);
        }
        out
    }
}

/// Reward decomposition.
///
/// `r_global = -sum_k min_j ||p_j - l_k||`, `r_local_i = -C_i` where `C_i`
/// counts other agents within the sum of the pair's radii, and each agent
/// receives `r_i = (r_global + r_local_i) / 2`. The shared reward is the sum
/// of the per-agent rewards.
pub fn spread_reward(
    positions: &[[f64; 2]],
    landmarks: &[[f64; 2]],
    radii: &[f64],
) -> (f64, Vec<f64>) {
    assert_eq!(positions.len(), radii.len());
    let r_global: f64 = -landmarks
        .iter()
        .map(|l| {
            positions
                .iter()
                .map(|p| dist(*p, *l))
                .fold(f64::INFINITY, f64::min)
        })
        .sum::<f64>();

    let n = positions.len();
    let mut collisions = vec![0u32; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dist(positions[i], positions[j]) < radii[i] + radii[j] {
                collisions[i] += 1;
                collisions[j] += 1;
            }
        }
    }

    let agent_rewards: Vec<f64> = collisions
        .iter()
        .map(|&c| 0.5 * (r_global - c as f64))
        .collect();
    let total = agent_rewards.iter().sum();
    (total, agent_rewards)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic() {
        let mut a = ParticleEnv::new(ParticleConfig::spread(3), 11).unwrap();
        let mut b = ParticleEnv::new(ParticleConfig::spread(3), 11).unwrap();
        let oa = a.reset(99).unwrap();
        let ob = b.reset(99).unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.state().positions, b.state().positions);
        assert_eq!(a.state().landmarks, b.state().landmarks);
    }

    #[test]
    fn observation_widths() {
        let env3 = ParticleEnv::new(ParticleConfig::spread(3), 0).unwrap();
        assert_eq!(env3.config().obs_width(), 14);
        assert_eq!(env3.observations()[0].len(), 14);
        assert_eq!(env3.state().landmarks.len(), 3);

        let env5 = ParticleEnv::new(ParticleConfig::spread(5), 0).unwrap();
        assert_eq!(env5.config().obs_width(), 22);

        let solo = ParticleEnv::new(ParticleConfig::solo_nav(), 0).unwrap();
        assert_eq!(solo.config().obs_width(), 6);
    }

    #[test]
    fn zero_action_zero_velocity_keeps_position() {
        let mut env = ParticleEnv::new(ParticleConfig::spread(2), 5).unwrap();
        let before = env.state().positions.clone();
        env.step(&[[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(env.state().positions, before);
    }

    #[test]
    fn damped_double_integrator_hand_values() {
        let mut env = ParticleEnv::new(ParticleConfig::solo_nav(), 5).unwrap();
        let p0 = env.state().positions[0];
        env.state.velocities[0] = [1.0, 0.0];
        env.step(&[[0.0, 0.0]]).unwrap();
        assert!((env.state().velocities[0][0] - 0.75).abs() < 1e-15);
        assert!((env.state().positions[0][0] - (p0[0] + 0.075)).abs() < 1e-15);
        assert_eq!(env.state().positions[0][1], p0[1]);
    }

    #[test]
    fn episode_terminates_at_horizon() {
        let mut env = ParticleEnv::new(ParticleConfig::solo_nav(), 1).unwrap();
        for t in 1..=25 {
            let out = env.step(&[[0.1, -0.1]]).unwrap();
            assert_eq!(out.done, t == 25, "step {t}");
        }
    }

    #[test]
    fn reward_three_four_five_triangle() {
        let (total, per) = spread_reward(&[[0.0, 0.0]], &[[3.0, 4.0]], &[0.15]);
        assert!((per[0] - (-2.5)).abs() < 1e-12);
        assert!((total - (-2.5)).abs() < 1e-12);
    }

    #[test]
    fn reward_zero_when_covered_and_clear() {
        let (total, per) = spread_reward(
            &[[0.0, 0.0], [1.0, 1.0]],
            &[[0.0, 0.0], [1.0, 1.0]],
            &[0.15, 0.15],
        );
        assert_eq!(total, 0.0);
        assert!(per.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn collision_counting_is_symmetric() {
        let (_, per) = spread_reward(
            &[[0.0, 0.0], [0.2, 0.0]],
            &[[0.0, 0.0], [0.2, 0.0]],
            &[0.15, 0.15],
        );
        // r_global = 0, each agent has one collision: r_i = -1/2.
        assert!((per[0] - (-0.5)).abs() < 1e-12);
        assert!((per[1] - (-0.5)).abs() < 1e-12);
    }

    #[test]
    fn shared_reward_is_sum_of_agent_rewards() {
        let mut env = ParticleEnv::new(ParticleConfig::spread(4), 3).unwrap();
        for _ in 0..25 {
            let out = env
                .step(&[[0.3, -0.2], [-1.0, 1.0], [0.0, 0.5], [0.9, 0.9]])
                .unwrap();
            let sum: f64 = out.agent_rewards.iter().sum();
            assert!((out.reward - sum).abs() < 1e-12);
            assert!(out.reward <= 0.0);
        }
    }

    #[test]
    fn trajectories_bitwise_deterministic() {
        let run = |seed| {
            let mut env = ParticleEnv::new(ParticleConfig::spread(3), seed).unwrap();
            let mut log = Vec::new();
            for t in 0..25 {
                let phase = t as f64 * 0.3;
                let acts = [
                    [phase.sin(), phase.cos()],
                    [-phase.cos(), 0.5],
                    [0.2, -phase.sin()],
                ];
                let out = env.step(&acts).unwrap();
                log.push((out.reward, out.observations));
            }
            log
        };
        assert_eq!(run(17), run(17));
    }

    #[test]
    fn out_of_range_action_is_clamped_not_fatal() {
        let mut env = ParticleEnv::new(ParticleConfig::solo_nav(), 2).unwrap();
        env.step(&[[7.0, -9.0]]).unwrap();
        let v = env.state().velocities[0];
        assert!((v[0] - 0.1).abs() < 1e-15);
        assert!((v[1] + 0.1).abs() < 1e-15);
    }

    #[test]
    fn non_finite_action_is_an_error() {
        let mut env = ParticleEnv::new(ParticleConfig::solo_nav(), 2).unwrap();
        assert!(env.step(&[[f64::NAN, 0.0]]).is_err());
    }

    #[test]
    fn landmarks_respect_min_separation() {
        for seed in 0..20 {
            let env = ParticleEnv::new(ParticleConfig::spread(5), seed).unwrap();
            let lm = &env.state().landmarks;
            for i in 0..lm.len() {
                for j in (i + 1)..lm.len() {
                    assert!(dist(lm[i], lm[j]) > 0.1);
                }
            }
        }
    }

    #[test]
    fn global_state_layout() {
        let env = ParticleEnv::new(ParticleConfig::spread(2), 8).unwrap();
        let s = env.global_state();
        assert_eq!(s.len(), env.config().state_width());
        assert_eq!(&s[0..2], &env.state().positions[0]);
        assert_eq!(&s[4..6], &env.state().velocities[0]);
        assert_eq!(&s[8..10], &env.state().landmarks[0]);
    }
}
