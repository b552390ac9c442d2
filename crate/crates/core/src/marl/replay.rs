//! FIFO experience replay with n-step return assembly.
//!
//! Vector payloads (states, observations, actions, candidate actions) are
//! stored at 32 bits; rewards and all sampled batch tensors are 64-bit.
//! Sampled n-step windows are always temporally consecutive and truncate at
//! episode ends, in which case bootstrapping is disabled.

use rand::Rng;

use crate::error::{Result, SocoError};
use crate::numerics::Tensor;

pub struct ReplayBuffer {
    cap: usize,
    n_agents: usize,
    state_w: usize,
    obs_w: usize,
    act_w: usize,
    /// Candidate actions per agent stored alongside observations (0 = none).
    groups: usize,
    state: Vec<f32>,
    obs: Vec<f32>,
    act: Vec<f32>,
    reward: Vec<f64>,
    next_state: Vec<f32>,
    next_obs: Vec<f32>,
    done: Vec<bool>,
    cand: Vec<f32>,
    next_cand: Vec<f32>,
    len: usize,
    pos: usize,
}

/// One transition, borrowed from the caller.
pub struct TransitionRef<'a> {
    pub state: &'a [f64],
    pub obs: &'a [Vec<f64>],
    pub actions: &'a [Vec<f64>],
    pub reward: f64,
    pub next_state: &'a [f64],
    pub next_obs: &'a [Vec<f64>],
    pub done: bool,
    /// Flattened `[n_agents * groups * act_w]` candidate actions at `obs`.
    pub cand: Option<&'a [f64]>,
    /// Same layout, at `next_obs`.
    pub next_cand: Option<&'a [f64]>,
}

/// A sampled batch with assembled n-step returns.
pub struct Batch {
    pub state: Tensor,
    /// Per-agent observation tensors `[B, obs_w]`.
    pub obs: Vec<Tensor>,
    /// Joint actions `[B, n_agents * act_w]`.
    pub joint_act: Tensor,
    /// `sum_{k<n_eff} gamma^k r_{t+k}`.
    pub nstep_return: Vec<f64>,
    /// `gamma^{n_eff}` of each window.
    pub discount: Vec<f64>,
    /// False where the window ended on a terminal transition.
    pub bootstrap: Vec<bool>,
    pub next_state: Tensor,
    pub next_obs: Vec<Tensor>,
    /// Per-agent candidate tensors `[B, groups * act_w]` when stored.
    pub cand: Option<Vec<Tensor>>,
    pub next_cand: Option<Vec<Tensor>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.nstep_return.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nstep_return.is_empty()
    }
}

impl ReplayBuffer {
    pub fn new(
        cap: usize,
        n_agents: usize,
        state_w: usize,
        obs_w: usize,
        act_w: usize,
        groups: usize,
    ) -> Self {
        assert!(cap > 0 && n_agents > 0);
        ReplayBuffer {
            cap,
            n_agents,
            state_w,
            obs_w,
            act_w,
            groups,
            state: Vec::new(),
            obs: Vec::new(),
            act: Vec::new(),
            reward: Vec::new(),
            next_state: Vec::new(),
            next_obs: Vec::new(),
            done: Vec::new(),
            cand: Vec::new(),
            next_cand: Vec::new(),
            len: 0,
            pos: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn push(&mut self, t: TransitionRef<'_>) -> Result<()> {
        if t.state.len() != self.state_w
            || t.obs.len() != self.n_agents
            || t.actions.len() != self.n_agents
            || t.next_state.len() != self.state_w
            || t.next_obs.len() != self.n_agents
        {
            return Err(SocoError::shape(
                "ReplayBuffer::push",
                format!("state {} / {} agents", self.state_w, self.n_agents),
                format!("state {} / {} obs rows", t.state.len(), t.obs.len()),
            ));
        }
        if !t.reward.is_finite() {
            return Err(SocoError::non_finite("transition reward"));
        }
        let cand_w = self.n_agents * self.groups * self.act_w;
        let cand = match (self.groups, t.cand) {
            (0, _) => &[][..],
            (_, Some(c)) if c.len() == cand_w => c,
            _ => {
                return Err(SocoError::shape(
                    "ReplayBuffer::push candidates",
                    format!("{cand_w}"),
                    format!("{:?}", t.cand.map(|c| c.len())),
                ))
            }
        };
        let next_cand = match (self.groups, t.next_cand) {
            (0, _) => &[][..],
            (_, Some(c)) if c.len() == cand_w => c,
            _ => {
                return Err(SocoError::shape(
                    "ReplayBuffer::push next candidates",
                    format!("{cand_w}"),
                    format!("{:?}", t.next_cand.map(|c| c.len())),
                ))
            }
        };

        let slot = self.pos;
        if self.len < self.cap {
            // Append mode: pos always equals len here.
            write_grow(&mut self.state, t.state);
            write_rows_grow(&mut self.obs, t.obs, self.obs_w)?;
            write_rows_grow(&mut self.act, t.actions, self.act_w)?;
            self.reward.push(t.reward);
            write_grow(&mut self.next_state, t.next_state);
            write_rows_grow(&mut self.next_obs, t.next_obs, self.obs_w)?;
            self.done.push(t.done);
            write_grow(&mut self.cand, cand);
            write_grow(&mut self.next_cand, next_cand);
            self.len += 1;
        } else {
            overwrite(&mut self.state, slot, self.state_w, t.state);
            overwrite_rows(&mut self.obs, slot, self.obs_w, t.obs)?;
            overwrite_rows(&mut self.act, slot, self.act_w, t.actions)?;
            self.reward[slot] = t.reward;
            overwrite(&mut self.next_state, slot, self.state_w, t.next_state);
            overwrite_rows(&mut self.next_obs, slot, self.obs_w, t.next_obs)?;
            self.done[slot] = t.done;
            overwrite(&mut self.cand, slot, cand_w, cand);
            overwrite(&mut self.next_cand, slot, cand_w, next_cand);
        }
        self.pos = (self.pos + 1) % self.cap;
        Ok(())
    }

    /// Samples `batch_size` n-step windows uniformly over valid start slots.
    ///
    /// A window is valid when its slots are temporally consecutive (it never
    /// crosses the write head). Windows stop early at terminal transitions.
    pub fn sample<R: Rng>(
        &self,
        batch_size: usize,
        n_step: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Batch> {
        if self.len < batch_size {
            return Err(SocoError::Invalid(format!(
                "replay buffer holds {} transitions, batch needs {batch_size}",
                self.len
            )));
        }
        assert!(n_step >= 1);

        let mut starts = Vec::with_capacity(batch_size);
        let mut windows = Vec::with_capacity(batch_size);
        let mut attempts = 0usize;
        while starts.len() < batch_size {
            attempts += 1;
            if attempts > batch_size.saturating_mul(1000) {
                return Err(SocoError::Invalid(
                    "could not assemble enough valid n-step windows".into(),
                ));
            }
            let s = rng.random_range(0..self.len);
            let mut acc = 0.0;
            let mut disc = 1.0;
            let mut valid = true;
            let mut last = s;
            let mut bootstrap = true;
            for k in 0..n_step {
                let j = (s + k) % self.cap;
                if k > 0 && (j == self.pos || (self.len < self.cap && s + k >= self.len)) {
                    valid = false;
                    break;
                }
                acc += disc * self.reward[j];
                disc *= gamma;
                last = j;
                if self.done[j] {
                    bootstrap = false;
                    break;
                }
            }
            if !valid {
                continue;
            }
            starts.push(s);
            windows.push((acc, disc, last, bootstrap));
        }

        let b = batch_size;
        let mut state = Vec::with_capacity(b * self.state_w);
        let mut next_state = Vec::with_capacity(b * self.state_w);
        let mut joint_act = Vec::with_capacity(b * self.n_agents * self.act_w);
        let mut obs = vec![Vec::with_capacity(b * self.obs_w); self.n_agents];
        let mut next_obs = vec![Vec::with_capacity(b * self.obs_w); self.n_agents];
        let cw = self.groups * self.act_w;
        let mut cand = vec![Vec::with_capacity(b * cw); self.n_agents];
        let mut next_cand = vec![Vec::with_capacity(b * cw); self.n_agents];
        let mut nstep_return = Vec::with_capacity(b);
        let mut discount = Vec::with_capacity(b);
        let mut bootstrap = Vec::with_capacity(b);

        for (&s, &(acc, disc, last, boot)) in starts.iter().zip(&windows) {
            extend_f64(&mut state, &self.state[s * self.state_w..(s + 1) * self.state_w]);
            extend_f64(
                &mut joint_act,
                &self.act[s * self.n_agents * self.act_w..(s + 1) * self.n_agents * self.act_w],
            );
            extend_f64(
                &mut next_state,
                &self.next_state[last * self.state_w..(last + 1) * self.state_w],
            );
            for i in 0..self.n_agents {
                let ow = self.obs_w;
                let base = (s * self.n_agents + i) * ow;
                extend_f64(&mut obs[i], &self.obs[base..base + ow]);
                let nbase = (last * self.n_agents + i) * ow;
                extend_f64(&mut next_obs[i], &self.next_obs[nbase..nbase + ow]);
                if self.groups > 0 {
                    let cbase = (s * self.n_agents + i) * cw;
                    extend_f64(&mut cand[i], &self.cand[cbase..cbase + cw]);
                    let ncbase = (last * self.n_agents + i) * cw;
                    extend_f64(&mut next_cand[i], &self.next_cand[ncbase..ncbase + cw]);
                }
            }
            nstep_return.push(acc);
            discount.push(disc);
            bootstrap.push(boot);
        }

        let tensorize = |data: Vec<f64>, w: usize| Tensor::from_vec(&[b, w], data);
        Ok(Batch {
            state: tensorize(state, self.state_w)?,
            obs: obs
                .into_iter()
                .map(|o| tensorize(o, self.obs_w))
                .collect::<Result<_>>()?,
            joint_act: tensorize(joint_act, self.n_agents * self.act_w)?,
            nstep_return,
            discount,
            bootstrap,
            next_state: tensorize(next_state, self.state_w)?,
            next_obs: next_obs
                .into_iter()
                .map(|o| tensorize(o, self.obs_w))
                .collect::<Result<_>>()?,
            cand: if self.groups > 0 {
                Some(cand.into_iter().map(|c| tensorize(c, cw)).collect::<Result<_>>()?)
            } else {
                None
            },
            next_cand: if self.groups > 0 {
                Some(
                    next_cand
                        .into_iter()
                        .map(|c| tensorize(c, cw))
                        .collect::<Result<_>>()?,
                )
            } else {
                None
            },
        })
    }
}

fn extend_f64(dst: &mut Vec<f64>, src: &[f32]) {
    dst.extend(src.iter().map(|&v| v as f64));
}

fn write_grow(dst: &mut Vec<f32>, src: &[f64]) {
    dst.extend(src.iter().map(|&v| v as f32));
}

fn write_rows_grow(dst: &mut Vec<f32>, rows: &[Vec<f64>], width: usize) -> Result<()> {
    for r in rows {
        if r.len() != width {
            return Err(SocoError::shape("replay row", format!("{width}"), format!("{}", r.len())));
        }
        dst.extend(r.iter().map(|&v| v as f32));
    }
    Ok(())
}

fn overwrite(dst: &mut [f32], slot: usize, width: usize, src: &[f64]) {
    for (d, &s) in dst[slot * width..(slot + 1) * width].iter_mut().zip(src) {
        *d = s as f32;
    }
}

fn overwrite_rows(dst: &mut [f32], slot: usize, width: usize, rows: &[Vec<f64>]) -> Result<()> {
    let n = rows.len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(SocoError::shape("replay row", format!("{width}"), format!("{}", r.len())));
        }
        for (d, &s) in dst[(slot * n + i) * width..(slot * n + i + 1) * width]
            .iter_mut()
            .zip(r)
        {
            *d = s as f32;
        }
    }
    Ok(())
}
