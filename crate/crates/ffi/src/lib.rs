//! C ABI for the solo-to-collaborative lab.
//!
//! Two opaque handle families are exported: `SocoEnv` wraps the particle
//! world, `SocoPolicy` wraps an evaluation-mode policy bundle loaded from a
//! checkpoint. Every fallible call returns a `SocoStatus`; the most recent
//! failure message is retrievable via [`soco_last_error`].
//!
//! # Safety
//!
//! All `extern "C"` functions follow one contract: pointer arguments must be
//! valid for the duration of the call, buffers must have the advertised
//! lengths, and handles must come from the corresponding `_create`/`_load`
//! call and must not be used after `_free`. Null pointers are caught and
//! reported rather than dereferenced; panics are caught at the boundary and
//! surfaced as `SOCO_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use soco::cli::checkpoint::{agents_from_checkpoint, load_checkpoint};
use soco::cli::RunConfig;
use soco::envs::{ParticleConfig, ParticleEnv, ACTION_WIDTH};
use soco::error::SocoError;
use soco::marl::Agent;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SocoStatus {
    SocoStatusOk = 0,
    SocoStatusNullPointer = 1,
    SocoStatusInvalidArgument = 2,
    SocoStatusMissingInput = 3,
    SocoStatusFormatError = 4,
    SocoStatusNumericError = 5,
    SocoStatusInternal = 6,
}

use SocoStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().filter(|&c| c != '\0').collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &SocoError) -> SocoStatus {
    match err {
        SocoError::MissingInput { .. } => SocoStatusMissingInput,
        SocoError::Format { .. } | SocoError::FrozenHashMismatch { .. } => SocoStatusFormatError,
        SocoError::NonFinite { .. } => SocoStatusNumericError,
        SocoError::ShapeMismatch { .. } | SocoError::Config(_) | SocoError::Invalid(_) => {
            SocoStatusInvalidArgument
        }
        SocoError::Io { .. } => SocoStatusInternal,
    }
}

fn guard<F: FnOnce() -> SocoStatus>(f: F) -> SocoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic caught at the C boundary");
            SocoStatusInternal
        }
    }
}

/// Copies the most recent error message (NUL-terminated, truncated to `len`)
/// into `buf`. Returns the full message length in bytes, excluding the NUL.
///
/// # Safety
/// `buf` must point to `len` writable bytes (or be null to query the length).
#[no_mangle]
pub unsafe extern "C" fn soco_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static version string of the library.
#[no_mangle]
pub extern "C" fn soco_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque particle-world handle.
pub struct SocoEnv {
    inner: ParticleEnv,
}

/// Opaque evaluation-policy handle: the per-agent policy bundle from a
/// checkpoint plus the episode RNG used by rule-based gating modes.
pub struct SocoPolicy {
    agents: Vec<Agent>,
    env_cfg: ParticleConfig,
    rng: ChaCha8Rng,
}

/// Creates a cooperative world with `n_agents` agents (1 = the solo
/// navigation task) and writes the handle to `out`.
///
/// # Safety
/// `out` must be a valid pointer to a `SocoEnv*`.
#[no_mangle]
pub unsafe extern "C" fn soco_env_create(
    n_agents: u32,
    seed: u64,
    out: *mut *mut SocoEnv,
) -> SocoStatus {
    guard(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return SocoStatusNullPointer;
        }
        let cfg = ParticleConfig::spread(n_agents as usize);
        match ParticleEnv::new(cfg, seed) {
            Ok(env) => {
                *out = Box::into_raw(Box::new(SocoEnv { inner: env }));
                SocoStatusOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Number of agents in the world.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn soco_env_num_agents(env: *const SocoEnv) -> u32 {
    if env.is_null() {
        return 0;
    }
    (*env).inner.config().n_agents as u32
}

/// Width of one agent's observation vector.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn soco_env_obs_width(env: *const SocoEnv) -> u32 {
    if env.is_null() {
        return 0;
    }
    (*env).inner.config().obs_width() as u32
}

/// Width of the global state vector.
///
/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn soco_env_state_width(env: *const SocoEnv) -> u32 {
    if env.is_null() {
        return 0;
    }
    (*env).inner.config().state_width() as u32
}

fn write_joint_obs(env: &ParticleEnv, obs_out: *mut f64, obs_len: usize) -> SocoStatus {
    let obs = env.observations();
    let total: usize = obs.iter().map(|o| o.len()).sum();
    if obs_len != total {
        set_error(&format!("observation buffer holds {obs_len}, need {total}"));
        return SocoStatusInvalidArgument;
    }
    let mut off = 0;
    for row in &obs {
        unsafe {
            std::ptr::copy_nonoverlapping(row.as_ptr(), obs_out.add(off), row.len());
        }
        off += row.len();
    }
    SocoStatusOk
}

/// Starts a fresh episode and writes the joint observation
/// (`n_agents * obs_width` doubles, agent-major).
///
/// # Safety
/// `env` must be a live handle; `obs_out` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn soco_env_reset(
    env: *mut SocoEnv,
    seed: u64,
    obs_out: *mut f64,
    obs_len: usize,
) -> SocoStatus {
    guard(|| {
        if env.is_null() || obs_out.is_null() {
            set_error("null handle or buffer");
            return SocoStatusNullPointer;
        }
        let env = &mut *env;
        match env.inner.reset(seed) {
            Ok(_) => write_joint_obs(&env.inner, obs_out, obs_len),
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Applies a joint action (`n_agents * 2` doubles, agent-major), then writes
/// the next joint observation, the shared reward, and the episode-end flag.
///
/// # Safety
/// All pointers must be valid; `actions` must hold `act_len` doubles and
/// `obs_out` must hold `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn soco_env_step(
    env: *mut SocoEnv,
    actions: *const f64,
    act_len: usize,
    obs_out: *mut f64,
    obs_len: usize,
    reward_out: *mut f64,
    done_out: *mut bool,
) -> SocoStatus {
    guard(|| {
        if env.is_null() || actions.is_null() || obs_out.is_null() || reward_out.is_null() || done_out.is_null()
        {
            set_error("null handle or buffer");
            return SocoStatusNullPointer;
        }
        let env = &mut *env;
        let n = env.inner.config().n_agents;
        if act_len != n * ACTION_WIDTH {
            set_error(&format!("action buffer holds {act_len}, need {}", n * ACTION_WIDTH));
            return SocoStatusInvalidArgument;
        }
        let flat = std::slice::from_raw_parts(actions, act_len);
        let joint: Vec<[f64; 2]> = (0..n).map(|i| [flat[2 * i], flat[2 * i + 1]]).collect();
        match env.inner.step(&joint) {
            Ok(outcome) => {
                *reward_out = outcome.reward;
                *done_out = outcome.done;
                write_joint_obs(&env.inner, obs_out, obs_len)
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Writes the global state (`state_width` doubles).
///
/// # Safety
/// `env` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn soco_env_global_state(
    env: *const SocoEnv,
    out: *mut f64,
    len: usize,
) -> SocoStatus {
    guard(|| {
        if env.is_null() || out.is_null() {
            set_error("null handle or buffer");
            return SocoStatusNullPointer;
        }
        let state = (*env).inner.global_state();
        if len != state.len() {
            set_error(&format!("state buffer holds {len}, need {}", state.len()));
            return SocoStatusInvalidArgument;
        }
        std::ptr::copy_nonoverlapping(state.as_ptr(), out, state.len());
        SocoStatusOk
    })
}

/// Releases an environment handle. Null is a no-op.
///
/// # Safety
/// `env` must be a handle from `soco_env_create`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn soco_env_free(env: *mut SocoEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Loads a checkpoint (any trained kind) as an evaluation policy bundle.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn soco_policy_load(path: *const c_char, out: *mut *mut SocoPolicy) -> SocoStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null path or out pointer");
            return SocoStatusNullPointer;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return SocoStatusInvalidArgument;
            }
        };
        match load_policy_bundle(Path::new(path)) {
            Ok(policy) => {
                *out = Box::into_raw(Box::new(policy));
                SocoStatusOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

fn load_policy_bundle(path: &Path) -> Result<SocoPolicy, SocoError> {
    let (tensors, trailer) = load_checkpoint(path)?;
    let cfg: RunConfig = trailer.run_config()?;
    cfg.validate()?;
    let env_cfg = cfg.env.to_particle_config()?;
    let agents = agents_from_checkpoint(&tensors, &trailer, &env_cfg, &cfg.fusion)?;
    Ok(SocoPolicy {
        agents,
        env_cfg,
        rng: ChaCha8Rng::seed_from_u64(0),
    })
}

/// Number of agents the policy controls.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn soco_policy_num_agents(policy: *const SocoPolicy) -> u32 {
    if policy.is_null() {
        return 0;
    }
    (*policy).agents.len() as u32
}

/// Observation width the policy expects per agent.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn soco_policy_obs_width(policy: *const SocoPolicy) -> u32 {
    if policy.is_null() {
        return 0;
    }
    (*policy).env_cfg.obs_width() as u32
}

/// Reseeds the per-episode randomness (episode-fixed gating draws). Call at
/// every episode start when using rule-based gating; harmless otherwise.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn soco_policy_begin_episode(policy: *mut SocoPolicy, seed: u64) -> SocoStatus {
    guard(|| {
        if policy.is_null() {
            set_error("null policy handle");
            return SocoStatusNullPointer;
        }
        let p = &mut *policy;
        p.rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rng = p.rng.clone();
        for agent in p.agents.iter_mut() {
            agent.begin_episode(&mut rng);
        }
        p.rng = rng;
        SocoStatusOk
    })
}

/// Deterministic evaluation acting: maps the joint observation
/// (`n_agents * obs_width`) to the joint action (`n_agents * 2`).
///
/// # Safety
/// `policy` must be a live handle; buffers must have the advertised lengths.
#[no_mangle]
pub unsafe extern "C" fn soco_policy_act(
    policy: *mut SocoPolicy,
    joint_obs: *const f64,
    obs_len: usize,
    actions_out: *mut f64,
    act_len: usize,
) -> SocoStatus {
    guard(|| {
        if policy.is_null() || joint_obs.is_null() || actions_out.is_null() {
            set_error("null handle or buffer");
            return SocoStatusNullPointer;
        }
        let p = &mut *policy;
        let n = p.agents.len();
        let ow = p.env_cfg.obs_width();
        if obs_len != n * ow {
            set_error(&format!("observation buffer holds {obs_len}, need {}", n * ow));
            return SocoStatusInvalidArgument;
        }
        if act_len != n * ACTION_WIDTH {
            set_error(&format!("action buffer holds {act_len}, need {}", n * ACTION_WIDTH));
            return SocoStatusInvalidArgument;
        }
        let obs = std::slice::from_raw_parts(joint_obs, obs_len);
        let mut rng = p.rng.clone();
        for (i, agent) in p.agents.iter().enumerate() {
            match agent.act(&obs[i * ow..(i + 1) * ow], &mut rng, false) {
                Ok((action, _)) => {
                    std::ptr::copy_nonoverlapping(
                        action.as_ptr(),
                        actions_out.add(i * ACTION_WIDTH),
                        ACTION_WIDTH,
                    );
                }
                Err(e) => {
                    set_error(&e.to_string());
                    return status_of(&e);
                }
            }
        }
        p.rng = rng;
        SocoStatusOk
    })
}

/// Releases a policy handle. Null is a no-op.
///
/// # Safety
/// `policy` must be a handle from `soco_policy_load`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn soco_policy_free(policy: *mut SocoPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
