//! JSON run configuration with per-module sections.
//!
//! Every field has a baked-in default, so a minimal file names only the
//! environment, the stage, and a seed. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demos::BcParams;
use crate::envs::ParticleConfig;
use crate::error::{Result, SocoError};
use crate::marl::{FusionParams, TrainerConfig};

pub const STAGES: [&str; 6] = [
    "train-solo",
    "collect-demos",
    "train-bc",
    "train-marl",
    "eval",
    "demo-stats",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    /// `spread` or `solonav`.
    pub id: String,
    pub n_agents: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            id: "spread".into(),
            n_agents: 3,
        }
    }
}

impl EnvSection {
    pub fn to_particle_config(&self) -> Result<ParticleConfig> {
        match self.id.as_str() {
            "spread" => Ok(ParticleConfig::spread(self.n_agents)),
            "solonav" => {
                if self.n_agents != 1 {
                    return Err(SocoError::Config(
                        "solonav is a single-agent environment".into(),
                    ));
                }
                Ok(ParticleConfig::solo_nav())
            }
            other => Err(SocoError::Config(format!("unknown environment id {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    /// Number of (observation, action) pairs to record.
    pub count: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection { count: 100_000 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub demos: Option<PathBuf>,
    pub expert_checkpoint: Option<PathBuf>,
    pub solo_checkpoint: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    pub metrics_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Optional stage pin; when present it must match the subcommand.
    pub stage: Option<String>,
    pub env: EnvSection,
    pub trainer: TrainerConfig,
    pub fusion: FusionParams,
    pub bc: BcParams,
    pub collect: CollectSection,
    pub paths: PathsSection,
    pub seed: u64,
    /// Convenience list: one sequential run per seed plus an aggregate file.
    pub seeds: Option<Vec<u64>>,
    /// Cooperative algorithm: true trains fused policies on a frozen solo
    /// policy, false trains the from-scratch baseline.
    pub soco: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            stage: None,
            env: EnvSection::default(),
            trainer: TrainerConfig::default(),
            fusion: FusionParams::default(),
            bc: BcParams::default(),
            collect: CollectSection::default(),
            paths: PathsSection::default(),
            seed: 0,
            seeds: None,
            soco: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        if !path.exists() {
            return Err(SocoError::MissingInput {
                path: path.to_path_buf(),
            });
        }
        let text = std::fs::read_to_string(path).map_err(|e| SocoError::io("read config", e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| SocoError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(stage) = &self.stage {
            if !STAGES.contains(&stage.as_str()) {
                return Err(SocoError::Config(format!("unknown stage {stage}")));
            }
        }
        self.env.to_particle_config()?.validate()?;
        self.trainer.validate()?;
        self.fusion.validate()?;
        if self.bc.steps == 0 && self.bc.batch_size == 0 {
            return Err(SocoError::Config("behavior cloning needs a budget".into()));
        }
        if self.bc.batch_size == 0 || self.bc.hidden == 0 || !(self.bc.learning_rate > 0.0) {
            return Err(SocoError::Config("invalid behavior-cloning section".into()));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(SocoError::Config("seeds list must be non-empty".into()));
            }
        }
        Ok(())
    }

    pub fn check_stage(&self, subcommand: &str) -> Result<()> {
        if let Some(stage) = &self.stage {
            if stage != subcommand {
                return Err(SocoError::Config(format!(
                    "config pins stage {stage} but the {subcommand} subcommand was invoked"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"stage": "train-marl", "env": {"id": "spread", "n_agents": 3}, "seed": 7}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.trainer.batch_size, 1000);
        assert_eq!(cfg.trainer.hidden, 128);
        assert_eq!(cfg.trainer.buffer_capacity, 1_000_000);
        assert_eq!(cfg.fusion.strength, 0.0);
        cfg.check_stage("train-marl").unwrap();
        assert!(cfg.check_stage("eval").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "learning_rate_typo": 3}"#).unwrap();
        assert!(matches!(
            RunConfig::load(&path),
            Err(SocoError::Config(_))
        ));
        std::fs::write(&path, r#"{"trainer": {"batch_sise": 10}}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn invalid_numeric_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"trainer": {"gamma": 2.0}}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
        std::fs::write(&path, r#"{"fusion": {"strength": -0.5}}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
        std::fs::write(&path, r#"{"env": {"id": "mujoco", "n_agents": 2}}"#).unwrap();
        assert!(RunConfig::load(&path).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig::default();
        let v = cfg.to_json();
        let back: RunConfig = serde_json::from_value(v).unwrap();
        back.validate().unwrap();
        assert_eq!(back.trainer.batch_size, cfg.trainer.batch_size);
    }

    #[test]
    fn missing_config_is_missing_input() {
        assert!(matches!(
            RunConfig::load(Path::new("/no/such/config.json")),
            Err(SocoError::MissingInput { .. })
        ));
    }
}
