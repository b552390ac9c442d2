//! Rule-based observation decomposition.
//!
//! A cooperative local observation is a fixed layout of an own-feature block
//! followed by per-entity blocks. Decomposition is pure slicing; solo views
//! recompose the own block with one landmark block each, reproducing the
//! single-agent observation layout exactly, so a policy trained on solo data
//! accepts them unchanged.

use serde::{Deserialize, Serialize};

use crate::envs::{ParticleConfig, SELF_FEATURE_WIDTH};
use crate::error::{Result, SocoError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Landmark,
    Agent,
}

/// A run of identically shaped entity features inside an observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityBlock {
    pub kind: EntityKind,
    pub width: usize,
    pub count: usize,
}

/// Declarative observation layout. Layouts are data so new environments can
/// be described in configuration rather than code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationLayout {
    pub self_width: usize,
    pub blocks: Vec<EntityBlock>,
    pub solo_view_width: usize,
}

impl ObservationLayout {
    /// Layout of the cooperative particle world: own features, K landmark
    /// offsets, N-1 other-agent offsets. One solo view per landmark.
    pub fn spread(n_agents: usize) -> Self {
        let mut blocks = vec![EntityBlock {
            kind: EntityKind::Landmark,
            width: 2,
            count: n_agents,
        }];
        if n_agents > 1 {
            blocks.push(EntityBlock {
                kind: EntityKind::Agent,
                width: 2,
                count: n_agents - 1,
            });
        }
        ObservationLayout {
            self_width: SELF_FEATURE_WIDTH,
            blocks,
            solo_view_width: SELF_FEATURE_WIDTH + 2,
        }
    }

    pub fn for_env(cfg: &ParticleConfig) -> Self {
        Self::spread(cfg.n_agents)
    }

    pub fn obs_width(&self) -> usize {
        self.self_width + self.blocks.iter().map(|b| b.width * b.count).sum::<usize>()
    }

    /// Number of solo views built from one observation (one per landmark).
    pub fn group_count(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind == EntityKind::Landmark)
            .map(|b| b.count)
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.self_width == 0 {
            return Err(SocoError::Config("layout self_width must be positive".into()));
        }
        if self.group_count() == 0 {
            return Err(SocoError::Config(
                "layout needs at least one landmark block".into(),
            ));
        }
        for b in &self.blocks {
            if b.width == 0 || b.count == 0 {
                return Err(SocoError::Config("entity blocks must be non-empty".into()));
            }
            if b.kind == EntityKind::Landmark && self.self_width + b.width != self.solo_view_width
            {
                return Err(SocoError::Config(format!(
                    "solo_view_width {} does not equal self_width {} + landmark width {}",
                    self.solo_view_width, self.self_width, b.width
                )));
            }
        }
        Ok(())
    }

    fn check_width(&self, obs: &[f64], context: &str) -> Result<()> {
        if obs.len() != self.obs_width() {
            return Err(SocoError::shape(
                context,
                format!("{}", self.obs_width()),
                format!("{}", obs.len()),
            ));
        }
        Ok(())
    }
}

/// Splits an observation into its own-feature slice and one slice per entity.
/// Concatenating the returned parts in order reconstructs the input exactly.
pub fn decompose<'a>(
    obs: &'a [f64],
    layout: &ObservationLayout,
) -> Result<(&'a [f64], Vec<(EntityKind, &'a [f64])>)> {
    layout.check_width(obs, "decompose")?;
    let own = &obs[..layout.self_width];
    let mut entities = Vec::new();
    let mut off = layout.self_width;
    for block in &layout.blocks {
        for _ in 0..block.count {
            entities.push((block.kind, &obs[off..off + block.width]));
            off += block.width;
        }
    }
    Ok((own, entities))
}

/// Builds the solo views of an observation: own features concatenated with
/// each landmark block in declaration order. Other-agent features are not
/// part of any view (the solo task has no teammates).
pub fn build_solo_views(obs: &[f64], layout: &ObservationLayout) -> Result<Vec<Vec<f64>>> {
    let (own, entities) = decompose(obs, layout)?;
    let mut views = Vec::with_capacity(layout.group_count());
    for (kind, slice) in entities {
        if kind == EntityKind::Landmark {
            let mut view = Vec::with_capacity(layout.solo_view_width);
            view.extend_from_slice(own);
            view.extend_from_slice(slice);
            views.push(view);
        }
    }
    Ok(views)
}
