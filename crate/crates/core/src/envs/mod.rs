//! Gridworlds and CartPole behind one flat-observation interface.

mod cartpole;
mod gridworld;

pub use cartpole::{CartPoleSpec, CartPoleState};
pub use gridworld::{AgentStart, GridGenParams, GridObject, GridState, GridworldSpec, Pos, OBJECT_CLASSES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvInstance {
    Gridworld(GridworldSpec),
    Cartpole(CartPoleSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvState {
    Gridworld(GridState),
    Cartpole(CartPoleState),
}

impl EnvState {
    pub fn steps(&self) -> usize {
        match self {
            EnvState::Gridworld(s) => s.steps,
            EnvState::Cartpole(s) => s.steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    GridId,
    GridOod,
    Cartpole,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::GridId => "grid_id",
            EnvKind::GridOod => "grid_ood",
            EnvKind::Cartpole => "cartpole",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvDistribution {
    pub kind: EnvKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridGenParams>,
}

impl EnvDistribution {
    pub fn grid_id() -> Self {
        Self {
            kind: EnvKind::GridId,
            grid: Some(GridGenParams::in_distribution()),
        }
    }

    pub fn grid_ood() -> Self {
        Self {
            kind: EnvKind::GridOod,
            grid: Some(GridGenParams::out_of_distribution()),
        }
    }

    pub fn cartpole() -> Self {
        Self {
            kind: EnvKind::Cartpole,
            grid: None,
        }
    }

    pub fn from_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::GridId => Self::grid_id(),
            EnvKind::GridOod => Self::grid_ood(),
            EnvKind::Cartpole => Self::cartpole(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, &self.grid) {
            (EnvKind::Cartpole, _) => Ok(()),
            (_, Some(g)) => g.validate(),
            (k, None) => Err(Error::Config(format!("{} needs generator parameters", k.name()))),
        }
    }
}

/// True when the two generators cannot produce the same grid shape and
/// object count, i.e. their size or object-count ranges do not overlap.
pub fn generators_disjoint(a: &GridGenParams, b: &GridGenParams) -> bool {
    let apart = |lo1: usize, hi1: usize, lo2: usize, hi2: usize| hi1 < lo2 || hi2 < lo1;
    apart(a.size_min, a.size_max, b.size_min, b.size_max)
        || apart(a.objects_min, a.objects_max, b.objects_min, b.objects_max)
        || a.episode_cap != b.episode_cap
}

pub fn sample_env(dist: &EnvDistribution, rng: &mut RngStream) -> Result<EnvInstance> {
    dist.validate()?;
    match (dist.kind, &dist.grid) {
        (EnvKind::Cartpole, _) => Ok(EnvInstance::Cartpole(CartPoleSpec::default())),
        (_, Some(g)) => Ok(EnvInstance::Gridworld(g.sample(rng)?)),
        _ => unreachable!(),
    }
}

impl EnvInstance {
    pub fn obs_dim(&self) -> usize {
        match self {
            EnvInstance::Gridworld(g) => g.obs_dim(),
            EnvInstance::Cartpole(_) => CartPoleSpec::OBS_DIM,
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            EnvInstance::Gridworld(_) => 4,
            EnvInstance::Cartpole(_) => 2,
        }
    }

    pub fn max_episode_steps(&self) -> usize {
        match self {
            EnvInstance::Gridworld(g) => g.max_episode_steps,
            EnvInstance::Cartpole(c) => c.max_episode_steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EnvInstance::Gridworld(g) => g.validate(),
            EnvInstance::Cartpole(_) => Ok(()),
        }
    }

    pub fn reset_into(&self, rng: &mut RngStream, obs: &mut [f64]) -> EnvState {
        match self {
            EnvInstance::Gridworld(g) => {
                let s = g.reset(rng);
                g.write_obs(&s, obs);
                EnvState::Gridworld(s)
            }
            EnvInstance::Cartpole(c) => {
                let s = c.reset(rng);
                obs.copy_from_slice(&s.as_array());
                EnvState::Cartpole(s)
            }
        }
    }

    /// In-place step writing the next observation into `obs`.
    pub fn step_into(&self, state: &mut EnvState, action: usize, obs: &mut [f64]) -> Result<(f64, bool)> {
        match (self, state) {
            (EnvInstance::Gridworld(g), EnvState::Gridworld(s)) => {
                let out = g.step(s, action)?;
                g.write_obs(s, obs);
                Ok(out)
            }
            (EnvInstance::Cartpole(c), EnvState::Cartpole(s)) => {
                let out = c.step(s, action)?;
                obs.copy_from_slice(&s.as_array());
                Ok(out)
            }
            _ => Err(Error::Contract("environment state does not match instance".into())),
        }
    }

    /// Gridworld specs as pretty JSON.
    pub fn dump(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(text: &str) -> Result<Self> {
        let inst: Self = serde_json::from_str(text)?;
        inst.validate()?;
        Ok(inst)
    }
}

pub fn env_reset(instance: &EnvInstance, rng: &mut RngStream) -> (EnvState, Vec<f64>) {
    let mut obs = vec![0.0; instance.obs_dim()];
    let s = instance.reset_into(rng, &mut obs);
    (s, obs)
}

/// Both environments are deterministic given the state; `rng` is accepted
/// for interface uniformity and left untouched.
pub fn env_step(
    instance: &EnvInstance,
    state: &EnvState,
    action: usize,
    _rng: &mut RngStream,
) -> Result<(EnvState, Vec<f64>, f64, bool)> {
    let mut next = state.clone();
    let mut obs = vec![0.0; instance.obs_dim()];
    let (r, done) = instance.step_into(&mut next, action, &mut obs)?;
    Ok((next, obs, r, done))
}
