use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    pub n_steps: usize,
    pub total_timesteps: usize,
    pub n_minibatches: usize,
    pub n_epochs: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub vf_coef: f64,
    pub ent_coef: f64,
    pub max_grad_norm: f64,
    #[serde(default)]
    pub agent: AgentSpec,
}

impl PpoConfig {
    /// Standard CartPole PPO settings.
    pub fn cartpole() -> Self {
        Self {
            n_envs: 4,
            n_steps: 128,
            total_timesteps: 500_000,
            n_minibatches: 4,
            n_epochs: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
            max_grad_norm: 0.5,
            agent: AgentSpec::default(),
        }
    }

    /// Short-horizon setting for gridworld inner loops.
    pub fn gridworld() -> Self {
        Self {
            n_envs: 8,
            n_steps: 32,
            total_timesteps: 16_384,
            n_minibatches: 4,
            n_epochs: 4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            vf_coef: 0.5,
            ent_coef: 0.01,
            max_grad_norm: 0.5,
            agent: AgentSpec {
                hidden: vec![32],
                activation: Activation::Relu,
            },
        }
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.n_steps
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.n_minibatches
    }

    pub fn n_cycles(&self) -> usize {
        self.total_timesteps.div_ceil(self.batch_size())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_envs == 0 || self.n_steps == 0 || self.n_minibatches == 0 || self.n_epochs == 0 {
            return bad("n_envs, n_steps, n_minibatches and n_epochs must be >= 1".into());
        }
        if self.batch_size() % self.n_minibatches != 0 {
            return bad(format!(
                "n_envs * n_steps = {} is not divisible by n_minibatches = {}",
                self.batch_size(),
                self.n_minibatches
            ));
        }
        if self.total_timesteps < self.batch_size() {
            return bad(format!(
                "total_timesteps {} is below one rollout of {}",
                self.total_timesteps,
                self.batch_size()
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must lie in [0, 1], got {}", self.gae_lambda));
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be > 0".into());
        }
        if !(self.vf_coef >= 0.0 && self.ent_coef >= 0.0) {
            return bad("loss coefficients must be >= 0".into());
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be > 0".into());
        }
        self.agent.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for AgentSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

impl AgentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("agent needs at least one non-empty hidden layer".into()));
        }
        if self.activation == Activation::Identity {
            return Err(Error::Config("agent hidden activation cannot be identity".into()));
        }
        Ok(())
    }
}
