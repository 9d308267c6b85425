use std::collections::VecDeque;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::PpoConfig;
use super::gae::{compute_gae, normalize_advantages, RolloutBatch};
use super::loss::{log_softmax, ppo_total_loss, Agent, LossCoefs, Minibatch};
use crate::envs::{sample_env, EnvDistribution, EnvInstance, EnvState};
use crate::error::{Error, Result};
use crate::learnedalgos::{
    apply_update_rule, layer_proportions, parameter_dormancy, DriftFunction, PreparedDrift, UpdateContext,
    UpdateRule, UpdateRuleKind,
};
use crate::numcore::{forward_batch, RngStream};

/// Completed episodes averaged at each logging point.
pub const RETURN_WINDOW: usize = 64;

const TRAIN_STREAM: u64 = 0x7261_696e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSource {
    Instance(EnvInstance),
    /// A fresh instance is drawn per training run from the run's seed.
    Distribution(EnvDistribution),
}

impl From<EnvInstance> for EnvSource {
    fn from(i: EnvInstance) -> Self {
        EnvSource::Instance(i)
    }
}

impl From<EnvDistribution> for EnvSource {
    fn from(d: EnvDistribution) -> Self {
        EnvSource::Distribution(d)
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub final_params: Agent,
    /// `(env_steps, mean episodic return)` after every update cycle.
    pub return_curve: Vec<(usize, f64)>,
    /// Last curve value, or negative infinity when training diverged.
    pub final_return: f64,
    pub diverged: bool,
    pub divergence_reason: Option<String>,
    pub env_steps: usize,
    pub n_updates: usize,
    pub masked_samples: usize,
    pub drift_violations: usize,
    pub wall_time_s: f64,
}

impl TrainResult {
    /// Fitness used for ranking: the final return, with divergence mapped to
    /// negative infinity.
    pub fn fitness(&self) -> f64 {
        if self.diverged {
            f64::NEG_INFINITY
        } else {
            self.final_return
        }
    }
}

fn sample_categorical(logp: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return i;
        }
    }
    logp.len() - 1
}

struct Workers {
    states: Vec<EnvState>,
    rngs: Vec<RngStream>,
    obs: Vec<f64>,
    ep_return: Vec<f64>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_) | Error::Training(_))
}

/// PPO-style training with a pluggable drift and update rule.
///
/// Runs `ceil(total_timesteps / (n_envs * n_steps))` cycles of rollout,
/// advantage estimation and `n_epochs x n_minibatches` updates. Episodes are
/// reset automatically; hitting the step cap counts as termination. The
/// result is a pure function of the arguments.
pub fn train_agent(
    cfg: &PpoConfig,
    env: &EnvSource,
    drift: &DriftFunction,
    rule: &UpdateRuleKind,
    seed: u64,
) -> Result<TrainResult> {
    cfg.validate()?;
    let start = Instant::now();
    let root = RngStream::new(seed, TRAIN_STREAM);
    let instance = match env {
        EnvSource::Instance(i) => {
            i.validate()?;
            i.clone()
        }
        EnvSource::Distribution(d) => sample_env(d, &mut root.derive(0))?,
    };
    let prepared = PreparedDrift::new(drift)?;
    let obs_dim = instance.obs_dim();
    let k = instance.n_actions();
    let mut agent = Agent::new(&cfg.agent, obs_dim, k, &mut root.derive(1))?;
    let mut rule = UpdateRule::new(rule.clone(), agent.n_params())?;
    let mut shuffle_rng = root.derive(3);
    let mut noise_rng = root.derive(4);
    let l_p = if rule.kind.needs_context() {
        let mut v = layer_proportions(&agent.actor);
        v.extend(layer_proportions(&agent.critic));
        v
    } else {
        Vec::new()
    };

    let n_envs = cfg.n_envs;
    let mut w = Workers {
        states: Vec::with_capacity(n_envs),
        rngs: (0..n_envs).map(|e| root.derive2(2, e as u64)).collect(),
        obs: vec![0.0; n_envs * obs_dim],
        ep_return: vec![0.0; n_envs],
    };
    for e in 0..n_envs {
        let s = instance.reset_into(&mut w.rngs[e], &mut w.obs[e * obs_dim..(e + 1) * obs_dim]);
        w.states.push(s);
    }

    let mut recent: VecDeque<f64> = VecDeque::with_capacity(RETURN_WINDOW);
    let mut batch = RolloutBatch::new(cfg.n_steps, n_envs, obs_dim);
    let coefs = LossCoefs {
        vf_coef: cfg.vf_coef,
        ent_coef: cfg.ent_coef,
        max_grad_norm: Some(cfg.max_grad_norm),
    };
    let mut result = TrainResult {
        final_params: agent.clone(),
        return_curve: Vec::with_capacity(cfg.n_cycles()),
        final_return: f64::NEG_INFINITY,
        diverged: false,
        divergence_reason: None,
        env_steps: 0,
        n_updates: 0,
        masked_samples: 0,
        drift_violations: 0,
        wall_time_s: 0.0,
    };
    let mb_size = cfg.minibatch_size();
    let mut indices: Vec<usize> = (0..cfg.batch_size()).collect();
    let mut flat = agent.flat();

    let outcome: Result<()> = (|| {
        for _cycle in 0..cfg.n_cycles() {
            let t_p = result.env_steps as f64 / cfg.total_timesteps as f64;
            rollout(&instance, &agent, &mut w, &mut batch, &mut recent)?;
            result.env_steps += cfg.batch_size();

            let adv = compute_gae(&batch, cfg.gamma, cfg.gae_lambda)?;
            for epoch in 0..cfg.n_epochs {
                shuffle_rng.shuffle(&mut indices);
                for m in 0..cfg.n_minibatches {
                    let idx = &indices[m * mb_size..(m + 1) * mb_size];
                    let mb = gather(&batch, &adv.advantages, &adv.targets, idx);
                    let tl = ppo_total_loss(&mb, &prepared, &agent, &coefs)?;
                    result.masked_samples += tl.masked;
                    result.drift_violations += tl.drift_violations;
                    if !tl.loss.is_finite() {
                        return Err(Error::NonFinite("loss".into()));
                    }
                    let b_p = (epoch * cfg.n_minibatches + m) as f64 / (cfg.n_epochs * cfg.n_minibatches) as f64;
                    let (dorm, rand) = if rule.kind.needs_context() {
                        let mut d = parameter_dormancy(&agent.actor, &tl.actor_cache)?;
                        d.extend(parameter_dormancy(&agent.critic, &tl.critic_cache)?);
                        let r: Vec<f64> = (0..flat.len()).map(|_| noise_rng.normal()).collect();
                        (d, r)
                    } else {
                        (Vec::new(), Vec::new())
                    };
                    let ctx = UpdateContext {
                        t_p,
                        b_p,
                        l_p: &l_p,
                        dorm: &dorm,
                        rand: &rand,
                    };
                    apply_update_rule(&mut rule, &mut flat, &tl.grads, &ctx)?;
                    agent.set_flat(&flat)?;
                    result.n_updates += 1;
                }
            }
            let ret = if recent.is_empty() {
                w.ep_return.iter().sum::<f64>() / n_envs as f64
            } else {
                recent.iter().sum::<f64>() / recent.len() as f64
            };
            result.return_curve.push((result.env_steps, ret));
        }
        Ok(())
    })();

    match outcome {
        Ok(()) => {
            result.final_return = result.return_curve.last().map(|p| p.1).unwrap_or(f64::NEG_INFINITY);
        }
        Err(e) if is_divergence(&e) => {
            result.diverged = true;
            result.divergence_reason = Some(e.to_string());
            result.final_return = f64::NEG_INFINITY;
        }
        Err(e) => return Err(e),
    }
    result.final_params = agent;
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}

fn rollout(
    instance: &EnvInstance,
    agent: &Agent,
    w: &mut Workers,
    batch: &mut RolloutBatch,
    recent: &mut VecDeque<f64>,
) -> Result<()> {
    let n_envs = batch.n_envs;
    let obs_dim = batch.obs_dim;
    let k = agent.n_actions();
    for t in 0..batch.n_steps {
        let actor = forward_batch(&agent.actor, &w.obs, n_envs)?;
        let critic = forward_batch(&agent.critic, &w.obs, n_envs)?;
        let logp = log_softmax(actor.output(), k);
        if logp.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("policy logits".into()));
        }
        let base = t * n_envs;
        batch.observations[base * obs_dim..(base + n_envs) * obs_dim].copy_from_slice(&w.obs);
        for e in 0..n_envs {
            let row = &logp[e * k..(e + 1) * k];
            let a = sample_categorical(row, w.rngs[e].uniform());
            let i = base + e;
            batch.actions[i] = a;
            batch.behaviour_log_probs[i] = row[a];
            batch.values[i] = critic.output()[e];
            let o = &mut w.obs[e * obs_dim..(e + 1) * obs_dim];
            let (r, done) = instance.step_into(&mut w.states[e], a, o)?;
            batch.rewards[i] = r;
            batch.dones[i] = done;
            w.ep_return[e] += r;
            if done {
                if recent.len() == RETURN_WINDOW {
                    recent.pop_front();
                }
                recent.push_back(w.ep_return[e]);
                w.ep_return[e] = 0.0;
                w.states[e] = instance.reset_into(&mut w.rngs[e], o);
            }
        }
    }
    let critic = forward_batch(&agent.critic, &w.obs, n_envs)?;
    batch.bootstrap_value.copy_from_slice(critic.output());
    Ok(())
}

fn gather(batch: &RolloutBatch, adv: &[f64], targets: &[f64], idx: &[usize]) -> Minibatch {
    let d = batch.obs_dim;
    let mut mb = Minibatch {
        obs_dim: d,
        observations: Vec::with_capacity(idx.len() * d),
        actions: Vec::with_capacity(idx.len()),
        behaviour_log_probs: Vec::with_capacity(idx.len()),
        advantages: Vec::with_capacity(idx.len()),
        targets: Vec::with_capacity(idx.len()),
    };
    for &i in idx {
        mb.observations.extend_from_slice(&batch.observations[i * d..(i + 1) * d]);
        mb.actions.push(batch.actions[i]);
        mb.behaviour_log_probs.push(batch.behaviour_log_probs[i]);
        mb.advantages.push(adv[i]);
        mb.targets.push(targets[i]);
    }
    normalize_advantages(&mut mb.advantages);
    mb
}

/// Return curves as CSV with columns `env_steps,mean_return,seed`.
pub fn write_curves_csv(path: &Path, runs: &[(u64, &TrainResult)]) -> Result<()> {
    let mut out = csv::Writer::from_path(path).map_err(csv_err)?;
    out.write_record(["env_steps", "mean_return", "seed"]).map_err(csv_err)?;
    for (seed, r) in runs {
        for (steps, ret) in &r.return_curve {
            out.write_record([steps.to_string(), format!("{ret}"), seed.to_string()])
                .map_err(csv_err)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
