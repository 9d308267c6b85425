use crate::error::{Error, Result};
use crate::learnedalgos::PreparedDrift;
use crate::numcore::{
    backward_batch, clip_global_norm_in_place, forward_batch, Activation, ForwardCache, MlpParams, MlpSpec,
    RngStream,
};

use super::config::AgentSpec;

/// Largest share of a minibatch that may have a non-finite ratio.
pub const MAX_MASKED_FRACTION: f64 = 0.1;

/// Separate policy (logits) and value networks over the same observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub actor: MlpParams,
    pub critic: MlpParams,
}

impl Agent {
    pub fn new(spec: &AgentSpec, obs_dim: usize, n_actions: usize, rng: &mut RngStream) -> Result<Self> {
        spec.validate()?;
        let widths = |out: usize| {
            let mut w = vec![obs_dim];
            w.extend(&spec.hidden);
            w.push(out);
            w
        };
        let actor_spec = MlpSpec::new(widths(n_actions), spec.activation, Activation::Identity)?;
        let critic_spec = MlpSpec::new(widths(1), spec.activation, Activation::Identity)?;
        Ok(Self {
            actor: MlpParams::init(actor_spec, true, 0.01, &mut rng.derive(0)),
            critic: MlpParams::init(critic_spec, true, 1.0, &mut rng.derive(1)),
        })
    }

    pub fn n_params(&self) -> usize {
        self.actor.len() + self.critic.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actor.spec.output_width()
    }

    /// Actor parameters followed by critic parameters.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.actor.values.clone();
        v.extend_from_slice(&self.critic.values);
        v
    }

    pub fn set_flat(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::Contract(format!(
                "flat vector of {} for an agent with {} parameters",
                v.len(),
                self.n_params()
            )));
        }
        let n = self.actor.len();
        self.actor.values.copy_from_slice(&v[..n]);
        self.critic.values.copy_from_slice(&v[n..]);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite() && self.critic.is_finite()
    }
}

/// Row-wise log-softmax of a `batch x k` matrix.
pub fn log_softmax(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for (row, o) in logits.chunks_exact(k).zip(out.chunks_exact_mut(k)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        for (oi, z) in o.iter_mut().zip(row) {
            *oi = z - lse;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Minibatch {
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub behaviour_log_probs: Vec<f64>,
    /// Already standardized.
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    pub loss: f64,
    /// Gradient with respect to the logits, `batch x k`.
    pub grad_logits: Vec<f64>,
    pub masked: usize,
    pub drift_violations: usize,
}

/// Mirror-learning policy loss `-mean(r A - D(r, A))` over the samples whose
/// ratio is finite and positive. The behaviour log-probabilities are
/// constants; the gradient flows through `r` only.
pub fn mirror_policy_loss(mb: &Minibatch, logits: &[f64], drift: &PreparedDrift) -> Result<PolicyLoss> {
    let b = mb.len();
    if b == 0 || logits.len() % b != 0 {
        return Err(Error::Contract("logits do not match the minibatch".into()));
    }
    let k = logits.len() / b;
    let logp = log_softmax(logits, k);
    let mut keep = Vec::with_capacity(b);
    let mut r = Vec::with_capacity(b);
    let mut a = Vec::with_capacity(b);
    for i in 0..b {
        let act = mb.actions[i];
        if act >= k {
            return Err(Error::InvalidAction { action: act, n_actions: k });
        }
        let ratio = (logp[i * k + act] - mb.behaviour_log_probs[i]).exp();
        if ratio.is_finite() && ratio > 0.0 {
            keep.push(i);
            r.push(ratio);
            a.push(mb.advantages[i]);
        }
    }
    let masked = b - keep.len();
    if masked as f64 > MAX_MASKED_FRACTION * b as f64 {
        return Err(Error::Training(format!(
            "{masked} of {b} probability ratios are not finite"
        )));
    }
    let d = drift.eval_batch(&r, &a, true)?;
    let v = keep.len() as f64;
    let mut loss = 0.0;
    let mut grad_logits = vec![0.0; logits.len()];
    for (j, &i) in keep.iter().enumerate() {
        loss -= r[j] * a[j] - d.value[j];
        let dl_dr = -(a[j] - d.d_dr[j]) / v;
        let coef = dl_dr * r[j];
        let row = &mut grad_logits[i * k..(i + 1) * k];
        for (c, g) in row.iter_mut().enumerate() {
            *g = -coef * logp[i * k + c].exp();
        }
        row[mb.actions[i]] += coef;
    }
    Ok(PolicyLoss {
        loss: loss / v,
        grad_logits,
        masked,
        drift_violations: d.violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub vf_coef: f64,
    pub ent_coef: f64,
    /// Global-norm clip applied to the returned gradient when set.
    pub max_grad_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Actor gradient followed by critic gradient.
    pub grads: Vec<f64>,
    pub grad_norm: f64,
    pub masked: usize,
    pub drift_violations: usize,
    pub actor_cache: ForwardCache,
    pub critic_cache: ForwardCache,
}

/// `policy + c1 * MSE(value, target) - c2 * mean entropy` and its gradient
/// with respect to every agent parameter.
pub fn ppo_total_loss(mb: &Minibatch, drift: &PreparedDrift, agent: &Agent, coefs: &LossCoefs) -> Result<TotalLoss> {
    let b = mb.len();
    let k = agent.n_actions();
    let actor_cache = forward_batch(&agent.actor, &mb.observations, b)?;
    let critic_cache = forward_batch(&agent.critic, &mb.observations, b)?;
    let logits = actor_cache.output();
    let pl = mirror_policy_loss(mb, logits, drift)?;

    let logp = log_softmax(logits, k);
    let mut grad_logits = pl.grad_logits;
    let mut entropy = 0.0;
    for i in 0..b {
        let row = &logp[i * k..(i + 1) * k];
        let h: f64 = -row.iter().map(|l| l.exp() * l).sum::<f64>();
        entropy += h;
        for c in 0..k {
            let p = row[c].exp();
            grad_logits[i * k + c] += coefs.ent_coef / b as f64 * p * (row[c] + h);
        }
    }
    entropy /= b as f64;

    let values = critic_cache.output();
    let mut value_loss = 0.0;
    let mut grad_v = vec![0.0; b];
    for i in 0..b {
        let diff = values[i] - mb.targets[i];
        value_loss += diff * diff;
        grad_v[i] = 2.0 * coefs.vf_coef * diff / b as f64;
    }
    value_loss /= b as f64;

    let (mut grads, _) = backward_batch(&agent.actor, &actor_cache, &grad_logits, false)?;
    let (gc, _) = backward_batch(&agent.critic, &critic_cache, &grad_v, false)?;
    grads.extend_from_slice(&gc);
    let grad_norm = match coefs.max_grad_norm {
        Some(m) => clip_global_norm_in_place(&mut grads, m)?,
        None => grads.iter().map(|g| g * g).sum::<f64>().sqrt(),
    };
    let loss = pl.loss + coefs.vf_coef * value_loss - coefs.ent_coef * entropy;
    Ok(TotalLoss {
        loss,
        policy_loss: pl.loss,
        value_loss,
        entropy,
        grads,
        grad_norm,
        masked: pl.masked,
        drift_violations: pl.drift_violations,
        actor_cache,
        critic_cache,
    })
}
