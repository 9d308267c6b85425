use crate::error::{Error, Result};

/// One rollout. Per-step arrays are time-major: index `t * n_envs + e`.
/// `observations` holds `obs_dim` values per step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutBatch {
    pub n_steps: usize,
    pub n_envs: usize,
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub behaviour_log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub bootstrap_value: Vec<f64>,
}

impl RolloutBatch {
    pub fn new(n_steps: usize, n_envs: usize, obs_dim: usize) -> Self {
        let n = n_steps * n_envs;
        Self {
            n_steps,
            n_envs,
            obs_dim,
            observations: vec![0.0; n * obs_dim],
            actions: vec![0; n],
            behaviour_log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            dones: vec![false; n],
            values: vec![0.0; n],
            bootstrap_value: vec![0.0; n_envs],
        }
    }

    pub fn len(&self) -> usize {
        self.n_steps * self.n_envs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let ok = self.observations.len() == n * self.obs_dim
            && self.actions.len() == n
            && self.behaviour_log_probs.len() == n
            && self.rewards.len() == n
            && self.dones.len() == n
            && self.values.len() == n
            && self.bootstrap_value.len() == self.n_envs;
        if !ok {
            return Err(Error::Contract("rollout arrays do not share the (n_steps, n_envs) shape".into()));
        }
        if self.behaviour_log_probs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("behaviour log-probabilities".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Generalised advantage estimation. `dones[t]` marks that the episode
/// ended with the transition taken at step `t`, so nothing is bootstrapped
/// across it.
pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> Result<AdvantageSet> {
    batch.validate()?;
    let (t_max, n_envs) = (batch.n_steps, batch.n_envs);
    let mut adv = vec![0.0; batch.len()];
    for e in 0..n_envs {
        let mut next_adv = 0.0;
        let mut next_value = batch.bootstrap_value[e];
        for t in (0..t_max).rev() {
            let i = t * n_envs + e;
            let live = if batch.dones[i] { 0.0 } else { 1.0 };
            let delta = batch.rewards[i] + gamma * next_value * live - batch.values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = batch.values[i];
        }
    }
    let targets = adv.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    Ok(AdvantageSet {
        advantages: adv,
        targets,
    })
}

/// Standardize to mean 0 and unit standard deviation (population std + 1e-8).
pub fn normalize_advantages(a: &mut [f64]) {
    if a.is_empty() {
        return;
    }
    let n = a.len() as f64;
    let mean = a.iter().sum::<f64>() / n;
    let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for x in a.iter_mut() {
        *x = (*x - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(reward: f64, value: f64, done: bool) -> RolloutBatch {
        let mut b = RolloutBatch::new(1, 1, 1);
        b.rewards[0] = reward;
        b.values[0] = value;
        b.dones[0] = done;
        b.bootstrap_value[0] = 5.0;
        b
    }

    #[test]
    fn terminal_step_is_reward_minus_value() {
        let s = compute_gae(&one(1.0, 0.0, true), 0.99, 0.95).unwrap();
        assert_eq!(s.advantages, vec![1.0]);
        assert_eq!(s.targets, vec![1.0]);
    }

    #[test]
    fn zero_gamma_collapses() {
        let mut b = RolloutBatch::new(3, 2, 1);
        b.rewards = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        b.values = vec![0.5, 0.1, 0.2, 0.3, 0.9, 0.7];
        let s = compute_gae(&b, 0.0, 0.95).unwrap();
        for i in 0..6 {
            assert!((s.advantages[i] - (b.rewards[i] - b.values[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn normalized_moments() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0];
        normalize_advantages(&mut a);
        let m: f64 = a.iter().sum::<f64>() / 4.0;
        let v: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-6);
    }
}
