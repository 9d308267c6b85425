use metarl::envs::*;
use metarl::learnedalgos::*;
use metarl::numcore::{MlpParams, RngStream};
use metarl::rltrain::*;
use proptest::prelude::*;

fn gae_oracle(rewards: &[f64], dones: &[bool], values: &[f64], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let v_next = |t: usize| if t + 1 < n { values[t + 1] } else { boot };
    let delta: Vec<f64> = (0..n)
        .map(|t| rewards[t] + gamma * v_next(t) * if dones[t] { 0.0 } else { 1.0 } - values[t])
        .collect();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            for l in 0..n - t {
                // weight is zero once an episode boundary lies between t and t + l
                if (t..t + l).any(|j| dones[j]) {
                    break;
                }
                total += (gamma * lambda).powi(l as i32) * delta[t + l];
            }
            total
        })
        .collect()
}

#[test]
fn gae_matches_double_sum_on_all_short_sequences() {
    let grid = [-1.0, 0.0, 1.0];
    let (gamma, lambda) = (0.9, 0.8);
    let mut rng = RngStream::new(3, 3);
    let mut checked = 0usize;
    for len in 1..=8usize {
        let values: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let boot = rng.normal();
        let mut batch = RolloutBatch::new(len, 1, 1);
        batch.values = values.clone();
        batch.bootstrap_value = vec![boot];
        let total = 6usize.pow(len as u32);
        for code in 0..total {
            let mut c = code;
            for t in 0..len {
                batch.rewards[t] = grid[c % 3];
                batch.dones[t] = (c / 3) % 2 == 1;
                c /= 6;
            }
            let got = compute_gae(&batch, gamma, lambda).unwrap();
            let want = gae_oracle(&batch.rewards, &batch.dones, &values, boot, gamma, lambda);
            for t in 0..len {
                assert!((got.advantages[t] - want[t]).abs() <= 1e-9);
                assert!((got.targets[t] - want[t] - values[t]).abs() <= 1e-9);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, (1..=8).map(|l| 6usize.pow(l)).sum::<usize>());
}

#[test]
fn gae_envs_are_independent() {
    let mut rng = RngStream::new(4, 0);
    let mut b = RolloutBatch::new(5, 3, 1);
    for i in 0..15 {
        b.rewards[i] = rng.normal();
        b.values[i] = rng.normal();
        b.dones[i] = rng.bernoulli(0.3);
    }
    b.bootstrap_value = vec![0.5, -0.5, 2.0];
    let got = compute_gae(&b, 0.99, 0.95).unwrap();
    for e in 0..3 {
        let col = |v: &[f64]| (0..5).map(|t| v[t * 3 + e]).collect::<Vec<_>>();
        let dones: Vec<bool> = (0..5).map(|t| b.dones[t * 3 + e]).collect();
        let want = gae_oracle(&col(&b.rewards), &dones, &col(&b.values), b.bootstrap_value[e], 0.99, 0.95);
        for (g, w) in col(&got.advantages).iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }
}

#[test]
fn ppo_drift_reproduces_clipped_surrogate() {
    let d = DriftFunction::ppo(0.2);
    let mut rng = RngStream::new(10, 0);
    for _ in 0..100_000 {
        let r = rng.uniform_range(0.5, 2.0);
        let a = rng.uniform_range(-3.0, 3.0);
        let mirror = -(r * a - drift_eval(&d, r, a).unwrap());
        let clipped = -(r * a).min(r.clamp(0.8, 1.2) * a);
        assert!((mirror - clipped).abs() <= 1e-9, "r {r} A {a}");
    }
}

fn tiny_agent(rng: &mut RngStream) -> Agent {
    let spec = AgentSpec {
        hidden: vec![5],
        activation: metarl::numcore::Activation::Tanh,
    };
    let mut agent = Agent::new(&spec, 3, 3, rng).unwrap();
    // larger actor weights so the policy is far from uniform
    for v in &mut agent.actor.values {
        *v = rng.normal() * 0.7;
    }
    agent
}

fn random_minibatch(agent: &Agent, n: usize, rng: &mut RngStream, spread: f64) -> Minibatch {
    let obs: Vec<f64> = (0..n * 3).map(|_| rng.normal()).collect();
    let logits = metarl::numcore::forward_batch(&agent.actor, &obs, n).unwrap().output().to_vec();
    let logp = log_softmax(&logits, 3);
    let actions: Vec<usize> = (0..n).map(|_| rng.index(3)).collect();
    Minibatch {
        obs_dim: 3,
        behaviour_log_probs: (0..n).map(|i| logp[i * 3 + actions[i]] + spread * rng.normal()).collect(),
        actions,
        observations: obs,
        advantages: (0..n).map(|_| rng.normal()).collect(),
        targets: (0..n).map(|_| rng.normal()).collect(),
    }
}

fn loss_at(agent: &Agent, flat: &[f64], mb: &Minibatch, d: &PreparedDrift, c: &LossCoefs) -> f64 {
    let mut a = agent.clone();
    a.set_flat(flat).unwrap();
    ppo_total_loss(mb, d, &a, c).unwrap().loss
}

#[test]
fn ppo_total_loss_gradient_matches_central_differences() {
    let mut rng = RngStream::new(77, 0);
    let coefs = LossCoefs {
        vf_coef: 0.5,
        ent_coef: 0.01,
        max_grad_norm: None,
    };
    let lpo = DriftFunction::blackbox(init_lpo_near_ppo(&lpo_spec(), 0.2, &RngStream::new(1, 1)).unwrap()).unwrap();
    let h = 1e-6;
    for inst in 0..100 {
        let agent = tiny_agent(&mut rng);
        let mb = random_minibatch(&agent, 8, &mut rng, 0.3);
        let drift = if inst % 2 == 0 { DriftFunction::ppo(0.2) } else { lpo.clone() };
        let pd = PreparedDrift::new(&drift).unwrap();
        let tl = ppo_total_loss(&mb, &pd, &agent, &coefs).unwrap();
        let base = agent.flat();
        let mut num = 0.0;
        let mut den_a = 0.0;
        let mut den_f = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let up = loss_at(&agent, &p, &mb, &pd, &coefs);
            p[i] -= 2.0 * h;
            let fd = (up - loss_at(&agent, &p, &mb, &pd, &coefs)) / (2.0 * h);
            num += (fd - tl.grads[i]).powi(2);
            den_a += tl.grads[i].powi(2);
            den_f += fd * fd;
        }
        let rel = num.sqrt() / den_a.sqrt().max(den_f.sqrt()).max(1e-12);
        assert!(rel < 1e-4, "instance {inst}: relative error {rel}");
    }
}

#[test]
fn on_policy_batch_has_no_drift() {
    let mut rng = RngStream::new(5, 0);
    let agent = tiny_agent(&mut rng);
    let mb = random_minibatch(&agent, 16, &mut rng, 0.0);
    let d = DriftFunction::ppo(0.2);
    let pd = PreparedDrift::new(&d).unwrap();
    let logits = metarl::numcore::forward_batch(&agent.actor, &mb.observations, 16).unwrap().output().to_vec();
    let pl = mirror_policy_loss(&mb, &logits, &pd).unwrap();
    let mean_a = mb.advantages.iter().sum::<f64>() / 16.0;
    assert!((pl.loss + mean_a).abs() < 1e-12);
    for r in [1.0] {
        for a in [-3.0, 0.0, 2.5] {
            assert_eq!(drift_eval(&d, r, a).unwrap(), 0.0);
        }
    }
}

#[test]
fn zero_coefficients_leave_only_the_policy_term() {
    let mut rng = RngStream::new(6, 0);
    let agent = tiny_agent(&mut rng);
    let mb = random_minibatch(&agent, 8, &mut rng, 0.2);
    let d = DriftFunction::ppo(0.2);
    let pd = PreparedDrift::new(&d).unwrap();
    let c = LossCoefs {
        vf_coef: 0.0,
        ent_coef: 0.0,
        max_grad_norm: None,
    };
    let tl = ppo_total_loss(&mb, &pd, &agent, &c).unwrap();
    assert_eq!(tl.loss, tl.policy_loss);
    assert!(tl.grads[agent.actor.len()..].iter().all(|g| *g == 0.0));
}

#[test]
fn uniform_policy_has_log_k_entropy() {
    let mut rng = RngStream::new(7, 0);
    let mut agent = tiny_agent(&mut rng);
    agent.actor = MlpParams::zeros(agent.actor.spec.clone(), true);
    let mb = random_minibatch(&agent, 4, &mut rng, 0.0);
    let d = DriftFunction::ppo(0.2);
    let tl = ppo_total_loss(
        &mb,
        &PreparedDrift::new(&d).unwrap(),
        &agent,
        &LossCoefs {
            vf_coef: 0.5,
            ent_coef: 0.01,
            max_grad_norm: Some(0.5),
        },
    )
    .unwrap();
    assert!((tl.entropy - 3f64.ln()).abs() < 1e-12);
    assert!(tl.grads.iter().map(|g| g * g).sum::<f64>().sqrt() <= 0.5 + 1e-12);
}

fn tiny_config() -> PpoConfig {
    PpoConfig {
        total_timesteps: 2048,
        ..PpoConfig::gridworld()
    }
}

#[test]
fn training_is_a_pure_function_of_its_inputs() {
    let env = sample_env(&EnvDistribution::grid_id(), &mut RngStream::new(1, 1)).unwrap();
    let src = EnvSource::Instance(env);
    let d = DriftFunction::ppo(0.2);
    let rule = UpdateRuleKind::adam(3e-2);
    let a = train_agent(&tiny_config(), &src, &d, &rule, 9).unwrap();
    let b = train_agent(&tiny_config(), &src, &d, &rule, 9).unwrap();
    assert_eq!(a.return_curve, b.return_curve);
    assert_eq!(a.final_params, b.final_params);
    assert_eq!(a.env_steps, 2048);
    let c = train_agent(&tiny_config(), &src, &d, &rule, 10).unwrap();
    assert_ne!(a.final_params, c.final_params);
}

#[test]
fn one_cycle_gives_one_curve_point() {
    let cfg = PpoConfig {
        total_timesteps: 256,
        ..PpoConfig::gridworld()
    };
    let r = train_agent(
        &cfg,
        &EnvSource::Distribution(EnvDistribution::grid_id()),
        &DriftFunction::ppo(0.2),
        &UpdateRuleKind::Sgd { lr: 0.1 },
        0,
    )
    .unwrap();
    assert_eq!(r.return_curve.len(), 1);
    assert_eq!(r.return_curve[0].0, 256);
    assert_eq!(r.env_steps, 256);
}

#[test]
fn learned_and_symbolic_rules_train_without_error() {
    let env = EnvSource::Distribution(EnvDistribution::grid_id());
    let fs = FeatureSet::OpenFf;
    let net = MlpParams::init(fs.default_spec(8), true, 1.0, &mut RngStream::new(2, 2));
    let sym = metarl::symdsl::parse("lr * sgn(m_0_9)", &metarl::symdsl::Signature::optimizer()).unwrap();
    for rule in [
        UpdateRuleKind::learned(net, fs),
        UpdateRuleKind::Symbolic { expr: sym, lr: 1e-3 },
    ] {
        let r = train_agent(&tiny_config(), &env, &DriftFunction::ppo(0.2), &rule, 1).unwrap();
        assert_eq!(r.env_steps, 2048);
        assert!(r.final_return.is_finite());
    }
}

#[test]
fn bad_config_is_rejected() {
    let cfg = PpoConfig {
        n_minibatches: 0,
        ..PpoConfig::gridworld()
    };
    assert!(cfg.validate().is_err());
}

proptest! {
    #[test]
    fn log_softmax_rows_normalize(v in prop::collection::vec(-50.0f64..50.0, 4)) {
        let l = log_softmax(&v, 4);
        prop_assert!((l.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalized_advantages_are_standard(v in prop::collection::vec(-1e3f64..1e3, 2..50)) {
        let mut a = v.clone();
        normalize_advantages(&mut a);
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 1e-3 {
            let var = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            prop_assert!((var - 1.0).abs() < 1e-6);
        }
    }
}
