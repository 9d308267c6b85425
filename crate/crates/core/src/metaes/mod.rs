//! Evolution strategies over a flat parameter vector.

use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{sample_env, EnvDistribution};
use crate::error::{Error, Result};
use crate::learnedalgos::{lpo_spec, DriftFunction, FeatureSet, UpdateRuleKind};
use crate::numcore::{MlpParams, MlpSpec, RngStream};
use crate::rltrain::{csv_err, train_agent, EnvSource, PpoConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitnessShaping {
    /// Ranks mapped linearly onto [-0.5, 0.5]; ties share their mean rank.
    CenteredRank,
    /// Raw fitness minus the population mean.
    Centered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsConfig {
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub sigma_init: f64,
    pub sigma_decay: f64,
    pub population_size: usize,
    pub n_generations: usize,
    pub fitness_seeds_per_member: usize,
    pub shaping: FitnessShaping,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-2,
            lr_decay: 0.999,
            sigma_init: 3e-2,
            sigma_decay: 0.999,
            population_size: 64,
            n_generations: 100,
            fitness_seeds_per_member: 2,
            shaping: FitnessShaping::CenteredRank,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size == 0 || self.population_size % 2 != 0 {
            return Err(Error::Config(format!(
                "population_size must be even and positive, got {}",
                self.population_size
            )));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("sigma_init", self.sigma_init),
            ("lr_decay", self.lr_decay),
            ("sigma_decay", self.sigma_decay),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.fitness_seeds_per_member == 0 {
            return Err(Error::Config("fitness_seeds_per_member must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsState {
    pub mean: Vec<f64>,
    pub sigma: f64,
    pub lr: f64,
    pub generation: usize,
    pub best_params: Vec<f64>,
    pub best_fitness: f64,
}

impl EsState {
    pub fn new(mean: Vec<f64>, cfg: &EsConfig) -> Self {
        Self {
            best_params: mean.clone(),
            mean,
            sigma: cfg.sigma_init,
            lr: cfg.learning_rate,
            generation: 0,
            best_fitness: f64::NEG_INFINITY,
        }
    }
}

/// Identifies one fitness call. `generation_rng` is shared by every member
/// of a generation (common random numbers); `member_rng` is private.
#[derive(Debug, Clone, Copy)]
pub struct MemberCtx {
    pub generation: usize,
    pub member: usize,
    pub generation_rng: RngStream,
    pub member_rng: RngStream,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub fitness: f64,
    pub env_steps: usize,
}

pub trait FitnessFn: Sync {
    fn evaluate(&self, params: &[f64], ctx: &MemberCtx) -> Result<Evaluation>;
}

impl<F: Fn(&[f64]) -> f64 + Sync> FitnessFn for F {
    fn evaluate(&self, params: &[f64], _ctx: &MemberCtx) -> Result<Evaluation> {
        Ok(Evaluation {
            fitness: self(params),
            env_steps: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Mean over members with a finite fitness.
    pub mean_fitness: f64,
    pub best_fitness: f64,
    pub n_diverged: usize,
    pub env_steps: usize,
}

/// Replace non-finite entries by the smallest finite fitness, then shape.
pub fn shape_fitness(raw: &[f64], shaping: FitnessShaping) -> Vec<f64> {
    let floor = raw.iter().cloned().filter(|f| f.is_finite()).fold(f64::INFINITY, f64::min);
    let f: Vec<f64> = raw
        .iter()
        .map(|v| if v.is_finite() { *v } else if floor.is_finite() { floor } else { 0.0 })
        .collect();
    let n = f.len();
    match shaping {
        FitnessShaping::Centered => {
            if f.iter().all(|v| *v == f[0]) {
                return vec![0.0; n];
            }
            let m = f.iter().sum::<f64>() / n as f64;
            f.iter().map(|v| v - m).collect()
        }
        FitnessShaping::CenteredRank => {
            if n < 2 {
                return vec![0.0; n];
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| f[a].total_cmp(&f[b]).then(a.cmp(&b)));
            let mut ranks = vec![0.0; n];
            let mut i = 0;
            while i < n {
                let mut j = i;
                while j + 1 < n && f[order[j + 1]] == f[order[i]] {
                    j += 1;
                }
                let avg = (i + j) as f64 / 2.0;
                for &k in &order[i..=j] {
                    ranks[k] = avg;
                }
                i = j + 1;
            }
            ranks.iter().map(|r| r / (n - 1) as f64 - 0.5).collect()
        }
    }
}

/// Antithetic noise for one generation: member `2j` gets `+eps_j`, member
/// `2j + 1` gets `-eps_j`.
pub fn perturbations(dim: usize, population: usize, rng: &RngStream) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(population);
    for j in 0..population / 2 {
        let mut r = rng.derive(j as u64);
        let eps: Vec<f64> = (0..dim).map(|_| r.normal()).collect();
        let neg = eps.iter().map(|e| -e).collect();
        out.push(eps);
        out.push(neg);
    }
    out
}

/// One ES generation. Members are evaluated in parallel on the current
/// rayon pool and reduced in member order, so the result does not depend on
/// the number of workers.
pub fn es_step(state: &EsState, cfg: &EsConfig, fitness: &dyn FitnessFn, rng: &RngStream) -> Result<(EsState, GenerationStats)> {
    cfg.validate()?;
    let dim = state.mean.len();
    let n = cfg.population_size;
    let gen_rng = rng.derive(state.generation as u64);
    let eps = perturbations(dim, n, &gen_rng.derive(0));
    let shared = gen_rng.derive(1);
    let evals: Vec<Result<(Vec<f64>, Evaluation)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let theta: Vec<f64> = state.mean.iter().zip(&eps[i]).map(|(m, e)| m + state.sigma * e).collect();
            let ctx = MemberCtx {
                generation: state.generation,
                member: i,
                generation_rng: shared,
                member_rng: gen_rng.derive2(2, i as u64),
            };
            let ev = fitness.evaluate(&theta, &ctx)?;
            Ok((theta, ev))
        })
        .collect();
    let mut thetas = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n);
    let mut env_steps = 0;
    for e in evals {
        let (t, ev) = e?;
        thetas.push(t);
        let f = if ev.fitness.is_nan() { f64::NEG_INFINITY } else { ev.fitness };
        raw.push(f);
        env_steps += ev.env_steps;
    }
    let shaped = shape_fitness(&raw, cfg.shaping);
    let mut next = state.clone();
    let scale = 1.0 / (n as f64 * state.sigma);
    for (e, s) in eps.iter().zip(&shaped) {
        if *s == 0.0 {
            continue;
        }
        for (m, ei) in next.mean.iter_mut().zip(e) {
            *m += state.lr * scale * ei * s;
        }
    }
    if next.mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(format!(
            "ES mean became non-finite at generation {}",
            state.generation
        )));
    }
    for (i, f) in raw.iter().enumerate() {
        if *f > next.best_fitness {
            next.best_fitness = *f;
            next.best_params = thetas[i].clone();
        }
    }
    next.lr = state.lr * cfg.lr_decay;
    next.sigma = state.sigma * cfg.sigma_decay;
    next.generation += 1;
    let finite: Vec<f64> = raw.iter().cloned().filter(|f| f.is_finite()).collect();
    let stats = GenerationStats {
        generation: state.generation,
        mean_fitness: if finite.is_empty() {
            f64::NEG_INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        },
        best_fitness: raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        n_diverged: n - finite.len(),
        env_steps,
    };
    Ok((next, stats))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EsOutcome {
    pub best_params: Vec<f64>,
    pub best_fitness: f64,
    pub final_state: EsState,
    pub history: Vec<GenerationStats>,
    pub env_steps: usize,
}

pub fn meta_train_es(cfg: &EsConfig, fitness: &dyn FitnessFn, init_mean: Vec<f64>, rng: &RngStream) -> Result<EsOutcome> {
    cfg.validate()?;
    let mut state = EsState::new(init_mean, cfg);
    let mut history = Vec::with_capacity(cfg.n_generations);
    let mut env_steps = 0;
    for _ in 0..cfg.n_generations {
        let (next, stats) = es_step(&state, cfg, fitness, rng)?;
        env_steps += stats.env_steps;
        history.push(stats);
        state = next;
    }
    Ok(EsOutcome {
        best_params: state.best_params.clone(),
        best_fitness: state.best_fitness,
        final_state: state,
        history,
        env_steps,
    })
}

/// Fitness history as CSV: `generation,mean,best`.
pub fn write_history_csv(path: &Path, history: &[GenerationStats]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["generation", "mean", "best"]).map_err(csv_err)?;
    for h in history {
        w.write_record([h.generation.to_string(), format!("{}", h.mean_fitness), format!("{}", h.best_fitness)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// What the ES parameter vector encodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AlgorithmTemplate {
    /// Bias-free drift network; the inner loop uses `rule`.
    Lpo { rule: UpdateRuleKind },
    /// Learned optimizer network; the inner loop uses the clip drift.
    Optimizer {
        spec: MlpSpec,
        feature_set: FeatureSet,
        output_scale: f64,
        noise_scale: f64,
        clip_eps: f64,
    },
}

impl AlgorithmTemplate {
    pub fn param_count(&self) -> usize {
        match self {
            AlgorithmTemplate::Lpo { .. } => lpo_spec().param_count(false),
            AlgorithmTemplate::Optimizer { spec, .. } => spec.param_count(true),
        }
    }

    pub fn build(&self, theta: &[f64]) -> Result<(DriftFunction, UpdateRuleKind)> {
        match self {
            AlgorithmTemplate::Lpo { rule } => {
                let net = MlpParams::from_values(lpo_spec(), false, theta.to_vec())?;
                Ok((DriftFunction::blackbox(net)?, rule.clone()))
            }
            AlgorithmTemplate::Optimizer {
                spec,
                feature_set,
                output_scale,
                noise_scale,
                clip_eps,
            } => {
                let net = MlpParams::from_values(spec.clone(), true, theta.to_vec())?;
                Ok((
                    DriftFunction::ppo(*clip_eps),
                    UpdateRuleKind::LearnedBlackbox {
                        net,
                        feature_set: *feature_set,
                        output_scale: *output_scale,
                        noise_scale: *noise_scale,
                    },
                ))
            }
        }
    }
}

/// Fitness = mean final return of `seeds` training runs. Each generation
/// draws its own environments and training seeds, shared by all members.
#[derive(Debug, Clone)]
pub struct RlFitness {
    pub template: AlgorithmTemplate,
    pub ppo: PpoConfig,
    pub dist: EnvDistribution,
    pub seeds: usize,
}

impl RlFitness {
    /// Training seeds and environments for generation-level context.
    pub fn tasks(&self, generation_rng: &RngStream) -> Result<Vec<(u64, EnvSource)>> {
        (0..self.seeds)
            .map(|s| {
                let mut r = generation_rng.derive(s as u64);
                let env = sample_env(&self.dist, &mut r)?;
                Ok((r.next_u64(), EnvSource::Instance(env)))
            })
            .collect()
    }
}

impl FitnessFn for RlFitness {
    fn evaluate(&self, params: &[f64], ctx: &MemberCtx) -> Result<Evaluation> {
        let (drift, rule) = match self.template.build(params) {
            Ok(x) => x,
            Err(Error::Contract(_)) | Err(Error::NonFinite(_)) => {
                return Ok(Evaluation {
                    fitness: f64::NEG_INFINITY,
                    env_steps: 0,
                })
            }
            Err(e) => return Err(e),
        };
        let mut total = 0.0;
        let mut steps = 0;
        for (seed, env) in self.tasks(&ctx.generation_rng)? {
            let r = train_agent(&self.ppo, &env, &drift, &rule, seed)?;
            steps += r.env_steps;
            total += r.fitness();
        }
        Ok(Evaluation {
            fitness: total / self.seeds as f64,
            env_steps: steps,
        })
    }
}
