use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blackbox::{Candidate, RlEvaluator, Teacher};
use super::synthetic::{generate_synthetic_inputs, SyntheticBatch, SyntheticInputSpec, TargetKind};
use crate::error::{Error, Result};
use crate::numcore::RngStream;
use crate::symdsl::{crossover, mutate, print_expr, random_tree, Expr, Program, Signature, DRIFT_MAX_SIZE, OPTIMIZER_MAX_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymDistillConfig {
    pub max_size: usize,
    pub n_populations: usize,
    pub population_size: usize,
    pub iterations_per_round: usize,
    pub rounds: usize,
    pub dataset_size: usize,
    pub constant_opt_rate: f64,
    pub tournament_size: usize,
    pub mutation_prob: f64,
    pub elitism: usize,
    pub init_max_depth: usize,
    /// Once the champion reaches this MSE the search stops editing; rounds
    /// are still logged and evaluated.
    pub converged_mse: f64,
    /// Selection inside populations uses `mse + parsimony * var(targets) * size`.
    pub parsimony: f64,
    pub input: SyntheticInputSpec,
}

impl SymDistillConfig {
    pub fn drift() -> Self {
        Self {
            max_size: DRIFT_MAX_SIZE,
            n_populations: 31,
            population_size: 24,
            iterations_per_round: 10,
            rounds: 40,
            dataset_size: 5000,
            constant_opt_rate: 1e-3,
            tournament_size: 5,
            mutation_prob: 0.7,
            elitism: 1,
            init_max_depth: 4,
            converged_mse: 1e-20,
            parsimony: 1e-4,
            input: SyntheticInputSpec::drift(5000),
        }
    }

    pub fn optimizer(feature_set: crate::learnedalgos::FeatureSet) -> Self {
        Self {
            max_size: OPTIMIZER_MAX_SIZE,
            n_populations: 160,
            input: SyntheticInputSpec::optimizer(5000, feature_set),
            ..Self::drift()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.max_size >= 1
            && self.n_populations >= 1
            && self.population_size >= 2
            && self.iterations_per_round >= 1
            && self.rounds >= 1
            && self.dataset_size >= 1
            && self.constant_opt_rate > 0.0
            && self.tournament_size >= 1
            && (0.0..=1.0).contains(&self.mutation_prob)
            && self.elitism < self.population_size
            && self.init_max_depth >= 1
            && self.converged_mse >= 0.0
            && self.parsimony >= 0.0;
        if !ok {
            return Err(Error::Config("invalid symbolic distillation settings".into()));
        }
        self.input.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub expr: Expr,
    pub mse: f64,
    /// MSE plus the size penalty.
    pub adjusted: f64,
}

/// Selection order inside a population.
fn better(a: &Scored, b: &Scored) -> Ordering {
    a.adjusted.total_cmp(&b.adjusted).then(a.expr.size().cmp(&b.expr.size()))
}

/// Champion order: raw MSE, smaller expression on ties.
fn lower_mse(a: &Scored, b: &Scored) -> Ordering {
    a.mse.total_cmp(&b.mse).then(a.expr.size().cmp(&b.expr.size()))
}

/// Index of the lowest-MSE entry; the earliest wins ties.
pub fn select_lowest_mse(mses: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, m) in mses.iter().enumerate() {
        if m.is_nan() {
            continue;
        }
        match best {
            Some(b) if mses[b] <= *m => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Fixed dataset plus targets; fitness is mean squared error against them.
pub struct Dataset {
    pub sig: Signature,
    pub inputs: SyntheticBatch,
    pub targets: Vec<f64>,
    size_penalty: f64,
}

impl Dataset {
    pub fn new(teacher: &Teacher, spec: &SyntheticInputSpec, n: usize, rng: &RngStream) -> Result<Self> {
        Self::with_parsimony(teacher, spec, n, 0.0, rng)
    }

    pub fn with_parsimony(teacher: &Teacher, spec: &SyntheticInputSpec, n: usize, parsimony: f64, rng: &RngStream) -> Result<Self> {
        if teacher.kind() != spec.kind {
            return Err(Error::Config("teacher and input sampler target different algorithm kinds".into()));
        }
        let inputs = generate_synthetic_inputs(spec, n, rng)?;
        let targets = teacher.symbolic_targets(&inputs)?;
        let mean = targets.iter().sum::<f64>() / n as f64;
        let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        Ok(Self {
            sig: spec.kind.signature(),
            inputs,
            targets,
            size_penalty: parsimony * var,
        })
    }

    /// Non-finite errors count as `+inf`.
    pub fn mse(&self, e: &Expr, buf: &mut Vec<f64>) -> f64 {
        let Ok(p) = Program::compile(e, &self.sig) else {
            return f64::INFINITY;
        };
        buf.resize(self.inputs.n, 0.0);
        p.eval_columns(&self.inputs.column_refs(), buf);
        let s: f64 = buf.iter().zip(&self.targets).map(|(y, t)| (y - t) * (y - t)).sum();
        let m = s / self.targets.len() as f64;
        if m.is_finite() {
            m
        } else {
            f64::INFINITY
        }
    }

    fn score(&self, e: Expr, buf: &mut Vec<f64>) -> Scored {
        let mse = self.mse(&e, buf);
        let adjusted = mse + self.size_penalty * e.size() as f64;
        Scored { expr: e, mse, adjusted }
    }
}

const CONST_SCALES: [f64; 7] = [1e3, 1e2, 1e1, 1.0, 1e-1, 1e-2, 1e-3];
const CONST_PASSES: usize = 2;
const CONST_MOVES: usize = 8;

/// Coordinate-wise descent on the constants of `s`: each constant tries
/// `+-rate*scale` for scales from 1e3 down to 1e-3, repeating a step while
/// it helps (at most 8 times per scale). Never returns a worse expression.
pub fn optimize_constants(s: &Scored, data: &Dataset, rate: f64) -> Scored {
    let mut best = s.clone();
    let n_const = best.expr.constants().len();
    let mut buf = Vec::new();
    for _ in 0..CONST_PASSES {
        let mut improved = false;
        for k in 0..n_const {
            for scale in CONST_SCALES {
                let step = rate * scale;
                for _ in 0..CONST_MOVES {
                    let mut moved = false;
                    for dir in [1.0, -1.0] {
                        let mut cand = best.expr.clone();
                        *cand.constants_mut()[k] += dir * step;
                        let sc = data.score(cand, &mut buf);
                        if sc.mse < best.mse {
                            best = sc;
                            moved = true;
                            improved = true;
                            break;
                        }
                    }
                    if !moved {
                        break;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    best
}

fn tournament<'a>(pop: &'a [Scored], k: usize, rng: &mut RngStream) -> &'a Scored {
    let mut best = &pop[rng.index(pop.len())];
    for _ in 1..k {
        let c = &pop[rng.index(pop.len())];
        if better(c, best) == Ordering::Less {
            best = c;
        }
    }
    best
}

fn sort_pop(pop: &mut [Scored]) {
    pop.sort_by(better);
}

fn evolve(pop: &mut Vec<Scored>, cfg: &SymDistillConfig, data: &Dataset, rng: &mut RngStream) {
    let mut buf = Vec::new();
    for _ in 0..cfg.iterations_per_round {
        sort_pop(pop);
        let mut next: Vec<Scored> = pop[..cfg.elitism].to_vec();
        while next.len() < cfg.population_size {
            let child = if rng.bernoulli(cfg.mutation_prob) {
                let p = tournament(pop, cfg.tournament_size, rng);
                mutate(&p.expr, &data.sig, rng, cfg.max_size)
            } else {
                let a = tournament(pop, cfg.tournament_size, rng).expr.clone();
                let b = tournament(pop, cfg.tournament_size, rng);
                crossover(&a, &b.expr, rng, cfg.max_size)
            };
            next.push(data.score(child, &mut buf));
        }
        *pop = next;
    }
    sort_pop(pop);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub champion_mse: f64,
    pub champion_size: usize,
    pub champion: String,
    pub rl_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymDistillOutcome {
    pub best: Expr,
    pub best_mse: f64,
    pub history: Vec<RoundRecord>,
    pub rl_evaluations: usize,
    pub env_steps: usize,
}

/// Island-model GP against a fixed teacher dataset. Each round runs
/// `iterations_per_round` generations per population, then tunes the
/// constants of the round champion, copies the champion into every
/// population in place of its worst member, and scores it with
/// `evaluator`. Returns the lowest-MSE expression seen.
pub fn distill_symbolic(
    teacher: &Teacher,
    cfg: &SymDistillConfig,
    evaluator: &dyn RlEvaluator,
    rng: &RngStream,
) -> Result<SymDistillOutcome> {
    cfg.validate()?;
    let data = Dataset::with_parsimony(teacher, &cfg.input, cfg.dataset_size, cfg.parsimony, &rng.derive(0))?;
    let mut pops: Vec<Vec<Scored>> = (0..cfg.n_populations)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.derive2(1, i as u64);
            let mut buf = Vec::new();
            let mut pop: Vec<Scored> = (0..cfg.population_size)
                .map(|_| {
                    let depth = r.int_inclusive(1, cfg.init_max_depth);
                    let mut e = random_tree(&data.sig, depth, &mut r);
                    while e.size() > cfg.max_size {
                        e = random_tree(&data.sig, depth, &mut r);
                    }
                    data.score(e, &mut buf)
                })
                .collect();
            sort_pop(&mut pop);
            pop
        })
        .collect();

    let mut champion = pops
        .iter()
        .flatten()
        .min_by(|a, b| lower_mse(a, b))
        .cloned()
        .expect("at least one population");
    let mut history = Vec::with_capacity(cfg.rounds);
    let mut env_steps = 0;

    for round in 0..cfg.rounds {
        if champion.mse > cfg.converged_mse {
            pops.par_iter_mut().enumerate().for_each(|(i, pop)| {
                let mut r = rng.derive2(2 + round as u64, i as u64);
                evolve(pop, cfg, &data, &mut r);
            });
            for s in pops.iter().flatten() {
                if lower_mse(s, &champion) == Ordering::Less {
                    champion = s.clone();
                }
            }
            champion = optimize_constants(&champion, &data, cfg.constant_opt_rate);
            for p in &mut pops {
                *p.last_mut().unwrap() = champion.clone();
                sort_pop(p);
            }
        }
        let s = evaluator.evaluate(Candidate::Expr(&champion.expr))?;
        env_steps += s.env_steps;
        history.push(RoundRecord {
            round,
            champion_mse: champion.mse,
            champion_size: champion.expr.size(),
            champion: print_expr(&champion.expr),
            rl_score: s.score,
        });
    }
    Ok(SymDistillOutcome {
        best: champion.expr,
        best_mse: champion.mse,
        rl_evaluations: history.len(),
        history,
        env_steps,
    })
}

/// Test-set MSE of `e` against the teacher on fresh inputs.
pub fn symbolic_test_mse(teacher: &Teacher, e: &Expr, spec: &SyntheticInputSpec, n: usize, rng: &RngStream) -> Result<f64> {
    let data = Dataset::new(teacher, spec, n, rng)?;
    Ok(data.mse(e, &mut Vec::new()))
}

impl TargetKind {
    pub fn max_size(self) -> usize {
        match self {
            TargetKind::Drift => DRIFT_MAX_SIZE,
            TargetKind::Optimizer => OPTIMIZER_MAX_SIZE,
        }
    }
}
