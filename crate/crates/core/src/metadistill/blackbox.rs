use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::synthetic::{generate_synthetic_inputs, SyntheticBatch, SyntheticInputSpec, TargetKind};
use crate::envs::{sample_env, EnvDistribution};
use crate::error::{Error, Result};
use crate::evalreport::iqm;
use crate::learnedalgos::{DriftFunction, FeatureSet, UpdateRuleKind};
use crate::numcore::{backward_batch, forward_batch, Adam, MlpParams, RngStream};
use crate::rltrain::{train_agent, EnvSource, PpoConfig};
use crate::symdsl::{Expr, Program};

/// The function being distilled.
#[derive(Debug, Clone, PartialEq)]
pub enum Teacher {
    /// Bias-free drift network over the 7 ratio features.
    DriftNet(MlpParams),
    /// Learned optimizer network; its target is the raw network output.
    OptimizerNet {
        net: MlpParams,
        feature_set: FeatureSet,
        output_scale: f64,
    },
    /// A planted expression, evaluated over the signature columns.
    Expr { kind: TargetKind, expr: Expr },
}

impl Teacher {
    pub fn from_drift(d: &DriftFunction) -> Result<Self> {
        match d {
            DriftFunction::Blackbox { net } => Ok(Teacher::DriftNet(net.clone())),
            DriftFunction::Symbolic { expr } => Ok(Teacher::Expr {
                kind: TargetKind::Drift,
                expr: expr.clone(),
            }),
            DriftFunction::PpoClip { .. } => Err(Error::Config("the clip drift has no network to distill".into())),
        }
    }

    pub fn from_rule(r: &UpdateRuleKind) -> Result<Self> {
        match r {
            UpdateRuleKind::LearnedBlackbox {
                net,
                feature_set,
                output_scale,
                ..
            } => Ok(Teacher::OptimizerNet {
                net: net.clone(),
                feature_set: *feature_set,
                output_scale: *output_scale,
            }),
            _ => Err(Error::Config("only learned black-box optimizers can be distilled".into())),
        }
    }

    pub fn kind(&self) -> TargetKind {
        match self {
            Teacher::DriftNet(_) => TargetKind::Drift,
            Teacher::OptimizerNet { .. } => TargetKind::Optimizer,
            Teacher::Expr { kind, .. } => *kind,
        }
    }

    pub fn net(&self) -> Option<&MlpParams> {
        match self {
            Teacher::DriftNet(n) | Teacher::OptimizerNet { net: n, .. } => Some(n),
            Teacher::Expr { .. } => None,
        }
    }

    /// Network-space targets: what a student network regresses onto.
    pub fn net_targets(&self, batch: &SyntheticBatch) -> Result<Vec<f64>> {
        match self.net() {
            Some(net) => {
                if net.spec.input_width() != batch.feature_width {
                    return Err(Error::Contract(format!(
                        "teacher expects {} inputs, batch has {}",
                        net.spec.input_width(),
                        batch.feature_width
                    )));
                }
                Ok(forward_batch(net, &batch.features, batch.n)?.output().to_vec())
            }
            None => self.symbolic_targets(batch),
        }
    }

    /// Targets in expression space: the drift value, or the parameter
    /// update (`output_scale * net`) for optimizers.
    pub fn symbolic_targets(&self, batch: &SyntheticBatch) -> Result<Vec<f64>> {
        match self {
            Teacher::DriftNet(_) => self.net_targets(batch),
            Teacher::OptimizerNet { output_scale, .. } => {
                Ok(self.net_targets(batch)?.iter().map(|v| v * output_scale).collect())
            }
            Teacher::Expr { kind, expr } => {
                let prog = Program::compile(expr, &kind.signature())?;
                let mut out = vec![0.0; batch.n];
                prog.eval_columns(&batch.column_refs(), &mut out);
                Ok(out)
            }
        }
    }
}

/// A candidate algorithm handed to an RL evaluator.
#[derive(Debug, Clone, Copy)]
pub enum Candidate<'a> {
    Net(&'a MlpParams),
    Expr(&'a Expr),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RlScore {
    pub score: f64,
    pub env_steps: usize,
    pub runs: usize,
}

pub trait RlEvaluator: Sync {
    fn evaluate(&self, candidate: Candidate) -> Result<RlScore>;
}

/// Plugs a candidate into RL training and scores it by the IQM of final
/// returns over a fixed list of (environment, seed) pairs drawn from the
/// meta-training distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlEvalTask {
    pub kind: TargetKind,
    pub ppo: PpoConfig,
    pub dist: EnvDistribution,
    pub n_seeds: usize,
    pub base_seed: u64,
    /// Inner-loop rule for drift candidates.
    pub drift_rule: UpdateRuleKind,
    /// Optimizer candidates run with the clip drift at this epsilon.
    pub clip_eps: f64,
    pub feature_set: FeatureSet,
    pub output_scale: f64,
    pub noise_scale: f64,
    /// `lr` bound in symbolic optimizer candidates.
    pub symbolic_lr: f64,
}

impl RlEvalTask {
    pub fn build(&self, c: Candidate) -> Result<(DriftFunction, UpdateRuleKind)> {
        match (self.kind, c) {
            (TargetKind::Drift, Candidate::Net(n)) => Ok((DriftFunction::blackbox(n.clone())?, self.drift_rule.clone())),
            (TargetKind::Drift, Candidate::Expr(e)) => Ok((DriftFunction::symbolic(e.clone())?, self.drift_rule.clone())),
            (TargetKind::Optimizer, Candidate::Net(n)) => Ok((
                DriftFunction::ppo(self.clip_eps),
                UpdateRuleKind::LearnedBlackbox {
                    net: n.clone(),
                    feature_set: self.feature_set,
                    output_scale: self.output_scale,
                    noise_scale: self.noise_scale,
                },
            )),
            (TargetKind::Optimizer, Candidate::Expr(e)) => Ok((
                DriftFunction::ppo(self.clip_eps),
                UpdateRuleKind::Symbolic {
                    expr: e.clone(),
                    lr: self.symbolic_lr,
                },
            )),
        }
    }

    /// Final returns of one training run per evaluation seed, in seed order.
    pub fn returns(&self, drift: &DriftFunction, rule: &UpdateRuleKind) -> Result<(Vec<f64>, usize)> {
        let runs: Vec<Result<(f64, usize)>> = (0..self.n_seeds)
            .into_par_iter()
            .map(|s| {
                let mut rng = RngStream::new(self.base_seed, s as u64);
                let env = sample_env(&self.dist, &mut rng)?;
                let r = train_agent(&self.ppo, &EnvSource::Instance(env), drift, rule, self.base_seed.wrapping_add(s as u64))?;
                Ok((r.fitness(), r.env_steps))
            })
            .collect();
        let mut out = Vec::with_capacity(self.n_seeds);
        let mut steps = 0;
        for r in runs {
            let (f, s) = r?;
            out.push(f);
            steps += s;
        }
        Ok((out, steps))
    }
}

impl RlEvaluator for RlEvalTask {
    fn evaluate(&self, c: Candidate) -> Result<RlScore> {
        let (drift, rule) = self.build(c)?;
        let (returns, env_steps) = self.returns(&drift, &rule)?;
        let score = if returns.iter().all(|r| r.is_finite()) {
            iqm(&returns)?
        } else {
            f64::NEG_INFINITY
        };
        Ok(RlScore {
            score,
            env_steps,
            runs: returns.len(),
        })
    }
}

impl<F: Fn(Candidate) -> f64 + Sync> RlEvaluator for F {
    fn evaluate(&self, c: Candidate) -> Result<RlScore> {
        Ok(RlScore {
            score: self(c),
            env_steps: 0,
            runs: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentSize {
    Same,
    /// Every hidden width halved (rounded up).
    Smaller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillConfig {
    pub student: StudentSize,
    pub lr_sweep: Vec<f64>,
    pub n_regression_steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub held_out_size: usize,
    pub input: SyntheticInputSpec,
}

impl DistillConfig {
    pub fn drift(student: StudentSize) -> Self {
        Self {
            student,
            lr_sweep: vec![0.1, 0.02, 0.001],
            n_regression_steps: 2000,
            eval_every: 500,
            batch_size: 256,
            held_out_size: 4096,
            input: SyntheticInputSpec::drift(256),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr_sweep.is_empty() || self.lr_sweep.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("lr_sweep must be non-empty and positive".into()));
        }
        if self.eval_every == 0 || self.n_regression_steps == 0 || self.n_regression_steps % self.eval_every != 0 {
            return Err(Error::Config(format!(
                "eval_every ({}) must divide n_regression_steps ({})",
                self.eval_every, self.n_regression_steps
            )));
        }
        if self.batch_size == 0 || self.held_out_size == 0 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        self.input.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub arm: usize,
    pub lr: f64,
    pub step: usize,
    pub held_out_mse: f64,
    pub rl_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbandonedArm {
    pub arm: usize,
    pub lr: f64,
    pub step: usize,
    pub loss: f64,
    pub initial_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome {
    pub student: MlpParams,
    pub selected: usize,
    pub log: Vec<CheckpointRecord>,
    pub abandoned: Vec<AbandonedArm>,
    pub rl_evaluations: usize,
    pub env_steps: usize,
}

/// Index of the highest RL score; the earliest record wins ties.
pub fn select_best_checkpoint(log: &[CheckpointRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in log.iter().enumerate() {
        match best {
            Some(b) if log[b].rl_score >= r.rl_score => {}
            _ if r.rl_score.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

pub fn student_spec_for(teacher: &MlpParams, size: StudentSize) -> crate::numcore::MlpSpec {
    match size {
        StudentSize::Same => teacher.spec.clone(),
        StudentSize::Smaller => teacher.spec.halved_hidden(),
    }
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / target.len() as f64
}

/// Distill from a freshly initialized student.
pub fn distill_blackbox(
    teacher: &Teacher,
    cfg: &DistillConfig,
    evaluator: &dyn RlEvaluator,
    rng: &RngStream,
) -> Result<DistillOutcome> {
    let t = teacher
        .net()
        .ok_or_else(|| Error::Config("black-box distillation needs a network teacher".into()))?;
    let spec = student_spec_for(t, cfg.student);
    let mut init = MlpParams::init(spec, t.bias_enabled, 1.0, &mut rng.derive(0));
    if matches!(teacher, Teacher::DriftNet(_)) {
        // keep the relu output alive at the start, as for the drift init
        let last = *init.layer_slots().last().unwrap();
        for w in &mut init.values[last.weight_range()] {
            *w = w.abs();
        }
    }
    distill_blackbox_from(teacher, init, cfg, evaluator, rng)
}

/// L2 regression of `student_init` onto the teacher for every learning rate
/// in the sweep. After every `eval_every` steps the student is scored by
/// `evaluator`; the best-scoring checkpoint over the whole sweep is returned.
/// An arm whose minibatch loss exceeds ten times its initial loss is
/// abandoned.
pub fn distill_blackbox_from(
    teacher: &Teacher,
    student_init: MlpParams,
    cfg: &DistillConfig,
    evaluator: &dyn RlEvaluator,
    rng: &RngStream,
) -> Result<DistillOutcome> {
    cfg.validate()?;
    let t = teacher
        .net()
        .ok_or_else(|| Error::Config("black-box distillation needs a network teacher".into()))?;
    if t.spec.input_width() != student_init.spec.input_width() || t.spec.output_width() != student_init.spec.output_width() {
        return Err(Error::Contract("teacher and student disagree on input or output width".into()));
    }
    let held = generate_synthetic_inputs(&cfg.input, cfg.held_out_size, &rng.derive(1))?;
    let held_y = teacher.net_targets(&held)?;
    let mut log = Vec::new();
    let mut params_log: Vec<MlpParams> = Vec::new();
    let mut abandoned = Vec::new();
    let mut rl_evaluations = 0;
    let mut env_steps = 0;

    for (arm, &lr) in cfg.lr_sweep.iter().enumerate() {
        let mut student = student_init.clone();
        let mut opt = Adam::new(student.len(), lr);
        let arm_rng = rng.derive2(2, arm as u64);
        let mut initial_loss = None;
        for step in 1..=cfg.n_regression_steps {
            let batch = generate_synthetic_inputs(&cfg.input, cfg.batch_size, &arm_rng.derive(step as u64))?;
            let y = teacher.net_targets(&batch)?;
            let cache = forward_batch(&student, &batch.features, batch.n)?;
            let out = cache.output();
            let loss = mse(out, &y);
            let init = *initial_loss.get_or_insert(loss);
            if !loss.is_finite() || loss > 10.0 * init.max(1e-8) {
                abandoned.push(AbandonedArm {
                    arm,
                    lr,
                    step,
                    loss,
                    initial_loss: init,
                });
                break;
            }
            let scale = 2.0 / out.len() as f64;
            let up: Vec<f64> = out.iter().zip(&y).map(|(p, t)| scale * (p - t)).collect();
            let (g, _) = backward_batch(&student, &cache, &up, false)?;
            opt.step(&mut student.values, &g);
            if step % cfg.eval_every == 0 {
                let held_mse = mse(forward_batch(&student, &held.features, held.n)?.output(), &held_y);
                let s = evaluator.evaluate(Candidate::Net(&student))?;
                rl_evaluations += 1;
                env_steps += s.env_steps;
                log.push(CheckpointRecord {
                    arm,
                    lr,
                    step,
                    held_out_mse: held_mse,
                    rl_score: s.score,
                });
                params_log.push(student.clone());
            }
        }
    }
    let selected = select_best_checkpoint(&log)
        .ok_or_else(|| Error::Training("every distillation arm was abandoned before its first checkpoint".into()))?;
    Ok(DistillOutcome {
        student: params_log.swap_remove(selected),
        selected,
        log,
        abandoned,
        rl_evaluations,
        env_steps,
    })
}

/// Held-out MSE of a student against the teacher on fresh synthetic inputs.
pub fn regression_mse(teacher: &Teacher, student: &MlpParams, spec: &SyntheticInputSpec, n: usize, rng: &RngStream) -> Result<f64> {
    let b = generate_synthetic_inputs(spec, n, rng)?;
    let y = teacher.net_targets(&b)?;
    Ok(mse(forward_batch(student, &b.features, b.n)?.output(), &y))
}
