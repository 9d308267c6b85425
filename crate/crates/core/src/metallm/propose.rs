use std::path::Path;

use serde::{Deserialize, Serialize};

use super::client::{ChatModel, Message, Role};
use super::prompt::{build_prompt, fitness_message, invalid_code_message, parse_response, ProposalKind, ProposalRecord};
use crate::error::{Error, Result};
use crate::metadistill::{Candidate, RlEvaluator};
use crate::numcore::RngStream;
use crate::symdsl::{Expr, Program, Signature};

pub const IDENTITY_TOL: f64 = 1e-6;
pub const NEGATIVITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopConfig {
    /// Number of proposals to evaluate.
    pub budget: usize,
    #[serde(default = "default_max_invalid")]
    pub max_consecutive_invalid: usize,
    #[serde(default = "default_identity_samples")]
    pub identity_samples: usize,
}

fn default_max_invalid() -> usize {
    3
}

fn default_identity_samples() -> usize {
    256
}

impl LoopConfig {
    pub fn new(budget: usize) -> Self {
        Self {
            budget,
            max_consecutive_invalid: default_max_invalid(),
            identity_samples: default_identity_samples(),
        }
    }
}

/// Empirical drift checks on the raw (unclamped) expression: `D(1, A)` within
/// 1e-6 of zero for sampled `A`, and `D >= -1e-9` over a fixed grid with
/// `r` in [0.05, 5] and `A` in [-5, 5].
pub fn check_drift_validity(e: &Expr, samples: usize, rng: &RngStream) -> Result<()> {
    let p = Program::compile(e, &Signature::drift())?;
    let eps = crate::learnedalgos::DEFAULT_CLIP_EPS;
    let mut rng = *rng;
    for _ in 0..samples {
        let a = 3.0 * rng.normal();
        let v = p.eval(&[1.0, a, eps]);
        if v.abs() > IDENTITY_TOL {
            return Err(Error::Validation(format!(
                "the drift must be zero at r = 1, but D(1, {a:.4}) = {v:.6e}"
            )));
        }
    }
    for i in 0..=60 {
        let r = 0.05 + 4.95 * i as f64 / 60.0;
        for j in 0..=40 {
            let a = -5.0 + 10.0 * j as f64 / 40.0;
            let v = p.eval(&[r, a, eps]);
            if v < -NEGATIVITY_TOL {
                return Err(Error::Validation(format!(
                    "the drift must be non-negative everywhere, but D({r:.4}, {a:.4}) = {v:.6e}"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub kind: ProposalKind,
    pub messages: Vec<Message>,
    /// Warm start first, then every proposal in arrival order.
    pub records: Vec<ProposalRecord>,
}

impl Conversation {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn count_user_messages_starting_with(&self, prefix: &str) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User && m.content.starts_with(prefix))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopOutcome {
    pub best: ProposalRecord,
    pub best_index: usize,
    pub conversation: Conversation,
    /// Proposals that reached fitness evaluation (warm start excluded).
    pub evaluated: usize,
    /// Training runs spent, warm start included when measured here.
    pub rl_runs: usize,
    pub env_steps: usize,
    pub aborted: Option<String>,
}

/// Index of the highest fitness among evaluated records; later records win
/// ties so a proposal that matches the warm start replaces it.
pub fn select_best_record(records: &[ProposalRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        let Some(f) = r.fitness else { continue };
        if f.is_nan() {
            continue;
        }
        match best {
            Some(b) if records[b].fitness.unwrap() > f => {}
            _ => best = Some(i),
        }
    }
    best
}

fn validate(kind: ProposalKind, text: &str, cfg: &LoopConfig, rng: &RngStream) -> Result<(ProposalRecord, Expr)> {
    let (rec, expr) = parse_response(text, kind)?;
    if kind == ProposalKind::Drift {
        check_drift_validity(&expr, cfg.identity_samples, rng)?;
    }
    Ok((rec, expr))
}

/// Query, validate, evaluate, feed back, until `budget` proposals have been
/// evaluated. The warm start is measured with `evaluator` when its fitness
/// is missing. Stops early after `max_consecutive_invalid` invalid replies
/// in a row or a transport failure; the best record so far is returned.
pub fn propose_loop(
    model: &mut dyn ChatModel,
    kind: ProposalKind,
    warm_start: ProposalRecord,
    evaluator: &dyn RlEvaluator,
    cfg: &LoopConfig,
    rng: &RngStream,
) -> Result<LoopOutcome> {
    let sig = kind.signature();
    let mut warm = warm_start;
    let mut rl_runs = 0;
    let mut env_steps = 0;
    if warm.fitness.is_none() {
        let e = warm.expr(kind)?;
        let s = evaluator.evaluate(Candidate::Expr(&e))?;
        rl_runs += s.runs;
        env_steps += s.env_steps;
        warm.fitness = Some(s.score);
    }
    let mut conv = Conversation {
        kind,
        messages: vec![Message::user(build_prompt(kind, &sig, std::slice::from_ref(&warm))?)],
        records: vec![warm],
    };
    let mut evaluated = 0;
    let mut invalid_run = 0;
    let mut aborted = None;
    let mut turn = 0u64;
    while evaluated < cfg.budget {
        let reply = match model.complete(&conv.messages) {
            Ok(r) => r,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        conv.messages.push(Message::assistant(reply.clone()));
        turn += 1;
        match validate(kind, &reply, cfg, &rng.derive(turn)) {
            Err(e) => {
                let msg = e.to_string();
                let mut rec = ProposalRecord::new("", "", "");
                if let Ok((r, _)) = parse_response(&reply, kind) {
                    rec = r;
                }
                rec.error = Some(msg.clone());
                conv.records.push(rec);
                conv.messages.push(Message::user(invalid_code_message(&msg)));
                invalid_run += 1;
                if invalid_run >= cfg.max_consecutive_invalid {
                    aborted = Some(format!("{invalid_run} consecutive invalid proposals"));
                    break;
                }
            }
            Ok((mut rec, expr)) => {
                invalid_run = 0;
                let s = evaluator.evaluate(Candidate::Expr(&expr))?;
                rl_runs += s.runs;
                env_steps += s.env_steps;
                rec.fitness = Some(s.score);
                conv.records.push(rec);
                conv.messages.push(Message::user(fitness_message(s.score)));
                evaluated += 1;
            }
        }
    }
    let best_index = select_best_record(&conv.records).unwrap_or(0);
    Ok(LoopOutcome {
        best: conv.records[best_index].clone(),
        best_index,
        conversation: conv,
        evaluated,
        rl_runs,
        env_steps,
        aborted,
    })
}
