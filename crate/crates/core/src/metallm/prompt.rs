use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::symdsl::{parse_bounded, Expr, Signature, DRIFT_MAX_SIZE, OPTIMIZER_MAX_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Drift,
    OptimizerFf,
}

impl ProposalKind {
    pub fn signature(self) -> Signature {
        match self {
            ProposalKind::Drift => Signature::drift(),
            ProposalKind::OptimizerFf => Signature::optimizer(),
        }
    }

    pub fn max_size(self) -> usize {
        match self {
            ProposalKind::Drift => DRIFT_MAX_SIZE,
            ProposalKind::OptimizerFf => OPTIMIZER_MAX_SIZE,
        }
    }
}

/// One proposal and what became of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub name: String,
    pub thought: String,
    pub code: String,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub fitness: Option<f64>,
}

impl ProposalRecord {
    pub fn new(name: &str, thought: &str, code: &str) -> Self {
        Self {
            name: name.into(),
            thought: thought.into(),
            code: code.into(),
            error: None,
            fitness: None,
        }
    }

    pub fn expr(&self, kind: ProposalKind) -> Result<Expr> {
        parse_bounded(&self.code, &kind.signature(), kind.max_size()).map_err(|e| Error::Validation(e.to_string()))
    }
}

const GRAMMAR: &str = "\
Write the body as a single expression in this language:
  numbers, the input names listed below, parentheses
  infix operators: + - * / ^ (^ is power; unary minus is allowed)
  unary functions: neg abs log exp tanh relu sin cos sgn square
  binary functions: min(a, b) max(a, b) pow(a, b) div(a, b)
  branching: clip(x, lo, hi) and where(cond, then, else), which picks `then` when cond > 0
log, division and pow are guarded so the expression never faults.
There are no statements, assignments or loops.";

fn intro(kind: ProposalKind) -> &'static str {
    match kind {
        ProposalKind::Drift => "a new drift function",
        ProposalKind::OptimizerFf => "a new per-parameter optimiser",
    }
}

fn example(kind: ProposalKind) -> (&'static str, &'static str, &'static str) {
    match kind {
        ProposalKind::Drift => (
            "A smoothed version of the clipped penalty might behave better near the clip boundary.",
            "tanh_clip",
            "relu(tanh(r - clip(r, 1 - eps, 1 + eps)) * A)",
        ),
        ProposalKind::OptimizerFf => (
            "Scaling the step by the sign of a slow momentum could reduce noise.",
            "signed_momentum",
            "lr * sgn(m_0_9)",
        ),
    }
}

fn task_notes(kind: ProposalKind) -> &'static str {
    match kind {
        ProposalKind::Drift => "\
The value returned is the drift D(r, A), subtracted from the ratio-weighted advantage in the policy objective.
A valid drift function must be non-negative everywhere, zero at identity (r = 1), and flat in r at r = 1. \
Working with (r - 1) or log(r) makes the last two conditions easier to meet. \
Proposals that go negative or are nonzero at r = 1 are rejected.",
        ProposalKind::OptimizerFf => "\
The value returned is the update subtracted from the parameter: p <- p - value. \
It is applied to every parameter of the agent independently.",
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization")
}

fn format_fitness(f: Option<f64>) -> String {
    match f {
        Some(v) => format!("{v}"),
        None => "not measured".into(),
    }
}

/// First user message. `history` must hold at least the warm start.
pub fn build_prompt(kind: ProposalKind, sig: &Signature, history: &[ProposalRecord]) -> Result<String> {
    if history.is_empty() {
        return Err(Error::Contract("the prompt needs at least the warm-start record".into()));
    }
    let (thought, name, code) = example(kind);
    let mut s = String::new();
    s.push_str(&format!(
        "You are a machine learning researcher designing {} for reinforcement learning. \
Reply with one JSON object. Its first key (\"thought\") holds your reasoning for the next design, \
its second key (\"name\") a short name for it, and its last key (\"code\") the expression to try. For example:\n\n",
        intro(kind)
    ));
    s.push_str(&format!(
        "{{\"thought\": {}, \"name\": {}, \"code\": {}}}\n\n",
        json_str(thought),
        json_str(name),
        json_str(code)
    ));
    s.push_str("Draw on what you know from the literature and be inventive.\n\n");
    s.push_str(GRAMMAR);
    s.push_str("\n\n");
    s.push_str(task_notes(kind));
    s.push_str("\n\nInputs:\n");
    for (n, d) in sig.entries() {
        s.push_str(&format!("`{n}`: {d}\n"));
    }
    s.push_str(
        "\nEach proposal is trained on downstream tasks and you will be told its fitness. \
Aim for the highest fitness.\n\nResults so far:\n",
    );
    for r in history {
        s.push_str(&format!(
            "{{\"name\": {}, \"code\": {}, \"fitness\": {}}}\n",
            json_str(&r.name),
            json_str(&r.code),
            format_fitness(r.fitness)
        ));
    }
    s.push_str("\nPlease generate the next one.");
    Ok(s)
}

fn outermost_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut it = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(m))) = it.next() {
            return Some(m);
        }
    }
    None
}

/// Pulls `thought`, `name` and `code` from the first complete JSON object in
/// `text` and parses the code against `kind`'s signature.
pub fn parse_response(text: &str, kind: ProposalKind) -> Result<(ProposalRecord, Expr)> {
    let obj = outermost_object(text).ok_or_else(|| Error::Format("no JSON object found in the response".into()))?;
    let get = |k: &str| -> Result<String> {
        match obj.get(k) {
            None => Err(Error::MissingKey(k.into())),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(Error::Format(format!("key `{k}` must be a string"))),
        }
    };
    let rec = ProposalRecord::new(&get("name")?, &get("thought")?, &get("code")?);
    let expr = rec.expr(kind)?;
    Ok((rec, expr))
}

pub fn invalid_code_message(err: &str) -> String {
    format!("Code not valid. Error:\n{err}\nPlease generate the next one.")
}

pub fn fitness_message(fitness: f64) -> String {
    format!("Fitness: {fitness}. Please generate the next one.")
}
