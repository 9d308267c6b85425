use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Neg,
    Abs,
    Log,
    Exp,
    Tanh,
    Relu,
    Sin,
    Cos,
    Sgn,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TernaryOp {
    Clip,
    Where,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 10] = [
        UnaryOp::Neg,
        UnaryOp::Abs,
        UnaryOp::Log,
        UnaryOp::Exp,
        UnaryOp::Tanh,
        UnaryOp::Relu,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Sgn,
        UnaryOp::Square,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Abs => "abs",
            UnaryOp::Log => "log",
            UnaryOp::Exp => "exp",
            UnaryOp::Tanh => "tanh",
            UnaryOp::Relu => "relu",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Sgn => "sgn",
            UnaryOp::Square => "square",
        }
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 7] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::Div,
        BinaryOp::Min,
        BinaryOp::Max,
        BinaryOp::Pow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Min => "min",
            BinaryOp::Max => "max",
            BinaryOp::Pow => "pow",
        }
    }

    /// Infix symbol for the operators printed infix.
    pub fn symbol(self) -> Option<&'static str> {
        match self {
            BinaryOp::Add => Some("+"),
            BinaryOp::Sub => Some("-"),
            BinaryOp::Mul => Some("*"),
            BinaryOp::Div => Some("/"),
            BinaryOp::Pow => Some("^"),
            BinaryOp::Min | BinaryOp::Max => None,
        }
    }
}

impl TernaryOp {
    pub const ALL: [TernaryOp; 2] = [TernaryOp::Clip, TernaryOp::Where];

    pub fn name(self) -> &'static str {
        match self {
            TernaryOp::Clip => "clip",
            TernaryOp::Where => "where",
        }
    }
}

/// Symbolic expression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Ternary(TernaryOp, Box<Expr>, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_string())
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn ternary(op: TernaryOp, a: Expr, b: Expr, c: Expr) -> Self {
        Expr::Ternary(op, Box::new(a), Box::new(b), Box::new(c))
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => vec![],
            Expr::Unary(_, a) => vec![a],
            Expr::Binary(_, a, b) => vec![a, b],
            Expr::Ternary(_, a, b, c) => vec![a, b, c],
        }
    }

    fn children_mut(&mut self) -> Vec<&mut Expr> {
        match self {
            Expr::Const(_) | Expr::Var(_) => vec![],
            Expr::Unary(_, a) => vec![a.as_mut()],
            Expr::Binary(_, a, b) => vec![a.as_mut(), b.as_mut()],
            Expr::Ternary(_, a, b, c) => vec![a.as_mut(), b.as_mut(), c.as_mut()],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Const(_) | Expr::Var(_))
    }

    /// Total node count.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn depth(&self) -> usize {
        1 + self.children().iter().map(|c| c.depth()).max().unwrap_or(0)
    }

    /// Node at pre-order index `idx`.
    pub fn node(&self, idx: usize) -> Option<&Expr> {
        if idx == 0 {
            return Some(self);
        }
        let mut rest = idx - 1;
        for c in self.children() {
            let s = c.size();
            if rest < s {
                return c.node(rest);
            }
            rest -= s;
        }
        None
    }

    pub fn node_mut(&mut self, idx: usize) -> Option<&mut Expr> {
        if idx == 0 {
            return Some(self);
        }
        let mut rest = idx - 1;
        for c in self.children_mut() {
            let s = c.size();
            if rest < s {
                return c.node_mut(rest);
            }
            rest -= s;
        }
        None
    }

    /// Pre-order indices of nodes satisfying `pred`.
    pub fn find_indices(&self, pred: impl Fn(&Expr) -> bool) -> Vec<usize> {
        fn walk(e: &Expr, idx: &mut usize, pred: &dyn Fn(&Expr) -> bool, out: &mut Vec<usize>) {
            if pred(e) {
                out.push(*idx);
            }
            *idx += 1;
            for c in e.children() {
                walk(c, idx, pred, out);
            }
        }
        let mut out = Vec::new();
        walk(self, &mut 0, &pred, &mut out);
        out
    }

    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a str>) {
            if let Expr::Var(v) = e {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
            for c in e.children() {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }

    /// Mutable references to every constant, in pre-order.
    pub fn constants_mut(&mut self) -> Vec<&mut f64> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a mut Expr, out: &mut Vec<&'a mut f64>) {
            match e {
                Expr::Const(c) => out.push(c),
                Expr::Var(_) => {}
                Expr::Unary(_, a) => walk(a, out),
                Expr::Binary(_, a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
                Expr::Ternary(_, a, b, c) => {
                    walk(a, out);
                    walk(b, out);
                    walk(c, out);
                }
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn constants(&self) -> Vec<f64> {
        let mut e = self.clone();
        e.constants_mut().into_iter().map(|c| *c).collect()
    }
}

/// Total node count.
pub fn complexity(e: &Expr) -> usize {
    e.size()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    vars: Vec<(String, String)>,
}

impl Signature {
    pub fn new(vars: Vec<(String, String)>) -> Result<Self> {
        if vars.is_empty() {
            return Err(Error::Config("signature has no variables".into()));
        }
        for (i, (name, _)) in vars.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Config("empty variable name".into()));
            }
            if vars[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::Config(format!("duplicate variable `{name}`")));
            }
        }
        Ok(Self { vars })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.iter().map(|(n, _)| n.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|(n, _)| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// Check that every variable of `e` is declared here and its size is within bounds.
    pub fn check(&self, e: &Expr, max_size: usize) -> Result<()> {
        if let Some(v) = e.variables().into_iter().find(|v| !self.contains(v)) {
            return Err(Error::UnknownIdent(v.to_string()));
        }
        let size = e.size();
        if size > max_size {
            return Err(Error::ExprTooLarge {
                size,
                max: max_size,
            });
        }
        Ok(())
    }

    /// Variables of a drift function.
    pub fn drift() -> Self {
        Self::new(vec![
            (
                "r".into(),
                "the ratio of the new policy probability to the previous (behaviour) policy probability".into(),
            ),
            ("A".into(), "the GAE advantage estimate, standardized per minibatch".into()),
            ("eps".into(), "the PPO clip epsilon".into()),
        ])
        .unwrap()
    }

    /// Variables of a per-parameter optimizer.
    pub fn optimizer() -> Self {
        let mut vars: Vec<(String, String)> = vec![
            ("p".into(), "the current value of the parameter being optimised".into()),
            ("g".into(), "the gradient of the loss with respect to the parameter".into()),
        ];
        for (name, beta) in MOMENTUM_NAMES.iter().zip(MOMENTUM_BETAS) {
            vars.push((
                name.to_string(),
                format!("gradient momentum, updated as m = {beta} * g + (1 - {beta}) * m"),
            ));
        }
        vars.extend([
            (
                "l_p".into(),
                "layer proportion: 0 in the first layer, increasing linearly to 1 in the final layer".into(),
            ),
            (
                "b_p".into(),
                "batch proportion: fraction of the epochs and minibatches already spent on the current batch of data".into(),
            ),
            ("t_p".into(), "training proportion: fraction of the total training budget consumed".into()),
            (
                "dorm".into(),
                "dormancy of the neuron the parameter feeds into, between 0 and the number of neurons in its layer".into(),
            ),
            ("rand".into(), "a fresh standard normal sample for each parameter".into()),
            ("lr".into(), "the learning rate, tuned per environment and linearly annealed".into()),
            ("iteration".into(), "the number of updates applied so far".into()),
        ]);
        Self::new(vars).unwrap()
    }
}

pub const MOMENTUM_BETAS: [f64; 6] = [0.1, 0.5, 0.9, 0.99, 0.999, 0.9999];
pub const MOMENTUM_NAMES: [&str; 6] = ["m_0_1", "m_0_5", "m_0_9", "m_0_99", "m_0_999", "m_0_9999"];

/// Max node count for symbolic drift functions.
pub const DRIFT_MAX_SIZE: usize = 40;
/// Max node count for symbolic optimizers.
pub const OPTIMIZER_MAX_SIZE: usize = 60;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complexity_counts_nodes() {
        assert_eq!(complexity(&Expr::Const(1.0)), 1);
        let e = Expr::binary(BinaryOp::Sub, Expr::Const(1.0), Expr::var("r"));
        assert_eq!(complexity(&e), 3);
    }

    #[test]
    fn preorder_addressing() {
        // (1 - r) * A  -> [mul, sub, 1, r, A]
        let e = Expr::binary(
            BinaryOp::Mul,
            Expr::binary(BinaryOp::Sub, Expr::Const(1.0), Expr::var("r")),
            Expr::var("A"),
        );
        assert_eq!(e.node(2), Some(&Expr::Const(1.0)));
        assert_eq!(e.node(3), Some(&Expr::var("r")));
        assert_eq!(e.node(4), Some(&Expr::var("A")));
        assert_eq!(e.node(5), None);
        assert_eq!(e.find_indices(|n| n.is_leaf()), vec![2, 3, 4]);
    }

    #[test]
    fn signature_rejects_duplicates() {
        assert!(Signature::new(vec![("a".into(), "".into()), ("a".into(), "".into())]).is_err());
        assert!(Signature::new(vec![]).is_err());
        assert_eq!(Signature::optimizer().len(), 15);
    }
}
