//! Random trees and the two genetic edit operators.

use super::ast::{BinaryOp, Expr, Signature, TernaryOp, UnaryOp};
use crate::numcore::RngStream;

const MAX_TRIES: usize = 20;

/// Constant drawn for a fresh leaf: half the time a small integer, otherwise
/// a standard normal.
pub fn random_constant(rng: &mut RngStream) -> f64 {
    if rng.bernoulli(0.5) {
        [-1.0, 0.0, 1.0, 2.0][rng.index(4)]
    } else {
        rng.normal()
    }
}

pub fn random_leaf(sig: &Signature, rng: &mut RngStream) -> Expr {
    if rng.bernoulli(0.6) {
        let i = rng.index(sig.len());
        Expr::Var(sig.entries()[i].0.clone())
    } else {
        Expr::Const(random_constant(rng))
    }
}

/// Random tree of depth at most `max_depth` (a leaf has depth 1).
pub fn random_tree(sig: &Signature, max_depth: usize, rng: &mut RngStream) -> Expr {
    if max_depth <= 1 || rng.bernoulli(0.3) {
        return random_leaf(sig, rng);
    }
    let d = max_depth - 1;
    match rng.index(10) {
        0..=2 => Expr::unary(UnaryOp::ALL[rng.index(UnaryOp::ALL.len())], random_tree(sig, d, rng)),
        3..=8 => Expr::binary(
            BinaryOp::ALL[rng.index(BinaryOp::ALL.len())],
            random_tree(sig, d, rng),
            random_tree(sig, d, rng),
        ),
        _ => Expr::ternary(
            TernaryOp::ALL[rng.index(TernaryOp::ALL.len())],
            random_tree(sig, d, rng),
            random_tree(sig, d, rng),
            random_tree(sig, d, rng),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    ChangeOperator,
    ReplaceLeaf,
    InsertUnary,
    DeleteUnary,
    PerturbConstant,
    ReplaceSubtree,
}

impl MutationKind {
    pub const ALL: [MutationKind; 6] = [
        MutationKind::ChangeOperator,
        MutationKind::ReplaceLeaf,
        MutationKind::InsertUnary,
        MutationKind::DeleteUnary,
        MutationKind::PerturbConstant,
        MutationKind::ReplaceSubtree,
    ];
}

/// Apply one edit of the given kind; `None` when it does not apply to `e`.
pub fn apply_mutation(e: &Expr, kind: MutationKind, sig: &Signature, rng: &mut RngStream) -> Option<Expr> {
    let mut out = e.clone();
    match kind {
        MutationKind::ChangeOperator => {
            let idx = pick(&out.find_indices(|n| !n.is_leaf()), rng)?;
            match out.node_mut(idx)? {
                Expr::Unary(op, _) => *op = other(&UnaryOp::ALL, *op, rng),
                Expr::Binary(op, _, _) => *op = other(&BinaryOp::ALL, *op, rng),
                Expr::Ternary(op, _, _, _) => *op = other(&TernaryOp::ALL, *op, rng),
                _ => unreachable!(),
            }
        }
        MutationKind::ReplaceLeaf => {
            let idx = pick(&out.find_indices(|n| n.is_leaf()), rng)?;
            *out.node_mut(idx)? = random_leaf(sig, rng);
        }
        MutationKind::InsertUnary => {
            let idx = rng.index(out.size());
            let node = out.node_mut(idx)?;
            let child = std::mem::replace(node, Expr::Const(0.0));
            *node = Expr::unary(UnaryOp::ALL[rng.index(UnaryOp::ALL.len())], child);
        }
        MutationKind::DeleteUnary => {
            let idx = pick(&out.find_indices(|n| matches!(n, Expr::Unary(..))), rng)?;
            let node = out.node_mut(idx)?;
            if let Expr::Unary(_, child) = std::mem::replace(node, Expr::Const(0.0)) {
                *node = *child;
            }
        }
        MutationKind::PerturbConstant => {
            let mut consts = out.constants_mut();
            if consts.is_empty() {
                return None;
            }
            let i = rng.index(consts.len());
            let c = &mut consts[i];
            **c += 0.1 * (1.0 + c.abs()) * rng.normal();
        }
        MutationKind::ReplaceSubtree => {
            let idx = rng.index(out.size());
            *out.node_mut(idx)? = random_tree(sig, 2, rng);
        }
    }
    Some(out)
}

fn pick(xs: &[usize], rng: &mut RngStream) -> Option<usize> {
    if xs.is_empty() {
        None
    } else {
        Some(xs[rng.index(xs.len())])
    }
}

fn other<T: Copy + PartialEq>(all: &[T], cur: T, rng: &mut RngStream) -> T {
    if all.len() < 2 {
        return cur;
    }
    loop {
        let c = all[rng.index(all.len())];
        if c != cur {
            return c;
        }
    }
}

/// One random edit chosen uniformly among [`MutationKind::ALL`]. Edits that
/// do not apply or that exceed `max_size` are redrawn up to 20 times; after
/// that `e` is returned unchanged.
pub fn mutate(e: &Expr, sig: &Signature, rng: &mut RngStream, max_size: usize) -> Expr {
    for _ in 0..MAX_TRIES {
        let kind = MutationKind::ALL[rng.index(MutationKind::ALL.len())];
        if let Some(m) = apply_mutation(e, kind, sig, rng) {
            if m.size() <= max_size {
                return m;
            }
        }
    }
    e.clone()
}

/// Replace a random subtree of `a` by a random subtree of `b`, redrawing when
/// the result exceeds `max_size` (up to 20 times, then `a` is returned).
pub fn crossover(a: &Expr, b: &Expr, rng: &mut RngStream, max_size: usize) -> Expr {
    let na = a.size();
    let nb = b.size();
    for _ in 0..MAX_TRIES {
        let ia = rng.index(na);
        let ib = rng.index(nb);
        let donor = b.node(ib).unwrap();
        let replaced = a.node(ia).unwrap().size();
        if na - replaced + donor.size() > max_size {
            continue;
        }
        let mut out = a.clone();
        *out.node_mut(ia).unwrap() = donor.clone();
        return out;
    }
    a.clone()
}
