//! Protected evaluation. Every operator is total on finite inputs and every
//! node result is clamped to `[-VALUE_BOUND, VALUE_BOUND]`, so evaluation over
//! finite bindings always yields a finite number.

use std::collections::HashMap;

use super::ast::{BinaryOp, Expr, Signature, TernaryOp, UnaryOp};
use crate::error::{Error, Result};

pub const VALUE_BOUND: f64 = 1e12;
pub const PROTECT: f64 = 1e-10;

#[inline]
fn clamp(x: f64) -> f64 {
    x.clamp(-VALUE_BOUND, VALUE_BOUND)
}

/// sgn with sgn(0) = 0.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
pub fn apply_unary(op: UnaryOp, x: f64) -> f64 {
    clamp(match op {
        UnaryOp::Neg => -x,
        UnaryOp::Abs => x.abs(),
        UnaryOp::Log => (x.abs() + PROTECT).ln(),
        UnaryOp::Exp => x.exp(),
        UnaryOp::Tanh => x.tanh(),
        UnaryOp::Relu => x.max(0.0),
        UnaryOp::Sin => x.sin(),
        UnaryOp::Cos => x.cos(),
        UnaryOp::Sgn => sgn(x),
        UnaryOp::Square => x * x,
    })
}

#[inline]
pub fn apply_binary(op: BinaryOp, a: f64, b: f64) -> f64 {
    clamp(match op {
        BinaryOp::Add => a + b,
        BinaryOp::Sub => a - b,
        BinaryOp::Mul => a * b,
        BinaryOp::Div => {
            // sgn*(0) = 1 so the guard never cancels the denominator.
            let s = if b < 0.0 { -1.0 } else { 1.0 };
            a / (b + s * PROTECT)
        }
        BinaryOp::Min => a.min(b),
        BinaryOp::Max => a.max(b),
        BinaryOp::Pow => protected_pow(a, b),
    })
}

#[inline]
fn protected_pow(a: f64, b: f64) -> f64 {
    if b.fract() == 0.0 && (-4.0..=4.0).contains(&b) {
        let v = a.powi(b as i32);
        if v.is_nan() {
            0.0
        } else {
            v
        }
    } else {
        (b * (a.abs() + PROTECT).ln()).exp()
    }
}

#[inline]
pub fn apply_ternary(op: TernaryOp, a: f64, b: f64, c: f64) -> f64 {
    clamp(match op {
        TernaryOp::Clip => a.max(b).min(c),
        TernaryOp::Where => {
            if a > 0.0 {
                b
            } else {
                c
            }
        }
    })
}

fn eval_inner(e: &Expr, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64> {
    Ok(match e {
        Expr::Const(v) => clamp(*v),
        Expr::Var(n) => clamp(
            lookup(n).ok_or_else(|| Error::Contract(format!("no binding for variable `{n}`")))?,
        ),
        Expr::Unary(op, a) => apply_unary(*op, eval_inner(a, lookup)?),
        Expr::Binary(op, a, b) => apply_binary(*op, eval_inner(a, lookup)?, eval_inner(b, lookup)?),
        Expr::Ternary(op, a, b, c) => apply_ternary(
            *op,
            eval_inner(a, lookup)?,
            eval_inner(b, lookup)?,
            eval_inner(c, lookup)?,
        ),
    })
}

/// Evaluate `e` with variables bound by name.
pub fn eval_expr(e: &Expr, bindings: &HashMap<String, f64>) -> Result<f64> {
    eval_inner(e, &|n| bindings.get(n).copied())
}

/// Evaluate `e` with a lookup closure.
pub fn eval_with(e: &Expr, lookup: impl Fn(&str) -> Option<f64>) -> Result<f64> {
    eval_inner(e, &lookup)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
    Ternary(TernaryOp),
}

/// Post-order compiled form of an expression with variables resolved to
/// signature indices. Used for the hot loops (GP fitness, per-parameter
/// optimizer updates).
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    code: Vec<Instr>,
    max_stack: usize,
}

impl Program {
    pub fn compile(e: &Expr, sig: &Signature) -> Result<Self> {
        let mut code = Vec::with_capacity(e.size());
        fn walk(e: &Expr, sig: &Signature, code: &mut Vec<Instr>) -> Result<()> {
            match e {
                Expr::Const(v) => code.push(Instr::Const(clamp(*v))),
                Expr::Var(n) => code.push(Instr::Var(
                    sig.index_of(n).ok_or_else(|| Error::UnknownIdent(n.clone()))?,
                )),
                Expr::Unary(op, a) => {
                    walk(a, sig, code)?;
                    code.push(Instr::Unary(*op));
                }
                Expr::Binary(op, a, b) => {
                    walk(a, sig, code)?;
                    walk(b, sig, code)?;
                    code.push(Instr::Binary(*op));
                }
                Expr::Ternary(op, a, b, c) => {
                    walk(a, sig, code)?;
                    walk(b, sig, code)?;
                    walk(c, sig, code)?;
                    code.push(Instr::Ternary(*op));
                }
            }
            Ok(())
        }
        walk(e, sig, &mut code)?;
        let mut depth = 0usize;
        let mut max_stack = 0usize;
        for ins in &code {
            match ins {
                Instr::Const(_) | Instr::Var(_) => depth += 1,
                Instr::Unary(_) => {}
                Instr::Binary(_) => depth -= 1,
                Instr::Ternary(_) => depth -= 2,
            }
            max_stack = max_stack.max(depth);
        }
        Ok(Self { code, max_stack })
    }

    /// Evaluate one row; `vars` is indexed like the compile-time signature.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        let mut stack: Vec<f64> = Vec::with_capacity(self.max_stack);
        for ins in &self.code {
            match *ins {
                Instr::Const(v) => stack.push(v),
                Instr::Var(i) => stack.push(clamp(vars[i])),
                Instr::Unary(op) => {
                    let a = stack.pop().unwrap();
                    stack.push(apply_unary(op, a));
                }
                Instr::Binary(op) => {
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(apply_binary(op, a, b));
                }
                Instr::Ternary(op) => {
                    let c = stack.pop().unwrap();
                    let b = stack.pop().unwrap();
                    let a = stack.pop().unwrap();
                    stack.push(apply_ternary(op, a, b, c));
                }
            }
        }
        stack.pop().unwrap()
    }

    /// Evaluate over a column-major dataset: `columns[v][row]`. Writes one
    /// value per row into `out`.
    pub fn eval_columns(&self, columns: &[&[f64]], out: &mut [f64]) {
        let n = out.len();
        let mut stack: Vec<Vec<f64>> = Vec::with_capacity(self.max_stack);
        let mut pool: Vec<Vec<f64>> = Vec::new();
        let fresh = |pool: &mut Vec<Vec<f64>>| -> Vec<f64> {
            pool.pop().unwrap_or_else(|| vec![0.0; n])
        };
        for ins in &self.code {
            match *ins {
                Instr::Const(v) => {
                    let mut buf = fresh(&mut pool);
                    buf.fill(v);
                    stack.push(buf);
                }
                Instr::Var(i) => {
                    let mut buf = fresh(&mut pool);
                    for (d, s) in buf.iter_mut().zip(columns[i]) {
                        *d = clamp(*s);
                    }
                    stack.push(buf);
                }
                Instr::Unary(op) => {
                    let a = stack.last_mut().unwrap();
                    for x in a.iter_mut() {
                        *x = apply_unary(op, *x);
                    }
                }
                Instr::Binary(op) => {
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    binary_columns(op, a, &b);
                    pool.push(b);
                }
                Instr::Ternary(op) => {
                    let c = stack.pop().unwrap();
                    let b = stack.pop().unwrap();
                    let a = stack.last_mut().unwrap();
                    for ((x, y), z) in a.iter_mut().zip(&b).zip(&c) {
                        *x = apply_ternary(op, *x, *y, *z);
                    }
                    pool.push(b);
                    pool.push(c);
                }
            }
        }
        out.copy_from_slice(&stack.pop().unwrap());
    }
}

#[inline]
fn binary_columns(op: BinaryOp, a: &mut [f64], b: &[f64]) {
    // Specialized loops for the cheap operators so they vectorize.
    match op {
        BinaryOp::Add => a.iter_mut().zip(b).for_each(|(x, y)| *x = clamp(*x + y)),
        BinaryOp::Sub => a.iter_mut().zip(b).for_each(|(x, y)| *x = clamp(*x - y)),
        BinaryOp::Mul => a.iter_mut().zip(b).for_each(|(x, y)| *x = clamp(*x * y)),
        BinaryOp::Min => a.iter_mut().zip(b).for_each(|(x, y)| *x = x.min(*y)),
        BinaryOp::Max => a.iter_mut().zip(b).for_each(|(x, y)| *x = x.max(*y)),
        _ => a
            .iter_mut()
            .zip(b)
            .for_each(|(x, y)| *x = apply_binary(op, *x, *y)),
    }
}
