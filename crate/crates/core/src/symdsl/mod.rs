//! Symbolic expression language: AST, grammar, protected evaluation,
//! printing, and genetic edit operators.

pub mod ast;
pub mod edit;
pub mod eval;
pub mod parse;
pub mod print;

pub use ast::{
    complexity, BinaryOp, Expr, Signature, TernaryOp, UnaryOp, DRIFT_MAX_SIZE, MOMENTUM_BETAS,
    MOMENTUM_NAMES, OPTIMIZER_MAX_SIZE,
};
pub use edit::{crossover, mutate, random_tree};
pub use eval::{eval_expr, eval_with, Program};
pub use parse::{parse, parse_bounded};
pub use print::print_expr;
