use super::ast::{BinaryOp, Expr, UnaryOp};

pub(crate) fn format_const(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".to_string()
    } else if (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Render an expression in the grammar accepted by [`super::parse`].
/// Infix binary operations are always parenthesized.
pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    write_expr(e, &mut s);
    s
}

fn write_expr(e: &Expr, out: &mut String) {
    match e {
        Expr::Const(v) => out.push_str(&format_const(*v)),
        Expr::Var(n) => out.push_str(n),
        Expr::Unary(UnaryOp::Neg, a) => {
            out.push_str("(-");
            write_expr(a, out);
            out.push(')');
        }
        Expr::Unary(op, a) => {
            out.push_str(op.name());
            out.push('(');
            write_expr(a, out);
            out.push(')');
        }
        Expr::Binary(op, a, b) => match op.symbol() {
            Some(sym) => {
                out.push('(');
                write_expr(a, out);
                out.push(' ');
                out.push_str(sym);
                out.push(' ');
                write_expr(b, out);
                out.push(')');
            }
            None => {
                debug_assert!(matches!(op, BinaryOp::Min | BinaryOp::Max));
                out.push_str(op.name());
                out.push('(');
                write_expr(a, out);
                out.push_str(", ");
                write_expr(b, out);
                out.push(')');
            }
        },
        Expr::Ternary(op, a, b, c) => {
            out.push_str(op.name());
            out.push('(');
            write_expr(a, out);
            out.push_str(", ");
            write_expr(b, out);
            out.push_str(", ");
            write_expr(c, out);
            out.push(')');
        }
    }
}

impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&print_expr(self))
    }
}
