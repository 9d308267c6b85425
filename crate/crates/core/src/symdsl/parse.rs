//! Recursive-descent parser for the expression language.
//!
//! ```text
//! expr     = term { ("+" | "-") term } ;
//! term     = power { ("*" | "/") power } ;
//! power    = unary [ ("^" | "**") power ] ;        (* right associative *)
//! unary    = ("-" | "+") unary | primary ;
//! primary  = number | call | ident | "(" expr ")" ;
//! call     = ident "(" expr { "," expr } ")" ;
//! number   = digits [ "." digits ] [ ("e" | "E") [ "+" | "-" ] digits ] ;
//! ident    = letter { letter | digit | "_" } ;
//! ```
//!
//! Unary minus binds tighter than `^`, so `-x ^ 2` is `(-x) ^ 2`. A minus
//! directly in front of a number literal folds into a negative constant.

use super::ast::{BinaryOp, Expr, Signature, TernaryOp, UnaryOp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => {
                if bytes.get(i + 1) == Some(&b'*') {
                    i += 1;
                    Tok::Caret
                } else {
                    Tok::Star
                }
            }
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let s = &text[i..j];
                let v: f64 = s.parse().map_err(|_| Error::Syntax {
                    pos: start,
                    msg: format!("malformed number `{s}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Syntax {
                        pos: start,
                        msg: format!("number `{s}` is not finite"),
                    });
                }
                out.push((Tok::Num(v), start));
                i = j;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_alphanumeric() || bytes[j] == b'_') {
                    j += 1;
                }
                out.push((Tok::Ident(text[i..j].to_string()), start));
                i = j;
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    pos: start,
                    msg: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, text.len()));
    Ok(out)
}

enum Func {
    Unary(UnaryOp),
    Binary(BinaryOp),
    Ternary(TernaryOp),
}

fn lookup_func(name: &str) -> Option<Func> {
    if let Some(op) = UnaryOp::ALL.iter().find(|o| o.name() == name) {
        return Some(Func::Unary(*op));
    }
    if let Some(op) = BinaryOp::ALL.iter().find(|o| o.name() == name) {
        return Some(Func::Binary(*op));
    }
    TernaryOp::ALL
        .iter()
        .find(|o| o.name() == name)
        .map(|op| Func::Ternary(*op))
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    sig: &'a Signature,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if *self.peek() == want {
            self.bump();
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn error(&self, msg: String) -> Error {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            t => format!("{t:?}"),
        };
        Error::Syntax {
            pos: self.offset(),
            msg: format!("{msg}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.power()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.power()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exp = self.power()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        match self.peek() {
            Tok::Minus => {
                self.bump();
                if let Tok::Num(v) = *self.peek() {
                    self.bump();
                    return Ok(Expr::Const(-v));
                }
                Ok(Expr::unary(UnaryOp::Neg, self.unary()?))
            }
            Tok::Plus => {
                self.bump();
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let at = self.offset();
                self.bump();
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let func = lookup_func(&name).ok_or_else(|| Error::UnknownIdent(name.clone()))?;
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`,` or `)`")?;
                    let arity = |n: usize| -> Result<()> {
                        if args.len() == n {
                            Ok(())
                        } else {
                            Err(Error::Syntax {
                                pos: at,
                                msg: format!("`{name}` takes {n} argument(s), got {}", args.len()),
                            })
                        }
                    };
                    let mut it;
                    Ok(match func {
                        Func::Unary(op) => {
                            arity(1)?;
                            it = args.into_iter();
                            Expr::unary(op, it.next().unwrap())
                        }
                        Func::Binary(op) => {
                            arity(2)?;
                            it = args.into_iter();
                            Expr::binary(op, it.next().unwrap(), it.next().unwrap())
                        }
                        Func::Ternary(op) => {
                            arity(3)?;
                            it = args.into_iter();
                            Expr::ternary(op, it.next().unwrap(), it.next().unwrap(), it.next().unwrap())
                        }
                    })
                } else if self.sig.contains(&name) {
                    Ok(Expr::Var(name))
                } else {
                    Err(Error::UnknownIdent(name))
                }
            }
            _ => Err(self.error("expected a number, variable, call or `(`".into())),
        }
    }
}

/// Parse `text` against the variables declared in `sig`.
pub fn parse(text: &str, sig: &Signature) -> Result<Expr> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, sig };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.error("unexpected trailing input".into()));
    }
    Ok(e)
}

/// Parse and enforce a node-count bound.
pub fn parse_bounded(text: &str, sig: &Signature, max_size: usize) -> Result<Expr> {
    let e = parse(text, sig)?;
    sig.check(&e, max_size)?;
    Ok(e)
}
