//! Arithmetic expressions over state variables `x1..xn` and named
//! parameters, used to declare nonlinear plants in configuration files.
//!
//! Grammar:
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := atom ("^" exponent)?
//! exponent:= "-" exponent | power
//! atom    := number | "x" index | parameter | "exp" "(" expr ")" | "(" expr ")"
//! ```
//!
//! `^` is right-associative and binds tighter than unary minus, so
//! `-x1^2` is `-(x1^2)` and `2^3^2` is `2^(3^2)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Zero-based state index (`x1` is `Var(0)`).
    Var(usize),
    Param(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((i, Tok::Op(c as char)));
                i += 1;
            }
            b'(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let value = lit.parse::<f64>().map_err(|_| Error::Syntax {
                    offset: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push((start, Tok::Num(value)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
            }
            _ => {
                return Err(Error::Syntax {
                    offset: i,
                    message: format!(
                        "unexpected character `{}`",
                        text[i..].chars().next().unwrap_or('?')
                    ),
                })
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    n: usize,
    params: &'a BTreeSet<String>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Tok::Op(c)) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(c) = self.eat_op(&['+', '-']) {
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(c) = self.eat_op(&['*', '/']) {
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            return Ok(Expr::Binary(
                BinOp::Pow,
                Box::new(base),
                Box::new(self.exponent()?),
            ));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Expr> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.exponent()?)));
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(tok) = self.peek().cloned() else {
            return self.syntax("unexpected end of input");
        };
        match tok {
            Tok::Num(v) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Tok::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                self.close_paren()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.pos += 1;
                if name == "exp" && self.peek() == Some(&Tok::LParen) {
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.close_paren()?;
                    return Ok(Expr::Exp(Box::new(arg)));
                }
                if let Some(idx) = state_index(&name).filter(|&i| i >= 1 && i <= self.n) {
                    return Ok(Expr::Var(idx - 1));
                }
                if self.params.contains(&name) {
                    return Ok(Expr::Param(name));
                }
                Err(Error::UnknownIdentifier(name))
            }
            Tok::Op(c) => self.syntax(format!("unexpected operator `{c}`")),
            Tok::RParen => self.syntax("unexpected `)`"),
        }
    }

    fn close_paren(&mut self) -> Result<()> {
        if self.peek() == Some(&Tok::RParen) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax("expected `)`")
        }
    }
}

fn state_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Parses `text` for a state of dimension `n`; identifiers other than
/// `x1..xn` and `exp` must appear in `param_names`.
pub fn parse(text: &str, n: usize, param_names: &BTreeSet<String>) -> Result<Expr> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(Error::Syntax {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        n,
        params: param_names,
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.syntax("unexpected trailing input");
    }
    Ok(e)
}

impl Expr {
    /// Evaluates in tree order; non-finite intermediate values propagate.
    pub fn eval(&self, x: &[f64], params: &BTreeMap<String, f64>) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => *x
                .get(*i)
                .ok_or_else(|| Error::Unbound(format!("x{}", i + 1)))?,
            Expr::Param(name) => *params
                .get(name)
                .ok_or_else(|| Error::Unbound(name.clone()))?,
            Expr::Neg(e) => -e.eval(x, params)?,
            Expr::Exp(e) => e.eval(x, params)?.exp(),
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(x, params)?, b.eval(x, params)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
        })
    }

    /// Replaces each `x_i` with `vars[i]`.
    pub fn substitute(&self, vars: &[Expr]) -> Expr {
        match self {
            Expr::Var(i) => vars[*i].clone(),
            Expr::Num(_) | Expr::Param(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(vars))),
            Expr::Exp(e) => Expr::Exp(Box::new(e.substitute(vars))),
            Expr::Binary(op, a, b) => Expr::Binary(
                *op,
                Box::new(a.substitute(vars)),
                Box::new(b.substitute(vars)),
            ),
        }
    }

    /// Largest state index referenced, one-based.
    pub fn max_var(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Num(_) | Expr::Param(_) => 0,
            Expr::Neg(e) | Expr::Exp(e) => e.max_var(),
            Expr::Binary(_, a, b) => a.max_var().max(b.max_var()),
        }
    }
}

/// Fully parenthesized; reparses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Param(name) => f.write_str(name),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}
