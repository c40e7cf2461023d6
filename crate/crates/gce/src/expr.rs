//! A tiny arithmetic expression language over the two variables `u` and `v`,
//! used to declare custom summary maps and their gradients in config files.
//!
//! Grammar (usual precedence, `^` binds tightest and associates right):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | power
//! power  := atom ('^' factor)?
//! atom   := number | 'u' | 'v' | name '(' expr ')' | '(' expr ')'
//! name   := ln | exp | sqrt | abs
//! ```
//!
//! Expressions are parsed once at config time and evaluated as pure
//! functions; there is no user code execution, only this fixed algebra.

use crate::error::{Error, Result};

/// A parsed expression over `(u, v)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    U,
    V,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Ln(Box<Expr>),
    Exp(Box<Expr>),
    Sqrt(Box<Expr>),
    Abs(Box<Expr>),
}

impl Expr {
    /// Parse an expression; the whole input must be consumed.
    pub fn parse(input: &str) -> Result<Expr> {
        let mut p = Parser { chars: input.as_bytes(), pos: 0, input };
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.chars.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluate at `(u, v)`. Domain violations surface as NaN/Inf, which
    /// callers are expected to check where it matters.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::U => u,
            Expr::V => v,
            Expr::Neg(a) => -a.eval(u, v),
            Expr::Add(a, b) => a.eval(u, v) + b.eval(u, v),
            Expr::Sub(a, b) => a.eval(u, v) - b.eval(u, v),
            Expr::Mul(a, b) => a.eval(u, v) * b.eval(u, v),
            Expr::Div(a, b) => a.eval(u, v) / b.eval(u, v),
            Expr::Pow(a, b) => a.eval(u, v).powf(b.eval(u, v)),
            Expr::Ln(a) => a.eval(u, v).ln(),
            Expr::Exp(a) => a.eval(u, v).exp(),
            Expr::Sqrt(a) => a.eval(u, v).sqrt(),
            Expr::Abs(a) => a.eval(u, v).abs(),
        }
    }
}

struct Parser<'a> {
    chars: &'a [u8],
    pos: usize,
    input: &'a str,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Config(format!(
            "expression {:?}: {msg} at byte {}",
            self.input, self.pos
        ))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.chars.get(self.pos).copied()
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Expr::Div(Box::new(lhs), Box::new(self.factor()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let exp = self.factor()?; // right-associative, allows -x in exponent
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.name(),
            _ => Err(self.err("expected a number, variable, function, or '('")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len()
            && (self.chars[self.pos].is_ascii_digit() || self.chars[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Exponent suffix like 1e-3.
        if self.pos < self.chars.len() && (self.chars[self.pos] | 0x20) == b'e' {
            let mut probe = self.pos + 1;
            if probe < self.chars.len() && (self.chars[probe] == b'+' || self.chars[probe] == b'-')
            {
                probe += 1;
            }
            if probe < self.chars.len() && self.chars[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let text = &self.input[start..self.pos];
        text.parse::<f64>()
            .map(Expr::Num)
            .map_err(|_| self.err("malformed number"))
    }

    fn name(&mut self) -> Result<Expr> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.chars.len() && self.chars[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = &self.input[start..self.pos];
        match name {
            "u" => Ok(Expr::U),
            "v" => Ok(Expr::V),
            "ln" | "exp" | "sqrt" | "abs" => {
                if self.peek() != Some(b'(') {
                    return Err(self.err("function name must be followed by '('"));
                }
                self.pos += 1;
                let arg = Box::new(self.expr()?);
                if self.peek() != Some(b')') {
                    return Err(self.err("expected ')'"));
                }
                self.pos += 1;
                Ok(match name {
                    "ln" => Expr::Ln(arg),
                    "exp" => Expr::Exp(arg),
                    "sqrt" => Expr::Sqrt(arg),
                    _ => Expr::Abs(arg),
                })
            }
            _ => Err(self.err("unknown name (expected u, v, ln, exp, sqrt, abs)")),
        }
    }
}
