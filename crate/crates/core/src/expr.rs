//! A small arithmetic expression language in one variable `u`.
//!
//! Grammar (precedence low to high):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | 'u' | 'e' | 'pi' | func '(' expr (',' expr)? ')' | '(' expr ')'
//! func   := exp | log | pow | sqrt | sin | cos
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Exp(Box<Node>),
    Log(Box<Node>),
    Sqrt(Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
}

impl Node {
    fn eval(&self, u: f64) -> f64 {
        match self {
            Node::Num(v) => *v,
            Node::Var => u,
            Node::Neg(a) => -a.eval(u),
            Node::Add(a, b) => a.eval(u) + b.eval(u),
            Node::Sub(a, b) => a.eval(u) - b.eval(u),
            Node::Mul(a, b) => a.eval(u) * b.eval(u),
            Node::Div(a, b) => a.eval(u) / b.eval(u),
            Node::Pow(a, b) => {
                let base = a.eval(u);
                match **b {
                    Node::Num(e) if e.fract() == 0.0 && e.abs() < 64.0 => base.powi(e as i32),
                    _ => base.powf(b.eval(u)),
                }
            }
            Node::Exp(a) => a.eval(u).exp(),
            Node::Log(a) => a.eval(u).ln(),
            Node::Sqrt(a) => a.eval(u).sqrt(),
            Node::Sin(a) => a.eval(u).sin(),
            Node::Cos(a) => a.eval(u).cos(),
        }
    }
}

/// A parsed expression, evaluated with [`Expr::eval`].
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(Expr {
            source: src.to_string(),
            root,
        })
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.root.eval(u)
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Expression {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat(b'-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat(b'/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat(b'-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
                    self.pos += 1;
                }
                let ident = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                match ident {
                    "u" | "x" | "r" => Ok(Node::Var),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "exp" | "log" | "ln" | "sqrt" | "sin" | "cos" => {
                        let arg = self.call_args(1)?.remove(0);
                        Ok(match ident {
                            "exp" => Node::Exp(Box::new(arg)),
                            "sqrt" => Node::Sqrt(Box::new(arg)),
                            "sin" => Node::Sin(Box::new(arg)),
                            "cos" => Node::Cos(Box::new(arg)),
                            _ => Node::Log(Box::new(arg)),
                        })
                    }
                    "pow" => {
                        let mut args = self.call_args(2)?;
                        let e = args.pop().unwrap();
                        let b = args.pop().unwrap();
                        Ok(Node::Pow(Box::new(b), Box::new(e)))
                    }
                    _ => {
                        self.pos = start;
                        Err(self.err(&format!("unknown identifier `{ident}`")))
                    }
                }
            }
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn call_args(&mut self, count: usize) -> Result<Vec<Node>> {
        if !self.eat(b'(') {
            return Err(self.err("expected '(' after function name"));
        }
        let mut args = Vec::with_capacity(count);
        for i in 0..count {
            if i > 0 && !self.eat(b',') {
                return Err(self.err("expected ','"));
            }
            args.push(self.expr()?);
        }
        if !self.eat(b')') {
            return Err(self.err("expected ')'"));
        }
        Ok(args)
    }

    fn number(&mut self) -> Result<Node> {
        self.skip_ws();
        let start = self.pos;
        let bytes = self.src;
        while self.pos < bytes.len() && (bytes[self.pos].is_ascii_digit() || bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < bytes.len() && (bytes[self.pos] == b'e' || bytes[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < bytes.len() && (bytes[self.pos] == b'+' || bytes[self.pos] == b'-') {
                self.pos += 1;
            }
            if self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                while self.pos < bytes.len() && bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&bytes[start..self.pos]).unwrap_or("");
        text.parse::<f64>().map(Node::Num).map_err(|_| Error::Expression {
            pos: start,
            msg: format!("bad number `{text}`"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, u: f64) -> f64 {
        Expr::parse(s).unwrap().eval(u)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", 0.0), 512.0);
        assert_eq!(ev("-u^2", 3.0), -9.0);
        assert_eq!(ev("(1 + u) * (1 - u)", 2.0), -3.0);
        assert_eq!(ev("8 / 4 / 2", 0.0), 1.0);
    }

    #[test]
    fn functions() {
        assert!((ev("exp(log(u))", 2.5) - 2.5).abs() < 1e-15);
        assert_eq!(ev("pow(u, 3)", 2.0), 8.0);
        assert_eq!(ev("u^2 + u^3", 2.0), 12.0);
        assert!((ev("exp(u^2)", 1.0) - std::f64::consts::E).abs() < 1e-15);
        assert_eq!(ev("1.5e2*u", 2.0), 300.0);
        assert!((ev("sin(u)^2 + cos(u)^2", 0.7) - 1.0).abs() < 1e-15);
        assert!((ev("e^u", 1.0) - std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn errors_carry_position() {
        match Expr::parse("u + foo(u)") {
            Err(Error::Expression { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Expr::parse("(u + 1").is_err());
        assert!(Expr::parse("u u").is_err());
        assert!(Expr::parse("").is_err());
        assert!(Expr::parse("pow(u)").is_err());
    }
}
