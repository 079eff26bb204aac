//! A small arithmetic expression grammar for drift/diffusion coefficients.
//!
//! Grammar: number | `x` | unary `-` | `+ - * / ^` | `exp log sin cos sinh
//! cosh sqrt abs` | parentheses. `^` is right-associative and binds tighter
//! than unary minus, so `-x^2` is `-(x^2)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Ast {
    Num(f64),
    Var,
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, Box<Ast>),
    Call(Func, Box<Ast>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Log,
    Sin,
    Cos,
    Sinh,
    Cosh,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Sinh => v.sinh(),
            Func::Cosh => v.cosh(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

/// A parsed coefficient expression in the single variable `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    ast: Ast,
    source: String,
}

impl CoefficientExpr {
    pub fn parse(src: &str) -> Result<CoefficientExpr> {
        let mut p = Parser {
            chars: src.chars().collect(),
            pos: 0,
            src,
        };
        p.skip_ws();
        let ast = p.expr()?;
        p.skip_ws();
        if p.pos < p.chars.len() {
            return Err(Error::Expr(format!(
                "unexpected input at byte {} in {:?}",
                p.pos, src
            )));
        }
        Ok(CoefficientExpr {
            ast,
            source: src.to_string(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x: f64) -> f64 {
        eval_ast(&self.ast, x)
    }

    /// Evaluate at every node, reporting the offending node on a domain error.
    pub fn eval_on(&self, nodes: &[f64]) -> Result<Vec<f64>> {
        nodes
            .iter()
            .map(|&x| {
                let v = self.eval(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Expr(format!(
                        "{:?} evaluates to {} at x = {}",
                        self.source, v, x
                    )))
                }
            })
            .collect()
    }
}

fn eval_ast(ast: &Ast, x: f64) -> f64 {
    match ast {
        Ast::Num(v) => *v,
        Ast::Var => x,
        Ast::Neg(a) => -eval_ast(a, x),
        Ast::Add(a, b) => eval_ast(a, x) + eval_ast(b, x),
        Ast::Sub(a, b) => eval_ast(a, x) - eval_ast(b, x),
        Ast::Mul(a, b) => eval_ast(a, x) * eval_ast(b, x),
        Ast::Div(a, b) => eval_ast(a, x) / eval_ast(b, x),
        Ast::Pow(a, b) => eval_ast(a, x).powf(eval_ast(b, x)),
        Ast::Call(f, a) => f.apply(eval_ast(a, x)),
    }
}

struct Parser<'a> {
    chars: Vec<char>,
    pos: usize,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('+') => {
                    self.bump();
                    lhs = Ast::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some('-') => {
                    self.bump();
                    lhs = Ast::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('*') => {
                    self.bump();
                    lhs = Ast::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some('/') => {
                    self.bump();
                    lhs = Ast::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Ast> {
        self.skip_ws();
        if self.peek() == Some('-') {
            self.bump();
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    // power := atom ('^' unary)?   (right-associative)
    fn power(&mut self) -> Result<Ast> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.unary()?;
            return Ok(Ast::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.bump();
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(Error::Expr(format!("missing ')' in {:?}", self.src)));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => {
                let name = self.ident();
                if name == "x" {
                    return Ok(Ast::Var);
                }
                if let Some(f) = Func::from_name(&name) {
                    if !self.eat('(') {
                        return Err(Error::Expr(format!(
                            "function {:?} needs parenthesized argument in {:?}",
                            name, self.src
                        )));
                    }
                    let arg = self.expr()?;
                    if !self.eat(')') {
                        return Err(Error::Expr(format!("missing ')' in {:?}", self.src)));
                    }
                    return Ok(Ast::Call(f, Box::new(arg)));
                }
                Err(Error::Expr(format!(
                    "unknown identifier {:?} in {:?}",
                    name, self.src
                )))
            }
            other => Err(Error::Expr(format!(
                "unexpected {:?} at byte {} in {:?}",
                other, self.pos, self.src
            ))),
        }
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            s.push(self.bump().unwrap());
        }
        s
    }

    fn number(&mut self) -> Result<Ast> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        // scientific suffix like 1e-3
        if matches!(self.peek(), Some('e') | Some('E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+') | Some('-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        text.parse::<f64>()
            .map(Ast::Num)
            .map_err(|_| Error::Expr(format!("bad number {:?} in {:?}", text, self.src)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, x: f64) -> f64 {
        CoefficientExpr::parse(src).unwrap().eval(x)
    }

    #[test]
    fn constants_and_variable() {
        assert_eq!(ev("1", 0.3), 1.0);
        assert_eq!(ev("x", 0.3), 0.3);
        assert_eq!(ev("1.5e-2", 0.0), 0.015);
    }

    #[test]
    fn minus_x_cubed_at_half() {
        // unary minus binds looser than ^
        assert_eq!(ev("-x^3", 0.5), -0.125);
        assert_eq!(ev("-x^2", 3.0), -9.0);
    }

    #[test]
    fn power_right_associative() {
        assert_eq!(ev("2^3^2", 0.0), 512.0);
    }

    #[test]
    fn precedence_and_functions() {
        assert_eq!(ev("1 + 2 * 3", 0.0), 7.0);
        assert_eq!(ev("(1 + 2) * 3", 0.0), 9.0);
        let x = 0.7;
        assert!((ev("exp(-x^4/2)", x) - (-x.powi(4) / 2.0).exp()).abs() < 1e-15);
        assert!((ev("sinh(x) - cosh(x)", x) - (x.sinh() - x.cosh())).abs() < 1e-15);
        assert!((ev("sqrt(abs(-x))", x) - x.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_garbage() {
        assert!(CoefficientExpr::parse("x +").is_err());
        assert!(CoefficientExpr::parse("y").is_err());
        assert!(CoefficientExpr::parse("sin x").is_err());
        assert!(CoefficientExpr::parse("1..2").is_err());
        assert!(CoefficientExpr::parse("(x").is_err());
    }

    #[test]
    fn domain_error_reports_node() {
        let e = CoefficientExpr::parse("log(x)").unwrap();
        let err = e.eval_on(&[1.0, 0.0]).unwrap_err();
        assert!(err.to_string().contains("x = 0"));
    }
}
