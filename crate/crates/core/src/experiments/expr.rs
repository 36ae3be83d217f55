//! Scalar coefficient expressions over the variables `x` and `y`.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'x' | 'y' | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | exp | sqrt | abs | tanh
//! ```
//!
//! `^` binds tighter than unary minus and is right associative, so `-2^2`
//! is `-4` and `2^3^2` is `512`.

use std::fmt;

use crate::error::{Error, ParseError, Result};
use crate::fbm::HurstParameter;
use crate::model::{ModelSpec, ScalarCoefficients};

/// Deepest accepted nesting of parentheses, calls and prefix operators.
pub const MAX_DEPTH: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }
}

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
    Var(Var),
    Neg(Box<Expr>),
    Call(Func, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

/// Fully parenthesized, so the output parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(Var::X) => f.write_str("x"),
            Expr::Var(Var::Y) => f.write_str("y"),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Call(func, e) => write!(f, "{}({e})", func.name()),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl Expr {
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let v = match self {
            Expr::Num(v) => *v,
            Expr::Var(Var::X) => x,
            Expr::Var(Var::Y) => y,
            Expr::Neg(e) => -e.eval(x, y)?,
            Expr::Call(func, e) => {
                let a = e.eval(x, y)?;
                match func {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(Error::Eval(format!("sqrt of negative value {a}")));
                        }
                        a.sqrt()
                    }
                    Func::Abs => a.abs(),
                    Func::Tanh => a.tanh(),
                }
            }
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.eval(x, y)?, b.eval(x, y)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(Error::Eval("division by zero".into()));
                        }
                        a / b
                    }
                    BinOp::Pow => {
                        if a < 0.0 && b.fract() != 0.0 {
                            return Err(Error::Eval(format!(
                                "{a}^{b}: fractional power of a negative value"
                            )));
                        }
                        if a == 0.0 && b < 0.0 {
                            return Err(Error::Eval(
                                "division by zero in a negative power of 0".into(),
                            ));
                        }
                        a.powf(b)
                    }
                }
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Eval(format!("non-finite value in {self}")))
        }
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses(var),
            Expr::Bin(_, a, b) => a.uses(var) || b.uses(var),
        }
    }
}

/// A parsed coefficient with its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    pub source: String,
    pub tree: Expr,
}

impl CoefficientExpr {
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        self.tree.eval(x, y)
    }

    pub fn uses(&self, var: Var) -> bool {
        self.tree.uses(var)
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.tree.fmt(f)
    }
}

pub fn parse_expression(source: &str) -> std::result::Result<CoefficientExpr, ParseError> {
    let mut p = Parser {
        src: source.as_bytes(),
        pos: 0,
        depth: 0,
    };
    let tree = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(ParseError::new(
            p.pos,
            format!("unexpected '{}'", p.peek_char()),
        ));
    }
    Ok(CoefficientExpr {
        source: source.to_owned(),
        tree,
    })
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn peek_char(&self) -> char {
        std::str::from_utf8(&self.src[self.pos..])
            .ok()
            .and_then(|s| s.chars().next())
            .unwrap_or(char::REPLACEMENT_CHARACTER)
    }

    fn enter(&mut self) -> std::result::Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(ParseError::new(self.pos, "expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> std::result::Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> std::result::Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            self.enter()?;
            let e = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(e)));
        }
        self.power()
    }

    fn power(&mut self) -> std::result::Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            self.enter()?;
            let exp = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> std::result::Result<Expr, ParseError> {
        match self.peek() {
            None => Err(ParseError::new(self.pos, "unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                self.enter()?;
                let e = self.expr()?;
                self.depth -= 1;
                self.expect_close()?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name =
                    std::str::from_utf8(&self.src[start..self.pos]).expect("ASCII identifier");
                match name {
                    "x" => Ok(Expr::Var(Var::X)),
                    "y" => Ok(Expr::Var(Var::Y)),
                    _ => {
                        let func = Func::from_name(name).ok_or_else(|| {
                            ParseError::new(start, format!("unknown identifier '{name}'"))
                        })?;
                        if self.peek() != Some(b'(') {
                            return Err(ParseError::new(
                                self.pos,
                                format!("expected '(' after '{name}'"),
                            ));
                        }
                        self.pos += 1;
                        self.enter()?;
                        let arg = self.expr()?;
                        self.depth -= 1;
                        self.expect_close()?;
                        Ok(Expr::Call(func, Box::new(arg)))
                    }
                }
            }
            Some(_) => Err(ParseError::new(
                self.pos,
                format!("unexpected '{}'", self.peek_char()),
            )),
        }
    }

    fn expect_close(&mut self) -> std::result::Result<(), ParseError> {
        if self.peek() == Some(b')') {
            self.pos += 1;
            Ok(())
        } else if self.pos >= self.src.len() {
            Err(ParseError::new(self.pos, "missing ')'"))
        } else {
            Err(ParseError::new(
                self.pos,
                format!("expected ')', found '{}'", self.peek_char()),
            ))
        }
    }

    fn number(&mut self) -> std::result::Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError::new(start, "malformed number"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                return Err(ParseError::new(mark, "malformed exponent"));
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ASCII number");
        let v: f64 = text
            .parse()
            .map_err(|_| ParseError::new(start, format!("malformed number '{text}'")))?;
        if !v.is_finite() {
            return Err(ParseError::new(
                start,
                format!("number '{text}' is out of range"),
            ));
        }
        Ok(Expr::Num(v))
    }
}

/// Inline model: scalar coefficients given as expressions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelExpressions {
    pub c: CoefficientExpr,
    pub sigma: CoefficientExpr,
    pub f: CoefficientExpr,
    pub tau: CoefficientExpr,
    pub b: Option<CoefficientExpr>,
    pub g: Option<CoefficientExpr>,
}

impl ModelExpressions {
    /// Builds a scalar model. `sigma`, `f`, `tau` and `g` must not mention
    /// `x`. An evaluation error inside a running simulation becomes NaN, which
    /// the integrator reports as a diverged path.
    pub fn to_model(
        &self,
        name: &str,
        hurst: HurstParameter,
        x0: f64,
        y0: f64,
    ) -> Result<ModelSpec> {
        let fast = [
            ("sigma", Some(&self.sigma)),
            ("f", Some(&self.f)),
            ("tau", Some(&self.tau)),
            ("g", self.g.as_ref()),
        ];
        for (key, e) in fast {
            if e.is_some_and(|e| e.uses(Var::X)) {
                return Err(Error::Config(format!(
                    "coefficient '{key}' may depend on y only"
                )));
            }
        }
        for (key, e) in [
            ("c", Some(&self.c)),
            ("sigma", Some(&self.sigma)),
            ("f", Some(&self.f)),
            ("tau", Some(&self.tau)),
            ("b", self.b.as_ref()),
            ("g", self.g.as_ref()),
        ] {
            if let Some(e) = e {
                e.eval(x0, y0).map_err(|err| {
                    Error::Config(format!("coefficient '{key}' at the initial state: {err}"))
                })?;
            }
        }
        let two = |e: &CoefficientExpr| {
            let e = e.clone();
            move |x: f64, y: f64| e.eval(x, y).unwrap_or(f64::NAN)
        };
        let one = |e: &CoefficientExpr| {
            let e = e.clone();
            move |y: f64| e.eval(0.0, y).unwrap_or(f64::NAN)
        };
        let mut coef =
            ScalarCoefficients::new(two(&self.c), one(&self.sigma), one(&self.f), one(&self.tau));
        if let Some(b) = &self.b {
            coef = coef.with_b(two(b));
        }
        if let Some(g) = &self.g {
            coef = coef.with_g(one(g));
        }
        Ok(ModelSpec::scalar(name, coef, hurst, x0, y0))
    }
}
