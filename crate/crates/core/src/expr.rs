//! A small arithmetic-expression language for scale factors, conformal
//! factors and surface graphs.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | name | name '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Names resolve to variables, then to user parameters, then to the
//! constants `pi` and `e`. Functions: `exp`, `ln` (alias `log`), `sqrt`,
//! `sin`, `cos`, `tan`, `sinh`, `cosh`, `tanh`, `pow(a, b)`.
//!
//! Expressions are differentiated symbolically, so metric families built
//! from them get closed-form Christoffel symbols.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{message} at column {column}")]
pub struct ParseError {
    pub message: String,
    pub column: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Ln,
    Sqrt,
    Sin,
    Cos,
    Tan,
    Sinh,
    Cosh,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "ln" | "log" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Tanh => "tanh",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Exp => x.exp(),
            Func::Ln => x.ln(),
            Func::Sqrt => x.sqrt(),
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Tan => x.tan(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Tanh => x.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Variable names visible to an expression, each bound to a slot index.
#[derive(Debug, Clone)]
pub struct Variables {
    names: Vec<(String, usize)>,
    slots: usize,
}

impl Variables {
    pub fn new(names: &[(&str, usize)]) -> Self {
        let slots = names.iter().map(|(_, i)| i + 1).max().unwrap_or(0);
        Variables {
            names: names.iter().map(|(n, i)| (n.to_string(), *i)).collect(),
            slots,
        }
    }

    /// `t` in slot 0 and spatial coordinates in slots `1..=n`, addressable
    /// as `x1..xn` or (for the first three) `x`, `y`, `z`.
    pub fn spacetime(spatial_dim: usize) -> Self {
        let mut names = vec![("t".to_string(), 0)];
        names.extend(Self::spatial_names(spatial_dim, 1));
        Variables {
            names,
            slots: spatial_dim + 1,
        }
    }

    /// Spatial coordinates only, in slots `0..n`.
    pub fn spatial(spatial_dim: usize) -> Self {
        Variables {
            names: Self::spatial_names(spatial_dim, 0),
            slots: spatial_dim,
        }
    }

    /// Only `t`, in slot 0.
    pub fn time() -> Self {
        Variables::new(&[("t", 0)])
    }

    fn spatial_names(n: usize, offset: usize) -> Vec<(String, usize)> {
        let mut names = Vec::new();
        for i in 0..n {
            names.push((format!("x{}", i + 1), i + offset));
            if let Some(alias) = ["x", "y", "z"].get(i) {
                names.push((alias.to_string(), i + offset));
            }
        }
        names
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    fn lookup(&self, name: &str) -> Option<usize> {
        self.names.iter().find(|(n, _)| n == name).map(|(_, i)| *i)
    }

    fn name_of(&self, slot: usize) -> Option<&str> {
        self.names
            .iter()
            .find(|(_, i)| *i == slot)
            .map(|(n, _)| n.as_str())
    }
}

impl Expr {
    pub fn parse(
        source: &str,
        vars: &Variables,
        params: &BTreeMap<String, f64>,
    ) -> Result<Expr, ParseError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens: &tokens,
            pos: 0,
            vars,
            params,
            end_column: source.chars().count() + 1,
        };
        let expr = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError {
                message: format!("unexpected token {:?}", tok.kind),
                column: tok.column,
            });
        }
        Ok(expr)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => vars[*i],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, b) => {
                let base = a.eval(vars);
                match **b {
                    Expr::Const(c) if c == c.trunc() && c.abs() < 64.0 => base.powi(c as i32),
                    _ => base.powf(b.eval(vars)),
                }
            }
            Expr::Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    /// True if the expression does not reference any variable.
    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Const(_) => true,
            Expr::Var(_) => false,
            Expr::Neg(a) | Expr::Call(_, a) => a.is_constant(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b) => a.is_constant() && b.is_constant(),
        }
    }

    /// Symbolic partial derivative with respect to the variable in `slot`.
    pub fn derivative(&self, slot: usize) -> Expr {
        use Expr::*;
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == slot { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(slot)),
            Add(a, b) => add(a.derivative(slot), b.derivative(slot)),
            Sub(a, b) => sub(a.derivative(slot), b.derivative(slot)),
            Mul(a, b) => add(
                mul(a.derivative(slot), (**b).clone()),
                mul((**a).clone(), b.derivative(slot)),
            ),
            Div(a, b) => div(
                sub(
                    mul(a.derivative(slot), (**b).clone()),
                    mul((**a).clone(), b.derivative(slot)),
                ),
                pow((**b).clone(), Const(2.0)),
            ),
            Pow(a, b) => {
                let da = a.derivative(slot);
                if b.is_constant() {
                    let c = b.eval(&[]);
                    mul(mul(Const(c), pow((**a).clone(), Const(c - 1.0))), da)
                } else {
                    // d(a^b) = a^b (b' ln a + b a'/a)
                    let db = b.derivative(slot);
                    mul(
                        self.clone(),
                        add(
                            mul(db, call(Func::Ln, (**a).clone())),
                            div(mul((**b).clone(), da), (**a).clone()),
                        ),
                    )
                }
            }
            Call(f, a) => {
                let inner = (**a).clone();
                let outer = match f {
                    Func::Exp => call(Func::Exp, inner),
                    Func::Ln => div(Const(1.0), inner),
                    Func::Sqrt => div(Const(0.5), call(Func::Sqrt, inner)),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Tan => div(Const(1.0), pow(call(Func::Cos, inner), Const(2.0))),
                    Func::Sinh => call(Func::Cosh, inner),
                    Func::Cosh => call(Func::Sinh, inner),
                    Func::Tanh => sub(Const(1.0), pow(call(Func::Tanh, inner), Const(2.0))),
                };
                mul(outer, a.derivative(slot))
            }
        }
    }

    /// Renders the expression back to source text using `vars` for names.
    pub fn display<'a>(&'a self, vars: &'a Variables) -> impl fmt::Display + 'a {
        ExprDisplay { expr: self, vars }
    }
}

struct ExprDisplay<'a> {
    expr: &'a Expr,
    vars: &'a Variables,
}

impl<'a> ExprDisplay<'a> {
    fn child(&self, expr: &'a Expr) -> ExprDisplay<'a> {
        ExprDisplay {
            expr,
            vars: self.vars,
        }
    }
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |e| self.child(e);
        match self.expr {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(i) => match self.vars.name_of(*i) {
                Some(n) => write!(f, "{n}"),
                None => write!(f, "_{i}"),
            },
            Expr::Neg(a) => write!(f, "(-{})", sub(a)),
            Expr::Add(a, b) => write!(f, "({} + {})", sub(a), sub(b)),
            Expr::Sub(a, b) => write!(f, "({} - {})", sub(a), sub(b)),
            Expr::Mul(a, b) => write!(f, "({} * {})", sub(a), sub(b)),
            Expr::Div(a, b) => write!(f, "({} / {})", sub(a), sub(b)),
            Expr::Pow(a, b) => write!(f, "({} ^ {})", sub(a), sub(b)),
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), sub(a)),
        }
    }
}

// Smart constructors fold constants and drop additive/multiplicative
// identities so derivative trees stay small.

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        a => Expr::Neg(Box::new(a)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        (Expr::Const(z), e) | (e, Expr::Const(z)) if z == 0.0 => e,
        (a, b) => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        (e, Expr::Const(z)) if z == 0.0 => e,
        (Expr::Const(z), e) if z == 0.0 => neg(e),
        (a, b) => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        (Expr::Const(z), _) | (_, Expr::Const(z)) if z == 0.0 => Expr::Const(0.0),
        (Expr::Const(o), e) | (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x / y),
        (Expr::Const(z), _) if z == 0.0 => Expr::Const(0.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, b: Expr) -> Expr {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x.powf(y)),
        (_, Expr::Const(z)) if z == 0.0 => Expr::Const(1.0),
        (e, Expr::Const(o)) if o == 1.0 => e,
        (a, b) => Expr::Pow(Box::new(a), Box::new(b)),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(f.apply(c)),
        a => Expr::Call(f, Box::new(a)),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn tokenize(source: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| ParseError {
                message: format!("malformed number `{text}`"),
                column,
            })?;
            tokens.push(Token {
                kind: TokenKind::Number(value),
                column,
            });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            tokens.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                column,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            ',' => TokenKind::Comma,
            _ => {
                return Err(ParseError {
                    message: format!("unexpected character `{c}`"),
                    column,
                })
            }
        };
        tokens.push(Token { kind, column });
        i += 1;
    }
    Ok(tokens)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a Variables,
    params: &'a BTreeMap<String, f64>,
    end_column: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let tok = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        tok
    }

    fn column(&self) -> usize {
        self.peek().map_or(self.end_column, |t| t.column)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<(), ParseError> {
        let column = self.column();
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            _ => Err(ParseError {
                message: format!("expected {what}"),
                column,
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op(&['+']).is_some() {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat_op(&['^']).is_some() {
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let column = self.column();
        let tok = self.next().ok_or(ParseError {
            message: "unexpected end of expression".into(),
            column,
        })?;
        match tok.kind {
            TokenKind::Number(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let inner = self.expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                if matches!(
                    self.peek(),
                    Some(Token {
                        kind: TokenKind::LParen,
                        ..
                    })
                ) {
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while matches!(
                        self.peek(),
                        Some(Token {
                            kind: TokenKind::Comma,
                            ..
                        })
                    ) {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(TokenKind::RParen, "`)`")?;
                    return self.call(&name, args, tok.column);
                }
                if let Some(slot) = self.vars.lookup(&name) {
                    return Ok(Expr::Var(slot));
                }
                if let Some(v) = self.params.get(&name) {
                    return Ok(Expr::Const(*v));
                }
                match name.as_str() {
                    "pi" => Ok(Expr::Const(std::f64::consts::PI)),
                    "e" => Ok(Expr::Const(std::f64::consts::E)),
                    _ => Err(ParseError {
                        message: format!("unknown name `{name}`"),
                        column: tok.column,
                    }),
                }
            }
            other => Err(ParseError {
                message: format!("unexpected token {other:?}"),
                column: tok.column,
            }),
        }
    }

    fn call(&self, name: &str, mut args: Vec<Expr>, column: usize) -> Result<Expr, ParseError> {
        let arity = |n: usize, args: &[Expr]| {
            if args.len() == n {
                Ok(())
            } else {
                Err(ParseError {
                    message: format!("`{name}` takes {n} argument(s), got {}", args.len()),
                    column,
                })
            }
        };
        if name == "pow" {
            arity(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            return Ok(Expr::Pow(Box::new(a), Box::new(b)));
        }
        let func = Func::from_name(name).ok_or(ParseError {
            message: format!("unknown function `{name}`"),
            column,
        })?;
        arity(1, &args)?;
        Ok(Expr::Call(func, Box::new(args.pop().unwrap())))
    }
}

/// An expression kept together with its source text and its gradient.
#[derive(Debug, Clone)]
pub struct Formula {
    source: String,
    expr: Expr,
    gradient: Vec<Expr>,
}

impl Formula {
    pub fn parse(
        source: &str,
        vars: &Variables,
        params: &BTreeMap<String, f64>,
    ) -> Result<Self, ParseError> {
        let expr = Expr::parse(source, vars, params)?;
        let gradient = (0..vars.slots()).map(|i| expr.derivative(i)).collect();
        Ok(Formula {
            source: source.to_string(),
            expr,
            gradient,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        self.expr.eval(vars)
    }

    pub fn partial(&self, slot: usize, vars: &[f64]) -> f64 {
        self.gradient[slot].eval(vars)
    }

    pub fn gradient_into(&self, vars: &[f64], out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.gradient) {
            *o = g.eval(vars);
        }
    }
}
