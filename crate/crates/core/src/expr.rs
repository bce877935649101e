//! A small arithmetic language for user-defined mean functions.
//!
//! Grammar (standard precedence, `^` right-associative, unary minus binds
//! tighter than `*` but looser than `^`):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := primary ('^' unary)?
//! primary := number | 'x' | 't'<k> | ('exp' | 'log') '(' expr ')' | '(' expr ')'
//! ```
//!
//! Parameters are `t1 .. td`; all of them must appear in the expression.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{guarded_pow, MeanFunction, Model, ParamSpace};

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    X,
    /// Zero-based parameter index (`t1` is 0).
    Param(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Exp(Box<Node>),
    Log(Box<Node>),
    /// `u^v · log(u)`, taken as 0 at `u = 0`. Produced only by differentiation.
    PowLn(Box<Node>, Box<Node>),
}

/// A parsed mean-function expression and its ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelExpr {
    ast: Node,
    params: Vec<String>,
}

impl ModelExpr {
    pub fn ast(&self) -> &Node {
        &self.ast
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn eval(&self, x: f64, theta: &[f64]) -> Result<f64> {
        self.ast.eval(x, theta)
    }
}

impl fmt::Display for ModelExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.ast)
    }
}

// ---------------------------------------------------------------------------
// lexer

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
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Caret => "`^`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '^' => Tok::Caret,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            c if c.is_ascii_digit() || c == '.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    offset: start,
                    expected: vec!["number".into()],
                    found: format!("`{text}`"),
                })?;
                out.push((Tok::Num(v), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            other => {
                return Err(Error::Syntax {
                    offset: start,
                    expected: vec!["operator".into(), "operand".into()],
                    found: format!("character `{other}`"),
                })
            }
        };
        out.push((tok, start));
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

// ---------------------------------------------------------------------------
// parser

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    max_param: usize,
    seen: Vec<bool>,
}

const OPERAND: [&str; 4] = ["number", "identifier", "`(`", "`-`"];

impl Parser {
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

    fn fail<T>(&self, expected: &[&str]) -> Result<T> {
        Err(Error::Syntax {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().describe(),
        })
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.bump();
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Node> {
        let offset = self.offset();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Node::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                if *self.peek() != Tok::RParen {
                    return self.fail(&["`)`", "operator"]);
                }
                self.bump();
                Ok(e)
            }
            Tok::Ident(name) => {
                self.bump();
                match name.as_str() {
                    "x" => Ok(Node::X),
                    "exp" | "log" => {
                        if *self.peek() != Tok::LParen {
                            return self.fail(&["`(`"]);
                        }
                        self.bump();
                        let arg = self.expr()?;
                        if *self.peek() != Tok::RParen {
                            return self.fail(&["`)`", "operator"]);
                        }
                        self.bump();
                        Ok(if name == "exp" {
                            Node::Exp(Box::new(arg))
                        } else {
                            Node::Log(Box::new(arg))
                        })
                    }
                    _ => match parse_param(&name) {
                        Some(k) => {
                            if k >= self.seen.len() {
                                self.seen.resize(k + 1, false);
                            }
                            self.seen[k] = true;
                            self.max_param = self.max_param.max(k + 1);
                            Ok(Node::Param(k))
                        }
                        None => Err(Error::UnknownIdentifier { name, offset }),
                    },
                }
            }
            _ => self.fail(&OPERAND),
        }
    }
}

fn parse_param(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('t')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    digits.parse::<usize>().ok().map(|k| k - 1)
}

/// Parses a mean-function expression.
pub fn parse(source: &str) -> Result<ModelExpr> {
    if source.trim().is_empty() {
        return Err(Error::InvalidArgument("empty model expression".into()));
    }
    let mut p = Parser {
        toks: lex(source)?,
        pos: 0,
        max_param: 0,
        seen: Vec::new(),
    };
    let ast = p.expr()?;
    if *p.peek() != Tok::End {
        return p.fail(&["operator", "end of input"]);
    }
    if let Some(missing) = p.seen.iter().position(|s| !s) {
        return Err(Error::InvalidArgument(format!(
            "parameters must be t1..t{} without gaps; t{} does not appear",
            p.max_param,
            missing + 1
        )));
    }
    let params = (1..=p.max_param).map(|k| format!("t{k}")).collect();
    Ok(ModelExpr { ast, params })
}

// ---------------------------------------------------------------------------
// evaluation

impl Node {
    pub fn eval(&self, x: f64, t: &[f64]) -> Result<f64> {
        Ok(match self {
            Node::Const(c) => *c,
            Node::X => x,
            Node::Param(k) => *t.get(*k).ok_or_else(|| {
                Error::InvalidArgument(format!("parameter t{} not supplied", k + 1))
            })?,
            Node::Neg(a) => -a.eval(x, t)?,
            Node::Add(a, b) => a.eval(x, t)? + b.eval(x, t)?,
            Node::Sub(a, b) => a.eval(x, t)? - b.eval(x, t)?,
            Node::Mul(a, b) => a.eval(x, t)? * b.eval(x, t)?,
            Node::Div(a, b) => {
                let den = b.eval(x, t)?;
                if den == 0.0 {
                    return Err(Error::NumericDomain(format!("division by zero at x={x}")));
                }
                a.eval(x, t)? / den
            }
            Node::Pow(a, b) => guarded_pow(a.eval(x, t)?, b.eval(x, t)?)?,
            Node::Exp(a) => a.eval(x, t)?.exp(),
            Node::Log(a) => {
                let v = a.eval(x, t)?;
                if v <= 0.0 {
                    return Err(Error::NumericDomain(format!(
                        "log of non-positive value {v} at x={x}"
                    )));
                }
                v.ln()
            }
            Node::PowLn(a, b) => {
                let u = a.eval(x, t)?;
                let v = b.eval(x, t)?;
                if u == 0.0 && v > 0.0 {
                    0.0
                } else {
                    guarded_pow(u, v)? * u.abs().ln()
                }
            }
        })
    }

    fn is_const(&self, v: f64) -> bool {
        matches!(self, Node::Const(c) if *c == v)
    }

    fn as_const(&self) -> Option<f64> {
        match self {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }
}

// ---------------------------------------------------------------------------
// simplifying constructors

fn neg(a: Node) -> Node {
    match a {
        Node::Const(c) => Node::Const(-c),
        Node::Neg(inner) => *inner,
        other => Node::Neg(Box::new(other)),
    }
}

fn add(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Node::Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Node::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Node::Const(x - y),
        (_, Some(y)) if y == 0.0 => a,
        (Some(x), _) if x == 0.0 => neg(b),
        _ => Node::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => return Node::Const(x * y),
        (Some(x), _) if x == 0.0 => return Node::Const(0.0),
        (_, Some(y)) if y == 0.0 => return Node::Const(0.0),
        (Some(x), _) if x == 1.0 => return b,
        (_, Some(y)) if y == 1.0 => return a,
        (Some(x), _) if x == -1.0 => return neg(b),
        (_, Some(y)) if y == -1.0 => return neg(a),
        _ => {}
    }
    match (a, b) {
        (Node::Neg(a), Node::Neg(b)) => mul(*a, *b),
        (Node::Neg(a), b) => neg(mul(*a, b)),
        (a, Node::Neg(b)) => neg(mul(a, *b)),
        (a, b) => Node::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Node, b: Node) -> Node {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) if y != 0.0 => Node::Const(x / y),
        (Some(x), _) if x == 0.0 => Node::Const(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Node::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Node, b: Node) -> Node {
    if b.is_const(1.0) {
        return a;
    }
    if b.is_const(0.0) {
        return Node::Const(1.0);
    }
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if let Ok(v) = guarded_pow(x, y) {
            return Node::Const(v);
        }
    }
    Node::Pow(Box::new(a), Box::new(b))
}

fn exp(a: Node) -> Node {
    match a.as_const() {
        Some(c) => Node::Const(c.exp()),
        None => Node::Exp(Box::new(a)),
    }
}

fn log(a: Node) -> Node {
    match a.as_const() {
        Some(c) if c > 0.0 => Node::Const(c.ln()),
        _ => Node::Log(Box::new(a)),
    }
}

fn derive(n: &Node, p: usize) -> Node {
    match n {
        Node::Const(_) | Node::X => Node::Const(0.0),
        Node::Param(k) => Node::Const(if *k == p { 1.0 } else { 0.0 }),
        Node::Neg(a) => neg(derive(a, p)),
        Node::Add(a, b) => add(derive(a, p), derive(b, p)),
        Node::Sub(a, b) => sub(derive(a, p), derive(b, p)),
        Node::Mul(a, b) => add(
            mul(derive(a, p), (**b).clone()),
            mul((**a).clone(), derive(b, p)),
        ),
        Node::Div(a, b) => {
            let da = derive(a, p);
            let db = derive(b, p);
            let num = sub(mul(da, (**b).clone()), mul((**a).clone(), db));
            div(num, pow((**b).clone(), Node::Const(2.0)))
        }
        Node::Pow(u, v) => {
            let du = derive(u, p);
            let dv = derive(v, p);
            let base_term = if du.is_const(0.0) {
                Node::Const(0.0)
            } else {
                let v_minus_1 = sub((**v).clone(), Node::Const(1.0));
                mul(mul((**v).clone(), pow((**u).clone(), v_minus_1)), du)
            };
            let exp_term = if dv.is_const(0.0) {
                Node::Const(0.0)
            } else {
                mul(Node::PowLn(u.clone(), v.clone()), dv)
            };
            add(base_term, exp_term)
        }
        Node::Exp(a) => mul(exp((**a).clone()), derive(a, p)),
        Node::Log(a) => div(derive(a, p), (**a).clone()),
        Node::PowLn(u, v) => {
            let uv = Node::Pow(u.clone(), v.clone());
            let d_uv = derive(&uv, p);
            add(
                mul(d_uv, log((**u).clone())),
                mul(uv, div(derive(u, p), (**u).clone())),
            )
        }
    }
}

/// Symbolic derivative with respect to the named parameter.
pub fn differentiate(expr: &ModelExpr, param: &str) -> Result<ModelExpr> {
    let k = expr
        .params
        .iter()
        .position(|p| p == param)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "`{param}` is not a parameter of `{expr}` (parameters: {:?})",
                expr.params
            ))
        })?;
    Ok(ModelExpr {
        ast: derive(&expr.ast, k),
        params: expr.params.clone(),
    })
}

// ---------------------------------------------------------------------------
// printing

fn prec(n: &Node) -> u8 {
    match n {
        Node::Add(..) | Node::Sub(..) => 1,
        Node::Mul(..) | Node::Div(..) | Node::PowLn(..) => 2,
        Node::Neg(_) => 3,
        Node::Const(c) if *c < 0.0 => 3,
        Node::Pow(..) => 4,
        _ => 5,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, n: &Node, min_prec: u8) -> fmt::Result {
    if prec(n) < min_prec {
        write!(f, "({n})")
    } else {
        write!(f, "{n}")
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Const(c) if *c < 0.0 => write!(f, "-{}", -c),
            Node::Const(c) => write!(f, "{c}"),
            Node::X => write!(f, "x"),
            Node::Param(k) => write!(f, "t{}", k + 1),
            Node::Neg(a) => {
                write!(f, "-")?;
                write_child(f, a, 3)
            }
            Node::Add(a, b) | Node::Sub(a, b) => {
                write_child(f, a, 1)?;
                write!(f, "{}", if matches!(self, Node::Add(..)) { " + " } else { " - " })?;
                write_child(f, b, 2)
            }
            Node::Mul(a, b) | Node::Div(a, b) => {
                write_child(f, a, 2)?;
                write!(f, "{}", if matches!(self, Node::Mul(..)) { "*" } else { "/" })?;
                write_child(f, b, 3)
            }
            Node::Pow(a, b) => {
                write_child(f, a, 5)?;
                write!(f, "^")?;
                write_child(f, b, 3)
            }
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Log(a) => write!(f, "log({a})"),
            Node::PowLn(a, b) => {
                write_child(f, a, 5)?;
                write!(f, "^")?;
                write_child(f, b, 3)?;
                write!(f, "*log({a})")
            }
        }
    }
}

// ---------------------------------------------------------------------------
// models

/// Mean function backed by an expression and its symbolic gradient.
#[derive(Debug, Clone)]
pub struct ExprFunction {
    expr: ModelExpr,
    gradient: Vec<Node>,
}

impl ExprFunction {
    pub fn new(expr: ModelExpr) -> Self {
        let gradient = (0..expr.dim()).map(|k| derive(&expr.ast, k)).collect();
        Self { expr, gradient }
    }

    pub fn expr(&self) -> &ModelExpr {
        &self.expr
    }
}

impl MeanFunction for ExprFunction {
    fn dim(&self) -> usize {
        self.expr.dim()
    }

    fn value(&self, x: f64, theta: &[f64]) -> Result<f64> {
        self.expr.ast.eval(x, theta)
    }

    fn gradient(&self, x: f64, theta: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, g) in out.iter_mut().zip(&self.gradient) {
            *o = g.eval(x, theta)?;
        }
        Ok(())
    }

    fn formula(&self) -> String {
        self.expr.to_string()
    }
}

/// Wraps a parsed expression as a [`Model`].
pub fn to_model(name: &str, expr: ModelExpr, space: ParamSpace) -> Result<Model> {
    if space.dim() != expr.dim() {
        return Err(Error::InvalidArgument(format!(
            "expression `{expr}` has {} parameters but the box has dimension {}",
            expr.dim(),
            space.dim()
        )));
    }
    Model::new(name, Arc::new(ExprFunction::new(expr)), space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Family;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p(i: usize) -> Box<Node> {
        Box::new(Node::Param(i))
    }

    #[test]
    fn parses_exp4() {
        let e = parse("t1 - t2*exp(-t3*x^t4)").unwrap();
        assert_eq!(e.params(), &["t1", "t2", "t3", "t4"]);
        let expected = Node::Sub(
            p(0),
            Box::new(Node::Mul(
                p(1),
                Box::new(Node::Exp(Box::new(Node::Mul(
                    Box::new(Node::Neg(p(2))),
                    Box::new(Node::Pow(Box::new(Node::X), p(3))),
                )))),
            )),
        );
        assert_eq!(e.ast(), &expected);
    }

    #[test]
    fn parses_emax() {
        let e = parse("t1 + t2*x/(t3+x)").unwrap();
        assert_eq!(e.params(), &["t1", "t2", "t3"]);
        let expected = Node::Add(
            p(0),
            Box::new(Node::Div(
                Box::new(Node::Mul(p(1), Box::new(Node::X))),
                Box::new(Node::Add(p(2), Box::new(Node::X))),
            )),
        );
        assert_eq!(e.ast(), &expected);
    }

    #[test]
    fn syntax_error_offset() {
        match parse("t1 + *x") {
            Err(Error::Syntax { offset, expected, .. }) => {
                assert_eq!(offset, 5);
                assert!(expected.iter().any(|e| e == "number"));
            }
            other => panic!("expected syntax error, got {other:?}"),
        }
        assert!(matches!(parse("(t1 + x"), Err(Error::Syntax { offset: 7, .. })));
        assert!(matches!(parse("t1 x"), Err(Error::Syntax { offset: 3, .. })));
        assert!(matches!(parse("exp t1"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("t1 # 2"), Err(Error::Syntax { offset: 3, .. })));
    }

    #[test]
    fn unknown_identifier() {
        assert_eq!(
            parse("t1 + y").unwrap_err(),
            Error::UnknownIdentifier { name: "y".into(), offset: 5 }
        );
        assert!(matches!(parse("t0"), Err(Error::UnknownIdentifier { .. })));
        assert!(matches!(parse("sin(x)"), Err(Error::UnknownIdentifier { .. })));
    }

    #[test]
    fn gaps_in_parameters_rejected() {
        assert!(matches!(parse("t1 + t3*x"), Err(Error::InvalidArgument(_))));
        assert!(matches!(parse("   "), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn precedence_and_associativity() {
        let t = [0.0; 0];
        let v = |s: &str, x: f64| parse(s).unwrap().eval(x, &t).unwrap();
        assert_eq!(v("2^3^2", 0.0), 512.0);
        assert_eq!(v("-x^2", 3.0), -9.0);
        assert_eq!(v("8/4/2", 0.0), 1.0);
        assert_eq!(v("1 - 2 - 3", 0.0), -4.0);
        assert_eq!(v("2*-x", 3.0), -6.0);
        assert_eq!(v("2^-1", 0.0), 0.5);
        assert_eq!(v("1.5e1 + .5", 0.0), 15.5);
    }

    #[test]
    fn evaluation_guards() {
        let e = parse("t1/x").unwrap();
        assert!(matches!(e.eval(0.0, &[1.0]), Err(Error::NumericDomain(_))));
        let e = parse("log(x)").unwrap();
        assert!(matches!(e.eval(-1.0, &[]), Err(Error::NumericDomain(_))));
        let e = parse("x^t1").unwrap();
        assert!(matches!(e.eval(-2.0, &[0.5]), Err(Error::NumericDomain(_))));
        assert_eq!(e.eval(-2.0, &[2.0]).unwrap(), 4.0);
        assert_eq!(e.eval(0.0, &[1.5]).unwrap(), 0.0);
        assert_eq!(e.eval(0.0, &[0.0]).unwrap(), 1.0);
    }

    #[test]
    fn derivative_of_linear_is_constant_one() {
        let d = differentiate(&parse("t1 + t2*x").unwrap(), "t1").unwrap();
        assert_eq!(d.ast(), &Node::Const(1.0));
        let d = differentiate(&parse("t1 + t2*x").unwrap(), "t2").unwrap();
        assert_eq!(d.ast(), &Node::X);
    }

    #[test]
    fn derivative_chain_rule_exp3() {
        let d = differentiate(&parse("t1 - t2*exp(-t3*x)").unwrap(), "t3").unwrap();
        let reference = parse("t2*x*exp(-t3*x) + 0*t1").unwrap();
        for &(x, t) in &[(0.5, [2.0, 1.0, 0.8]), (3.0, [1.0, -2.0, 0.1]), (0.0, [0.0, 1.0, 1.0])] {
            let a = d.eval(x, &t).unwrap();
            let b = reference.eval(x, &t).unwrap();
            assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()), "{d}: {a} vs {b}");
        }
    }

    #[test]
    fn derivative_emax_matches_finite_differences() {
        let e = parse("t1 + t2*x/(t3+x)").unwrap();
        let d = differentiate(&e, "t3").unwrap();
        let closed = parse("-t2*x/(t3+x)^2 + 0*t1").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let x: f64 = rng.random_range(0.0..500.0);
            let t: [f64; 3] = [
                rng.random_range(-100.0..100.0),
                rng.random_range(-300.0..300.0),
                rng.random_range(1.0..200.0),
            ];
            let h = 1e-6 * (1.0 + t[2].abs());
            let fd = (e.eval(x, &[t[0], t[1], t[2] + h]).unwrap()
                - e.eval(x, &[t[0], t[1], t[2] - h]).unwrap())
                / (2.0 * h);
            let sym = d.eval(x, &t).unwrap();
            assert!((sym - fd).abs() <= 1e-5 * fd.abs().max(1e-6), "{sym} vs {fd}");
            let c = closed.eval(x, &t).unwrap();
            assert!((sym - c).abs() <= 1e-12 * c.abs().max(1e-12));
        }
    }

    #[test]
    fn differentiate_unknown_parameter() {
        let e = parse("t1 + t2*x").unwrap();
        assert!(matches!(differentiate(&e, "t3"), Err(Error::InvalidArgument(_))));
        assert!(matches!(differentiate(&e, "x"), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn to_model_dimension_checks() {
        let space2 = ParamSpace::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let m = to_model("lin", parse("t1+t2*x").unwrap(), space2.clone()).unwrap();
        assert_eq!(m.dim(), 2);
        assert!(to_model("c", parse("t1").unwrap(), space2).is_err());
        let space1 = ParamSpace::new(vec![-5.0], vec![5.0]).unwrap();
        let c = to_model("c", parse("t1").unwrap(), space1).unwrap();
        assert_eq!(c.eval(123.0, &[2.5]).unwrap(), 2.5);
        assert_eq!(c.grad_theta(123.0, &[2.5]).unwrap(), vec![1.0]);
    }

    #[test]
    fn parsed_exp4_matches_builtin() {
        let space = ParamSpace::new(vec![-10.0, -10.0, 0.01, 0.1], vec![10.0, 10.0, 5.0, 3.0])
            .unwrap();
        let parsed = to_model("p", parse("t1 - t2*exp(-t3*x^t4)").unwrap(), space.clone()).unwrap();
        let builtin = Model::builtin("b", Family::Exp4, space).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(0.0..10.0);
            let t = [
                rng.random_range(-10.0..10.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(0.01..5.0),
                rng.random_range(0.1..3.0),
            ];
            let a = parsed.eval(x, &t).unwrap();
            let b = builtin.eval(x, &t).unwrap();
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            let ga = parsed.grad_theta(x, &t).unwrap();
            let gb = builtin.grad_theta(x, &t).unwrap();
            for (u, v) in ga.iter().zip(&gb) {
                assert!((u - v).abs() <= 1e-10 * (1.0 + v.abs()), "{ga:?} vs {gb:?}");
            }
        }
        // x = 0 exercises the guarded u^v·log(u) term
        let g = parsed.grad_theta(0.0, &[2.0, 1.0, 0.8, 1.5]).unwrap();
        assert_eq!(g, vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn parsed_gradients_match_finite_differences() {
        let sources = [
            "t1 + t2*x*(t3 - x)",
            "t1 + t2/(1 + exp((t3 - x)/t4))",
            "t1*log(t2 + x) - x^2/t3",
            "(t1 + x)^t2",
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for src in sources {
            let e = parse(src).unwrap();
            let f = ExprFunction::new(e.clone());
            let d = e.dim();
            for _ in 0..100 {
                let x: f64 = rng.random_range(0.1..5.0);
                let t: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..3.0)).collect();
                let mut g = vec![0.0; d];
                f.gradient(x, &t, &mut g).unwrap();
                for k in 0..d {
                    let h = 1e-6 * (1.0 + t[k].abs());
                    let mut tp = t.clone();
                    let mut tm = t.clone();
                    tp[k] += h;
                    tm[k] -= h;
                    let fd = (e.eval(x, &tp).unwrap() - e.eval(x, &tm).unwrap()) / (2.0 * h);
                    let scale = fd.abs().max(g[k].abs()).max(1e-3);
                    assert!((fd - g[k]).abs() / scale < 1e-5, "{src} t{}: {} vs {fd}", k + 1, g[k]);
                }
            }
        }
    }

    fn arb_node() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (0u32..1000).prop_map(|v| Node::Const(v as f64 / 8.0)),
            Just(Node::X),
            (0usize..3).prop_map(Node::Param),
        ];
        leaf.prop_recursive(5, 48, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|a| Node::Neg(Box::new(a))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Add(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Sub(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Mul(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Div(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Pow(Box::new(a), Box::new(b))),
                inner.clone().prop_map(|a| Node::Exp(Box::new(a))),
                inner.prop_map(|a| Node::Log(Box::new(a))),
            ]
        })
    }

    fn mentions_all_params(n: &Node, upto: usize) -> bool {
        fn walk(n: &Node, seen: &mut [bool]) {
            match n {
                Node::Param(k) => seen[*k] = true,
                Node::Neg(a) | Node::Exp(a) | Node::Log(a) => walk(a, seen),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b)
                | Node::PowLn(a, b) => {
                    walk(a, seen);
                    walk(b, seen);
                }
                _ => {}
            }
        }
        let mut seen = vec![false; 3];
        walk(n, &mut seen);
        let max = seen.iter().rposition(|s| *s).map_or(0, |k| k + 1);
        max <= upto && seen[..max].iter().all(|s| *s)
    }

    proptest! {
        #[test]
        fn pretty_print_round_trips(node in arb_node()) {
            prop_assume!(mentions_all_params(&node, 3));
            let printed = node.to_string();
            let reparsed = parse(&printed).unwrap();
            prop_assert_eq!(reparsed.ast(), &node, "printed as {}", printed);
        }
    }
}
