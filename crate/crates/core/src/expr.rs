//! Scalar fields on ℝⁿ as expression trees.
//!
//! Grammar (loosest to tightest): `+ -`, then `* /`, then unary minus, then
//! `^` (right-associative). Recognized functions: `sin cos exp log sqrt
//! tanh`; recognized constants: `pi`, `e`. Default variable names are
//! `x1..xn`; when n = 2m the aliases `q1..qm` and `p1..pm` map to indices
//! `i-1` and `m+i-1`.

use crate::num::{seed, Jet, Num};
use crate::{Error, Result};
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree for a smooth scalar field.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<ScalarExpr>),
    Binary(BinOp, Box<ScalarExpr>, Box<ScalarExpr>),
}

impl ScalarExpr {
    pub fn constant(c: f64) -> Self {
        ScalarExpr::Const(c)
    }

    pub fn var(i: usize) -> Self {
        ScalarExpr::Var(i)
    }

    pub fn product(a: ScalarExpr, b: ScalarExpr) -> Self {
        ScalarExpr::Binary(BinOp::Mul, Box::new(a), Box::new(b))
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            ScalarExpr::Const(_) => None,
            ScalarExpr::Var(i) => Some(*i),
            ScalarExpr::Unary(_, a) => a.max_var(),
            ScalarExpr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (None, m) | (m, None) => m,
                (Some(x), Some(y)) => Some(x.max(y)),
            },
        }
    }

    /// Value of a variable-free subtree, used to pick the integer-power path.
    fn const_value(&self) -> Option<f64> {
        match self {
            ScalarExpr::Const(c) => Some(*c),
            ScalarExpr::Var(_) => None,
            ScalarExpr::Unary(op, a) => {
                let v = a.const_value()?;
                match op {
                    UnaryOp::Neg => Some(-v),
                    UnaryOp::Sin => Some(v.sin()),
                    UnaryOp::Cos => Some(v.cos()),
                    UnaryOp::Exp => Some(v.exp()),
                    UnaryOp::Log => (v > 0.0).then(|| v.ln()),
                    UnaryOp::Sqrt => (v >= 0.0).then(|| v.sqrt()),
                    UnaryOp::Tanh => Some(v.tanh()),
                }
            }
            ScalarExpr::Binary(op, a, b) => {
                let x = a.const_value()?;
                let y = b.const_value()?;
                match op {
                    BinOp::Add => Some(x + y),
                    BinOp::Sub => Some(x - y),
                    BinOp::Mul => Some(x * y),
                    BinOp::Div => (y != 0.0).then(|| x / y),
                    BinOp::Pow => {
                        let r = x.powf(y);
                        r.is_finite().then_some(r)
                    }
                }
            }
        }
    }
}

fn is_integer_exponent(c: f64) -> Option<i32> {
    if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 {
        Some(c as i32)
    } else {
        None
    }
}

/// Evaluates an expression over any forward-mode carrier.
///
/// Domain checks (division by zero, log/sqrt of out-of-domain arguments,
/// fractional powers of non-positive bases) are performed on the primal
/// value; non-finite results are rejected.
pub fn eval_with<T: Num>(f: &ScalarExpr, x: &[T]) -> Result<T> {
    if x.is_empty() {
        return Err(Error::Dimension("empty evaluation point".into()));
    }
    let r = eval_inner(f, x)?;
    if r.all_finite() {
        Ok(r)
    } else {
        Err(Error::NonFinite { op: "eval" })
    }
}

fn eval_inner<T: Num>(f: &ScalarExpr, x: &[T]) -> Result<T> {
    match f {
        ScalarExpr::Const(c) => Ok(x[0].lift(*c)),
        ScalarExpr::Var(i) => x.get(*i).cloned().ok_or_else(|| {
            Error::Dimension(format!(
                "variable index {} out of range for dimension {}",
                i,
                x.len()
            ))
        }),
        ScalarExpr::Unary(op, a) => {
            let v = eval_inner(a, x)?;
            match op {
                UnaryOp::Neg => Ok(-v),
                UnaryOp::Sin => Ok(v.sin()),
                UnaryOp::Cos => Ok(v.cos()),
                UnaryOp::Exp => Ok(v.exp()),
                UnaryOp::Log => {
                    if v.primal() <= 0.0 {
                        Err(Error::Domain {
                            op: "log",
                            msg: format!("argument {} is not positive", v.primal()),
                        })
                    } else {
                        Ok(v.ln())
                    }
                }
                UnaryOp::Sqrt => {
                    if v.primal() < 0.0 {
                        Err(Error::Domain {
                            op: "sqrt",
                            msg: format!("argument {} is negative", v.primal()),
                        })
                    } else {
                        Ok(v.sqrt())
                    }
                }
                UnaryOp::Tanh => Ok(v.tanh()),
            }
        }
        ScalarExpr::Binary(op, a, b) => match op {
            BinOp::Add => Ok(eval_inner(a, x)? + eval_inner(b, x)?),
            BinOp::Sub => Ok(eval_inner(a, x)? - eval_inner(b, x)?),
            BinOp::Mul => Ok(eval_inner(a, x)? * eval_inner(b, x)?),
            BinOp::Div => {
                let num = eval_inner(a, x)?;
                let den = eval_inner(b, x)?;
                if den.primal() == 0.0 {
                    Err(Error::Domain {
                        op: "div",
                        msg: "division by zero".into(),
                    })
                } else {
                    Ok(num / den)
                }
            }
            BinOp::Pow => {
                let base = eval_inner(a, x)?;
                if let Some(k) = b.const_value().and_then(is_integer_exponent) {
                    if k < 0 && base.primal() == 0.0 {
                        return Err(Error::Domain {
                            op: "pow",
                            msg: "zero base with negative integer exponent".into(),
                        });
                    }
                    Ok(base.powi(k))
                } else {
                    // Non-integer or variable exponent: defined for positive
                    // bases only, so derivatives stay real.
                    if base.primal() <= 0.0 {
                        return Err(Error::Domain {
                            op: "pow",
                            msg: format!(
                                "non-integer exponent with non-positive base {}",
                                base.primal()
                            ),
                        });
                    }
                    let expo = eval_inner(b, x)?;
                    Ok((expo * base.ln()).exp())
                }
            }
        },
    }
}

/// Evaluates a scalar field at a point.
pub fn eval(f: &ScalarExpr, x: &[f64]) -> Result<f64> {
    eval_with(f, x)
}

/// Evaluates a scalar field with exact derivatives up to `order` (1..=3).
///
/// Orders 2 and 3 are obtained by re-seeding the carrier with itself, so a
/// single evaluator serves all three instantiations.
pub fn eval_jet(f: &ScalarExpr, x: &[f64], order: u8) -> Result<Jet> {
    match order {
        1 => Jet::from_d1(eval_with(f, &seed(x))?),
        2 => Jet::from_d2(eval_with(f, &seed(&seed(x)))?),
        3 => Jet::from_d3(eval_with(f, &seed(&seed(&seed(x))))?),
        _ => Err(Error::Config(format!(
            "jet order must be 1, 2 or 3, got {order}"
        ))),
    }
}

// ── Parser ─────────────────────────────────────────────────────

/// Syntax or name-resolution failure, with the byte offset into the input.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at position {pos}: {msg}")]
pub struct ParseError {
    pub pos: usize,
    pub msg: String,
}

/// Variable-name table used during parsing.
#[derive(Clone, Debug)]
pub struct VarNames {
    names: Vec<String>,
}

const FUNCTIONS: [&str; 6] = ["sin", "cos", "exp", "log", "sqrt", "tanh"];
const CONSTANTS: [&str; 2] = ["pi", "e"];

impl VarNames {
    /// Default names `x1..xn` (plus q/p aliases resolved separately).
    pub fn default_for(n: usize) -> Self {
        VarNames {
            names: (1..=n).map(|i| format!("x{i}")).collect(),
        }
    }

    /// Custom names; must be distinct, non-empty, and not collide with
    /// function or constant names.
    pub fn custom(names: &[String]) -> std::result::Result<Self, ParseError> {
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(ParseError {
                    pos: 0,
                    msg: format!("variable name {i} is empty"),
                });
            }
            if FUNCTIONS.contains(&name.as_str()) || CONSTANTS.contains(&name.as_str()) {
                return Err(ParseError {
                    pos: 0,
                    msg: format!("variable name '{name}' shadows a builtin"),
                });
            }
            if names[..i].contains(name) {
                return Err(ParseError {
                    pos: 0,
                    msg: format!("duplicate variable name '{name}'"),
                });
            }
        }
        Ok(VarNames {
            names: names.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    fn resolve(&self, ident: &str) -> Option<usize> {
        if let Some(i) = self.names.iter().position(|n| n == ident) {
            return Some(i);
        }
        // Phase-space aliases q_i / p_i on even dimensions, active only for
        // the default x-name table.
        let n = self.names.len();
        if n % 2 == 0 && self.names.first().map(String::as_str) == Some("x1") {
            let m = n / 2;
            if let Some(rest) = ident.strip_prefix('q') {
                if let Ok(k) = rest.parse::<usize>() {
                    if (1..=m).contains(&k) {
                        return Some(k - 1);
                    }
                }
            }
            if let Some(rest) = ident.strip_prefix('p') {
                if let Ok(k) = rest.parse::<usize>() {
                    if (1..=m).contains(&k) {
                        return Some(m + k - 1);
                    }
                }
            }
        }
        None
    }
}

/// Parses an expression over n variables.
///
/// `names` overrides the default `x1..xn` table (the q/p aliases are only
/// available with the default table).
pub fn parse(
    text: &str,
    n: usize,
    names: Option<&[String]>,
) -> std::result::Result<ScalarExpr, ParseError> {
    if n == 0 {
        return Err(ParseError {
            pos: 0,
            msg: "dimension must be at least 1".into(),
        });
    }
    let table = match names {
        Some(list) => {
            if list.len() != n {
                return Err(ParseError {
                    pos: 0,
                    msg: format!("expected {} variable names, got {}", n, list.len()),
                });
            }
            VarNames::custom(list)?
        }
        None => VarNames::default_for(n),
    };
    let tokens = tokenize(text)?;
    let mut parser = Parser {
        tokens,
        pos: 0,
        names: &table,
    };
    let expr = parser.expr()?;
    if parser.pos < parser.tokens.len() {
        let t = &parser.tokens[parser.pos];
        return Err(ParseError {
            pos: t.pos,
            msg: format!("unexpected trailing input '{}'", t.kind),
        });
    }
    Ok(expr)
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "{v}"),
            TokKind::Ident(s) => write!(f, "{s}"),
            TokKind::Plus => write!(f, "+"),
            TokKind::Minus => write!(f, "-"),
            TokKind::Star => write!(f, "*"),
            TokKind::Slash => write!(f, "/"),
            TokKind::Caret => write!(f, "^"),
            TokKind::LParen => write!(f, "("),
            TokKind::RParen => write!(f, ")"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(text: &str) -> std::result::Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '+' | '-' | '*' | '/' | '^' | '(' | ')' => {
                let kind = match c {
                    '+' => TokKind::Plus,
                    '-' => TokKind::Minus,
                    '*' => TokKind::Star,
                    '/' => TokKind::Slash,
                    '^' => TokKind::Caret,
                    '(' => TokKind::LParen,
                    _ => TokKind::RParen,
                };
                out.push(Token { kind, pos: i });
                i += 1;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
                // Exponent part only when digits follow (so the identifier
                // 'e' in '2*e' is untouched).
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ParseError {
                    pos: start,
                    msg: format!("malformed number '{lit}'"),
                })?;
                out.push(Token {
                    kind: TokKind::Num(v),
                    pos: start,
                });
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len()
                    && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token {
                    kind: TokKind::Ident(text[start..i].to_string()),
                    pos: start,
                });
            }
            other => {
                return Err(ParseError {
                    pos: i,
                    msg: format!("unexpected character '{other}'"),
                })
            }
        }
    }
    if out.is_empty() {
        return Err(ParseError {
            pos: 0,
            msg: "empty expression".into(),
        });
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    names: &'a VarNames,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&TokKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn here(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|t| t.pos)
            .unwrap_or_else(|| self.tokens.last().map(|t| t.pos + 1).unwrap_or(0))
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, kind: TokKind) -> std::result::Result<(), ParseError> {
        match self.peek() {
            Some(k) if *k == kind => {
                self.pos += 1;
                Ok(())
            }
            Some(k) => Err(ParseError {
                pos: self.here(),
                msg: format!("expected '{kind}', found '{k}'"),
            }),
            None => Err(ParseError {
                pos: self.here(),
                msg: format!("expected '{kind}', found end of input"),
            }),
        }
    }

    fn expr(&mut self) -> std::result::Result<ScalarExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(TokKind::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = ScalarExpr::Binary(BinOp::Add, Box::new(lhs), Box::new(rhs));
                }
                Some(TokKind::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = ScalarExpr::Binary(BinOp::Sub, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> std::result::Result<ScalarExpr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(TokKind::Star) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = ScalarExpr::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs));
                }
                Some(TokKind::Slash) => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = ScalarExpr::Binary(BinOp::Div, Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> std::result::Result<ScalarExpr, ParseError> {
        if matches!(self.peek(), Some(TokKind::Minus)) {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(ScalarExpr::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> std::result::Result<ScalarExpr, ParseError> {
        let base = self.atom()?;
        if matches!(self.peek(), Some(TokKind::Caret)) {
            self.pos += 1;
            // Right-associative; the exponent re-enters at the unary level,
            // so x^-2 and x^y^z parse naturally.
            let expo = self.unary()?;
            return Ok(ScalarExpr::Binary(
                BinOp::Pow,
                Box::new(base),
                Box::new(expo),
            ));
        }
        Ok(base)
    }

    fn atom(&mut self) -> std::result::Result<ScalarExpr, ParseError> {
        let here = self.here();
        match self.bump() {
            Some(Token {
                kind: TokKind::Num(v),
                ..
            }) => Ok(ScalarExpr::Const(v)),
            Some(Token {
                kind: TokKind::LParen,
                ..
            }) => {
                let inner = self.expr()?;
                self.expect(TokKind::RParen)?;
                Ok(inner)
            }
            Some(Token {
                kind: TokKind::Ident(name),
                pos,
            }) => {
                if let Some(func) = function_for(&name) {
                    if !matches!(self.peek(), Some(TokKind::LParen)) {
                        return Err(ParseError {
                            pos: self.here(),
                            msg: format!("function '{name}' expects one parenthesized argument"),
                        });
                    }
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(TokKind::RParen)?;
                    return Ok(ScalarExpr::Unary(func, Box::new(arg)));
                }
                match name.as_str() {
                    "pi" => Ok(ScalarExpr::Const(std::f64::consts::PI)),
                    "e" => Ok(ScalarExpr::Const(std::f64::consts::E)),
                    _ => {
                        if matches!(self.peek(), Some(TokKind::LParen)) {
                            return Err(ParseError {
                                pos,
                                msg: format!("'{name}' is not a function"),
                            });
                        }
                        self.names.resolve(&name).map(ScalarExpr::Var).ok_or_else(|| {
                            ParseError {
                                pos,
                                msg: format!(
                                    "unknown identifier '{name}' (variables: {})",
                                    self.names.names.join(", ")
                                ),
                            }
                        })
                    }
                }
            }
            Some(t) => Err(ParseError {
                pos: t.pos,
                msg: format!("expected a value, found '{}'", t.kind),
            }),
            None => Err(ParseError {
                pos: here,
                msg: "unexpected end of input".into(),
            }),
        }
    }
}

fn function_for(name: &str) -> Option<UnaryOp> {
    match name {
        "sin" => Some(UnaryOp::Sin),
        "cos" => Some(UnaryOp::Cos),
        "exp" => Some(UnaryOp::Exp),
        "log" => Some(UnaryOp::Log),
        "sqrt" => Some(UnaryOp::Sqrt),
        "tanh" => Some(UnaryOp::Tanh),
        _ => None,
    }
}

// ── Printer ────────────────────────────────────────────────────

fn precedence(e: &ScalarExpr) -> u8 {
    match e {
        ScalarExpr::Const(c) if *c < 0.0 => 3,
        ScalarExpr::Const(_) | ScalarExpr::Var(_) => 5,
        ScalarExpr::Unary(UnaryOp::Neg, _) => 3,
        ScalarExpr::Unary(_, _) => 5,
        ScalarExpr::Binary(BinOp::Pow, _, _) => 4,
        ScalarExpr::Binary(BinOp::Mul | BinOp::Div, _, _) => 2,
        ScalarExpr::Binary(BinOp::Add | BinOp::Sub, _, _) => 1,
    }
}

fn write_child(
    f: &mut fmt::Formatter<'_>,
    child: &ScalarExpr,
    needs_parens: bool,
) -> fmt::Result {
    if needs_parens {
        write!(f, "({child})")
    } else {
        write!(f, "{child}")
    }
}

impl fmt::Display for ScalarExpr {
    /// Prints a form that re-parses to an equivalent tree (variables use the
    /// canonical `x{i+1}` names).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Const(c) => write!(f, "{c}"),
            ScalarExpr::Var(i) => write!(f, "x{}", i + 1),
            ScalarExpr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                write_child(f, a, precedence(a) < 3)
            }
            ScalarExpr::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Log => "log",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Tanh => "tanh",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            ScalarExpr::Binary(op, a, b) => {
                let prec = precedence(self);
                match op {
                    BinOp::Add => {
                        write_child(f, a, precedence(a) < prec)?;
                        write!(f, " + ")?;
                        write_child(f, b, precedence(b) < prec)
                    }
                    BinOp::Sub => {
                        write_child(f, a, precedence(a) < prec)?;
                        write!(f, " - ")?;
                        write_child(f, b, precedence(b) <= prec)
                    }
                    BinOp::Mul => {
                        write_child(f, a, precedence(a) < prec)?;
                        write!(f, "*")?;
                        write_child(f, b, precedence(b) < prec)
                    }
                    BinOp::Div => {
                        write_child(f, a, precedence(a) < prec)?;
                        write!(f, "/")?;
                        write_child(f, b, precedence(b) <= prec)
                    }
                    BinOp::Pow => {
                        write_child(f, a, precedence(a) <= prec)?;
                        write!(f, "^")?;
                        // The exponent re-parses at the unary level.
                        write_child(f, b, precedence(b) < 3)
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str, n: usize) -> ScalarExpr {
        parse(text, n, None).unwrap()
    }

    #[test]
    fn parses_phase_space_aliases() {
        let e = p("q1^2 + p1^2", 2);
        let expected = ScalarExpr::Binary(
            BinOp::Add,
            Box::new(ScalarExpr::Binary(
                BinOp::Pow,
                Box::new(ScalarExpr::Var(0)),
                Box::new(ScalarExpr::Const(2.0)),
            )),
            Box::new(ScalarExpr::Binary(
                BinOp::Pow,
                Box::new(ScalarExpr::Var(1)),
                Box::new(ScalarExpr::Const(2.0)),
            )),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn unary_minus_and_precedence() {
        let e = p("2*x1 - -x2", 2);
        assert_eq!(eval(&e, &[1.0, 3.0]).unwrap(), 5.0);
        // ^ binds tighter than unary minus
        let e = p("-x1^2", 1);
        assert_eq!(eval(&e, &[3.0]).unwrap(), -9.0);
        // ^ is right-associative
        let e = p("2^3^2", 1);
        assert_eq!(eval(&e, &[0.0]).unwrap(), 512.0);
        // exponent at unary level
        let e = p("x1^-2", 1);
        assert_eq!(eval(&e, &[2.0]).unwrap(), 0.25);
    }

    #[test]
    fn out_of_range_variable_is_unknown() {
        let err = parse("sin(x3)", 2, None).unwrap_err();
        assert!(err.msg.contains("x3"), "{err}");
    }

    #[test]
    fn reports_position_of_syntax_error() {
        let err = parse("x1 + * 2", 1, None).unwrap_err();
        assert_eq!(err.pos, 5);
    }

    #[test]
    fn wrong_arity_rejected() {
        assert!(parse("sin", 1, None).is_err());
        assert!(parse("x1(2)", 1, None).is_err());
    }

    #[test]
    fn eval_examples() {
        assert_eq!(eval(&p("0.5*(q1^2+p1^2)", 2), &[1.0, 2.0]).unwrap(), 2.5);
        assert_eq!(eval(&p("exp(0)", 1), &[7.0]).unwrap(), 1.0);
        assert!(matches!(
            eval(&p("log(x1)", 1), &[-1.0]),
            Err(Error::Domain { op: "log", .. })
        ));
        assert!(matches!(
            eval(&p("x1/(x1 - x1)", 1), &[1.0]),
            Err(Error::Domain { op: "div", .. })
        ));
    }

    #[test]
    fn constants_pi_e() {
        assert!((eval(&p("pi", 1), &[0.0]).unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert!((eval(&p("log(e)", 1), &[0.0]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn fractional_pow_needs_positive_base() {
        assert!(eval(&p("(-x1)^1.5", 1), &[2.0]).is_err());
        assert_eq!(eval(&p("(-x1)^3", 1), &[2.0]).unwrap(), -8.0);
        assert!((eval(&p("x1^0.5", 1), &[4.0]).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn jet_product_rule() {
        let jet = eval_jet(&p("x1*x2", 2), &[3.0, 4.0], 1).unwrap();
        assert_eq!(jet.value, 12.0);
        assert_eq!(jet.grad, vec![4.0, 3.0]);
    }

    #[test]
    fn jet_sin_second_order() {
        let jet = eval_jet(&p("sin(x1)", 1), &[0.0], 2).unwrap();
        assert_eq!(jet.value, 0.0);
        assert_eq!(jet.grad, vec![1.0]);
        assert_eq!(jet.hess_at(0, 0), 0.0);
    }

    #[test]
    fn jet_third_order_cube_with_fd_oracle() {
        let f = p("x1^3", 1);
        let jet = eval_jet(&f, &[2.0], 3).unwrap();
        assert!((jet.third_at(0, 0, 0) - 6.0).abs() < 1e-9);

        // Independent central finite-difference oracle for f''':
        // (f(x+2h) - 2 f(x+h) + 2 f(x-h) - f(x-2h)) / (2 h^3)
        let h = 1e-3;
        let at = |x: f64| eval(&f, &[x]).unwrap();
        let fd = (at(2.0 + 2.0 * h) - 2.0 * at(2.0 + h) + 2.0 * at(2.0 - h) - at(2.0 - 2.0 * h))
            / (2.0 * h * h * h);
        assert!((jet.third_at(0, 0, 0) - fd).abs() < 1e-5);
    }

    #[test]
    fn custom_names() {
        let names = vec!["theta".to_string(), "omega".to_string()];
        let e = parse("theta*omega", 2, Some(&names)).unwrap();
        assert_eq!(eval(&e, &[2.0, 3.0]).unwrap(), 6.0);
        // q/p aliases are not active with a custom table
        assert!(parse("q1", 2, Some(&names)).is_err());
        // collisions with builtins rejected
        let bad = vec!["sin".to_string(), "y".to_string()];
        assert!(parse("y", 2, Some(&bad)).is_err());
    }

    #[test]
    fn printer_roundtrips_tricky_trees() {
        let cases = [
            "-(x1 + x2)",
            "x1 - (x2 - x1)",
            "(x1^2)^3",
            "x1^-2",
            "-x1^2",
            "x1/(x2/x1)",
            "sin(x1)*cos(x2) - exp(-x1)",
            "2e3*x1",
        ];
        for text in cases {
            let e = p(text, 2);
            let printed = e.to_string();
            let reparsed = p(&printed, 2);
            for k in 0..20 {
                let x = [0.3 + 0.1 * k as f64, -0.7 + 0.05 * k as f64];
                let a = eval(&e, &x).unwrap();
                let b = eval(&reparsed, &x).unwrap();
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                    "roundtrip mismatch for {text}: {a} vs {b}"
                );
            }
        }
    }
}
