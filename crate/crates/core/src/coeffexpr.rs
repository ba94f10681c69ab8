//! A small expression language for time-varying coefficients.
//!
//! Expressions are built from numbers, the variable `t`, `+ - * / ^` and the functions
//! `cos sin exp ln sqrt`. Exponents must be constant rationals so that symbolic
//! differentiation stays exact.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use num_rational::Rational64;
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Cos,
    Sin,
    Exp,
    Ln,
    Sqrt,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Cos => "cos",
            UnaryOp::Sin => "sin",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "cos" => UnaryOp::Cos,
            "sin" => UnaryOp::Sin,
            "exp" => UnaryOp::Exp,
            "ln" => UnaryOp::Ln,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

/// Expression tree over the single variable `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var,
    Neg(Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Rational64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at offset {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("exponent at offset {offset} must be a constant rational")]
    NonRationalExponent { offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UnknownIdentifier { offset, .. }
            | ParseError::NonRationalExponent { offset } => *offset,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero at t = {t}")]
    DivisionByZero { t: f64 },
    #[error("{func} is undefined for argument {arg} at t = {t}")]
    Domain { func: &'static str, arg: f64, t: f64 },
    #[error("non-finite value at t = {t}")]
    NonFinite { t: f64 },
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn t() -> Expr {
        Expr::Var
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Expr {
        Expr::Unary(op, Box::new(e))
    }

    pub fn cos(e: Expr) -> Expr {
        Expr::unary(UnaryOp::Cos, e)
    }

    pub fn sin(e: Expr) -> Expr {
        Expr::unary(UnaryOp::Sin, e)
    }

    pub fn exp(e: Expr) -> Expr {
        Expr::unary(UnaryOp::Exp, e)
    }

    pub fn ln(e: Expr) -> Expr {
        Expr::unary(UnaryOp::Ln, e)
    }

    pub fn sqrt(e: Expr) -> Expr {
        Expr::unary(UnaryOp::Sqrt, e)
    }

    pub fn pow(self, exponent: Rational64) -> Expr {
        Expr::Pow(Box::new(self), exponent)
    }

    pub fn powi(self, n: i64) -> Expr {
        self.pow(Rational64::from_integer(n))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn contains_var(&self) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var => true,
            Expr::Neg(a) | Expr::Unary(_, a) | Expr::Pow(a, _) => a.contains_var(),
            Expr::Binary(_, a, b) => a.contains_var() || b.contains_var(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var => 1,
            Expr::Neg(a) | Expr::Unary(_, a) | Expr::Pow(a, _) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Const(c) => *c,
            Expr::Var => t,
            Expr::Neg(a) => -a.eval(t)?,
            Expr::Unary(op, a) => {
                let x = a.eval(t)?;
                match op {
                    UnaryOp::Cos => x.cos(),
                    UnaryOp::Sin => x.sin(),
                    UnaryOp::Exp => x.exp(),
                    UnaryOp::Ln => {
                        if x <= 0.0 {
                            return Err(EvalError::Domain { func: "ln", arg: x, t });
                        }
                        x.ln()
                    }
                    UnaryOp::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::Domain { func: "sqrt", arg: x, t });
                        }
                        x.sqrt()
                    }
                }
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(t)?;
                let y = b.eval(t)?;
                match op {
                    BinaryOp::Add => x + y,
                    BinaryOp::Sub => x - y,
                    BinaryOp::Mul => x * y,
                    BinaryOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero { t });
                        }
                        x / y
                    }
                }
            }
            Expr::Pow(a, q) => pow_rational(a.eval(t)?, *q, t)?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { t })
        }
    }

    /// Symbolic derivative with respect to `t`, simplified.
    pub fn differentiate(&self) -> Expr {
        self.derive().simplify()
    }

    fn derive(&self) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var => Expr::Const(1.0),
            Expr::Neg(a) => -a.derive(),
            Expr::Unary(op, a) => {
                let da = a.derive();
                let inner = (**a).clone();
                match op {
                    UnaryOp::Cos => -(Expr::sin(inner) * da),
                    UnaryOp::Sin => Expr::cos(inner) * da,
                    UnaryOp::Exp => Expr::exp(inner) * da,
                    UnaryOp::Ln => da / inner,
                    UnaryOp::Sqrt => da / (Expr::Const(2.0) * Expr::sqrt(inner)),
                }
            }
            Expr::Binary(op, a, b) => {
                let (da, db) = (a.derive(), b.derive());
                let (a, b) = ((**a).clone(), (**b).clone());
                match op {
                    BinaryOp::Add => da + db,
                    BinaryOp::Sub => da - db,
                    BinaryOp::Mul => da * b + a * db,
                    BinaryOp::Div => (da * b.clone() - a * db) / b.powi(2),
                }
            }
            Expr::Pow(a, q) => {
                let da = a.derive();
                let lowered = (**a).clone().pow(*q - Rational64::from_integer(1));
                Expr::Const(rational_to_f64(*q)) * lowered * da
            }
        }
    }

    /// Constant folding plus the identities `x+0`, `x-0`, `x*1`, `x*0`, `x/1`, `0/x`, `x^1`,
    /// `x^0` and double negation.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var => self.clone(),
            Expr::Neg(a) => match a.simplify() {
                Expr::Const(c) => Expr::Const(-c + 0.0),
                Expr::Neg(inner) => *inner,
                s => Expr::Neg(Box::new(s)),
            },
            Expr::Unary(op, a) => {
                let s = a.simplify();
                if let Expr::Const(c) = s {
                    let folded = Expr::Unary(*op, Box::new(Expr::Const(c)));
                    if let Ok(v) = folded.eval(0.0) {
                        return Expr::Const(v);
                    }
                }
                Expr::Unary(*op, Box::new(s))
            }
            Expr::Binary(op, a, b) => simplify_binary(*op, a.simplify(), b.simplify()),
            Expr::Pow(a, q) => {
                let s = a.simplify();
                if *q == Rational64::from_integer(1) {
                    return s;
                }
                if *q == Rational64::from_integer(0) {
                    return Expr::Const(1.0);
                }
                if let Expr::Const(c) = s {
                    if let Ok(v) = pow_rational(c, *q, 0.0) {
                        if v.is_finite() {
                            return Expr::Const(v);
                        }
                    }
                }
                Expr::Pow(Box::new(s), *q)
            }
        }
    }

    /// True when the expression is a non-constant affine function of `t`.
    pub fn is_affine(&self) -> bool {
        self.contains_var() && !self.differentiate().contains_var()
    }

    /// Times where the expression is undefined, found from the patterns `c/affine^k`,
    /// `affine^(negative)` and `ln`/`sqrt` of an affine argument.
    pub fn singular_points(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_singular(&mut out);
        out.sort_by(f64::total_cmp);
        out.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + a.abs()));
        out
    }

    fn collect_singular(&self, out: &mut Vec<f64>) {
        match self {
            Expr::Const(_) | Expr::Var => {}
            Expr::Neg(a) => a.collect_singular(out),
            Expr::Unary(op, a) => {
                if matches!(op, UnaryOp::Ln | UnaryOp::Sqrt) {
                    if let Some(root) = affine_root(a) {
                        out.push(root);
                    }
                }
                a.collect_singular(out);
            }
            Expr::Binary(op, a, b) => {
                if *op == BinaryOp::Div {
                    denominator_roots(b, out);
                }
                a.collect_singular(out);
                b.collect_singular(out);
            }
            Expr::Pow(a, q) => {
                if *q < Rational64::from_integer(0) {
                    denominator_roots(a, out);
                }
                a.collect_singular(out);
            }
        }
    }
}

fn affine_root(e: &Expr) -> Option<f64> {
    if !e.is_affine() {
        return None;
    }
    let slope = e.differentiate().eval(0.0).ok()?;
    if slope == 0.0 {
        return None;
    }
    let intercept = e.eval(0.0).ok()?;
    Some(-intercept / slope)
}

fn denominator_roots(e: &Expr, out: &mut Vec<f64>) {
    if let Some(root) = affine_root(e) {
        out.push(root);
        return;
    }
    match e {
        Expr::Neg(a) => denominator_roots(a, out),
        Expr::Pow(a, q) if *q > Rational64::from_integer(0) => denominator_roots(a, out),
        Expr::Binary(BinaryOp::Mul, a, b) => {
            denominator_roots(a, out);
            denominator_roots(b, out);
        }
        _ => {}
    }
}

fn simplify_binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
    if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
        let v = match op {
            BinaryOp::Add => Some(x + y),
            BinaryOp::Sub => Some(x - y),
            BinaryOp::Mul => Some(x * y),
            BinaryOp::Div => (*y != 0.0).then(|| x / y),
        };
        if let Some(v) = v.filter(|v| v.is_finite()) {
            return Expr::Const(v + 0.0);
        }
    }
    let is = |e: &Expr, c: f64| matches!(e, Expr::Const(v) if *v == c);
    match op {
        BinaryOp::Add if is(&b, 0.0) => a,
        BinaryOp::Add if is(&a, 0.0) => b,
        BinaryOp::Sub if is(&b, 0.0) => a,
        BinaryOp::Sub if is(&a, 0.0) => match b {
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        },
        BinaryOp::Mul if is(&a, 0.0) || is(&b, 0.0) => Expr::Const(0.0),
        BinaryOp::Mul if is(&b, 1.0) => a,
        BinaryOp::Mul if is(&a, 1.0) => b,
        BinaryOp::Div if is(&b, 1.0) => a,
        BinaryOp::Div if is(&a, 0.0) => Expr::Const(0.0),
        _ => Expr::Binary(op, Box::new(a), Box::new(b)),
    }
}

fn rational_to_f64(q: Rational64) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

fn pow_rational(x: f64, q: Rational64, t: f64) -> Result<f64, EvalError> {
    let (p, d) = (*q.numer(), *q.denom());
    if x == 0.0 && p < 0 {
        return Err(EvalError::DivisionByZero { t });
    }
    if d == 1 {
        return Ok(match i32::try_from(p) {
            Ok(n) => x.powi(n),
            Err(_) => x.powf(p as f64),
        });
    }
    if x < 0.0 {
        if d % 2 == 0 {
            return Err(EvalError::Domain { func: "even root", arg: x, t });
        }
        let magnitude = (-x).powf(rational_to_f64(q));
        return Ok(if p % 2 == 0 { magnitude } else { -magnitude });
    }
    Ok(x.powf(rational_to_f64(q)))
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Binary(BinaryOp::Add, Box::new(self), Box::new(rhs))
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Binary(BinaryOp::Sub, Box::new(self), Box::new(rhs))
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Binary(BinaryOp::Mul, Box::new(self), Box::new(rhs))
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Binary(BinaryOp::Div, Box::new(self), Box::new(rhs))
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }
}

impl From<f64> for Expr {
    fn from(c: f64) -> Expr {
        Expr::Const(c)
    }
}

// Printing. Precedence levels: 1 additive, 2 multiplicative, 3 prefix minus, 4 power, 5 atom.

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Const(c) if c.is_sign_negative() => 3,
        Expr::Const(_) | Expr::Var | Expr::Unary(..) => 5,
        Expr::Neg(_) => 3,
        Expr::Binary(op, ..) => op.precedence(),
        Expr::Pow(..) => 4,
    }
}

fn fmt_number(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let a = c.abs();
    if a != 0.0 && !(1e-5..1e16).contains(&a) {
        write!(f, "{c:e}")
    } else {
        write!(f, "{c}")
    }
}

fn fmt_child(e: &Expr, min_prec: u8, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => fmt_number(*c, f),
            Expr::Var => write!(f, "t"),
            Expr::Neg(a) => {
                write!(f, "-")?;
                fmt_child(a, 3, f)
            }
            Expr::Unary(op, a) => write!(f, "{}({a})", op.name()),
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                fmt_child(a, p, f)?;
                write!(f, "{}", op.symbol())?;
                fmt_child(b, p + 1, f)
            }
            Expr::Pow(a, q) => {
                fmt_child(a, 5, f)?;
                if *q.denom() == 1 && *q.numer() >= 0 {
                    write!(f, "^{}", q.numer())
                } else if *q.denom() == 1 {
                    write!(f, "^({})", q.numer())
                } else {
                    write!(f, "^({}/{})", q.numer(), q.denom())
                }
            }
        }
    }
}

/// Parses an expression in the coefficient grammar.
pub fn parse_expression(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser { src: src.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

impl std::str::FromStr for Expr {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_expression(s)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
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

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn syntax(&self, message: &str) -> ParseError {
        ParseError::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn expect(&mut self, c: u8) -> Result<(), ParseError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{}`", c as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            // Literal negation folds into the constant, matching how negative constants print.
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.eat(b'^') {
            let q = self.exponent()?;
            return Ok(Expr::Pow(Box::new(base), q));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Const(self.number()?.0)),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let start = self.pos;
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
                if name == "t" {
                    return Ok(Expr::Var);
                }
                match UnaryOp::from_name(name) {
                    Some(op) => {
                        self.expect(b'(')?;
                        let arg = self.expr()?;
                        self.expect(b')')?;
                        Ok(Expr::Unary(op, Box::new(arg)))
                    }
                    None => Err(ParseError::UnknownIdentifier { offset: start, name: name.to_string() }),
                }
            }
            Some(_) => Err(self.syntax("expected a number, `t`, a function call or `(`")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    /// Scans a numeric literal, returning its value and exact rational form when it has one.
    fn number(&mut self) -> Result<(f64, Option<Rational64>), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let int_len = digits(self);
        let mut frac_len = 0;
        if self.pos < self.src.len() && self.src[self.pos] == b'.' {
            self.pos += 1;
            frac_len = digits(self);
        }
        if int_len + frac_len == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        let mantissa_end = self.pos;
        let mut exp10: i64 = 0;
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let save = self.pos;
            self.pos += 1;
            let neg = if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                self.pos += 1;
                self.src[self.pos - 1] == b'-'
            } else {
                false
            };
            let es = self.pos;
            if digits(self) == 0 {
                self.pos = save;
            } else {
                let text = std::str::from_utf8(&self.src[es..self.pos]).unwrap_or("0");
                exp10 = text.parse::<i64>().unwrap_or(i64::MAX);
                if neg {
                    exp10 = -exp10;
                }
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or("");
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            offset: start,
            message: "malformed number".into(),
        })?;
        let mantissa: String = std::str::from_utf8(&self.src[start..mantissa_end])
            .unwrap_or("")
            .chars()
            .filter(|c| c.is_ascii_digit())
            .collect();
        let exact = exact_decimal(&mantissa, exp10 - frac_len as i64);
        Ok((value, exact))
    }

    // exponent := '-' exponent | ratom ('^' exponent)?
    fn exponent(&mut self) -> Result<Rational64, ParseError> {
        let offset = self.peek_offset();
        if self.eat(b'-') {
            let q = self.exponent()?;
            return Ok(-q);
        }
        let base = self.rational_atom()?;
        if self.eat(b'^') {
            let e = self.exponent()?;
            return rational_pow(base, e).ok_or(ParseError::NonRationalExponent { offset });
        }
        Ok(base)
    }

    fn peek_offset(&mut self) -> usize {
        self.skip_ws();
        self.pos
    }

    fn rational_atom(&mut self) -> Result<Rational64, ParseError> {
        let offset = self.peek_offset();
        match self.peek() {
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                let (_, exact) = self.number()?;
                exact.ok_or(ParseError::NonRationalExponent { offset })
            }
            Some(b'(') => {
                self.pos += 1;
                let q = self.rational_expr()?;
                self.expect(b')')?;
                Ok(q)
            }
            Some(c) if c.is_ascii_alphabetic() => Err(ParseError::NonRationalExponent { offset }),
            Some(_) => Err(self.syntax("expected an exponent")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn rational_expr(&mut self) -> Result<Rational64, ParseError> {
        let mut acc = self.rational_term()?;
        loop {
            let offset = self.peek_offset();
            let add = match self.peek() {
                Some(b'+') => true,
                Some(b'-') => false,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.rational_term()?;
            acc = if add { acc.checked_add(&rhs) } else { acc.checked_sub(&rhs) }
                .ok_or(ParseError::NonRationalExponent { offset })?;
        }
    }

    fn rational_term(&mut self) -> Result<Rational64, ParseError> {
        let mut acc = self.exponent()?;
        loop {
            let offset = self.peek_offset();
            let mul = match self.peek() {
                Some(b'*') => true,
                Some(b'/') => false,
                _ => return Ok(acc),
            };
            self.pos += 1;
            let rhs = self.exponent()?;
            acc = if mul {
                acc.checked_mul(&rhs)
            } else if *rhs.numer() == 0 {
                None
            } else {
                acc.checked_div(&rhs)
            }
            .ok_or(ParseError::NonRationalExponent { offset })?;
        }
    }
}

fn exact_decimal(digits: &str, exp10: i64) -> Option<Rational64> {
    let trimmed = digits.trim_start_matches('0');
    let n: i64 = if trimmed.is_empty() { 0 } else { trimmed.parse().ok()? };
    if !(-18..=18).contains(&exp10) {
        return if n == 0 { Some(Rational64::from_integer(0)) } else { None };
    }
    let scale = 10i64.checked_pow(exp10.unsigned_abs() as u32)?;
    if exp10 >= 0 {
        Some(Rational64::from_integer(n.checked_mul(scale)?))
    } else {
        Some(Rational64::new(n, scale))
    }
}

fn rational_pow(base: Rational64, e: Rational64) -> Option<Rational64> {
    if *e.denom() != 1 {
        return None;
    }
    let n = *e.numer();
    let mut acc = Rational64::from_integer(1);
    for _ in 0..n.unsigned_abs() {
        acc = acc.checked_mul(&base)?;
    }
    if n < 0 {
        if *acc.numer() == 0 {
            return None;
        }
        acc = acc.recip();
    }
    Some(acc)
}

/// A real coefficient of time together with its exact symbolic derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFn {
    value: Expr,
    derivative: Expr,
    domain: (f64, f64),
    singular_points: Vec<f64>,
}

impl CoefficientFn {
    pub fn new(value: Expr) -> Self {
        let derivative = value.differentiate();
        let singular_points = value.singular_points();
        CoefficientFn { value, derivative, domain: (f64::NEG_INFINITY, f64::INFINITY), singular_points }
    }

    pub fn parse(src: &str) -> Result<Self, ParseError> {
        Ok(CoefficientFn::new(parse_expression(src)?))
    }

    pub fn constant(c: f64) -> Self {
        CoefficientFn::new(Expr::Const(c))
    }

    pub fn with_domain(mut self, lo: f64, hi: f64) -> Self {
        self.domain = (lo, hi);
        self
    }

    pub fn with_singular_points(mut self, extra: &[f64]) -> Self {
        self.singular_points.extend_from_slice(extra);
        self.singular_points.sort_by(f64::total_cmp);
        self.singular_points.dedup();
        self
    }

    pub fn value(&self, t: f64) -> Result<f64, EvalError> {
        self.value.eval(t)
    }

    pub fn derivative(&self, t: f64) -> Result<f64, EvalError> {
        self.derivative.eval(t)
    }

    pub fn expr(&self) -> &Expr {
        &self.value
    }

    pub fn derivative_expr(&self) -> &Expr {
        &self.derivative
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn singular_points(&self) -> &[f64] {
        &self.singular_points
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.value.simplify().as_const()
    }
}

impl fmt::Display for CoefficientFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        parse_expression(s).unwrap()
    }

    #[test]
    fn parses_function_call() {
        assert_eq!(p("cos(t)"), Expr::cos(Expr::Var));
    }

    #[test]
    fn bessel_expression_value() {
        let e = p("(4*5^2-1)/(4*t^2)-1");
        assert!((e.eval(1.0).unwrap() - 23.75).abs() < 1e-12);
    }

    #[test]
    fn syntax_error_offset() {
        let err = parse_expression("2+*3").unwrap_err();
        assert_eq!(err.offset(), 2);
        assert!(matches!(err, ParseError::Syntax { .. }));
    }

    #[test]
    fn unknown_identifier() {
        assert!(matches!(parse_expression("x+1"), Err(ParseError::UnknownIdentifier { offset: 0, .. })));
        assert!(matches!(parse_expression("2*tan(t)"), Err(ParseError::UnknownIdentifier { offset: 2, .. })));
    }

    #[test]
    fn exponent_must_be_rational() {
        assert!(matches!(parse_expression("t^t"), Err(ParseError::NonRationalExponent { .. })));
        assert_eq!(p("t^(3/2)"), Expr::Var.pow(Rational64::new(3, 2)));
        assert_eq!(p("t^1.5"), Expr::Var.pow(Rational64::new(3, 2)));
        assert_eq!(p("t^-2"), Expr::Var.powi(-2));
        assert_eq!(p("t^2^3"), Expr::Var.powi(8));
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(p("cos(t)").eval(0.0).unwrap(), 1.0);
        assert!((p("2/t^2").eval(1.0).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(p("1/t").eval(0.0), Err(EvalError::DivisionByZero { .. })));
        assert!(matches!(p("ln(t)").eval(-1.0), Err(EvalError::Domain { .. })));
        assert!(matches!(p("t^(1/2)").eval(-1.0), Err(EvalError::Domain { .. })));
        assert!((p("t^(1/3)").eval(-8.0).unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn derivative_examples() {
        let d = p("t^2").differentiate();
        assert!((d.eval(3.0).unwrap() - 6.0).abs() < 1e-15);
        let d = p("cos(t)").differentiate();
        assert_eq!(d.eval(0.0).unwrap(), 0.0);
        let e = p("-1/(2*t)");
        let d = e.differentiate();
        let h = 1e-5;
        let fd = (e.eval(2.0 + h).unwrap() - e.eval(2.0 - h).unwrap()) / (2.0 * h);
        assert!((d.eval(2.0).unwrap() - 1.0 / 8.0).abs() < 1e-14);
        assert!((d.eval(2.0).unwrap() - fd).abs() < 1e-9);
    }

    #[test]
    fn printing_is_minimal_and_faithful() {
        let src = "(4*25-1)/(4*t^2)-1";
        assert_eq!(p(src).to_string(), src);
        assert_eq!(p("-t^2+cos(2*t)/(t-1)").to_string(), "-t^2+cos(2*t)/(t-1)");
    }

    #[test]
    fn printing_round_trips_awkward_trees() {
        let trees = [
            Expr::Var - (Expr::Var - Expr::Const(1.0)),
            Expr::Var + (Expr::Var + Expr::Var),
            Expr::Var / (Expr::Var * Expr::Var),
            Expr::Var * -Expr::Var,
            (-Expr::Var).powi(2),
            Expr::Var.powi(2).powi(3),
            Expr::Var - Expr::Const(-3.0),
            Expr::Const(-2.0).pow(Rational64::new(-1, 3)),
            Expr::Const(1.5e-9) * Expr::Var,
        ];
        for e in trees {
            assert_eq!(p(&e.to_string()), e, "{e}");
        }
    }

    #[test]
    fn simplification_rules() {
        assert_eq!(p("t+0").simplify(), Expr::Var);
        assert_eq!(p("1*t*1").simplify(), Expr::Var);
        assert_eq!(p("t*0").simplify(), Expr::Const(0.0));
        assert_eq!(p("2*3+t^1").simplify(), Expr::Const(6.0) + Expr::Var);
        assert_eq!(p("--t").simplify(), Expr::Var);
    }

    #[test]
    fn singular_points_are_detected_eagerly() {
        assert_eq!(p("2/t^2").singular_points(), vec![0.0]);
        assert_eq!(p("(4*25-1)/(4*t^2)-1").singular_points(), vec![0.0]);
        assert_eq!(p("ln(t-1)+sqrt(2*t+4)").singular_points(), vec![-2.0, 1.0]);
        assert!(p("cos(t)+t^2").singular_points().is_empty());
        assert_eq!(p("(t-3)^(-1)").singular_points(), vec![3.0]);
    }

    #[test]
    fn coefficient_fn_carries_derivative() {
        let c = CoefficientFn::parse("1-25/t^2").unwrap();
        assert!((c.derivative(1.0).unwrap() - 50.0).abs() < 1e-12);
        assert_eq!(c.singular_points(), &[0.0]);
        assert_eq!(CoefficientFn::constant(4.0).as_constant(), Some(4.0));
    }
}
