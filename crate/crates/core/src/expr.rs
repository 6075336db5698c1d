//! Coefficient expressions.
//!
//! A small infix grammar covering the time-dependent coefficients of the
//! shipped scenarios:
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | var | func '(' expr ')' | '(' expr ')'
//! func    := sin | cos | ln | abs
//! ```
//!
//! Angles are radians. A [`TimeFunction`] admits only the variable `t`; a
//! [`StateExpr`] additionally admits `x`, `y`, `z` and the jump mark `u`.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Scan horizon used when a bound has to be found numerically.
pub const DEFAULT_SCAN_HORIZON: f64 = 1.0e4;
/// Number of grid points used with [`DEFAULT_SCAN_HORIZON`].
pub const DEFAULT_GRID_POINTS: usize = 200_001;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum EvalError {
    #[error("logarithm of non-positive argument {0}")]
    LogDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("time must be non-negative, got {0}")]
    NegativeTime(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    X,
    Y,
    Z,
    U,
}

impl Var {
    fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::X => "x",
            Var::Y => "y",
            Var::Z => "z",
            Var::U => "u",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Ln,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Ln => "ln",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "ln" => Some(Func::Ln),
            "abs" => Some(Func::Abs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

/// Expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Values bound to the grammar's variables during evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub u: f64,
}

impl Point {
    pub fn at_time(t: f64) -> Self {
        Point {
            t,
            ..Point::default()
        }
    }
}

impl Expr {
    pub fn eval(&self, p: &Point) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(v) => match v {
                Var::T => p.t,
                Var::X => p.x,
                Var::Y => p.y,
                Var::Z => p.z,
                Var::U => p.u,
            },
            Expr::Neg(e) => -e.eval(p)?,
            Expr::Bin(op, l, r) => {
                let a = l.eval(p)?;
                let b = r.eval(p)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Expr::Call(f, arg) => {
                let a = arg.eval(p)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Abs => a.abs(),
                    Func::Ln => {
                        if !(a > 0.0) {
                            return Err(EvalError::LogDomain(a));
                        }
                        a.ln()
                    }
                }
            }
        })
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) | Expr::Call(_, e) => e.uses(var),
            Expr::Bin(_, l, r) => l.uses(var) || r.uses(var),
        }
    }

    fn is_constant(&self) -> bool {
        [Var::T, Var::X, Var::Y, Var::Z, Var::U]
            .iter()
            .all(|v| !self.uses(*v))
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Bin(op, _, _) => op.precedence(),
            Expr::Neg(_) => 3,
            Expr::Num(_) | Expr::Var(_) | Expr::Call(_, _) => 4,
        }
    }

    fn write_operand(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Canonical infix form; parsing it back yields the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => f.write_str(v.name()),
            Expr::Neg(e) => {
                f.write_str("-")?;
                e.write_operand(f, e.precedence() < 3)
            }
            Expr::Call(func, arg) => write!(f, "{}({arg})", func.name()),
            Expr::Bin(op, l, r) => {
                let p = op.precedence();
                l.write_operand(f, l.precedence() < p)?;
                write!(f, "{}", op.symbol())?;
                r.write_operand(f, r.precedence() <= p)
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    allowed: &'a [Var],
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, allowed: &'a [Var]) -> Self {
        Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            allowed,
        }
    }

    fn error<T>(&self, position: usize, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            position,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Expr, ParseError> {
        if self.peek().is_none() {
            return self.error(self.pos, "empty expression");
        }
        let e = self.expr()?;
        if let Some(c) = self.peek() {
            return self.error(self.pos, format!("unexpected character '{}'", c as char));
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
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

    fn term(&mut self) -> Result<Expr, ParseError> {
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

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        match self.peek() {
            None => self.error(self.pos, "unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect_close(start)?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.identifier(),
            Some(c) => self.error(self.pos, format!("unexpected character '{}'", c as char)),
        }
    }

    fn expect_close(&mut self, open: usize) -> Result<(), ParseError> {
        if self.peek() == Some(b')') {
            self.pos += 1;
            Ok(())
        } else {
            self.error(self.pos, format!("unclosed '(' opened at byte {open}"))
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.bytes.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let exp_start = self.pos;
            digits(self);
            if self.pos == exp_start {
                self.pos = mark;
            }
        }
        let text = &self.src[start..self.pos];
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(Expr::Num(v)),
            _ => self.error(start, format!("malformed number '{text}'")),
        }
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if let Some(func) = Func::from_name(name) {
            if self.peek() != Some(b'(') {
                return self.error(self.pos, format!("expected '(' after {name}"));
            }
            let open = self.pos;
            self.pos += 1;
            let arg = self.expr()?;
            self.expect_close(open)?;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        let var = match name {
            "t" => Var::T,
            "x" => Var::X,
            "y" => Var::Y,
            "z" => Var::Z,
            "u" => Var::U,
            _ => return self.error(start, format!("unknown identifier '{name}'")),
        };
        if !self.allowed.contains(&var) {
            return self.error(start, format!("variable '{name}' is not allowed here"));
        }
        Ok(Expr::Var(var))
    }
}

/// Parses `text` admitting only the listed variables.
pub fn parse_with(text: &str, allowed: &[Var]) -> Result<Expr, ParseError> {
    Parser::new(text, allowed).parse()
}

/// A coefficient depending on time only.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFunction {
    ast: Expr,
    source: String,
}

impl TimeFunction {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(TimeFunction {
            ast: parse_with(text, &[Var::T])?,
            source: text.to_string(),
        })
    }

    pub fn constant(value: f64) -> Self {
        let ast = if value.is_sign_negative() && value != 0.0 {
            Expr::Neg(Box::new(Expr::Num(-value)))
        } else {
            Expr::Num(value)
        };
        TimeFunction {
            source: ast.to_string(),
            ast,
        }
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        if t < 0.0 {
            return Err(EvalError::NegativeTime(t));
        }
        self.ast.eval(&Point::at_time(t))
    }
}

impl FromStr for TimeFunction {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TimeFunction::parse(s)
    }
}

impl fmt::Display for TimeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}

/// A coefficient in `(t, x, y, z, u)`, used by custom models.
#[derive(Debug, Clone, PartialEq)]
pub struct StateExpr {
    ast: Expr,
}

impl StateExpr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(StateExpr {
            ast: parse_with(text, &[Var::T, Var::X, Var::Y, Var::Z, Var::U])?,
        })
    }

    pub fn zero() -> Self {
        StateExpr {
            ast: Expr::Num(0.0),
        }
    }

    pub fn ast(&self) -> &Expr {
        &self.ast
    }

    pub fn eval(&self, p: &Point) -> Result<f64, EvalError> {
        self.ast.eval(p)
    }

    /// Evaluates, mapping domain errors to NaN so callers on a hot path can
    /// detect them once through a finiteness check.
    pub fn eval_or_nan(&self, p: &Point) -> f64 {
        self.ast.eval(p).unwrap_or(f64::NAN)
    }

    pub fn uses(&self, var: Var) -> bool {
        self.ast.uses(var)
    }
}

impl fmt::Display for StateExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.ast.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundsMethod {
    Analytic,
    Grid,
}

/// Infimum and supremum of a coefficient over `[0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsPair {
    pub inf: f64,
    pub sup: f64,
    pub method: BoundsMethod,
}

impl BoundsPair {
    pub fn exact(inf: f64, sup: f64) -> Self {
        BoundsPair {
            inf,
            sup,
            method: BoundsMethod::Analytic,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::exact(value, value)
    }
}

/// `c + Σ (a_k sin(ω_k t) + b_k cos(ω_k t))`
#[derive(Debug, Clone, Default)]
struct TrigSum {
    constant: f64,
    // (ω > 0, sin coefficient, cos coefficient)
    terms: Vec<(f64, f64, f64)>,
}

impl TrigSum {
    fn constant(c: f64) -> Self {
        TrigSum {
            constant: c,
            terms: Vec::new(),
        }
    }

    fn scale(mut self, k: f64) -> Self {
        self.constant *= k;
        for term in &mut self.terms {
            term.1 *= k;
            term.2 *= k;
        }
        self
    }

    fn add(mut self, other: TrigSum) -> Self {
        self.constant += other.constant;
        for (w, s, c) in other.terms {
            match self.terms.iter_mut().find(|term| term.0 == w) {
                Some(term) => {
                    term.1 += s;
                    term.2 += c;
                }
                None => self.terms.push((w, s, c)),
            }
        }
        self
    }

    fn as_constant(&self) -> Option<f64> {
        self.terms.is_empty().then_some(self.constant)
    }
}

/// Recognizes `k*t`, `t*k`, `t/k`, `t` and returns the frequency `k`.
fn linear_in_t(e: &Expr) -> Option<f64> {
    match e {
        Expr::Var(Var::T) => Some(1.0),
        Expr::Neg(inner) => linear_in_t(inner).map(|w| -w),
        Expr::Bin(BinOp::Mul, l, r) => {
            if l.is_constant() {
                Some(l.eval(&Point::default()).ok()? * linear_in_t(r)?)
            } else if r.is_constant() {
                Some(linear_in_t(l)? * r.eval(&Point::default()).ok()?)
            } else {
                None
            }
        }
        Expr::Bin(BinOp::Div, l, r) if r.is_constant() => {
            let d = r.eval(&Point::default()).ok()?;
            (d != 0.0).then(|| linear_in_t(l).map(|w| w / d))?
        }
        _ => None,
    }
}

fn trig_sum(e: &Expr) -> Option<TrigSum> {
    if e.is_constant() {
        return e.eval(&Point::default()).ok().map(TrigSum::constant);
    }
    match e {
        Expr::Neg(inner) => Some(trig_sum(inner)?.scale(-1.0)),
        Expr::Bin(BinOp::Add, l, r) => Some(trig_sum(l)?.add(trig_sum(r)?)),
        Expr::Bin(BinOp::Sub, l, r) => Some(trig_sum(l)?.add(trig_sum(r)?.scale(-1.0))),
        Expr::Bin(BinOp::Mul, l, r) => {
            let (a, b) = (trig_sum(l)?, trig_sum(r)?);
            match (a.as_constant(), b.as_constant()) {
                (Some(k), _) => Some(b.scale(k)),
                (_, Some(k)) => Some(a.scale(k)),
                _ => None,
            }
        }
        Expr::Bin(BinOp::Div, l, r) => {
            let k = trig_sum(r)?.as_constant()?;
            (k != 0.0).then(|| trig_sum(l).map(|a| a.scale(1.0 / k)))?
        }
        Expr::Call(func @ (Func::Sin | Func::Cos), arg) => {
            let w = linear_in_t(arg)?;
            if w == 0.0 {
                let v = if *func == Func::Sin { 0.0 } else { 1.0 };
                return Some(TrigSum::constant(v));
            }
            // sin(-wt) = -sin(wt), cos(-wt) = cos(wt)
            let (w, sign) = if w < 0.0 { (-w, -1.0) } else { (w, 1.0) };
            let term = match func {
                Func::Sin => (w, sign, 0.0),
                _ => (w, 0.0, 1.0),
            };
            Some(TrigSum {
                constant: 0.0,
                terms: vec![term],
            })
        }
        _ => None,
    }
}

/// Exact bounds for constants and single-frequency affine trigonometric forms.
pub fn analytic_bounds(f: &TimeFunction) -> Option<BoundsPair> {
    let sum = trig_sum(f.ast())?;
    match sum.terms.as_slice() {
        [] => Some(BoundsPair::constant(sum.constant)),
        [(_, s, c)] => {
            // a ± b√2 is written out so the a + b(sin t + cos t) case is exact
            let amplitude = if s.abs() == c.abs() {
                s.abs() * SQRT_2
            } else {
                s.hypot(*c)
            };
            Some(BoundsPair::exact(
                sum.constant - amplitude,
                sum.constant + amplitude,
            ))
        }
        _ => None,
    }
}

/// Min/max over an even grid on `[0, horizon]`.
pub fn grid_bounds(
    f: &TimeFunction,
    horizon: f64,
    grid_points: usize,
) -> Result<BoundsPair, EvalError> {
    let n = grid_points.max(2);
    let mut inf = f64::INFINITY;
    let mut sup = f64::NEG_INFINITY;
    for i in 0..n {
        let v = f.eval(horizon * i as f64 / (n - 1) as f64)?;
        inf = inf.min(v);
        sup = sup.max(v);
    }
    Ok(BoundsPair {
        inf,
        sup,
        method: BoundsMethod::Grid,
    })
}

/// Infimum and supremum of `f` over `[0, ∞)`.
///
/// Recognized forms are bounded exactly. Anything else is scanned on a grid
/// over `[0, scan_horizon]` and additionally probed at `scan_horizon·10^k`,
/// `k = 1..=8`, so monotone saturating terms such as `t/(1+t)` report their
/// limit to within the probe's distance from it. Grid bounds are inner
/// bounds: `inf` can only overestimate and `sup` underestimate.
pub fn bounds(
    f: &TimeFunction,
    scan_horizon: f64,
    grid_points: usize,
) -> Result<BoundsPair, EvalError> {
    if let Some(b) = analytic_bounds(f) {
        return Ok(b);
    }
    let mut b = grid_bounds(f, scan_horizon, grid_points)?;
    let mut probe = scan_horizon;
    for _ in 0..8 {
        probe *= 10.0;
        let v = f.eval(probe)?;
        b.inf = b.inf.min(v);
        b.sup = b.sup.max(v);
    }
    Ok(b)
}

/// [`bounds`] with the default horizon and resolution.
pub fn default_bounds(f: &TimeFunction) -> Result<BoundsPair, EvalError> {
    bounds(f, DEFAULT_SCAN_HORIZON, DEFAULT_GRID_POINTS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn tf(s: &str) -> TimeFunction {
        TimeFunction::parse(s).unwrap()
    }

    #[test]
    fn evaluates_table_examples() {
        assert_eq!(tf("0.3+0.1*sin(4*t)").eval(0.0).unwrap(), 0.3);
        assert_eq!(tf("1+t/(1+t)").eval(1.0).unwrap(), 1.5);
        let xi = tf("1+ln(1+abs(sin(t)))").eval(FRAC_PI_2).unwrap();
        assert!((xi - (1.0 + 2f64.ln())).abs() < 1e-15);
        assert!((tf("0.8+0.04*cos(7*t)").eval(0.0).unwrap() - 0.84).abs() < 1e-15);
        assert_eq!(tf("5").eval(123.4).unwrap(), 5.0);
        let eps = tf("0.15+0.07*sin(t)").eval(3.0 * PI / 2.0).unwrap();
        assert!((eps - 0.08).abs() < 1e-15);
    }

    #[test]
    fn whitespace_is_insignificant() {
        let a = tf(" 0.3 + 0.1 * sin ( 4 * t ) ");
        let b = tf("0.3+0.1*sin(4*t)");
        assert_eq!(a.ast(), b.ast());
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = TimeFunction::parse("1+*t").unwrap_err();
        assert_eq!(err.position, 2);
        let err = TimeFunction::parse("sin(t").unwrap_err();
        assert_eq!(err.position, 5);
        assert!(TimeFunction::parse("").is_err());
        assert!(TimeFunction::parse("1 2").is_err());
        assert!(TimeFunction::parse("exp(t)").is_err());
        assert!(TimeFunction::parse("t^2").is_err());
        // state variables are not admitted in time functions
        assert_eq!(TimeFunction::parse("1+x").unwrap_err().position, 2);
        assert!(StateExpr::parse("1+x*y-u").is_ok());
    }

    #[test]
    fn domain_errors_surface_at_eval() {
        assert_eq!(tf("1/(t-1)").eval(1.0), Err(EvalError::DivisionByZero));
        assert!(matches!(
            tf("ln(t)").eval(0.0),
            Err(EvalError::LogDomain(_))
        ));
        assert!(matches!(
            tf("t").eval(-1.0),
            Err(EvalError::NegativeTime(_))
        ));
    }

    #[test]
    fn unary_minus_and_precedence() {
        assert_eq!(tf("-2*3").eval(0.0).unwrap(), -6.0);
        assert_eq!(tf("2--3").eval(0.0).unwrap(), 5.0);
        assert_eq!(tf("8/4/2").eval(0.0).unwrap(), 1.0);
        assert_eq!(tf("8-4-2").eval(0.0).unwrap(), 2.0);
        assert_eq!(tf("2*(3+4)").eval(0.0).unwrap(), 14.0);
        assert_eq!(tf("1e-3*2").eval(0.0).unwrap(), 0.002);
    }

    #[test]
    fn canonical_form_reparses_to_same_tree() {
        for s in [
            "0.141+0.02*(sin(t)+cos(t))",
            "8-(4-2)",
            "8/(4/2)",
            "-(1+t)*2",
            "1+ln(1+abs(sin(t)))",
            "--t",
            "2*-t",
        ] {
            let f = tf(s);
            let again = tf(&f.to_string());
            assert_eq!(f.ast(), again.ast(), "{s} -> {f}");
        }
        assert_eq!(tf("1 + t/(1+t)").to_string(), "1+t/(1+t)");
    }

    #[test]
    fn analytic_bounds_of_table_forms() {
        let b = default_bounds(&tf("0.141+0.02*(sin(t)+cos(t))")).unwrap();
        assert_eq!(b.method, BoundsMethod::Analytic);
        assert_eq!(b.inf, 0.141 - 0.02 * SQRT_2);
        assert_eq!(b.sup, 0.141 + 0.02 * SQRT_2);

        let b = default_bounds(&tf("0.01")).unwrap();
        assert_eq!((b.inf, b.sup), (0.01, 0.01));

        let b = default_bounds(&tf("0.8+0.04*cos(7*t)")).unwrap();
        assert_eq!(b.method, BoundsMethod::Analytic);
        assert!((b.inf - 0.76).abs() < 1e-15 && (b.sup - 0.84).abs() < 1e-15);

        let b = default_bounds(&tf("0.3-0.1*sin(-4*t)")).unwrap();
        assert!((b.inf - 0.2).abs() < 1e-15 && (b.sup - 0.4).abs() < 1e-15);
    }

    #[test]
    fn mixed_frequencies_fall_back_to_grid() {
        let b = default_bounds(&tf("sin(t)+sin(2*t)")).unwrap();
        assert_eq!(b.method, BoundsMethod::Grid);
        assert!(b.inf <= b.sup);
    }

    #[test]
    fn saturating_term_reports_limit() {
        let f = tf("1+t/(1+t)");
        let b = bounds(&f, 1.0e4, 10_001).unwrap();
        assert_eq!(b.method, BoundsMethod::Grid);
        assert_eq!(b.inf, 1.0);
        assert!(b.sup >= 1.999 && b.sup <= 2.0);
        let plain = grid_bounds(&f, 1.0e4, 10_001).unwrap();
        assert!(plain.sup >= 1.999);
    }

    #[test]
    fn grid_agrees_with_analytic_over_one_period() {
        for (s, period) in [
            ("0.3+0.1*sin(4*t)", PI / 2.0),
            ("0.8+0.04*cos(7*t)", 2.0 * PI / 7.0),
            ("0.12+0.01*(sin(t)+cos(t))", 2.0 * PI),
            ("0.5+0.06*sin(t)", 2.0 * PI),
        ] {
            let f = tf(s);
            let a = analytic_bounds(&f).unwrap();
            let g = grid_bounds(&f, period, 10_001).unwrap();
            assert!((a.inf - g.inf).abs() < 1e-6, "{s}");
            assert!((a.sup - g.sup).abs() < 1e-6, "{s}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_expr() -> impl Strategy<Value = Expr> {
            let leaf = prop_oneof![
                (0u32..1000).prop_map(|n| Expr::Num(n as f64 / 8.0)),
                Just(Expr::Var(Var::T)),
            ];
            leaf.prop_recursive(4, 32, 2, |inner| {
                prop_oneof![
                    inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                    (
                        prop_oneof![
                            Just(BinOp::Add),
                            Just(BinOp::Sub),
                            Just(BinOp::Mul),
                            Just(BinOp::Div)
                        ],
                        inner.clone(),
                        inner.clone()
                    )
                        .prop_map(|(op, l, r)| Expr::Bin(
                            op,
                            Box::new(l),
                            Box::new(r)
                        )),
                    (
                        prop_oneof![
                            Just(Func::Sin),
                            Just(Func::Cos),
                            Just(Func::Abs),
                            Just(Func::Ln)
                        ],
                        inner
                    )
                        .prop_map(|(f, e)| Expr::Call(f, Box::new(e))),
                ]
            })
        }

        proptest! {
            #[test]
            fn serialize_then_parse_is_identity(e in arb_expr()) {
                let text = e.to_string();
                let back = parse_with(&text, &[Var::T]).unwrap();
                prop_assert_eq!(back, e);
            }

            #[test]
            fn eval_is_bit_reproducible(e in arb_expr(), t in 0.0f64..100.0) {
                let p = Point::at_time(t);
                let a = e.eval(&p).map(f64::to_bits);
                let b = e.eval(&p).map(f64::to_bits);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn analytic_bounds_contain_samples(
                a in -2.0f64..2.0, b in -1.0f64..1.0, w in 0.1f64..20.0, t in 0.0f64..1e3
            ) {
                let f = TimeFunction::parse(&format!("{a}+{b}*sin({w}*t)")).unwrap();
                let bp = analytic_bounds(&f).unwrap();
                let v = f.eval(t).unwrap();
                prop_assert!(bp.inf <= bp.sup);
                prop_assert!(v >= bp.inf - 1e-12 && v <= bp.sup + 1e-12);
            }
        }
    }
}
