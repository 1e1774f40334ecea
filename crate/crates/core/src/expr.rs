//! Scalar expression DSL used for every user-supplied coefficient function.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?            -- right-associative
//! atom   := number | 'pi' | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! so `^` binds tighter than unary minus (`-x^2` is `-(x^2)`), which binds
//! tighter than `*` and `/`, which bind tighter than `+` and `-`.
//!
//! Supported functions: `sin`, `cos`, `exp`, `sqrt`, `atan2`. Evaluation is
//! strict about domains: `sqrt` of a negative number, division by zero, and
//! any non-finite intermediate raise [`Error::Domain`].

use std::collections::BTreeSet;
use std::fmt;

use crate::{Error, Result};

/// Binary operators of the DSL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Built-in functions of the DSL.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Atan2,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Atan2 => "atan2",
        }
    }

    fn arity(self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "atan2" => Some(Func::Atan2),
            _ => None,
        }
    }
}

/// Abstract syntax tree of a scalar expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn num(v: f64) -> Expr {
        Expr::Num(v)
    }

    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Add, Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Sub, Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Expr) -> Expr {
        Expr::Bin(BinOp::Mul, Box::new(self), Box::new(rhs))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn neg(self) -> Expr {
        Expr::Neg(Box::new(self))
    }

    /// Set of variable names the expression reads.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) | Expr::Pi => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(inner) => inner.collect_vars(out),
            Expr::Bin(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Call(_, args) => {
                for a in args {
                    a.collect_vars(out);
                }
            }
        }
    }

    /// Replace every occurrence of the variable `name` by `replacement`.
    ///
    /// Used to reparametrize paths (`t -> t^2`, `t -> 1 - t`) without
    /// touching the numerical layer.
    pub fn substitute(&self, name: &str, replacement: &Expr) -> Expr {
        match self {
            Expr::Num(_) | Expr::Pi => self.clone(),
            Expr::Var(v) => {
                if v == name {
                    replacement.clone()
                } else {
                    self.clone()
                }
            }
            Expr::Neg(inner) => Expr::Neg(Box::new(inner.substitute(name, replacement))),
            Expr::Bin(op, l, r) => Expr::Bin(
                *op,
                Box::new(l.substitute(name, replacement)),
                Box::new(r.substitute(name, replacement)),
            ),
            Expr::Call(f, args) => Expr::Call(
                *f,
                args.iter().map(|a| a.substitute(name, replacement)).collect(),
            ),
        }
    }
}

/// Variable bindings for evaluation.
///
/// Backed by a flat vector: the environments in this crate stay small (chart
/// coordinates, a time parameter, and the entries of one group matrix), and
/// a linear scan beats hashing at that size.
#[derive(Debug, Clone, Default)]
pub struct Env {
    vars: Vec<(String, f64)>,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    /// Bind `name` to `value`, overwriting an existing binding.
    pub fn set(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        let name = name.into();
        if let Some(slot) = self.vars.iter_mut().find(|(n, _)| *n == name) {
            slot.1 = value;
        } else {
            self.vars.push((name, value));
        }
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

impl<S: Into<String> + Clone> From<&[(S, f64)]> for Env {
    fn from(pairs: &[(S, f64)]) -> Env {
        let mut env = Env::new();
        for (name, value) in pairs {
            env.set(name.clone(), *value);
        }
        env
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

/// Parse a source string into an [`Expr`].
pub fn parse(src: &str) -> Result<Expr> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    let expr = p.parse_expr()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(Error::Syntax {
            offset: p.pos,
            message: format!("unexpected `{}`", p.peek_char()),
        });
    }
    Ok(expr)
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_char(&self) -> char {
        self.peek().map(char::from).unwrap_or('\u{2400}')
    }

    fn eat(&mut self, byte: u8) -> bool {
        if self.peek() == Some(byte) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn parse_expr(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<Expr> {
        let mut lhs = self.parse_unary()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.parse_unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_unary(&mut self) -> Result<Expr> {
        self.skip_ws();
        if self.eat(b'-') {
            let inner = self.parse_unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.parse_power()
    }

    fn parse_power(&mut self) -> Result<Expr> {
        let base = self.parse_atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            // The exponent re-enters at unary level, so `x^-2` parses and
            // `x^y^z` associates to the right.
            let exp = self.parse_unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.peek() {
            None => Err(Error::Syntax {
                offset: self.pos,
                message: "expected operand, found end of input".into(),
            }),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.parse_expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(Error::Syntax {
                        offset: self.pos,
                        message: "expected `)`".into(),
                    });
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() => self.parse_number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.parse_ident(),
            Some(_) => Err(Error::Syntax {
                offset: self.pos,
                message: format!("expected operand, found `{}`", self.peek_char()),
            }),
        }
    }

    fn parse_number(&mut self) -> Result<Expr> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.eat(b'.') {
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // Not an exponent after all (e.g. `2*exp(x)` scanning `2`).
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse::<f64>().map(Expr::Num).map_err(|_| Error::Syntax {
            offset: start,
            message: format!("invalid number `{text}`"),
        })
    }

    fn parse_ident(&mut self) -> Result<Expr> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii")
            .to_string();
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let func = Func::from_name(&name).ok_or(Error::UnknownFunction(name.clone()))?;
            self.pos += 1;
            let mut args = vec![self.parse_expr()?];
            loop {
                self.skip_ws();
                if self.eat(b',') {
                    args.push(self.parse_expr()?);
                } else {
                    break;
                }
            }
            if !self.eat(b')') {
                return Err(Error::Syntax {
                    offset: self.pos,
                    message: "expected `)` after function arguments".into(),
                });
            }
            if args.len() != func.arity() {
                return Err(Error::Arity {
                    name: func.name().into(),
                    expected: func.arity(),
                    got: args.len(),
                });
            }
            Ok(Expr::Call(func, args))
        } else if name == "pi" {
            Ok(Expr::Pi)
        } else {
            Ok(Expr::Var(name))
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Evaluate `expr` under the bindings in `env`.
pub fn eval(expr: &Expr, env: &Env) -> Result<f64> {
    let value = eval_inner(expr, env)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain(format!(
            "expression produced a non-finite value ({value})"
        )))
    }
}

fn eval_inner(expr: &Expr, env: &Env) -> Result<f64> {
    match expr {
        Expr::Num(v) => Ok(*v),
        Expr::Pi => Ok(std::f64::consts::PI),
        Expr::Var(name) => env
            .get(name)
            .ok_or_else(|| Error::UndefinedVariable(name.clone())),
        Expr::Neg(inner) => Ok(-eval_inner(inner, env)?),
        Expr::Bin(op, l, r) => {
            let a = eval_inner(l, env)?;
            let b = eval_inner(r, env)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => Ok(a * b),
                BinOp::Div => {
                    if b == 0.0 {
                        Err(Error::Domain("division by zero".into()))
                    } else {
                        Ok(a / b)
                    }
                }
                BinOp::Pow => {
                    let v = a.powf(b);
                    if v.is_nan() {
                        Err(Error::Domain(format!("{a} raised to {b} is undefined")))
                    } else {
                        Ok(v)
                    }
                }
            }
        }
        Expr::Call(func, args) => {
            let a = eval_inner(&args[0], env)?;
            match func {
                Func::Sin => Ok(a.sin()),
                Func::Cos => Ok(a.cos()),
                Func::Exp => Ok(a.exp()),
                Func::Sqrt => {
                    if a < 0.0 {
                        Err(Error::Domain(format!("sqrt of negative number {a}")))
                    } else {
                        Ok(a.sqrt())
                    }
                }
                Func::Atan2 => {
                    let b = eval_inner(&args[1], env)?;
                    Ok(a.atan2(b))
                }
            }
        }
    }
}

/// Default step used by [`fd_diff`].
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference derivative of `expr` with respect to `var` at `env`.
pub fn fd_diff(expr: &Expr, var: &str, env: &Env, h: f64) -> Result<f64> {
    let base = env.get(var).unwrap_or(0.0);
    let mut plus = env.clone();
    plus.set(var, base + h);
    let mut minus = env.clone();
    minus.set(var, base - h);
    Ok((eval(expr, &plus)? - eval(expr, &minus)?) / (2.0 * h))
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn precedence(expr: &Expr) -> u8 {
    match expr {
        Expr::Bin(BinOp::Add, _, _) | Expr::Bin(BinOp::Sub, _, _) => 1,
        Expr::Bin(BinOp::Mul, _, _) | Expr::Bin(BinOp::Div, _, _) => 2,
        Expr::Neg(_) => 3,
        Expr::Num(v) if *v < 0.0 => 3, // renders with a leading minus
        Expr::Bin(BinOp::Pow, _, _) => 4,
        _ => 5,
    }
}

fn write_prec(f: &mut fmt::Formatter<'_>, expr: &Expr, min: u8) -> fmt::Result {
    if precedence(expr) < min {
        write!(f, "(")?;
        write_expr(f, expr)?;
        write!(f, ")")
    } else {
        write_expr(f, expr)
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, expr: &Expr) -> fmt::Result {
    match expr {
        Expr::Num(v) => write!(f, "{v:?}"),
        Expr::Pi => write!(f, "pi"),
        Expr::Var(name) => write!(f, "{name}"),
        Expr::Neg(inner) => {
            write!(f, "-")?;
            write_prec(f, inner, 3)
        }
        Expr::Bin(op, l, r) => {
            let (sym, prec) = match op {
                BinOp::Add => ("+", 1),
                BinOp::Sub => ("-", 1),
                BinOp::Mul => ("*", 2),
                BinOp::Div => ("/", 2),
                BinOp::Pow => ("^", 4),
            };
            match op {
                // Left-associative: the right operand needs strictly higher
                // binding to survive a round trip (a - (b - c), a / (b * c)).
                BinOp::Add | BinOp::Sub | BinOp::Mul | BinOp::Div => {
                    write_prec(f, l, prec)?;
                    write!(f, " {sym} ")?;
                    write_prec(f, r, prec + 1)
                }
                // Right-associative, exponent re-enters at unary level.
                BinOp::Pow => {
                    write_prec(f, l, 5)?;
                    write!(f, "{sym}")?;
                    write_prec(f, r, 3)
                }
            }
        }
        Expr::Call(func, args) => {
            write!(f, "{}(", func.name())?;
            for (i, arg) in args.iter().enumerate() {
                if i > 0 {
                    write!(f, ", ")?;
                }
                write_expr(f, arg)?;
            }
            write!(f, ")")
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env(pairs: &[(&str, f64)]) -> Env {
        Env::from(pairs)
    }

    #[test]
    fn evaluates_product_plus_constant() {
        let e = parse("x*y + 1").unwrap();
        let v = eval(&e, &env(&[("x", 2.0), ("y", 3.0)])).unwrap();
        assert_eq!(v, 7.0);
    }

    #[test]
    fn evaluates_trig_with_pi() {
        let e = parse("sin(pi/2)").unwrap();
        let v = eval(&e, &Env::new()).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dangling_operator_reports_byte_offset() {
        match parse("x +") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn negative_base_even_power() {
        let e = parse("x^2").unwrap();
        let v = eval(&e, &env(&[("x", -3.0)])).unwrap();
        assert_eq!(v, 9.0);
    }

    #[test]
    fn atan2_two_arguments() {
        let e = parse("atan2(1, 1)").unwrap();
        let v = eval(&e, &Env::new()).unwrap();
        assert!((v - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        let e = parse("sqrt(-1)").unwrap();
        assert!(matches!(eval(&e, &Env::new()), Err(Error::Domain(_))));
    }

    #[test]
    fn division_by_zero_is_domain_error() {
        let e = parse("1/x").unwrap();
        assert!(matches!(
            eval(&e, &env(&[("x", 0.0)])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unknown_function_is_reported_by_name() {
        match parse("sinh(1)") {
            Err(Error::UnknownFunction(name)) => assert_eq!(name, "sinh"),
            other => panic!("expected unknown function, got {other:?}"),
        }
    }

    #[test]
    fn undefined_variable_is_reported_by_name() {
        let e = parse("x + q").unwrap();
        match eval(&e, &env(&[("x", 1.0)])) {
            Err(Error::UndefinedVariable(name)) => assert_eq!(name, "q"),
            other => panic!("expected undefined variable, got {other:?}"),
        }
    }

    #[test]
    fn central_difference_of_square() {
        let e = parse("x^2").unwrap();
        let d = fd_diff(&e, "x", &env(&[("x", 3.0)]), DEFAULT_FD_STEP).unwrap();
        assert!((d - 6.0).abs() < 1e-6, "fd_diff gave {d}");
    }

    #[test]
    fn precedence_matches_declared_order() {
        // ^ over unary minus over * over +.
        let cases = [
            ("-x^2", -9.0, &[("x", 3.0)][..]),
            ("-x*y", -6.0, &[("x", 2.0), ("y", 3.0)][..]),
            ("2^3^2", 512.0, &[][..]),
            ("2 + 3 * 4", 14.0, &[][..]),
            ("2 - 3 - 4", -5.0, &[][..]),
            ("16 / 4 / 2", 2.0, &[][..]),
            ("x^-2", 0.25, &[("x", 2.0)][..]),
        ];
        for (src, expected, bindings) in cases {
            let e = parse(src).unwrap();
            let v = eval(&e, &env(bindings)).unwrap();
            assert_eq!(v, expected, "{src}");
        }
    }

    #[test]
    fn substitute_reparametrizes() {
        let e = parse("sin(t) + t^2").unwrap();
        let sq = parse("t^2").unwrap();
        let reparam = e.substitute("t", &sq);
        let a = eval(&reparam, &env(&[("t", 0.7)])).unwrap();
        let b = eval(&e, &env(&[("t", 0.49)])).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn collects_variables() {
        let e = parse("x*y + sin(z) - x").unwrap();
        let vars: Vec<_> = e.variables().into_iter().collect();
        assert_eq!(vars, ["x", "y", "z"]);
    }

    // -- randomized round trip --------------------------------------------

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            (-10.0..10.0f64).prop_map(Expr::Num),
            Just(Expr::Pi),
            prop_oneof![Just("x"), Just("y"), Just("z")].prop_map(Expr::var),
        ];
        leaf.prop_recursive(4, 32, 3, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.add(b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.sub(b)),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| a.mul(b)),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Bin(BinOp::Div, Box::new(a), Box::new(b))),
                (inner.clone(), (0u8..4).prop_map(|k| Expr::Num(k as f64)))
                    .prop_map(|(a, b)| Expr::Bin(BinOp::Pow, Box::new(a), Box::new(b))),
                inner.clone().prop_map(Expr::neg),
                inner.clone().prop_map(|a| Expr::Call(Func::Sin, vec![a])),
                inner.clone().prop_map(|a| Expr::Call(Func::Cos, vec![a])),
                (inner.clone(), inner.clone())
                    .prop_map(|(a, b)| Expr::Call(Func::Atan2, vec![a, b])),
            ]
        })
    }

    proptest! {
        /// Rendering and reparsing preserves the evaluated value everywhere
        /// the original expression is defined.
        #[test]
        fn render_parse_round_trip(e in arb_expr(), x in -3.0..3.0f64, y in -3.0..3.0f64, z in -3.0..3.0f64) {
            let rendered = e.to_string();
            let reparsed = parse(&rendered)
                .unwrap_or_else(|err| panic!("failed to reparse `{rendered}`: {err}"));
            let bindings = env(&[("x", x), ("y", y), ("z", z)]);
            match (eval(&e, &bindings), eval(&reparsed, &bindings)) {
                (Ok(a), Ok(b)) => {
                    prop_assert!(
                        (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                        "`{rendered}`: {a} vs {b}"
                    );
                }
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "`{rendered}`: {a:?} vs {b:?}"),
            }
        }
    }
}
