//! Coefficient expressions in the variable `t`.
//!
//! Supports `+ - * /`, unary minus, integer powers `^`, the functions
//! `sin cos exp ln sqrt`, real literals and complex literals `(re, im)`.
//! The Unicode minus sign is accepted wherever `-` is. Values and first
//! derivatives are evaluated together in forward mode.

use std::fmt;

use crate::error::{Error, Result};
use crate::gridfn::{node, ScalarFn};
use crate::linalg::{C64, ONE, ZERO};

pub const MAX_INPUT_BYTES: usize = 64 * 1024;
const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
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

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Complex(Box<Expr>, Box<Expr>),
    T,
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

pub fn parse(text: &str) -> Result<Expr> {
    if text.len() > MAX_INPUT_BYTES {
        return Err(Error::InvalidInput(format!(
            "expression is {} bytes, limit is {MAX_INPUT_BYTES}",
            text.len()
        )));
    }
    let mut p = Parser { src: text, pos: 0, depth: 0 };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < text.len() {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    depth: usize,
}

impl Parser<'_> {
    fn syntax(&self, message: &str) -> Error {
        Error::Syntax { offset: self.pos, message: message.to_string() }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn peek(&mut self) -> Option<char> {
        self.skip_ws();
        self.rest().chars().next()
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn eat_minus(&mut self) -> bool {
        self.eat('-') || self.eat('\u{2212}')
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.syntax(&format!("expected `{c}`")))
        }
    }

    fn enter(&mut self) -> Result<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.syntax("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat_minus() {
                BinOp::Sub
            } else {
                break;
            };
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                break;
            };
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    // `^` binds tighter than unary minus, so `-t^2` is `-(t^2)`.
    fn unary(&mut self) -> Result<Expr> {
        if self.eat_minus() {
            self.enter()?;
            let inner = self.unary()?;
            self.depth -= 1;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        let base = self.atom()?;
        if self.eat('^') {
            let k = self.exponent()?;
            return Ok(Expr::Pow(Box::new(base), k));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<i32> {
        let negative = self.eat_minus();
        self.skip_ws();
        let start = self.pos;
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(self.syntax("exponent must be an integer literal"));
        }
        self.pos += digits;
        let k: i32 = self.src[start..self.pos]
            .parse()
            .map_err(|_| Error::Syntax { offset: start, message: "exponent out of range".into() })?;
        let k = if negative { -k } else { k };
        if self.eat('^') {
            let inner = self.exponent()?;
            if inner < 0 {
                return Err(self.syntax("nested exponent must be nonnegative"));
            }
            return u32::try_from(inner)
                .ok()
                .and_then(|e| k.checked_pow(e))
                .ok_or_else(|| self.syntax("exponent out of range"));
        }
        Ok(k)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek() {
            Some('(') => {
                self.pos += 1;
                let first = self.expr()?;
                if self.eat(',') {
                    let second = self.expr()?;
                    self.expect(')')?;
                    return Ok(Expr::Complex(Box::new(first), Box::new(second)));
                }
                self.expect(')')?;
                Ok(first)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let start = self.pos;
                let len = self
                    .rest()
                    .bytes()
                    .take_while(|b| b.is_ascii_alphanumeric() || *b == b'_')
                    .count();
                self.pos += len;
                let name = &self.src[start..self.pos];
                if name == "t" {
                    return Ok(Expr::T);
                }
                let Some(f) = Func::from_name(name) else {
                    return Err(Error::UnknownIdentifier { name: name.to_string(), offset: start });
                };
                self.expect('(')?;
                let arg = self.expr()?;
                self.expect(')')?;
                Ok(Expr::Call(f, Box::new(arg)))
            }
            Some(_) => Err(self.syntax("expected a number, `t`, a function call or `(`")),
            None => Err(self.syntax("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr> {
        let start = self.pos;
        let bytes = self.src.as_bytes();
        let mut i = self.pos;
        let digits = |i: &mut usize| {
            let s = *i;
            while *i < bytes.len() && bytes[*i].is_ascii_digit() {
                *i += 1;
            }
            *i - s
        };
        let mut count = digits(&mut i);
        if i < bytes.len() && bytes[i] == b'.' {
            i += 1;
            count += digits(&mut i);
        }
        if count == 0 {
            return Err(self.syntax("malformed number"));
        }
        if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
            let mut j = i + 1;
            if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                j += 1;
            }
            if digits(&mut j) == 0 {
                self.pos = j;
                return Err(self.syntax("malformed exponent in number"));
            }
            i = j;
        }
        self.pos = i;
        let v: f64 = self.src[start..i]
            .parse()
            .map_err(|_| Error::Syntax { offset: start, message: "malformed number".into() })?;
        if !v.is_finite() {
            return Err(Error::Syntax { offset: start, message: "number out of range".into() });
        }
        Ok(Expr::Num(v))
    }
}

/// Canonical, fully parenthesized form; parsing it gives back the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Complex(a, b) => write!(f, "({a}, {b})"),
            Expr::T => f.write_str("t"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Pow(a, k) => write!(f, "({a}^{k})"),
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

fn is_real(z: C64) -> bool {
    z.im == 0.0
}

impl Expr {
    pub fn eval(&self, t: f64) -> Result<C64> {
        Ok(self.eval_dual(t)?.0)
    }

    pub fn eval_deriv(&self, t: f64) -> Result<C64> {
        Ok(self.eval_dual(t)?.1)
    }

    /// Value and derivative with respect to `t`.
    pub fn eval_dual(&self, t: f64) -> Result<(C64, C64)> {
        let out = match self {
            Expr::Num(v) => (C64::new(*v, 0.0), ZERO),
            Expr::T => (C64::new(t, 0.0), ONE),
            Expr::Complex(a, b) => {
                let (ar, ad) = a.eval_dual(t)?;
                let (br, bd) = b.eval_dual(t)?;
                (ar + C64::i() * br, ad + C64::i() * bd)
            }
            Expr::Neg(a) => {
                let (v, d) = a.eval_dual(t)?;
                (-v, -d)
            }
            Expr::Bin(op, a, b) => {
                let (u, du) = a.eval_dual(t)?;
                let (v, dv) = b.eval_dual(t)?;
                match op {
                    BinOp::Add => (u + v, du + dv),
                    BinOp::Sub => (u - v, du - dv),
                    BinOp::Mul => (u * v, du * v + u * dv),
                    BinOp::Div => {
                        if v == ZERO {
                            return Err(Error::Domain(format!("division by zero at t = {t}")));
                        }
                        (u / v, (du * v - u * dv) / (v * v))
                    }
                }
            }
            Expr::Pow(a, k) => {
                let (u, du) = a.eval_dual(t)?;
                match *k {
                    0 => (ONE, ZERO),
                    k if k < 0 && u == ZERO => {
                        return Err(Error::Domain(format!("negative power of zero at t = {t}")));
                    }
                    k => (u.powi(k), C64::from(k as f64) * u.powi(k - 1) * du),
                }
            }
            Expr::Call(func, a) => {
                let (u, du) = a.eval_dual(t)?;
                match func {
                    Func::Sin => (u.sin(), u.cos() * du),
                    Func::Cos => (u.cos(), -u.sin() * du),
                    Func::Exp => {
                        let e = u.exp();
                        (e, e * du)
                    }
                    Func::Ln => {
                        if u == ZERO || (is_real(u) && u.re <= 0.0) {
                            return Err(Error::Domain(format!("ln of nonpositive value {} at t = {t}", u.re)));
                        }
                        (u.ln(), du / u)
                    }
                    Func::Sqrt => {
                        if is_real(u) && u.re < 0.0 {
                            return Err(Error::Domain(format!("sqrt of negative value {} at t = {t}", u.re)));
                        }
                        let r = u.sqrt();
                        if r == ZERO {
                            if du != ZERO {
                                return Err(Error::Domain(format!("sqrt is not differentiable at zero (t = {t})")));
                            }
                            (r, ZERO)
                        } else {
                            (r, du / (2.0 * r))
                        }
                    }
                }
            }
        };
        if !(out.0.re.is_finite() && out.0.im.is_finite() && out.1.re.is_finite() && out.1.im.is_finite()) {
            return Err(Error::Domain(format!("non-finite value at t = {t}")));
        }
        Ok(out)
    }

    /// Samples value and derivative on an `n`-interval grid.
    pub fn sample(&self, n: usize) -> Result<ScalarFn> {
        let pairs = (0..=n).map(|j| self.eval_dual(node(n, j))).collect::<Result<Vec<_>>>()?;
        let (values, deriv) = pairs.into_iter().unzip();
        ScalarFn::from_samples(values, Some(deriv))
    }

    /// True when the expression evaluates to a real number at every grid node.
    pub fn is_real_on_grid(&self, n: usize) -> Result<bool> {
        for j in 0..=n {
            if self.eval(node(n, j))?.im != 0.0 {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Expr::Num(_) => true,
            Expr::T => false,
            Expr::Complex(a, b) | Expr::Bin(_, a, b) => a.is_constant() && b.is_constant(),
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.is_constant(),
        }
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(s: &str, t: f64) -> C64 {
        parse(s).unwrap().eval(t).unwrap()
    }

    #[test]
    fn literals_and_precedence() {
        assert_eq!(parse("1").unwrap(), Expr::Num(1.0));
        assert_eq!(at("1+t*2", 3.0), C64::new(7.0, 0.0));
        assert_eq!(at("2*3^2", 0.0), C64::new(18.0, 0.0));
        assert_eq!(at("-t^2", 3.0), C64::new(-9.0, 0.0));
        assert_eq!(at("(-t)^2", 3.0), C64::new(9.0, 0.0));
        assert_eq!(at("8/4/2", 0.0), C64::new(1.0, 0.0));
        assert_eq!(at("5-3-1", 0.0), C64::new(1.0, 0.0));
        assert_eq!(at("2^3^2", 0.0), C64::new(512.0, 0.0));
        assert_eq!(at("t^-1", 4.0), C64::new(0.25, 0.0));
        assert_eq!(at("\u{2212}t \u{2212} 1", 1.0), C64::new(-2.0, 0.0));
        assert_eq!(at("1.5e2 + .5", 0.0), C64::new(150.5, 0.0));
    }

    #[test]
    fn transcendental_oracle() {
        let v = at("sin(2*3.141592653589793*t)", 0.25);
        assert!((v - ONE).norm() < 1e-12);
        let w = at("exp(ln(3)) + sqrt(16) + cos(0)", 0.0);
        assert!((w - C64::new(8.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn complex_literals() {
        assert_eq!(at("(1, 2)", 0.0), C64::new(1.0, 2.0));
        assert_eq!(at("(t, -t) * (0, 1)", 2.0), C64::new(2.0, 2.0));
        let e = parse("exp((0, 1) * t)").unwrap();
        let (v, d) = e.eval_dual(0.7).unwrap();
        assert!((v - C64::new(0.7f64.cos(), 0.7f64.sin())).norm() < 1e-15);
        assert!((d - C64::i() * v).norm() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        assert_eq!(parse("t^2").unwrap().eval_deriv(0.5).unwrap(), ONE);
        let e = parse("exp(t)").unwrap();
        for t in [0.0, 0.13, 0.5, 0.77, 1.0] {
            let (v, d) = e.eval_dual(t).unwrap();
            assert!((v - d).norm() < 1e-15);
        }
    }

    #[test]
    fn syntax_errors_report_offsets() {
        match parse("1 + * t") {
            Err(Error::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
        match parse("2 * foo(t)") {
            Err(Error::UnknownIdentifier { name, offset }) => {
                assert_eq!(name, "foo");
                assert_eq!(offset, 4);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("t^1.5"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("t^t"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("(1, 2"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("sin t"), Err(Error::Syntax { .. })));
        assert!(matches!(parse(""), Err(Error::Syntax { .. })));
        assert!(matches!(parse("1 2"), Err(Error::Syntax { .. })));
        assert!(matches!(parse("1e"), Err(Error::Syntax { .. })));
    }

    #[test]
    fn input_limits() {
        let long = "t+".repeat(MAX_INPUT_BYTES / 2) + "t";
        assert!(matches!(parse(&long), Err(Error::InvalidInput(_))));
        let deep = "(".repeat(1000) + "t" + &")".repeat(1000);
        assert!(matches!(parse(&deep), Err(Error::Syntax { .. })));
        let neg = "-".repeat(1000) + "t";
        assert!(matches!(parse(&neg), Err(Error::Syntax { .. })));
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(parse("ln(t)").unwrap().eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(parse("ln(t - 1)").unwrap().eval(0.5), Err(Error::Domain(_))));
        assert!(matches!(parse("sqrt(t - 1)").unwrap().eval(0.5), Err(Error::Domain(_))));
        assert!(matches!(parse("sqrt(t)").unwrap().eval_dual(0.0), Err(Error::Domain(_))));
        assert!(matches!(parse("1/t").unwrap().eval(0.0), Err(Error::Domain(_))));
        assert!(matches!(parse("ln(t)").unwrap().sample(64), Err(Error::Domain(_))));
        // complex arguments use the principal branch
        assert!(parse("ln((-1, 1))").unwrap().eval(0.0).is_ok());
    }

    #[test]
    fn sample_carries_derivatives() {
        let g = parse("1 + t^2").unwrap().sample(64).unwrap();
        assert!(g.has_analytic_deriv());
        assert_eq!(g.deriv().unwrap()[64], C64::new(2.0, 0.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn leaf() -> impl Strategy<Value = Expr> {
            prop_oneof![
                (0.0f64..5.0).prop_map(Expr::Num),
                Just(Expr::T),
                (0.0f64..2.0, 0.0f64..2.0)
                    .prop_map(|(a, b)| Expr::Complex(Box::new(Expr::Num(a)), Box::new(Expr::Num(b)))),
            ]
        }

        // Trees that stay smooth and finite on [0, 1].
        fn smooth_expr() -> impl Strategy<Value = Expr> {
            leaf().prop_recursive(4, 24, 2, |inner| {
                prop_oneof![
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))),
                    (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))),
                    inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
                    (inner.clone(), 0i32..4).prop_map(|(a, k)| Expr::Pow(Box::new(a), k)),
                    inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
                    inner.clone().prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
                    inner.clone().prop_map(|a| Expr::Call(Func::Exp, Box::new(Expr::Call(Func::Sin, Box::new(a))))),
                    // 2 + sin(a) keeps ln and division away from zero for real a
                    inner.clone().prop_map(|a| Expr::Call(
                        Func::Ln,
                        Box::new(Expr::Bin(BinOp::Add, Box::new(Expr::Num(3.0)), Box::new(Expr::Call(Func::Sin, Box::new(a)))))
                    )),
                ]
            })
        }

        fn fd(e: &Expr, t: f64) -> Option<C64> {
            let h = 1e-5;
            Some((e.eval(t + h).ok()? - e.eval(t - h).ok()?) / (2.0 * h))
        }

        proptest! {
            #[test]
            fn print_parse_round_trip(e in smooth_expr()) {
                let printed = e.to_string();
                let reparsed = parse(&printed).unwrap();
                prop_assert_eq!(&reparsed, &e);
                prop_assert_eq!(reparsed.to_string(), printed);
            }

            #[test]
            fn derivative_matches_finite_differences(e in smooth_expr(), t in 0.05f64..0.95) {
                if let (Ok((v, d)), Some(approx)) = (e.eval_dual(t), fd(&e, t)) {
                    let scale = 1.0 + v.norm() + d.norm();
                    if scale < 1e4 {
                        prop_assert!((d - approx).norm() <= 1e-6 * scale, "{} at {}: {} vs {}", e, t, d, approx);
                    }
                }
            }

            #[test]
            fn product_rule_and_linearity(a in smooth_expr(), b in smooth_expr(), c in -2.0f64..2.0, t in 0.05f64..0.95) {
                let prod = Expr::Bin(BinOp::Mul, Box::new(a.clone()), Box::new(b.clone()));
                let lin = Expr::Bin(
                    BinOp::Add,
                    Box::new(Expr::Bin(BinOp::Mul, Box::new(Expr::Num(c.abs())), Box::new(a.clone()))),
                    Box::new(b.clone()),
                );
                let (Ok((u, du)), Ok((v, dv))) = (a.eval_dual(t), b.eval_dual(t)) else { return Ok(()); };
                let dp = prod.eval_deriv(t).unwrap();
                prop_assert!((dp - (du * v + u * dv)).norm() <= 1e-12 * (1.0 + dp.norm()));
                let dl = lin.eval_deriv(t).unwrap();
                prop_assert!((dl - (c.abs() * du + dv)).norm() <= 1e-12 * (1.0 + dl.norm()));
                if let Some(approx) = fd(&prod, t) {
                    let scale = 1.0 + (u * v).norm() + dp.norm();
                    if scale < 1e4 {
                        prop_assert!((dp - approx).norm() <= 1e-6 * scale);
                    }
                }
            }
        }
    }
}
