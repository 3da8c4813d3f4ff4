//! Expression trees, the ind/sup rounding-error table, static and dynamic
//! error bounds, guarded evaluation and fp-safety bounds.

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

use crate::exact::{self, is_dyadic, parse_rational, pow2, sign_of, Rational};
use crate::softfloat::{fl_binop_strict, fl_round_up, fl_round_in, BinOp, FloatError, Format, SoftFloat};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(Rational),
    Input(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
}

pub fn x(i: usize) -> Expr {
    Expr::Input(i)
}

pub fn c(v: Rational) -> Expr {
    Expr::Const(v)
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        Expr::Add(Box::new(self), Box::new(o))
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        Expr::Sub(Box::new(self), Box::new(o))
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        Expr::Mul(Box::new(self), Box::new(o))
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, o: Expr) -> Expr {
        Expr::Div(Box::new(self), Box::new(o))
    }
}

impl Expr {
    pub fn abs(self) -> Expr {
        Expr::Abs(Box::new(self))
    }

    pub fn min(self, o: Expr) -> Expr {
        Expr::Min(Box::new(self), Box::new(o))
    }

    pub fn max(self, o: Expr) -> Expr {
        Expr::Max(Box::new(self), Box::new(o))
    }

    /// One more than the largest input index (0 for constant expressions).
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Input(i) => i + 1,
            Expr::Abs(a) => a.arity(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => a.arity().max(b.arity()),
        }
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Const(_) | Expr::Input(_) => vec![],
            Expr::Abs(a) => vec![a],
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => vec![a, b],
        }
    }

    pub fn contains_div(&self) -> bool {
        matches!(self, Expr::Div(..)) || self.children().iter().any(|c| c.contains_div())
    }

    /// Replaces every input by `f(index)`.
    pub fn bind(&self, f: &dyn Fn(usize) -> Expr) -> Expr {
        let b = |e: &Expr| Box::new(e.bind(f));
        match self {
            Expr::Const(v) => Expr::Const(v.clone()),
            Expr::Input(i) => f(*i),
            Expr::Add(p, q) => Expr::Add(b(p), b(q)),
            Expr::Sub(p, q) => Expr::Sub(b(p), b(q)),
            Expr::Mul(p, q) => Expr::Mul(b(p), b(q)),
            Expr::Div(p, q) => Expr::Div(b(p), b(q)),
            Expr::Abs(p) => Expr::Abs(b(p)),
            Expr::Min(p, q) => Expr::Min(b(p), b(q)),
            Expr::Max(p, q) => Expr::Max(b(p), b(q)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bin = |f: &mut fmt::Formatter<'_>, op: &str, a: &Expr, b: &Expr| write!(f, "({op} {a} {b})");
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Input(i) => write!(f, "x{i}"),
            Expr::Add(a, b) => bin(f, "add", a, b),
            Expr::Sub(a, b) => bin(f, "sub", a, b),
            Expr::Mul(a, b) => bin(f, "mul", a, b),
            Expr::Div(a, b) => bin(f, "div", a, b),
            Expr::Min(a, b) => bin(f, "min", a, b),
            Expr::Max(a, b) => bin(f, "max", a, b),
            Expr::Abs(a) => write!(f, "(abs {a})"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExprParseError {
    #[error("unexpected end of expression")]
    UnexpectedEnd,
    #[error("unexpected token `{0}`")]
    UnexpectedToken(String),
    #[error("unknown operator `{0}`")]
    UnknownOperator(String),
    #[error("operator `{op}` takes {expected} operands, got {got}")]
    Arity { op: String, expected: &'static str, got: usize },
    #[error("bad atom `{0}`")]
    BadAtom(String),
}

fn tokenize(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars() {
        match ch {
            '(' | ')' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            }
            c if c.is_whitespace() => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Parses the prefix format, e.g. `(sub (mul x0 x3) (mul x1 x2))`.
pub fn parse_expr(s: &str) -> Result<Expr, ExprParseError> {
    let toks = tokenize(s);
    let mut pos = 0;
    let e = parse_tokens(&toks, &mut pos)?;
    if pos != toks.len() {
        return Err(ExprParseError::UnexpectedToken(toks[pos].clone()));
    }
    Ok(e)
}

fn parse_tokens(toks: &[String], pos: &mut usize) -> Result<Expr, ExprParseError> {
    let tok = toks.get(*pos).ok_or(ExprParseError::UnexpectedEnd)?;
    *pos += 1;
    if tok == ")" {
        return Err(ExprParseError::UnexpectedToken(tok.clone()));
    }
    if tok != "(" {
        if let Some(idx) = tok.strip_prefix('x') {
            return idx.parse().map(Expr::Input).map_err(|_| ExprParseError::BadAtom(tok.clone()));
        }
        return parse_rational(tok).map(Expr::Const).map_err(|_| ExprParseError::BadAtom(tok.clone()));
    }
    let op = toks.get(*pos).ok_or(ExprParseError::UnexpectedEnd)?.clone();
    *pos += 1;
    let mut args = Vec::new();
    loop {
        match toks.get(*pos).map(|s| s.as_str()) {
            None => return Err(ExprParseError::UnexpectedEnd),
            Some(")") => {
                *pos += 1;
                break;
            }
            Some(_) => args.push(parse_tokens(toks, pos)?),
        }
    }
    let arity_err = |expected| ExprParseError::Arity { op: op.clone(), expected, got: args.len() };
    let fold = |args: Vec<Expr>, f: fn(Box<Expr>, Box<Expr>) -> Expr| {
        let mut it = args.into_iter();
        let first = it.next().expect("checked arity");
        it.fold(first, |acc, e| f(Box::new(acc), Box::new(e)))
    };
    match op.as_str() {
        "add" | "mul" | "min" | "max" => {
            if args.len() < 2 {
                return Err(arity_err("at least 2"));
            }
            let f: fn(Box<Expr>, Box<Expr>) -> Expr = match op.as_str() {
                "add" => Expr::Add,
                "mul" => Expr::Mul,
                "min" => Expr::Min,
                _ => Expr::Max,
            };
            Ok(fold(args, f))
        }
        "sub" | "div" => {
            if args.len() != 2 {
                return Err(arity_err("2"));
            }
            let f: fn(Box<Expr>, Box<Expr>) -> Expr = if op == "sub" { Expr::Sub } else { Expr::Div };
            Ok(fold(args, f))
        }
        "abs" => {
            if args.len() != 1 {
                return Err(arity_err("1"));
            }
            Ok(Expr::Abs(Box::new(args.pop_first())))
        }
        _ => Err(ExprParseError::UnknownOperator(op)),
    }
}

trait PopFirst {
    fn pop_first(self) -> Expr;
}

impl PopFirst for Vec<Expr> {
    fn pop_first(self) -> Expr {
        self.into_iter().next().expect("checked arity")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("division inside an annotated expression (only a top-level division is supported)")]
    UnsupportedNode,
    #[error("input {0} is missing")]
    MissingInput(usize),
    #[error("input {0} is not representable in the working format")]
    InputNotRepresentable(usize),
    #[error(transparent)]
    Float(#[from] FloatError),
}

/// Error annotations of one node and its children.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub ind: u64,
    pub sup: Rational,
    pub children: Vec<Annotation>,
}

impl Annotation {
    /// Largest sup over all nodes.
    pub fn max_sup(&self) -> Rational {
        self.children.iter().map(|c| c.max_sup()).fold(self.sup.clone(), |a, b| if b > a { b } else { a })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotated {
    pub expr: Expr,
    pub emax: i64,
    pub ann: Annotation,
}

impl Annotated {
    pub fn ind(&self) -> u64 {
        self.ann.ind
    }

    pub fn sup(&self) -> &Rational {
        &self.ann.sup
    }
}

/// Whether a constant counts as exactly representable. Without a precision,
/// only zero and signed powers of two qualify.
pub fn const_ind(v: &Rational, prec: Option<u32>) -> u64 {
    if v.is_zero() {
        return 0;
    }
    if !is_dyadic(v) {
        return 1;
    }
    let mut n = v.numer().magnitude().clone();
    let tz = n.trailing_zeros().unwrap_or(0);
    n >>= tz as usize;
    let limit = prec.map(|l| l as u64 + 1).unwrap_or(1);
    if n.bits() <= limit {
        0
    } else {
        1
    }
}

fn rmax(a: &Rational, b: &Rational) -> Rational {
    if a >= b {
        a.clone()
    } else {
        b.clone()
    }
}

/// Applies the ind/sup table with every input bounded by 2^emax.
pub fn annotate(e: &Expr, emax: i64, prec: Option<u32>) -> Result<Annotated, EvalError> {
    Ok(Annotated { expr: e.clone(), emax, ann: annotate_node(e, &pow2(emax), prec)? })
}

fn annotate_node(e: &Expr, bound: &Rational, prec: Option<u32>) -> Result<Annotation, EvalError> {
    let leaf = |ind, sup| Ok(Annotation { ind, sup, children: vec![] });
    match e {
        Expr::Const(v) => leaf(const_ind(v, prec), v.abs()),
        Expr::Input(_) => leaf(0, bound.clone()),
        Expr::Div(..) => Err(EvalError::UnsupportedNode),
        Expr::Abs(a) => {
            let ca = annotate_node(a, bound, prec)?;
            Ok(Annotation { ind: ca.ind, sup: ca.sup.clone(), children: vec![ca] })
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Min(a, b) | Expr::Max(a, b) => {
            let ca = annotate_node(a, bound, prec)?;
            let cb = annotate_node(b, bound, prec)?;
            let (ind, sup) = match e {
                Expr::Add(..) | Expr::Sub(..) => (1 + ca.ind.max(cb.ind), &ca.sup + &cb.sup),
                Expr::Mul(..) => (1 + ca.ind + cb.ind, &ca.sup * &cb.sup),
                _ => (ca.ind.max(cb.ind), rmax(&ca.sup, &cb.sup)),
            };
            Ok(Annotation { ind, sup, children: vec![ca, cb] })
        }
    }
}

/// B_E(L) = ind · sup · 2^(−L).
pub fn static_bound(a: &Annotated, prec: u32) -> Rational {
    Rational::from_integer(BigInt::from(a.ann.ind)) * &a.ann.sup * pow2(-(prec as i64))
}

/// Floating-point evaluation of an expression without division, together with
/// the pointwise error bound.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: SoftFloat,
    pub ind: u64,
    /// sup composed from the actual input magnitudes.
    pub dyn_sup: Rational,
    /// ind · dyn_sup · 2^(−L), exactly.
    pub bound_exact: Rational,
    /// `bound_exact` rounded away from zero into the working format.
    pub bound: SoftFloat,
}

fn to_format(v: &SoftFloat, fmt: Format, i: usize) -> Result<SoftFloat, EvalError> {
    if v.format() == fmt {
        return Ok(v.clone());
    }
    let r = v.convert(fmt).map_err(|_| EvalError::InputNotRepresentable(i))?;
    if r.to_rational() != v.to_rational() {
        return Err(EvalError::InputNotRepresentable(i));
    }
    Ok(r)
}

fn eval_node(e: &Expr, xs: &[SoftFloat], fmt: Format, strict: bool) -> Result<(SoftFloat, u64, Rational), EvalError> {
    let op = |o: BinOp, a: &SoftFloat, b: &SoftFloat| -> Result<SoftFloat, EvalError> {
        let r = if strict { fl_binop_strict(o, a, b) } else { crate::softfloat::fl_binop(o, a, b) };
        r.map_err(EvalError::from)
    };
    match e {
        Expr::Const(v) => {
            let r = fl_round_in(v, fmt)?;
            if strict && !r.is_zero() && r.to_rational().abs() < fmt.min_normal() && r.to_rational() != *v {
                return Err(FloatError::Underflow("const").into());
            }
            Ok((r, const_ind(v, Some(fmt.prec)), v.abs()))
        }
        Expr::Input(i) => {
            let v = xs.get(*i).ok_or(EvalError::MissingInput(*i))?;
            let v = to_format(v, fmt, *i)?;
            let m = v.to_rational().abs();
            Ok((v, 0, m))
        }
        Expr::Div(..) => Err(EvalError::UnsupportedNode),
        Expr::Abs(a) => {
            let (v, ind, s) = eval_node(a, xs, fmt, strict)?;
            Ok((v.abs(), ind, s))
        }
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Min(a, b) | Expr::Max(a, b) => {
            let (va, ia, sa) = eval_node(a, xs, fmt, strict)?;
            let (vb, ib, sb) = eval_node(b, xs, fmt, strict)?;
            Ok(match e {
                Expr::Add(..) => (op(BinOp::Add, &va, &vb)?, 1 + ia.max(ib), sa + sb),
                Expr::Sub(..) => (op(BinOp::Sub, &va, &vb)?, 1 + ia.max(ib), sa + sb),
                Expr::Mul(..) => (op(BinOp::Mul, &va, &vb)?, 1 + ia + ib, sa * sb),
                Expr::Min(..) => (if va <= vb { va } else { vb }, ia.max(ib), rmax(&sa, &sb)),
                _ => (if va >= vb { va } else { vb }, ia.max(ib), rmax(&sa, &sb)),
            })
        }
    }
}

/// Evaluates `e` at `xs` in `fmt`. With `strict`, an inexact result below the
/// smallest normal magnitude is an error.
pub fn evaluate(e: &Expr, xs: &[SoftFloat], fmt: Format, strict: bool) -> Result<Evaluation, EvalError> {
    let (value, ind, dyn_sup) = eval_node(e, xs, fmt, strict)?;
    let bound_exact = Rational::from_integer(BigInt::from(ind)) * &dyn_sup * pow2(-(fmt.prec as i64));
    let bound = fl_round_up(&bound_exact, fmt)?;
    Ok(Evaluation { value, ind, dyn_sup, bound_exact, bound })
}

/// B_E(L, x): the pointwise error bound, rounded upward into the format.
pub fn dynamic_bound(e: &Expr, xs: &[SoftFloat], fmt: Format) -> Result<SoftFloat, EvalError> {
    Ok(evaluate(e, xs, fmt, false)?.bound)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum GuardVerdict {
    SignCertified(i8),
    GuardFailed,
    RangeError,
}

impl GuardVerdict {
    pub fn certified(self) -> Option<i8> {
        match self {
            GuardVerdict::SignCertified(s) => Some(s),
            _ => None,
        }
    }
}

fn first_order_valid(ind: u64, prec: u32) -> bool {
    // ind² · 2^-L ≤ 1/4 keeps the second-order terms of the table below its slack
    let sq = (ind as u128) * (ind as u128);
    prec >= 126 || sq <= (1u128 << prec) / 4
}

/// Sign certification by comparing |f(x)| with the dynamic error bound.
/// A division may only appear at the root (or at the root of a Min/Max child),
/// where the guard is the conjunction of the numerator and denominator guards.
pub fn guarded_eval(e: &Expr, xs: &[SoftFloat], fmt: Format) -> Result<GuardVerdict, EvalError> {
    match e {
        Expr::Div(g, h) => {
            let vg = guarded_eval(g, xs, fmt)?;
            let vh = guarded_eval(h, xs, fmt)?;
            match (vg, vh) {
                (GuardVerdict::RangeError, _) | (_, GuardVerdict::RangeError) => Ok(GuardVerdict::RangeError),
                (GuardVerdict::SignCertified(a), GuardVerdict::SignCertified(b)) => {
                    let eg = evaluate(g, xs, fmt, true);
                    let eh = evaluate(h, xs, fmt, true);
                    match (eg, eh) {
                        (Ok(a_), Ok(b_)) => match fl_binop_strict(BinOp::Div, &a_.value, &b_.value) {
                            Ok(_) => Ok(GuardVerdict::SignCertified(a * b)),
                            Err(_) => Ok(GuardVerdict::RangeError),
                        },
                        _ => Ok(GuardVerdict::RangeError),
                    }
                }
                _ => Ok(GuardVerdict::GuardFailed),
            }
        }
        Expr::Min(a, b) | Expr::Max(a, b) => {
            let va = guarded_eval(a, xs, fmt)?;
            let vb = guarded_eval(b, xs, fmt)?;
            if va == GuardVerdict::RangeError || vb == GuardVerdict::RangeError {
                return Ok(GuardVerdict::RangeError);
            }
            // Max is positive as soon as one child is; Min dually
            let dominant: i8 = if matches!(e, Expr::Max(..)) { 1 } else { -1 };
            let (sa, sb) = (va.certified(), vb.certified());
            if sa == Some(dominant) || sb == Some(dominant) {
                return Ok(GuardVerdict::SignCertified(dominant));
            }
            match (sa, sb) {
                (Some(x), Some(y)) if x == y => Ok(GuardVerdict::SignCertified(x)),
                _ => Ok(GuardVerdict::GuardFailed),
            }
        }
        _ => {
            let ev = match evaluate(e, xs, fmt, true) {
                Ok(ev) => ev,
                Err(EvalError::Float(_)) => return Ok(GuardVerdict::RangeError),
                Err(other) => return Err(other),
            };
            if !first_order_valid(ev.ind, fmt.prec) {
                return Ok(GuardVerdict::GuardFailed);
            }
            if ev.value.abs() > ev.bound {
                Ok(GuardVerdict::SignCertified(ev.value.sign()))
            } else {
                Ok(GuardVerdict::GuardFailed)
            }
        }
    }
}

/// Guarded evaluation at rational inputs that must be members of F_{L,K}.
pub fn guarded_eval_rational(e: &Expr, xs: &[Rational], fmt: Format) -> Result<GuardVerdict, EvalError> {
    let mut v = Vec::with_capacity(xs.len());
    for (i, r) in xs.iter().enumerate() {
        let f = fl_round_in(r, fmt).map_err(|_| EvalError::InputNotRepresentable(i))?;
        if f.to_rational() != *r {
            return Err(EvalError::InputNotRepresentable(i));
        }
        v.push(f);
    }
    guarded_eval(e, &v, fmt)
}

/// Univariate fp-safety bound (d+2) · max_{1≤i≤d}|aᵢ| · 2^(emax(d+1)+1−L).
pub fn safety_lower_univariate(d: u32, coeffs: &[Rational], emax: i64, prec: u32) -> Rational {
    univariate_safety_numerator(d, coeffs, emax) * pow2(-(prec as i64))
}

pub fn univariate_safety_numerator(d: u32, coeffs: &[Rational], emax: i64) -> Rational {
    let m = coeffs.iter().skip(1).take(d as usize).map(|a| a.abs()).fold(Rational::zero(), |a, b| rmax(&a, &b));
    exact::int(d as i64 + 2) * m * pow2(emax * (d as i64 + 1) + 1)
}

/// Multivariate fp-safety bound (d+1+⌈log₂ N_T⌉) · N_T · maxcoeff · 2^(emax·d+1−L).
pub fn safety_lower_multivariate(d: u32, n_terms: u64, maxcoeff: &Rational, emax: i64, prec: u32) -> Rational {
    multivariate_safety_numerator(d, n_terms, maxcoeff, emax) * pow2(-(prec as i64))
}

pub fn multivariate_safety_numerator(d: u32, n_terms: u64, maxcoeff: &Rational, emax: i64) -> Rational {
    assert!(n_terms >= 1);
    let lg = exact::ceil_log2(&exact::int(n_terms as i64));
    exact::int(d as i64 + 1 + lg) * exact::int(n_terms as i64) * maxcoeff * pow2(emax * d as i64 + 1)
}

/// S_sup(K) = 2^(2^(K−1)) − S_inf. Exact; intended for moderate K.
pub fn safety_upper(expbits: u32, s_inf: &Rational) -> Rational {
    pow2(1i64 << (expbits - 1)) - s_inf
}

/// Whether v ≤ S_sup(K) = 2^(2^(K−1)) − S_inf, decided with integer logs.
pub fn within_safety_upper(v: &Rational, expbits: u32, s_inf: &Rational) -> bool {
    let t = v + s_inf;
    if !t.is_positive() {
        return true;
    }
    exact::ceil_log2(&t) <= (1i64 << (expbits - 1))
}

/// Sparse multivariate polynomial: exponent tuple → coefficient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparsePoly {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u32>, Rational>,
}

impl SparsePoly {
    pub fn constant(nvars: usize, v: Rational) -> Self {
        let mut terms = BTreeMap::new();
        if !v.is_zero() {
            terms.insert(vec![0; nvars], v);
        }
        SparsePoly { nvars, terms }
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(e, Rational::one());
        SparsePoly { nvars, terms }
    }

    fn add_scaled(&mut self, o: &SparsePoly, s: &Rational) {
        for (e, v) in &o.terms {
            let entry = self.terms.entry(e.clone()).or_insert_with(Rational::zero);
            *entry += v * s;
            if entry.is_zero() {
                self.terms.remove(e);
            }
        }
    }

    fn mul(&self, o: &SparsePoly) -> SparsePoly {
        let mut r = SparsePoly { nvars: self.nvars, terms: BTreeMap::new() };
        for (e1, v1) in &self.terms {
            for (e2, v2) in &o.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                let entry = r.terms.entry(e.clone()).or_insert_with(Rational::zero);
                *entry += v1 * v2;
                if entry.is_zero() {
                    r.terms.remove(&e);
                }
            }
        }
        r
    }

    /// Expands an expression built from constants, inputs, +, − and ×.
    pub fn expand(e: &Expr, nvars: usize) -> Option<SparsePoly> {
        Some(match e {
            Expr::Const(v) => SparsePoly::constant(nvars, v.clone()),
            Expr::Input(i) => {
                if *i >= nvars {
                    return None;
                }
                SparsePoly::var(nvars, *i)
            }
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let mut p = SparsePoly::expand(a, nvars)?;
                let q = SparsePoly::expand(b, nvars)?;
                let s = if matches!(e, Expr::Add(..)) { Rational::one() } else { -Rational::one() };
                p.add_scaled(&q, &s);
                p
            }
            Expr::Mul(a, b) => SparsePoly::expand(a, nvars)?.mul(&SparsePoly::expand(b, nvars)?),
            _ => return None,
        })
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn max_abs_coeff(&self) -> Rational {
        self.terms.values().map(|v| v.abs()).fold(Rational::zero(), |a, b| rmax(&a, &b))
    }

    /// Each monomial as a·x·x·… left to right; terms summed as a balanced tree.
    pub fn to_expr(&self) -> Expr {
        let mut monos: Vec<Expr> = self
            .terms
            .iter()
            .map(|(e, v)| {
                let mut m = c(v.clone());
                for (i, &p) in e.iter().enumerate() {
                    for _ in 0..p {
                        m = m * x(i);
                    }
                }
                m
            })
            .collect();
        if monos.is_empty() {
            return c(Rational::zero());
        }
        while monos.len() > 1 {
            let mut next = Vec::with_capacity(monos.len().div_ceil(2));
            let mut it = monos.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(a + b),
                    None => next.push(a),
                }
            }
            monos = next;
        }
        monos.pop().expect("nonempty")
    }
}

/// a₀ + a₁x + … + a_d x^d summed from the constant term upward, each term
/// a_i·x·…·x left to right; zero terms are skipped.
pub fn univariate_expr(coeffs: &[Rational]) -> Expr {
    let mut acc: Option<Expr> = None;
    for (i, a) in coeffs.iter().enumerate() {
        if a.is_zero() {
            continue;
        }
        let mut t = c(a.clone());
        for _ in 0..i {
            t = t * x(0);
        }
        acc = Some(match acc {
            None => t,
            Some(s) => s + t,
        });
    }
    acc.unwrap_or_else(|| c(Rational::zero()))
}

/// Exact sign of the value; helper for tests and oracles.
pub fn exact_sign(e: &Expr, xs: &[Rational]) -> Option<i8> {
    exact::rat_eval(e, xs).ok().map(|v| sign_of(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{int, rat, rat_eval};

    fn fmt(l: u32, k: u32) -> Format {
        Format::new(l, k).unwrap()
    }

    fn sf(v: &[Rational], f: Format) -> Vec<SoftFloat> {
        v.iter().map(|r| fl_round_in(r, f).unwrap()).collect()
    }

    #[test]
    fn parse_and_print_roundtrip() {
        let s = "(sub (mul x0 x3) (mul x1 x2))";
        let e = parse_expr(s).unwrap();
        assert_eq!(e.to_string(), s);
        assert_eq!(e.arity(), 4);
        let e2 = parse_expr("(add x0 3/4 x1)").unwrap();
        assert_eq!(e2.to_string(), "(add (add x0 3/4) x1)");
        assert!(parse_expr("(pow x0 2)").is_err());
        assert!(parse_expr("(sub x0)").is_err());
        assert!(parse_expr("(add x0 x1").is_err());
        assert!(parse_expr("(abs 0.1)").is_err());
    }

    #[test]
    fn product_annotation() {
        // a·x1·…·xk left to right
        for k in 1..6usize {
            let a = rat(3, 1);
            let mut e = c(a.clone());
            for i in 0..k {
                e = e * x(i);
            }
            let an = annotate(&e, 2, None).unwrap();
            assert_eq!(an.ind(), k as u64 + 1);
            assert_eq!(*an.sup(), &a * pow2(2 * k as i64));
            assert_eq!(static_bound(&an, 30), int(k as i64 + 1) * &a * pow2(2 * k as i64 - 30));
        }
        let single = annotate(&x(0), 3, None).unwrap();
        assert_eq!((single.ind(), single.sup().clone()), (0, pow2(3)));
        assert_eq!(static_bound(&single, 10), int(0));
        let sum = annotate(&(x(0) + x(1)), 3, None).unwrap();
        assert_eq!((sum.ind(), sum.sup().clone()), (1, pow2(4)));
        assert!(matches!(annotate(&(x(0) / x(1)), 1, None), Err(EvalError::UnsupportedNode)));
    }

    #[test]
    fn halving_identity() {
        let e = parse_expr("(sub (mul x0 x0) 1/3)").unwrap();
        let an = annotate(&e, 1, Some(20)).unwrap();
        assert_eq!(static_bound(&an, 21) * int(2), static_bound(&an, 20));
    }

    #[test]
    fn dynamic_bound_of_product() {
        let f = fmt(30, 8);
        let e = c(int(3)) * x(0) * x(1);
        let xs = sf(&[rat(3, 4), rat(-5, 8)], f);
        let ev = evaluate(&e, &xs, f, true).unwrap();
        let m = rat(45, 32);
        assert_eq!(ev.bound_exact, int(2) * m * pow2(-30));
        let z = sf(&[int(0), rat(1, 2)], f);
        assert!(dynamic_bound(&e, &z, f).unwrap().is_zero());
    }

    #[test]
    fn guard_examples() {
        let f16 = fmt(16, 6);
        assert_eq!(guarded_eval_rational(&x(0), &[int(1)], f16).unwrap(), GuardVerdict::SignCertified(1));
        let orient = parse_expr("(sub (mul (sub x2 x0) (sub x5 x1)) (mul (sub x3 x1) (sub x4 x0)))").unwrap();
        let col = [int(0), int(0), int(1), int(1), int(2), int(2)];
        for l in [8, 24, 60] {
            assert_eq!(guarded_eval_rational(&orient, &col, fmt(l, 6)).unwrap(), GuardVerdict::GuardFailed);
        }
        let e = parse_expr("(sub (mul x0 x1) (mul x2 x3))").unwrap();
        let pt = [rat(3, 4), rat(3, 4), rat(9, 16), int(1)];
        assert_eq!(rat_eval(&e, &pt).unwrap(), int(0));
        assert_eq!(guarded_eval_rational(&e, &pt, fmt(4, 6)).unwrap(), GuardVerdict::GuardFailed);
        assert_eq!(guarded_eval_rational(&e, &pt, fmt(40, 6)).unwrap(), GuardVerdict::GuardFailed);
    }

    #[test]
    fn overflow_is_range_error() {
        let f = fmt(10, 3);
        let e = x(0) * x(0) * x(0);
        assert_eq!(guarded_eval_rational(&e, &[int(8)], f).unwrap(), GuardVerdict::RangeError);
        let q = x(0) / (x(1) - x(1));
        assert_eq!(guarded_eval_rational(&q, &[int(1), int(1)], f).unwrap(), GuardVerdict::GuardFailed);
    }

    #[test]
    fn minmax_children() {
        let f = fmt(20, 6);
        // max(x0, x1) with x0 certified positive and x1 exactly zero
        let e = x(0).max(x(1) - x(1));
        assert_eq!(guarded_eval_rational(&e, &[int(1), int(3)], f).unwrap(), GuardVerdict::SignCertified(1));
        let m = x(0).min(x(1) - x(1));
        assert_eq!(guarded_eval_rational(&m, &[int(1), int(3)], f).unwrap(), GuardVerdict::GuardFailed);
    }

    #[test]
    fn safety_closed_forms() {
        assert_eq!(safety_lower_univariate(1, &[int(0), int(1)], 0, 10), int(3) * pow2(-9));
        assert_eq!(safety_lower_univariate(2, &[int(0), int(1), int(-1)], 1, 20), pow2(-14));
        let s = safety_lower_univariate(3, &[int(5), int(1), int(2), int(1)], 1, 12);
        assert_eq!(safety_lower_univariate(3, &[int(5), int(1), int(2), int(1)], 1, 13) * int(2), s);
        assert_eq!(safety_lower_multivariate(2, 1, &int(1), 1, 10), int(3) * pow2(-7));
        assert_eq!(safety_lower_multivariate(2, 6, &int(1), 1, 10), int(36) * pow2(-7));
        assert_eq!(safety_upper(5, &int(1)), int(65535));
        assert_eq!(safety_upper(4, &int(0)), int(256));
        assert!(safety_upper(6, &int(1)) > safety_upper(5, &int(1)));
        assert!(within_safety_upper(&pow2(10), 5, &int(1)));
        assert!(!within_safety_upper(&pow2(10), 4, &int(1)));
    }

    #[test]
    fn expansion() {
        let orient = parse_expr("(sub (mul (sub x2 x0) (sub x5 x1)) (mul (sub x3 x1) (sub x4 x0)))").unwrap();
        let p = SparsePoly::expand(&orient, 6).unwrap();
        assert_eq!(p.terms.len(), 6);
        assert_eq!(p.total_degree(), 2);
        let back = p.to_expr();
        let pt = [rat(1, 2), int(3), rat(-7, 4), int(2), int(5), rat(1, 8)];
        assert_eq!(rat_eval(&back, &pt).unwrap(), rat_eval(&orient, &pt).unwrap());
        let u = univariate_expr(&[rat(-1, 4), int(0), int(1)]);
        assert_eq!(rat_eval(&u, &[rat(1, 2)]).unwrap(), int(0));
        let an = annotate(&univariate_expr(&[int(1), int(1), int(1), int(1)]), 1, None).unwrap();
        assert_eq!(an.ind(), 4);
        let thirds = univariate_expr(&[rat(1, 3), rat(1, 3), rat(1, 3), rat(1, 3)]);
        assert_eq!(annotate(&thirds, 1, Some(20)).unwrap().ind(), 5);
    }
}
