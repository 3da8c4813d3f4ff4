//! Exact rational arithmetic: the reference oracle for signs, rounding and
//! every comparison the tests make.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;
use thiserror::Error;

use crate::errorbounds::Expr;

/// Reduced fraction over unbounded integers.
pub type Rational = BigRational;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExactError {
    #[error("division by an exactly zero subexpression")]
    ExactPole,
    #[error("input index {0} has no value")]
    MissingInput(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("cannot parse number `{0}`")]
    Malformed(String),
    #[error("decimal `{0}` is not a dyadic rational; write it as p/q")]
    NotDyadic(String),
    #[error("zero denominator in `{0}`")]
    ZeroDenominator(String),
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

/// 2^e for any integer e.
pub fn pow2(e: i64) -> Rational {
    let one = BigInt::one();
    if e >= 0 {
        Rational::from_integer(one << (e as usize))
    } else {
        Rational::new(one.clone(), one << ((-e) as usize))
    }
}

fn bits(n: &BigInt) -> i64 {
    n.bits() as i64
}

/// ⌊log₂ x⌋ for x > 0, from bit lengths only.
pub fn floor_log2(x: &Rational) -> i64 {
    assert!(x.is_positive(), "floor_log2 of non-positive value");
    let n = x.numer();
    let d = x.denom();
    let mut e = bits(n) - bits(d);
    // 2^e <= x < 2^(e+1) holds for e or e-1
    if cmp_scaled(n, d, e) == Ordering::Less {
        e -= 1;
    }
    e
}

/// ⌈log₂ x⌉ for x > 0.
pub fn ceil_log2(x: &Rational) -> i64 {
    let f = floor_log2(x);
    if is_pow2(x) {
        f
    } else {
        f + 1
    }
}

/// Compares n/d with 2^e.
fn cmp_scaled(n: &BigInt, d: &BigInt, e: i64) -> Ordering {
    if e >= 0 {
        n.cmp(&(d << (e as usize)))
    } else {
        (n << ((-e) as usize)).cmp(d)
    }
}

pub fn is_pow2(x: &Rational) -> bool {
    let one_bit = |v: &BigInt| v.is_positive() && v.magnitude().count_ones() == 1;
    one_bit(x.numer()) && one_bit(x.denom())
}

pub fn is_dyadic(x: &Rational) -> bool {
    x.denom().magnitude().count_ones() == 1
}

/// Exact k-th root of a nonnegative rational when it exists.
pub fn exact_root(x: &Rational, k: u32) -> Option<Rational> {
    if x.is_negative() {
        return None;
    }
    if k == 1 {
        return Some(x.clone());
    }
    let n = x.numer().magnitude();
    let d = x.denom().magnitude();
    let rn = n.nth_root(k);
    let rd = d.nth_root(k);
    if rn.pow(k) == *n && rd.pow(k) == *d {
        Some(Rational::new(BigInt::from(rn), BigInt::from(rd)))
    } else {
        None
    }
}

/// Dyadic enclosure lo ≤ x^(1/k) ≤ hi with hi − lo = 2^(−bits) (or lo = hi when exact).
pub fn root_bracket(x: &Rational, k: u32, bits: u32) -> (Rational, Rational) {
    assert!(!x.is_negative());
    if let Some(r) = exact_root(x, k) {
        return (r.clone(), r);
    }
    // floor(x · 2^(k·bits))^(1/k) as an integer root gives the lower end
    let scaled = x * pow2(k as i64 * bits as i64);
    let fl: BigUint = scaled.floor().to_integer().magnitude().clone();
    let r = fl.nth_root(k);
    let lo = Rational::new(BigInt::from(r.clone()), BigInt::one() << bits as usize);
    let hi = Rational::new(BigInt::from(r + 1u32), BigInt::one() << bits as usize);
    (lo, hi)
}

/// Rational enclosure of π.
pub fn pi_bracket() -> (Rational, Rational) {
    (rat(333_102, 106_029), rat(355, 113))
}

/// Exact value of `e` at the rational point `x`.
pub fn rat_eval(e: &Expr, x: &[Rational]) -> Result<Rational, ExactError> {
    Ok(match e {
        Expr::Const(c) => c.clone(),
        Expr::Input(i) => x.get(*i).cloned().ok_or(ExactError::MissingInput(*i))?,
        Expr::Add(a, b) => rat_eval(a, x)? + rat_eval(b, x)?,
        Expr::Sub(a, b) => rat_eval(a, x)? - rat_eval(b, x)?,
        Expr::Mul(a, b) => rat_eval(a, x)? * rat_eval(b, x)?,
        Expr::Div(a, b) => {
            let d = rat_eval(b, x)?;
            if d.is_zero() {
                return Err(ExactError::ExactPole);
            }
            rat_eval(a, x)? / d
        }
        Expr::Abs(a) => rat_eval(a, x)?.abs(),
        Expr::Min(a, b) => {
            let (u, v) = (rat_eval(a, x)?, rat_eval(b, x)?);
            if u <= v {
                u
            } else {
                v
            }
        }
        Expr::Max(a, b) => {
            let (u, v) = (rat_eval(a, x)?, rat_eval(b, x)?);
            if u >= v {
                u
            } else {
                v
            }
        }
    })
}

pub fn sign_of(v: &Rational) -> i8 {
    match v.numer().sign() {
        Sign::Minus => -1,
        Sign::NoSign => 0,
        Sign::Plus => 1,
    }
}

pub fn rat_sign(e: &Expr, x: &[Rational]) -> Result<i8, ExactError> {
    rat_eval(e, x).map(|v| sign_of(&v))
}

/// Parses `p/q`, an integer, or a decimal that is an exact dyadic rational.
pub fn parse_rational(s: &str) -> Result<Rational, ParseError> {
    parse_number(s, true)
}

/// Like [`parse_rational`] but accepts any terminating decimal (`0.9` is
/// 9/10). For probabilities and other parameters that never become inputs.
pub fn parse_exact(s: &str) -> Result<Rational, ParseError> {
    parse_number(s, false)
}

fn parse_number(s: &str, dyadic_only: bool) -> Result<Rational, ParseError> {
    let t = s.trim();
    let bad = || ParseError::Malformed(t.to_string());
    if t.is_empty() {
        return Err(bad());
    }
    if let Some((p, q)) = t.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(ParseError::ZeroDenominator(t.to_string()));
        }
        return Ok(Rational::new(p, q));
    }
    let (mant, exp10) = match t.find(['e', 'E']) {
        Some(i) => (&t[..i], t[i + 1..].parse::<i64>().map_err(|_| bad())?),
        None => (t, 0),
    };
    let (neg, body) = match mant.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (ip, fp) = body.split_once('.').unwrap_or((body, ""));
    if ip.is_empty() && fp.is_empty() {
        return Err(bad());
    }
    if !ip.chars().chain(fp.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{ip}{fp}0").parse::<BigInt>().map_err(|_| bad())? / 10;
    let scale = exp10 - fp.len() as i64;
    let ten = BigInt::from(10);
    let mut v = if scale >= 0 {
        Rational::from_integer(digits * ten.pow(scale as u32))
    } else {
        Rational::new(digits, ten.pow((-scale) as u32))
    };
    if neg {
        v = -v;
    }
    if dyadic_only && !is_dyadic(&v) {
        return Err(ParseError::NotDyadic(t.to_string()));
    }
    Ok(v)
}

/// Decimal rendering with `digits` fractional digits, rounded to nearest.
/// Only used for human-readable reports.
pub fn to_decimal(x: &Rational, digits: u32) -> String {
    let scale = BigInt::from(10).pow(digits);
    let scaled = (x.abs() * Rational::from_integer(scale.clone())).round().to_integer();
    let (ip, fp) = scaled.div_rem(&scale);
    let sign = if x.is_negative() && !scaled.is_zero() { "-" } else { "" };
    if digits == 0 {
        return format!("{sign}{ip}");
    }
    format!("{sign}{ip}.{:0>width$}", fp.to_string(), width = digits as usize)
}

pub fn to_f64(x: &Rational) -> f64 {
    // good enough for display and Monte Carlo tolerances
    let e = if x.is_zero() { 0 } else { floor_log2(&x.abs()) };
    let scaled = x * pow2(60 - e);
    let v = scaled.round().to_integer().to_f64().unwrap_or(f64::NAN);
    v * 2f64.powi((e - 60) as i32)
}
