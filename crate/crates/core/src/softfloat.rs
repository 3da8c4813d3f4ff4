//! Radix-2 floating-point numbers with configurable precision and exponent
//! width, correctly rounded (nearest, ties to even).
//!
//! Convention: `prec = L` is the number of significand bits after the leading
//! one, so a normal significand is an integer in `[2^L, 2^(L+1))` and the value
//! is `±sig · 2^(exp−L)` where `exp` is the binade exponent. Binade exponents
//! range over `[−2^(K−1)+1, 2^(K−1)]`; the lowest binade continues gradually
//! down to zero (significands below `2^L` at `exp = emin`).

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use thiserror::Error;

use crate::exact::{floor_log2, Rational};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Format {
    pub prec: u32,
    pub expbits: u32,
}

impl Format {
    pub const MAX_EXPBITS: u32 = 40;

    pub fn new(prec: u32, expbits: u32) -> Result<Self, FloatError> {
        if prec < 1 || !(2..=Self::MAX_EXPBITS).contains(&expbits) {
            return Err(FloatError::InvalidFormat { prec, expbits });
        }
        Ok(Format { prec, expbits })
    }

    /// Largest binade exponent.
    pub fn emax(&self) -> i64 {
        1i64 << (self.expbits - 1)
    }

    /// Smallest normal binade exponent.
    pub fn emin(&self) -> i64 {
        1 - (1i64 << (self.expbits - 1))
    }

    pub fn max_value(&self) -> Rational {
        let sig = (BigInt::one() << (self.prec as usize + 1)) - 1;
        Rational::from_integer(sig) * crate::exact::pow2(self.emax() - self.prec as i64)
    }

    pub fn min_normal(&self) -> Rational {
        crate::exact::pow2(self.emin())
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F[L={},K={}]", self.prec, self.expbits)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    pub fn name(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::Div => "div",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeError {
    pub source_op: &'static str,
    pub magnitude_hint: String,
}

impl fmt::Display for RangeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "range error in {}: {}", self.source_op, self.magnitude_hint)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FloatError {
    #[error("{0}")]
    Range(RangeError),
    #[error("division by zero")]
    DivisionByZero,
    #[error("underflow in {0}: inexact result below the smallest normal magnitude")]
    Underflow(&'static str),
    #[error("operands have different formats")]
    FormatMismatch,
    #[error("invalid format L={prec}, K={expbits}")]
    InvalidFormat { prec: u32, expbits: u32 },
}

impl FloatError {
    fn overflow(op: &'static str, exp: i64, fmt: Format) -> Self {
        FloatError::Range(RangeError {
            source_op: op,
            magnitude_hint: format!("binade 2^{exp} exceeds 2^{} of {fmt}", fmt.emax()),
        })
    }
}

/// A member of F_{L,K}. Zero has `sig = 0`, `exp = emin` and positive sign.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SoftFloat {
    neg: bool,
    sig: BigUint,
    exp: i64,
    fmt: Format,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rounding {
    Nearest,
    /// Away from zero (upward for magnitudes).
    Up,
}

struct Rounded {
    value: SoftFloat,
    inexact: bool,
    tiny: bool,
}

/// Rounds `(−1)^neg · (mag + s) · 2^shift` where `s ∈ (0,1)` if `sticky` and
/// `s = 0` otherwise.
fn round_parts(
    neg: bool,
    mag: BigUint,
    shift: i64,
    sticky: bool,
    fmt: Format,
    mode: Rounding,
    op: &'static str,
) -> Result<Rounded, FloatError> {
    if mag.is_zero() {
        debug_assert!(!sticky);
        return Ok(Rounded { value: SoftFloat::zero(fmt), inexact: false, tiny: false });
    }
    let l = fmt.prec as i64;
    let e = shift + mag.bits() as i64 - 1;
    let q = e.max(fmt.emin()) - l;
    let drop = q - shift;
    let (mut sig, inexact) = if drop <= 0 {
        (mag << ((-drop) as usize), sticky)
    } else {
        let d = drop as usize;
        let kept = &mag >> d;
        let rem = &mag - (&kept << d);
        let half = BigUint::one() << (d - 1);
        let up = match mode {
            Rounding::Nearest => match rem.cmp(&half) {
                Ordering::Greater => true,
                Ordering::Equal => sticky || kept.is_odd(),
                Ordering::Less => false,
            },
            Rounding::Up => !rem.is_zero() || sticky,
        };
        let inexact = !rem.is_zero() || sticky;
        (if up { kept + 1u32 } else { kept }, inexact)
    };
    let tiny = inexact && e < fmt.emin();
    if sig.is_zero() {
        return Ok(Rounded { value: SoftFloat::zero(fmt), inexact, tiny });
    }
    let mut q = q;
    if sig.bits() as i64 > l + 1 {
        sig >>= 1;
        q += 1;
    }
    let exp = if sig.bits() as i64 == l + 1 { q + l } else { fmt.emin() };
    if exp > fmt.emax() {
        return Err(FloatError::overflow(op, exp, fmt));
    }
    Ok(Rounded { value: SoftFloat { neg, sig, exp, fmt }, inexact, tiny })
}

impl SoftFloat {
    pub fn zero(fmt: Format) -> Self {
        SoftFloat { neg: false, sig: BigUint::zero(), exp: fmt.emin(), fmt }
    }

    pub fn format(&self) -> Format {
        self.fmt
    }

    pub fn prec(&self) -> u32 {
        self.fmt.prec
    }

    pub fn expbits(&self) -> u32 {
        self.fmt.expbits
    }

    pub fn is_zero(&self) -> bool {
        self.sig.is_zero()
    }

    /// −1, 0 or +1.
    pub fn sign(&self) -> i8 {
        if self.is_zero() {
            0
        } else if self.neg {
            -1
        } else {
            1
        }
    }

    pub fn significand(&self) -> &BigUint {
        &self.sig
    }

    /// Binade exponent (`emin` for zero and gradual-underflow values).
    pub fn exponent(&self) -> i64 {
        self.exp
    }

    pub fn is_normal(&self) -> bool {
        self.sig.bits() as u32 == self.fmt.prec + 1
    }

    pub fn neg(&self) -> Self {
        let mut r = self.clone();
        if !r.is_zero() {
            r.neg = !r.neg;
        }
        r
    }

    pub fn abs(&self) -> Self {
        let mut r = self.clone();
        r.neg = false;
        r
    }

    fn quantum(&self) -> i64 {
        self.exp - self.fmt.prec as i64
    }

    pub fn to_rational(&self) -> Rational {
        to_rational(self)
    }

    /// Same value rounded into another format.
    pub fn convert(&self, fmt: Format) -> Result<Self, FloatError> {
        let r = round_parts(self.neg, self.sig.clone(), self.quantum(), false, fmt, Rounding::Nearest, "convert")?;
        Ok(r.value)
    }

    pub fn from_f32(x: f32) -> Option<Self> {
        if !x.is_finite() {
            return None;
        }
        let fmt = Format { prec: 23, expbits: 8 };
        let v = Rational::from_float(x)?;
        fl_round_in(&v, fmt).ok()
    }

    /// IEEE binary32 bit pattern for values in the common normal range of
    /// both formats (or zero).
    pub fn to_f32_bits(&self) -> Option<u32> {
        if self.fmt.prec != 23 {
            return None;
        }
        if self.is_zero() {
            return Some(0);
        }
        if !self.is_normal() || !(-126..=127).contains(&self.exp) {
            return None;
        }
        let frac: u32 = (&self.sig - (BigUint::one() << 23usize)).try_into().ok()?;
        let biased = (self.exp + 127) as u32;
        Some(((self.neg as u32) << 31) | (biased << 23) | frac)
    }
}

impl PartialOrd for SoftFloat {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SoftFloat {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.sign().cmp(&other.sign()) {
            Ordering::Equal => {}
            o => return o,
        }
        let mag = (self.exp, &self.sig).cmp(&(other.exp, &other.sig));
        if self.neg {
            mag.reverse()
        } else {
            mag
        }
    }
}

impl fmt::Display for SoftFloat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_rational())
    }
}

fn rational_parts(x: &Rational, fmt: Format) -> (bool, BigUint, i64, bool) {
    // |x| = (mag + s) · 2^shift with mag holding L+4 bits
    let neg = x.is_negative();
    let ax = x.abs();
    let e = floor_log2(&ax);
    let s = fmt.prec as i64 + 3 - e;
    let (num, den) = if s >= 0 {
        (ax.numer().magnitude() << (s as usize), ax.denom().magnitude().clone())
    } else {
        (ax.numer().magnitude().clone(), ax.denom().magnitude() << ((-s) as usize))
    };
    let (mag, rem) = num.div_rem(&den);
    (neg, mag, -s, !rem.is_zero())
}

fn round_rational(x: &Rational, fmt: Format, mode: Rounding) -> Result<Rounded, FloatError> {
    if x.is_zero() {
        return Ok(Rounded { value: SoftFloat::zero(fmt), inexact: false, tiny: false });
    }
    let (neg, mag, shift, sticky) = rational_parts(x, fmt);
    round_parts(neg, mag, shift, sticky, fmt, mode, "round")
}

/// Nearest member of F_{L,K} to `x`, ties to even.
pub fn fl_round(x: &Rational, prec: u32, expbits: u32) -> Result<SoftFloat, FloatError> {
    fl_round_in(x, Format::new(prec, expbits)?)
}

pub fn fl_round_in(x: &Rational, fmt: Format) -> Result<SoftFloat, FloatError> {
    Ok(round_rational(x, fmt, Rounding::Nearest)?.value)
}

/// Smallest-magnitude member of F_{L,K} with magnitude at least |x|.
pub fn fl_round_up(x: &Rational, fmt: Format) -> Result<SoftFloat, FloatError> {
    Ok(round_rational(x, fmt, Rounding::Up)?.value)
}

/// Exact value; no loss.
pub fn to_rational(a: &SoftFloat) -> Rational {
    let m = BigInt::from(a.sig.clone());
    let v = Rational::from_integer(if a.neg { -m } else { m });
    v * crate::exact::pow2(a.quantum())
}

fn binop_rounded(op: BinOp, a: &SoftFloat, b: &SoftFloat) -> Result<Rounded, FloatError> {
    if a.fmt != b.fmt {
        return Err(FloatError::FormatMismatch);
    }
    let fmt = a.fmt;
    let name = op.name();
    let exact = |v: SoftFloat| Ok(Rounded { value: v, inexact: false, tiny: false });
    match op {
        BinOp::Add | BinOp::Sub => {
            let b = if op == BinOp::Sub { b.neg() } else { b.clone() };
            if a.is_zero() {
                return exact(b);
            }
            if b.is_zero() {
                return exact(a.clone());
            }
            let (big, small) = if a.quantum() >= b.quantum() { (a, &b) } else { (&b, a) };
            let gap = big.quantum() - small.quantum();
            let limit = fmt.prec as i64 + 4;
            if gap > limit {
                // the small operand is below an eighth of big's quantum
                let m = &big.sig << 3usize;
                let mag = if big.neg == small.neg { m } else { m - 1u32 };
                return round_parts(big.neg, mag, big.quantum() - 3, true, fmt, Rounding::Nearest, name);
            }
            let mb = BigInt::from(big.sig.clone() << (gap as usize));
            let ms = BigInt::from(small.sig.clone());
            let sb = if big.neg { -mb } else { mb };
            let ss = if small.neg { -ms } else { ms };
            let sum = sb + ss;
            round_parts(sum.is_negative(), sum.magnitude().clone(), small.quantum(), false, fmt, Rounding::Nearest, name)
        }
        BinOp::Mul => {
            if a.is_zero() || b.is_zero() {
                return exact(SoftFloat::zero(fmt));
            }
            round_parts(a.neg != b.neg, &a.sig * &b.sig, a.quantum() + b.quantum(), false, fmt, Rounding::Nearest, name)
        }
        BinOp::Div => {
            if b.is_zero() {
                return Err(FloatError::DivisionByZero);
            }
            if a.is_zero() {
                return exact(SoftFloat::zero(fmt));
            }
            let s = (fmt.prec as i64 + 4 + b.sig.bits() as i64 - a.sig.bits() as i64).max(0);
            let (quot, rem) = (&a.sig << (s as usize)).div_rem(&b.sig);
            round_parts(a.neg != b.neg, quot, a.quantum() - b.quantum() - s, !rem.is_zero(), fmt, Rounding::Nearest, name)
        }
    }
}

/// Correctly rounded `a op b`.
pub fn fl_binop(op: BinOp, a: &SoftFloat, b: &SoftFloat) -> Result<SoftFloat, FloatError> {
    Ok(binop_rounded(op, a, b)?.value)
}

/// As [`fl_binop`], but an inexact result below the smallest normal magnitude
/// is reported as [`FloatError::Underflow`].
pub fn fl_binop_strict(op: BinOp, a: &SoftFloat, b: &SoftFloat) -> Result<SoftFloat, FloatError> {
    let r = binop_rounded(op, a, b)?;
    if r.tiny {
        return Err(FloatError::Underflow(op.name()));
    }
    Ok(r.value)
}

/// Rounds `x` and reports whether the rounding was exact.
pub fn fl_round_exactness(x: &Rational, fmt: Format) -> Result<(SoftFloat, bool), FloatError> {
    let r = round_rational(x, fmt, Rounding::Nearest)?;
    Ok((r.value, !r.inexact))
}

/// Every nonnegative member of F_{L,K} in `[a, b]`, ascending. Callers bound
/// the count first with [`count_in_interval`].
pub fn enumerate_nonneg(a: &Rational, b: &Rational, fmt: Format) -> Vec<Rational> {
    let mut out = Vec::new();
    if b.is_negative() {
        return out;
    }
    let l = fmt.prec as usize;
    if !a.is_positive() {
        out.push(Rational::zero());
    }
    let start = if a.is_positive() { floor_log2(a).max(fmt.emin()) } else { fmt.emin() };
    for e in start..=fmt.emax() {
        let lo_sig: u64 = if e == fmt.emin() { 1 } else { 1 << l };
        let hi_sig: u64 = (1u64 << (l + 1)) - 1;
        let scale = crate::exact::pow2(e - l as i64);
        if Rational::from_integer(BigInt::from(lo_sig)) * &scale > *b {
            break;
        }
        for s in lo_sig..=hi_sig {
            let v = Rational::from_integer(BigInt::from(s)) * &scale;
            if v > *b {
                break;
            }
            if v >= *a {
                out.push(v);
            }
        }
    }
    out
}

/// Number of members of F_{L,K} in `[a, b]` with `0 ≤ a`, counted per binade.
pub fn count_in_interval(a: &Rational, b: &Rational, fmt: Format) -> BigUint {
    let mut n = BigUint::zero();
    if a > b || b.is_negative() {
        return n;
    }
    if !a.is_positive() {
        n += 1u32;
    }
    if !b.is_positive() {
        return n;
    }
    let l = fmt.prec as i64;
    let ea = if a.is_positive() { floor_log2(a).max(fmt.emin()) } else { fmt.emin() };
    let eb = floor_log2(b).min(fmt.emax());
    if ea > eb {
        return n;
    }
    let part = |e: i64| -> BigUint {
        let scale = crate::exact::pow2(e - l);
        let lo_sig = if e == fmt.emin() { BigInt::one() } else { BigInt::one() << (l as usize) };
        let hi_sig = (BigInt::one() << (l as usize + 1)) - 1;
        let lo = (a / &scale).ceil().to_integer().max(lo_sig);
        let hi = (b / &scale).floor().to_integer().min(hi_sig);
        if hi >= lo {
            (hi - lo + 1u32).magnitude().clone()
        } else {
            BigUint::zero()
        }
    };
    n += part(ea);
    if eb > ea {
        n += part(eb);
        // interior binades are normal and full
        n += BigUint::from((eb - ea - 1) as u64) << (l as usize);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{int, pow2, rat};

    fn f(x: Rational, l: u32, k: u32) -> SoftFloat {
        fl_round(&x, l, k).unwrap()
    }

    #[test]
    fn representable_fixed_point() {
        assert_eq!(f(rat(1, 2), 2, 4).to_rational(), rat(1, 2));
        assert_eq!(to_rational(&f(rat(5, 4), 8, 8)), rat(5, 4));
        assert_eq!(to_rational(&SoftFloat::zero(Format::new(3, 3).unwrap())), int(0));
    }

    #[test]
    fn one_third() {
        // one bit after the leading one: candidates 1.0·2^-2 and 1.1·2^-2
        assert_eq!(f(rat(1, 3), 1, 4).to_rational(), rat(3, 8));
        // two bits: 1.01·2^-2 = 5/16 is nearer than 3/8
        assert_eq!(f(rat(1, 3), 2, 4).to_rational(), rat(5, 16));
    }

    #[test]
    fn overflow_signals() {
        assert!(matches!(fl_round(&int(1 << 20), 4, 4), Err(FloatError::Range(_))));
        let fmt = Format::new(4, 4).unwrap();
        assert_eq!(fl_round_in(&fmt.max_value(), fmt).unwrap().to_rational(), fmt.max_value());
        assert_eq!(fmt.max_value(), (int(2) - pow2(-4)) * pow2(8));
    }

    #[test]
    fn product_tie_goes_to_even() {
        let fmt = Format::new(2, 4).unwrap();
        let a = fl_round_in(&rat(3, 8), fmt).unwrap();
        // 9/64 sits halfway between 1/8 and 5/32
        assert_eq!(fl_binop(BinOp::Mul, &a, &a).unwrap().to_rational(), rat(1, 8));
    }

    #[test]
    fn simple_ops() {
        let fmt = Format::new(2, 3).unwrap();
        let one = fl_round_in(&int(1), fmt).unwrap();
        assert_eq!(fl_binop(BinOp::Add, &one, &one).unwrap().to_rational(), int(2));
        let zero = SoftFloat::zero(fmt);
        assert_eq!(fl_binop(BinOp::Div, &one, &zero), Err(FloatError::DivisionByZero));
        assert_eq!(fl_binop(BinOp::Sub, &one, &one).unwrap().sign(), 0);
    }

    #[test]
    fn lowest_binade_is_gradual() {
        let fmt = Format::new(2, 3).unwrap();
        let all = enumerate_nonneg(&int(0), &int(2), fmt);
        assert_eq!(all.len(), 21);
        assert_eq!(&all[..4], &[int(0), rat(1, 32), rat(1, 16), rat(3, 32)]);
        assert_eq!(count_in_interval(&int(0), &int(2), fmt), BigUint::from(21u32));
        // tiny inexact result is flagged by the strict variant
        let a = fl_round_in(&rat(1, 8), fmt).unwrap();
        let b = fl_round_in(&rat(5, 8), fmt).unwrap();
        assert!(fl_binop(BinOp::Mul, &a, &b).is_ok());
        assert_eq!(fl_binop_strict(BinOp::Mul, &a, &b), Err(FloatError::Underflow("mul")));
    }

    #[test]
    fn far_apart_addends() {
        let fmt = Format::new(4, 8).unwrap();
        let big = fl_round_in(&int(1), fmt).unwrap();
        let tiny = fl_round_in(&pow2(-40), fmt).unwrap();
        assert_eq!(fl_binop(BinOp::Add, &big, &tiny).unwrap().to_rational(), int(1));
        assert_eq!(fl_binop(BinOp::Sub, &big, &tiny).unwrap().to_rational(), int(1));
        assert_eq!(fl_binop(BinOp::Sub, &tiny, &big).unwrap().to_rational(), int(-1));
    }

    #[test]
    fn ordering_matches_values() {
        let fmt = Format::new(3, 4).unwrap();
        let vals = [rat(-3, 2), rat(-1, 8), int(0), rat(1, 64), rat(7, 4)];
        let sf: Vec<_> = vals.iter().map(|v| fl_round_in(v, fmt).unwrap()).collect();
        for w in sf.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn f32_bridge() {
        for x in [1.0f32, -0.15625, 3.0e10, 1.1754944e-38] {
            let s = SoftFloat::from_f32(x).unwrap();
            assert_eq!(s.to_f32_bits(), Some(x.to_bits()));
        }
    }
}
