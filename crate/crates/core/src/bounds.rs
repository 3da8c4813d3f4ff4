//! Bounding functions: region (ν or its complement χ), value (φ_inf, φ_sup)
//! and safety (S_inf) bounds, the composition rules, and the built-in
//! derivations for polynomials, in_box and in_circle.
//!
//! All bound functions are closed-form trees over the vector γ. Analysis only
//! ever walks the Γ-line γ = λ·γ̂ with λ ∈ (0, 1], so inversion is a
//! one-dimensional problem in λ.

use itertools::Itertools;
use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::errorbounds::{multivariate_safety_numerator, univariate_safety_numerator, Expr, SparsePoly};
use crate::exact::{exact_root, int, pow2, rat, Rational};
use crate::grid::compute_emax;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BoundsError {
    #[error("select_beta is limited to k <= 8 (got {0})")]
    ArityTooLarge(usize),
    #[error("gamma too large: {0}")]
    GammaTooLarge(String),
    #[error("invalid argument split j={j}, l={l}, k={k}")]
    IndexSplitInvalid { j: usize, l: usize, k: usize },
    #[error("invalid description: {0}")]
    Invalid(String),
}

/// Closed-form function of γ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GammaFn {
    Const(Rational),
    Gamma(usize),
    Sum(Vec<GammaFn>),
    Product(Vec<GammaFn>),
    Scale(Rational, Box<GammaFn>),
    Abs(Box<GammaFn>),
    Min(Vec<GammaFn>),
    Max(Vec<GammaFn>),
}

pub fn gconst(v: Rational) -> GammaFn {
    GammaFn::Const(v)
}

pub fn gamma(i: usize) -> GammaFn {
    GammaFn::Gamma(i)
}

pub fn scale(c: Rational, f: GammaFn) -> GammaFn {
    GammaFn::Scale(c, Box::new(f))
}

pub fn gpow(f: GammaFn, d: u32) -> GammaFn {
    match d {
        0 => gconst(int(1)),
        1 => f,
        _ => GammaFn::Product(vec![f; d as usize]),
    }
}

impl GammaFn {
    pub fn eval(&self, g: &[Rational]) -> Rational {
        match self {
            GammaFn::Const(c) => c.clone(),
            GammaFn::Gamma(i) => g[*i].clone(),
            GammaFn::Sum(v) => v.iter().map(|f| f.eval(g)).fold(Rational::zero(), |a, b| a + b),
            GammaFn::Product(v) => v.iter().map(|f| f.eval(g)).fold(Rational::one(), |a, b| a * b),
            GammaFn::Scale(c, f) => c * f.eval(g),
            GammaFn::Abs(f) => f.eval(g).abs(),
            GammaFn::Min(v) => v.iter().map(|f| f.eval(g)).min().expect("empty min"),
            GammaFn::Max(v) => v.iter().map(|f| f.eval(g)).max().expect("empty max"),
        }
    }

    /// Value at γ = λ·γ̂.
    pub fn at(&self, lambda: &Rational, gamma_hat: &[Rational]) -> Rational {
        let g: Vec<Rational> = gamma_hat.iter().map(|h| h * lambda).collect();
        self.eval(&g)
    }

    /// Renumbers γ indices by adding `off`.
    pub fn shift(&self, off: usize) -> GammaFn {
        let m = |v: &Vec<GammaFn>| v.iter().map(|f| f.shift(off)).collect();
        match self {
            GammaFn::Const(c) => GammaFn::Const(c.clone()),
            GammaFn::Gamma(i) => GammaFn::Gamma(i + off),
            GammaFn::Sum(v) => GammaFn::Sum(m(v)),
            GammaFn::Product(v) => GammaFn::Product(m(v)),
            GammaFn::Scale(c, f) => scale(c.clone(), f.shift(off)),
            GammaFn::Abs(f) => GammaFn::Abs(Box::new(f.shift(off))),
            GammaFn::Min(v) => GammaFn::Min(m(v)),
            GammaFn::Max(v) => GammaFn::Max(m(v)),
        }
    }

    /// Coefficients (ascending in λ) when the restriction to the Γ-line is a
    /// polynomial.
    pub fn line_poly(&self, gamma_hat: &[Rational]) -> Option<Vec<Rational>> {
        let p = match self {
            GammaFn::Const(c) => vec![c.clone()],
            GammaFn::Gamma(i) => vec![Rational::zero(), gamma_hat[*i].clone()],
            GammaFn::Sum(v) => {
                let mut acc = vec![Rational::zero()];
                for f in v {
                    acc = poly_add(&acc, &f.line_poly(gamma_hat)?);
                }
                acc
            }
            GammaFn::Product(v) => {
                let mut acc = vec![Rational::one()];
                for f in v {
                    acc = poly_mul(&acc, &f.line_poly(gamma_hat)?);
                }
                acc
            }
            GammaFn::Scale(c, f) => f.line_poly(gamma_hat)?.into_iter().map(|a| a * c).collect(),
            GammaFn::Abs(_) | GammaFn::Min(_) | GammaFn::Max(_) => return None,
        };
        Some(trim(p))
    }
}

fn trim(mut p: Vec<Rational>) -> Vec<Rational> {
    while p.len() > 1 && p.last().is_some_and(|c| c.is_zero()) {
        p.pop();
    }
    p
}

fn poly_add(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).cloned().unwrap_or_default() + b.get(i).cloned().unwrap_or_default())
        .collect()
}

fn poly_mul(a: &[Rational], b: &[Rational]) -> Vec<Rational> {
    let mut out = vec![Rational::zero(); a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn binom(n: u32, k: u32) -> BigInt {
    (0..k).fold(BigInt::one(), |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monotone {
    Increasing,
    Decreasing,
}

/// Enclosure of a crossing point λ*: lo ≤ λ* ≤ hi (lo = hi when exact).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bracket {
    pub lo: Rational,
    pub hi: Rational,
}

impl Bracket {
    pub fn is_exact(&self) -> bool {
        self.lo == self.hi
    }
}

/// Where f(λ) = y is crossed on [0, 1], with h(λ) = ±(f(λ) − y) oriented to
/// increase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Crossing {
    /// h ≤ 0 on all of [0, 1]: the constraint holds up to λ = 1.
    NotReached,
    /// h > 0 already at λ = 0.
    Immediate,
    /// h(lo) ≤ 0 < h(hi), or h(lo) = 0 when exact.
    At(Bracket),
}

/// Bisection depth for crossings without a rational closed form.
pub const BISECT_BITS: u32 = 160;

pub fn solve_line(f: &GammaFn, gamma_hat: &[Rational], y: &Rational, dir: Monotone) -> Crossing {
    let h = |l: &Rational| {
        let v = f.at(l, gamma_hat) - y;
        match dir {
            Monotone::Increasing => v,
            Monotone::Decreasing => -v,
        }
    };
    let zero = Rational::zero();
    let one = Rational::one();
    if !h(&one).is_positive() {
        return Crossing::NotReached;
    }
    if h(&zero).is_positive() {
        return Crossing::Immediate;
    }
    if let Some(p) = f.line_poly(gamma_hat) {
        if let Some(r) = exact_crossing(&p, y) {
            if r >= zero && r <= one && h(&r).is_zero() {
                return Crossing::At(Bracket { lo: r.clone(), hi: r });
            }
        }
    }
    let (mut lo, mut hi) = (zero, one);
    for _ in 0..BISECT_BITS {
        let mid = (&lo + &hi) / int(2);
        let v = h(&mid);
        if v.is_zero() {
            return Crossing::At(Bracket { lo: mid.clone(), hi: mid });
        }
        if v.is_positive() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Crossing::At(Bracket { lo, hi })
}

/// Rational solution of p(λ) = y in [0, 1] for degree-1 polynomials and
/// c·(λ+r)^d, when one exists.
fn exact_crossing(p: &[Rational], y: &Rational) -> Option<Rational> {
    let d = p.len() - 1;
    if d == 0 {
        return None;
    }
    if d == 1 {
        return Some((y - &p[0]) / &p[1]);
    }
    let cd = &p[d];
    let r = &p[d - 1] / (cd * int(d as i64));
    let matches = (0..d).all(|i| {
        let want = cd * Rational::from_integer(binom(d as u32, i as u32)) * pow_rat(&r, (d - i) as u32);
        want == p[i]
    });
    if !matches {
        return None;
    }
    let w = y / cd;
    let unit = Rational::zero()..=Rational::one();
    let cands: Vec<Rational> = if w.is_negative() {
        if d % 2 == 0 {
            return None;
        }
        vec![-exact_root(&-w, d as u32)? - &r]
    } else {
        let s = exact_root(&w, d as u32)?;
        if d % 2 == 0 {
            vec![&s - &r, -s - &r]
        } else {
            vec![s - &r]
        }
    };
    cands.into_iter().find(|c| unit.contains(c))
}

fn pow_rat(x: &Rational, e: u32) -> Rational {
    (0..e).fold(Rational::one(), |a, _| a * x)
}

/// ν: volume of the region of uncertainty, or χ: volume of its complement in
/// U_δ. `Empty` means the critical set does not meet the perturbation area.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Region {
    Nu(GammaFn),
    Chi(GammaFn),
    Empty,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoundSet {
    pub delta: Vec<Rational>,
    pub gamma_hat: Vec<Rational>,
    pub region: Region,
    pub phi_inf: GammaFn,
    pub phi_sup: Option<GammaFn>,
    /// N with S_inf(L) = N·2^(−L).
    pub s_inf: Option<Rational>,
}

pub fn volume(delta: &[Rational]) -> Rational {
    delta.iter().map(|d| d * int(2)).fold(Rational::one(), |a, b| a * b)
}

impl BoundSet {
    pub fn k(&self) -> usize {
        self.delta.len()
    }

    pub fn mu(&self) -> Rational {
        volume(&self.delta)
    }

    pub fn gamma_at(&self, lambda: &Rational) -> Vec<Rational> {
        self.gamma_hat.iter().map(|g| g * lambda).collect()
    }

    /// Region bound as a ν function (χ converted by complement).
    pub fn nu(&self) -> GammaFn {
        match &self.region {
            Region::Nu(f) => f.clone(),
            Region::Chi(f) => GammaFn::Sum(vec![gconst(self.mu()), scale(int(-1), f.clone())]),
            Region::Empty => gconst(Rational::zero()),
        }
    }

    pub fn nu_at(&self, lambda: &Rational) -> Rational {
        self.nu().at(lambda, &self.gamma_hat)
    }

    pub fn phi_inf_at(&self, lambda: &Rational) -> Rational {
        self.phi_inf.at(lambda, &self.gamma_hat)
    }

    pub fn s_inf_at(&self, prec: i64) -> Option<Rational> {
        self.s_inf.as_ref().map(|n| n * pow2(-prec))
    }

    pub fn with_safety(mut self, numerator: Rational) -> Self {
        self.s_inf = Some(numerator);
        self
    }

    pub fn with_phi_sup(mut self, f: GammaFn) -> Self {
        self.phi_sup = Some(f);
        self
    }

    /// Halves γ̂ until the region bound at γ̂ is at most μ(U)/2. Composed
    /// bounds start from the components' γ̂, which can be too large.
    pub fn shrink_to_valid(mut self) -> Result<Self, BoundsError> {
        let half = self.mu() / int(2);
        for _ in 0..64 {
            if self.nu_at(&Rational::one()) <= half {
                break;
            }
            self.gamma_hat = self.gamma_at(&rat(1, 2));
        }
        self.validate()?;
        Ok(self)
    }

    /// γ̂ must keep the region strictly smaller than U_δ and φ_inf positive.
    pub fn validate(&self) -> Result<(), BoundsError> {
        if self.gamma_hat.len() != self.delta.len() || self.gamma_hat.iter().any(|g| !g.is_positive()) {
            return Err(BoundsError::Invalid("gamma_hat must be positive, one per coordinate".into()));
        }
        let one = Rational::one();
        let ok = match &self.region {
            Region::Nu(f) => f.at(&one, &self.gamma_hat) < self.mu(),
            Region::Chi(f) => f.at(&one, &self.gamma_hat).is_positive(),
            Region::Empty => true,
        };
        if !ok {
            return Err(BoundsError::GammaTooLarge("region bound reaches mu(U) at gamma_hat".into()));
        }
        if !self.phi_inf_at(&one).is_positive() {
            return Err(BoundsError::GammaTooLarge("phi_inf vanishes at gamma_hat".into()));
        }
        Ok(())
    }
}

/// (f, k, A, δ, emax, t): the predicate, the box A of admissible centers, the
/// perturbation radii and the input value parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredicateDescription {
    pub expr: Expr,
    pub k: usize,
    pub area: Vec<(Rational, Rational)>,
    pub delta: Vec<Rational>,
    pub emax: i64,
    pub t: Rational,
}

impl PredicateDescription {
    pub fn new(expr: Expr, area: Vec<(Rational, Rational)>, delta: Vec<Rational>, t: Rational) -> Result<Self, BoundsError> {
        let k = delta.len();
        if area.len() != k {
            return Err(BoundsError::Invalid("area and delta differ in length".into()));
        }
        if delta.iter().any(|d| !d.is_positive()) {
            return Err(BoundsError::Invalid("delta must be positive".into()));
        }
        if area.iter().any(|(a, b)| a > b) {
            return Err(BoundsError::Invalid("empty area".into()));
        }
        if !(t.is_positive() && t < Rational::one()) {
            return Err(BoundsError::Invalid("t must lie in (0,1)".into()));
        }
        let far: Vec<Rational> = area.iter().map(|(a, b)| a.abs().max(b.abs())).collect();
        let emax = compute_emax(&far, &delta);
        Ok(PredicateDescription { expr, k, area, delta, emax, t })
    }

    /// A single center x̄.
    pub fn at_point(expr: Expr, xbar: &[Rational], delta: Vec<Rational>, t: Rational) -> Result<Self, BoundsError> {
        let area = xbar.iter().map(|x| (x.clone(), x.clone())).collect();
        Self::new(expr, area, delta, t)
    }

    /// Every center allowed by a given emax: |x̄ᵢ| ≤ 2^emax − δᵢ.
    pub fn from_emax(expr: Expr, delta: Vec<Rational>, emax: i64, t: Rational) -> Result<Self, BoundsError> {
        let lim = pow2(emax);
        let mut area = Vec::new();
        for d in &delta {
            let r = &lim - d;
            if r.is_negative() {
                return Err(BoundsError::Invalid(format!("delta exceeds 2^{emax}")));
            }
            area.push((-r.clone(), r));
        }
        let mut desc = Self::new(expr, area, delta, t)?;
        desc.emax = emax;
        Ok(desc)
    }

    /// Raises emax (a larger emax is always admissible).
    pub fn with_emax(mut self, emax: i64) -> Result<Self, BoundsError> {
        if emax < self.emax {
            return Err(BoundsError::Invalid(format!("emax {emax} below required {}", self.emax)));
        }
        self.emax = emax;
        Ok(self)
    }

    pub fn mu(&self) -> Rational {
        volume(&self.delta)
    }
}

/// Maximal tuples: β is kept when some permutation of coordinates makes it
/// the reverse-lexicographic maximum of I.
pub fn select_beta(set: &[Vec<u32>], k: usize) -> Result<Vec<Vec<u32>>, BoundsError> {
    if k > 8 {
        return Err(BoundsError::ArityTooLarge(k));
    }
    if set.is_empty() || set.iter().any(|b| b.len() != k) {
        return Err(BoundsError::Invalid("index set must be nonempty with tuples of length k".into()));
    }
    let mut out: Vec<Vec<u32>> = Vec::new();
    for perm in (0..k).permutations(k) {
        let key = |b: &Vec<u32>| perm.iter().rev().map(|&i| b[i]).collect::<Vec<u32>>();
        let best = set.iter().max_by_key(|b| key(b)).unwrap();
        if !out.contains(best) {
            out.push(best.clone());
        }
    }
    out.sort();
    Ok(out)
}

fn revlex_key(b: &[u32]) -> Vec<u32> {
    b.iter().rev().copied().collect()
}

/// Member of I_max with the smallest β*, ties going to the reverse-lex
/// largest under the identity permutation.
pub fn choose_beta(set: &[Vec<u32>], k: usize) -> Result<Vec<u32>, BoundsError> {
    let max = select_beta(set, k)?;
    let best = max
        .into_iter()
        .min_by(|a, b| {
            let sa: u32 = a.iter().sum();
            let sb: u32 = b.iter().sum();
            sa.cmp(&sb).then_with(|| revlex_key(b).cmp(&revlex_key(a)))
        })
        .unwrap();
    Ok(best)
}

fn degree_of(coeffs: &[Rational]) -> Option<usize> {
    coeffs.iter().rposition(|c| !c.is_zero())
}

/// Univariate polynomial Σ aᵢxⁱ: ν = 2dγ, φ = |a_d|γ^d, γ̂ = δ/(2d).
pub fn bounds_univariate(coeffs: &[Rational], desc: &PredicateDescription) -> Result<BoundSet, BoundsError> {
    if desc.k != 1 {
        return Err(BoundsError::Invalid("univariate bounds need k = 1".into()));
    }
    let d = degree_of(coeffs).filter(|d| *d >= 1).ok_or_else(|| BoundsError::Invalid("degree must be >= 1".into()))?;
    let ad = coeffs[d].abs();
    let b = BoundSet {
        delta: desc.delta.clone(),
        gamma_hat: vec![&desc.delta[0] / int(2 * d as i64)],
        region: Region::Nu(scale(int(2 * d as i64), gamma(0))),
        phi_inf: scale(ad, gpow(gamma(0), d as u32)),
        phi_sup: None,
        s_inf: Some(univariate_safety_numerator(d as u32, coeffs, desc.emax)),
    };
    b.validate()?;
    Ok(b)
}

/// Multivariate polynomial for a chosen β ∈ I_max: φ = |a_β|·γ^β and
/// χ = Π 2(δᵢ − βᵢγᵢ), γ̂ᵢ = δᵢ/(2β̂).
pub fn bounds_multivariate(poly: &SparsePoly, beta: &[u32], desc: &PredicateDescription) -> Result<BoundSet, BoundsError> {
    let k = desc.k;
    check_beta(poly, beta, k)?;
    let bhat = *beta.iter().max().unwrap();
    let gamma_hat: Vec<Rational> = desc.delta.iter().map(|d| d / int(2 * bhat as i64)).collect();
    let chi = GammaFn::Product(
        (0..k)
            .map(|i| {
                let inner = GammaFn::Sum(vec![gconst(desc.delta[i].clone()), scale(-int(beta[i] as i64), gamma(i))]);
                scale(int(2), inner)
            })
            .collect(),
    );
    let phi = scale(
        poly.terms[beta].abs(),
        GammaFn::Product((0..k).map(|i| gpow(gamma(i), beta[i])).collect()),
    );
    let b = BoundSet {
        delta: desc.delta.clone(),
        gamma_hat,
        region: Region::Chi(chi),
        phi_inf: phi,
        phi_sup: None,
        s_inf: Some(multivariate_safety(poly, desc.emax)),
    };
    b.validate()?;
    Ok(b)
}

/// The cubical case: all δᵢ equal and γᵢ = γ₁; χ = 2^k(δ₁ − β̂γ₁)^k.
pub fn bounds_multivariate_cubical(poly: &SparsePoly, beta: &[u32], desc: &PredicateDescription) -> Result<BoundSet, BoundsError> {
    let k = desc.k;
    check_beta(poly, beta, k)?;
    if desc.delta.iter().any(|d| *d != desc.delta[0]) {
        return Err(BoundsError::Invalid("cubical bounds need equal deltas".into()));
    }
    let bhat = *beta.iter().max().unwrap();
    let bstar: u32 = beta.iter().sum();
    let d1 = desc.delta[0].clone();
    let gh = &d1 / int(2 * bhat as i64);
    let chi = scale(
        pow2(k as i64),
        gpow(GammaFn::Sum(vec![gconst(d1.clone()), scale(-int(bhat as i64), gamma(0))]), k as u32),
    );
    let b = BoundSet {
        delta: desc.delta.clone(),
        gamma_hat: vec![gh; k],
        region: Region::Chi(chi),
        phi_inf: scale(poly.terms[beta].abs(), gpow(gamma(0), bstar)),
        phi_sup: None,
        s_inf: Some(multivariate_safety(poly, desc.emax)),
    };
    b.validate()?;
    Ok(b)
}

fn check_beta(poly: &SparsePoly, beta: &[u32], k: usize) -> Result<(), BoundsError> {
    if poly.nvars != k || beta.len() != k {
        return Err(BoundsError::Invalid("arity mismatch".into()));
    }
    let set: Vec<Vec<u32>> = poly.terms.keys().cloned().collect();
    if !select_beta(&set, k)?.iter().any(|b| b == beta) {
        return Err(BoundsError::Invalid(format!("{beta:?} is not a maximal tuple")));
    }
    if beta.iter().all(|b| *b == 0) {
        return Err(BoundsError::Invalid("constant polynomial".into()));
    }
    Ok(())
}

fn multivariate_safety(poly: &SparsePoly, emax: i64) -> Rational {
    multivariate_safety_numerator(poly.total_degree(), poly.terms.len() as u64, &poly.max_abs_coeff(), emax)
}

/// c₁|g| ≤ |f| ≤ c₂|g|. With `c2 = None` only the lower bound carries over.
pub fn rule_sandwich(g: &BoundSet, c1: &Rational, c2: Option<&Rational>) -> Result<BoundSet, BoundsError> {
    if !c1.is_positive() || c2.is_some_and(|c| c < c1) {
        return Err(BoundsError::Invalid("need 0 < c1 <= c2".into()));
    }
    Ok(BoundSet {
        delta: g.delta.clone(),
        gamma_hat: g.gamma_hat.clone(),
        region: g.region.clone(),
        phi_inf: scale(c1.clone(), g.phi_inf.clone()),
        phi_sup: match (c2, &g.phi_sup) {
            (Some(c), Some(s)) => Some(scale(c.clone(), s.clone())),
            _ => None,
        },
        s_inf: None,
    })
}

/// Region of f = g ∘ h where g takes arguments 0..l and h takes j..k.
fn combine_region(g: &BoundSet, h: &BoundSet, j: usize, l: usize, k: usize) -> Result<(Vec<Rational>, Vec<Rational>, Region), BoundsError> {
    if !(j <= l && l <= k && g.k() == l && h.k() == k - j) {
        return Err(BoundsError::IndexSplitInvalid { j, l, k });
    }
    let mut delta = Vec::with_capacity(k);
    let mut gh = Vec::with_capacity(k);
    for i in 0..k {
        let from_g = (i < l).then(|| (&g.delta[i], &g.gamma_hat[i]));
        let from_h = (i >= j).then(|| (&h.delta[i - j], &h.gamma_hat[i - j]));
        match (from_g, from_h) {
            (Some((dg, gg)), Some((dh, ghh))) => {
                if dg != dh {
                    return Err(BoundsError::Invalid(format!("shared coordinate {i} has different deltas")));
                }
                delta.push(dg.clone());
                gh.push(gg.min(ghh).clone());
            }
            (Some((d, g0)), None) | (None, Some((d, g0))) => {
                delta.push(d.clone());
                gh.push(g0.clone());
            }
            (None, None) => unreachable!(),
        }
    }
    let region = match (&g.region, &h.region) {
        (Region::Empty, Region::Empty) => Region::Empty,
        (Region::Chi(cg), Region::Chi(ch)) if j == l => Region::Chi(GammaFn::Product(vec![cg.clone(), ch.shift(j)])),
        _ => {
            let right = volume(&delta[l..]);
            let left = volume(&delta[..j]);
            let sum = GammaFn::Sum(vec![scale(right, g.nu()), scale(left, h.nu().shift(j))]);
            Region::Nu(GammaFn::Min(vec![gconst(volume(&delta)), sum]))
        }
    };
    Ok((delta, gh, region))
}

/// f = g·h.
pub fn rule_product(g: &BoundSet, h: &BoundSet, j: usize, l: usize, k: usize) -> Result<BoundSet, BoundsError> {
    let (delta, gamma_hat, region) = combine_region(g, h, j, l, k)?;
    let b = BoundSet {
        delta,
        gamma_hat,
        region,
        phi_inf: GammaFn::Product(vec![g.phi_inf.clone(), h.phi_inf.shift(j)]),
        phi_sup: match (&g.phi_sup, &h.phi_sup) {
            (Some(a), Some(b)) => Some(GammaFn::Product(vec![a.clone(), b.shift(j)])),
            _ => None,
        },
        s_inf: None,
    };
    b.shrink_to_valid()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MinMax {
    Min,
    Max,
}

/// f = min(g, h) or max(g, h).
pub fn rule_minmax(g: &BoundSet, h: &BoundSet, which: MinMax, j: usize, l: usize, k: usize) -> Result<BoundSet, BoundsError> {
    let (delta, gamma_hat, region) = combine_region(g, h, j, l, k)?;
    let pick = |a: GammaFn, b: GammaFn| match which {
        MinMax::Min => GammaFn::Min(vec![a, b]),
        MinMax::Max => GammaFn::Max(vec![a, b]),
    };
    let b = BoundSet {
        delta,
        gamma_hat,
        region,
        phi_inf: pick(g.phi_inf.clone(), h.phi_inf.shift(j)),
        phi_sup: match (&g.phi_sup, &h.phi_sup) {
            (Some(a), Some(b)) => Some(pick(a.clone(), b.shift(j))),
            _ => None,
        },
        s_inf: None,
    };
    b.shrink_to_valid()
}

/// Query point perturbed inside a fixed box of side lengths `widths`:
/// ν = 4(γ_x δ_y + γ_y δ_x), φ = min{|γ_x² − γ_x w_x|, |γ_y² − γ_y w_y|}.
pub fn bounds_inbox_direct(delta: &[Rational], widths: &[Rational]) -> Result<BoundSet, BoundsError> {
    if delta.len() != 2 || widths.len() != 2 {
        return Err(BoundsError::Invalid("in_box direct bounds are planar".into()));
    }
    let (dx, dy) = (&delta[0], &delta[1]);
    let harmonic = dx * dy / (dx + dy);
    let g0 = widths[0].clone().min(widths[1].clone()).min(harmonic) / int(2);
    let nu = scale(int(4), GammaFn::Sum(vec![scale(dy.clone(), gamma(0)), scale(dx.clone(), gamma(1))]));
    let term = |i: usize, w: &Rational| {
        GammaFn::Abs(Box::new(GammaFn::Sum(vec![gpow(gamma(i), 2), scale(-w.clone(), gamma(i))])))
    };
    let b = BoundSet {
        delta: delta.to_vec(),
        gamma_hat: vec![g0.clone(), g0],
        region: Region::Nu(nu),
        phi_inf: GammaFn::Min(vec![term(0, &widths[0]), term(1, &widths[1])]),
        phi_sup: None,
        s_inf: None,
    };
    b.validate()?;
    Ok(b)
}

/// Rational upper bound on π.
pub fn pi_upper() -> Rational {
    rat(355, 113)
}

/// Query point against a fixed circle of radius r:
/// ν = 4π γ_x min{δ_x, δ_y}, φ = γ_x(2r − γ_x).
pub fn bounds_incircle_direct(delta: &[Rational], r: &Rational) -> Result<BoundSet, BoundsError> {
    if delta.len() != 2 || !r.is_positive() {
        return Err(BoundsError::Invalid("in_circle direct bounds are planar with r > 0".into()));
    }
    let dmin = delta[0].clone().min(delta[1].clone());
    let dmax = delta[0].clone().max(delta[1].clone());
    let g0 = r.clone().min(dmax / pi_upper()) / int(2);
    let b = BoundSet {
        delta: delta.to_vec(),
        gamma_hat: vec![g0.clone(), g0],
        region: Region::Nu(scale(int(4) * pi_upper() * dmin, gamma(0))),
        phi_inf: GammaFn::Sum(vec![scale(int(2) * r, gamma(0)), scale(int(-1), gpow(gamma(0), 2))]),
        phi_sup: None,
        s_inf: None,
    };
    b.validate()?;
    Ok(b)
}

/// Query point against a fixed box with half-lengths ℓ:
/// φ = min_j (2ℓ_j − γ_j)γ_j, χ = Π(2δᵢ − 4γᵢ), γ̂ᵢ = min(δᵢ/4, ℓᵢ/2).
pub fn bounds_inbox_topdown(ell: &[Rational], delta: &[Rational]) -> Result<BoundSet, BoundsError> {
    if ell.len() != delta.len() || ell.is_empty() || ell.iter().any(|l| !l.is_positive()) {
        return Err(BoundsError::Invalid("need one positive half-length per coordinate".into()));
    }
    let k = ell.len();
    let gamma_hat = (0..k).map(|i| (&delta[i] / int(4)).min(&ell[i] / int(2))).collect();
    let chi = GammaFn::Product(
        (0..k)
            .map(|i| GammaFn::Sum(vec![gconst(&delta[i] * int(2)), scale(int(-4), gamma(i))]))
            .collect(),
    );
    let phi = GammaFn::Min(
        (0..k)
            .map(|j| GammaFn::Sum(vec![scale(&ell[j] * int(2), gamma(j)), scale(int(-1), gpow(gamma(j), 2))]))
            .collect(),
    );
    let b = BoundSet {
        delta: delta.to_vec(),
        gamma_hat,
        region: Region::Chi(chi),
        phi_inf: phi,
        phi_sup: None,
        s_inf: None,
    };
    b.validate()?;
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errorbounds::{parse_expr, x};

    fn univ(coeffs: &[Rational], delta: Rational) -> BoundSet {
        let desc = PredicateDescription::from_emax(x(0), vec![delta], 1, rat(1, 2)).unwrap();
        bounds_univariate(coeffs, &desc).unwrap()
    }

    fn sweep() -> Vec<Rational> {
        (0..20).map(|i| pow2(-i)).collect()
    }

    #[test]
    fn select_beta_examples() {
        let a = select_beta(&[vec![2, 0], vec![0, 1]], 2).unwrap();
        assert_eq!(a, vec![vec![0, 1], vec![2, 0]]);
        assert_eq!(select_beta(&[vec![3, 1]], 2).unwrap(), vec![vec![3, 1]]);
        let c = select_beta(&[vec![1, 1], vec![0, 1], vec![1, 0]], 2).unwrap();
        assert_eq!(c, vec![vec![1, 1]]);
        assert_eq!(select_beta(&[vec![0; 9]], 9), Err(BoundsError::ArityTooLarge(9)));
        assert_eq!(choose_beta(&[vec![2, 0], vec![0, 1]], 2).unwrap(), vec![0, 1]);
    }

    #[test]
    fn univariate_forms() {
        let b = univ(&[int(0), int(1)], int(1));
        let g = rat(1, 3);
        assert_eq!(b.nu().eval(&[g.clone()]), rat(2, 3));
        assert_eq!(b.phi_inf.eval(&[g]), rat(1, 3));
        let b3 = univ(&[int(0), int(0), int(0), int(2)], int(1));
        assert_eq!(b3.phi_inf.eval(&[rat(1, 4)]), rat(1, 32));
        assert_eq!(b3.s_inf.clone().unwrap(), int(5) * int(2) * pow2(5));
    }

    #[test]
    fn nu_inverse_round_trip() {
        let b = univ(&[int(1), int(0), int(3)], int(1));
        for l in sweep() {
            let y = b.nu_at(&l);
            match solve_line(&b.nu(), &b.gamma_hat, &y, Monotone::Increasing) {
                Crossing::At(br) => assert!(br.is_exact() && br.lo == l),
                Crossing::NotReached => assert_eq!(l, int(1)),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn bisection_brackets_irrational_crossings() {
        // λ² + λ = 1 has no rational root
        let f = GammaFn::Sum(vec![gpow(gamma(0), 2), gamma(0)]);
        match solve_line(&f, &[int(1)], &int(1), Monotone::Increasing) {
            Crossing::At(b) => {
                assert_eq!(&b.hi - &b.lo, pow2(-(BISECT_BITS as i64)));
                assert!(f.eval(&[b.lo.clone()]) < int(1) && f.eval(&[b.hi]) > int(1));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn affine_power_inverse_is_exact() {
        // 4(1 − λ/2)² = 9/4 at λ = 1/2
        let f = scale(int(4), gpow(GammaFn::Sum(vec![gconst(int(1)), scale(rat(-1, 2), gamma(0))]), 2));
        let c = solve_line(&f, &[int(1)], &rat(9, 4), Monotone::Decreasing);
        assert_eq!(c, Crossing::At(Bracket { lo: rat(1, 2), hi: rat(1, 2) }));
    }

    fn x1x2() -> (SparsePoly, PredicateDescription) {
        let e = parse_expr("(mul x0 x1)").unwrap();
        let p = SparsePoly::expand(&e, 2).unwrap();
        let d = PredicateDescription::from_emax(e, vec![int(1), int(1)], 1, rat(1, 2)).unwrap();
        (p, d)
    }

    #[test]
    fn multivariate_example() {
        let (p, d) = x1x2();
        let b = bounds_multivariate(&p, &[1, 1], &d).unwrap();
        let g = [rat(1, 4), rat(1, 4)];
        assert_eq!(b.phi_inf.eval(&g), rat(1, 16));
        match &b.region {
            Region::Chi(c) => {
                assert_eq!(c.eval(&g), rat(9, 4));
                assert_eq!(c.eval(&[int(0), int(0)]), d.mu());
            }
            _ => panic!(),
        }
        let cube = bounds_multivariate_cubical(&p, &[1, 1], &d).unwrap();
        assert_eq!(cube.gamma_hat, vec![rat(1, 2), rat(1, 2)]);
        assert!(bounds_multivariate(&p, &[1, 0], &d).is_err());
    }

    #[test]
    fn product_rule_matches_monomial() {
        let (p, d) = x1x2();
        let direct = bounds_multivariate(&p, &[1, 1], &d).unwrap();
        let one = PredicateDescription::from_emax(x(0), vec![int(1)], 1, rat(1, 2)).unwrap();
        let xi = bounds_multivariate(&SparsePoly::var(1, 0), &[1], &one).unwrap();
        let prod = rule_product(&xi, &xi, 1, 1, 2).unwrap();
        let (Region::Chi(a), Region::Chi(b)) = (&direct.region, &prod.region) else { panic!() };
        for l in sweep() {
            let g = direct.gamma_at(&l);
            assert_eq!(a.eval(&g), b.eval(&g));
            assert_eq!(direct.phi_inf.eval(&g), prod.phi_inf.eval(&g));
        }
        assert_eq!(b.eval(&[rat(1, 4), rat(1, 4)]), rat(9, 4));
    }

    #[test]
    fn shared_arguments_add_volumes() {
        let b = univ(&[int(0), int(1)], int(1));
        let f = rule_product(&b, &b, 0, 1, 1).unwrap();
        let g = [rat(1, 8)];
        assert_eq!(f.gamma_hat, vec![rat(1, 4)]);
        assert_eq!(f.nu().eval(&g), rat(1, 2));
        assert_eq!(f.phi_inf.eval(&g), rat(1, 64));
        assert_eq!(f.nu().eval(&[int(3)]), int(2));
        assert!(rule_product(&b, &b, 1, 0, 1).is_err());
    }

    #[test]
    fn sandwich_and_minmax() {
        let b = univ(&[int(0), int(1)], int(1)).with_phi_sup(gamma(0));
        let s = rule_sandwich(&b, &int(2), Some(&int(3))).unwrap();
        assert_eq!(s.phi_inf.eval(&[rat(1, 4)]), rat(1, 2));
        assert_eq!(s.phi_sup.unwrap().eval(&[rat(1, 4)]), rat(3, 4));
        assert_eq!(s.region, b.region);
        let id = rule_sandwich(&b, &int(1), Some(&int(1))).unwrap();
        assert_eq!(id.phi_inf.eval(&[rat(1, 5)]), rat(1, 5));
        let lower = rule_sandwich(&b, &int(2), None).unwrap();
        assert!(lower.phi_sup.is_none());

        let sq = univ(&[int(0), int(0), int(1)], int(1));
        let mn = rule_minmax(&b, &sq, MinMax::Min, 0, 1, 1).unwrap();
        let mx = rule_minmax(&b, &sq, MinMax::Max, 0, 1, 1).unwrap();
        assert_eq!(mn.phi_inf.eval(&[rat(1, 2)]), rat(1, 4));
        assert_eq!(mx.phi_inf.eval(&[rat(1, 2)]), rat(1, 2));
        let same = rule_minmax(&b, &b, MinMax::Max, 0, 1, 1).unwrap();
        assert_eq!(same.phi_inf.eval(&[rat(1, 3)]), b.phi_inf.eval(&[rat(1, 3)]));
    }

    #[test]
    fn inbox_direct_example() {
        let b = bounds_inbox_direct(&[int(1), int(1)], &[int(2), int(2)]).unwrap();
        assert_eq!(b.nu().eval(&[rat(1, 8), rat(1, 8)]), int(1));
        let GammaFn::Min(terms) = &b.phi_inf else { panic!() };
        assert_eq!(terms[0].eval(&[rat(1, 4), int(0)]), rat(7, 16));
        assert!(b.nu_at(&pow2(-30)) < pow2(-20));
    }

    #[test]
    fn incircle_direct_example() {
        let b = bounds_incircle_direct(&[int(1), int(2)], &int(1)).unwrap();
        assert_eq!(b.phi_inf.eval(&[rat(1, 2), int(0)]), rat(3, 4));
        let nu = b.nu().eval(&[rat(1, 8), int(0)]);
        assert_eq!(nu, pi_upper() / int(2));
        assert!(b.phi_inf_at(&pow2(-40)) < pow2(-35));
    }

    #[test]
    fn inbox_topdown_example() {
        let one = bounds_inbox_topdown(&[int(1)], &[int(1)]).unwrap();
        assert_eq!(one.phi_inf.eval(&[rat(1, 4)]), rat(7, 16));
        let two = bounds_inbox_topdown(&[int(1), int(1)], &[int(1), int(1)]).unwrap();
        let Region::Chi(c) = &two.region else { panic!() };
        assert_eq!(c.eval(&[rat(1, 8), rat(1, 8)]), rat(9, 4));
        assert_eq!(c.eval(&[int(0), int(0)]), int(4));
    }

    #[test]
    fn sweep_invariants() {
        let (p, d) = x1x2();
        let sets = vec![
            univ(&[int(-1), int(0), int(1)], int(1)),
            bounds_multivariate(&p, &[1, 1], &d).unwrap(),
            bounds_inbox_topdown(&[rat(1, 2), rat(1, 2)], &[rat(1, 2), rat(1, 2)]).unwrap(),
            bounds_inbox_direct(&[int(1), int(1)], &[int(2), int(2)]).unwrap(),
            bounds_incircle_direct(&[int(1), int(1)], &int(1)).unwrap(),
        ];
        for b in &sets {
            let mut prev: Option<(Rational, Rational)> = None;
            for l in sweep().into_iter().rev() {
                let nu = b.nu_at(&l);
                let phi = b.phi_inf_at(&l);
                assert!(!nu.is_negative() && phi.is_positive());
                if let Some((pn, pp)) = prev {
                    assert!(nu >= pn && phi >= pp);
                }
                prev = Some((nu, phi));
            }
        }
    }

    #[test]
    fn description_emax() {
        let d = PredicateDescription::at_point(x(0), &[rat(1, 2)], vec![int(1)], rat(1, 2)).unwrap();
        assert_eq!(d.emax, 1);
        assert!(d.clone().with_emax(0).is_err());
        assert_eq!(d.with_emax(3).unwrap().emax, 3);
        assert!(PredicateDescription::at_point(x(0), &[int(0)], vec![int(0)], rat(1, 2)).is_err());
    }
}
