//! Quantified relations: from a predicate description and its bounds derive
//! the precision L_f(p) and exponent length K_f(p), and back from (L, K) to the
//! guaranteed success probability.

use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bounds::{solve_line, BoundSet, BoundsError, Crossing, GammaFn, Monotone, PredicateDescription, Region};
use crate::errorbounds::{Expr, SparsePoly};
use crate::exact::{ceil_log2, floor_log2, int, is_dyadic, pow2, root_bracket, Rational};
use crate::grid::grid_unit;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QrError {
    #[error("not analyzable: missing {0}")]
    NotAnalyzable(String),
    #[error("probability must lie in (0,1)")]
    InvalidProbability,
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

/// Steps 1–6 and their intermediates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArithmeticRequirement {
    pub p: Rational,
    /// ε_ν = (1−p)·μ(U); for a χ bound the budget is μ(U) − ε_ν.
    pub eps_nu: Rational,
    pub region: &'static str,
    pub lambda: Rational,
    /// λ was taken at the end of the Γ-line because the budget exceeds ν(γ̂).
    pub clamped: bool,
    pub lambda_exact: bool,
    pub gamma: Vec<Rational>,
    pub t_gamma: Vec<Rational>,
    pub phi: Rational,
    pub l_safe: i64,
    pub l_grid: i64,
    pub l_f: i64,
    pub k_f: i64,
}

fn rs(v: &Rational) -> String {
    v.to_string()
}

impl ArithmeticRequirement {
    pub fn to_json(&self) -> Value {
        json!({
            "p": rs(&self.p),
            "eps_nu": rs(&self.eps_nu),
            "region": self.region,
            "lambda": rs(&self.lambda),
            "lambda_clamped": self.clamped,
            "gamma": self.gamma.iter().map(rs).collect::<Vec<_>>(),
            "t_gamma": self.t_gamma.iter().map(rs).collect::<Vec<_>>(),
            "phi": rs(&self.phi),
            "L_safe": self.l_safe,
            "L_grid": self.l_grid,
            "L_f": self.l_f,
            "K_f": self.k_f,
        })
    }
}

/// L_grid = emax − 1 − ⌊log₂(min{t, 1−t}·minᵢ γᵢ)⌋.
pub fn lgrid(gamma: &[Rational], t: &Rational, emax: i64) -> i64 {
    let one_minus = Rational::one() - t;
    let m = if *t < one_minus { t.clone() } else { one_minus };
    let g = gamma.iter().min().expect("empty gamma").clone();
    emax - 1 - floor_log2(&(m * g))
}

/// ⌈log₂(N/φ)⌉, at least 1.
pub fn lsafe_from_phi(numerator: &Rational, phi: &Rational) -> i64 {
    ceil_log2(&(numerator / phi)).max(1)
}

/// Smallest K with v ≤ S_sup(K) = 2^(2^(K−1)) − S_inf, and K ≥ 2.
pub fn k_for_magnitude(v: &Rational, s_inf: &Rational) -> i64 {
    let total = v + s_inf;
    if !total.is_positive() {
        return 2;
    }
    let c = ceil_log2(&total);
    if c <= 1 {
        2
    } else {
        (1 + ceil_log2(&int(c))).max(2)
    }
}

/// Smallest K whose format holds the grid: emax + 1 < 2^(K−1) and
/// emax − 1 ≥ 1 − 2^(K−1).
pub fn k_for_grid(emax: i64) -> i64 {
    (2..64).find(|&k| emax + 1 < (1i64 << (k - 1)) && emax - 1 >= 1 - (1i64 << (k - 1))).unwrap()
}

/// Lower bound on the spacing of every intermediate value of `e` evaluated
/// on grid inputs with unit τ at precision L. None when a division occurs.
pub fn min_quantum(e: &Expr, tau: &Rational, prec: u32) -> Option<Rational> {
    // Ok(None): exact zero, no constraint
    fn go(e: &Expr, tau: &Rational, prec: u32) -> Result<Option<Rational>, ()> {
        let both = |a: &Expr, b: &Expr, f: fn(Rational, Rational) -> Rational| -> Result<Option<Rational>, ()> {
            Ok(match (go(a, tau, prec)?, go(b, tau, prec)?) {
                (Some(x), Some(y)) => Some(f(x, y)),
                (x, None) | (None, x) => x,
            })
        };
        match e {
            Expr::Const(c) if c.is_zero() => Ok(None),
            Expr::Const(c) => {
                let coarse = pow2(floor_log2(&c.abs()) - prec as i64);
                if is_dyadic(c) {
                    let v2 = c.numer().trailing_zeros().unwrap_or(0) as i64 - (c.denom().bits() as i64 - 1);
                    Ok(Some(coarse.max(pow2(v2))))
                } else {
                    Ok(Some(coarse))
                }
            }
            Expr::Input(_) => Ok(Some(tau.clone())),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Min(a, b) | Expr::Max(a, b) => both(a, b, |x, y| x.min(y)),
            Expr::Mul(a, b) => match (go(a, tau, prec)?, go(b, tau, prec)?) {
                (Some(x), Some(y)) => Ok(Some(x * y)),
                _ => Ok(None),
            },
            Expr::Abs(a) => go(a, tau, prec),
            Expr::Div(_, _) => Err(()),
        }
    }
    go(e, tau, prec).ok().map(|q| q.unwrap_or_else(|| tau.clone()))
}

/// Smallest K whose smallest normal magnitude lies below every nonzero
/// intermediate, so no strict underflow can occur.
pub fn k_for_underflow(e: &Expr, emax: i64, prec: i64) -> i64 {
    let tau = grid_unit(emax, prec);
    match min_quantum(e, &tau, prec as u32) {
        None => 2,
        Some(q) => {
            let need = 1 - floor_log2(&q).min(0);
            (2..64).find(|&k| (1i64 << (k - 1)) >= need).unwrap_or(64)
        }
    }
}

fn check_p(p: &Rational) -> Result<(), QrError> {
    if p.is_positive() && *p < Rational::one() {
        Ok(())
    } else {
        Err(QrError::InvalidProbability)
    }
}

fn s_inf_numerator(bounds: &BoundSet) -> Result<&Rational, QrError> {
    bounds.s_inf.as_ref().ok_or_else(|| QrError::NotAnalyzable("S_inf".into()))
}

/// Steps 1–2: the largest λ whose region stays within the budget.
fn lambda_for(bounds: &BoundSet, p: &Rational) -> (Rational, bool, bool) {
    let mu = bounds.mu();
    let one = Rational::one();
    let crossing = match &bounds.region {
        Region::Empty => return (one, false, true),
        Region::Nu(f) => solve_line(f, &bounds.gamma_hat, &((one.clone() - p) * &mu), Monotone::Increasing),
        Region::Chi(f) => solve_line(f, &bounds.gamma_hat, &(p * &mu), Monotone::Decreasing),
    };
    match crossing {
        Crossing::NotReached => (one, true, true),
        Crossing::At(b) => {
            let exact = b.is_exact();
            (b.lo, false, exact)
        }
        // the region bound already exceeds the budget at γ = 0
        Crossing::Immediate => (Rational::zero(), false, true),
    }
}

/// The method of quantified relations.
pub fn quantified_relations(
    desc: &PredicateDescription,
    bounds: &BoundSet,
    p: &Rational,
) -> Result<ArithmeticRequirement, QrError> {
    check_p(p)?;
    let n = s_inf_numerator(bounds)?;
    let (lambda, clamped, exact) = lambda_for(bounds, p);
    if lambda.is_zero() {
        return Err(QrError::NotAnalyzable("region bound inverse (nu(0) > eps)".into()));
    }
    let gamma = bounds.gamma_at(&lambda);
    let t_gamma: Vec<Rational> = gamma.iter().map(|g| g * &desc.t).collect();
    let phi = bounds.phi_inf.eval(&t_gamma);
    if !phi.is_positive() {
        return Err(QrError::NotAnalyzable("phi_inf positive at t*gamma".into()));
    }
    let l_safe = lsafe_from_phi(n, &phi);
    let l_grid = if bounds.region == Region::Empty { 0 } else { lgrid(&gamma, &desc.t, desc.emax) };
    let l_f = l_safe.max(l_grid);
    let k_f = exponent_for(desc, bounds, &t_gamma, l_f)?;
    Ok(ArithmeticRequirement {
        p: p.clone(),
        eps_nu: (Rational::one() - p) * bounds.mu(),
        region: match bounds.region {
            Region::Nu(_) => "nu",
            Region::Chi(_) => "chi",
            Region::Empty => "empty",
        },
        lambda,
        clamped,
        lambda_exact: exact,
        gamma,
        t_gamma,
        phi,
        l_safe,
        l_grid,
        l_f,
        k_f,
    })
}

fn exponent_for(desc: &PredicateDescription, bounds: &BoundSet, t_gamma: &[Rational], l: i64) -> Result<i64, QrError> {
    let sup = bounds.phi_sup.as_ref().ok_or_else(|| QrError::NotAnalyzable("phi_sup".into()))?;
    let s = bounds.s_inf_at(l).unwrap_or_default();
    let k_sup = k_for_magnitude(&sup.eval(t_gamma), &s);
    Ok(k_sup.max(k_for_grid(desc.emax)).max(k_for_underflow(&desc.expr, desc.emax, l)))
}

/// K_f(p).
pub fn exponent_requirement(desc: &PredicateDescription, bounds: &BoundSet, p: &Rational) -> Result<i64, QrError> {
    quantified_relations(desc, bounds, p).map(|r| r.k_f)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbabilityReport {
    pub p_inf: Rational,
    pub p_sup: Rational,
    pub p_grid: Rational,
    pub p_f: Rational,
    pub clamped: bool,
}

fn clamp01(v: Rational, flag: &mut bool) -> Rational {
    if v.is_negative() {
        *flag = true;
        Rational::zero()
    } else if v > Rational::one() {
        *flag = true;
        Rational::one()
    } else {
        v
    }
}

/// Probability that U's points lie outside the region for parameter λ.
fn prob_at(bounds: &BoundSet, lambda: &Rational) -> Rational {
    let mu = bounds.mu();
    match &bounds.region {
        Region::Empty => Rational::one(),
        Region::Nu(f) => Rational::one() - f.at(lambda, &bounds.gamma_hat) / &mu,
        Region::Chi(f) => f.at(lambda, &bounds.gamma_hat) / &mu,
    }
}

/// p_inf(L): the λ at which φ_inf(tγ) reaches S_inf(L), pushed through ν.
pub fn p_inf(desc: &PredicateDescription, bounds: &BoundSet, prec: i64) -> Result<Rational, QrError> {
    let s = bounds.s_inf_at(prec).ok_or_else(|| QrError::NotAnalyzable("S_inf".into()))?;
    let one = Rational::one();
    if bounds.region == Region::Empty {
        let phi = bounds.phi_inf.at(&desc.t, &bounds.gamma_hat);
        return Ok(if phi >= s { one } else { Rational::zero() });
    }
    let lam_phi = match solve_line(&bounds.phi_inf, &bounds.gamma_hat, &s, Monotone::Increasing) {
        Crossing::At(b) => b.hi,
        Crossing::Immediate => Rational::zero(),
        Crossing::NotReached => {
            if bounds.phi_inf_at(&one) == s {
                one.clone()
            } else {
                return Ok(Rational::zero());
            }
        }
    };
    let lam = lam_phi / &desc.t;
    if lam > one {
        return Ok(Rational::zero());
    }
    Ok(prob_at(bounds, &lam))
}

/// p_grid(L): the smallest λ with L ≥ L_grid(λγ̂).
pub fn p_grid(desc: &PredicateDescription, bounds: &BoundSet, prec: i64) -> Rational {
    if bounds.region == Region::Empty {
        return Rational::one();
    }
    let one_minus = Rational::one() - &desc.t;
    let m = if desc.t < one_minus { desc.t.clone() } else { one_minus };
    let g = bounds.gamma_hat.iter().min().unwrap();
    let lam = pow2(desc.emax - 1 - prec) / (m * g);
    if lam > Rational::one() {
        return Rational::zero();
    }
    prob_at(bounds, &lam)
}

/// p_sup(K) at precision L: 1 when K avoids overflow for the largest φ_sup
/// and leaves no room for underflow, else 0.
pub fn p_sup(desc: &PredicateDescription, bounds: &BoundSet, prec: i64, expbits: i64) -> Result<Rational, QrError> {
    let sup = bounds.phi_sup.as_ref().ok_or_else(|| QrError::NotAnalyzable("phi_sup".into()))?;
    let s = bounds.s_inf_at(prec).unwrap_or_default();
    let zero_gamma = vec![Rational::zero(); bounds.k()];
    let need = k_for_magnitude(&sup.eval(&zero_gamma), &s)
        .max(k_for_grid(desc.emax))
        .max(k_for_underflow(&desc.expr, desc.emax, prec));
    Ok(if expbits >= need { Rational::one() } else { Rational::zero() })
}

/// p_f(L, K) = min{p_inf(L), p_sup(K), p_grid(L)}.
pub fn probability(desc: &PredicateDescription, bounds: &BoundSet, prec: i64, expbits: i64) -> Result<ProbabilityReport, QrError> {
    let mut clamped = false;
    let pi = clamp01(p_inf(desc, bounds, prec)?, &mut clamped);
    let ps = clamp01(p_sup(desc, bounds, prec, expbits)?, &mut clamped);
    let pg = clamp01(p_grid(desc, bounds, prec), &mut clamped);
    let pf = pi.clone().min(ps.clone()).min(pg.clone());
    Ok(ProbabilityReport { p_inf: pi, p_sup: ps, p_grid: pg, p_f: pf, clamped })
}

/// The multivariate L_safe closed form for the cubical neighborhood, as
/// printed: ⌈−β*·log₂(1 − p^(1/k)) + c_m(β)⌉.
pub fn lsafe_multivariate_closed_form(
    poly: &SparsePoly,
    beta: &[u32],
    delta1: &Rational,
    t: &Rational,
    emax: i64,
    p: &Rational,
) -> Result<i64, QrError> {
    check_p(p)?;
    let k = poly.nvars as u32;
    let d = poly.total_degree() as i64;
    let nt = poly.terms.len() as i64;
    let bstar: u32 = beta.iter().sum();
    let bhat = *beta.iter().max().unwrap() as i64;
    let a_beta = poly.terms.get(beta).ok_or_else(|| QrError::NotAnalyzable("a_beta".into()))?.abs();
    let numer = int(d + 1 + ceil_log2(&int(nt)))
        * int(nt)
        * poly.max_abs_coeff()
        * pow2(emax * d + bstar as i64 + 1)
        * pow_rat(&int(bhat), bstar);
    let c = numer / (a_beta * pow_rat(&(t * delta1), bstar));
    let (lo, hi) = root_bracket(p, k, 200);
    let one = Rational::one();
    // the larger quotient is the conservative one
    let q_hi = &c / pow_rat(&(&one - &hi), bstar);
    let q_lo = &c / pow_rat(&(&one - &lo), bstar);
    let a = ceil_log2(&q_hi);
    debug_assert!(a >= ceil_log2(&q_lo));
    Ok(a.max(1))
}

fn pow_rat(x: &Rational, e: u32) -> Rational {
    (0..e).fold(Rational::one(), |a, _| a * x)
}

/// ⌈λβ*⌉ with λ = log₂((1 − p^(1/k)) / (1 − ((1+p)/2)^(1/k))), enclosed by
/// rational root brackets. Returns (lower, upper); they agree unless the
/// value sits within the bracket width of an integer.
pub fn multivariate_shift(p: &Rational, k: u32, bstar: u32) -> (i64, i64) {
    let one = Rational::one();
    let q = (&one + p) / int(2);
    let (plo, phi) = root_bracket(p, k, 200);
    let (qlo, qhi) = root_bracket(&q, k, 200);
    let small = pow_rat(&((&one - &phi) / (&one - &qlo)), bstar);
    let large = pow_rat(&((&one - &plo) / (&one - &qhi)), bstar);
    (ceil_log2(&small), ceil_log2(&large))
}

/// Requirements for f = g/h: both components at (1+p)/2, L_f the larger,
/// K_f also covering |g/h| ≤ φ_sup,g / φ_inf,h outside both regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalRequirement {
    pub numerator: ArithmeticRequirement,
    pub denominator: ArithmeticRequirement,
    pub l_f: i64,
    pub k_f: i64,
}

impl RationalRequirement {
    pub fn to_json(&self) -> Value {
        json!({
            "numerator": self.numerator.to_json(),
            "denominator": self.denominator.to_json(),
            "L_f": self.l_f,
            "K_f": self.k_f,
        })
    }
}

pub fn rational_requirement(
    g: (&PredicateDescription, &BoundSet),
    h: (&PredicateDescription, &BoundSet),
    p: &Rational,
) -> Result<RationalRequirement, QrError> {
    check_p(p)?;
    let q = (Rational::one() + p) / int(2);
    let rg = quantified_relations(g.0, g.1, &q)?;
    let rh = quantified_relations(h.0, h.1, &q)?;
    let l_f = rg.l_f.max(rh.l_f);
    let sup_g = g.1.phi_sup.as_ref().ok_or_else(|| QrError::NotAnalyzable("phi_sup of numerator".into()))?;
    let quotient = sup_g.eval(&rg.t_gamma) / &rh.phi;
    let s = g.1.s_inf_at(l_f).unwrap_or_default();
    let k_f = rg.k_f.max(rh.k_f).max(k_for_magnitude(&quotient, &s));
    Ok(RationalRequirement { numerator: rg, denominator: rh, l_f, k_f })
}

/// L_f(p) = max{L_g((1+p)/2), L_h((1+p)/2)} as a function.
pub fn rational_precision<'a>(
    lg: impl Fn(&Rational) -> i64 + 'a,
    lh: impl Fn(&Rational) -> i64 + 'a,
) -> impl Fn(&Rational) -> i64 + 'a {
    move |p| {
        let q = (Rational::one() + p) / int(2);
        lg(&q).max(lh(&q))
    }
}

/// φ_sup as the constant bound on every node magnitude.
pub fn constant_phi_sup(v: Rational) -> GammaFn {
    GammaFn::Const(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::{bounds_multivariate_cubical, bounds_univariate};
    use crate::errorbounds::{parse_expr, univariate_expr, x};
    use crate::exact::rat;

    fn univ(coeffs: &[Rational], delta: Rational, emax: i64) -> (PredicateDescription, BoundSet) {
        let desc = PredicateDescription::from_emax(univariate_expr(coeffs), vec![delta], emax, rat(1, 2)).unwrap();
        let b = bounds_univariate(coeffs, &desc).unwrap().with_phi_sup(constant_phi_sup(int(4)));
        (desc, b)
    }

    #[test]
    fn univariate_example() {
        let (d, b) = univ(&[int(0), int(1)], int(1), 1);
        let r = quantified_relations(&d, &b, &rat(1, 2)).unwrap();
        assert_eq!(r.eps_nu, int(1));
        assert_eq!(r.gamma, vec![rat(1, 2)]);
        assert_eq!(r.phi, rat(1, 4));
        assert_eq!(r.l_safe, 7);
        let r2 = quantified_relations(&d, &b, &rat(3, 4)).unwrap();
        assert_eq!(r2.l_safe, 8);
        let js = r.to_json();
        for key in ["eps_nu", "gamma", "t_gamma", "phi", "L_safe", "L_grid", "L_f", "K_f"] {
            assert!(js.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn small_p_clamps_to_gamma_hat() {
        let (d, b) = univ(&[int(0), int(1)], int(1), 1);
        let r = quantified_relations(&d, &b, &rat(1, 10)).unwrap();
        assert!(r.clamped);
        assert_eq!(r.lambda, int(1));
        assert!(quantified_relations(&d, &b, &int(1)).is_err());
    }

    #[test]
    fn multivariate_example() {
        let e = parse_expr("(mul x0 x1)").unwrap();
        let poly = SparsePoly::expand(&e, 2).unwrap();
        let desc = PredicateDescription::from_emax(e, vec![int(1), int(1)], 1, rat(1, 2)).unwrap();
        let b = bounds_multivariate_cubical(&poly, &[1, 1], &desc).unwrap().with_phi_sup(constant_phi_sup(int(4)));
        let p = rat(1, 4);
        let composed = quantified_relations(&desc, &b, &p).unwrap();
        assert_eq!(composed.l_safe, 9);
        let printed = lsafe_multivariate_closed_form(&poly, &[1, 1], &int(1), &rat(1, 2), 1, &p).unwrap();
        assert_eq!(printed, 11);
    }

    #[test]
    fn lgrid_examples() {
        assert_eq!(lgrid(&[rat(1, 8)], &rat(1, 2), 1), 4);
        assert_eq!(lgrid(&[rat(1, 16)], &rat(1, 2), 1), 5);
        assert_eq!(lgrid(&[rat(3, 40)], &rat(1, 4), 2), lgrid(&[rat(3, 40)], &rat(3, 4), 2));
        assert_eq!(lgrid(&[rat(1, 2), rat(1, 8)], &rat(1, 2), 1), 4);
    }

    #[test]
    fn exponent_examples() {
        assert_eq!(k_for_magnitude(&pow2(10), &int(1)), 5);
        assert_eq!(k_for_magnitude(&int(1), &int(1)), 2);
        assert_eq!(k_for_magnitude(&int(1), &rat(1, 2)), 2);
        // brute force against the defining inequality
        for v in [int(3), pow2(7), pow2(40), rat(1, 3)] {
            let k = k_for_magnitude(&v, &int(1));
            let fits = |k: i64| v.clone() + int(1) <= pow2(1 << (k - 1));
            assert!(fits(k));
            assert!(k == 2 || !fits(k - 1));
        }
        assert_eq!(k_for_grid(1), 3);
        assert_eq!(k_for_grid(6), 4);
        // x² on τ = 2^-20 produces 2^-40
        assert_eq!(k_for_underflow(&(x(0) * x(0)), 1, 20), 7);
    }

    #[test]
    fn k_f_is_monotone() {
        let (d, b) = univ(&[rat(-1, 4), int(0), int(1)], int(1), 1);
        let mut prev = 0;
        for p in [rat(1, 2), rat(3, 4), rat(9, 10), rat(99, 100), rat(999, 1000)] {
            let k = exponent_requirement(&d, &b, &p).unwrap();
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn probability_round_trip() {
        let (d, b) = univ(&[rat(-1, 4), int(0), int(1)], int(1), 1);
        for p in [rat(1, 2), rat(9, 10), rat(99, 100)] {
            let r = quantified_relations(&d, &b, &p).unwrap();
            let rep = probability(&d, &b, r.l_f, r.k_f).unwrap();
            assert!(rep.p_f >= p, "{p} {rep:?}");
        }
        assert_eq!(probability(&d, &b, 1, 8).unwrap().p_f, int(0));
        let mut prev = int(0);
        for l in 8..64 {
            let v = probability(&d, &b, l, 8).unwrap().p_f;
            assert!(v >= prev);
            prev = v;
        }
        assert_eq!(probability(&d, &b, 30, 3).unwrap().p_sup, int(0));
    }

    #[test]
    fn rational_composition() {
        let (d, b) = univ(&[int(0), int(1)], int(1), 1);
        let rr = rational_requirement((&d, &b), (&d, &b), &rat(1, 2)).unwrap();
        let direct = quantified_relations(&d, &b, &rat(3, 4)).unwrap();
        assert_eq!(rr.l_f, direct.l_f);
        assert_eq!(rr.numerator.p, rat(3, 4));
        let lf = rational_precision(|p: &Rational| floor_log2(&(int(1) / (int(1) - p))), |_| 3);
        assert_eq!(lf(&rat(1, 2)), 3);
        assert_eq!(lf(&rat(7, 8)), 4);
    }

    #[test]
    fn shift_bound_bracket() {
        let (lo, hi) = multivariate_shift(&rat(1, 4), 2, 2);
        assert_eq!(lo, hi);
        // β*·λ = 2·log₂((1/2)/(1 − √(5/8))) ≈ 2.51
        assert_eq!(hi, 3);
    }
}
