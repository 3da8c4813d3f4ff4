//! Concrete predicates wired to their bounds, and a guarded convex hull.

use std::cmp::Ordering;

use num_traits::{One, Zero};
use thiserror::Error;

use crate::algo::{Attempt, Failure, GuardedAlgorithm};
use crate::bounds::{
    bounds_inbox_topdown, bounds_incircle_direct, bounds_multivariate, bounds_univariate, choose_beta, BoundSet,
    BoundsError, GammaFn, PredicateDescription,
};
use crate::errorbounds::{annotate, c, guarded_eval, parse_expr, static_bound, univariate_expr, x, Expr, GuardVerdict, SparsePoly};
use crate::exact::{int, parse_rational, rat_sign, ParseError, Rational};
use crate::softfloat::{Format, SoftFloat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeomError {
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("predicate `{0}` needs: {1}")]
    Parameters(String, String),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

impl From<ParseError> for GeomError {
    fn from(e: ParseError) -> Self {
        GeomError::Csv { line: 0, msg: e.to_string() }
    }
}

fn sq(e: Expr) -> Expr {
    e.clone() * e
}

/// (q_x−p_x)(r_y−p_y) − (q_y−p_y)(r_x−p_x) over inputs p, q, r.
pub fn orientation2d_expr() -> Expr {
    (x(2) - x(0)) * (x(5) - x(1)) - (x(3) - x(1)) * (x(4) - x(0))
}

/// max_i (q_i − u_i)(q_i − v_i) over inputs u, v, q; negative strictly inside.
pub fn inbox_expr() -> Expr {
    let side = |i: usize| (x(4 + i) - x(i)) * (x(4 + i) - x(2 + i));
    side(0).max(side(1))
}

/// (q_x − c_x)² + (q_y − c_y)² − r² over inputs c, r, q; positive outside.
pub fn incircle_expr() -> Expr {
    sq(x(3) - x(0)) + sq(x(4) - x(1)) - sq(x(2))
}

/// min_i ℓᵢ² − (xᵢ − cᵢ)² for a fixed box; positive strictly inside.
pub fn inbox_centered_expr(center: &[Rational], half: &[Rational]) -> Expr {
    let term = |i: usize| c(&half[i] * &half[i]) - sq(x(i) - c(center[i].clone()));
    (1..center.len()).fold(term(0), |acc, i| acc.min(term(i)))
}

/// (x − c_x)² + (y − c_y)² − r² for a fixed circle.
pub fn incircle_fixed_expr(center: &[Rational], r: &Rational) -> Expr {
    sq(x(0) - c(center[0].clone())) + sq(x(1) - c(center[1].clone())) - c(r * r)
}

pub const REGISTRY: [&str; 6] = ["univariate", "multivariate", "in_box", "in_circle", "orientation2d", "rational"];

/// Parameters a registry entry may need; unset fields take per-predicate
/// defaults.
#[derive(Clone, Debug, Default)]
pub struct PredicateParams {
    pub coeffs: Option<Vec<Rational>>,
    pub degree: Option<u32>,
    pub den_coeffs: Option<Vec<Rational>>,
    pub poly: Option<String>,
    pub center: Option<Vec<Rational>>,
    pub half: Option<Vec<Rational>>,
    pub radius: Option<Rational>,
}

/// Where the perturbation is centred.
#[derive(Clone, Debug)]
pub enum Placement {
    /// A single x̄.
    Point(Vec<Rational>),
    /// Every x̄ allowed by this emax.
    Emax(i64),
}

#[derive(Clone, Debug)]
pub struct PredicateInstance {
    pub name: String,
    pub expr: Expr,
    pub desc: PredicateDescription,
    pub bounds: BoundSet,
}

#[derive(Clone, Debug)]
pub enum Registered {
    Plain(PredicateInstance),
    Rational { expr: Expr, numerator: PredicateInstance, denominator: PredicateInstance },
}

impl Registered {
    pub fn expr(&self) -> &Expr {
        match self {
            Registered::Plain(p) => &p.expr,
            Registered::Rational { expr, .. } => expr,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Registered::Plain(p) => p.desc.k,
            Registered::Rational { numerator, .. } => numerator.desc.k,
        }
    }
}

fn describe(expr: &Expr, place: &Placement, delta: &[Rational], t: &Rational) -> Result<PredicateDescription, GeomError> {
    Ok(match place {
        Placement::Point(xb) => PredicateDescription::at_point(expr.clone(), xb, delta.to_vec(), t.clone())?,
        Placement::Emax(e) => PredicateDescription::from_emax(expr.clone(), delta.to_vec(), *e, t.clone())?,
    })
}

/// S_inf = max(closed form, 3·static bound) and φ_sup = the largest node
/// magnitude, both taken from the expression actually evaluated.
fn finish(name: &str, expr: Expr, desc: PredicateDescription, mut bounds: BoundSet) -> Result<PredicateInstance, GeomError> {
    let an = annotate(&expr, desc.emax, None).map_err(|e| GeomError::Parameters(name.into(), e.to_string()))?;
    let from_static = static_bound(&an, 0) * int(3);
    let s = match bounds.s_inf.take() {
        Some(closed) if closed >= from_static => closed,
        _ => from_static,
    };
    bounds.s_inf = Some(s);
    bounds.phi_sup = Some(GammaFn::Const(an.ann.max_sup()));
    Ok(PredicateInstance { name: name.into(), expr, desc, bounds })
}

fn univariate_instance(name: &str, coeffs: &[Rational], place: &Placement, delta: &[Rational], t: &Rational) -> Result<PredicateInstance, GeomError> {
    if delta.len() != 1 {
        return Err(GeomError::Parameters(name.into(), "one delta".into()));
    }
    let expr = univariate_expr(coeffs);
    let desc = describe(&expr, place, delta, t)?;
    let b = bounds_univariate(coeffs, &desc)?;
    finish(name, expr, desc, b)
}

fn multivariate_instance(name: &str, expr: Expr, k: usize, place: &Placement, delta: &[Rational], t: &Rational) -> Result<PredicateInstance, GeomError> {
    if delta.len() != k {
        return Err(GeomError::Parameters(name.into(), format!("{k} deltas")));
    }
    let poly = SparsePoly::expand(&expr, k).ok_or_else(|| GeomError::Parameters(name.into(), "a polynomial".into()))?;
    let set: Vec<Vec<u32>> = poly.terms.keys().cloned().collect();
    let beta = choose_beta(&set, k)?;
    let desc = describe(&expr, place, delta, t)?;
    let b = bounds_multivariate(&poly, &beta, &desc)?;
    finish(name, expr, desc, b)
}

/// Builds a registry entry. `delta` fixes the arity of the perturbed inputs.
pub fn build(name: &str, params: &PredicateParams, place: &Placement, delta: &[Rational], t: &Rational) -> Result<Registered, GeomError> {
    match name {
        "univariate" => {
            let coeffs = match (&params.coeffs, params.degree) {
                (Some(cs), _) => cs.clone(),
                (None, d) => {
                    let d = d.unwrap_or(1) as usize;
                    let mut v = vec![Rational::zero(); d + 1];
                    v[d] = Rational::one();
                    v
                }
            };
            Ok(Registered::Plain(univariate_instance(name, &coeffs, place, delta, t)?))
        }
        "multivariate" => {
            let src = params.poly.clone().unwrap_or_else(|| "(mul x0 x1)".into());
            let expr = parse_expr(&src).map_err(|e| GeomError::Parameters(name.into(), e.to_string()))?;
            Ok(Registered::Plain(multivariate_instance(name, expr, delta.len(), place, delta, t)?))
        }
        "orientation2d" => Ok(Registered::Plain(multivariate_instance(name, orientation2d_expr(), 6, place, delta, t)?)),
        "in_box" => {
            let k = delta.len();
            let center = params.center.clone().unwrap_or_else(|| vec![Rational::zero(); k]);
            let half = params.half.clone().unwrap_or_else(|| vec![Rational::one(); k]);
            if center.len() != k || half.len() != k {
                return Err(GeomError::Parameters(name.into(), "center and half-lengths per delta".into()));
            }
            let expr = inbox_centered_expr(&center, &half);
            let desc = describe(&expr, place, delta, t)?;
            let b = bounds_inbox_topdown(&half, delta)?;
            Ok(Registered::Plain(finish(name, expr, desc, b)?))
        }
        "in_circle" => {
            if delta.len() != 2 {
                return Err(GeomError::Parameters(name.into(), "two deltas".into()));
            }
            let center = params.center.clone().unwrap_or_else(|| vec![Rational::zero(); 2]);
            let r = params.radius.clone().unwrap_or_else(Rational::one);
            let expr = incircle_fixed_expr(&center, &r);
            let desc = describe(&expr, place, delta, t)?;
            let b = bounds_incircle_direct(delta, &r)?;
            Ok(Registered::Plain(finish(name, expr, desc, b)?))
        }
        "rational" => {
            let num = params.coeffs.clone().unwrap_or_else(|| vec![Rational::zero(), Rational::one()]);
            let den = params.den_coeffs.clone().unwrap_or_else(|| vec![Rational::one(), Rational::one()]);
            let g = univariate_instance("rational.numerator", &num, place, delta, t)?;
            let h = univariate_instance("rational.denominator", &den, place, delta, t)?;
            let expr = g.expr.clone() / h.expr.clone();
            Ok(Registered::Rational { expr, numerator: g, denominator: h })
        }
        other => Err(GeomError::UnknownPredicate(other.into())),
    }
}

/// Parses `x,y` lines of rationals; blank lines and `#` comments are skipped.
pub fn parse_points_csv(text: &str) -> Result<Vec<Rational>, GeomError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = l.split(',').collect();
        if parts.len() != 2 {
            if n == 0 && parts.iter().all(|p| parse_rational(p).is_err()) {
                continue;
            }
            return Err(GeomError::Csv { line: n + 1, msg: "expected `x,y`".into() });
        }
        for p in parts {
            match parse_rational(p) {
                Ok(v) => out.push(v),
                // a header row
                Err(_) if n == 0 && out.is_empty() && l.chars().any(|c| c.is_ascii_alphabetic()) => {
                    out.clear();
                    break;
                }
                Err(e) => return Err(GeomError::Csv { line: n + 1, msg: e.to_string() }),
            }
        }
    }
    if out.len() % 2 == 1 {
        out.pop();
    }
    Ok(out)
}

fn lex(a: (&Rational, &Rational), b: (&Rational, &Rational)) -> Ordering {
    a.0.cmp(b.0).then_with(|| a.1.cmp(b.1))
}

/// Monotone-chain hull over guarded orientation tests. Returns the hull
/// vertices counter-clockwise starting at the lexicographically smallest
/// point, or the first failure.
pub fn guarded_convex_hull(points: &[SoftFloat], fmt: Format) -> Attempt<Vec<usize>> {
    let orient = orientation2d_expr();
    let n = points.len() / 2;
    let vals: Vec<Rational> = points.iter().map(|p| p.to_rational()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| lex((&vals[2 * i], &vals[2 * i + 1]), (&vals[2 * j], &vals[2 * j + 1])));
    let mut evals = 0u64;
    let mut sign = |a: usize, b: usize, cc: usize| -> Result<i8, Failure> {
        evals += 1;
        let args = [&points[2 * a], &points[2 * a + 1], &points[2 * b], &points[2 * b + 1], &points[2 * cc], &points[2 * cc + 1]];
        let xs: Vec<SoftFloat> = args.iter().map(|s| (*s).clone()).collect();
        match guarded_eval(&orient, &xs, fmt) {
            Ok(GuardVerdict::SignCertified(s)) => Ok(s),
            Ok(GuardVerdict::GuardFailed) => Err(Failure::GuardFailure),
            Ok(GuardVerdict::RangeError) | Err(_) => Err(Failure::RangeError),
        }
    };
    let mut chain = |seq: &mut dyn Iterator<Item = usize>| -> Result<Vec<usize>, Failure> {
        let mut st: Vec<usize> = Vec::new();
        for p in seq {
            while st.len() >= 2 && sign(st[st.len() - 2], st[st.len() - 1], p)? < 0 {
                st.pop();
            }
            st.push(p);
        }
        Ok(st)
    };
    let result = (|| {
        if n < 3 {
            return Err(Failure::GuardFailure);
        }
        let mut lower = chain(&mut order.iter().copied())?;
        let mut upper = chain(&mut order.iter().rev().copied())?;
        lower.pop();
        upper.pop();
        lower.extend(upper);
        Ok(lower)
    })();
    Attempt { result, evals }
}

/// The hull as a guarded algorithm.
pub struct HullAlgorithm;

impl GuardedAlgorithm for HullAlgorithm {
    type Output = Vec<usize>;
    fn run(&mut self, input: &[SoftFloat], fmt: Format) -> Attempt<Vec<usize>> {
        guarded_convex_hull(input, fmt)
    }
}

/// Exact hull by gift wrapping over rationals; collinear boundary points are
/// not vertices. Same vertex order as the guarded hull.
pub fn rational_hull(points: &[Rational]) -> Vec<usize> {
    let n = points.len() / 2;
    let orient = orientation2d_expr();
    let pt = |i: usize| (&points[2 * i], &points[2 * i + 1]);
    let o = |a: usize, b: usize, cc: usize| {
        let xs = [&points[2 * a], &points[2 * a + 1], &points[2 * b], &points[2 * b + 1], &points[2 * cc], &points[2 * cc + 1]];
        let xs: Vec<Rational> = xs.iter().map(|v| (*v).clone()).collect();
        rat_sign(&orient, &xs).expect("polynomial")
    };
    let d2 = |a: usize, b: usize| {
        let dx = &points[2 * b] - &points[2 * a];
        let dy = &points[2 * b + 1] - &points[2 * a + 1];
        &dx * &dx + &dy * &dy
    };
    if n == 0 {
        return vec![];
    }
    let start = (0..n).min_by(|&i, &j| lex(pt(i), pt(j)).then(i.cmp(&j))).unwrap();
    let mut hull = vec![start];
    let mut cur = start;
    loop {
        let mut cand: Option<usize> = None;
        for q in 0..n {
            if d2(cur, q).is_zero() {
                continue;
            }
            cand = Some(match cand {
                None => q,
                Some(cd) => {
                    let s = o(cur, cd, q);
                    if s < 0 || (s == 0 && d2(cur, q) > d2(cur, cd)) {
                        q
                    } else {
                        cd
                    }
                }
            });
        }
        match cand {
            None => break,
            Some(nx) if nx == start || d2(nx, start).is_zero() => break,
            Some(nx) => {
                hull.push(nx);
                cur = nx;
            }
        }
        if hull.len() > n {
            break;
        }
    }
    hull
}

/// Sign of the exact value, for oracles.
pub fn exact_orientation(p: [&Rational; 6]) -> i8 {
    let xs: Vec<Rational> = p.iter().map(|v| (*v).clone()).collect();
    rat_sign(&orientation2d_expr(), &xs).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{rat, rat_eval};
    use crate::grid::{rng_for, sample_interval, GridSpec};
    use crate::softfloat::fl_round_in;

    fn ints(v: &[i64]) -> Vec<Rational> {
        v.iter().map(|&a| int(a)).collect()
    }

    #[test]
    fn orientation_examples() {
        let e = orientation2d_expr();
        assert_eq!(rat_eval(&e, &ints(&[0, 0, 1, 0, 0, 1])).unwrap(), int(1));
        assert_eq!(rat_eval(&e, &ints(&[0, 0, 1, 1, 2, 2])).unwrap(), int(0));
        assert_eq!(rat_eval(&e, &ints(&[0, 0, 0, 1, 1, 0])).unwrap(), int(-1));
        assert_eq!(SparsePoly::expand(&e, 6).unwrap().terms.len(), 6);
    }

    #[test]
    fn inbox_and_incircle_examples() {
        let b = inbox_expr();
        assert_eq!(rat_eval(&b, &ints(&[0, 0, 2, 2, 1, 1])).unwrap(), int(-1));
        assert_eq!(rat_eval(&b, &ints(&[0, 0, 2, 2, 2, 1])).unwrap(), int(0));
        let c = incircle_expr();
        assert_eq!(rat_eval(&c, &ints(&[0, 0, 1, 2, 0])).unwrap(), int(3));
        let centered = inbox_centered_expr(&[int(1), int(1)], &[int(1), int(1)]);
        assert_eq!(rat_eval(&centered, &ints(&[1, 1])).unwrap(), int(1));
        assert_eq!(rat_eval(&centered, &ints(&[2, 1])).unwrap(), int(0));
    }

    #[test]
    fn registry_builds_every_entry() {
        let t = rat(1, 2);
        let p = PredicateParams::default();
        for (name, k) in [("univariate", 1), ("multivariate", 2), ("in_box", 2), ("in_circle", 2), ("orientation2d", 6), ("rational", 1)] {
            let delta = vec![rat(1, 4); k];
            let reg = build(name, &p, &Placement::Emax(2), &delta, &t).unwrap();
            assert_eq!(reg.k(), k, "{name}");
        }
        assert!(matches!(build("nope", &p, &Placement::Emax(1), &[int(1)], &t), Err(GeomError::UnknownPredicate(_))));
    }

    fn sf(v: &[Rational], fmt: Format) -> Vec<SoftFloat> {
        v.iter().map(|r| fl_round_in(r, fmt).unwrap()).collect()
    }

    #[test]
    fn hull_of_square() {
        let fmt = Format::new(53, 11).unwrap();
        let pts = ints(&[0, 0, 2, 0, 2, 2, 0, 2, 1, 1]);
        let a = guarded_convex_hull(&sf(&pts, fmt), fmt);
        assert_eq!(a.result.unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(rational_hull(&pts), vec![0, 1, 2, 3]);
        assert!(a.evals <= 4 * 5);
    }

    #[test]
    fn collinear_points_fail() {
        let fmt = Format::new(53, 11).unwrap();
        let pts = ints(&[0, 0, 1, 1, 2, 2]);
        for l in [8, 24, 100] {
            let f = Format::new(l, 11).unwrap();
            assert_eq!(guarded_convex_hull(&sf(&pts, f), f).result, Err(Failure::GuardFailure));
        }
        let _ = fmt;
    }

    #[test]
    fn random_hulls_match_oracle() {
        let fmt = Format::new(53, 11).unwrap();
        let spec = GridSpec::new(fmt, 1).unwrap();
        let mut rng = rng_for(11, 0);
        for _ in 0..5 {
            let pts: Vec<Rational> = (0..200).map(|_| sample_interval(&int(-1), &int(1), &spec, &mut rng).unwrap()).collect();
            let a = guarded_convex_hull(&sf(&pts, fmt), fmt);
            assert_eq!(a.result.unwrap(), rational_hull(&pts));
        }
    }

    #[test]
    fn csv_parsing() {
        let pts = parse_points_csv("x,y\n0,0\n1/2, 0.25\n# note\n\n-3,4\n").unwrap();
        assert_eq!(pts, vec![int(0), int(0), rat(1, 2), rat(1, 4), int(-3), int(4)]);
        assert!(parse_points_csv("0.1,0\n").is_err());
        assert!(parse_points_csv("1,2,3\n").is_err());
    }
}
