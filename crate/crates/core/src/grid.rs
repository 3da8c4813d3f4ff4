//! The perturbation substrate: input value parameter, grid unit, grid points,
//! uniform sampling in axis-parallel boxes, and object-preserving perturbation.

use num_bigint::{BigInt, BigUint};
use num_traits::{One, Signed, Zero};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

use crate::exact::{ceil_log2, pow2, Rational};
use crate::softfloat::{fl_round_in, Format, SoftFloat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GridError {
    #[error("interval for coordinate {0} contains no grid point")]
    EmptyGrid(usize),
    #[error("grid with emax={emax} is not representable in {fmt}")]
    NotRepresentable { emax: i64, fmt: Format },
    #[error("coordinate {0}: anchor plus measurement is not representable")]
    MeasurementNotRepresentable(usize),
    #[error("box dimension mismatch")]
    Dimension,
    #[error("coordinate {0} leaves [-2^emax, 2^emax]")]
    OutOfRange(usize),
}

/// Least e' with |ȳᵢ| + δᵢ ≤ 2^e' for all i.
pub fn compute_emax(center: &[Rational], radius: &[Rational]) -> i64 {
    let m = center
        .iter()
        .zip(radius)
        .map(|(y, d)| y.abs() + d)
        .fold(Rational::zero(), |a, b| if b > a { b } else { a });
    if m.is_zero() {
        0
    } else {
        ceil_log2(&m)
    }
}

/// τ = 2^(emax−L−1).
pub fn grid_unit(emax: i64, prec: i64) -> Rational {
    pow2(emax - prec - 1)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub fmt: Format,
    pub emax: i64,
    pub tau: Rational,
}

impl GridSpec {
    /// Requires emax + 1 < 2^(K−1) and a grid unit no finer than the lowest
    /// binade's spacing, so every grid point is a member of F_{L,K}.
    pub fn new(fmt: Format, emax: i64) -> Result<Self, GridError> {
        if emax + 1 >= fmt.emax() || emax - 1 < fmt.emin() {
            return Err(GridError::NotRepresentable { emax, fmt });
        }
        Ok(GridSpec { fmt, emax, tau: grid_unit(emax, fmt.prec as i64) })
    }

    fn lambda_range(&self, a: &Rational, b: &Rational) -> (BigInt, BigInt) {
        let lim = pow2(self.emax);
        let lo = if *a > -lim.clone() { a.clone() } else { -lim.clone() };
        let hi = if *b < lim { b.clone() } else { lim };
        ((lo / &self.tau).ceil().to_integer(), (hi / &self.tau).floor().to_integer())
    }

    /// Number of grid points in [a, b].
    pub fn count(&self, a: &Rational, b: &Rational) -> BigUint {
        let (lo, hi) = self.lambda_range(a, b);
        if hi < lo {
            BigUint::zero()
        } else {
            (hi - lo + 1u32).magnitude().clone()
        }
    }

    pub fn point(&self, lambda: &BigInt) -> Rational {
        Rational::from_integer(lambda.clone()) * &self.tau
    }
}

/// All grid points in [a, b], ascending.
pub fn enumerate_grid(a: &Rational, b: &Rational, spec: &GridSpec) -> Vec<Rational> {
    let (lo, hi) = spec.lambda_range(a, b);
    let mut out = Vec::new();
    let mut l = lo;
    while l <= hi {
        out.push(spec.point(&l));
        l += 1;
    }
    out
}

/// U_δ(ȳ) = Π[ȳᵢ−δᵢ, ȳᵢ+δᵢ].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PerturbationBox {
    pub center: Vec<Rational>,
    pub radius: Vec<Rational>,
}

impl PerturbationBox {
    pub fn new(center: Vec<Rational>, radius: Vec<Rational>) -> Result<Self, GridError> {
        if center.len() != radius.len() || radius.iter().any(|r| r.is_negative()) {
            return Err(GridError::Dimension);
        }
        Ok(PerturbationBox { center, radius })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn emax(&self) -> i64 {
        compute_emax(&self.center, &self.radius)
    }

    pub fn lower(&self, i: usize) -> Rational {
        &self.center[i] - &self.radius[i]
    }

    pub fn upper(&self, i: usize) -> Rational {
        &self.center[i] + &self.radius[i]
    }
}

/// The generator behind every random choice: ChaCha8 keyed by `seed`, with
/// independent streams for parallel trials.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Uniform integer in [0, n) by rejection from the enclosing power of two.
pub fn uniform_below(rng: &mut impl RngCore, n: &BigUint) -> BigUint {
    assert!(!n.is_zero());
    if n.is_one() {
        return BigUint::zero();
    }
    let bits = (n - 1u32).bits();
    let words = bits.div_ceil(64) as usize;
    let top = bits - 64 * (words as u64 - 1);
    loop {
        let mut digits: Vec<u64> = (0..words).map(|_| rng.next_u64()).collect();
        if top < 64 {
            digits[words - 1] &= (1u64 << top) - 1;
        }
        let v = BigUint::from_slice(
            &digits.iter().flat_map(|d| [*d as u32, (*d >> 32) as u32]).collect::<Vec<u32>>(),
        );
        if v < *n {
            return v;
        }
    }
}

/// Uniform grid point in [a, b].
pub fn sample_interval(a: &Rational, b: &Rational, spec: &GridSpec, rng: &mut impl RngCore) -> Option<Rational> {
    let (lo, hi) = spec.lambda_range(a, b);
    if hi < lo {
        return None;
    }
    let n = (&hi - &lo + 1u32).magnitude().clone();
    let k = uniform_below(rng, &n);
    Some(spec.point(&(lo + BigInt::from(k))))
}

pub fn sample_grid_point_with(
    b: &PerturbationBox,
    spec: &GridSpec,
    rng: &mut impl RngCore,
) -> Result<Vec<SoftFloat>, GridError> {
    (0..b.dim())
        .map(|i| {
            let r = sample_interval(&b.lower(i), &b.upper(i), spec, rng).ok_or(GridError::EmptyGrid(i))?;
            fl_round_in(&r, spec.fmt).map_err(|_| GridError::NotRepresentable { emax: spec.emax, fmt: spec.fmt })
        })
        .collect()
}

/// Each coordinate independently uniform over the grid points of its interval.
pub fn sample_grid_point(b: &PerturbationBox, spec: &GridSpec, seed: u64) -> Result<Vec<SoftFloat>, GridError> {
    sample_grid_point_with(b, spec, &mut rng_for(seed, 0))
}

/// How one input coordinate relates to the objects it belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CoordRole {
    /// Perturbed directly.
    Anchor,
    /// Always equal to the (perturbed) coordinate `anchor` plus `measurement`.
    Offset { anchor: usize, measurement: Rational },
    /// Never moves (e.g. a radius).
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectInput {
    pub values: Vec<Rational>,
    pub roles: Vec<CoordRole>,
}

impl ObjectInput {
    pub fn anchors(&self) -> Vec<usize> {
        self.roles.iter().enumerate().filter(|(_, r)| **r == CoordRole::Anchor).map(|(i, _)| i).collect()
    }

    /// Rebuilds the full input from perturbed anchor values (in anchor order),
    /// adding measurements exactly.
    pub fn apply_anchors(&self, anchor_values: &[Rational], spec: &GridSpec) -> Result<Vec<SoftFloat>, GridError> {
        let anchors = self.anchors();
        if anchors.len() != anchor_values.len() {
            return Err(GridError::Dimension);
        }
        let mut full = self.values.clone();
        for (slot, v) in anchors.iter().zip(anchor_values) {
            full[*slot] = v.clone();
        }
        for (i, role) in self.roles.iter().enumerate() {
            if let CoordRole::Offset { anchor, measurement } = role {
                if self.roles.get(*anchor) != Some(&CoordRole::Anchor) {
                    return Err(GridError::Dimension);
                }
                full[i] = &full[*anchor] + measurement;
            }
        }
        full.iter()
            .enumerate()
            .map(|(i, v)| match fl_round_in(v, spec.fmt) {
                Ok(f) if f.to_rational() == *v => Ok(f),
                _ => Err(GridError::MeasurementNotRepresentable(i)),
            })
            .collect()
    }
}

/// Perturbs the anchors inside `radius` (one entry per anchor) and moves the
/// dependent coordinates along.
pub fn perturb_object_preserving(
    input: &ObjectInput,
    radius: &[Rational],
    spec: &GridSpec,
    seed: u64,
) -> Result<Vec<SoftFloat>, GridError> {
    let anchors = input.anchors();
    let center: Vec<Rational> = anchors.iter().map(|&i| input.values[i].clone()).collect();
    let b = PerturbationBox::new(center, radius.to_vec())?;
    let moved = sample_grid_point(&b, spec, seed)?;
    let vals: Vec<Rational> = moved.iter().map(|s| s.to_rational()).collect();
    input.apply_anchors(&vals, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{int, rat};
    use proptest::prelude::*;

    fn spec(l: u32, k: u32, emax: i64) -> GridSpec {
        GridSpec::new(Format::new(l, k).unwrap(), emax).unwrap()
    }

    #[test]
    fn emax_examples() {
        assert_eq!(compute_emax(&[int(3)], &[int(1)]), 2);
        assert_eq!(compute_emax(&[rat(1, 2)], &[rat(1, 2)]), 0);
        assert_eq!(compute_emax(&[int(7), int(-9)], &[int(1), int(2)]), 4);
    }

    #[test]
    fn unit_examples() {
        assert_eq!(grid_unit(1, 2), rat(1, 4));
        assert_eq!(grid_unit(0, 0), rat(1, 2));
        assert_eq!(grid_unit(10, 53), pow2(-44));
    }

    #[test]
    fn enumeration_examples() {
        let s = spec(2, 3, 1);
        assert_eq!(s.tau, rat(1, 4));
        let pts = enumerate_grid(&int(0), &int(1), &s);
        assert_eq!(pts, vec![int(0), rat(1, 4), rat(1, 2), rat(3, 4), int(1)]);
        assert_eq!(enumerate_grid(&int(0), &int(2), &s).len(), 9);
        assert_eq!(enumerate_grid(&rat(1, 8), &rat(3, 8), &s), vec![rat(1, 4)]);
        assert_eq!(s.count(&int(0), &int(2)), BigUint::from(9u32));
    }

    #[test]
    fn grid_is_inside_the_float_set() {
        for (l, k, e) in [(2, 3, 1), (3, 4, 2), (5, 4, -3), (2, 4, 6)] {
            let s = spec(l, k, e);
            for p in enumerate_grid(&-pow2(e), &pow2(e), &s) {
                assert_eq!(fl_round_in(&p, s.fmt).unwrap().to_rational(), p);
            }
        }
        assert!(GridSpec::new(Format::new(2, 3).unwrap(), 3).is_err());
    }

    #[test]
    fn tau_is_the_largest_float_spacing() {
        let fmt = Format::new(2, 3).unwrap();
        let s = GridSpec::new(fmt, 1).unwrap();
        let fl = crate::softfloat::enumerate_nonneg(&int(0), &int(2), fmt);
        let gap = fl.windows(2).map(|w| &w[1] - &w[0]).max().unwrap();
        assert_eq!(gap, s.tau);
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let s = spec(2, 3, 1);
        let b = PerturbationBox::new(vec![int(1)], vec![int(1)]).unwrap();
        let a1 = sample_grid_point(&b, &s, 42).unwrap();
        let a2 = sample_grid_point(&b, &s, 42).unwrap();
        assert_eq!(a1, a2);
        let grid = enumerate_grid(&int(0), &int(2), &s);
        for seed in 0..50 {
            let v = sample_grid_point(&b, &s, seed).unwrap()[0].to_rational();
            assert!(grid.contains(&v));
        }
    }

    #[test]
    fn sampling_frequencies() {
        // τ = 1/2 over [0,2]: five points
        let s = spec(1, 3, 1);
        let b = PerturbationBox::new(vec![int(1)], vec![int(1)]).unwrap();
        let mut rng = rng_for(7, 0);
        let mut counts = std::collections::BTreeMap::new();
        for _ in 0..10_000 {
            let v = sample_grid_point_with(&b, &s, &mut rng).unwrap()[0].to_rational();
            *counts.entry(v).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 5);
        for c in counts.values() {
            assert!((1800..=2200).contains(c), "{counts:?}");
        }
    }

    #[test]
    fn empty_grid_is_reported() {
        let s = spec(2, 3, 1);
        let b = PerturbationBox::new(vec![rat(1, 16)], vec![rat(1, 32)]).unwrap();
        assert_eq!(sample_grid_point(&b, &s, 1), Err(GridError::EmptyGrid(0)));
    }

    fn square() -> ObjectInput {
        let off = |anchor, m| CoordRole::Offset { anchor, measurement: m };
        ObjectInput {
            values: vec![int(0), int(0), int(1), int(0), int(1), int(1), int(0), int(1)],
            roles: vec![
                CoordRole::Anchor,
                CoordRole::Anchor,
                off(0, int(1)),
                off(1, int(0)),
                off(0, int(1)),
                off(1, int(1)),
                off(0, int(0)),
                off(1, int(1)),
            ],
        }
    }

    #[test]
    fn object_preserving_square() {
        let s = spec(8, 5, 2);
        let out = square().apply_anchors(&[rat(1, 4), rat(1, 2)], &s).unwrap();
        let v: Vec<Rational> = out.iter().map(|f| f.to_rational()).collect();
        assert_eq!(v, vec![rat(1, 4), rat(1, 2), rat(5, 4), rat(1, 2), rat(5, 4), rat(3, 2), rat(1, 4), rat(3, 2)]);
        let same = perturb_object_preserving(&square(), &[int(0), int(0)], &s, 9).unwrap();
        let v: Vec<Rational> = same.iter().map(|f| f.to_rational()).collect();
        assert_eq!(v, square().values);
    }

    #[test]
    fn circle_keeps_radius() {
        let s = spec(10, 5, 2);
        let circle = ObjectInput {
            values: vec![rat(1, 2), rat(1, 2), int(1)],
            roles: vec![CoordRole::Anchor, CoordRole::Anchor, CoordRole::Fixed],
        };
        for seed in 0..20 {
            let out = perturb_object_preserving(&circle, &[rat(1, 4), rat(1, 4)], &s, seed).unwrap();
            assert_eq!(out[2].to_rational(), int(1));
        }
    }

    #[test]
    fn measurement_must_stay_representable() {
        let s = spec(3, 4, 2);
        let bad = ObjectInput {
            values: vec![int(0), rat(1, 3)],
            roles: vec![CoordRole::Anchor, CoordRole::Offset { anchor: 0, measurement: rat(1, 3) }],
        };
        assert_eq!(bad.apply_anchors(&[rat(1, 2)], &s), Err(GridError::MeasurementNotRepresentable(1)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn counting_inequality(l0 in 1i64..64, start in -64i64..0, a_frac in 0u32..1000, b_frac in 0u32..1000) {
            // U = [start·τ, (start+λ₀)·τ]; R ⊆ U with arbitrary rational ends
            let s = spec(6, 5, 2);
            let tau = s.tau.clone();
            let u_lo = Rational::from_integer(start.into()) * &tau;
            let u_hi = &u_lo + Rational::from_integer(l0.into()) * &tau;
            let span = &u_hi - &u_lo;
            let a = &u_lo + &span * rat(a_frac.into(), 1000);
            let b = &a + (&u_hi - &a) * rat(b_frac.into(), 997);
            let r = BigInt::from(s.count(&a, &b));
            let u = BigInt::from(s.count(&u_lo, &u_hi));
            let lhs = Rational::new(r, u);
            let rhs = (&b - &a + &tau) / (&u_hi - &u_lo);
            prop_assert!(lhs <= rhs);
        }
    }
}
