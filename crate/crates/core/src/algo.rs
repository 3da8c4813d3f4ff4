//! Algorithm-level analysis (distributed probability) and the controlled
//! perturbation loops: the basic doubling loop and the ψ-augmented loop with
//! η attempts per parameter setting, plus the δ-augmenting variant.

use num_traits::{One, Signed, Zero};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::bounds::{BoundSet, PredicateDescription};
use crate::exact::{int, pi_bracket, root_bracket, Rational};
use crate::grid::{compute_emax, rng_for, sample_interval, GridSpec};
use crate::qr::{quantified_relations, ArithmeticRequirement, QrError};
use crate::softfloat::{fl_round_in, Format, SoftFloat};

/// Shape of the perturbation area around each object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Shape {
    /// Every coordinate independently in [ȳᵢ − δ, ȳᵢ + δ].
    Box,
    /// Each consecutive pair of coordinates inside a disc of radius δ.
    Disc,
    /// Each consecutive triple inside a ball of radius δ.
    Ball,
}

impl Shape {
    pub fn group(self) -> usize {
        match self {
            Shape::Box => 1,
            Shape::Disc => 2,
            Shape::Ball => 3,
        }
    }

    /// Enclosure of μ(shape)/μ(inscribed box) for one object.
    pub fn volume_ratio(self) -> (Rational, Rational) {
        let (pi_lo, pi_hi) = pi_bracket();
        match self {
            Shape::Box => (int(1), int(1)),
            // disc area πδ² over the inscribed square 2δ²
            Shape::Disc => (pi_lo / int(2), pi_hi / int(2)),
            // (4π/3)δ³ over the cube (2δ/√3)³ gives π√3/2
            Shape::Ball => {
                let (s_lo, s_hi) = root_bracket(&int(3), 2, 64);
                (pi_lo * s_lo / int(2), pi_hi * s_hi / int(2))
            }
        }
    }
}

/// η = ⌈μ(𝒰_δ)/μ(U_δ)⌉ for one object.
pub fn eta(shape: Shape) -> u64 {
    let (lo, hi) = shape.volume_ratio();
    let a = lo.ceil().to_integer();
    let b = hi.ceil().to_integer();
    assert_eq!(a, b, "volume ratio enclosure straddles an integer");
    u64::try_from(a).unwrap()
}

/// An algorithm analysed predicate by predicate: N_E(n) bounds the number of
/// predicate evaluations on inputs of size n.
pub struct AlgorithmDescription<'a> {
    pub predicates: Vec<(String, &'a PredicateDescription, &'a BoundSet)>,
    pub n_e: Box<dyn Fn(u64) -> u64 + 'a>,
    pub shape: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Distributed {
    pub l_acp: i64,
    pub k_acp: i64,
    pub eta: u64,
    pub rho: Rational,
    pub per_predicate: Vec<(String, ArithmeticRequirement)>,
}

/// ρ(p, n) = (1−p)/N_E(n).
pub fn rho(p: &Rational, n_e: u64) -> Rational {
    (Rational::one() - p) / int(n_e as i64)
}

/// Each predicate is analysed at 1 − ρ; L_ACP and K_ACP are the maxima.
pub fn distributed_probability(algo: &AlgorithmDescription, p: &Rational, n: u64) -> Result<Distributed, QrError> {
    let ne = (algo.n_e)(n).max(1);
    let r = rho(p, ne);
    let q = Rational::one() - &r;
    let mut per = Vec::new();
    let (mut l, mut k) = (0, 0);
    for (name, desc, bounds) in &algo.predicates {
        let req = quantified_relations(desc, bounds, &q)?;
        l = l.max(req.l_f);
        k = k.max(req.k_f);
        per.push((name.clone(), req));
    }
    Ok(Distributed { l_acp: l, k_acp: k, eta: eta(algo.shape), rho: r, per_predicate: per })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    GuardFailure,
    RangeError,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    GuardFailure,
    RangeError,
}

impl From<Failure> for Outcome {
    fn from(f: Failure) -> Self {
        match f {
            Failure::GuardFailure => Outcome::GuardFailure,
            Failure::RangeError => Outcome::RangeError,
        }
    }
}

/// Either the combinatorial result or the kind of failure, and the number of
/// predicate evaluations used.
pub struct Attempt<T> {
    pub result: Result<T, Failure>,
    pub evals: u64,
}

/// An algorithm built from guarded predicates: it never returns a result when
/// one of its guards failed.
pub trait GuardedAlgorithm {
    type Output;
    fn run(&mut self, input: &[SoftFloat], fmt: Format) -> Attempt<Self::Output>;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CpRunStats {
    pub seed: u64,
    /// Parameter settings tried.
    pub rounds: u64,
    #[serde(rename = "final_L")]
    pub final_l: i64,
    #[serde(rename = "final_K")]
    pub final_k: i64,
    pub final_delta: String,
    /// One entry per attempt.
    pub outcomes: Vec<Outcome>,
    pub eval_counts: Vec<u64>,
    #[serde(rename = "L_sequence")]
    pub l_seq: Vec<i64>,
    #[serde(rename = "K_sequence")]
    pub k_seq: Vec<i64>,
    pub delta_sequence: Vec<String>,
}

impl CpRunStats {
    fn new(seed: u64) -> Self {
        CpRunStats {
            seed,
            rounds: 0,
            final_l: 0,
            final_k: 0,
            final_delta: String::new(),
            outcomes: vec![],
            eval_counts: vec![],
            l_seq: vec![],
            k_seq: vec![],
            delta_sequence: vec![],
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("stats serialize")
    }
}

#[derive(Debug, Error)]
pub enum AcpError {
    #[error("iteration cap of {cap} rounds exceeded")]
    IterationCapExceeded { cap: u64, stats: Box<CpRunStats> },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AcpConfig {
    pub l0: i64,
    pub k0: i64,
    pub psi_l: Rational,
    pub psi_k: i64,
    pub eta: u64,
    pub cap: u64,
    pub seed: u64,
}

impl Default for AcpConfig {
    fn default() -> Self {
        AcpConfig { l0: 24, k0: 8, psi_l: int(2), psi_k: 8, eta: 1, cap: 64, seed: 0 }
    }
}

pub struct AcpResult<T> {
    pub y: Vec<SoftFloat>,
    pub result: T,
    pub stats: CpRunStats,
}

/// Largest K the soft float format accepts.
pub const MAX_EXPBITS: i64 = 40;

/// Draws a grid point in the perturbation area of `ybar`: per coordinate for
/// boxes, by rejection from the bounding box for discs and balls.
pub fn perturb(ybar: &[Rational], shape: Shape, delta: &Rational, spec: &GridSpec, rng: &mut ChaCha8Rng) -> Option<Vec<SoftFloat>> {
    let g = shape.group();
    if ybar.len() % g != 0 {
        return None;
    }
    let mut out = Vec::with_capacity(ybar.len());
    for obj in ybar.chunks(g) {
        let point = loop {
            let mut pt = Vec::with_capacity(g);
            for c in obj {
                pt.push(sample_interval(&(c - delta), &(c + delta), spec, rng)?);
            }
            if g == 1 {
                break pt;
            }
            let r2: Rational = pt.iter().zip(obj).map(|(a, c)| (a - c) * (a - c)).fold(Rational::zero(), |a, b| a + b);
            if r2 <= delta * delta {
                break pt;
            }
        };
        for v in point {
            out.push(fl_round_in(&v, spec.fmt).ok()?);
        }
    }
    Some(out)
}

fn check(cfg: &AcpConfig) -> Result<(), AcpError> {
    if cfg.psi_l <= Rational::one() || cfg.psi_k < 1 || cfg.eta < 1 || cfg.l0 < 1 || cfg.k0 < 2 {
        return Err(AcpError::Config("need psi_L > 1, psi_K >= 1, eta >= 1, L0 >= 1, K0 >= 2".into()));
    }
    Ok(())
}

enum Growth {
    /// Growth by ψ: K += ψ_K on range errors, L ← ⌈ψ_L·L⌉ on guard failures.
    Psi,
    /// Basic loop: L doubles on any failure, K stays.
    Basic,
}

fn acp_loop<A: GuardedAlgorithm>(
    alg: &mut A,
    ybar: &[Rational],
    shape: Shape,
    deltas: &dyn Fn(u64) -> Rational,
    delta_max: &Rational,
    cfg: &AcpConfig,
    growth: Growth,
) -> Result<AcpResult<A::Output>, AcpError> {
    check(cfg)?;
    let mut rng = rng_for(cfg.seed, 0);
    let mut stats = CpRunStats::new(cfg.seed);
    let (mut l, mut k) = (cfg.l0, cfg.k0);
    let center: Vec<Rational> = ybar.to_vec();
    let radius = vec![delta_max.clone(); ybar.len()];
    let emax = compute_emax(&center, &radius);
    loop {
        if stats.rounds >= cfg.cap {
            stats.final_l = l;
            stats.final_k = k;
            return Err(AcpError::IterationCapExceeded { cap: cfg.cap, stats: Box::new(stats) });
        }
        stats.rounds += 1;
        stats.l_seq.push(l);
        stats.k_seq.push(k);
        let mut last = Failure::GuardFailure;
        for i in 0..cfg.eta {
            let delta = deltas(i);
            stats.delta_sequence.push(delta.to_string());
            let attempt = Format::new(l as u32, k as u32)
                .ok()
                .and_then(|fmt| GridSpec::new(fmt, emax).ok())
                .and_then(|spec| perturb(ybar, shape, &delta, &spec, &mut rng).map(|y| (spec.fmt, y)));
            let Some((fmt, y)) = attempt else {
                // the grid is not representable at this (L, K)
                stats.outcomes.push(Outcome::RangeError);
                stats.eval_counts.push(0);
                last = Failure::RangeError;
                continue;
            };
            let a = alg.run(&y, fmt);
            stats.eval_counts.push(a.evals);
            match a.result {
                Ok(res) => {
                    stats.outcomes.push(Outcome::Success);
                    stats.final_l = l;
                    stats.final_k = k;
                    stats.final_delta = delta.to_string();
                    return Ok(AcpResult { y, result: res, stats });
                }
                Err(f) => {
                    stats.outcomes.push(f.into());
                    last = f;
                }
            }
        }
        match growth {
            Growth::Basic => l *= 2,
            Growth::Psi => match last {
                Failure::RangeError => k = (k + cfg.psi_k).min(MAX_EXPBITS),
                Failure::GuardFailure => l = (&cfg.psi_l * int(l)).ceil().to_integer().try_into().unwrap_or(i64::MAX),
            },
        }
    }
}

/// The ACP loop with fixed δ and ψ growth.
pub fn run_acp<A: GuardedAlgorithm>(
    alg: &mut A,
    ybar: &[Rational],
    shape: Shape,
    delta: &Rational,
    cfg: &AcpConfig,
) -> Result<AcpResult<A::Output>, AcpError> {
    let d = delta.clone();
    acp_loop(alg, ybar, shape, &move |_| d.clone(), delta, cfg, Growth::Psi)
}

/// Basic loop: one attempt per setting, K fixed at K0, L doubles on any failure.
pub fn run_basic_acp<A: GuardedAlgorithm>(
    alg: &mut A,
    ybar: &[Rational],
    delta: &Rational,
    l0: i64,
    k0: i64,
    cap: u64,
    seed: u64,
) -> Result<AcpResult<A::Output>, AcpError> {
    let cfg = AcpConfig { l0, k0, psi_l: int(2), psi_k: 1, eta: 1, cap, seed };
    let d = delta.clone();
    acp_loop(alg, ybar, Shape::Box, &move |_| d.clone(), delta, &cfg, Growth::Basic)
}

/// δ_max = δ_min·ψ_δ^(η−1).
pub fn delta_max(delta_min: &Rational, psi_delta: &Rational, eta: u64) -> Rational {
    (1..eta).fold(delta_min.clone(), |d, _| d * psi_delta)
}

/// The ACP loop where the i-th attempt of a round uses δ_min·ψ_δ^i.
pub fn run_acp_delta_variant<A: GuardedAlgorithm>(
    alg: &mut A,
    ybar: &[Rational],
    shape: Shape,
    psi_delta: &Rational,
    delta_min: &Rational,
    cfg: &AcpConfig,
) -> Result<AcpResult<A::Output>, AcpError> {
    if *psi_delta <= Rational::one() || !delta_min.is_positive() {
        return Err(AcpError::Config("need psi_delta > 1 and delta_min > 0".into()));
    }
    let dmax = delta_max(delta_min, psi_delta, cfg.eta);
    let (dm, pd) = (delta_min.clone(), psi_delta.clone());
    acp_loop(alg, ybar, shape, &move |i| delta_max(&dm, &pd, i + 1), &dmax, cfg, Growth::Psi)
}

/// Evaluation budget of the monotone-chain hull: every point is pushed and
/// popped at most once per chain.
pub fn hull_evaluations(n: u64) -> u64 {
    4 * n
}

/// A convenience ratio used by reports: ρ for the hull at size n.
pub fn hull_rho(p: &Rational, n: u64) -> Rational {
    rho(p, hull_evaluations(n))
}
