//! Command-line front end. `run` parses arguments and returns the exit code
//! together with everything that would be printed, so tests can drive it
//! in-process.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::algo::{
    distributed_probability, eta, hull_evaluations, run_acp, run_basic_acp, AcpConfig, AcpError, AlgorithmDescription,
    Shape,
};
use crate::errorbounds::{guarded_eval, parse_expr, GuardVerdict};
use crate::exact::{int, parse_exact, parse_rational, to_decimal, Rational};
use crate::geom::{build, parse_points_csv, GeomError, HullAlgorithm, Placement, PredicateInstance, PredicateParams, Registered};
use crate::grid::{enumerate_grid, rng_for, sample_grid_point_with, GridSpec, PerturbationBox};
use crate::qr::{probability, quantified_relations, rational_requirement, ArithmeticRequirement, QrError};
use crate::softfloat::{count_in_interval, enumerate_nonneg, Format};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_ANALYZABLE: i32 = 2;
pub const EXIT_CAP: i32 = 3;

/// Enumeration refuses sets larger than this.
pub const ENUMERATION_LIMIT: u64 = 10_000_000;

fn dyadic(s: &str) -> Result<Rational, String> {
    parse_rational(s).map_err(|e| e.to_string())
}

fn exact(s: &str) -> Result<Rational, String> {
    parse_exact(s).map_err(|e| e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "cpert", version, about = "Controlled perturbation: precision analysis, enumeration, Monte Carlo and ACP runs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Precision requirements of a predicate, or of the hull algorithm.
    Analyze(AnalyzeArgs),
    /// Exact counts over F_{L,K} or the grid.
    Enumerate(EnumerateArgs),
    /// Empirical success frequency of guarded evaluation, as CSV.
    Simulate(SimulateArgs),
    /// Convex hull of a point file under controlled perturbation.
    Hull(HullArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct PredicateArgs {
    /// univariate | multivariate | in_box | in_circle | orientation2d | rational
    #[arg(long)]
    pub predicate: Option<String>,
    /// Degree of the default univariate x^d.
    #[arg(long)]
    pub degree: Option<u32>,
    /// Ascending coefficients a_0 … a_d (numerator for `rational`).
    #[arg(long, num_args = 1.., value_parser = exact, allow_negative_numbers = true)]
    pub coeffs: Option<Vec<Rational>>,
    /// Ascending denominator coefficients for `rational`.
    #[arg(long, num_args = 1.., value_parser = exact, allow_negative_numbers = true)]
    pub den_coeffs: Option<Vec<Rational>>,
    /// Polynomial in prefix form, e.g. "(mul x0 x1)".
    #[arg(long)]
    pub poly: Option<String>,
    #[arg(long, num_args = 1.., value_parser = dyadic, allow_negative_numbers = true)]
    pub center: Option<Vec<Rational>>,
    /// Box half-lengths for `in_box`.
    #[arg(long, num_args = 1.., value_parser = dyadic)]
    pub half: Option<Vec<Rational>>,
    /// Circle radius for `in_circle`.
    #[arg(long, value_parser = dyadic)]
    pub radius: Option<Rational>,
}

impl PredicateArgs {
    fn params(&self) -> PredicateParams {
        PredicateParams {
            coeffs: self.coeffs.clone(),
            degree: self.degree,
            den_coeffs: self.den_coeffs.clone(),
            poly: self.poly.clone(),
            center: self.center.clone(),
            half: self.half.clone(),
            radius: self.radius.clone(),
        }
    }

    fn arity(&self, name: &str) -> Result<usize, String> {
        Ok(match name {
            "univariate" | "rational" => 1,
            "in_circle" => 2,
            "orientation2d" => 6,
            "in_box" => self.center.as_ref().or(self.half.as_ref()).map_or(2, |v| v.len()),
            "multivariate" => match &self.poly {
                Some(src) => parse_expr(src).map_err(|e| e.to_string())?.arity(),
                None => 2,
            },
            other => return Err(GeomError::UnknownPredicate(other.into()).to_string()),
        })
    }
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub pred: PredicateArgs,
    /// Analyse an algorithm instead of a single predicate (only `hull`).
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Input size for `--algorithm`.
    #[arg(long, default_value_t = 16)]
    pub n: u64,
    #[arg(long, value_parser = exact)]
    pub p: Rational,
    /// Perturbation radii; a single value is used for every coordinate.
    #[arg(long, num_args = 1.., value_parser = dyadic)]
    pub delta: Option<Vec<Rational>>,
    #[arg(long, allow_negative_numbers = true)]
    pub emax: Option<i64>,
    /// Analyse at one center instead of every center allowed by emax.
    #[arg(long, num_args = 1.., value_parser = dyadic, allow_negative_numbers = true)]
    pub xbar: Option<Vec<Rational>>,
    #[arg(long, value_parser = exact, default_value = "1/2")]
    pub t: Rational,
    #[arg(long, value_enum, default_value_t = ShapeArg::Box)]
    pub shape: ShapeArg,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct EnumerateArgs {
    #[arg(long = "L")]
    pub l: u32,
    #[arg(long = "K")]
    pub k: u32,
    /// Required with --grid.
    #[arg(long, allow_negative_numbers = true)]
    pub emax: Option<i64>,
    #[arg(long, num_args = 2, value_parser = exact, allow_negative_numbers = true)]
    pub universe: Vec<Rational>,
    #[arg(long, num_args = 2, value_parser = exact, allow_negative_numbers = true)]
    pub target: Vec<Rational>,
    /// Enumerate the grid G_{L,K,emax} instead of F_{L,K}.
    #[arg(long)]
    pub grid: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub pred: PredicateArgs,
    #[arg(long = "L", num_args = 1.., required = true)]
    pub l: Vec<u32>,
    #[arg(long = "K", num_args = 1.., required = true)]
    pub k: Vec<u32>,
    #[arg(long, default_value_t = 10_000)]
    pub trials: u64,
    #[arg(long, env = "CP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, num_args = 1.., value_parser = dyadic, allow_negative_numbers = true, required = true)]
    pub xbar: Vec<Rational>,
    #[arg(long, num_args = 1.., value_parser = dyadic, required = true)]
    pub delta: Vec<Rational>,
    #[arg(long, value_parser = exact, default_value = "1/2")]
    pub t: Rational,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct HullArgs {
    /// CSV of `x,y` rows.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ShapeArg::Box)]
    pub shape: ShapeArg,
    #[arg(long, value_parser = dyadic)]
    pub delta: Rational,
    #[arg(long, env = "CP_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "psi-l", value_parser = exact, default_value = "2")]
    pub psi_l: Rational,
    #[arg(long = "psi-k", default_value_t = 8)]
    pub psi_k: i64,
    /// Basic loop: L doubles on any failure, K stays fixed.
    #[arg(long)]
    pub basic: bool,
    #[arg(long = "L0", default_value_t = 24)]
    pub l0: i64,
    #[arg(long = "K0", default_value_t = 8)]
    pub k0: i64,
    #[arg(long, default_value_t = 64)]
    pub cap: u64,
    /// Attempts per parameter setting; defaults to η of the shape.
    #[arg(long)]
    pub eta: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ShapeArg {
    Box,
    Disc,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Shape {
        match s {
            ShapeArg::Box => Shape::Box,
            ShapeArg::Disc => Shape::Disc,
        }
    }
}

/// Exit code and captured output of one invocation.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl CliOutput {
    fn ok(stdout: String) -> Self {
        CliOutput { code: EXIT_OK, stdout, stderr: String::new() }
    }

    fn fail(code: i32, msg: impl Into<String>) -> Self {
        let mut stderr = msg.into();
        stderr.push('\n');
        CliOutput { code, stdout: String::new(), stderr }
    }
}

pub fn run<I, T>(args: I) -> CliOutput
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliOutput::ok(text),
                // clap's own usage code is 2, which is reserved for NotAnalyzable here
                _ => CliOutput::fail(EXIT_ERROR, text.trim_end()),
            };
        }
    };
    match cli.command {
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Enumerate(a) => cmd_enumerate(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Hull(a) => cmd_hull(&a),
    }
}

fn geom_failure(e: GeomError) -> CliOutput {
    match e {
        GeomError::Bounds(b) => CliOutput::fail(EXIT_NOT_ANALYZABLE, format!("not analyzable: {b}")),
        other => CliOutput::fail(EXIT_ERROR, other.to_string()),
    }
}

fn qr_failure(e: QrError) -> CliOutput {
    match e {
        QrError::InvalidProbability => CliOutput::fail(EXIT_ERROR, e.to_string()),
        other => CliOutput::fail(EXIT_NOT_ANALYZABLE, format!("not analyzable: {other}")),
    }
}

fn broadcast(delta: &[Rational], k: usize) -> Vec<Rational> {
    if delta.len() == 1 && k > 1 {
        vec![delta[0].clone(); k]
    } else {
        delta.to_vec()
    }
}

fn list(v: &[Rational]) -> String {
    let parts: Vec<String> = v.iter().map(|r| r.to_string()).collect();
    format!("({})", parts.join(", "))
}

fn trace(out: &mut String, label: &str, inst: &PredicateInstance, r: &ArithmeticRequirement) {
    let d = &inst.desc;
    let _ = writeln!(out, "{label}: {}", inst.expr);
    let _ = writeln!(out, "  k = {}  emax = {}  t = {}  delta = {}  mu(U) = {}", d.k, d.emax, d.t, list(&d.delta), d.mu());
    let _ = writeln!(out, "  step 1  p = {}  eps_nu = {}  region bound = {}", r.p, r.eps_nu, r.region);
    let clamp = if r.clamped { "  (clamped to the end of the line)" } else { "" };
    let how = if r.lambda_exact { "exact" } else { "bracketed" };
    let _ = writeln!(out, "  step 2  lambda = {} ({how}){clamp}  gamma = {}", r.lambda, list(&r.gamma));
    let _ = writeln!(out, "  step 3  t*gamma = {}", list(&r.t_gamma));
    let _ = writeln!(out, "  step 4  phi_inf(t*gamma) = {}", r.phi);
    let _ = writeln!(out, "  step 5  L_safe = {}  L_grid = {}", r.l_safe, r.l_grid);
    let _ = writeln!(out, "  step 6  L_f = {}  K_f = {}", r.l_f, r.k_f);
}

fn instance_json(inst: &PredicateInstance, r: &ArithmeticRequirement) -> Value {
    json!({
        "predicate": inst.name,
        "expr": inst.expr.to_string(),
        "k": inst.desc.k,
        "emax": inst.desc.emax,
        "requirement": r.to_json(),
    })
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> CliOutput {
    let delta_in = a.delta.clone().unwrap_or_else(|| vec![int(1)]);
    let place = match &a.xbar {
        Some(x) => Placement::Point(x.clone()),
        None => Placement::Emax(a.emax.unwrap_or(1)),
    };
    if let Some(alg) = &a.algorithm {
        if alg != "hull" {
            return CliOutput::fail(EXIT_ERROR, format!("unknown algorithm `{alg}` (only `hull`)"));
        }
        return analyze_hull(a, &broadcast(&delta_in, 6), &place);
    }
    let Some(name) = a.pred.predicate.as_deref() else {
        return CliOutput::fail(EXIT_ERROR, "--predicate or --algorithm is required");
    };
    let k = match (&a.xbar, a.pred.arity(name)) {
        (_, Err(e)) => return CliOutput::fail(EXIT_ERROR, e),
        (Some(x), Ok(_)) if name == "multivariate" || name == "in_box" => x.len(),
        (_, Ok(k)) => k,
    };
    let delta = broadcast(&delta_in, k);
    let reg = match build(name, &a.pred.params(), &place, &delta, &a.t) {
        Ok(r) => r,
        Err(e) => return geom_failure(e),
    };
    let mut out = String::new();
    match &reg {
        Registered::Plain(inst) => match quantified_relations(&inst.desc, &inst.bounds, &a.p) {
            Ok(r) => {
                if a.json {
                    out = instance_json(inst, &r).to_string() + "\n";
                } else {
                    trace(&mut out, name, inst, &r);
                }
            }
            Err(e) => return qr_failure(e),
        },
        Registered::Rational { expr, numerator: g, denominator: h } => {
            match rational_requirement((&g.desc, &g.bounds), (&h.desc, &h.bounds), &a.p) {
                Ok(r) => {
                    if a.json {
                        let v = json!({
                            "predicate": name,
                            "expr": expr.to_string(),
                            "component_p": ((Rational::one() + &a.p) / int(2)).to_string(),
                            "numerator": instance_json(g, &r.numerator),
                            "denominator": instance_json(h, &r.denominator),
                            "L_f": r.l_f,
                            "K_f": r.k_f,
                        });
                        out = v.to_string() + "\n";
                    } else {
                        let _ = writeln!(out, "rational: {expr}");
                        let _ = writeln!(out, "components analysed at (1+p)/2 = {}", (Rational::one() + &a.p) / int(2));
                        trace(&mut out, "numerator", g, &r.numerator);
                        trace(&mut out, "denominator", h, &r.denominator);
                        let _ = writeln!(out, "L_f = {}  K_f = {}", r.l_f, r.k_f);
                    }
                }
                Err(e) => return qr_failure(e),
            }
        }
    }
    CliOutput::ok(out)
}

fn analyze_hull(a: &AnalyzeArgs, delta: &[Rational], place: &Placement) -> CliOutput {
    let reg = match build("orientation2d", &PredicateParams::default(), place, delta, &a.t) {
        Ok(Registered::Plain(i)) => i,
        Ok(_) => unreachable!("orientation2d is a plain predicate"),
        Err(e) => return geom_failure(e),
    };
    let shape: Shape = a.shape.into();
    let algo = AlgorithmDescription {
        predicates: vec![("orientation2d".into(), &reg.desc, &reg.bounds)],
        n_e: Box::new(hull_evaluations),
        shape,
    };
    let d = match distributed_probability(&algo, &a.p, a.n) {
        Ok(d) => d,
        Err(e) => return qr_failure(e),
    };
    let ne = hull_evaluations(a.n);
    let mut out = String::new();
    if a.json {
        let per: Vec<Value> = d.per_predicate.iter().map(|(_, r)| instance_json(&reg, r)).collect();
        let v = json!({
            "algorithm": "hull",
            "n": a.n,
            "N_E": ne,
            "rho": d.rho.to_string(),
            "eta": d.eta,
            "L_ACP": d.l_acp,
            "K_ACP": d.k_acp,
            "predicates": per,
        });
        out = v.to_string() + "\n";
    } else {
        let _ = writeln!(out, "algorithm hull  n = {}  N_E = {ne}  p = {}", a.n, a.p);
        let _ = writeln!(out, "rho = (1-p)/N_E = {}  predicates analysed at 1-rho = {}", d.rho, Rational::one() - &d.rho);
        for (_, r) in &d.per_predicate {
            trace(&mut out, "orientation2d", &reg, r);
        }
        let _ = writeln!(out, "L_ACP = {}  K_ACP = {}  eta = {}", d.l_acp, d.k_acp, d.eta);
    }
    CliOutput::ok(out)
}

/// F_{L,K} ∩ [a, b] in ascending order, after the size check.
fn floats_in(a: &Rational, b: &Rational, fmt: Format) -> Result<Vec<Rational>, BigUint> {
    let zero = Rational::zero();
    let mut n = BigUint::zero();
    if !b.is_negative() {
        n += count_in_interval(&a.clone().max(zero.clone()), b, fmt);
    }
    if a.is_negative() {
        let lo = (-b).max(zero.clone());
        n += count_in_interval(&lo, &-a, fmt);
        if lo.is_zero() {
            n -= 1u32;
        }
    }
    if n > BigUint::from(ENUMERATION_LIMIT) {
        return Err(n);
    }
    let mut out = Vec::new();
    if a.is_negative() {
        let lo = (-b).max(zero.clone());
        out.extend(enumerate_nonneg(&lo, &-a, fmt).into_iter().filter(|v| !v.is_zero()).rev().map(|v| -v));
    }
    if !b.is_negative() {
        out.extend(enumerate_nonneg(&a.clone().max(zero), b, fmt));
    }
    Ok(out)
}

fn pq(r: &Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

pub fn cmd_enumerate(a: &EnumerateArgs) -> CliOutput {
    let (ua, ub) = (&a.universe[0], &a.universe[1]);
    let (ta, tb) = (&a.target[0], &a.target[1]);
    if ua > ub {
        return CliOutput::fail(EXIT_ERROR, "empty universe");
    }
    let fmt = match Format::new(a.l, a.k) {
        Ok(f) => f,
        Err(e) => return CliOutput::fail(EXIT_ERROR, e.to_string()),
    };
    let (set, members) = if a.grid {
        let Some(emax) = a.emax else {
            return CliOutput::fail(EXIT_ERROR, "--grid needs --emax");
        };
        let spec = match GridSpec::new(fmt, emax) {
            Ok(s) => s,
            Err(e) => return CliOutput::fail(EXIT_ERROR, e.to_string()),
        };
        let n = spec.count(ua, ub);
        if n > BigUint::from(ENUMERATION_LIMIT) {
            return CliOutput::fail(EXIT_ERROR, format!("refusing to enumerate {n} points (limit {ENUMERATION_LIMIT})"));
        }
        (format!("G_{{{},{},{}}}", a.l, a.k, emax), enumerate_grid(ua, ub, &spec))
    } else {
        match floats_in(ua, ub, fmt) {
            Ok(v) => (format!("F_{{{},{}}}", a.l, a.k), v),
            Err(n) => {
                return CliOutput::fail(EXIT_ERROR, format!("refusing to enumerate {n} points (limit {ENUMERATION_LIMIT})"))
            }
        }
    };
    let total = members.len();
    let hits = members.iter().filter(|v| *v >= ta && *v <= tb).count();
    let ratio = if total == 0 { None } else { Some(Rational::new(hits.into(), total.into())) };
    let ratio_s = ratio.as_ref().map_or("undefined".to_string(), pq);
    let out = if a.json {
        json!({
            "set": set,
            "universe": [ua.to_string(), ub.to_string()],
            "target": [ta.to_string(), tb.to_string()],
            "size": total,
            "count": hits,
            "ratio": ratio_s,
        })
        .to_string()
            + "\n"
    } else {
        format!("set {set}  universe [{ua}, {ub}]  size {total}\ntarget [{ta}, {tb}]  count {hits}\nratio {ratio_s}\n")
    };
    CliOutput::ok(out)
}

pub const SIMULATE_HEADER: &str = "L,K,trials,successes,empirical_p,theoretical_p_f";

fn theoretical(reg: &Registered, l: i64, k: i64) -> Option<Rational> {
    match reg {
        Registered::Plain(i) => probability(&i.desc, &i.bounds, l, k).ok().map(|r| r.p_f),
        Registered::Rational { numerator: g, denominator: h, .. } => {
            let pg = probability(&g.desc, &g.bounds, l, k).ok()?.p_f;
            let ph = probability(&h.desc, &h.bounds, l, k).ok()?.p_f;
            // both guards must hold
            Some((pg + ph - int(1)).max(Rational::zero()))
        }
    }
}

/// Successes of guarded evaluation over `trials` seeded grid draws in U_δ(x̄).
pub fn simulate_successes(reg: &Registered, xbar: &[Rational], delta: &[Rational], l: u32, k: u32, trials: u64, seed: u64, jobs: usize) -> u64 {
    let Ok(b) = PerturbationBox::new(xbar.to_vec(), delta.to_vec()) else { return 0 };
    let Ok(fmt) = Format::new(l, k) else { return 0 };
    let Ok(spec) = GridSpec::new(fmt, b.emax()) else { return 0 };
    let expr = reg.expr();
    let one = |j: u64| -> u64 {
        let mut rng = rng_for(seed, j);
        match sample_grid_point_with(&b, &spec, &mut rng) {
            Ok(y) => matches!(guarded_eval(expr, &y, fmt), Ok(GuardVerdict::SignCertified(_))) as u64,
            Err(_) => 0,
        }
    };
    if jobs <= 1 {
        return (0..trials).map(one).sum();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(|| (0..trials).into_par_iter().map(one).sum()),
        Err(_) => (0..trials).map(one).sum(),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> CliOutput {
    let Some(name) = a.pred.predicate.as_deref() else {
        return CliOutput::fail(EXIT_ERROR, "--predicate is required");
    };
    let delta = broadcast(&a.delta, a.xbar.len());
    let reg = match build(name, &a.pred.params(), &Placement::Point(a.xbar.clone()), &delta, &a.t) {
        Ok(r) => r,
        Err(e) => return geom_failure(e),
    };
    let mut out = String::from(SIMULATE_HEADER);
    out.push('\n');
    if a.trials == 0 {
        return CliOutput::ok(out);
    }
    for &l in &a.l {
        for &k in &a.k {
            let s = simulate_successes(&reg, &a.xbar, &delta, l, k, a.trials, a.seed, a.jobs);
            let emp = Rational::new(s.into(), a.trials.into());
            let th = theoretical(&reg, l as i64, k as i64).map_or("NA".into(), |v| to_decimal(&v, 6));
            let _ = writeln!(out, "{l},{k},{},{s},{},{th}", a.trials, to_decimal(&emp, 6));
        }
    }
    CliOutput::ok(out)
}

pub fn cmd_hull(a: &HullArgs) -> CliOutput {
    let text = match std::fs::read_to_string(&a.input) {
        Ok(t) => t,
        Err(e) => return CliOutput::fail(EXIT_ERROR, format!("{}: {e}", a.input.display())),
    };
    let ybar = match parse_points_csv(&text) {
        Ok(p) => p,
        Err(e) => return CliOutput::fail(EXIT_ERROR, format!("{}: {e}", a.input.display())),
    };
    if !a.delta.is_positive() {
        return CliOutput::fail(EXIT_ERROR, "--delta must be positive");
    }
    let shape: Shape = a.shape.into();
    let eta_used = a.eta.unwrap_or_else(|| eta(shape));
    let mut alg = HullAlgorithm;
    let res = if a.basic {
        if shape != Shape::Box {
            return CliOutput::fail(EXIT_ERROR, "--basic perturbs in a box only");
        }
        run_basic_acp(&mut alg, &ybar, &a.delta, a.l0, a.k0, a.cap, a.seed)
    } else {
        let cfg = AcpConfig {
            l0: a.l0,
            k0: a.k0,
            psi_l: a.psi_l.clone(),
            psi_k: a.psi_k,
            eta: eta_used,
            cap: a.cap,
            seed: a.seed,
        };
        run_acp(&mut alg, &ybar, shape, &a.delta, &cfg)
    };
    let algorithm = if a.basic { "basic" } else { "acp" };
    match res {
        Ok(r) => {
            let pts: Vec<[String; 2]> = r.y.chunks(2).map(|c| [c[0].to_rational().to_string(), c[1].to_rational().to_string()]).collect();
            let v = json!({
                "algorithm": algorithm,
                "eta": if a.basic { 1 } else { eta_used },
                "hull": r.result,
                "points": pts,
                "stats": r.stats.to_json(),
            });
            CliOutput::ok(v.to_string() + "\n")
        }
        Err(AcpError::IterationCapExceeded { cap, stats }) => {
            let v = json!({ "algorithm": algorithm, "error": "iteration_cap_exceeded", "cap": cap, "stats": stats.to_json() });
            CliOutput {
                code: EXIT_CAP,
                stdout: v.to_string() + "\n",
                stderr: format!("iteration cap of {cap} rounds exceeded\n"),
            }
        }
        Err(e) => CliOutput::fail(EXIT_ERROR, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn go(args: &[&str]) -> CliOutput {
        run(std::iter::once("cpert").chain(args.iter().copied()))
    }

    #[test]
    fn enumerate_reference_ratios() {
        let o = go(&["enumerate", "--L", "2", "--K", "3", "--universe", "0", "2", "--target", "0", "1"]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        assert!(o.stdout.contains("ratio 17/21"), "{}", o.stdout);
        let o = go(&["enumerate", "--L", "2", "--K", "3", "--universe", "0", "2", "--target", "1", "2"]);
        assert!(o.stdout.contains("ratio 5/21"));
        let o = go(&["enumerate", "--L", "2", "--K", "3", "--emax", "1", "--grid", "--universe", "0", "2", "--target", "0", "1"]);
        assert!(o.stdout.contains("ratio 5/9"), "{}", o.stdout);
        let o = go(&["enumerate", "--L", "2", "--K", "3", "--emax", "1", "--grid", "--universe", "0", "2", "--target", "0.1", "0.9"]);
        assert!(o.stdout.contains("ratio 1/3"));
    }

    #[test]
    fn enumerate_symmetric_universe_and_refusal() {
        let o = go(&["enumerate", "--L", "2", "--K", "3", "--universe", "-2", "2", "--target", "-2", "0", "--json"]);
        let v: Value = serde_json::from_str(&o.stdout).unwrap();
        assert_eq!(v["size"], 41);
        assert_eq!(v["ratio"], "21/41");
        let o = go(&["enumerate", "--L", "30", "--K", "8", "--universe", "0", "2", "--target", "0", "1"]);
        assert_eq!(o.code, EXIT_ERROR);
        assert!(o.stderr.contains("refusing"));
    }

    #[test]
    fn analyze_univariate_example() {
        let o = go(&["analyze", "--predicate", "univariate", "--degree", "1", "--p", "0.5", "--delta", "1", "--emax", "1", "--t", "0.5", "--json"]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        let v: Value = serde_json::from_str(&o.stdout).unwrap();
        assert_eq!(v["requirement"]["L_safe"], 7);
    }

    #[test]
    fn analyze_rational_shows_both_components() {
        let o = go(&["analyze", "--predicate", "rational", "--p", "0.5", "--delta", "1/4", "--emax", "1"]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        assert!(o.stdout.contains("numerator") && o.stdout.contains("denominator"));
        assert!(o.stdout.contains("(1+p)/2 = 3/4"));
    }

    #[test]
    fn analyze_hull_rho() {
        let o = go(&["analyze", "--algorithm", "hull", "--n", "16", "--p", "0.5", "--delta", "1/4", "--json"]);
        assert_eq!(o.code, 0, "{}", o.stderr);
        let v: Value = serde_json::from_str(&o.stdout).unwrap();
        assert_eq!(v["rho"], "1/128");
        assert_eq!(v["N_E"], 64);
    }

    #[test]
    fn not_analyzable_exit_code() {
        // delta larger than 2^emax cannot be placed
        let o = go(&["analyze", "--predicate", "univariate", "--p", "0.5", "--delta", "4", "--emax", "1"]);
        assert_eq!(o.code, EXIT_NOT_ANALYZABLE, "{}", o.stderr);
    }

    #[test]
    fn simulate_header_only_and_determinism() {
        let base = ["simulate", "--predicate", "univariate", "--L", "8", "--K", "6", "--xbar", "1/2", "--delta", "1/4", "--seed", "5"];
        let mut zero = base.to_vec();
        zero.extend(["--trials", "0"]);
        assert_eq!(go(&zero).stdout, format!("{SIMULATE_HEADER}\n"));
        let mut some = base.to_vec();
        some.extend(["--trials", "200"]);
        let a = go(&some);
        some.extend(["--jobs", "3"]);
        let b = go(&some);
        assert_eq!(a.code, 0, "{}", a.stderr);
        assert_eq!(a.stdout, b.stdout);
        assert_eq!(a.stdout.lines().count(), 2);
    }

    #[test]
    fn usage_errors_do_not_use_code_two() {
        assert_eq!(go(&["analyze"]).code, EXIT_ERROR);
        assert_eq!(go(&["--help"]).code, 0);
    }
}
