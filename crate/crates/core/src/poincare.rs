//! Upper gradients and (1,1)-Poincaré certificates on balls.
//!
//! A certificate runs the transport argument as a computation: split the
//! ball at a median of `u`, move one half onto the other along an optimal
//! plan, and bound the oscillation of `u` by the integral of `g` along the
//! chains. Every intermediate inequality is evaluated and recorded.

use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cd_verify::check_density_bound_cd;
use crate::entropy::{beta_lower_bound, Dim, DistortionParams};
use crate::error::{Error, Result};
use crate::geodesics::{chain_length, enumerate_chains, ChainOptions, ChainSet, GeodesicChain};
use crate::space::{ball, Ball, FiniteMetricMeasureSpace};
use crate::transport::{interpolate_at, optimal_dynamical_plan, spread_plan, DynamicalPlan, ProbMeasure};

/// Ordered pairs checked exhaustively; larger spaces are sampled.
pub const ATLAS_PAIR_LIMIT: usize = 200_000;

const EXACT_TOL: f64 = 1e-9;

/// A function on the points of a space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarField(Vec<f64>);

impl ScalarField {
    pub fn new(space: &FiniteMetricMeasureSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.len() {
            return Err(Error::SizeMismatch(values.len(), space.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("field value {v} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn from_fn<F: Fn(usize) -> f64>(space: &FiniteMetricMeasureSpace, f: F) -> Result<Self> {
        Self::new(space, (0..space.len()).map(f).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn at(&self, p: usize) -> f64 {
        self.0[p]
    }
}

/// A nonnegative function certified as an upper gradient at one resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpperGradient {
    pub g: Vec<f64>,
    pub k: usize,
    pub eps_geo: f64,
}

/// `(1/k) Σ (g(γ_i) + g(γ_{i+1})) / 2`, the chain integral of `g`.
pub fn trapezoid(chain: &GeodesicChain, g: &[f64]) -> f64 {
    let k = chain.k() as f64;
    chain.nodes().windows(2).map(|w| 0.5 * (g[w[0]] + g[w[1]])).sum::<f64>() / k
}

/// Right-hand side of the upper gradient inequality on one chain, with the
/// constant-speed length `l(γ) = d(γ_0, γ_k)`.
pub fn chain_bound(chain: &GeodesicChain, g: &[f64]) -> f64 {
    chain_length(chain) * trapezoid(chain, g)
}

/// Chain sets for every ordered pair of distinct points, or a seeded sample
/// of [`ATLAS_PAIR_LIMIT`] pairs on larger spaces.
#[derive(Debug, Clone)]
pub struct ChainAtlas {
    pub opts: ChainOptions,
    pub sets: Vec<ChainSet>,
    /// Pairs with no admissible chain; nothing to check there.
    pub missing: usize,
    pub sampled: bool,
    pub truncated: bool,
}

impl ChainAtlas {
    pub fn build(space: &FiniteMetricMeasureSpace, opts: &ChainOptions) -> Result<Self> {
        let n = space.len();
        let total = n * n.saturating_sub(1);
        let sampled = total > ATLAS_PAIR_LIMIT;
        let pairs: Vec<(usize, usize)> = if sampled {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            (0..ATLAS_PAIR_LIMIT)
                .map(|_| {
                    let x = rng.random_range(0..n);
                    let y = (x + rng.random_range(1..n)) % n;
                    (x, y)
                })
                .collect()
        } else {
            (0..n).flat_map(|x| (0..n).filter(move |&y| y != x).map(move |y| (x, y))).collect()
        };
        let found: Vec<Option<ChainSet>> = pairs
            .par_iter()
            .map(|&(x, y)| match enumerate_chains(space, x, y, opts) {
                Ok(set) => Ok(Some(set)),
                Err(Error::EmptyChainSet { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect::<Result<_>>()?;
        let missing = found.iter().filter(|s| s.is_none()).count();
        let sets: Vec<ChainSet> = found.into_iter().flatten().collect();
        let truncated = sets.iter().any(|s| s.truncated);
        Ok(Self { opts: *opts, sets, missing, sampled, truncated })
    }

    pub fn chains(&self) -> impl Iterator<Item = &GeodesicChain> {
        self.sets.iter().flat_map(|s| s.chains.iter())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainWitness {
    pub nodes: Vec<usize>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UpperGradientCheck {
    pub holds: bool,
    pub chains_checked: usize,
    /// The chain with the largest `|Δu| - bound`.
    pub worst: Option<ChainWitness>,
    pub sampled: bool,
    pub truncated: bool,
}

/// The constant-speed length undercounts the traversed length of a chain by
/// up to `eps_geo`, so the bound is relaxed by that factor.
fn ug_violated(lhs: f64, rhs: f64, eps_geo: f64) -> bool {
    lhs > rhs * (1.0 + eps_geo) + EXACT_TOL * (1.0 + lhs.abs())
}

pub fn verify_upper_gradient_with(
    space: &FiniteMetricMeasureSpace,
    atlas: &ChainAtlas,
    u: &ScalarField,
    g: &[f64],
) -> Result<UpperGradientCheck> {
    if g.len() != space.len() {
        return Err(Error::SizeMismatch(g.len(), space.len()));
    }
    let mut worst: Option<ChainWitness> = None;
    let mut checked = 0usize;
    let mut holds = true;
    for chain in atlas.chains() {
        checked += 1;
        let lhs = (u.at(chain.start()) - u.at(chain.end())).abs();
        let rhs = chain_bound(chain, g);
        holds &= !ug_violated(lhs, rhs, atlas.opts.eps_geo);
        if worst.as_ref().is_none_or(|w| lhs - rhs > w.lhs - w.rhs) {
            worst = Some(ChainWitness { nodes: chain.nodes().to_vec(), lhs, rhs });
        }
    }
    Ok(UpperGradientCheck { holds, chains_checked: checked, worst, sampled: atlas.sampled, truncated: atlas.truncated })
}

/// Checks `|u(γ_0) - u(γ_k)| ≤ (1 + eps_geo) l(γ) (1/k) Σ (g_i + g_{i+1})/2`
/// on every enumerated chain.
pub fn verify_upper_gradient(
    space: &FiniteMetricMeasureSpace,
    u: &ScalarField,
    g: &[f64],
    opts: &ChainOptions,
) -> Result<UpperGradientCheck> {
    let atlas = ChainAtlas::build(space, opts)?;
    verify_upper_gradient_with(space, &atlas, u, g)
}

/// Local slopes `max |u(p) - u(q)| / d(p, q)` over `0 < d(p, q) ≤ radius`.
pub fn local_slopes(space: &FiniteMetricMeasureSpace, u: &ScalarField, radius: f64) -> Vec<f64> {
    (0..space.len())
        .map(|p| {
            (0..space.len())
                .filter(|&q| q != p && space.d(p, q) <= radius && space.d(p, q) > 0.0)
                .map(|q| (u.at(p) - u.at(q)).abs() / space.d(p, q))
                .fold(0.0, f64::max)
        })
        .collect()
}

pub fn slope_gradient_with(
    space: &FiniteMetricMeasureSpace,
    atlas: &ChainAtlas,
    u: &ScalarField,
    neighbor_radius: f64,
) -> Result<UpperGradient> {
    if !(neighbor_radius > 0.0) {
        return Err(Error::Domain(format!("neighbor radius must be positive, got {neighbor_radius}")));
    }
    let g = local_slopes(space, u, neighbor_radius);
    let check = verify_upper_gradient_with(space, atlas, u, &g)?;
    if !check.holds {
        let w = check.worst.expect("a failing check has a witness");
        return Err(Error::NotAnUpperGradient { nodes: w.nodes, lhs: w.lhs, rhs: w.rhs });
    }
    Ok(UpperGradient { g, k: atlas.opts.k, eps_geo: atlas.opts.eps_geo })
}

/// The discrete slope of `u`, certified against every chain at `opts`.
pub fn slope_gradient(
    space: &FiniteMetricMeasureSpace,
    u: &ScalarField,
    neighbor_radius: f64,
    opts: &ChainOptions,
) -> Result<UpperGradient> {
    let atlas = ChainAtlas::build(space, opts)?;
    slope_gradient_with(space, &atlas, u, neighbor_radius)
}

/// A ball cut at a median of `u`. Points on the median level set may be
/// shared between the halves; `plus[i] + minus[i] = 1` for member `i`.
#[derive(Debug, Clone, Serialize)]
pub struct MedianSplit {
    pub ball: Ball,
    pub median: f64,
    /// Share of each member (in `ball.members` order) assigned to `{u ≥ M}`.
    pub plus: Vec<f64>,
    pub minus: Vec<f64>,
    pub mass_plus: f64,
    pub mass_minus: f64,
    /// Share of the median level set sent to the upper half, as `p/q`.
    pub level_share: String,
    /// The halves have equal mass in exact arithmetic.
    pub balanced: bool,
}

impl MedianSplit {
    /// The two halves normalized to probability measures, `(lower, upper)`.
    pub fn measures(&self, space: &FiniteMetricMeasureSpace) -> Result<(ProbMeasure, ProbMeasure)> {
        let mut lo = vec![0.0; space.len()];
        let mut hi = vec![0.0; space.len()];
        for (i, &p) in self.ball.members.iter().enumerate() {
            lo[p] = self.minus[i] * space.mass(p);
            hi[p] = self.plus[i] * space.mass(p);
        }
        Ok((ProbMeasure::from_unnormalized(space, lo)?, ProbMeasure::from_unnormalized(space, hi)?))
    }
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite value")
}

/// `M = inf { a : m({u > a} ∩ B) ≤ m(B)/2 }`, with the level set `{u = M}`
/// shared so that both halves carry exactly `m(B)/2`.
pub fn median_split(space: &FiniteMetricMeasureSpace, u: &ScalarField, b: &Ball) -> Result<MedianSplit> {
    if !(b.mass > 0.0) {
        return Err(Error::Domain("median split of a ball with zero mass".into()));
    }
    let members = &b.members;
    let total: BigRational = members.iter().map(|&p| exact(space.mass(p))).sum();
    let half = &total / BigRational::from_integer(2.into());
    let mut levels: Vec<f64> = members.iter().map(|&p| u.at(p)).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let above = |a: f64| -> BigRational {
        members.iter().filter(|&&p| u.at(p) > a).map(|&p| exact(space.mass(p))).sum()
    };
    let median = *levels.iter().find(|&&v| above(v) <= half).expect("the top level has nothing above it");
    let upper = above(median);
    let level: BigRational = members.iter().filter(|&&p| u.at(p) == median).map(|&p| exact(space.mass(p))).sum();
    let share = if level.is_zero() { BigRational::zero() } else { (&half - &upper) / &level };
    let mass_plus = &upper + &share * &level;
    let mass_minus = &total - &mass_plus;
    let share_f = share.to_f64().unwrap_or(0.0);
    let plus: Vec<f64> = members
        .iter()
        .map(|&p| match u.at(p).total_cmp(&median) {
            std::cmp::Ordering::Greater => 1.0,
            std::cmp::Ordering::Equal => share_f,
            std::cmp::Ordering::Less => 0.0,
        })
        .collect();
    let minus = plus.iter().map(|s| 1.0 - s).collect();
    Ok(MedianSplit {
        ball: b.clone(),
        median,
        plus,
        minus,
        mass_plus: mass_plus.to_f64().unwrap_or(f64::NAN),
        mass_minus: mass_minus.to_f64().unwrap_or(f64::NAN),
        level_share: share.to_string(),
        balanced: mass_plus == mass_minus,
    })
}

/// One inequality of the argument, evaluated.
#[derive(Debug, Clone, Serialize)]
pub struct ProofStep {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Exact steps hold for any finite space; the others compare against a
    /// continuum bound and only hold up to grid effects.
    pub exact: bool,
}

impl ProofStep {
    fn exact(name: &str, lhs: f64, rhs: f64) -> Self {
        let holds = lhs <= rhs + EXACT_TOL * (1.0 + rhs.abs());
        Self { name: name.into(), lhs, rhs, holds, exact: true }
    }

    fn equal(name: &str, lhs: f64, rhs: f64) -> Self {
        let holds = (lhs - rhs).abs() <= EXACT_TOL * (1.0 + rhs.abs());
        Self { name: name.into(), lhs, rhs, holds, exact: true }
    }

    fn approx(name: &str, lhs: f64, rhs: f64, tol: f64) -> Self {
        Self { name: name.into(), lhs, rhs, holds: lhs <= rhs * (1.0 + tol) + EXACT_TOL, exact: false }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PoincareCertificate {
    pub center: usize,
    pub radius: f64,
    pub lambda: f64,
    pub measured_ratio: f64,
    pub constant: f64,
    /// `measured_ratio ≤ constant · (1 + tol)`.
    pub pass: bool,
    pub exact_steps_hold: bool,
    pub bounds_within_tol: bool,
    pub construction: String,
    pub median: f64,
    pub steps: Vec<ProofStep>,
    /// Largest density of each transported piece, with its bound.
    pub densities: Vec<(f64, f64)>,
    /// Upper bound on the length of the transported curves.
    pub max_curve_length: f64,
}

fn step_flags(steps: &[ProofStep]) -> (bool, bool) {
    let all = |exact: bool| steps.iter().filter(|s| s.exact == exact).all(|s| s.holds);
    (all(true), all(false))
}

/// Longest concatenation `γ¹ · β · reverse(γ²)` whose pieces meet at shared
/// half-time nodes.
fn glued_length(space: &FiniteMetricMeasureSpace, first: &DynamicalPlan, bridge: &DynamicalPlan, last: &DynamicalPlan) -> f64 {
    let longest_into = |plan: &DynamicalPlan| {
        let mut best = vec![f64::NEG_INFINITY; space.len()];
        for (c, _) in plan.entries() {
            best[c.end()] = best[c.end()].max(chain_length(c));
        }
        best
    };
    let (a, b) = (longest_into(first), longest_into(last));
    bridge
        .entries()
        .iter()
        .map(|(c, _)| a[c.start()] + chain_length(c) + b[c.end()])
        .fold(0.0, f64::max)
}

fn oscillation(space: &FiniteMetricMeasureSpace, u: &ScalarField, b: &Ball) -> (f64, f64) {
    let avg = b.members.iter().map(|&p| space.mass(p) * u.at(p)).sum::<f64>() / b.mass;
    let lhs = b.members.iter().map(|&p| space.mass(p) * (u.at(p) - avg).abs()).sum();
    (avg, lhs)
}

fn check_inputs(space: &FiniteMetricMeasureSpace, u: &ScalarField, g: &UpperGradient, opts: &ChainOptions) -> Result<()> {
    if u.values().len() != space.len() {
        return Err(Error::SizeMismatch(u.values().len(), space.len()));
    }
    if g.g.len() != space.len() {
        return Err(Error::SizeMismatch(g.g.len(), space.len()));
    }
    if g.k != opts.k {
        return Err(Error::ResolutionMismatch(g.k, opts.k));
    }
    Ok(())
}

/// Per-chain upper gradient check on a plan, returning
/// `(Σ w |Δu|, Σ w l trap, Σ w trap, max l)`.
fn plan_terms(plan: &DynamicalPlan, u: &ScalarField, g: &[f64], eps_geo: f64) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    for (chain, w) in plan.entries() {
        let du = (u.at(chain.start()) - u.at(chain.end())).abs();
        let len = chain_length(chain);
        let trap = trapezoid(chain, g);
        if ug_violated(du, len * trap, eps_geo) {
            return Err(Error::NotAnUpperGradient { nodes: chain.nodes().to_vec(), lhs: du, rhs: len * trap });
        }
        out[0] += w * du;
        out[1] += w * len * trap;
        out[2] += w * trap;
        out[3] = out[3].max(len);
    }
    Ok(out)
}

fn max_density(space: &FiniteMetricMeasureSpace, plan: &DynamicalPlan) -> Result<f64> {
    (0..=plan.k()).try_fold(0.0f64, |a, i| Ok(a.max(interpolate_at(plan, i, space)?.max_density())))
}

fn integral(space: &FiniteMetricMeasureSpace, g: &[f64], set: &[usize]) -> f64 {
    set.iter().map(|&p| space.mass(p) * g[p]).sum()
}

/// Constant of the weak inequality: `2^{N+2} e^{√((N-1)|K|) 2r}` in average
/// form for finite `N`, `4 e^{|K| r²}` in integral form for `N = ∞`.
pub fn weak_constant(params: DistortionParams, r: f64) -> f64 {
    let k = params.k.abs();
    match params.n {
        Dim::Finite(n) => 2f64.powf(n + 2.0) * (((n - 1.0).max(0.0) * k).sqrt() * 2.0 * r).exp(),
        Dim::Infinite => 4.0 * (k * r * r).exp(),
    }
}

/// The weak inequality on `B(x, r)` with dilation 2, through the median
/// split, an optimal plan between the halves and the density bound along it.
pub fn certify_weak_poincare(
    space: &FiniteMetricMeasureSpace,
    b: &Ball,
    params: DistortionParams,
    u: &ScalarField,
    g: &UpperGradient,
    opts: &ChainOptions,
    tol: f64,
) -> Result<PoincareCertificate> {
    check_inputs(space, u, g, opts)?;
    let split = median_split(space, u, b)?;
    let (r, mb) = (b.radius, b.mass);
    let (_, lhs) = oscillation(space, u, b);
    let two_median = 2.0 * b.members.iter().map(|&p| space.mass(p) * (u.at(p) - split.median).abs()).sum::<f64>();
    let (lower, upper) = split.measures(space)?;
    let big = ball(space, b.center, 2.0 * r)?;
    let target = 2.0 / mb / beta_lower_bound(params, 2.0 * r)?;
    let plan = optimal_dynamical_plan(space, &lower, &upper, opts)?;
    let (plan, _) = spread_plan(space, &plan, target, opts, 0..opts.k, |p| big.contains(p))?;
    let [du, bound, time, max_len] = plan_terms(&plan, u, &g.g, opts.eps_geo)?;
    let inside = plan.entries().iter().all(|(c, _)| c.nodes().iter().all(|&p| big.contains(p)));
    let g_big = integral(space, &g.g, &big.members);
    let density = check_density_bound_cd(&plan, 2.0 / mb, params, 2.0 * r, space, tol)?;
    let rho = density.max_density.iter().fold(0.0f64, |a, &m| a.max(m));

    let mut steps = vec![
        ProofStep::exact("mean to median", lhs, two_median),
        ProofStep::equal("separation", two_median, mb * du),
        ProofStep::approx("upper gradient", mb * du, mb * bound, opts.eps_geo),
        ProofStep::approx("length", max_len, 2.0 * r, tol),
        ProofStep::exact("radius", mb * bound, mb * max_len * time),
        ProofStep::exact("density", time, rho * g_big),
        ProofStep::approx("density bound", rho, density.bound, tol),
    ];
    if !inside {
        steps.push(ProofStep { name: "support in dilated ball".into(), lhs: 1.0, rhs: 0.0, holds: false, exact: false });
    }
    let measured_ratio = if lhs <= 0.0 {
        0.0
    } else if g_big <= 0.0 {
        f64::INFINITY
    } else {
        match params.n {
            Dim::Finite(_) => (lhs / mb) / (r * g_big / big.mass),
            Dim::Infinite => lhs / (r * g_big),
        }
    };
    let constant = weak_constant(params, r);
    let (exact_steps_hold, bounds_within_tol) = step_flags(&steps);
    let pass = measured_ratio <= constant * (1.0 + tol);
    Ok(PoincareCertificate {
        center: b.center,
        radius: r,
        lambda: 2.0,
        measured_ratio,
        constant,
        pass,
        exact_steps_hold,
        bounds_within_tol,
        construction: "median split, optimal plan between halves".into(),
        median: split.median,
        steps,
        densities: vec![(rho, density.bound)],
        max_curve_length: max_len,
    })
}

/// The strong inequality (`λ = 1`): both halves move halfway to the center,
/// a bridging plan joins the half-time measures, and the concatenated curves
/// stay in the ball with densities at most `2^{N+1}/m(B)`.
pub fn certify_strong_poincare(
    space: &FiniteMetricMeasureSpace,
    b: &Ball,
    n: Dim,
    u: &ScalarField,
    g: &UpperGradient,
    opts: &ChainOptions,
    tol: f64,
) -> Result<PoincareCertificate> {
    check_inputs(space, u, g, opts)?;
    let Dim::Finite(nd) = n else {
        return Err(Error::Domain("the strong inequality needs a finite dimension".into()));
    };
    if opts.k % 2 != 0 {
        return Err(Error::Domain(format!("the strong construction needs an even resolution, got {}", opts.k)));
    }
    let split = median_split(space, u, b)?;
    let (r, mb, x) = (b.radius, b.mass, b.center);
    let (_, lhs) = oscillation(space, u, b);
    let two_median = 2.0 * b.members.iter().map(|&p| space.mass(p) * (u.at(p) - split.median).abs()).sum::<f64>();
    let (lower, upper) = split.measures(space)?;
    let center = ProbMeasure::dirac(space, x);
    let half = opts.k / 2;
    let bound = 2f64.powf(nd + 1.0) / mb;
    let inward = |from: &ProbMeasure| -> Result<DynamicalPlan> {
        let plan = optimal_dynamical_plan(space, from, &center, opts)?;
        Ok(spread_plan(space, &plan, bound, opts, 0..half + 1, |p| b.contains(p))?.0)
    };
    let (inward_upper, inward_lower) = (inward(&upper)?, inward(&lower)?);
    let mid_upper = interpolate_at(&inward_upper, half, space)?;
    let mid_lower = interpolate_at(&inward_lower, half, space)?;
    let bridge = optimal_dynamical_plan(space, &mid_upper, &mid_lower, opts)?;
    let (bridge, _) = spread_plan(space, &bridge, bound, opts, 0..opts.k, |p| b.contains(p))?;
    let pieces = [inward_upper.slice(space, 0, half)?, bridge, inward_lower.slice(space, 0, half)?];
    for piece in &pieces {
        if let Some((c, _)) = piece.entries().iter().find(|(c, _)| c.nodes().iter().any(|&p| !b.contains(p))) {
            return Err(Error::InsideBallViolation { center: x, nodes: c.nodes().to_vec() });
        }
    }
    let g_ball = integral(space, &g.g, &b.members);
    let mut steps = vec![ProofStep::exact("mean to median", lhs, two_median)];
    let (mut piece_du, mut chained) = (0.0, 0.0);
    let mut densities = Vec::new();
    for (name, piece) in ["inward upper", "bridge", "inward lower"].iter().zip(&pieces) {
        let [du, cb, time, len] = plan_terms(piece, u, &g.g, opts.eps_geo)?;
        let rho = max_density(space, piece)?;
        steps.push(ProofStep::approx(&format!("{name}: upper gradient"), du, cb, opts.eps_geo));
        steps.push(ProofStep::exact(&format!("{name}: length"), cb, len * time));
        steps.push(ProofStep::exact(&format!("{name}: density"), time, rho * g_ball));
        steps.push(ProofStep::approx(&format!("{name}: density bound"), rho, bound, tol));
        densities.push((rho, bound));
        piece_du += du;
        chained += len * rho * g_ball;
    }
    let total_len = glued_length(space, &pieces[0], &pieces[1], &pieces[2]);
    steps.insert(1, ProofStep::exact("triangle through pieces", two_median, mb * piece_du));
    steps.push(ProofStep::approx("curve length", total_len, 2.0 * r, tol));
    steps.push(ProofStep::exact("assembled", lhs, mb * chained));
    let measured_ratio = if lhs <= 0.0 {
        0.0
    } else if g_ball <= 0.0 {
        f64::INFINITY
    } else {
        lhs / (r * g_ball)
    };
    let constant = 2f64.powf(nd + 2.0);
    let (exact_steps_hold, bounds_within_tol) = step_flags(&steps);
    let pass = measured_ratio <= constant * (1.0 + tol);
    Ok(PoincareCertificate {
        center: x,
        radius: r,
        lambda: 1.0,
        measured_ratio,
        constant,
        pass,
        exact_steps_hold,
        bounds_within_tol,
        construction: "halves moved halfway to the center, bridged at half time".into(),
        median: split.median,
        steps,
        densities,
        max_curve_length: total_len,
    })
}

/// Test functions for the sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    Distance { from: usize },
    /// McShane extension of seeded anchor values; each new value is drawn
    /// from the middle half of its admissible interval.
    Lipschitz { seed: u64, anchors: usize, lipschitz: f64 },
    /// `clamp((d(·, from) - start) / width, 0, 1)`.
    Ramp { from: usize, start: f64, width: f64 },
}

impl FunctionSpec {
    pub fn label(&self) -> String {
        match self {
            Self::Distance { from } => format!("distance({from})"),
            Self::Lipschitz { seed, anchors, lipschitz } => format!("lipschitz(seed={seed}, anchors={anchors}, L={lipschitz})"),
            Self::Ramp { from, start, width } => format!("ramp({from}, {start}, {width})"),
        }
    }

    pub fn field(&self, space: &FiniteMetricMeasureSpace) -> Result<ScalarField> {
        let n = space.len();
        match *self {
            Self::Distance { from } => {
                if from >= n {
                    return Err(Error::Domain(format!("point {from} out of range")));
                }
                ScalarField::from_fn(space, |p| space.d(from, p))
            }
            Self::Lipschitz { seed, anchors, lipschitz } => {
                if anchors == 0 || !(lipschitz >= 0.0) {
                    return Err(Error::Domain("lipschitz field needs anchors and L >= 0".into()));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut data: Vec<(usize, f64)> = Vec::with_capacity(anchors);
                for _ in 0..anchors {
                    let a = rng.random_range(0..n);
                    let lo = data.iter().map(|&(b, v)| v - lipschitz * space.d(a, b)).fold(f64::NEG_INFINITY, f64::max);
                    let hi = data.iter().map(|&(b, v)| v + lipschitz * space.d(a, b)).fold(f64::INFINITY, f64::min);
                    let (lo, hi) = if data.is_empty() { (0.0, lipschitz * space.diam()) } else { (lo, hi) };
                    let mid = 0.5 * (lo + hi);
                    data.push((a, mid + (rng.random::<f64>() - 0.5) * 0.5 * (hi - lo)));
                }
                ScalarField::from_fn(space, |p| {
                    data.iter().map(|&(a, v)| v + lipschitz * space.d(p, a)).fold(f64::INFINITY, f64::min)
                })
            }
            Self::Ramp { from, start, width } => {
                if from >= n || !(width > 0.0) {
                    return Err(Error::Domain("ramp needs a valid point and a positive width".into()));
                }
                ScalarField::from_fn(space, |p| ((space.d(from, p) - start) / width).clamp(0.0, 1.0))
            }
        }
    }
}

/// Distance functions, three Lipschitz fields and ramps of several widths
/// around seeded points.
pub fn standard_suite(space: &FiniteMetricMeasureSpace, seed: u64) -> Vec<FunctionSpec> {
    let n = space.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pitch = space.min_positive_distance();
    let diam = space.diam();
    let mut suite = vec![FunctionSpec::Distance { from: 0 }, FunctionSpec::Distance { from: rng.random_range(0..n) }];
    for i in 0..3 {
        suite.push(FunctionSpec::Lipschitz { seed: seed.wrapping_add(i), anchors: 8, lipschitz: 1.0 });
    }
    for width in [2.0 * pitch, 0.1 * diam, 0.3 * diam] {
        let from = rng.random_range(0..n);
        suite.push(FunctionSpec::Ramp { from, start: rng.random::<f64>() * 0.5 * diam, width });
    }
    suite
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub center: usize,
    pub radius: f64,
    pub function: String,
    pub certificate: Option<PoincareCertificate>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// `(center, radius, worst ratio)` per ball.
    pub worst_per_ball: Vec<(usize, f64, f64)>,
    pub worst_ratio: f64,
    pub all_pass: bool,
}

/// Weak certificates for every ball and function. `g` is the slope of each
/// function over `neighbor_radius`, certified against the full chain atlas.
pub fn poincare_sweep(
    space: &FiniteMetricMeasureSpace,
    params: DistortionParams,
    balls: &[(usize, f64)],
    suite: &[FunctionSpec],
    opts: &ChainOptions,
    neighbor_radius: f64,
    tol: f64,
) -> Result<SweepReport> {
    if suite.is_empty() || balls.is_empty() {
        return Ok(SweepReport { entries: Vec::new(), worst_per_ball: Vec::new(), worst_ratio: 0.0, all_pass: true });
    }
    let balls: Vec<Ball> = balls.iter().map(|&(c, r)| ball(space, c, r)).collect::<Result<_>>()?;
    let atlas = ChainAtlas::build(space, opts)?;
    let gradients: Vec<(String, Result<(ScalarField, UpperGradient)>)> = suite
        .par_iter()
        .map(|f| {
            let res = f.field(space).and_then(|u| {
                let g = slope_gradient_with(space, &atlas, &u, neighbor_radius)?;
                Ok((u, g))
            });
            (f.label(), res)
        })
        .collect();
    let jobs: Vec<(&Ball, &(String, Result<(ScalarField, UpperGradient)>))> =
        gradients.iter().flat_map(|fg| balls.iter().map(move |b| (b, fg))).collect();
    let entries: Vec<SweepEntry> = jobs
        .par_iter()
        .map(|&(b, (label, fg))| {
            let res = match fg {
                Ok((u, g)) => certify_weak_poincare(space, b, params, u, g, opts, tol),
                Err(e) => Err(Error::PreconditionViolated(e.to_string())),
            };
            let (certificate, error) = match res {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepEntry { center: b.center, radius: b.radius, function: label.clone(), certificate, error }
        })
        .collect();
    let worst_per_ball: Vec<(usize, f64, f64)> = balls
        .iter()
        .map(|b| {
            let w = entries
                .iter()
                .filter(|e| e.center == b.center && e.radius == b.radius)
                .filter_map(|e| e.certificate.as_ref().map(|c| c.measured_ratio))
                .fold(0.0, f64::max);
            (b.center, b.radius, w)
        })
        .collect();
    let worst_ratio = worst_per_ball.iter().map(|w| w.2).fold(0.0, f64::max);
    let all_pass = entries.iter().all(|e| e.certificate.as_ref().is_some_and(|c| c.pass));
    Ok(SweepReport { entries, worst_per_ball, worst_ratio, all_pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{grid2d, segment};

    fn flat(n: f64) -> DistortionParams {
        DistortionParams { k: 0.0, n: Dim::Finite(n) }
    }

    fn equal_points(n: usize) -> FiniteMetricMeasureSpace {
        segment(n)
    }

    #[test]
    fn median_of_four_points() {
        let s = equal_points(4);
        let u = ScalarField::new(&s, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = ball(&s, 0, 2.0).unwrap();
        let m = median_split(&s, &u, &b).unwrap();
        // m(u > 1) is exactly half the ball
        assert_eq!(m.median, 1.0);
        assert_eq!(m.plus, vec![0.0, 0.0, 1.0, 1.0]);
        assert!(m.balanced);
        assert_eq!(m.level_share, "0");
    }

    #[test]
    fn median_of_three_points_splits_the_atom() {
        let s = equal_points(3);
        let u = ScalarField::new(&s, vec![0.0, 1.0, 2.0]).unwrap();
        let b = ball(&s, 0, 2.0).unwrap();
        let m = median_split(&s, &u, &b).unwrap();
        assert_eq!(m.median, 1.0);
        assert_eq!(m.plus, vec![0.0, 0.5, 1.0]);
        assert_eq!(m.minus, vec![1.0, 0.5, 0.0]);
        assert_eq!(m.level_share, "1/2");
        assert!(m.balanced);
        assert_eq!(m.mass_plus, m.mass_minus);
    }

    #[test]
    fn constant_field_splits_its_only_level() {
        let s = equal_points(5);
        let u = ScalarField::new(&s, vec![3.0; 5]).unwrap();
        let b = ball(&s, 2, 0.3).unwrap();
        let m = median_split(&s, &u, &b).unwrap();
        assert_eq!(m.median, 3.0);
        assert!(m.balanced);
        assert!(m.plus.iter().all(|&w| w == 0.5));
    }

    #[test]
    fn median_minimizes_l1_deviation() {
        let s = segment(17);
        let u = FunctionSpec::Lipschitz { seed: 5, anchors: 6, lipschitz: 1.0 }.field(&s).unwrap();
        let b = ball(&s, 8, 0.3).unwrap();
        let m = median_split(&s, &u, &b).unwrap();
        let dev = |c: f64| b.members.iter().map(|&p| s.mass(p) * (u.at(p) - c).abs()).sum::<f64>();
        for i in 0..=40 {
            let c = -0.5 + i as f64 * 0.05;
            assert!(dev(m.median) <= dev(c) + 1e-12, "c = {c}");
        }
    }

    #[test]
    fn zero_gradient_fails_with_witness() {
        let s = segment(9);
        let u = ScalarField::from_fn(&s, |p| p as f64).unwrap();
        let check = verify_upper_gradient(&s, &u, &vec![0.0; 9], &ChainOptions::for_space(&s, 8)).unwrap();
        assert!(!check.holds);
        let w = check.worst.unwrap();
        assert!(w.lhs > w.rhs);
    }

    #[test]
    fn constant_field_has_zero_slope() {
        let s = segment(9);
        let u = ScalarField::new(&s, vec![1.0; 9]).unwrap();
        let g = slope_gradient(&s, &u, 0.2, &ChainOptions::for_space(&s, 8)).unwrap();
        assert!(g.g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_has_unit_slope() {
        let s = segment(17);
        let opts = ChainOptions::for_space(&s, 8);
        let u = FunctionSpec::Distance { from: 3 }.field(&s).unwrap();
        let g = slope_gradient(&s, &u, 1.0 / 16.0, &opts).unwrap();
        for v in &g.g {
            assert!((v - 1.0).abs() < 1e-12);
        }
        // doubling g keeps it an upper gradient
        let g2: Vec<f64> = g.g.iter().map(|v| 2.0 * v).collect();
        assert!(verify_upper_gradient(&s, &u, &g2, &opts).unwrap().holds);
    }

    #[test]
    fn step_has_slope_on_the_interface() {
        let s = segment(9);
        let h = 1.0 / 8.0;
        let u = ScalarField::from_fn(&s, |p| if p >= 4 { 1.0 } else { 0.0 }).unwrap();
        let g = slope_gradient(&s, &u, h, &ChainOptions::for_space(&s, 8)).unwrap();
        for (p, v) in g.g.iter().enumerate() {
            let want = if p == 3 || p == 4 { 1.0 / h } else { 0.0 };
            assert!((v - want).abs() < 1e-9, "p = {p}: {v}");
        }
    }

    #[test]
    fn flat_constants() {
        assert_eq!(weak_constant(flat(1.0), 0.3), 8.0);
        assert_eq!(weak_constant(flat(2.0), 0.3), 16.0);
        let inf = DistortionParams { k: -1.0, n: Dim::Infinite };
        assert!((weak_constant(inf, 0.5) - 4.0 * 0.25f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn weak_certificate_for_identity_on_segment() {
        let s = segment(33);
        let opts = ChainOptions::for_space(&s, 8);
        let u = ScalarField::from_fn(&s, |p| p as f64 / 32.0).unwrap();
        let g = slope_gradient(&s, &u, 1.0 / 32.0, &opts).unwrap();
        let b = ball(&s, 16, 0.25).unwrap();
        let c = certify_weak_poincare(&s, &b, flat(1.0), &u, &g, &opts, 0.1).unwrap();
        assert!(c.pass && c.exact_steps_hold && c.bounds_within_tol, "{c:#?}");
        assert!(c.measured_ratio <= 8.0);
        assert!(c.measured_ratio > 0.0);
    }

    #[test]
    fn constant_field_certifies_with_ratio_zero() {
        let s = segment(17);
        let opts = ChainOptions::for_space(&s, 8);
        let u = ScalarField::new(&s, vec![2.0; 17]).unwrap();
        let g = slope_gradient(&s, &u, 0.1, &opts).unwrap();
        let b = ball(&s, 8, 0.2).unwrap();
        let c = certify_weak_poincare(&s, &b, flat(1.0), &u, &g, &opts, 0.1).unwrap();
        assert_eq!(c.measured_ratio, 0.0);
        assert!(c.pass);
    }

    #[test]
    fn strong_certificate_on_segment() {
        let s = segment(33);
        let opts = ChainOptions::for_space(&s, 8);
        let u = ScalarField::from_fn(&s, |p| p as f64 / 32.0).unwrap();
        let g = slope_gradient(&s, &u, 1.0 / 32.0, &opts).unwrap();
        let b = ball(&s, 16, 0.25).unwrap();
        let c = certify_strong_poincare(&s, &b, Dim::Finite(1.0), &u, &g, &opts, 0.1).unwrap();
        assert!(c.pass && c.exact_steps_hold && c.bounds_within_tol, "{c:#?}");
        for (rho, bound) in &c.densities {
            assert!(*rho <= bound * 1.1);
        }
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.constant, 8.0);
        assert!(c.max_curve_length <= 2.0 * b.radius * 1.1);
    }

    #[test]
    fn strong_certificate_rejects_odd_resolution() {
        let s = segment(9);
        let opts = ChainOptions::for_space(&s, 7);
        let u = ScalarField::new(&s, vec![0.0; 9]).unwrap();
        let g = UpperGradient { g: vec![0.0; 9], k: 7, eps_geo: opts.eps_geo };
        let b = ball(&s, 4, 0.3).unwrap();
        assert!(matches!(
            certify_strong_poincare(&s, &b, Dim::Finite(1.0), &u, &g, &opts, 0.1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn empty_suite_gives_empty_sweep() {
        let s = segment(9);
        let r = poincare_sweep(&s, flat(1.0), &[(4, 0.3)], &[], &ChainOptions::for_space(&s, 8), 0.2, 0.1).unwrap();
        assert!(r.entries.is_empty());
    }

    #[test]
    fn small_grid_sweep() {
        let s = grid2d(7);
        let opts = ChainOptions::for_space(&s, 8);
        let suite = standard_suite(&s, 1);
        let r = poincare_sweep(&s, flat(2.0), &[(24, 0.34), (8, 0.5)], &suite, &opts, 0.4, 0.1).unwrap();
        for e in &r.entries {
            assert!(e.error.is_none(), "{}: {:?}", e.function, e.error);
        }
        assert!(r.worst_ratio <= 16.0 * 1.1, "{}", r.worst_ratio);
    }
}
