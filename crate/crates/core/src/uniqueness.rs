//! Geodesic multiplicity and the search for branching that breaks convexity.
//!
//! Strong convexity of a Rényi entropy forces almost every pair of points to
//! be joined by a single geodesic. The search below runs that argument
//! backwards on a finite space: it looks for targets reached by two chains
//! that agree for a while and then separate, pools the two families into one
//! plan, and reports the convexity step that fails.

use rayon::prelude::*;
use serde::Serialize;

use crate::cd_verify::{chord_values, ConvexityViolation};
use crate::entropy::{evaluate_entropy, EntropySpec};
use crate::error::{Error, Result};
use crate::geodesics::{distinct, enumerate_chains, ChainOptions, ChainSet, GeodesicChain};
use crate::space::FiniteMetricMeasureSpace;
use crate::transport::{interpolate_at, DynamicalPlan};

/// Defects at or below this are treated as rounding.
pub const DEFECT_TOL: f64 = 1e-12;

/// `δ_sep = 2 diam / k`: chains closer than this at every time count as one.
pub fn default_delta_sep(space: &FiniteMetricMeasureSpace, k: usize) -> f64 {
    2.0 * space.diam() / k as f64
}

/// Greedy maximal subset of pairwise distinct chains, as indices.
pub fn distinct_representatives(
    space: &FiniteMetricMeasureSpace,
    chains: &[GeodesicChain],
    delta_sep: f64,
) -> Result<Vec<usize>> {
    let mut reps: Vec<usize> = Vec::new();
    for (i, c) in chains.iter().enumerate() {
        let mut new = true;
        for &r in &reps {
            if !distinct(space, &chains[r], c, delta_sep)? {
                new = false;
                break;
            }
        }
        if new {
            reps.push(i);
        }
    }
    Ok(reps)
}

#[derive(Debug, Clone, Serialize)]
pub struct MultiplicityReport {
    pub base: usize,
    pub k: usize,
    pub eps_geo: f64,
    pub delta_sep: f64,
    /// Distinct chains from the base point to each point; 0 if unreachable.
    pub counts: Vec<usize>,
    pub unreachable: Vec<usize>,
    /// Points with at least two distinct chains.
    pub multi: Vec<usize>,
    /// `m(multi) / m(X)`.
    pub fraction: f64,
    pub truncated: bool,
}

pub fn multiplicity_report(
    space: &FiniteMetricMeasureSpace,
    x: usize,
    opts: &ChainOptions,
    delta_sep: Option<f64>,
) -> Result<MultiplicityReport> {
    if x >= space.len() {
        return Err(Error::Domain(format!("base point {x} out of range")));
    }
    let delta_sep = delta_sep.unwrap_or_else(|| default_delta_sep(space, opts.k));
    let per_point: Vec<(usize, bool)> = (0..space.len())
        .into_par_iter()
        .map(|y| match enumerate_chains(space, x, y, opts) {
            Ok(set) => Ok((distinct_representatives(space, &set.chains, delta_sep)?.len(), set.truncated)),
            Err(Error::EmptyChainSet { .. }) => Ok((0, false)),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let counts: Vec<usize> = per_point.iter().map(|p| p.0).collect();
    let multi: Vec<usize> = (0..space.len()).filter(|&y| counts[y] >= 2).collect();
    Ok(MultiplicityReport {
        base: x,
        k: opts.k,
        eps_geo: opts.eps_geo,
        delta_sep,
        unreachable: (0..space.len()).filter(|&y| counts[y] == 0).collect(),
        // an empty sum is -0.0
        fraction: space.mass_of(multi.iter().copied()) / space.total_mass() + 0.0,
        multi,
        counts,
        truncated: per_point.iter().any(|p| p.1),
    })
}

/// `max{t2/t1, (1-t1)/(1-t2)} ≤ 2^{1/(2N)}`.
pub fn interval_condition(t1: f64, t2: f64, n: f64) -> Result<bool> {
    if !(0.0 < t1 && t1 <= t2 && t2 < 1.0) {
        return Err(Error::Domain(format!("need 0 < t1 <= t2 < 1, got t1 = {t1}, t2 = {t2}")));
    }
    if !(n >= 1.0) {
        return Err(Error::Domain(format!("dimension must be >= 1, got {n}")));
    }
    let ratio = (t2 / t1).max((1.0 - t1) / (1.0 - t2));
    Ok(ratio <= 2f64.powf(1.0 / (2.0 * n)))
}

/// Grid pairs `i1 < i2` in `1..k` whose times satisfy the interval condition.
pub fn admissible_intervals(k: usize, n: f64) -> Vec<(usize, usize)> {
    let kf = k as f64;
    let mut out = Vec::new();
    for i1 in 1..k {
        for i2 in i1 + 1..k {
            if interval_condition(i1 as f64 / kf, i2 as f64 / kf, n).unwrap_or(false) {
                out.push((i1, i2));
            }
        }
    }
    out
}

/// Smallest resolution with at least one admissible interval.
pub fn min_resolution(n: f64) -> usize {
    (2..).find(|&k| !admissible_intervals(k, n).is_empty()).expect("fine grids always admit an interval")
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchParams {
    /// Defaults to [`default_delta_sep`].
    pub delta_sep: Option<f64>,
    /// Smallest acceptable `m(E)`; defaults to the lightest point mass.
    pub mass_floor: Option<f64>,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { delta_sep: None, mass_floor: None }
    }
}

/// `S(μ) = ∫ ρ^{1-1/N} dm` at the steps of the argument.
#[derive(Debug, Clone, Serialize)]
pub struct InequalityChain {
    /// `S` of the pooled plan at `t1`.
    pub pooled_t1: f64,
    /// `(t2-t1)/t2 · m(E)^{1/N} + t1/t2 · S(pooled at t2)`.
    pub after_pooled_convexity: f64,
    /// `t1/t2 · 2^{1/N-1} (S(ρ_{1,t2}) + S(ρ_{2,t2}))`.
    pub after_split: f64,
    /// `t1/t2 · 2^{1/N-1} (1-t2)/(1-t1) (S(ρ_{1,t1}) + S(ρ_{2,t1}))`.
    pub after_branch_convexity: f64,
    /// `t1/t2 · 2^{1/N} (1-t2)/(1-t1) S(ρ_{1,t1})`, at least `pooled_t1`.
    pub closing: f64,
    /// Which of the five links hold numerically.
    pub links: [bool; 5],
}

#[derive(Debug, Clone, Serialize)]
pub struct BranchSearchState {
    pub base: usize,
    pub a: Vec<usize>,
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
    pub a3: Vec<usize>,
    pub a4: Vec<usize>,
    pub t1: f64,
    pub t2: f64,
    pub delta: f64,
    pub witness: Option<usize>,
    pub e: Vec<usize>,
    pub g1: Vec<GeodesicChain>,
    pub g2: Vec<GeodesicChain>,
    pub pi1: Option<DynamicalPlan>,
    pub pi2: Option<DynamicalPlan>,
    /// The `t2` supports of `π1` and `π2` share no point.
    pub disjoint_at_t2: bool,
    pub chain: Option<InequalityChain>,
}

impl BranchSearchState {
    fn empty(base: usize, a: Vec<usize>) -> Self {
        Self {
            base,
            a,
            a1: Vec::new(),
            a2: Vec::new(),
            a3: Vec::new(),
            a4: Vec::new(),
            t1: 0.0,
            t2: 0.0,
            delta: 0.0,
            witness: None,
            e: Vec::new(),
            g1: Vec::new(),
            g2: Vec::new(),
            pi1: None,
            pi2: None,
            disjoint_at_t2: false,
            chain: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum BranchOutcome {
    NoneFound { stage: String, state: Box<BranchSearchState> },
    Violation { violation: Box<ConvexityViolation>, state: Box<BranchSearchState> },
}

impl BranchOutcome {
    pub fn violation(&self) -> Option<&ConvexityViolation> {
        match self {
            Self::Violation { violation, .. } => Some(violation),
            Self::NoneFound { .. } => None,
        }
    }

    pub fn state(&self) -> &BranchSearchState {
        match self {
            Self::Violation { state, .. } | Self::NoneFound { state, .. } => state,
        }
    }
}

/// Number of leading nodes two chains share.
fn agreement(a: &GeodesicChain, b: &GeodesicChain) -> usize {
    a.nodes().iter().zip(b.nodes()).take_while(|(p, q)| p == q).count()
}

/// A pair of chains from `y` towards the base point, with its shared prefix.
#[derive(Debug, Clone)]
struct Pair {
    a: GeodesicChain,
    b: GeodesicChain,
    /// Nodes `0..agree` coincide.
    agree: usize,
}

fn branching_pairs(space: &FiniteMetricMeasureSpace, set: &ChainSet, delta_sep: f64) -> Result<Vec<Pair>> {
    let c = &set.chains;
    let mut out = Vec::new();
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            if distinct(space, &c[i], &c[j], delta_sep)? {
                out.push(Pair { a: c[i].clone(), b: c[j].clone(), agree: agreement(&c[i], &c[j]) });
            }
        }
    }
    Ok(out)
}

fn renyi_s(space: &FiniteMetricMeasureSpace, spec: &EntropySpec, plan: &DynamicalPlan, i: usize) -> Result<f64> {
    Ok(-evaluate_entropy(spec, &interpolate_at(plan, i, space)?, space))
}

struct Candidate {
    violation: Option<ConvexityViolation>,
    state: BranchSearchState,
}

/// Searches for the branching configuration of the uniqueness argument with
/// base point `x` and returns the convexity step it breaks.
pub fn branch_violation_search(
    space: &FiniteMetricMeasureSpace,
    x: usize,
    spec: &EntropySpec,
    opts: &ChainOptions,
    params: &SearchParams,
) -> Result<BranchOutcome> {
    let n = match *spec {
        EntropySpec::Renyi { n } => n,
        _ => {
            return Err(Error::PreconditionViolated(format!(
                "the branching argument needs a Rényi entropy; it does not carry over to {}",
                spec.label()
            )))
        }
    };
    if x >= space.len() {
        return Err(Error::Domain(format!("base point {x} out of range")));
    }
    let k = opts.k;
    let intervals = admissible_intervals(k, n);
    if intervals.is_empty() {
        return Err(Error::GridTooCoarse { k, min_k: min_resolution(n) });
    }
    let delta_sep = params.delta_sep.unwrap_or_else(|| default_delta_sep(space, k));
    let floor = params.mass_floor.unwrap_or_else(|| space.measure().iter().cloned().fold(f64::INFINITY, f64::min));

    // chains run from the target y to the base point x
    let pairs: Vec<(usize, Vec<Pair>)> = (0..space.len())
        .into_par_iter()
        .filter(|&y| y != x)
        .map(|y| match enumerate_chains(space, y, x, opts) {
            Ok(set) => Ok((y, branching_pairs(space, &set, delta_sep)?)),
            Err(Error::EmptyChainSet { .. }) => Ok((y, Vec::new())),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, p)| !p.is_empty())
        .collect();
    let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    if a.is_empty() {
        return Ok(BranchOutcome::NoneFound {
            stage: "no point is reached by two distinct chains".into(),
            state: Box::new(BranchSearchState::empty(x, a)),
        });
    }
    let a1: Vec<usize> = pairs.iter().filter(|(_, ps)| ps.iter().any(|p| p.agree >= 2)).map(|p| p.0).collect();

    let mut best: Option<Candidate> = None;
    let mut furthest = BranchSearchState::empty(x, a.clone());
    furthest.a1 = a1.clone();
    for &(i1, i2) in &intervals {
        // pairs sharing [0, t1] and parting within (t1, t2]
        let live: Vec<(usize, Vec<&Pair>)> = pairs
            .iter()
            .filter(|(y, _)| a1.contains(y))
            .map(|(y, ps)| (*y, ps.iter().filter(|p| p.agree > i1 && p.agree <= i2).collect::<Vec<_>>()))
            .filter(|(_, ps)| !ps.is_empty())
            .collect();
        if live.is_empty() {
            continue;
        }
        let sep = |p: &Pair, i: usize| space.d(p.a.node(i), p.b.node(i));
        let widest = live
            .iter()
            .flat_map(|(_, ps)| ps.iter().flat_map(|p| (i1..=i2).map(move |i| sep(p, i))))
            .fold(0.0, f64::max);
        // strictly below half the widest separation, so that it is exceeded
        let delta = 0.5 * widest * (1.0 - 1e-9);
        let a3: Vec<(usize, Vec<&Pair>)> = live
            .iter()
            .map(|(y, ps)| {
                (*y, ps.iter().copied().filter(|p| (i1..=i2).any(|i| sep(p, i) > 2.0 * delta)).collect::<Vec<_>>())
            })
            .filter(|(_, ps)| !ps.is_empty())
            .collect();
        for t2 in i1 + 1..=i2 {
            let a4: Vec<(usize, Vec<&Pair>)> = a3
                .iter()
                .map(|(y, ps)| (*y, ps.iter().copied().filter(|p| sep(p, t2) > delta).collect::<Vec<_>>()))
                .filter(|(_, ps)| !ps.is_empty())
                .collect();
            if a4.is_empty() {
                continue;
            }
            let (w, chosen) = best_witness(space, &a4, t2, delta);
            let mut state = BranchSearchState::empty(x, a.clone());
            state.a1 = a1.clone();
            state.a2 = live.iter().map(|l| l.0).collect();
            state.a3 = a3.iter().map(|l| l.0).collect();
            state.a4 = a4.iter().map(|l| l.0).collect();
            state.t1 = i1 as f64 / k as f64;
            state.t2 = t2 as f64 / k as f64;
            state.delta = delta;
            state.witness = Some(w);
            state.e = chosen.iter().map(|c| c.0).collect();
            let mass_e = space.mass_of(state.e.iter().copied());
            if chosen.is_empty() || mass_e < floor {
                furthest = state;
                continue;
            }
            let cand = evaluate(space, spec, n, i1, t2, chosen, mass_e, state)?;
            let better = match (&best, &cand.violation) {
                (None, _) => true,
                (Some(b), Some(v)) => b.violation.as_ref().is_none_or(|bv| v.defect > bv.defect),
                (Some(_), None) => false,
            };
            if better {
                best = Some(cand);
            }
        }
    }
    Ok(match best {
        Some(Candidate { violation: Some(v), state }) => {
            BranchOutcome::Violation { violation: Box::new(v), state: Box::new(state) }
        }
        Some(Candidate { violation: None, state }) => BranchOutcome::NoneFound {
            stage: "branching found but no convexity step fails numerically".into(),
            state: Box::new(state),
        },
        None => BranchOutcome::NoneFound {
            stage: "no branching set of sufficient mass satisfies the interval condition".into(),
            state: Box::new(furthest),
        },
    })
}

/// The point `w` maximizing `m(E)`, with one pair per target in `E` oriented
/// so that its first chain is inside `B(w, δ/2)` at `t2` and its second is not.
fn best_witness(
    space: &FiniteMetricMeasureSpace,
    a4: &[(usize, Vec<&Pair>)],
    t2: usize,
    delta: f64,
) -> (usize, Vec<(usize, GeodesicChain, GeodesicChain)>) {
    let mut best: (usize, f64, Vec<(usize, GeodesicChain, GeodesicChain)>) = (0, -1.0, Vec::new());
    for w in 0..space.len() {
        let inside = |c: &GeodesicChain| space.d(w, c.node(t2)) < 0.5 * delta;
        let mut e = Vec::new();
        for (y, ps) in a4 {
            let found = ps.iter().find_map(|p| {
                if inside(&p.a) && !inside(&p.b) {
                    Some((p.a.clone(), p.b.clone()))
                } else if inside(&p.b) && !inside(&p.a) {
                    Some((p.b.clone(), p.a.clone()))
                } else {
                    None
                }
            });
            if let Some((g1, g2)) = found {
                e.push((*y, g1, g2));
            }
        }
        let mass = space.mass_of(e.iter().map(|c| c.0));
        if mass > best.1 {
            best = (w, mass, e);
        }
    }
    (best.0, best.2)
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    space: &FiniteMetricMeasureSpace,
    spec: &EntropySpec,
    n: f64,
    i1: usize,
    i2: usize,
    chosen: Vec<(usize, GeodesicChain, GeodesicChain)>,
    mass_e: f64,
    mut state: BranchSearchState,
) -> Result<Candidate> {
    let k = chosen[0].1.k();
    let weight = |y: usize| space.mass(y) / mass_e;
    let pi1 = DynamicalPlan::new(space, chosen.iter().map(|(y, g, _)| (g.clone(), weight(*y))).collect())?;
    let pi2 = DynamicalPlan::new(space, chosen.iter().map(|(y, _, g)| (g.clone(), weight(*y))).collect())?;
    let pooled = DynamicalPlan::new(
        space,
        chosen.iter().flat_map(|(y, g1, g2)| [(g1.clone(), 0.5 * weight(*y)), (g2.clone(), 0.5 * weight(*y))]).collect(),
    )?;
    let support = |plan: &DynamicalPlan, i: usize| -> Vec<usize> {
        let mut s: Vec<usize> = plan.entries().iter().map(|(c, _)| c.node(i)).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let (s1, s2) = (support(&pi1, i2), support(&pi2, i2));
    state.disjoint_at_t2 = s1.iter().all(|p| s2.binary_search(p).is_err());

    let (t1, t2) = (i1 as f64 / k as f64, i2 as f64 / k as f64);
    let s_e = mass_e.powf(1.0 / n);
    let pooled_t1 = renyi_s(space, spec, &pooled, i1)?;
    let pooled_t2 = renyi_s(space, spec, &pooled, i2)?;
    let (a1, a2) = (renyi_s(space, spec, &pi1, i1)?, renyi_s(space, spec, &pi2, i1)?);
    let (b1, b2) = (renyi_s(space, spec, &pi1, i2)?, renyi_s(space, spec, &pi2, i2)?);
    let split = 2f64.powf(1.0 / n - 1.0);
    let shrink = (1.0 - t2) / (1.0 - t1);
    let after_pooled_convexity = (t2 - t1) / t2 * s_e + t1 / t2 * pooled_t2;
    let after_split = t1 / t2 * split * (b1 + b2);
    let after_branch_convexity = t1 / t2 * split * shrink * (a1 + a2);
    let closing = t1 / t2 * 2f64.powf(1.0 / n) * shrink * a1;
    let close = |u: f64, v: f64| (u - v).abs() <= 1e-9 * (1.0 + v.abs());
    let links = [
        pooled_t1 >= after_pooled_convexity - 1e-12,
        after_pooled_convexity > after_split,
        after_split >= after_branch_convexity - 1e-12,
        close(after_branch_convexity, closing),
        closing >= pooled_t1 - 1e-12,
    ];
    state.chain = Some(InequalityChain {
        pooled_t1,
        after_pooled_convexity,
        after_split,
        after_branch_convexity,
        closing,
        links,
    });

    // the convexity steps the argument uses; one of them has to give way
    let mut steps = vec![(pooled.slice(space, 0, i2)?, i1 as f64 / i2 as f64)];
    for plan in [&pi1, &pi2] {
        steps.push((plan.slice(space, i1, k)?, (i2 - i1) as f64 / (k - i1) as f64));
    }
    let mut violation: Option<ConvexityViolation> = None;
    for (plan, t) in steps {
        let (lhs, rhs) = chord_values(space, spec, &plan, t)?;
        let defect = lhs - rhs;
        if defect > DEFECT_TOL && violation.as_ref().is_none_or(|v| defect > v.defect) {
            violation = Some(ConvexityViolation { plan, t, spec: *spec, lhs, rhs, defect });
        }
    }
    state.g1 = chosen.iter().map(|c| c.1.clone()).collect();
    state.g2 = chosen.iter().map(|c| c.2.clone()).collect();
    state.pi1 = Some(pi1);
    state.pi2 = Some(pi2);
    Ok(Candidate { violation, state })
}
