//! Numerical checks of curvature-dimension inequalities, displacement
//! convexity, density bounds along interpolations, and the evolution
//! variational inequality.
//!
//! Every inequality is evaluated with a slack `tol = tol_num + c_slack *
//! eps_geo` and reported as a margin, so discretization artifacts stay
//! visible instead of hiding behind a boolean.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::entropy::{beta_at_distance, beta_lower_bound, evaluate_entropy, Dim, DistortionParams, EntropySpec};
use crate::error::{Error, Result};
use crate::geodesics::ChainOptions;
use crate::space::FiniteMetricMeasureSpace;
use crate::transport::{
    enumerate_optimal_plans, interpolate_at, restrict_plan, spread_plan, Coupling, DynamicalPlan, ProbMeasure,
};

pub const TOL_NUM: f64 = 1e-9;

/// Density targets, as fractions of the larger endpoint density, tried when
/// every enumerated plan fails.
const SPREAD_TARGETS: [f64; 4] = [1.0, 0.75, 0.6, 0.5];

/// Powers tried alongside the critical entropy.
pub const POWER_FAMILY: [f64; 5] = [1.0, 2.0, 4.0, 8.0, 16.0];

/// Default plan cap per sample pair.
pub const DEFAULT_PLAN_CAP: usize = 256;

/// The slack for an instance: `TOL_NUM + c_slack * eps_geo`, where `c_slack`
/// is the largest factor by which distortion can inflate a density over the
/// instance's diameter (one when `K = 0`).
pub fn default_tolerance(params: DistortionParams, diameter: f64, eps_geo: f64) -> f64 {
    let c_slack = match beta_lower_bound(params, diameter) {
        Ok(l) if l > 0.0 => 1.0 / l,
        _ => 1.0,
    };
    TOL_NUM + c_slack * eps_geo
}

/// Test functionals for `CD(K, N)`: the critical entropy (Rényi for finite
/// `N`, Shannon for `N = ∞`) and the power family.
pub fn test_family(n: Dim) -> Vec<EntropySpec> {
    let mut family = vec![EntropySpec::critical(n)];
    family.extend(POWER_FAMILY.iter().map(|&p| EntropySpec::PowerTest { p }));
    family
}

/// `lim_{s↓0} F(s) / s`, the value of `(b/ρ) F(ρ/b)` when `b = ∞`.
fn slope_at_zero(spec: &EntropySpec) -> f64 {
    match *spec {
        EntropySpec::Renyi { .. } | EntropySpec::Shannon => f64::NEG_INFINITY,
        EntropySpec::PowerTest { p } if p > 1.0 => 0.0,
        EntropySpec::PowerTest { .. } => 1.0,
    }
}

fn distorted(spec: &EntropySpec, rho: f64, b: f64) -> f64 {
    if b.is_infinite() {
        slope_at_zero(spec)
    } else {
        b / rho * spec.f(rho / b)
    }
}

/// Right-hand side of the distorted convexity inequality:
/// `(1-t) Σ β_{1-t}/ρ_0 F(ρ_0/β_{1-t}) σ + t Σ β_t/ρ_1 F(ρ_1/β_t) σ`.
pub fn cd_rhs(
    spec: &EntropySpec,
    params: DistortionParams,
    mu0: &ProbMeasure,
    mu1: &ProbMeasure,
    coupling: &Coupling,
    t: f64,
    space: &FiniteMetricMeasureSpace,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    let (r0, r1) = (mu0.density(), mu1.density());
    let (mut first, mut second) = (0.0, 0.0);
    for &(x0, x1, s) in coupling.cells() {
        let d = space.d(x0, x1);
        if t < 1.0 {
            first += distorted(spec, r0[x0], beta_at_distance(1.0 - t, d, params)?) * s;
        }
        if t > 0.0 {
            second += distorted(spec, r1[x1], beta_at_distance(t, d, params)?) * s;
        }
    }
    let weighted = |w: f64, v: f64| if w == 0.0 { 0.0 } else { w * v };
    Ok(weighted(1.0 - t, first) + weighted(t, second))
}

#[derive(Debug, Clone, Serialize)]
pub struct CdEntry {
    pub t: f64,
    pub functional: String,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: f64,
    pub slack: f64,
}

/// Slack for one functional: a relative density perturbation of size `tol`
/// pushed through `F`. Critical entropies have values of order one and get
/// `tol` itself; `r^p` amplifies it to `((1 + tol)^p - 1) |E|`.
pub fn functional_slack(spec: &EntropySpec, tol: f64, rhs: f64) -> f64 {
    match *spec {
        EntropySpec::PowerTest { p } => ((1.0 + tol).powf(p) - 1.0) * rhs.abs().max(1.0),
        _ => tol,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CdSample {
    pub index: usize,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub plans_tried: usize,
    /// Index of the plan with the best worst-case margin.
    pub best_plan: usize,
    /// Smallest `margin + slack` over the entries of the best plan.
    pub best_margin: f64,
    /// Entries of the best plan.
    pub entries: Vec<CdEntry>,
    pub consistent: bool,
    pub complete: bool,
    #[serde(skip)]
    pub witness: Option<DynamicalPlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Consistent,
    /// Every enumerated plan fails on some sample and the enumeration was
    /// complete.
    Violated,
    /// Some sample failed on every plan tried, but enumeration was truncated.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct CdReport {
    pub kappa: f64,
    pub dim: Dim,
    pub family: Vec<String>,
    pub tolerance: f64,
    pub samples: Vec<CdSample>,
    pub verdict: Verdict,
    /// First failing sample, if any.
    pub witness_sample: Option<usize>,
    pub complete: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CdConfig {
    pub samples: usize,
    pub seed: u64,
    pub opts: ChainOptions,
    pub plan_cap: usize,
    /// `None` picks [`default_tolerance`].
    pub tol: Option<f64>,
}

impl CdConfig {
    pub fn new(opts: ChainOptions, samples: usize, seed: u64) -> Self {
        Self { samples, seed, opts, plan_cap: DEFAULT_PLAN_CAP, tol: None }
    }
}

/// A seeded pair of measures: each point joins a support with probability
/// one half (at least one point always does), and densities on the support
/// are Dirichlet(1).
pub fn random_pair(space: &FiniteMetricMeasureSpace, seed: u64, index: usize) -> Result<(ProbMeasure, ProbMeasure)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let draw = |rng: &mut ChaCha8Rng| {
        let mut set: Vec<usize> = (0..space.len()).filter(|_| rng.random_bool(0.5)).collect();
        if set.is_empty() {
            set.push(rng.random_range(0..space.len()));
        }
        ProbMeasure::random_on(space, &set, rng)
    };
    let mu0 = draw(&mut rng)?;
    let mu1 = draw(&mut rng)?;
    Ok((mu0, mu1))
}

/// Margins `rhs - lhs` of one plan for every grid time and functional.
pub fn cd_plan_entries(
    space: &FiniteMetricMeasureSpace,
    params: DistortionParams,
    family: &[EntropySpec],
    plan: &DynamicalPlan,
    mu0: &ProbMeasure,
    mu1: &ProbMeasure,
    tol: f64,
) -> Result<Vec<CdEntry>> {
    let coupling = plan.endpoint_coupling(space.len());
    let k = plan.k();
    let mut out = Vec::with_capacity((k + 1) * family.len());
    for i in 0..=k {
        let t = i as f64 / k as f64;
        let mu_t = interpolate_at(plan, i, space)?;
        for spec in family {
            let lhs = evaluate_entropy(spec, &mu_t, space);
            let rhs = cd_rhs(spec, params, mu0, mu1, &coupling, t, space)?;
            let slack = functional_slack(spec, tol, rhs);
            out.push(CdEntry { t, functional: spec.label(), lhs, rhs, margin: rhs - lhs, slack });
        }
    }
    Ok(out)
}

/// Smallest `margin + slack`; nonnegative when every entry holds.
fn worst(entries: &[CdEntry]) -> f64 {
    entries.iter().map(|e| e.margin + e.slack).fold(f64::INFINITY, f64::min)
}

/// Tests the distorted convexity inequality for `CD(K, N)` on seeded random
/// pairs, searching the optimal plans of each pair for one that satisfies it
/// for the whole test family at every grid time.
pub fn check_cd(space: &FiniteMetricMeasureSpace, params: DistortionParams, cfg: &CdConfig) -> Result<CdReport> {
    let pairs: Vec<(ProbMeasure, ProbMeasure)> =
        (0..cfg.samples).map(|i| random_pair(space, cfg.seed, i)).collect::<Result<_>>()?;
    check_cd_on(space, params, cfg, &pairs)
}

/// [`check_cd`] on caller-supplied pairs.
pub fn check_cd_on(
    space: &FiniteMetricMeasureSpace,
    params: DistortionParams,
    cfg: &CdConfig,
    pairs: &[(ProbMeasure, ProbMeasure)],
) -> Result<CdReport> {
    let family = test_family(params.n);
    let tol = cfg.tol.unwrap_or_else(|| default_tolerance(params, space.diam(), cfg.opts.eps_geo));
    let samples: Vec<CdSample> = pairs
        .par_iter()
        .enumerate()
        .map(|(index, (mu0, mu1))| {
            let plans = enumerate_optimal_plans(space, mu0, mu1, &cfg.opts, cfg.plan_cap)?;
            let (list, capped) = plans.plans(cfg.plan_cap);
            let mut best: Option<(usize, f64, Vec<CdEntry>)> = None;
            let mut repaired: Option<DynamicalPlan> = None;
            for (p, plan) in list.iter().enumerate() {
                let entries = cd_plan_entries(space, params, &family, plan, mu0, mu1, tol)?;
                let w = worst(&entries);
                if best.as_ref().is_none_or(|b| w > b.1) {
                    best = Some((p, w, entries));
                }
                if w >= 0.0 {
                    break;
                }
            }
            // rounding to grid nodes can stack chains that the continuum keeps
            // apart; a plan rerouted within tolerance is still admissible
            if best.as_ref().is_some_and(|b| b.1 < 0.0) {
                let top = mu0.max_density().max(mu1.max_density()) / beta_lower_bound(params, space.diam()).unwrap_or(1.0);
                let attempts = list.iter().enumerate().flat_map(|(p, plan)| SPREAD_TARGETS.iter().map(move |&f| (p, plan, f * top)));
                for (p, plan, bound) in attempts {
                    let (spread, moved) = spread_plan(space, plan, bound, &cfg.opts, 1..plan.k(), |_| true)?;
                    if moved == 0 {
                        continue;
                    }
                    let entries = cd_plan_entries(space, params, &family, &spread, mu0, mu1, tol)?;
                    let w = worst(&entries);
                    if best.as_ref().is_none_or(|b| w > b.1) {
                        best = Some((p, w, entries));
                        repaired = Some(spread);
                    }
                    if w >= 0.0 {
                        break;
                    }
                }
            }
            let (best_plan, best_margin, entries) = best.expect("at least one plan");
            let consistent = best_margin >= 0.0;
            Ok(CdSample {
                index,
                mu0: mu0.weights().to_vec(),
                mu1: mu1.weights().to_vec(),
                plans_tried: list.len(),
                best_plan,
                best_margin,
                entries,
                consistent,
                complete: plans.is_complete() && !capped,
                witness: (!consistent).then(|| repaired.unwrap_or_else(|| list[best_plan].clone())),
            })
        })
        .collect::<Result<_>>()?;
    let failing: Vec<&CdSample> = samples.iter().filter(|s| !s.consistent).collect();
    let verdict = match failing.iter().find(|s| s.complete) {
        Some(_) => Verdict::Violated,
        None if failing.is_empty() => Verdict::Consistent,
        None => Verdict::Inconclusive,
    };
    let witness_sample = failing.iter().find(|s| s.complete).or(failing.first()).map(|s| s.index);
    Ok(CdReport {
        kappa: params.k,
        dim: params.n,
        family: family.iter().map(|f| f.label()).collect(),
        tolerance: tol,
        complete: samples.iter().all(|s| s.complete),
        samples,
        verdict,
        witness_sample,
    })
}

/// A plan and time at which an entropy lies above the chord between its
/// endpoint values.
#[derive(Debug, Clone, Serialize)]
pub struct ConvexityViolation {
    pub plan: DynamicalPlan,
    pub t: f64,
    pub spec: EntropySpec,
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
}

impl ConvexityViolation {
    /// Recomputes `E(μ_t) - (1-t) E(μ_0) - t E(μ_1)` from the stored plan.
    pub fn replay(&self, space: &FiniteMetricMeasureSpace) -> Result<f64> {
        let (lhs, rhs) = chord_values(space, &self.spec, &self.plan, self.t)?;
        Ok(lhs - rhs)
    }
}

pub(crate) fn chord_values(space: &FiniteMetricMeasureSpace, spec: &EntropySpec, plan: &DynamicalPlan, t: f64) -> Result<(f64, f64)> {
    let k = plan.k();
    let i = crate::geodesics::grid_index(t, k)?;
    let e = |j: usize| interpolate_at(plan, j, space).map(|m| evaluate_entropy(spec, &m, space));
    let lhs = e(i)?;
    let rhs = (1.0 - t) * e(0)? + t * e(k)?;
    Ok((lhs, rhs))
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub spec: EntropySpec,
    pub plans_checked: usize,
    /// Smallest `rhs - lhs` over all plans and times.
    pub worst_margin: f64,
    pub tolerance: f64,
    pub violation: Option<ConvexityViolation>,
    pub complete: bool,
}

impl ConvexityReport {
    pub fn consistent(&self) -> bool {
        self.violation.is_none()
    }
}

/// Convexity of `spec` along every enumerated optimal plan between `mu0`
/// and `mu1`; reports the worst violation.
pub fn check_strong_displacement_convexity(
    space: &FiniteMetricMeasureSpace,
    spec: &EntropySpec,
    mu0: &ProbMeasure,
    mu1: &ProbMeasure,
    opts: &ChainOptions,
    cap: usize,
    tol: f64,
) -> Result<ConvexityReport> {
    let family = enumerate_optimal_plans(space, mu0, mu1, opts, cap)?;
    let (plans, capped) = family.plans(cap);
    let mut report = ConvexityReport {
        spec: *spec,
        plans_checked: plans.len(),
        worst_margin: f64::INFINITY,
        tolerance: tol,
        violation: None,
        complete: family.is_complete() && !capped,
    };
    for plan in plans {
        let k = plan.k();
        let values: Vec<f64> = (0..=k)
            .map(|j| interpolate_at(&plan, j, space).map(|m| evaluate_entropy(spec, &m, space)))
            .collect::<Result<_>>()?;
        for (i, &lhs) in values.iter().enumerate() {
            let t = i as f64 / k as f64;
            let rhs = (1.0 - t) * values[0] + t * values[k];
            let margin = rhs - lhs;
            if margin < report.worst_margin {
                report.worst_margin = margin;
                if -margin > tol {
                    report.violation =
                        Some(ConvexityViolation { plan: plan.clone(), t, spec: *spec, lhs, rhs, defect: -margin });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub bound: f64,
    /// `max_x ρ_t(x)` per grid time.
    pub max_density: Vec<f64>,
    pub worst_ratio: f64,
    pub pass: bool,
}

fn endpoint_check(plan: &DynamicalPlan, c: f64, space: &FiniteMetricMeasureSpace) -> Result<Vec<f64>> {
    let maxima: Vec<f64> = (0..=plan.k())
        .map(|i| interpolate_at(plan, i, space).map(|m| m.max_density()))
        .collect::<Result<_>>()?;
    for end in [maxima[0], maxima[plan.k()]] {
        if end > c * (1.0 + 1e-12) {
            return Err(Error::PreconditionViolated(format!("endpoint density {end} exceeds c = {c}")));
        }
    }
    Ok(maxima)
}

fn density_report(maxima: Vec<f64>, bound: f64, tol: f64) -> DensityReport {
    let worst_ratio = maxima.iter().fold(0.0f64, |a, &m| a.max(m / bound));
    DensityReport { bound, pass: worst_ratio <= 1.0 + tol, max_density: maxima, worst_ratio }
}

/// Densities along a plan under `CD(K, N)`: with endpoint densities at most
/// `c`, every intermediate density is at most `c / L`, `L` the lower bound on
/// the distortion coefficients over pairs at distance at most `diameter`.
pub fn check_density_bound_cd(
    plan: &DynamicalPlan,
    c: f64,
    params: DistortionParams,
    diameter: f64,
    space: &FiniteMetricMeasureSpace,
    tol: f64,
) -> Result<DensityReport> {
    let maxima = endpoint_check(plan, c, space)?;
    let bound = c / beta_lower_bound(params, diameter)?;
    Ok(density_report(maxima, bound, tol))
}

/// The restriction argument at one time where the density exceeds `c`.
#[derive(Debug, Clone, Serialize)]
pub struct RestrictionWitness {
    pub t: f64,
    pub level: f64,
    pub restricted_mass: f64,
    /// `log(a / π(Γ))`, below the entropy of the restricted interpolant.
    pub jensen_lower: f64,
    pub entropy_t: f64,
    /// `(1-t) E(μ'_0) + t E(μ'_1)`, below `log(c / π(Γ))`.
    pub chord: f64,
    pub convexity_upper: f64,
    /// The restricted plan breaks convexity of the Shannon entropy.
    pub restricted_plan_violates: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct StrongDensityReport {
    pub report: DensityReport,
    pub witnesses: Vec<RestrictionWitness>,
    /// Every Jensen and chord estimate held, i.e. the argument's inequalities
    /// are numerically sound on this plan.
    pub cross_check: bool,
}

/// The sharp bound `ρ_t ≤ c` expected under strong convexity, rederived at
/// each exceeding time by restricting the plan to the chains through
/// `{ρ_t ≥ a}` and comparing the Jensen lower bound `log(a/π(Γ))` with the
/// convexity upper bound `log(c/π(Γ))`.
pub fn check_density_bound_strong(
    plan: &DynamicalPlan,
    c: f64,
    space: &FiniteMetricMeasureSpace,
    tol: f64,
) -> Result<StrongDensityReport> {
    let maxima = endpoint_check(plan, c, space)?;
    let k = plan.k();
    let mut witnesses = Vec::new();
    let mut cross_check = true;
    let shannon = EntropySpec::Shannon;
    for (i, &a) in maxima.iter().enumerate() {
        if a <= c {
            continue;
        }
        let mu_t = interpolate_at(plan, i, space)?;
        let level: Vec<usize> = (0..space.len()).filter(|&p| mu_t.density()[p] >= a).collect();
        let restricted_mass: f64 = plan
            .entries()
            .iter()
            .filter(|(ch, _)| level.contains(&ch.node(i)))
            .map(|e| e.1)
            .sum();
        let sub = restrict_plan(plan, |ch| level.contains(&ch.node(i)), space)?;
        let t = i as f64 / k as f64;
        let (entropy_t, chord) = chord_values(space, &shannon, &sub, t)?;
        let jensen_lower = (a / restricted_mass).ln();
        let convexity_upper = (c / restricted_mass).ln();
        cross_check &= jensen_lower <= entropy_t + 1e-9 && chord <= convexity_upper + 1e-9;
        witnesses.push(RestrictionWitness {
            t,
            level: a,
            restricted_mass,
            jensen_lower,
            entropy_t,
            chord,
            convexity_upper,
            restricted_plan_violates: entropy_t > chord + TOL_NUM,
        });
    }
    Ok(StrongDensityReport { report: density_report(maxima, c, tol), witnesses, cross_check })
}

/// Samples of a curve of measures at strictly increasing times.
#[derive(Debug, Clone, Serialize)]
pub struct FlowTrajectory {
    samples: Vec<(f64, ProbMeasure)>,
}

impl FlowTrajectory {
    pub fn new(samples: Vec<(f64, ProbMeasure)>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Domain("a trajectory needs at least two samples".into()));
        }
        if samples[0].0 < 0.0 || samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Domain("trajectory times must be >= 0 and strictly increasing".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, ProbMeasure)] {
        &self.samples
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EviStep {
    pub t: f64,
    pub h: f64,
    /// `[W_2^2(ν, μ_{t+h}) - W_2^2(ν, μ_t)] / (2h)`.
    pub lhs: f64,
    /// `E(ν) - E(μ_t)`.
    pub rhs: f64,
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EviReport {
    pub spec: EntropySpec,
    pub steps: Vec<EviStep>,
    pub pass: bool,
}

/// Forward-difference check of the evolution variational inequality along a
/// sampled trajectory.
pub fn evi_check(
    space: &FiniteMetricMeasureSpace,
    flow: &FlowTrajectory,
    nu: &ProbMeasure,
    spec: &EntropySpec,
    tol: f64,
) -> Result<EviReport> {
    if matches!(spec, EntropySpec::PowerTest { .. }) {
        return Err(Error::PreconditionViolated("EVI is checked for Renyi or Shannon entropies".into()));
    }
    let e_nu = evaluate_entropy(spec, nu, space);
    let dist2 = |mu: &ProbMeasure| crate::transport::w2(space, nu, mu).map(|(w, _)| w * w);
    let mut steps = Vec::new();
    for w in flow.samples.windows(2) {
        let ((t0, m0), (t1, m1)) = (&w[0], &w[1]);
        let h = t1 - t0;
        let lhs = (dist2(m1)? - dist2(m0)?) / (2.0 * h);
        let rhs = e_nu - evaluate_entropy(spec, m0, space);
        let residual = lhs - rhs;
        steps.push(EviStep { t: *t0, h, lhs, rhs, residual, pass: residual <= tol });
    }
    let pass = steps.iter().all(|s| s.pass);
    Ok(EviReport { spec: *spec, steps, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{segment, theta};
    use crate::transport::{optimal_dynamical_plan, w2};

    fn two_point() -> FiniteMetricMeasureSpace {
        FiniteMetricMeasureSpace::new(vec!["a".into(), "b".into()], vec![0.0, 1.0, 1.0, 0.0], vec![0.5, 0.5]).unwrap()
    }

    fn flat(n: f64) -> DistortionParams {
        DistortionParams::new(0.0, Dim::Finite(n))
    }

    #[test]
    fn flat_rhs_is_the_convex_combination() {
        let s = segment(9);
        let mu0 = ProbMeasure::uniform_on(&s, &[0, 1, 2]).unwrap();
        let mu1 = ProbMeasure::from_unnormalized(&s, vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 3.0, 1.0]).unwrap();
        let (_, c) = w2(&s, &mu0, &mu1).unwrap();
        for n in [1.0, 2.0, 3.0] {
            let spec = EntropySpec::Renyi { n };
            let e0 = evaluate_entropy(&spec, &mu0, &s);
            let e1 = evaluate_entropy(&spec, &mu1, &s);
            for t in [0.0, 0.25, 0.5, 1.0] {
                let rhs = cd_rhs(&spec, flat(n), &mu0, &mu1, &c, t, &s).unwrap();
                assert!((rhs - ((1.0 - t) * e0 + t * e1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn four_cell_rhs_by_hand() {
        let s = two_point();
        let mu0 = ProbMeasure::new(&s, vec![0.5, 0.5]).unwrap();
        let mu1 = ProbMeasure::new(&s, vec![0.25, 0.75]).unwrap();
        let sigma = Coupling::from_cells(2, vec![(0, 0, 0.2), (0, 1, 0.3), (1, 0, 0.05), (1, 1, 0.45)]);
        let params = DistortionParams::new(-1.0, Dim::Finite(2.0));
        let t = 0.5;
        // β_{1/2}(x, x) = 1 and β_{1/2} at distance 1 = sinh(1/2) / (sinh(1) / 2)
        let b = 0.5f64.sinh() / (0.5 * 1f64.sinh());
        // (β/ρ) F(ρ/β) = -sqrt(β/ρ) for N = 2
        let f = |rho: f64, beta: f64| -(beta / rho).sqrt();
        let (r0a, r0b, r1a, r1b) = (1.0, 1.0, 0.5, 1.5);
        let first = f(r0a, 1.0) * 0.2 + f(r0a, b) * 0.3 + f(r0b, b) * 0.05 + f(r0b, 1.0) * 0.45;
        let second = f(r1a, 1.0) * 0.2 + f(r1b, b) * 0.3 + f(r1a, b) * 0.05 + f(r1b, 1.0) * 0.45;
        let expected = 0.5 * first + 0.5 * second;
        let got = cd_rhs(&EntropySpec::Renyi { n: 2.0 }, params, &mu0, &mu1, &sigma, t, &s).unwrap();
        assert!((got - expected).abs() < 1e-14, "{got} vs {expected}");
    }

    #[test]
    fn segment_is_cd_zero_one() {
        let s = segment(17);
        let cfg = CdConfig::new(ChainOptions::for_space(&s, 8), 12, 3);
        let report = check_cd(&s, flat(1.0), &cfg).unwrap();
        assert_eq!(report.verdict, Verdict::Consistent, "{:?}", report.samples.iter().map(|s| s.best_margin).collect::<Vec<_>>());
        // lowering K keeps every sample consistent
        let lower = check_cd(&s, DistortionParams::new(-1.0, Dim::Finite(1.0)), &cfg).unwrap();
        assert_eq!(lower.verdict, Verdict::Consistent);
    }

    #[test]
    fn rounding_collisions_are_spread_out() {
        // sample 2 of this seed stacks two chains on one node at t = 3/4
        let s = segment(17);
        let cfg = CdConfig::new(ChainOptions::for_space(&s, 8), 12, 11);
        let report = check_cd(&s, flat(1.0), &cfg).unwrap();
        assert_eq!(report.verdict, Verdict::Consistent);
    }

    #[test]
    fn theta_breaks_convexity_of_e1() {
        let t = theta(1.0, 0.5, 8).unwrap();
        let s = &t.space;
        let (x, y) = t.junctions;
        let near_y: Vec<usize> = std::iter::once(y).chain(t.tail.iter().copied()).collect();
        let mu0 = ProbMeasure::uniform_on(s, &near_y).unwrap();
        let mu1 = ProbMeasure::dirac(s, x);
        let report = check_strong_displacement_convexity(
            s,
            &EntropySpec::Renyi { n: 1.0 },
            &mu0,
            &mu1,
            &ChainOptions::for_space(s, 8),
            64,
            TOL_NUM,
        )
        .unwrap();
        let v = report.violation.expect("split plans double the support");
        assert!(v.defect > 0.0);
        assert!((v.replay(s).unwrap() - v.defect).abs() < 1e-12);
    }

    #[test]
    fn identical_endpoints_are_convex() {
        let s = segment(9);
        let mu = ProbMeasure::uniform_on(&s, &[2, 3, 7]).unwrap();
        let r = check_strong_displacement_convexity(&s, &EntropySpec::Shannon, &mu, &mu, &ChainOptions::for_space(&s, 4), 16, TOL_NUM).unwrap();
        assert!(r.consistent());
        assert!(r.worst_margin.abs() < 1e-12);
    }

    #[test]
    fn density_bounds() {
        let s = segment(17);
        let mu0 = ProbMeasure::uniform_on(&s, &(0..8).collect::<Vec<_>>()).unwrap();
        let mu1 = ProbMeasure::uniform_on(&s, &(9..17).collect::<Vec<_>>()).unwrap();
        let plan = optimal_dynamical_plan(&s, &mu0, &mu1, &ChainOptions::for_space(&s, 8)).unwrap();
        let c = mu0.max_density().max(mu1.max_density());
        let flat = check_density_bound_cd(&plan, c, DistortionParams::new(0.0, Dim::Finite(1.0)), 1.0, &s, 1e-9).unwrap();
        assert_eq!(flat.bound, c);
        assert!(flat.pass);
        let curved = check_density_bound_cd(&plan, c, DistortionParams::new(-1.0, Dim::Infinite), 2.0, &s, 1e-9).unwrap();
        assert!((curved.bound - c * (2.0f64 / 3.0).exp()).abs() < 1e-12);
        let strong = check_density_bound_strong(&plan, c, &s, 0.1).unwrap();
        assert!(strong.report.pass && strong.cross_check);
        let dirac = optimal_dynamical_plan(&s, &ProbMeasure::dirac(&s, 0), &mu1, &ChainOptions::for_space(&s, 8)).unwrap();
        assert!(matches!(check_density_bound_strong(&dirac, c, &s, 0.1), Err(Error::PreconditionViolated(_))));
    }

    #[test]
    fn strong_density_rederivation_on_a_merging_plan() {
        // two chains cross in the middle of a segment, doubling the density
        let s = segment(5);
        let a = crate::geodesics::GeodesicChain::new(&s, vec![1, 2, 3]);
        let b = crate::geodesics::GeodesicChain::new(&s, vec![3, 2, 1]);
        let plan = DynamicalPlan::new(&s, vec![(a, 0.5), (b, 0.5)]).unwrap();
        assert!(!plan.is_optimal());
        let c = 2.5;
        let r = check_density_bound_strong(&plan, c, &s, 1e-9).unwrap();
        assert!(!r.report.pass);
        assert!((r.report.worst_ratio - 2.0).abs() < 1e-12);
        assert!(r.cross_check);
        let w = &r.witnesses[0];
        assert_eq!(w.t, 0.5);
        assert!((w.jensen_lower - 5f64.ln()).abs() < 1e-12);
        assert!((w.convexity_upper - 2.5f64.ln()).abs() < 1e-12);
        assert!(w.restricted_plan_violates);
    }

    #[test]
    fn evi_examples() {
        let s = two_point();
        let uniform = ProbMeasure::uniform(&s);
        let spike = ProbMeasure::new(&s, vec![1.0, 0.0]).unwrap();
        let constant = |m: &ProbMeasure| FlowTrajectory::new(vec![(0.0, m.clone()), (0.5, m.clone()), (1.0, m.clone())]).unwrap();
        for nu in [&spike, &uniform] {
            let r = evi_check(&s, &constant(&uniform), nu, &EntropySpec::Shannon, TOL_NUM).unwrap();
            assert!(r.pass);
        }
        let r = evi_check(&s, &constant(&spike), &uniform, &EntropySpec::Shannon, TOL_NUM).unwrap();
        assert!(!r.pass);
        for step in &r.steps {
            assert!((step.residual - std::f64::consts::LN_2).abs() < 1e-12);
        }
        assert!(evi_check(&s, &constant(&uniform), &uniform, &EntropySpec::PowerTest { p: 2.0 }, 0.0).is_err());
        assert!(FlowTrajectory::new(vec![(0.0, uniform.clone())]).is_err());
    }

    #[test]
    fn evi_on_a_contracting_flow() {
        // three points on a line; the flow moves mass toward ν at a rate
        // that outpaces the entropy gap
        let s = segment(3);
        let nu = ProbMeasure::uniform(&s);
        let m0 = ProbMeasure::new(&s, vec![0.5, 0.5, 0.0]).unwrap();
        let m1 = ProbMeasure::new(&s, vec![0.4, 0.4, 0.2]).unwrap();
        let m2 = ProbMeasure::new(&s, vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
        let flow = FlowTrajectory::new(vec![(0.0, m0.clone()), (0.05, m1.clone()), (0.1, m2)]).unwrap();
        let r = evi_check(&s, &flow, &nu, &EntropySpec::Shannon, TOL_NUM).unwrap();
        let d2 = |m: &ProbMeasure| w2(&s, &nu, m).unwrap().0.powi(2);
        let e = |m: &ProbMeasure| evaluate_entropy(&EntropySpec::Shannon, m, &s);
        let expected = (d2(&m1) - d2(&m0)) / 0.1 - (e(&nu) - e(&m0));
        assert!((r.steps[0].residual - expected).abs() < 1e-12);
        assert!(r.pass, "{:?}", r.steps);
    }
}
