use std::collections::BTreeMap;

use serde::Serialize;

use super::{optimal_vertices, w2, Coupling, ProbMeasure};
use crate::error::{Error, Result};
use crate::geodesics::{enumerate_chains, grid_index, ChainOptions, ChainSet, GeodesicChain};
use crate::space::FiniteMetricMeasureSpace;

/// Mixture weights tried on a cell that two chains can serve.
pub const MIXTURE_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Relative tolerance of the optimality recheck.
const OPTIMALITY_TOL: f64 = 1e-9;

/// A finitely supported measure on chains of a common resolution.
#[derive(Debug, Clone, Serialize)]
pub struct DynamicalPlan {
    k: usize,
    entries: Vec<(GeodesicChain, f64)>,
    optimal: bool,
}

impl DynamicalPlan {
    /// Builds a plan and rechecks optimality of its endpoint coupling.
    pub fn new(space: &FiniteMetricMeasureSpace, entries: Vec<(GeodesicChain, f64)>) -> Result<Self> {
        let mut plan = Self::unchecked(entries)?;
        plan.optimal = check_optimality(&plan, space)?;
        Ok(plan)
    }

    fn unchecked(entries: Vec<(GeodesicChain, f64)>) -> Result<Self> {
        let k = entries.first().map(|e| e.0.k()).ok_or(Error::ZeroMassRestriction)?;
        if let Some(e) = entries.iter().find(|e| e.0.k() != k) {
            return Err(Error::ResolutionMismatch(k, e.0.k()));
        }
        if entries.iter().any(|e| !(e.1 > 0.0)) {
            return Err(Error::InvalidMeasure("plan weights must be positive".into()));
        }
        let total: f64 = entries.iter().map(|e| e.1).sum();
        if (total - 1.0).abs() > super::MARGINAL_TOL {
            return Err(Error::InvalidMeasure(format!("plan weights sum to {total}")));
        }
        Ok(Self { k, entries, optimal: false })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn entries(&self) -> &[(GeodesicChain, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Whether the endpoint coupling attains `W_2` between the endpoint
    /// marginals, as of the last recheck.
    pub fn is_optimal(&self) -> bool {
        self.optimal
    }

    pub fn endpoint_coupling(&self, n: usize) -> Coupling {
        Coupling::from_cells(n, self.entries.iter().map(|(c, w)| (c.start(), c.end(), *w)).collect())
    }

    /// `Σ w · span^2`.
    pub fn action(&self) -> f64 {
        self.entries.iter().map(|(c, w)| w * c.span() * c.span()).sum()
    }

    /// The plan seen on grid steps `from..=to`, reparametrized to `[0, 1]`.
    pub fn slice(&self, space: &FiniteMetricMeasureSpace, from: usize, to: usize) -> Result<Self> {
        if !(from < to && to <= self.k) {
            return Err(Error::Domain(format!("slice {from}..{to} of a {}-step plan", self.k)));
        }
        let entries = self.entries.iter().map(|(c, w)| (c.slice(space, from, to), *w)).collect();
        Self::new(space, entries)
    }
}

/// Compares the endpoint cost with a fresh `W_2` solve between the endpoint
/// marginals.
pub fn check_optimality(plan: &DynamicalPlan, space: &FiniteMetricMeasureSpace) -> Result<bool> {
    let coupling = plan.endpoint_coupling(space.len());
    let mu = ProbMeasure::from_unnormalized(space, coupling.row_sums())?;
    let nu = ProbMeasure::from_unnormalized(space, coupling.col_sums())?;
    let (w, _) = w2(space, &mu, &nu)?;
    let cost = coupling.cost(space);
    Ok(cost <= w * w + OPTIMALITY_TOL * (1.0 + cost))
}

pub fn interpolate_at(plan: &DynamicalPlan, i: usize, space: &FiniteMetricMeasureSpace) -> Result<ProbMeasure> {
    if i > plan.k {
        return Err(Error::OffGridTime { t: i as f64 / plan.k as f64, k: plan.k });
    }
    let mut w = vec![0.0; space.len()];
    for (c, m) in &plan.entries {
        w[c.node(i)] += m;
    }
    ProbMeasure::from_unnormalized(space, w)
}

/// `μ_t = (e_t)_# π`.
pub fn interpolate(plan: &DynamicalPlan, t: f64, space: &FiniteMetricMeasureSpace) -> Result<ProbMeasure> {
    interpolate_at(plan, grid_index(t, plan.k)?, space)
}

/// `π|_Γ / π(Γ)` for `Γ` the chains accepted by `keep`.
pub fn restrict_plan<F: Fn(&GeodesicChain) -> bool>(
    plan: &DynamicalPlan,
    keep: F,
    space: &FiniteMetricMeasureSpace,
) -> Result<DynamicalPlan> {
    let kept: Vec<(GeodesicChain, f64)> = plan.entries.iter().filter(|(c, _)| keep(c)).cloned().collect();
    let mass: f64 = kept.iter().map(|e| e.1).sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMassRestriction);
    }
    DynamicalPlan::new(space, kept.into_iter().map(|(c, w)| (c, w / mass)).collect())
}

/// An optimal coupling lifted cell by cell to the first admissible chain.
pub fn optimal_dynamical_plan(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    opts: &ChainOptions,
) -> Result<DynamicalPlan> {
    let (_, coupling) = w2(space, mu, nu)?;
    let mut entries = Vec::with_capacity(coupling.cells().len());
    for &(x, y, w) in coupling.cells() {
        let set = enumerate_chains(space, x, y, &opts.with_cap(1))?;
        entries.push((set.chains[0].clone(), w));
    }
    let mut plan = DynamicalPlan::unchecked(entries)?;
    plan.optimal = true;
    Ok(plan)
}

/// Points other than `avoid`, accepted by `ok`, that can replace the time-`i`
/// node of `chain` while keeping every pairwise distance within the slack of
/// its constant-speed value. Closest to the ideal position first.
fn reroute_targets<F: Fn(usize) -> bool>(
    space: &FiniteMetricMeasureSpace,
    chain: &[usize],
    i: usize,
    opts: &ChainOptions,
    avoid: usize,
    ok: F,
) -> Vec<usize> {
    let k = chain.len() - 1;
    let (x, y) = (chain[0], chain[k]);
    let span = space.d(x, y);
    let t = i as f64 / k as f64;
    let tol = opts.tolerance(span);
    let pair_tol = opts.slack + 1e-12 * span;
    let off = |q: usize| (space.d(x, q) - t * span).abs() + (space.d(q, y) - (1.0 - t) * span).abs();
    let mut out: Vec<usize> = (0..space.len())
        .filter(|&q| q != avoid && ok(q))
        .filter(|&q| (space.d(x, q) - t * span).abs() <= tol && (space.d(q, y) - (1.0 - t) * span).abs() <= tol)
        .filter(|&q| {
            (0..=k).filter(|&j| j != i).all(|j| {
                let ideal = (i as f64 - j as f64).abs() / k as f64 * span;
                (space.d(chain[j], q) - ideal).abs() <= pair_tol
            })
        })
        .collect();
    out.sort_by(|&a, &b| off(a).total_cmp(&off(b)));
    out
}

/// Chains at one time slice with their loads, and the moves between points.
struct Slice<'a> {
    space: &'a FiniteMetricMeasureSpace,
    i: usize,
    chains: Vec<Vec<usize>>,
    weights: Vec<f64>,
    load: Vec<f64>,
    moves: usize,
}

impl Slice<'_> {
    /// Moves `amount` of chain `e` to `q` at this time, splitting it if
    /// `amount` is less than its weight.
    fn shift(&mut self, e: usize, q: usize, amount: f64) {
        let p = self.chains[e][self.i];
        self.load[p] -= amount;
        self.load[q] += amount;
        self.moves += 1;
        if amount >= self.weights[e] {
            self.chains[e][self.i] = q;
            return;
        }
        self.weights[e] -= amount;
        let mut copy = self.chains[e].clone();
        copy[self.i] = q;
        self.chains.push(copy);
        self.weights.push(amount);
    }

    /// Shortest chain of moves `p → a_1 → … → z` ending at a point with room,
    /// each step carrying some chain from one point to the next. Returns the
    /// steps as `(chain, target)`.
    fn augmenting_path<R: Fn(usize) -> f64, F: Fn(usize) -> bool>(
        &self,
        p: usize,
        opts: &ChainOptions,
        room: &R,
        allowed: &F,
    ) -> Option<Vec<(usize, usize)>> {
        let n = self.space.len();
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        seen[p] = true;
        let mut queue = std::collections::VecDeque::from([p]);
        while let Some(a) = queue.pop_front() {
            for e in (0..self.chains.len()).filter(|&e| self.chains[e][self.i] == a && self.weights[e] > 0.0) {
                for q in reroute_targets(self.space, &self.chains[e], self.i, opts, a, |q| allowed(q) && !seen[q]) {
                    seen[q] = true;
                    parent[q] = Some((a, e));
                    if self.load[q] < room(q) / (1.0 + 1e-12) {
                        let mut path = vec![(e, q)];
                        let mut b = a;
                        while b != p {
                            let (prev, e) = parent[b].expect("visited points have parents");
                            path.push((e, b));
                            b = prev;
                        }
                        path.reverse();
                        return Some(path);
                    }
                    queue.push_back(q);
                }
            }
        }
        None
    }
}

/// Reroutes chains of `plan` off nodes where the density exceeds `bound`.
///
/// At each interior time in `times` the lightest chains through an overfull
/// node move, one at a time, to the point closest to their ideal position
/// that lies in `allowed`, has room below the bound, and keeps every pairwise
/// distance of the chain within the slack of its constant-speed value. When
/// the room there is smaller than the chain's weight the chain is split and
/// only part of its mass moves. If no direct target has room, chains are
/// displaced along the shortest path of full points that ends at one with
/// room. Endpoints, and so the coupling, are unchanged. Returns the plan and
/// the number of moves.
pub fn spread_plan<F: Fn(usize) -> bool>(
    space: &FiniteMetricMeasureSpace,
    plan: &DynamicalPlan,
    bound: f64,
    opts: &ChainOptions,
    times: std::ops::Range<usize>,
    allowed: F,
) -> Result<(DynamicalPlan, usize)> {
    let (k, n) = (plan.k, space.len());
    let mut chains: Vec<Vec<usize>> = plan.entries.iter().map(|(c, _)| c.nodes().to_vec()).collect();
    let mut weights: Vec<f64> = plan.entries.iter().map(|e| e.1).collect();
    let room = |p: usize| bound * space.mass(p) * (1.0 + 1e-12);
    let mut moves = 0;
    for i in times.start.max(1)..times.end.min(k) {
        let mut load = vec![0.0; n];
        for (c, w) in chains.iter().zip(&weights) {
            load[c[i]] += w;
        }
        if (0..n).all(|p| load[p] <= room(p)) {
            continue;
        }
        let mut slice = Slice { space, i, chains, weights, load, moves: 0 };
        for p in 0..n {
            if slice.load[p] <= room(p) {
                continue;
            }
            // direct moves of the lightest chains first
            let mut through: Vec<usize> = (0..slice.chains.len()).filter(|&e| slice.chains[e][i] == p).collect();
            through.sort_by(|&a, &b| slice.weights[a].total_cmp(&slice.weights[b]));
            for e in through {
                while slice.load[p] > room(p) {
                    let targets = reroute_targets(space, &slice.chains[e], i, opts, p, |q| {
                        allowed(q) && slice.load[q] < room(q) / (1.0 + 1e-12)
                    });
                    let Some(&q) = targets.first() else { break };
                    let amount = slice.weights[e]
                        .min(slice.load[p] - room(p) / (1.0 + 1e-12))
                        .min(room(q) / (1.0 + 1e-12) - slice.load[q]);
                    if !(amount > 0.0) {
                        break;
                    }
                    let whole = amount >= slice.weights[e];
                    slice.shift(e, q, amount);
                    if whole {
                        break;
                    }
                }
            }
            // then make room by displacing chains along a path of full points
            while slice.load[p] > room(p) {
                let Some(path) = slice.augmenting_path(p, opts, &room, &allowed) else { break };
                let z = path.last().expect("paths are nonempty").1;
                let amount = path
                    .iter()
                    .map(|&(e, _)| slice.weights[e])
                    .fold(slice.load[p] - room(p) / (1.0 + 1e-12), f64::min)
                    .min(room(z) / (1.0 + 1e-12) - slice.load[z]);
                if !(amount > 0.0) {
                    break;
                }
                for (e, q) in path {
                    slice.shift(e, q, amount);
                }
            }
        }
        moves += slice.moves;
        chains = slice.chains;
        weights = slice.weights;
    }
    let entries = chains.into_iter().zip(weights).map(|(c, w)| (GeodesicChain::new(space, c), w)).collect();
    let mut out = DynamicalPlan::unchecked(entries)?;
    out.optimal = plan.optimal;
    Ok((out, moves))
}

/// The optimal face of the transport problem together with every chain set
/// its cells need. Plans are generated from it on demand.
#[derive(Debug, Clone, Serialize)]
pub struct PlanFamily {
    pub k: usize,
    pub w2: f64,
    pub vertices: Vec<Coupling>,
    pub vertices_truncated: bool,
    #[serde(serialize_with = "serialize_chain_sets")]
    pub chain_sets: BTreeMap<(usize, usize), ChainSet>,
}

fn serialize_chain_sets<S: serde::Serializer>(
    sets: &BTreeMap<(usize, usize), ChainSet>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(sets.values())
}

/// Everything needed to sample optimal dynamical plans between `mu` and `nu`.
pub fn enumerate_optimal_plans(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    opts: &ChainOptions,
    cap: usize,
) -> Result<PlanFamily> {
    let (w, _) = w2(space, mu, nu)?;
    let (vertices, vertices_truncated) = optimal_vertices(space, mu, nu, cap)?;
    let mut chain_sets = BTreeMap::new();
    for v in &vertices {
        for &(x, y, _) in v.cells() {
            if let std::collections::btree_map::Entry::Vacant(e) = chain_sets.entry((x, y)) {
                e.insert(enumerate_chains(space, x, y, opts)?);
            }
        }
    }
    Ok(PlanFamily { k: opts.k, w2: w, vertices, vertices_truncated, chain_sets })
}

impl PlanFamily {
    pub fn chains_truncated(&self) -> bool {
        self.chain_sets.values().any(|s| s.truncated)
    }

    /// Vertices, then their barycenter when there is more than one.
    pub fn couplings(&self) -> Vec<Coupling> {
        let mut out = self.vertices.clone();
        if self.vertices.len() > 1 {
            let w = 1.0 / self.vertices.len() as f64;
            let parts: Vec<(&Coupling, f64)> = self.vertices.iter().map(|v| (v, w)).collect();
            out.push(Coupling::mix(&parts));
        }
        out
    }

    /// Splits tried on a cell served by `c` chains: the mixture grid for two
    /// chains, each single chain plus the uniform split for more.
    pub fn cell_options(c: usize) -> Vec<Vec<f64>> {
        match c {
            0 | 1 => vec![vec![1.0]],
            2 => MIXTURE_GRID.iter().map(|&l| vec![l, 1.0 - l]).collect(),
            _ => {
                let mut opts: Vec<Vec<f64>> = (0..c)
                    .map(|i| (0..c).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                    .collect();
                opts.push(vec![1.0 / c as f64; c]);
                opts
            }
        }
    }

    /// Up to `cap` plans; the flag reports whether more existed. Plans that
    /// apply the same split index on every cell come first.
    pub fn plans(&self, cap: usize) -> (Vec<DynamicalPlan>, bool) {
        let mut out = Vec::new();
        let mut truncated = false;
        'couplings: for coupling in self.couplings() {
            let cells = coupling.cells();
            let options: Vec<Vec<Vec<f64>>> = cells
                .iter()
                .map(|&(x, y, _)| Self::cell_options(self.chain_sets[&(x, y)].len()))
                .collect();
            let radix: Vec<usize> = options.iter().map(|o| o.len()).collect();
            let widest = radix.iter().copied().max().unwrap_or(1);
            let build = |choice: &[usize]| {
                let mut entries = Vec::new();
                for (c, (&(x, y, m), &o)) in cells.iter().zip(choice).enumerate() {
                    let chains = &self.chain_sets[&(x, y)].chains;
                    for (chain, &w) in chains.iter().zip(&options[c][o]) {
                        if w > 0.0 {
                            entries.push((chain.clone(), m * w));
                        }
                    }
                }
                let total: f64 = entries.iter().map(|e| e.1).sum();
                for e in &mut entries {
                    e.1 /= total;
                }
                let mut plan = DynamicalPlan::unchecked(entries).expect("optimal face cells have positive mass");
                plan.optimal = true;
                plan
            };
            let diagonal: Vec<Vec<usize>> =
                (0..widest).map(|o| radix.iter().map(|&r| o.min(r - 1)).collect()).collect();
            for choice in &diagonal {
                if out.len() == cap {
                    truncated = true;
                    break 'couplings;
                }
                out.push(build(choice));
            }
            let mut choice = vec![0usize; radix.len()];
            loop {
                if !diagonal.contains(&choice) {
                    if out.len() == cap {
                        truncated = true;
                        break 'couplings;
                    }
                    out.push(build(&choice));
                }
                // mixed-radix increment
                let mut pos = radix.len();
                loop {
                    if pos == 0 {
                        continue 'couplings;
                    }
                    pos -= 1;
                    choice[pos] += 1;
                    if choice[pos] < radix[pos] {
                        break;
                    }
                    choice[pos] = 0;
                }
            }
        }
        (out, truncated)
    }

    pub fn is_complete(&self) -> bool {
        !self.vertices_truncated && !self.chains_truncated()
    }
}
