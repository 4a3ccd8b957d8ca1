//! Quadratic-cost optimal transport between probability measures on a
//! finite space, and dynamical plans over chains.

mod brute;
mod plan;
pub mod simplex;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::space::FiniteMetricMeasureSpace;

pub use brute::BRUTE_FORCE_LIMIT;
pub use plan::{
    check_optimality, enumerate_optimal_plans, interpolate, interpolate_at, optimal_dynamical_plan, restrict_plan,
    spread_plan, DynamicalPlan, PlanFamily, MIXTURE_GRID,
};

/// Tolerance on the total mass of a probability measure.
pub const MASS_TOL: f64 = 1e-12;
/// Tolerance on coupling marginals.
pub const MARGINAL_TOL: f64 = 1e-10;

/// A probability measure together with its density against the ambient
/// reference measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbMeasure {
    weights: Vec<f64>,
    density: Vec<f64>,
}

impl ProbMeasure {
    pub fn new(space: &FiniteMetricMeasureSpace, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.len() {
            return Err(Error::SizeMismatch(weights.len(), space.len()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("weight {w} is not a nonnegative real")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidMeasure(format!("total mass {total} differs from 1")));
        }
        let density = weights.iter().zip(space.measure()).map(|(w, m)| w / m).collect();
        Ok(Self { weights, density })
    }

    /// Normalizes nonnegative weights with positive sum.
    pub fn from_unnormalized(space: &FiniteMetricMeasureSpace, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMeasure(format!("cannot normalize total mass {total}")));
        }
        let mut w: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // push the rounding residue onto the heaviest atom
        let residue = 1.0 - w.iter().sum::<f64>();
        if let Some(big) = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])) {
            w[big] += residue;
        }
        Self::new(space, w)
    }

    /// The measure with density `rho` (up to normalization).
    pub fn from_density(space: &FiniteMetricMeasureSpace, rho: &[f64]) -> Result<Self> {
        if rho.len() != space.len() {
            return Err(Error::SizeMismatch(rho.len(), space.len()));
        }
        Self::from_unnormalized(space, rho.iter().zip(space.measure()).map(|(r, m)| r * m).collect())
    }

    pub fn dirac(space: &FiniteMetricMeasureSpace, p: usize) -> Self {
        let mut w = vec![0.0; space.len()];
        w[p] = 1.0;
        Self::new(space, w).expect("dirac mass is a probability measure")
    }

    /// The normalized restriction of the reference measure to `set`.
    pub fn uniform_on(space: &FiniteMetricMeasureSpace, set: &[usize]) -> Result<Self> {
        let mut w = vec![0.0; space.len()];
        for &p in set {
            w[p] = space.mass(p);
        }
        Self::from_unnormalized(space, w)
    }

    pub fn uniform(space: &FiniteMetricMeasureSpace) -> Self {
        Self::from_unnormalized(space, space.measure().to_vec()).expect("reference measure is positive")
    }

    /// Density drawn from a symmetric Dirichlet(1) on `set`.
    pub fn random_on<R: Rng>(space: &FiniteMetricMeasureSpace, set: &[usize], rng: &mut R) -> Result<Self> {
        let mut w = vec![0.0; space.len()];
        for &p in set {
            let e: f64 = Exp1.sample(rng);
            w[p] = e * space.mass(p);
        }
        Self::from_unnormalized(space, w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }
}

/// A coupling stored by its nonzero cells, sorted row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coupling {
    n: usize,
    cells: Vec<(usize, usize, f64)>,
}

impl Coupling {
    pub fn from_cells(n: usize, mut cells: Vec<(usize, usize, f64)>) -> Self {
        cells.retain(|c| c.2 > 0.0);
        cells.sort_by_key(|c| (c.0, c.1));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(cells.len());
        for c in cells {
            match merged.last_mut() {
                Some(last) if (last.0, last.1) == (c.0, c.1) => last.2 += c.2,
                _ => merged.push(c),
            }
        }
        Self { n, cells: merged }
    }

    pub fn cells(&self) -> &[(usize, usize, f64)] {
        &self.cells
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells
            .binary_search_by_key(&(i, j), |c| (c.0, c.1))
            .map(|k| self.cells[k].2)
            .unwrap_or(0.0)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        for &(i, _, w) in &self.cells {
            r[i] += w;
        }
        r
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for &(_, j, w) in &self.cells {
            c[j] += w;
        }
        c
    }

    /// `Σ σ_xy d(x, y)^2`.
    pub fn cost(&self, space: &FiniteMetricMeasureSpace) -> f64 {
        self.cells.iter().map(|&(i, j, w)| w * space.d(i, j).powi(2)).sum()
    }

    pub fn has_marginals(&self, mu: &ProbMeasure, nu: &ProbMeasure) -> bool {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= MARGINAL_TOL);
        close(&self.row_sums(), mu.weights()) && close(&self.col_sums(), nu.weights())
    }

    pub(crate) fn mix(parts: &[(&Coupling, f64)]) -> Coupling {
        let n = parts.first().map_or(0, |p| p.0.n);
        let cells = parts
            .iter()
            .flat_map(|(c, w)| c.cells.iter().map(move |&(i, j, m)| (i, j, m * w)))
            .collect();
        Coupling::from_cells(n, cells)
    }
}

struct Problem {
    rows: Vec<usize>,
    cols: Vec<usize>,
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: Vec<f64>,
}

fn problem(space: &FiniteMetricMeasureSpace, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<Problem> {
    for m in [mu, nu] {
        if m.len() != space.len() {
            return Err(Error::SizeMismatch(m.len(), space.len()));
        }
    }
    let rows = mu.support();
    let cols = nu.support();
    let supply = rows.iter().map(|&i| mu.weights()[i]).collect();
    let demand = cols.iter().map(|&j| nu.weights()[j]).collect();
    let cost = rows.iter().flat_map(|&i| cols.iter().map(move |&j| space.d(i, j).powi(2))).collect();
    Ok(Problem { rows, cols, supply, demand, cost })
}

fn solution_coupling(n: usize, p: &Problem, sol: &simplex::Solution) -> Coupling {
    let cells = sol
        .basis
        .iter()
        .map(|&(a, b)| (p.rows[a], p.cols[b], sol.flow[a * p.cols.len() + b]))
        .collect();
    Coupling::from_cells(n, cells)
}

/// `W_2(μ, ν)` and an optimal coupling. The coupling returned is the vertex
/// reached by the deterministic simplex walk, so repeated calls agree.
pub fn w2(space: &FiniteMetricMeasureSpace, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<(f64, Coupling)> {
    let p = problem(space, mu, nu)?;
    let sol = simplex::solve(&p.supply, &p.demand, &p.cost)?;
    let coupling = solution_coupling(space.len(), &p, &sol);
    Ok((sol.cost.max(0.0).sqrt(), coupling))
}

/// `W_2` by exhaustive enumeration of the coupling polytope's vertices.
pub fn w2_brute_force(space: &FiniteMetricMeasureSpace, mu: &ProbMeasure, nu: &ProbMeasure) -> Result<f64> {
    let p = problem(space, mu, nu)?;
    let c = brute::min_cost_over_vertices(&p.supply, &p.demand, &p.cost)?;
    Ok(c.max(0.0).sqrt())
}

/// All vertices of the optimal face, found by pivoting on zero reduced-cost
/// cells from the simplex optimum. Returns the vertices and whether the
/// walk stopped at `cap` bases.
pub(crate) fn optimal_vertices(
    space: &FiniteMetricMeasureSpace,
    mu: &ProbMeasure,
    nu: &ProbMeasure,
    cap: usize,
) -> Result<(Vec<Coupling>, bool)> {
    use std::collections::{BTreeSet, VecDeque};

    let p = problem(space, mu, nu)?;
    let root = simplex::solve(&p.supply, &p.demand, &p.cost)?;
    let (m, n) = (p.rows.len(), p.cols.len());
    let tol = simplex::REDUCED_COST_TOL * simplex::cost_scale(&p.cost);
    let tight: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| root.reduced_cost(&p.cost, i, j).abs() <= tol)
        .collect();

    let basis_key = |s: &simplex::Solution| {
        let mut b = s.basis.clone();
        b.sort_unstable();
        b
    };
    // flows agree to 1e-12 on the same vertex reached through different bases
    let vertex_key = |s: &simplex::Solution| -> Vec<(usize, i64)> {
        s.flow
            .iter()
            .enumerate()
            .filter(|(_, f)| **f > 1e-13)
            .map(|(c, f)| (c, (f * 1e12).round() as i64))
            .collect()
    };

    let mut seen_bases = BTreeSet::new();
    let mut seen_vertices = BTreeSet::new();
    let mut vertices = Vec::new();
    let mut queue = VecDeque::new();
    seen_bases.insert(basis_key(&root));
    queue.push_back(root);
    let mut truncated = false;
    while let Some(sol) = queue.pop_front() {
        if seen_vertices.insert(vertex_key(&sol)) {
            vertices.push(solution_coupling(space.len(), &p, &sol));
        }
        let in_basis: BTreeSet<(usize, usize)> = sol.basis.iter().copied().collect();
        for &cell in tight.iter().filter(|c| !in_basis.contains(c)) {
            let (leaving, _) = simplex::leaving_candidates(&sol, cell);
            let path = simplex::cycle(&sol, cell);
            for e in leaving {
                debug_assert!(path.contains(&e));
                let mut next = sol.clone();
                simplex::pivot(&mut next, cell, Some(e))?;
                if seen_bases.insert(basis_key(&next)) {
                    if seen_bases.len() > cap {
                        truncated = true;
                        break;
                    }
                    queue.push_back(next);
                }
            }
            if truncated {
                break;
            }
        }
        if truncated {
            break;
        }
    }
    Ok((vertices, truncated))
}
