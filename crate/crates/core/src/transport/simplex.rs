//! Transportation simplex (MODI) on dense cost matrices.
//!
//! The basis is kept as a spanning tree of the bipartite row/column graph
//! with exactly `rows + cols - 1` cells, degenerate cells included. The start
//! is the northwest-corner solution; pivots use Dantzig's rule and fall back
//! to Bland's rule after a run of degenerate pivots, so the walk always ends.

use crate::error::{Error, Result};

/// Reduced costs above `-REDUCED_COST_TOL * cost_scale` count as nonnegative.
pub const REDUCED_COST_TOL: f64 = 1e-10;

const DEGENERATE_RUN: usize = 64;

#[derive(Debug, Clone)]
pub struct Solution {
    pub rows: usize,
    pub cols: usize,
    /// Basic cells as `(row, col)`.
    pub basis: Vec<(usize, usize)>,
    /// Dense `rows × cols` flow.
    pub flow: Vec<f64>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub cost: f64,
}

impl Solution {
    pub fn reduced_cost(&self, cost: &[f64], i: usize, j: usize) -> f64 {
        cost[i * self.cols + j] - self.u[i] - self.v[j]
    }
}

pub fn cost_scale(cost: &[f64]) -> f64 {
    cost.iter().fold(1.0f64, |a, &c| a.max(c.abs()))
}

pub fn solve(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<Solution> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 || cost.len() != m * n {
        return Err(Error::SolverFailure(format!("bad problem shape {m}x{n} with {} costs", cost.len())));
    }
    let mut sol = northwest_corner(supply, demand);
    let tol = REDUCED_COST_TOL * cost_scale(cost);
    let max_iter = 50 * (m + n) * (m + n) + 1000;
    let mut degenerate = 0usize;
    for _ in 0..max_iter {
        potentials(&mut sol, cost);
        let bland = degenerate >= DEGENERATE_RUN;
        let mut entering = None;
        let mut best = -tol;
        'scan: for i in 0..m {
            for j in 0..n {
                let r = sol.reduced_cost(cost, i, j);
                if r < best {
                    entering = Some((i, j));
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some(cell) = entering else {
            sol.cost = sol.flow.iter().zip(cost).map(|(f, c)| f * c).sum();
            return Ok(sol);
        };
        let theta = pivot(&mut sol, cell, None)?;
        degenerate = if theta > 0.0 { 0 } else { degenerate + 1 };
    }
    Err(Error::SolverFailure("iteration limit reached".into()))
}

fn northwest_corner(supply: &[f64], demand: &[f64]) -> Solution {
    let (m, n) = (supply.len(), demand.len());
    let mut flow = vec![0.0; m * n];
    let mut basis = Vec::with_capacity(m + n - 1);
    let (mut a, mut b) = (supply[0], demand[0]);
    let (mut i, mut j) = (0, 0);
    loop {
        let q = a.min(b).max(0.0);
        flow[i * n + j] = q;
        basis.push((i, j));
        if i == m - 1 && j == n - 1 {
            break;
        }
        // advance the row unless it is the last one and columns remain
        let row_done = a <= b;
        if (row_done && i < m - 1) || j == n - 1 {
            b -= q;
            i += 1;
            a = supply[i];
        } else {
            a -= q;
            j += 1;
            b = demand[j];
        }
    }
    Solution { rows: m, cols: n, basis, flow, u: vec![0.0; m], v: vec![0.0; n], cost: 0.0 }
}

/// Node ids: rows are `0..m`, columns `m..m+n`.
fn adjacency(sol: &Solution) -> Vec<Vec<(usize, usize)>> {
    let m = sol.rows;
    let mut adj = vec![Vec::new(); m + sol.cols];
    for (e, &(i, j)) in sol.basis.iter().enumerate() {
        adj[i].push((m + j, e));
        adj[m + j].push((i, e));
    }
    adj
}

pub fn potentials(sol: &mut Solution, cost: &[f64]) {
    let (m, n) = (sol.rows, sol.cols);
    let adj = adjacency(sol);
    let mut seen = vec![false; m + n];
    let mut pot = vec![0.0; m + n];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(a) = stack.pop() {
        for &(b, e) in &adj[a] {
            if !seen[b] {
                seen[b] = true;
                let (i, j) = sol.basis[e];
                let c = cost[i * n + j];
                // c = u_i + v_j
                pot[b] = c - pot[a];
                stack.push(b);
            }
        }
    }
    sol.u.copy_from_slice(&pot[..m]);
    sol.v.copy_from_slice(&pot[m..]);
}

/// Cycle created by adding `cell` to the basis, as basis-edge indices along
/// the tree path from the column node back to the row node. Edges at even
/// positions lose flow, odd positions gain.
pub fn cycle(sol: &Solution, cell: (usize, usize)) -> Vec<usize> {
    let m = sol.rows;
    let adj = adjacency(sol);
    let (src, dst) = (m + cell.1, cell.0);
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; m + sol.cols];
    let mut seen = vec![false; m + sol.cols];
    let mut stack = vec![dst];
    seen[dst] = true;
    while let Some(a) = stack.pop() {
        if a == src {
            break;
        }
        for &(b, e) in &adj[a] {
            if !seen[b] {
                seen[b] = true;
                parent[b] = Some((a, e));
                stack.push(b);
            }
        }
    }
    let mut path = Vec::new();
    let mut node = src;
    while node != dst {
        let (prev, e) = parent[node].expect("basis is a spanning tree");
        path.push(e);
        node = prev;
    }
    path
}

/// Brings `cell` into the basis. The leaving cell is the first minimizing
/// cell in row-major order unless `leave` names a cycle position. Returns
/// the step length.
pub fn pivot(sol: &mut Solution, cell: (usize, usize), leave: Option<usize>) -> Result<f64> {
    let n = sol.cols;
    let path = cycle(sol, cell);
    let losing: Vec<usize> = path.iter().step_by(2).copied().collect();
    let theta = losing
        .iter()
        .map(|&e| {
            let (i, j) = sol.basis[e];
            sol.flow[i * n + j]
        })
        .fold(f64::INFINITY, f64::min);
    if !theta.is_finite() {
        return Err(Error::SolverFailure("unbounded pivot".into()));
    }
    let leaving = match leave {
        Some(e) => e,
        None => *losing
            .iter()
            .filter(|&&e| {
                let (i, j) = sol.basis[e];
                sol.flow[i * n + j] <= theta
            })
            .min_by_key(|&&e| {
                let (i, j) = sol.basis[e];
                i * n + j
            })
            .expect("cycle has a losing edge"),
    };
    for (pos, &e) in path.iter().enumerate() {
        let (i, j) = sol.basis[e];
        let f = &mut sol.flow[i * n + j];
        if pos % 2 == 0 {
            *f = (*f - theta).max(0.0);
        } else {
            *f += theta;
        }
    }
    let (li, lj) = sol.basis[leaving];
    sol.flow[li * n + lj] = 0.0;
    sol.flow[cell.0 * n + cell.1] = theta;
    sol.basis[leaving] = cell;
    Ok(theta)
}

/// Cycle positions that may leave when `cell` enters: every losing edge
/// attaining the minimum flow.
pub fn leaving_candidates(sol: &Solution, cell: (usize, usize)) -> (Vec<usize>, f64) {
    let n = sol.cols;
    let path = cycle(sol, cell);
    let losing: Vec<usize> = path.iter().step_by(2).copied().collect();
    let flow = |e: usize| {
        let (i, j) = sol.basis[e];
        sol.flow[i * n + j]
    };
    let theta = losing.iter().map(|&e| flow(e)).fold(f64::INFINITY, f64::min);
    (losing.into_iter().filter(|&e| flow(e) <= theta).collect(), theta)
}
