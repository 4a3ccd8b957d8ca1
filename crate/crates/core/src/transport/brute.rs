//! Exhaustive vertex enumeration of the coupling polytope, used as an oracle.
//!
//! Every vertex of a transportation polytope has a support contained in a
//! spanning tree of the bipartite graph between the supports, and each
//! spanning tree determines at most one flow. Enumerating the trees and
//! keeping the nonnegative flows therefore visits every vertex.

use crate::error::{Error, Result};

/// Largest support size on either side.
pub const BRUTE_FORCE_LIMIT: usize = 5;

pub fn min_cost_over_vertices(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<f64> {
    let (m, n) = (supply.len(), demand.len());
    let largest = m.max(n);
    if largest > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeLimit { limit: BRUTE_FORCE_LIMIT, got: largest });
    }
    let cells: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let mut best = f64::INFINITY;
    let mut chosen = Vec::with_capacity(m + n - 1);
    let mut uf = UnionFind::new(m + n);
    search(&cells, 0, m, n, &mut chosen, &mut uf, &mut |tree| {
        if let Some(flow) = tree_flow(tree, supply, demand) {
            let c: f64 = tree.iter().zip(&flow).map(|(&(i, j), f)| f * cost[i * n + j]).sum();
            best = best.min(c);
        }
    });
    Ok(best)
}

fn search(
    cells: &[(usize, usize)],
    at: usize,
    m: usize,
    n: usize,
    chosen: &mut Vec<(usize, usize)>,
    uf: &mut UnionFind,
    visit: &mut dyn FnMut(&[(usize, usize)]),
) {
    let need = m + n - 1 - chosen.len();
    if need == 0 {
        visit(chosen);
        return;
    }
    if cells.len() - at < need {
        return;
    }
    let (i, j) = cells[at];
    if uf.find(i) != uf.find(m + j) {
        let saved = uf.clone();
        uf.union(i, m + j);
        chosen.push((i, j));
        search(cells, at + 1, m, n, chosen, uf, visit);
        chosen.pop();
        *uf = saved;
    }
    search(cells, at + 1, m, n, chosen, uf, visit);
}

/// The unique flow on a spanning tree, by peeling leaves; `None` if negative.
fn tree_flow(tree: &[(usize, usize)], supply: &[f64], demand: &[f64]) -> Option<Vec<f64>> {
    let m = supply.len();
    let mut residual: Vec<f64> = supply.iter().chain(demand).copied().collect();
    let mut degree = vec![0usize; residual.len()];
    for &(i, j) in tree {
        degree[i] += 1;
        degree[m + j] += 1;
    }
    let mut flow = vec![f64::NAN; tree.len()];
    let mut open = tree.len();
    while open > 0 {
        let e = (0..tree.len()).find(|&e| {
            let (i, j) = tree[e];
            flow[e].is_nan() && (degree[i] == 1 || degree[m + j] == 1)
        })?;
        let (i, j) = tree[e];
        let leaf = if degree[i] == 1 { i } else { m + j };
        let other = if leaf == i { m + j } else { i };
        let f = residual[leaf];
        if f < -1e-12 {
            return None;
        }
        flow[e] = f.max(0.0);
        residual[leaf] = 0.0;
        residual[other] -= f;
        degree[i] -= 1;
        degree[m + j] -= 1;
        open -= 1;
    }
    Some(flow)
}

#[derive(Clone)]
struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.parent[ra] = rb;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_every_spanning_tree() {
        // K_{2,3} has 2^2 · 3^1 = 12 spanning trees
        let cells: Vec<_> = (0..2).flat_map(|i| (0..3).map(move |j| (i, j))).collect();
        let mut count = 0;
        let mut uf = UnionFind::new(5);
        search(&cells, 0, 2, 3, &mut Vec::new(), &mut uf, &mut |_| count += 1);
        assert_eq!(count, 12);
    }

    #[test]
    fn single_feasible_point() {
        let c = min_cost_over_vertices(&[0.5, 0.5], &[0.0, 1.0], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
    }

    #[test]
    fn size_limit() {
        let w = vec![1.0 / 6.0; 6];
        assert!(matches!(
            min_cost_over_vertices(&w, &w, &[0.0; 36]),
            Err(Error::SizeLimit { limit: 5, got: 6 })
        ));
    }
}
