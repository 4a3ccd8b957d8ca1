//! Discrete constant-speed geodesics.
//!
//! A chain `(p_0, ..., p_k)` stands in for a geodesic `γ: [0, 1] → X` sampled
//! at the grid times `i / k`. It is admissible when every pair of nodes sits at
//! the distance a true constant-speed geodesic would put them at:
//!
//! ```text
//! |d(p_i, p_j) - (|i - j| / k) * span| <= eps_geo * span + slack
//! ```
//!
//! Two candidate rules are offered. [`ChainRule::Exhaustive`] lists every
//! admissible chain. [`ChainRule::Nearest`] only places node `i` at the points
//! closest to being an exact `t_i`-intermediate point, measured by the
//! metric-only defect `(1-t) d(x,p)^2 + t d(p,y)^2 - t(1-t) d(x,y)^2`, which is
//! zero exactly at intermediate points and is the squared distance to the ideal
//! point in Euclidean spaces. Near-ties closer than `slack` to an earlier
//! candidate are merged into it, so grid rounding does not show up as
//! branching while genuinely separate geodesics are all kept. Nearest chains
//! must also agree pairwise up to `slack` alone, which stops them from
//! hopping between neighbouring geodesics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::FiniteMetricMeasureSpace;

pub const DEFAULT_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainRule {
    Nearest,
    Exhaustive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainOptions {
    pub k: usize,
    /// Relative tolerance, scaled by the span of the chain.
    pub eps_geo: f64,
    /// Absolute tolerance, normally a multiple of the grid pitch.
    pub slack: f64,
    pub cap: usize,
    pub rule: ChainRule,
}

impl ChainOptions {
    /// Exact geodesics only: zero tolerance, every admissible chain.
    pub fn exact(k: usize) -> Self {
        Self { k, eps_geo: 0.0, slack: 0.0, cap: DEFAULT_CAP, rule: ChainRule::Exhaustive }
    }

    /// Defaults for a discretized space: `eps_geo = 1.5 / k`, slack of 1.5
    /// grid pitches, nearest-point rule.
    pub fn for_space(space: &FiniteMetricMeasureSpace, k: usize) -> Self {
        let pitch = space.min_positive_distance();
        let pitch = if pitch.is_finite() { pitch } else { 0.0 };
        Self { k, eps_geo: 1.5 / k as f64, slack: 1.5 * pitch, cap: DEFAULT_CAP, rule: ChainRule::Nearest }
    }

    pub fn with_eps(mut self, eps_geo: f64) -> Self {
        self.eps_geo = eps_geo;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn tolerance(&self, span: f64) -> f64 {
        self.eps_geo * span + self.slack
    }

    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Domain("resolution k must be at least 1".into()));
        }
        if !(self.eps_geo >= 0.0) || !(self.slack >= 0.0) {
            return Err(Error::Domain("chain tolerances must be nonnegative".into()));
        }
        if self.cap == 0 {
            return Err(Error::Domain("chain cap must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicChain {
    nodes: Vec<usize>,
    span: f64,
}

impl GeodesicChain {
    pub fn new(space: &FiniteMetricMeasureSpace, nodes: Vec<usize>) -> Self {
        assert!(nodes.len() >= 2, "a chain needs at least two nodes");
        let span = space.d(nodes[0], *nodes.last().unwrap());
        Self { nodes, span }
    }

    pub fn constant(p: usize, k: usize) -> Self {
        Self { nodes: vec![p; k + 1], span: 0.0 }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn k(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn end(&self) -> usize {
        *self.nodes.last().unwrap()
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.start(), self.end())
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    #[inline]
    pub fn node(&self, i: usize) -> usize {
        self.nodes[i]
    }

    pub fn reversed(&self) -> Self {
        let mut nodes = self.nodes.clone();
        nodes.reverse();
        Self { nodes, span: self.span }
    }

    /// The piece between grid indices `from..=to`, reparametrized onto its own
    /// grid of resolution `to - from`.
    pub fn slice(&self, space: &FiniteMetricMeasureSpace, from: usize, to: usize) -> Self {
        assert!(from < to && to <= self.k());
        Self::new(space, self.nodes[from..=to].to_vec())
    }

    /// Sum of hop lengths.
    pub fn hop_length(&self, space: &FiniteMetricMeasureSpace) -> f64 {
        self.nodes.windows(2).map(|w| space.d(w[0], w[1])).sum()
    }

    /// Worst violation of the constant-speed identity over all node pairs.
    pub fn geodesic_defect(&self, space: &FiniteMetricMeasureSpace) -> f64 {
        let k = self.k() as f64;
        let span = self.span();
        let mut worst = 0.0f64;
        for i in 0..self.nodes.len() {
            for j in i + 1..self.nodes.len() {
                let ideal = (j - i) as f64 / k * span;
                worst = worst.max((space.d(self.nodes[i], self.nodes[j]) - ideal).abs());
            }
        }
        worst
    }
}

/// Every admissible chain between two points, in lexicographic node order.
#[derive(Debug, Clone, Serialize)]
pub struct ChainSet {
    pub from: usize,
    pub to: usize,
    pub k: usize,
    pub eps_geo: f64,
    pub slack: f64,
    pub chains: Vec<GeodesicChain>,
    pub truncated: bool,
}

impl ChainSet {
    pub fn len(&self) -> usize {
        self.chains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chains.is_empty()
    }
}

fn candidates(space: &FiniteMetricMeasureSpace, x: usize, y: usize, i: usize, opts: &ChainOptions) -> Vec<usize> {
    let n = space.len();
    let s = space.d(x, y);
    let t = i as f64 / opts.k as f64;
    let tol = opts.tolerance(s);
    let fits = |p: usize| (space.d(x, p) - t * s).abs() <= tol && (space.d(p, y) - (1.0 - t) * s).abs() <= tol;
    match opts.rule {
        ChainRule::Exhaustive => (0..n).filter(|&p| fits(p)).collect(),
        ChainRule::Nearest => {
            let defect = |p: usize| {
                let (a, b) = (space.d(x, p), space.d(p, y));
                (1.0 - t) * a * a + t * b * b - t * (1.0 - t) * s * s
            };
            let defects: Vec<f64> = (0..n).map(defect).collect();
            let best = defects.iter().cloned().fold(f64::INFINITY, f64::min);
            let scale = s * s + opts.slack * opts.slack;
            let tie = 1e-9 * scale.max(f64::MIN_POSITIVE);
            let mut kept: Vec<usize> = Vec::new();
            for p in 0..n {
                if defects[p] > best + tie || !fits(p) {
                    continue;
                }
                if kept.iter().any(|&q| space.d(p, q) <= opts.slack) {
                    continue;
                }
                kept.push(p);
            }
            kept
        }
    }
}

/// Depth-first enumeration of admissible chains from `x` to `y`.
pub fn enumerate_chains(space: &FiniteMetricMeasureSpace, x: usize, y: usize, opts: &ChainOptions) -> Result<ChainSet> {
    opts.validate()?;
    let n = space.len();
    if x >= n || y >= n {
        return Err(Error::Domain(format!("points ({x}, {y}) out of range")));
    }
    let k = opts.k;
    let mut set = ChainSet {
        from: x,
        to: y,
        k,
        eps_geo: opts.eps_geo,
        slack: opts.slack,
        chains: Vec::new(),
        truncated: false,
    };
    if x == y {
        set.chains.push(GeodesicChain::constant(x, k));
        return Ok(set);
    }
    let span = space.d(x, y);
    let tol = opts.tolerance(span);
    let cand: Vec<Vec<usize>> = (1..k).map(|i| candidates(space, x, y, i, opts)).collect();

    let mut nodes = vec![x; k + 1];
    nodes[k] = y;
    // node k is fixed; pairwise checks against it happen inside `fits`
    let mut cursor = vec![0usize; k];
    let mut depth = 1usize;
    // nearest candidates sit within grid rounding of the ideal points, so
    // their mutual distances only need to agree up to the slack
    let pair_tol = match opts.rule {
        ChainRule::Exhaustive => tol,
        ChainRule::Nearest => opts.slack + 1e-12 * span,
    };
    let compatible = |nodes: &[usize], i: usize, p: usize| {
        (0..i).all(|j| {
            let ideal = (i - j) as f64 / k as f64 * span;
            (space.d(nodes[j], p) - ideal).abs() <= pair_tol
        })
    };
    if k == 1 {
        set.chains.push(GeodesicChain::new(space, nodes));
        return Ok(set);
    }
    loop {
        if depth == 0 {
            break;
        }
        if depth == k {
            if set.chains.len() == opts.cap {
                set.truncated = true;
                break;
            }
            set.chains.push(GeodesicChain::new(space, nodes.clone()));
            depth -= 1;
            continue;
        }
        let list = &cand[depth - 1];
        let mut advanced = false;
        while cursor[depth] < list.len() {
            let p = list[cursor[depth]];
            cursor[depth] += 1;
            if compatible(&nodes, depth, p) {
                nodes[depth] = p;
                depth += 1;
                if depth < k {
                    cursor[depth] = 0;
                }
                advanced = true;
                break;
            }
        }
        if !advanced {
            depth -= 1;
        }
    }
    if set.chains.is_empty() {
        return Err(Error::EmptyChainSet { from: x, to: y, k });
    }
    Ok(set)
}

/// Grid index of time `t` at resolution `k`.
pub fn grid_index(t: f64, k: usize) -> Result<usize> {
    let scaled = t * k as f64;
    let i = scaled.round();
    if !(0.0..=1.0).contains(&t) || (scaled - i).abs() > 1e-12 {
        return Err(Error::OffGridTime { t, k });
    }
    Ok(i as usize)
}

/// `e_t(γ)`.
pub fn evaluate(chain: &GeodesicChain, t: f64) -> Result<usize> {
    Ok(chain.node(grid_index(t, chain.k())?))
}

/// Length under the constant-speed convention, i.e. the endpoint distance.
pub fn chain_length(chain: &GeodesicChain) -> f64 {
    chain.span()
}

/// Whether the two chains are more than `delta_sep` apart at some grid time.
pub fn distinct(space: &FiniteMetricMeasureSpace, a: &GeodesicChain, b: &GeodesicChain, delta_sep: f64) -> Result<bool> {
    if a.k() != b.k() {
        return Err(Error::ResolutionMismatch(a.k(), b.k()));
    }
    if a.endpoints() != b.endpoints() {
        return Err(Error::PreconditionViolated("chains do not share endpoints".into()));
    }
    // distances equal to delta_sep up to rounding do not count as separated
    let threshold = delta_sep * (1.0 + 1e-9);
    Ok(a.nodes().iter().zip(b.nodes()).any(|(&p, &q)| space.d(p, q) > threshold))
}

/// Independent recheck of the admissibility condition.
pub fn is_admissible(space: &FiniteMetricMeasureSpace, chain: &GeodesicChain, opts: &ChainOptions) -> bool {
    chain.geodesic_defect(space) <= opts.tolerance(chain.span()) + 1e-12
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::{circle, segment, theta, tripod};

    #[test]
    fn segment_grid_has_one_exact_chain() {
        let s = segment(9);
        let set = enumerate_chains(&s, 0, 8, &ChainOptions::exact(8)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.chains[0].nodes(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert!(!set.truncated);
    }

    #[test]
    fn equal_endpoints_give_constant_chain() {
        let s = segment(9);
        let set = enumerate_chains(&s, 3, 3, &ChainOptions::exact(4)).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.chains[0].nodes(), &[3; 5]);
        assert_eq!(chain_length(&set.chains[0]), 0.0);
    }

    #[test]
    fn theta_has_two_exact_chains_between_junctions() {
        let t = theta(1.0, 0.5, 8).unwrap();
        let (x, y) = (t.junctions.0, t.junctions.1);
        for rule in [ChainRule::Exhaustive, ChainRule::Nearest] {
            let opts = ChainOptions { rule, ..ChainOptions::exact(8) };
            let set = enumerate_chains(&t.space, x, y, &opts).unwrap();
            assert_eq!(set.len(), 2, "{rule:?}");
            for c in &set.chains {
                assert!((chain_length(c) - 1.0).abs() < 1e-12);
                assert!((c.hop_length(&t.space) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn too_coarse_space_reports_empty_chain_set() {
        let s = segment(3);
        let err = enumerate_chains(&s, 0, 2, &ChainOptions::exact(4)).unwrap_err();
        assert!(matches!(err, Error::EmptyChainSet { .. }));
    }

    #[test]
    fn evaluation_on_and_off_grid() {
        let s = segment(5);
        let c = &enumerate_chains(&s, 0, 4, &ChainOptions::exact(4)).unwrap().chains[0];
        assert_eq!(evaluate(c, 0.0).unwrap(), 0);
        assert_eq!(evaluate(c, 1.0).unwrap(), 4);
        assert_eq!(evaluate(c, 0.5).unwrap(), 2);
        assert!(matches!(evaluate(c, 0.3), Err(Error::OffGridTime { .. })));
        let r = c.reversed();
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            assert_eq!(evaluate(c, t).unwrap(), evaluate(&r, 1.0 - t).unwrap());
        }
    }

    #[test]
    fn theta_arms_are_distinct_exactly_below_their_separation() {
        let t = theta(1.0, 0.5, 8).unwrap();
        let set = enumerate_chains(&t.space, t.junctions.0, t.junctions.1, &ChainOptions::exact(8)).unwrap();
        let (a, b) = (&set.chains[0], &set.chains[1]);
        let mid = t.space.d(a.node(4), b.node(4));
        assert!((mid - 1.0).abs() < 1e-12);
        assert!(distinct(&t.space, a, b, mid * (1.0 - 1e-6)).unwrap());
        assert!(!distinct(&t.space, a, b, mid).unwrap());
        assert!(!distinct(&t.space, a, a, 0.0).unwrap());
    }

    #[test]
    fn resolution_mismatch_is_an_error() {
        let s = segment(9);
        let a = enumerate_chains(&s, 0, 8, &ChainOptions::exact(8)).unwrap().chains.remove(0);
        let b = enumerate_chains(&s, 0, 8, &ChainOptions::exact(4)).unwrap().chains.remove(0);
        assert!(matches!(distinct(&s, &a, &b, 0.1), Err(Error::ResolutionMismatch(8, 4))));
    }

    #[test]
    fn nearest_rule_on_fine_segment_is_unique_and_admissible() {
        let s = segment(65);
        let opts = ChainOptions::for_space(&s, 16);
        for (x, y) in [(0, 64), (3, 4), (10, 50), (40, 7), (20, 21)] {
            let set = enumerate_chains(&s, x, y, &opts).unwrap();
            assert_eq!(set.len(), 1, "{x}->{y}");
            assert!(is_admissible(&s, &set.chains[0], &opts));
        }
    }

    #[test]
    fn circle_antipode_has_two_chains() {
        let c = circle(16).unwrap();
        let opts = ChainOptions::for_space(&c, 16);
        let set = enumerate_chains(&c, 0, 8, &opts).unwrap();
        // k exceeds the hop count here, so rounding may add near-duplicates;
        // the two sides are always present and far apart
        assert!(set.len() >= 2);
        let delta = 2.0 * c.diam() / 16.0;
        assert!(distinct(&c, &set.chains[0], &set.chains[1], delta).unwrap());
        let coarse = enumerate_chains(&c, 0, 8, &ChainOptions::for_space(&c, 8)).unwrap();
        assert_eq!(coarse.len(), 2);
        assert_eq!(enumerate_chains(&c, 0, 7, &opts).unwrap().len(), 1);
    }

    #[test]
    fn tripod_is_uniquely_geodesic_at_zero_tolerance() {
        let t = tripod(1.0, 4).unwrap();
        let opts = ChainOptions::exact(4);
        for x in 0..t.len() {
            for y in 0..t.len() {
                if let Ok(set) = enumerate_chains(&t, x, y, &opts) {
                    assert!(set.len() <= 1);
                }
            }
        }
    }
}
