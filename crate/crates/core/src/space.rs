//! Finite metric measure spaces: the metric, the reference measure, balls and
//! the doubling constant.
//!
//! Measures are kept unnormalized. Balls are open: `B(x, r) = {p : d(x, p) < r}`.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite set of points with a full distance matrix and strictly positive
/// point masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMetricMeasureSpace {
    points: Vec<String>,
    dist: Vec<f64>,
    measure: Vec<f64>,
    total_mass: f64,
}

/// One violated axiom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Shape { expected: usize, got: usize },
    NonzeroDiagonal { i: usize, value: f64 },
    Asymmetric { i: usize, j: usize },
    NonPositiveDistance { i: usize, j: usize, value: f64 },
    NonFinite { i: usize, j: usize },
    Triangle { i: usize, j: usize, k: usize, direct: f64, via: f64 },
    NonPositiveMass { i: usize, value: f64 },
}

/// Result of [`validate_metric`]; empty iff every axiom holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violation(s)", self.violations.len())?;
        for v in self.violations.iter().take(5) {
            write!(f, "; {v:?}")?;
        }
        Ok(())
    }
}

fn check_axioms(n: usize, dist: &[f64], measure: &[f64]) -> ValidationReport {
    let mut violations = Vec::new();
    if dist.len() != n * n {
        violations.push(Violation::Shape { expected: n * n, got: dist.len() });
        return ValidationReport { violations };
    }
    if measure.len() != n {
        violations.push(Violation::Shape { expected: n, got: measure.len() });
        return ValidationReport { violations };
    }
    let d = |i: usize, j: usize| dist[i * n + j];
    let max_entry = dist.iter().cloned().filter(|v| v.is_finite()).fold(0.0f64, f64::max);
    let tol = 1e-12 * max_entry;
    for i in 0..n {
        if !(measure[i] > 0.0) || !measure[i].is_finite() {
            violations.push(Violation::NonPositiveMass { i, value: measure[i] });
        }
        if d(i, i) != 0.0 {
            violations.push(Violation::NonzeroDiagonal { i, value: d(i, i) });
        }
        for j in 0..n {
            if !d(i, j).is_finite() {
                violations.push(Violation::NonFinite { i, j });
                continue;
            }
            if i < j {
                if (d(i, j) - d(j, i)).abs() > tol {
                    violations.push(Violation::Asymmetric { i, j });
                }
                if !(d(i, j) > 0.0) {
                    violations.push(Violation::NonPositiveDistance { i, j, value: d(i, j) });
                }
            }
        }
    }
    if violations.iter().any(|v| matches!(v, Violation::NonFinite { .. })) {
        return ValidationReport { violations };
    }
    for i in 0..n {
        for k in 0..n {
            if i == k {
                continue;
            }
            let direct = d(i, k);
            for j in 0..n {
                if j == i || j == k {
                    continue;
                }
                let via = d(i, j) + d(j, k);
                if direct > via + tol {
                    violations.push(Violation::Triangle { i, j, k, direct, via });
                }
            }
        }
    }
    ValidationReport { violations }
}

impl FiniteMetricMeasureSpace {
    /// Builds a space from a row-major distance matrix, rejecting anything
    /// that is not a metric with strictly positive masses.
    pub fn new(points: Vec<String>, dist: Vec<f64>, measure: Vec<f64>) -> Result<Self> {
        let n = points.len();
        let report = check_axioms(n, &dist, &measure);
        if !report.is_empty() {
            return Err(Error::Metric(report));
        }
        Ok(Self::new_unchecked(points, dist, measure))
    }

    /// Builds a space without checking the metric axioms; use
    /// [`validate_metric`] to inspect it afterwards.
    pub fn new_unchecked(points: Vec<String>, dist: Vec<f64>, measure: Vec<f64>) -> Self {
        let total_mass = measure.iter().sum();
        Self { points, dist, measure, total_mass }
    }

    pub fn from_matrix(points: Vec<String>, rows: &[Vec<f64>], measure: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Metric(ValidationReport {
                violations: vec![Violation::Shape { expected: n * n, got: rows.iter().map(Vec::len).sum() }],
            }));
        }
        Self::new(points, rows.concat(), measure)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[String] {
        &self.points
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.points.iter().position(|p| p == id)
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.points.len() + j]
    }

    pub fn dist_matrix(&self) -> &[f64] {
        &self.dist
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    #[inline]
    pub fn mass(&self, i: usize) -> f64 {
        self.measure[i]
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn mass_of<I: IntoIterator<Item = usize>>(&self, set: I) -> f64 {
        set.into_iter().map(|i| self.measure[i]).sum()
    }

    /// Smallest positive distance, the grid pitch of discretized spaces.
    pub fn min_positive_distance(&self) -> f64 {
        self.dist.iter().cloned().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min)
    }

    pub fn diam(&self) -> f64 {
        self.dist.iter().cloned().fold(0.0, f64::max)
    }
}

/// Lists every violated metric or measure axiom.
pub fn validate_metric(space: &FiniteMetricMeasureSpace) -> ValidationReport {
    check_axioms(space.len(), &space.dist, &space.measure)
}

/// An open ball together with its mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: usize,
    pub radius: f64,
    pub members: Vec<usize>,
    pub mass: f64,
}

impl Ball {
    pub fn contains(&self, p: usize) -> bool {
        self.members.binary_search(&p).is_ok()
    }
}

pub fn ball(space: &FiniteMetricMeasureSpace, center: usize, radius: f64) -> Result<Ball> {
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("ball radius must be positive, got {radius}")));
    }
    if center >= space.len() {
        return Err(Error::Domain(format!("center {center} out of range")));
    }
    let members: Vec<usize> = (0..space.len()).filter(|&p| space.d(center, p) < radius).collect();
    let mass = space.mass_of(members.iter().copied());
    Ok(Ball { center, radius, members, mass })
}

/// `sup m(B(x, 2r)) / m(B(x, r))` over every center and the supplied radii.
pub fn doubling_constant(space: &FiniteMetricMeasureSpace, radii: &[f64]) -> Result<f64> {
    if radii.is_empty() {
        return Err(Error::Domain("doubling sweep needs at least one radius".into()));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0)) {
        return Err(Error::Domain(format!("radius {r} is not positive")));
    }
    let n = space.len();
    let worst = (0..n)
        .into_par_iter()
        .map(|x| {
            radii
                .iter()
                .map(|&r| {
                    let (mut inner, mut outer) = (0.0, 0.0);
                    for p in 0..n {
                        let d = space.d(x, p);
                        if d < r {
                            inner += space.mass(p);
                        }
                        if d < 2.0 * r {
                            outer += space.mass(p);
                        }
                    }
                    outer / inner
                })
                .fold(1.0f64, f64::max)
        })
        .reduce(|| 1.0, f64::max);
    Ok(worst)
}

/// Largest pairwise distance within `subset`.
pub fn diameter(space: &FiniteMetricMeasureSpace, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::Domain("diameter of an empty set".into()));
    }
    let mut best = 0.0f64;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            best = best.max(space.d(i, j));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    fn segment(n: usize) -> FiniteMetricMeasureSpace {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let dist = xs.iter().flat_map(|a| xs.iter().map(move |b| (a - b).abs())).collect();
        FiniteMetricMeasureSpace::new(ids(n), dist, vec![1.0 / n as f64; n]).unwrap()
    }

    #[test]
    fn equilateral_triangle_is_a_metric() {
        let d = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let s = FiniteMetricMeasureSpace::new_unchecked(ids(3), d, vec![1.0; 3]);
        assert!(validate_metric(&s).is_empty());
    }

    #[test]
    fn triangle_violation_is_reported_with_its_triple() {
        let d = vec![0.0, 1.0, 5.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0];
        let s = FiniteMetricMeasureSpace::new_unchecked(ids(3), d, vec![1.0; 3]);
        let report = validate_metric(&s);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Triangle { i: 0, j: 1, k: 2, .. })));
        assert!(FiniteMetricMeasureSpace::new(ids(3), s.dist.clone(), vec![1.0; 3]).is_err());
    }

    #[test]
    fn zero_mass_is_rejected() {
        let d = vec![0.0, 1.0, 1.0, 0.0];
        assert!(FiniteMetricMeasureSpace::new(ids(2), d, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn ball_membership_is_strict() {
        let s = segment(5);
        let b = ball(&s, 2, 0.3).unwrap();
        assert_eq!(b.members, vec![1, 2, 3]);
        assert_eq!(ball(&s, 2, 2.0).unwrap().members, vec![0, 1, 2, 3, 4]);
        assert_eq!(ball(&s, 2, 0.25).unwrap().members, vec![2]);
        assert!(ball(&s, 2, 0.0).is_err());
    }

    #[test]
    fn ball_monotone_in_radius() {
        let s = segment(9);
        for c in 0..9 {
            let mut prev: Vec<usize> = vec![];
            for r in [0.05, 0.1, 0.2, 0.33, 0.5, 0.9, 1.5] {
                let b = ball(&s, c, r).unwrap();
                assert!(prev.iter().all(|p| b.contains(*p)));
                assert!(b.contains(c));
                prev = b.members;
            }
        }
    }

    #[test]
    fn doubling_of_single_point_is_one() {
        let s = FiniteMetricMeasureSpace::new(ids(1), vec![0.0], vec![2.0]).unwrap();
        assert_eq!(doubling_constant(&s, &[0.5]).unwrap(), 1.0);
    }

    #[test]
    fn doubling_on_segment_matches_brute_force_range() {
        let n = 33;
        let s = segment(n);
        let h = 1.0 / (n - 1) as f64;
        let radii: Vec<f64> = (0..n / 2).map(|j| (j as f64 + 0.5) * h).collect();
        let dc = doubling_constant(&s, &radii).unwrap();
        // brute force: count points per ball directly from indices
        let mut brute = 1.0f64;
        for x in 0..n as i64 {
            for j in 0..(n / 2) as i64 {
                let inner = (0..n as i64).filter(|p| 2 * (p - x).abs() < 2 * j + 1).count();
                let outer = (0..n as i64).filter(|p| (p - x).abs() < 2 * j + 1).count();
                brute = brute.max(outer as f64 / inner as f64);
            }
        }
        assert!((dc - brute).abs() < 1e-12);
        assert!((1.0..=2.0 + 8.0 / n as f64).contains(&dc));
    }

    #[test]
    fn diameters() {
        let s = segment(5);
        assert_eq!(diameter(&s, &[3]).unwrap(), 0.0);
        assert_eq!(diameter(&s, &[0, 1, 2, 3, 4]).unwrap(), 1.0);
        assert!(diameter(&s, &[]).is_err());
    }
}
