//! Entropy functionals and distortion coefficients.
//!
//! A functional is `E(μ) = Σ F(ρ_i) m_i`, with `ρ = dμ/dm` and `F(0) = 0`.
//! Finite spaces with full-support reference measure carry no singular part,
//! so the `F'(∞)` term never appears.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::space::FiniteMetricMeasureSpace;
use crate::transport::ProbMeasure;

/// A dimension parameter `N ∈ [1, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dim {
    Finite(f64),
    Infinite,
}

impl Dim {
    pub fn new(n: f64) -> Result<Self> {
        if n.is_infinite() && n > 0.0 {
            Ok(Dim::Infinite)
        } else if n >= 1.0 {
            Ok(Dim::Finite(n))
        } else {
            Err(Error::Domain(format!("dimension must lie in [1, inf], got {n}")))
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Dim::Finite(n) => n,
            Dim::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Dim::Finite(_))
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dim::Finite(n) => write!(f, "{n}"),
            Dim::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Dim {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinity" | "Inf" | "oo" => Ok(Dim::Infinite),
            other => {
                let n: f64 = other.parse().map_err(|_| Error::Domain(format!("not a dimension: `{other}`")))?;
                Dim::new(n)
            }
        }
    }
}

impl Serialize for Dim {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Dim::Finite(n) => s.serialize_f64(*n),
            Dim::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Dim {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(n) => Dim::new(n),
            Raw::Text(t) => t.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntropySpec {
    /// `F(r) = -r^{1-1/N}` with `N ∈ [1, ∞)`.
    Renyi { n: f64 },
    /// `F(r) = r log r`.
    Shannon,
    /// `F(r) = r^p` with `p ≥ 1`.
    PowerTest { p: f64 },
}

/// Largest exponent the power family is evaluated with.
pub const MAX_POWER: f64 = 64.0;

impl EntropySpec {
    pub fn renyi(n: f64) -> Result<Self> {
        if n >= 1.0 && n.is_finite() {
            Ok(EntropySpec::Renyi { n })
        } else {
            Err(Error::Domain(format!("Renyi entropy needs 1 <= N < inf, got {n}")))
        }
    }

    pub fn power(p: f64) -> Result<Self> {
        if (1.0..=MAX_POWER).contains(&p) {
            Ok(EntropySpec::PowerTest { p })
        } else {
            Err(Error::Domain(format!("power test needs 1 <= p <= {MAX_POWER}, got {p}")))
        }
    }

    /// The critical entropy for dimension `dim`: Rényi for finite `N`,
    /// Shannon for `N = ∞`.
    pub fn critical(dim: Dim) -> Self {
        match dim {
            Dim::Finite(n) => EntropySpec::Renyi { n },
            Dim::Infinite => EntropySpec::Shannon,
        }
    }

    pub fn f(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match *self {
            EntropySpec::Renyi { n } => -r.powf(1.0 - 1.0 / n),
            EntropySpec::Shannon => r * r.ln(),
            EntropySpec::PowerTest { p } => r.powf(p),
        }
    }

    /// `lim_{r→∞} F(r)/r`.
    pub fn f_prime_infinity(&self) -> f64 {
        match *self {
            EntropySpec::Renyi { .. } => 0.0,
            EntropySpec::Shannon => f64::INFINITY,
            EntropySpec::PowerTest { p } if p > 1.0 => f64::INFINITY,
            EntropySpec::PowerTest { .. } => 1.0,
        }
    }

    pub fn label(&self) -> String {
        match self {
            EntropySpec::Renyi { n } => format!("renyi({n})"),
            EntropySpec::Shannon => "shannon".into(),
            EntropySpec::PowerTest { p } => format!("power({p})"),
        }
    }
}

/// `Σ F(ρ_i) m_i` over the points of `space`.
pub fn evaluate_entropy(spec: &EntropySpec, mu: &ProbMeasure, space: &FiniteMetricMeasureSpace) -> f64 {
    entropy_of_density(spec, mu.density(), space.measure())
}

pub fn entropy_of_density(spec: &EntropySpec, density: &[f64], measure: &[f64]) -> f64 {
    density.iter().zip(measure).map(|(&r, &m)| spec.f(r) * m).sum()
}

/// Grid test of `F ∈ DC_N`: `F` convex with `F(0) = 0`, and
/// `λ ↦ λ^N F(λ^{-N})` (or `λ ↦ e^λ F(e^{-λ})` for `N = ∞`) convex on `grid`.
///
/// Convexity is tested on consecutive triples of the sorted grid against the
/// chord, with tolerance `1e-9` relative to the magnitudes involved.
pub fn check_dc_membership(spec: &EntropySpec, dim: Dim, grid: &[f64]) -> Result<bool> {
    let mut g: Vec<f64> = grid.to_vec();
    if g.len() < 3 || g.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(Error::Domain("membership grid needs at least 3 positive samples".into()));
    }
    g.sort_by(f64::total_cmp);
    g.dedup();
    if spec.f(0.0) != 0.0 {
        return Ok(false);
    }
    let f_vals: Vec<f64> = g.iter().map(|&r| spec.f(r)).collect();
    if f_vals.iter().any(|v| !v.is_finite()) || !chord_convex(&g, &f_vals) {
        return Ok(false);
    }
    let transformed: Vec<f64> = match dim {
        Dim::Finite(n) => g.iter().map(|&l| l.powf(n) * spec.f(l.powf(-n))).collect(),
        Dim::Infinite => g.iter().map(|&l| l.exp() * spec.f((-l).exp())).collect(),
    };
    if transformed.iter().any(|v| !v.is_finite()) {
        return Ok(false);
    }
    Ok(chord_convex(&g, &transformed))
}

fn chord_convex(x: &[f64], y: &[f64]) -> bool {
    x.windows(3).zip(y.windows(3)).all(|(xs, ys)| {
        let w = (xs[1] - xs[0]) / (xs[2] - xs[0]);
        let chord = (1.0 - w) * ys[0] + w * ys[2];
        let scale = 1.0f64.max(ys[0].abs()).max(ys[1].abs()).max(ys[2].abs());
        ys[1] <= chord + 1e-9 * scale
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    pub k: f64,
    pub n: Dim,
}

impl DistortionParams {
    pub fn new(k: f64, n: Dim) -> Self {
        Self { k, n }
    }
}

/// `β_t(x, y)` for the pair at distance `d(x, y)` in `space`.
pub fn beta(
    t: f64,
    x: usize,
    y: usize,
    params: DistortionParams,
    space: &FiniteMetricMeasureSpace,
) -> Result<f64> {
    beta_at_distance(t, space.d(x, y), params)
}

/// `β_t` as a function of the distance `d`. Returns `f64::INFINITY` on the
/// branches where the coefficient is infinite. At `t = 0` the ratio branches
/// take their limit `(α / sin α)^{N-1}` resp. `(α / sinh α)^{N-1}`.
pub fn beta_at_distance(t: f64, d: f64, params: DistortionParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("beta needs t in [0, 1], got {t}")));
    }
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("beta needs a distance >= 0, got {d}")));
    }
    let k = params.k;
    let n = match params.n {
        Dim::Infinite => return Ok((k * (1.0 - t * t) * d * d / 6.0).exp()),
        Dim::Finite(n) => n,
    };
    if n == 1.0 {
        return Ok(if k > 0.0 { f64::INFINITY } else { 1.0 });
    }
    if k == 0.0 {
        return Ok(1.0);
    }
    let alpha = (k.abs() / (n - 1.0)).sqrt() * d;
    if k > 0.0 && alpha > std::f64::consts::PI {
        return Ok(f64::INFINITY);
    }
    if t == 1.0 || alpha == 0.0 {
        return Ok(1.0);
    }
    let ratio = if k > 0.0 {
        if t == 0.0 {
            alpha / alpha.sin()
        } else {
            (t * alpha).sin() / (t * alpha.sin())
        }
    } else if t == 0.0 {
        alpha / alpha.sinh()
    } else {
        (t * alpha).sinh() / (t * alpha.sinh())
    };
    Ok(ratio.powf(n - 1.0))
}

/// Closed-form lower bound on `β_t(x, y)` over `t ∈ [0, 1]` and
/// `d(x, y) ≤ diameter`, for `K ≤ 0`.
pub fn beta_lower_bound(params: DistortionParams, diameter: f64) -> Result<f64> {
    let k = params.k;
    if k > 0.0 {
        return Err(Error::UnsupportedCurvature(k));
    }
    if !(diameter >= 0.0) {
        return Err(Error::Domain(format!("diameter must be >= 0, got {diameter}")));
    }
    Ok(match params.n {
        _ if k == 0.0 => 1.0,
        Dim::Finite(n) if n == 1.0 => 1.0,
        Dim::Infinite => (k * diameter * diameter / 6.0).exp(),
        Dim::Finite(n) => (-((n - 1.0) * k.abs()).sqrt() * diameter).exp(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples::segment;
    use proptest::prelude::*;

    fn two_point() -> FiniteMetricMeasureSpace {
        FiniteMetricMeasureSpace::new(vec!["a".into(), "b".into()], vec![0.0, 1.0, 1.0, 0.0], vec![0.5, 0.5]).unwrap()
    }

    fn lambda_grid() -> Vec<f64> {
        (1..=40).map(|i| i as f64 * 0.1).collect()
    }

    #[test]
    fn uniform_values() {
        let s = segment(9);
        let mu = ProbMeasure::from_density(&s, &vec![1.0; 9]).unwrap();
        assert!((evaluate_entropy(&EntropySpec::Renyi { n: 3.0 }, &mu, &s) + 1.0).abs() < 1e-12);
        assert!(evaluate_entropy(&EntropySpec::Shannon, &mu, &s).abs() < 1e-12);
    }

    #[test]
    fn two_point_values() {
        let s = two_point();
        let mu = ProbMeasure::new(&s, vec![1.0, 0.0]).unwrap();
        assert_eq!(mu.density(), &[2.0, 0.0]);
        let sh = evaluate_entropy(&EntropySpec::Shannon, &mu, &s);
        assert!((sh - std::f64::consts::LN_2).abs() < 1e-15);
        let r2 = evaluate_entropy(&EntropySpec::Renyi { n: 2.0 }, &mu, &s);
        assert!((r2 + 0.5 * 2f64.sqrt()).abs() < 1e-15);
        // E_1 is minus the mass of the support
        let r1 = evaluate_entropy(&EntropySpec::Renyi { n: 1.0 }, &mu, &s);
        assert_eq!(r1, -0.5);
    }

    #[test]
    fn dc_membership() {
        let g = lambda_grid();
        for n in [1.0, 2.0, 3.5, 8.0] {
            assert!(check_dc_membership(&EntropySpec::Renyi { n }, Dim::Finite(n), &g).unwrap());
        }
        assert!(!check_dc_membership(&EntropySpec::Renyi { n: 2.0 }, Dim::Finite(3.0), &g).unwrap());
        assert!(check_dc_membership(&EntropySpec::Renyi { n: 2.0 }, Dim::Finite(1.0), &g).unwrap());
        assert!(check_dc_membership(&EntropySpec::Shannon, Dim::Infinite, &g).unwrap());
        assert!(!check_dc_membership(&EntropySpec::Renyi { n: 4.0 }, Dim::Infinite, &g).unwrap());
        for n in [Dim::Finite(1.0), Dim::Finite(7.0), Dim::Infinite] {
            assert!(check_dc_membership(&EntropySpec::PowerTest { p: 1.0 }, n, &g).unwrap());
            assert!(check_dc_membership(&EntropySpec::PowerTest { p: 4.0 }, n, &g).unwrap());
        }
        assert!(check_dc_membership(&EntropySpec::Shannon, Dim::Finite(1.0), &[1.0, 2.0]).is_err());
    }

    #[test]
    fn beta_examples() {
        let p = |k, n| DistortionParams::new(k, Dim::Finite(n));
        assert_eq!(beta_at_distance(0.3, 1.7, p(0.0, 5.0)).unwrap(), 1.0);
        // sinh(1/2) / (1/2 · sinh 1), summed as series independently of std sinh
        let sinh = |x: f64| (0..30).map(|i| x.powi(2 * i + 1) / (1..=2 * i + 1).map(|j| j as f64).product::<f64>()).sum::<f64>();
        let expected = sinh(0.5) / (0.5 * sinh(1.0));
        let got = beta_at_distance(0.5, 1.0, p(-1.0, 2.0)).unwrap();
        assert!((got - expected).abs() < 1e-14);
        assert!((got - 0.886819).abs() < 1e-6);
        for params in [p(-2.0, 3.0), p(0.5, 3.0), p(0.0, 2.0), DistortionParams::new(-1.0, Dim::Infinite)] {
            assert_eq!(beta_at_distance(1.0, 1.3, params).unwrap(), 1.0);
        }
        assert_eq!(beta_at_distance(0.5, 10.0, p(1.0, 2.0)).unwrap(), f64::INFINITY);
        assert_eq!(beta_at_distance(0.5, 1.0, p(1.0, 1.0)).unwrap(), f64::INFINITY);
        assert_eq!(beta_at_distance(0.5, 1.0, p(-1.0, 1.0)).unwrap(), 1.0);
        assert!(beta_at_distance(1.5, 1.0, p(0.0, 2.0)).is_err());
    }

    #[test]
    fn beta_at_zero_is_the_limit() {
        let params = DistortionParams::new(-1.0, Dim::Finite(3.0));
        let b0 = beta_at_distance(0.0, 1.0, params).unwrap();
        let b_small = beta_at_distance(1e-7, 1.0, params).unwrap();
        assert!((b0 - b_small).abs() < 1e-9);
        let pos = DistortionParams::new(1.0, Dim::Finite(3.0));
        let b0 = beta_at_distance(0.0, 1.0, pos).unwrap();
        assert!((b0 - beta_at_distance(1e-7, 1.0, pos).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn lower_bound_examples() {
        let lb = |k, n: Dim, d| beta_lower_bound(DistortionParams::new(k, n), d).unwrap();
        assert_eq!(lb(0.0, Dim::Finite(3.0), 5.0), 1.0);
        assert_eq!(lb(-4.0, Dim::Finite(1.0), 5.0), 1.0);
        assert!((lb(-1.0, Dim::Infinite, 2.0) - 0.513417).abs() < 1e-6);
        assert!((lb(-1.0, Dim::Finite(2.0), 1.0) - (-1f64).exp()).abs() < 1e-15);
        assert!(matches!(
            beta_lower_bound(DistortionParams::new(1.0, Dim::Finite(2.0)), 1.0),
            Err(Error::UnsupportedCurvature(_))
        ));
    }

    #[test]
    fn dim_serde() {
        assert_eq!(serde_json::to_string(&Dim::Infinite).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Dim>("2.5").unwrap(), Dim::Finite(2.5));
        assert_eq!(serde_json::from_str::<Dim>("\"inf\"").unwrap(), Dim::Infinite);
        assert!(serde_json::from_str::<Dim>("0.5").is_err());
        assert_eq!("inf".parse::<Dim>().unwrap(), Dim::Infinite);
    }

    proptest! {
        #[test]
        fn beta_bounded_below(t in 0.0f64..=1.0, frac in 0.0f64..=1.0, k in -5.0f64..=0.0, n in 1.0f64..20.0, diam in 0.0f64..4.0, inf in any::<bool>()) {
            let dim = if inf { Dim::Infinite } else { Dim::Finite(n) };
            let params = DistortionParams::new(k, dim);
            let b = beta_at_distance(t, frac * diam, params).unwrap();
            prop_assert!(b >= beta_lower_bound(params, diam).unwrap() - 1e-12);
        }

        #[test]
        fn beta_continuous_at_zero_curvature(t in 0.0f64..=1.0, d in 0.0f64..3.0, n in 1.0f64..20.0, sign in any::<bool>()) {
            let k = if sign { 1e-8 } else { -1e-8 } / (1.0 + d * d);
            let b = beta_at_distance(t, d, DistortionParams::new(k, Dim::Finite(n))).unwrap();
            prop_assert!((b - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn renyi_is_minimized_by_the_normalized_restriction(w in prop::collection::vec(0.0f64..1.0, 2..12), n in 1.0f64..6.0) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let s = segment(w.len());
            let mu = ProbMeasure::from_unnormalized(&s, w.clone()).unwrap();
            let supp = s.mass_of(mu.support());
            let e = evaluate_entropy(&EntropySpec::Renyi { n }, &mu, &s);
            prop_assert!(e >= -supp.powf(1.0 / n) - 1e-12);
        }

        #[test]
        fn shannon_rescaling_identity(rho in prop::collection::vec(0.0f64..5.0, 1..10), m in prop::collection::vec(0.1f64..2.0, 10), w in 0.01f64..1.0) {
            let m = &m[..rho.len()];
            let mass: f64 = rho.iter().zip(m).map(|(r, m)| r * m).sum();
            let scaled: Vec<f64> = rho.iter().map(|r| r / w).collect();
            let lhs = entropy_of_density(&EntropySpec::Shannon, &scaled, m);
            let rhs = entropy_of_density(&EntropySpec::Shannon, &rho, m) / w - w.ln() * mass / w;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
