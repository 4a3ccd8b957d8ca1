//! Bundled example spaces.
//!
//! | name | shape | used for |
//! |------|-------|----------|
//! | `segment` | `n` equally spaced points on `[0, 1]` | Poincaré constants at `N = 1`, doubling, convexity |
//! | `grid2d` | `m × m` lattice on `[0, 1]^2`, Euclidean | Poincaré constants at `N = 2`, doubling |
//! | `circle` | cycle graph with arc-length metric | uniqueness: only the antipode branches |
//! | `tripod` | three arms glued at one junction | uniqueness: trees never branch |
//! | `theta` | two equal arms between two junctions plus a tail | branching and the convexity violation |
//! | `weighted_tree` | random tree with dyadic edge weights | tree-metric property tests |
//!
//! Every generator uses the uniform measure with total mass one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entropy::Dim;
use crate::error::{Error, Result};
use crate::space::FiniteMetricMeasureSpace;
use crate::space_file::{Edge, Metadata, MetricSpec, SpaceFile, SPACE_FORMAT};

pub const EXAMPLE_NAMES: [&str; 6] = ["segment", "grid2d", "circle", "tripod", "theta", "weighted_tree"];

/// Size parameters shared by the generators; each reads the fields it needs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleParams {
    /// Point count for `segment`, `circle` and `weighted_tree`; side for `grid2d`.
    pub n: usize,
    pub arm_length: f64,
    pub arm_separation: f64,
    pub subdivisions: usize,
    pub seed: u64,
}

impl Default for ExampleParams {
    fn default() -> Self {
        Self { n: 65, arm_length: 1.0, arm_separation: 0.5, subdivisions: 16, seed: 0 }
    }
}

fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

fn metadata(name: &str, kappa: Option<f64>, dim: Option<Dim>, description: &str) -> Metadata {
    Metadata { name: Some(name.into()), kappa, dim, description: Some(description.into()) }
}

pub fn generate_example(name: &str, p: &ExampleParams) -> Result<SpaceFile> {
    match name {
        "segment" => segment_file(p.n),
        "grid2d" => grid2d_file(p.n),
        "circle" => circle_file(p.n),
        "tripod" => tripod_file(p.arm_length, p.subdivisions),
        "theta" => theta_file(p.arm_length, p.arm_separation, p.subdivisions),
        "weighted_tree" => weighted_tree_file(p.n, p.seed),
        other => Err(Error::UnknownExample(other.into())),
    }
}

fn need(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Domain(msg.into()))
    }
}

pub fn segment_file(n: usize) -> Result<SpaceFile> {
    need(n >= 2, "segment needs at least 2 points")?;
    let pitch = (n - 1) as f64;
    let rows = (0..n)
        .map(|i| (0..n).map(|j| (i as f64 - j as f64).abs() / pitch).collect())
        .collect();
    Ok(SpaceFile {
        format: SPACE_FORMAT.into(),
        points: (0..n).map(|i| format!("x{i}")).collect(),
        measure: uniform(n),
        metric: MetricSpec::Matrix(rows),
        metadata: metadata("segment", Some(0.0), Some(Dim::Finite(1.0)), "uniform grid on [0,1]"),
    })
}

pub fn grid2d_file(side: usize) -> Result<SpaceFile> {
    need(side >= 2, "grid2d needs side >= 2")?;
    let n = side * side;
    let pitch = (side - 1) as f64;
    let coord = |i: usize| ((i / side) as f64, (i % side) as f64);
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let ((a, b), (c, d)) = (coord(i), coord(j));
                    ((a - c).powi(2) + (b - d).powi(2)).sqrt() / pitch
                })
                .collect()
        })
        .collect();
    Ok(SpaceFile {
        format: SPACE_FORMAT.into(),
        points: (0..n).map(|i| format!("g{}_{}", i / side, i % side)).collect(),
        measure: uniform(n),
        metric: MetricSpec::Matrix(rows),
        metadata: metadata("grid2d", Some(0.0), Some(Dim::Finite(2.0)), "square lattice in [0,1]^2, Euclidean metric"),
    })
}

pub fn circle_file(n: usize) -> Result<SpaceFile> {
    need(n >= 3, "circle needs at least 3 points")?;
    let points: Vec<String> = (0..n).map(|i| format!("c{i}")).collect();
    let len = 2.0 * std::f64::consts::PI / n as f64;
    let edges = (0..n)
        .map(|i| Edge { from: points[i].clone(), to: points[(i + 1) % n].clone(), length: len })
        .collect();
    Ok(SpaceFile {
        format: SPACE_FORMAT.into(),
        points,
        measure: uniform(n),
        metric: MetricSpec::Edges(edges),
        metadata: metadata("circle", None, None, "cycle graph of circumference 2*pi"),
    })
}

pub fn tripod_file(arm_length: f64, k: usize) -> Result<SpaceFile> {
    need(k >= 1 && arm_length > 0.0, "tripod needs k >= 1 and positive arm length")?;
    let mut points = vec!["o".to_string()];
    let mut edges = Vec::new();
    for arm in 0..3 {
        let mut prev = "o".to_string();
        for i in 1..=k {
            let id = format!("a{arm}_{i}");
            edges.push(Edge { from: prev.clone(), to: id.clone(), length: arm_length / k as f64 });
            points.push(id.clone());
            prev = id;
        }
    }
    let n = points.len();
    Ok(SpaceFile {
        format: SPACE_FORMAT.into(),
        points,
        measure: uniform(n),
        metric: MetricSpec::Edges(edges),
        metadata: metadata("tripod", None, None, "three arms glued at a junction; a tree"),
    })
}

/// Two arms of length `arm_length`, each split into `k` edges, joining the
/// junctions `x` and `y`, plus a tail of `k / 2` edges hanging off `y`.
/// Every tail point sees `x` through two geodesics that agree along the tail
/// and split at `y`.
pub fn theta_file(arm_length: f64, arm_separation: f64, k: usize) -> Result<SpaceFile> {
    need(k >= 2 && k % 2 == 0, "theta needs an even number of subdivisions")?;
    need(arm_length > 0.0, "theta needs a positive arm length")?;
    // arm midpoints are joined through a junction, at distance arm_length
    need(
        arm_length >= arm_separation,
        "arm separation exceeds what two arms of this length can realize",
    )?;
    let h = arm_length / k as f64;
    let mut points = vec!["x".to_string(), "y".to_string()];
    let mut edges = Vec::new();
    for arm in ["u", "v"] {
        let mut prev = "x".to_string();
        for i in 1..k {
            let id = format!("{arm}{i}");
            edges.push(Edge { from: prev.clone(), to: id.clone(), length: h });
            points.push(id.clone());
            prev = id;
        }
        edges.push(Edge { from: prev, to: "y".into(), length: h });
    }
    let mut prev = "y".to_string();
    for i in 1..=k / 2 {
        let id = format!("w{i}");
        edges.push(Edge { from: prev.clone(), to: id.clone(), length: h });
        points.push(id.clone());
        prev = id;
    }
    let n = points.len();
    Ok(SpaceFile {
        format: SPACE_FORMAT.into(),
        points,
        measure: uniform(n),
        metric: MetricSpec::Edges(edges),
        metadata: metadata("theta", None, None, "two arms between junctions x and y, tail w beyond y"),
    })
}

pub fn weighted_tree_file(n: usize, seed: u64) -> Result<SpaceFile> {
    need(n >= 2, "weighted_tree needs at least 2 points")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let edges = (1..n)
        .map(|i| {
            let parent = rng.random_range(0..i);
            let length = rng.random_range(4..=12) as f64 / 8.0;
            Edge { from: points[parent].clone(), to: points[i].clone(), length }
        })
        .collect();
    Ok(SpaceFile {
        format: SPACE_FORMAT.into(),
        points,
        measure: uniform(n),
        metric: MetricSpec::Edges(edges),
        metadata: metadata("weighted_tree", None, None, "random tree with dyadic edge lengths"),
    })
}

pub fn segment(n: usize) -> FiniteMetricMeasureSpace {
    segment_file(n).and_then(|f| f.to_space()).expect("valid segment")
}

pub fn grid2d(side: usize) -> FiniteMetricMeasureSpace {
    grid2d_file(side).and_then(|f| f.to_space()).expect("valid grid")
}

pub fn circle(n: usize) -> Result<FiniteMetricMeasureSpace> {
    circle_file(n)?.to_space()
}

pub fn tripod(arm_length: f64, k: usize) -> Result<FiniteMetricMeasureSpace> {
    tripod_file(arm_length, k)?.to_space()
}

pub fn weighted_tree(n: usize, seed: u64) -> Result<FiniteMetricMeasureSpace> {
    weighted_tree_file(n, seed)?.to_space()
}

/// A theta space with its distinguished points.
#[derive(Debug, Clone)]
pub struct Theta {
    pub space: FiniteMetricMeasureSpace,
    pub junctions: (usize, usize),
    pub tail: Vec<usize>,
}

pub fn theta(arm_length: f64, arm_separation: f64, k: usize) -> Result<Theta> {
    let space = theta_file(arm_length, arm_separation, k)?.to_space()?;
    let tail = (1..=k / 2).map(|i| space.index_of(&format!("w{i}")).unwrap()).collect();
    Ok(Theta { junctions: (0, 1), tail, space })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::validate_metric;

    #[test]
    fn every_generator_yields_a_valid_metric() {
        let p = ExampleParams { n: 9, subdivisions: 8, ..Default::default() };
        for name in EXAMPLE_NAMES {
            let s = generate_example(name, &p).unwrap().to_space().unwrap();
            assert!(validate_metric(&s).is_empty(), "{name}");
        }
        assert!(matches!(generate_example("torus", &p), Err(Error::UnknownExample(_))));
    }

    #[test]
    fn sizes() {
        assert_eq!(segment(65).len(), 65);
        assert!((segment(65).d(0, 1) - 1.0 / 64.0).abs() < 1e-15);
        assert_eq!(tripod(1.0, 8).unwrap().len(), 25);
        assert_eq!(grid2d(17).len(), 289);
    }

    #[test]
    fn theta_realizes_the_requested_separation() {
        let t = theta(1.0, 0.5, 16).unwrap();
        let s = &t.space;
        let (u8, v8) = (s.index_of("u8").unwrap(), s.index_of("v8").unwrap());
        assert!(s.d(u8, v8) >= 0.5);
        assert!((s.d(t.junctions.0, t.junctions.1) - 1.0).abs() < 1e-12);
        assert_eq!(t.tail.len(), 8);
        assert!(theta(1.0, 2.0, 16).is_err());
    }

    #[test]
    fn round_trip_through_json_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for name in EXAMPLE_NAMES {
            let f = generate_example(name, &ExampleParams { n: 7, subdivisions: 4, ..Default::default() }).unwrap();
            let path = dir.path().join(format!("{name}.json"));
            f.save(&path).unwrap();
            let loaded = crate::space_file::load_space(&path).unwrap();
            assert_eq!(loaded, f.to_space().unwrap(), "{name}");
        }
    }
}
