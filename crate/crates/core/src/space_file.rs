//! On-disk space description, schema `cdkn-space/1`.
//!
//! ```json
//! {
//!   "format": "cdkn-space/1",
//!   "points": ["a", "b", "c"],
//!   "measure": [1.0, 1.0, 1.0],
//!   "metric": { "edges": [ { "from": "a", "to": "b", "length": 1.0 }, ... ] },
//!   "metadata": { "name": "path", "kappa": 0.0, "dim": 1.0 }
//! }
//! ```
//!
//! `metric` is either `{"matrix": [[...], ...]}` (full symmetric matrix) or
//! `{"edges": [...]}`, in which case distances are the shortest-path closure
//! of the weighted graph, which must be connected.

use std::path::Path;

use petgraph::algo::floyd_warshall;
use petgraph::graph::UnGraph;
use serde::{Deserialize, Serialize};

use crate::entropy::Dim;
use crate::error::{Error, Result};
use crate::space::FiniteMetricMeasureSpace;

pub const SPACE_FORMAT: &str = "cdkn-space/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSpec {
    Matrix(Vec<Vec<f64>>),
    Edges(Vec<Edge>),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<Dim>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceFile {
    pub format: String,
    pub points: Vec<String>,
    pub measure: Vec<f64>,
    pub metric: MetricSpec,
    #[serde(default)]
    pub metadata: Metadata,
}

impl SpaceFile {
    pub fn to_space(&self) -> Result<FiniteMetricMeasureSpace> {
        if self.format != SPACE_FORMAT {
            return Err(Error::Parse {
                position: "format".into(),
                message: format!("expected `{SPACE_FORMAT}`, found `{}`", self.format),
            });
        }
        let n = self.points.len();
        if self.measure.len() != n {
            return Err(Error::Parse {
                position: "measure".into(),
                message: format!("{} weights for {n} points", self.measure.len()),
            });
        }
        match &self.metric {
            MetricSpec::Matrix(rows) => {
                FiniteMetricMeasureSpace::from_matrix(self.points.clone(), rows, self.measure.clone())
            }
            MetricSpec::Edges(edges) => {
                let dist = shortest_path_closure(&self.points, edges)?;
                FiniteMetricMeasureSpace::new(self.points.clone(), dist, self.measure.clone())
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            position: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space files always serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// All-pairs shortest paths of an undirected weighted graph, row-major.
pub fn shortest_path_closure(points: &[String], edges: &[Edge]) -> Result<Vec<f64>> {
    let n = points.len();
    let mut graph = UnGraph::<(), f64>::with_capacity(n, edges.len());
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    let lookup = |id: &str, at: usize| {
        points.iter().position(|p| p == id).ok_or_else(|| Error::Parse {
            position: format!("edges[{at}]"),
            message: format!("unknown point `{id}`"),
        })
    };
    for (at, e) in edges.iter().enumerate() {
        if !(e.length > 0.0) || !e.length.is_finite() {
            return Err(Error::Parse {
                position: format!("edges[{at}]"),
                message: format!("edge length must be positive, got {}", e.length),
            });
        }
        let (a, b) = (lookup(&e.from, at)?, lookup(&e.to, at)?);
        graph.add_edge(nodes[a], nodes[b], e.length);
    }
    let paths = floyd_warshall(&graph, |e| *e.weight()).map_err(|_| Error::Parse {
        position: "edges".into(),
        message: "negative cycle".into(),
    })?;
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let d = paths.get(&(nodes[i], nodes[j])).copied().unwrap_or(f64::INFINITY);
            // unreachable pairs come back as f64::MAX
            if !d.is_finite() || d >= f64::MAX / 2.0 {
                return Err(Error::DisconnectedGraph(points[j].clone()));
            }
            dist[i * n + j] = d;
        }
    }
    // symmetrize against summation-order differences
    for i in 0..n {
        for j in i + 1..n {
            let d = dist[i * n + j].min(dist[j * n + i]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    Ok(dist)
}

/// Reads and validates a space file.
pub fn load_space(path: impl AsRef<Path>) -> Result<FiniteMetricMeasureSpace> {
    let text = std::fs::read_to_string(path)?;
    SpaceFile::from_json(&text)?.to_space()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::validate_metric;

    fn cycle4() -> SpaceFile {
        let points: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let edges = (0..4)
            .map(|i| Edge { from: points[i].clone(), to: points[(i + 1) % 4].clone(), length: 1.0 })
            .collect();
        SpaceFile {
            format: SPACE_FORMAT.into(),
            points,
            measure: vec![0.25; 4],
            metric: MetricSpec::Edges(edges),
            metadata: Metadata::default(),
        }
    }

    #[test]
    fn four_cycle_closure() {
        let s = cycle4().to_space().unwrap();
        assert_eq!(s.d(0, 2), 2.0);
        assert_eq!(s.d(1, 3), 2.0);
        assert_eq!(s.d(0, 3), 1.0);
        assert!(validate_metric(&s).is_empty());
        // brute-force triple check, independent of the validator
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    assert!(s.d(i, k) <= s.d(i, j) + s.d(j, k));
                }
            }
        }
    }

    #[test]
    fn disconnected_graph_is_rejected() {
        let mut f = cycle4();
        if let MetricSpec::Edges(e) = &mut f.metric {
            e.retain(|e| e.from != "b" && e.to != "b");
            e.retain(|e| !(e.from == "c" && e.to == "d"));
        }
        assert!(matches!(f.to_space(), Err(Error::DisconnectedGraph(_))));
    }

    #[test]
    fn triangle_violating_matrix_is_a_metric_error() {
        let f = SpaceFile {
            format: SPACE_FORMAT.into(),
            points: vec!["a".into(), "b".into(), "c".into()],
            measure: vec![1.0; 3],
            metric: MetricSpec::Matrix(vec![vec![0.0, 1.0, 5.0], vec![1.0, 0.0, 1.0], vec![5.0, 1.0, 0.0]]),
            metadata: Metadata::default(),
        };
        assert!(matches!(f.to_space(), Err(Error::Metric(_))));
    }

    #[test]
    fn parse_errors_carry_a_position() {
        match SpaceFile::from_json("{ \"format\": 3 ") {
            Err(Error::Parse { position, .. }) => assert!(position.starts_with("line 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let mut f = cycle4();
        f.format = "cdkn-space/0".into();
        assert!(matches!(f.to_space(), Err(Error::Parse { .. })));
    }
}
