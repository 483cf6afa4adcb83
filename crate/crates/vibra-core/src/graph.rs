//! Sensor graphs: binary adjacency, self-connections, and the
//! symmetrically normalized adjacency used by every graph convolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    Empty,
    #[error("adjacency entry ({i},{j}) = {value} is not binary")]
    NonBinary { i: usize, j: usize, value: f64 },
    #[error("adjacency is asymmetric at ({i},{j})")]
    Asymmetric { i: usize, j: usize },
    #[error("adjacency has a nonzero diagonal at node {i}; self-connections are added internally")]
    NonzeroDiagonal { i: usize },
    #[error("edge ({0},{1}) out of range for {n} nodes", .edge.0, .edge.1)]
    EdgeOutOfRange { edge: (usize, usize), n: usize },
    #[error("self-edge ({0},{0}) not allowed", .node)]
    SelfEdge { node: usize },
    #[error("unknown graph preset `{0}`; expected `path4` or `pair2`")]
    UnknownPreset(String),
}

/// Graph declaration as it appears in a pipeline config: either a named
/// preset or an explicit undirected edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Preset {
        preset: String,
    },
    Edges {
        n: usize,
        edges: Vec<(usize, usize)>,
    },
}

/// Undirected sensor graph with binary adjacency and zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    adjacency: Matrix,
    node_labels: Vec<String>,
}

/// Normalized adjacency `Â = D̃^{-1/2} Ã D̃^{-1/2}` with `Ã = A + I`.
///
/// Immutable after construction; built once per run and shared by every
/// forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    a_hat: Matrix,
    degree: Vec<f64>,
}

impl Graph {
    /// Validates an explicit adjacency matrix. The input must already be
    /// symmetric, binary, and zero on the diagonal; repairs are not
    /// applied silently.
    pub fn new(adjacency: Matrix, node_labels: Vec<String>) -> Result<Self, GraphError> {
        let n = adjacency.rows();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        assert_eq!(adjacency.cols(), n, "adjacency must be square");
        for i in 0..n {
            for j in 0..n {
                let v = adjacency.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(GraphError::NonBinary { i, j, value: v });
                }
                if v != adjacency.get(j, i) {
                    return Err(GraphError::Asymmetric { i, j });
                }
            }
            if adjacency.get(i, i) != 0.0 {
                return Err(GraphError::NonzeroDiagonal { i });
            }
        }
        let node_labels = if node_labels.is_empty() {
            (0..n).map(|i| format!("node_{i}")).collect()
        } else {
            assert_eq!(node_labels.len(), n, "one label per node");
            node_labels
        };
        Ok(Graph {
            n_nodes: n,
            adjacency,
            node_labels,
        })
    }

    /// Builds a graph from an undirected edge list.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut adjacency = Matrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::EdgeOutOfRange { edge: (i, j), n });
            }
            if i == j {
                return Err(GraphError::SelfEdge { node: i });
            }
            adjacency.set(i, j, 1.0);
            adjacency.set(j, i, 1.0);
        }
        Graph::new(adjacency, Vec::new())
    }

    /// Resolves a config-level [`GraphSpec`].
    ///
    /// Preset `path4` is the four-sensor chain where only adjacent
    /// sensors influence each other; preset `pair2` is the two-sensor
    /// mutual coupling.
    pub fn from_spec(spec: &GraphSpec) -> Result<Self, GraphError> {
        match spec {
            GraphSpec::Preset { preset } => match preset.as_str() {
                "path4" => Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]),
                "pair2" => Graph::from_edges(2, &[(0, 1)]),
                other => Err(GraphError::UnknownPreset(other.to_string())),
            },
            GraphSpec::Edges { n, edges } => Graph::from_edges(*n, edges),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn set_node_labels(&mut self, labels: Vec<String>) {
        assert_eq!(labels.len(), self.n_nodes, "one label per node");
        self.node_labels = labels;
    }

    /// `Ã = A + I`, the self-connection added adjacency.
    pub fn add_self_loops(&self) -> Matrix {
        self.adjacency
            .add(&Matrix::identity(self.n_nodes))
            .expect("square by construction")
    }

    /// Symmetric normalization: degrees `d_i = Σ_j Ã_ij`, then
    /// `Â_ij = Ã_ij / √(d_i d_j)`. Self-loops keep every degree ≥ 1.
    pub fn normalize(&self) -> NormalizedGraph {
        let a_tilde = self.add_self_loops();
        let n = self.n_nodes;
        let degree: Vec<f64> = (0..n).map(|i| a_tilde.row(i).iter().sum()).collect();
        let mut a_hat = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = a_tilde.get(i, j);
                if v != 0.0 {
                    a_hat.set(i, j, v / (degree[i] * degree[j]).sqrt());
                }
            }
        }
        NormalizedGraph { a_hat, degree }
    }
}

impl NormalizedGraph {
    pub fn a_hat(&self) -> &Matrix {
        &self.a_hat
    }

    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn n_nodes(&self) -> usize {
        self.degree.len()
    }
}
