//! Undirected weighted communication graph between IBRs and the Laplacian
//! algebra used by the optimizer and the stability analysis.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least one node")]
    Empty,
    #[error("edge ({0}, {1}) references a node outside 1..={2}")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self loop on node {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) listed more than once")]
    DuplicateEdge(usize, usize),
    #[error("edge ({0}, {1}) has non-positive or non-finite weight {2}")]
    BadWeight(usize, usize, f64),
    #[error("communication graph is disconnected; unreachable from node 1: {0:?}")]
    Disconnected(Vec<usize>),
}

/// An undirected edge with 0-based endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Connected, undirected, weighted communication topology.
///
/// One node per IBR. Construction rejects disconnected graphs, so every
/// `CommGraph` has a Laplacian with a single zero eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    n: usize,
    edges: Vec<Edge>,
    adjacency: DMatrix<f64>,
}

impl CommGraph {
    /// Builds a graph from 0-based edges.
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut adjacency = DMatrix::zeros(n, n);
        for e in &edges {
            if e.a >= n || e.b >= n {
                return Err(GraphError::NodeOutOfRange(e.a + 1, e.b + 1, n));
            }
            if e.a == e.b {
                return Err(GraphError::SelfLoop(e.a + 1));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(GraphError::BadWeight(e.a + 1, e.b + 1, e.weight));
            }
            if adjacency[(e.a, e.b)] != 0.0 {
                return Err(GraphError::DuplicateEdge(e.a + 1, e.b + 1));
            }
            adjacency[(e.a, e.b)] = e.weight;
            adjacency[(e.b, e.a)] = e.weight;
        }
        let g = Self {
            n,
            edges,
            adjacency,
        };
        let unreached = g.unreachable_from_first();
        if !unreached.is_empty() {
            return Err(GraphError::Disconnected(
                unreached.into_iter().map(|i| i + 1).collect(),
            ));
        }
        Ok(g)
    }

    /// Builds a graph from 1-based `(i, j, weight)` triples, as written in
    /// scenario files.
    pub fn from_one_based(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self, GraphError> {
        let mut out = Vec::new();
        for (i, j, w) in edges {
            if i == 0 || j == 0 || i > n || j > n {
                return Err(GraphError::NodeOutOfRange(i, j, n));
            }
            out.push(Edge {
                a: i - 1,
                b: j - 1,
                weight: w,
            });
        }
        Self::new(n, out)
    }

    /// Unit-weight ring 1-2-...-n-1.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        let edges = match n {
            0 | 1 => Vec::new(),
            2 => vec![(1, 2, 1.0)],
            _ => (1..=n).map(|i| (i, i % n + 1, 1.0)).collect(),
        };
        Self::from_one_based(n, edges)
    }

    /// Unit-weight path 1-2-...-n.
    pub fn path(n: usize) -> Result<Self, GraphError> {
        Self::from_one_based(n, (1..n).map(|i| (i, i + 1, 1.0)))
    }

    /// Unit-weight complete graph.
    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                edges.push((i, j, 1.0));
            }
        }
        Self::from_one_based(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    /// Weighted degree of each node.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.adjacency.row(i).sum()).collect()
    }

    /// Neighbours of node `i` (0-based) with the corresponding weights.
    pub fn neighbours(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.n)
            .map(move |j| (j, self.adjacency[(i, j)]))
            .filter(|&(_, w)| w > 0.0)
    }

    /// Laplacian `D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = -self.adjacency.clone();
        for (i, d) in self.degrees().into_iter().enumerate() {
            l[(i, i)] = d;
        }
        l
    }

    /// Laplacian eigenvalues in ascending order.
    pub fn laplacian_spectrum(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.laplacian())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Second-smallest Laplacian eigenvalue. A single node has no second
    /// eigenvalue; 0 is returned in that case.
    pub fn algebraic_connectivity(&self) -> f64 {
        self.laplacian_spectrum().get(1).copied().unwrap_or(0.0)
    }

    /// `(I + k L)^{-1}`, symmetric positive definite with unit row sums.
    pub fn consensus_gain_matrix(&self, k: f64) -> DMatrix<f64> {
        let m = DMatrix::identity(self.n, self.n) + self.laplacian() * k;
        // I + kL is SPD for k >= 0.
        let inv = m
            .cholesky()
            .expect("I + kL is positive definite for k >= 0")
            .inverse();
        (&inv + inv.transpose()) * 0.5
    }

    fn unreachable_from_first(&self) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for (j, _) in self.neighbours(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        (0..self.n).filter(|&i| !seen[i]).collect()
    }
}
