//! 1-D domain discretization, boundary distance and quadrature.
//!
//! Every solver in this crate works on a uniform grid of interior nodes of a
//! bounded open interval. Functions are represented by their nodal values and
//! extended by zero outside the interval, so all integrals reduce to a single
//! uniform quadrature weight per node. Keeping the nodes strictly inside the
//! interval guarantees a positive boundary distance everywhere, which is what
//! lets weights like `rho^{-sp}` stay finite on the grid.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

#[derive(Error, Debug, PartialEq)]
pub enum GridError {
    #[error("domain requires left < right, got left = {0}, right = {1}")]
    EmptyInterval(f64, f64),
    #[error("at least 2 interior nodes are required, got {0}")]
    TooFewNodes(usize),
    #[error("value vector has length {got}, grid has {expected} nodes")]
    LengthMismatch { got: usize, expected: usize },
}

/// Uniform grid of `n` interior nodes of the interval `(left, right)`.
///
/// The node set is symmetric about the midpoint and the spacing equals the
/// quadrature weight `(right - left) / (n + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Domain1D {
    left: f64,
    right: f64,
    n: usize,
    nodes: Vec<f64>,
    cell_weight: f64,
}

impl Domain1D {
    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    /// Number of interior nodes.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    /// Uniform quadrature weight shared by all nodes.
    pub fn cell_weight(&self) -> f64 {
        self.cell_weight
    }

    /// Distance from each node to the boundary of the interval.
    pub fn distance_to_boundary(&self) -> Vec<f64> {
        self.nodes
            .iter()
            .map(|&x| (x - self.left).min(self.right - x))
            .collect()
    }

    /// Quadrature of nodal values over the interval (zero extension outside).
    pub fn integrate(&self, values: &[f64]) -> Result<f64, GridError> {
        if values.len() != self.n {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                expected: self.n,
            });
        }
        let mut sum = KahanSum::new();
        for &v in values {
            sum.add(v);
        }
        Ok(self.cell_weight * sum.value())
    }

    /// Index of the node mirroring node `i` under `x -> left + right - x`.
    pub fn reflect_index(&self, i: usize) -> usize {
        self.n - 1 - i
    }
}

/// Builds the uniform interior-node grid on `(left, right)`.
pub fn build_grid(left: f64, right: f64, n: usize) -> Result<Arc<Domain1D>, GridError> {
    if !(left < right) {
        return Err(GridError::EmptyInterval(left, right));
    }
    if n < 2 {
        return Err(GridError::TooFewNodes(n));
    }
    let cell_weight = (right - left) / (n + 1) as f64;
    let nodes: Vec<f64> = (1..=n).map(|k| left + k as f64 * cell_weight).collect();
    Ok(Arc::new(Domain1D {
        left,
        right,
        n,
        nodes,
        cell_weight,
    }))
}

/// Nodal values of a function on a [`Domain1D`], implicitly zero outside.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub domain: Arc<Domain1D>,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(domain: Arc<Domain1D>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != domain.len() {
            return Err(GridError::LengthMismatch {
                got: values.len(),
                expected: domain.len(),
            });
        }
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: Arc<Domain1D>) -> Self {
        let values = vec![0.0; domain.len()];
        Self { domain, values }
    }

    pub fn constant(domain: Arc<Domain1D>, c: f64) -> Self {
        let values = vec![c; domain.len()];
        Self { domain, values }
    }

    /// Builds a grid function from a closure of the node coordinate.
    pub fn from_fn(domain: Arc<Domain1D>, f: impl Fn(f64) -> f64) -> Self {
        let values = domain.nodes().iter().map(|&x| f(x)).collect();
        Self { domain, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Quadrature of the nodal values.
    pub fn integrate(&self) -> f64 {
        self.domain
            .integrate(&self.values)
            .expect("values match domain by construction")
    }

    pub fn scale(&self, t: f64) -> Self {
        Self {
            domain: Arc::clone(&self.domain),
            values: self.values.iter().map(|v| t * v).collect(),
        }
    }

    pub fn add_scaled(&self, t: f64, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "grid function length mismatch");
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + t * b)
            .collect();
        Self {
            domain: Arc::clone(&self.domain),
            values,
        }
    }

    /// Mirrors the nodal values under the reflection `x -> left + right - x`.
    pub fn reflect(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self {
            domain: Arc::clone(&self.domain),
            values,
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Discrete `L^q` norm with the grid quadrature.
    pub fn lq_norm(&self, q: f64) -> f64 {
        let mut sum = KahanSum::new();
        for &v in &self.values {
            sum.add(v.abs().powf(q));
        }
        (self.domain.cell_weight() * sum.value()).powf(1.0 / q)
    }
}

/// Compensated accumulator; keeps long quadrature and kernel sums accurate to
/// a few ulps independent of summation order.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}
