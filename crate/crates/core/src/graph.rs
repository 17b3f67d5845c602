//! Undirected communication graphs, learning-subgraph selection and the
//! graph-coupled cost matrices.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::patterned::PatternedMatrix;
use crate::scalar::{fp, Scalar};

/// Undirected simple graph on nodes `0..node_count`. Connectivity is not
/// required.
#[derive(Debug, Clone)]
pub struct CommGraph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl CommGraph {
    pub fn new(node_count: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at node {i}")));
            }
            if i >= node_count || j >= node_count {
                return Err(Error::InvalidInput(format!(
                    "edge ({i}, {j}) out of range for {node_count} nodes"
                )));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self {
            node_count,
            edges: set,
        })
    }

    /// Path graph 0–1–…–(n−1).
    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).unwrap()
    }

    /// Star graph with center 0.
    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (0, i))).unwrap()
    }

    /// Complete graph on n nodes.
    pub fn complete(n: usize) -> Self {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)))).unwrap()
    }

    pub fn edgeless(n: usize) -> Self {
        Self::new(n, std::iter::empty()).unwrap()
    }

    /// Parses the edge-list text format: a `nodes=N` header line followed by
    /// one `i j` pair per line. Blank lines and `#` comments are skipped.
    pub fn from_edge_list_str(text: &str) -> Result<Self> {
        let mut node_count = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(n) = line.strip_prefix("nodes=") {
                node_count = Some(n.trim().parse::<usize>().map_err(|e| {
                    Error::GraphParse(format!("line {}: bad node count: {e}", lineno + 1))
                })?);
                continue;
            }
            let mut it = line.split_whitespace();
            let (a, b) = (it.next(), it.next());
            match (a, b) {
                (Some(a), Some(b)) if it.next().is_none() => {
                    let i = a.parse::<usize>().map_err(|e| {
                        Error::GraphParse(format!("line {}: {e}", lineno + 1))
                    })?;
                    let j = b.parse::<usize>().map_err(|e| {
                        Error::GraphParse(format!("line {}: {e}", lineno + 1))
                    })?;
                    edges.push((i, j));
                }
                _ => {
                    return Err(Error::GraphParse(format!(
                        "line {}: expected `i j`, got `{line}`",
                        lineno + 1
                    )))
                }
            }
        }
        let node_count = node_count
            .ok_or_else(|| Error::GraphParse("missing `nodes=N` header".into()))?;
        Self::new(node_count, edges)
    }

    pub fn from_edge_list_file(path: &Path) -> Result<Self> {
        Self::from_edge_list_str(&std::fs::read_to_string(path)?)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        (0..self.node_count)
            .filter(|&j| self.has_edge(i, j))
            .collect()
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.node_count)
            .map(|i| self.degree(i))
            .max()
            .unwrap_or(0)
    }

    /// Graph Laplacian L = D − A.
    pub fn laplacian<T: Scalar>(&self) -> DMatrix<T> {
        let n = self.node_count;
        let mut l = DMatrix::<T>::zeros(n, n);
        for i in 0..n {
            l[(i, i)] = fp(self.degree(i) as f64);
        }
        for &(i, j) in &self.edges {
            l[(i, j)] = -T::one();
            l[(j, i)] = -T::one();
        }
        l
    }
}

/// The learning subgraph: a maximum-degree hub plus d_max of its neighbors,
/// in a frozen order (hub first, then neighbors by ascending label).
#[derive(Debug, Clone)]
pub struct SubgraphSelection {
    members: Vec<usize>,
    learn_mode: bool,
}

impl SubgraphSelection {
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Whether temporary links completing the subgraph are switched on.
    pub fn learn_mode(&self) -> bool {
        self.learn_mode
    }

    pub fn with_learn_mode(mut self, on: bool) -> Self {
        self.learn_mode = on;
        self
    }

    pub fn contains(&self, node: usize) -> bool {
        self.members.contains(&node)
    }
}

/// Selects the learning subgraph of size d = d_max + 1: the lowest-labelled
/// maximum-degree node plus its neighbors in ascending label order.
pub fn select_subgraph(g: &CommGraph) -> SubgraphSelection {
    let dmax = g.max_degree();
    let hub = (0..g.node_count())
        .find(|&i| g.degree(i) == dmax)
        .expect("graph has at least one node");
    let mut members = vec![hub];
    members.extend(g.neighbors(hub).into_iter().take(dmax));
    SubgraphSelection {
        members,
        learn_mode: true,
    }
}

/// Network-level cost pair (Q̂, R̂) with
/// Q̂ = I_N ⊗ Q1 + L_G ⊗ Q2 and R̂ = I_N ⊗ R.
pub fn compound_cost<T: Scalar>(
    g: &CommGraph,
    q1: &DMatrix<T>,
    q2: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    validate_costs(q1, q2, r)?;
    let n_states = q1.nrows();
    let eye = DMatrix::<T>::identity(g.node_count(), g.node_count());
    let q_hat = linalg::kron(&eye, q1) + linalg::kron(&g.laplacian::<T>(), q2);
    debug_assert!(linalg::is_posdef(&linalg::sym_part(&q_hat)));
    let _ = n_states;
    let r_hat = linalg::kron(&eye, r);
    Ok((q_hat, r_hat))
}

/// Learning-subgraph cost pair (Q̃_c, R̃_c) as patterned matrices:
/// Q̃_c = I_d ⊗ Q̃ − 𝟙𝟙ᵀ ⊗ Q2 with Q̃ = Q1 + d·Q2, R̃_c = I_d ⊗ R.
/// Identical to [`compound_cost`] on the complete graph K_d.
pub fn subgraph_cost<T: Scalar>(
    d: usize,
    q1: &DMatrix<T>,
    q2: &DMatrix<T>,
    r: &DMatrix<T>,
) -> Result<(PatternedMatrix<T>, PatternedMatrix<T>)> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("subgraph_cost needs d >= 2, got {d}")));
    }
    validate_costs(q1, q2, r)?;
    // diagonal block Q̃ − Q2 = Q1 + (d−1)Q2, off block −Q2
    let q_tilde = q1 + q2 * fp::<T>(d as f64);
    let q_c = PatternedMatrix::new(d, &q_tilde - q2, -q2.clone())?;
    let r_c = PatternedMatrix::new(d, r.clone(), DMatrix::zeros(r.nrows(), r.ncols()))?;
    Ok((q_c, r_c))
}

/// Single-agent running-cost matrix Q̃ = Q1 + d·Q2.
pub fn q_tilde<T: Scalar>(d: usize, q1: &DMatrix<T>, q2: &DMatrix<T>) -> DMatrix<T> {
    q1 + q2 * fp::<T>(d as f64)
}

fn validate_costs<T: Scalar>(q1: &DMatrix<T>, q2: &DMatrix<T>, r: &DMatrix<T>) -> Result<()> {
    if q1.shape() != q2.shape() || !q1.is_square() || !r.is_square() {
        return Err(Error::DimensionMismatch(
            "Q1, Q2 must be square and equal-sized; R must be square".into(),
        ));
    }
    if !linalg::is_posdef(&linalg::sym_part(q1)) {
        return Err(Error::NotPositiveDefinite("Q1".into()));
    }
    if !linalg::is_posdef(&linalg::sym_part(r)) {
        return Err(Error::NotPositiveDefinite("R".into()));
    }
    // Q2 only needs to be PSD
    let eig_min = linalg::sym_part(q2)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, v| if v < a { v } else { a });
    if eig_min < -fp::<T>(1e-10) * (T::one() + q2.norm()) {
        return Err(Error::NotPositiveDefinite("Q2 (must be PSD)".into()));
    }
    Ok(())
}

/// Membership test for the sparsity subspace induced by `g`: every `m×n`
/// block (i, j) with j outside the closed neighborhood of i must have
/// max-abs entry ≤ `tol`.
pub fn sparsity_member<T: Scalar>(
    k: &DMatrix<T>,
    g: &CommGraph,
    m: usize,
    n: usize,
    tol: T,
) -> Result<bool> {
    let big_n = g.node_count();
    if k.nrows() != m * big_n || k.ncols() != n * big_n {
        return Err(Error::DimensionMismatch(format!(
            "expected {}x{} gain, got {}x{}",
            m * big_n,
            n * big_n,
            k.nrows(),
            k.ncols()
        )));
    }
    for i in 0..big_n {
        for j in 0..big_n {
            if i == j || g.has_edge(i, j) {
                continue;
            }
            let block = k.view((i * m, j * n), (m, n));
            if block.amax() > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
