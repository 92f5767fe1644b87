//! Directed communication graphs and their Laplacian spectral data.
//!
//! An edge `(from, to)` means that node `to` receives information from node
//! `from`. For a strongly connected digraph the raw Laplacian `Lbar = D - A`
//! has a simple zero eigenvalue whose left null vector `omega` can be chosen
//! with all entries positive. Scaling rows by `W = diag(omega)` yields the
//! balanced Laplacian `L = W * Lbar`, which has zero row sums *and* zero
//! column sums, so its symmetric part `Lhat = (L + L^T) / 2` is positive
//! semidefinite with a simple zero eigenvalue. The smallest nonzero
//! eigenvalue `lambda2` of `Lhat` quantifies how fast the consensus coupling
//! contracts disagreement and enters every gain bound in [`crate::analysis`].

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Errors raised while constructing graphs or their spectral bundles.
#[derive(Debug, Error)]
pub enum GraphError {
    /// Graphs with fewer than two nodes have no communication structure.
    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    /// An edge referenced a node index outside `0..node_count`.
    #[error("edge ({from}, {to}) references a node outside 0..{node_count}")]
    NodeOutOfRange {
        from: usize,
        to: usize,
        node_count: usize,
    },
    /// Self-loops carry no information and are rejected.
    #[error("self-loop ({0}, {0}) is not allowed")]
    SelfLoop(usize),
    /// The same directed edge was listed twice.
    #[error("duplicate edge ({from}, {to})")]
    DuplicateEdge { from: usize, to: usize },
    /// Edge weights must be strictly positive.
    #[error("edge ({from}, {to}) has non-positive weight {weight}")]
    NonPositiveWeight { from: usize, to: usize, weight: f64 },
    /// A positive balancing vector only exists for strongly connected graphs.
    #[error("graph is not strongly connected; every node must reach every other node")]
    NotStronglyConnected,
    /// The computed balancing vector had a non-positive or vanishing entry.
    #[error("balancing vector entry {index} = {value:.3e} is numerically degenerate")]
    DegenerateOmega { index: usize, value: f64 },
    /// No eigenvalue of the symmetrized Laplacian was close enough to zero.
    #[error("eigenvalue nearest zero has magnitude {0:.3e}, expected below 1e-9")]
    MissingZeroEigenvalue(f64),
    /// The two independent lambda2 computations disagreed.
    #[error("lambda2 cross-check failed: full eigendecomposition gives {full}, deflation gives {deflated}")]
    Lambda2Mismatch { full: f64, deflated: f64 },
    /// A surviving edge was requested that the base graph does not contain.
    #[error("edge ({from}, {to}) is not part of the base graph")]
    UnknownEdge { from: usize, to: usize },
}

/// Directed weighted communication graph with 0-based node indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Digraph {
    node_count: usize,
    edges: BTreeMap<(usize, usize), f64>,
}

impl Digraph {
    /// Number of nodes.
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Iterates edges as `(from, to, weight)` in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.edges.iter().map(|(&(f, t), &w)| (f, t, w))
    }

    /// Edge set without weights.
    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.keys().copied().collect()
    }

    /// Number of directed edges.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Whether the directed edge `(from, to)` exists.
    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.edges.contains_key(&(from, to))
    }

    /// Weight of edge `(from, to)` if present.
    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        self.edges.get(&(from, to)).copied()
    }

    /// Adjacency matrix with `A[(to, from)] = weight`: row index is the
    /// receiving node.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.node_count, self.node_count);
        for (&(from, to), &w) in &self.edges {
            a[(to, from)] = w;
        }
        a
    }
}

/// Builds a digraph from `(from, to, weight)` triples, rejecting self-loops,
/// duplicates, non-positive weights, and out-of-range node indices.
pub fn build_digraph(
    node_count: usize,
    weighted_edges: &[(usize, usize, f64)],
) -> Result<Digraph, GraphError> {
    if node_count < 2 {
        return Err(GraphError::TooFewNodes(node_count));
    }
    let mut edges = BTreeMap::new();
    for &(from, to, weight) in weighted_edges {
        if from >= node_count || to >= node_count {
            return Err(GraphError::NodeOutOfRange {
                from,
                to,
                node_count,
            });
        }
        if from == to {
            return Err(GraphError::SelfLoop(from));
        }
        if !weight.is_finite() || weight <= 0.0 {
            return Err(GraphError::NonPositiveWeight { from, to, weight });
        }
        if edges.insert((from, to), weight).is_some() {
            return Err(GraphError::DuplicateEdge { from, to });
        }
    }
    Ok(Digraph { node_count, edges })
}

/// Whether every ordered node pair is connected by a directed path.
///
/// A digraph is strongly connected iff every node is reachable from node 0
/// along forward edges and node 0 is reachable from every node, i.e. every
/// node is forward-reachable in the reversed graph as well.
pub fn is_strongly_connected(g: &Digraph) -> bool {
    let n = g.node_count;
    let mut fwd = vec![Vec::new(); n];
    let mut rev = vec![Vec::new(); n];
    for (from, to, _) in g.edges() {
        fwd[from].push(to);
        rev[to].push(from);
    }
    reaches_all(&fwd, n) && reaches_all(&rev, n)
}

fn reaches_all(adj: &[Vec<usize>], n: usize) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

/// Laplacian data of a strongly connected digraph.
#[derive(Debug, Clone)]
pub struct LaplacianBundle {
    /// Raw Laplacian `Lbar = D - A` where `D` holds the in-weight sums.
    pub raw: DMatrix<f64>,
    /// Positive left null vector of `raw`, normalized to sum 1.
    pub omega: DVector<f64>,
    /// `W = diag(omega)`.
    pub weighting: DMatrix<f64>,
    /// Balanced Laplacian `L = W * raw` (zero row and column sums).
    pub balanced: DMatrix<f64>,
    /// Symmetric part `(L + L^T) / 2`.
    pub symmetrized: DMatrix<f64>,
    /// Smallest nonzero eigenvalue of `symmetrized`.
    pub lambda2: f64,
}

/// Assembles the Laplacian bundle for a strongly connected digraph.
///
/// `omega` is extracted as the null direction of `raw^T` (via SVD), sign-fixed
/// positive, and normalized so its entries sum to 1. `lambda2` is computed
/// twice, by a full eigendecomposition with the near-zero eigenvalue
/// discarded and by deflating the all-ones direction; the two must agree to
/// 1e-8 or construction fails.
pub fn laplacian_bundle(g: &Digraph) -> Result<LaplacianBundle, GraphError> {
    if !is_strongly_connected(g) {
        return Err(GraphError::NotStronglyConnected);
    }
    let raw = laplacian_from_adjacency(&g.adjacency());

    let svd = raw.transpose().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("SVD computed with V^T");
    let mut min_idx = 0;
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s < svd.singular_values[min_idx] {
            min_idx = i;
        }
    }
    let mut omega = v_t.row(min_idx).transpose();
    if omega.sum() < 0.0 {
        omega.neg_mut();
    }
    let max_entry = omega.amax();
    for (i, w) in omega.iter().enumerate() {
        if *w <= 1e-12 * max_entry {
            return Err(GraphError::DegenerateOmega {
                index: i,
                value: *w,
            });
        }
    }
    omega /= omega.sum();

    let weighting = DMatrix::from_diagonal(&omega);
    let mut balanced = &weighting * &raw;
    rebuild_diagonal(&mut balanced);
    let symmetrized = (&balanced + balanced.transpose()) * 0.5;

    let lambda2 = smallest_nonzero_eigenvalue(&symmetrized)?;
    let deflated = deflated_smallest_eigenvalue(&symmetrized);
    if (lambda2 - deflated).abs() > 1e-8 * lambda2.abs().max(1.0) {
        return Err(GraphError::Lambda2Mismatch {
            full: lambda2,
            deflated,
        });
    }

    Ok(LaplacianBundle {
        raw,
        omega,
        weighting,
        balanced,
        symmetrized,
        lambda2,
    })
}

/// Laplacian of the unit-weight graph on a subset of the base edges.
///
/// The attack branch of the dynamics couples players through whichever edges
/// survive, each with weight 1 regardless of the base weights. Rows sum to
/// zero; the zero eigenvalue need not be simple once edges are missing.
pub fn effective_laplacian(
    g: &Digraph,
    surviving_edges: &BTreeSet<(usize, usize)>,
) -> Result<DMatrix<f64>, GraphError> {
    let n = g.node_count;
    let mut a = DMatrix::zeros(n, n);
    for &(from, to) in surviving_edges {
        if !g.has_edge(from, to) {
            return Err(GraphError::UnknownEdge { from, to });
        }
        a[(to, from)] = 1.0;
    }
    Ok(laplacian_from_adjacency(&a))
}

/// `D - A` with the diagonal built as the exact floating-point row sums of
/// `A`, so `L * 1 = 0` holds without rounding residue.
fn laplacian_from_adjacency(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut l = -a.clone();
    for i in 0..n {
        let mut d = 0.0;
        for j in 0..n {
            d += a[(i, j)];
        }
        l[(i, i)] = d;
    }
    l
}

/// Overwrites each diagonal entry with minus the exact sum of the rest of
/// its row, restoring bitwise-zero row sums after a row scaling.
fn rebuild_diagonal(l: &mut DMatrix<f64>) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            if j != i {
                s += l[(i, j)];
            }
        }
        l[(i, i)] = -s;
    }
}

/// Smallest nonzero eigenvalue of a symmetric PSD matrix with a zero
/// eigenvalue: discard the eigenvalue nearest zero (which must be below 1e-9
/// in magnitude) and take the minimum of the rest.
fn smallest_nonzero_eigenvalue(sym: &DMatrix<f64>) -> Result<f64, GraphError> {
    let eig = sym.clone().symmetric_eigen();
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let mut zero_idx = 0;
    for (i, v) in vals.iter().enumerate() {
        if v.abs() < vals[zero_idx].abs() {
            zero_idx = i;
        }
    }
    if vals[zero_idx].abs() >= 1e-9 {
        return Err(GraphError::MissingZeroEigenvalue(vals[zero_idx].abs()));
    }
    let rest = vals
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != zero_idx)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    Ok(rest)
}

/// Smallest eigenvalue of the symmetrized Laplacian restricted to the
/// orthogonal complement of the all-ones direction, using an orthonormal
/// Helmert basis of that complement.
fn deflated_smallest_eigenvalue(sym: &DMatrix<f64>) -> f64 {
    let n = sym.nrows();
    let mut q = DMatrix::zeros(n, n - 1);
    for k in 1..n {
        let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            q[(i, k - 1)] = scale;
        }
        q[(k, k - 1)] = -(k as f64) * scale;
    }
    let reduced = q.transpose() * sym * &q;
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    reduced
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cycle() -> Digraph {
        build_digraph(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap()
    }

    /// Directed 5-cycle 0->1->2->3->4->0 with unit weights.
    fn five_cycle() -> Digraph {
        build_digraph(
            5,
            &[
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (3, 4, 1.0),
                (4, 0, 1.0),
            ],
        )
        .unwrap()
    }

    /// Five-node benchmark graph: the 5-cycle plus the extra edge 1->0,
    /// whose balancing vector is (1, 2, 1, 1, 1)/6.
    fn benchmark_graph() -> Digraph {
        build_digraph(
            5,
            &[
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (3, 4, 1.0),
                (4, 0, 1.0),
                (1, 0, 1.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn builds_two_cycle() {
        let g = two_cycle();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 2);
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
    }

    #[test]
    fn rejects_self_loop() {
        let err = build_digraph(2, &[(0, 0, 1.0)]).unwrap_err();
        assert!(matches!(err, GraphError::SelfLoop(0)));
    }

    #[test]
    fn rejects_duplicate_edge() {
        let err = build_digraph(2, &[(0, 1, 1.0), (0, 1, 2.0)]).unwrap_err();
        assert!(matches!(err, GraphError::DuplicateEdge { from: 0, to: 1 }));
    }

    #[test]
    fn rejects_non_positive_weight() {
        let err = build_digraph(2, &[(0, 1, 0.0)]).unwrap_err();
        assert!(matches!(err, GraphError::NonPositiveWeight { .. }));
    }

    #[test]
    fn rejects_out_of_range_node() {
        let err = build_digraph(2, &[(0, 2, 1.0)]).unwrap_err();
        assert!(matches!(err, GraphError::NodeOutOfRange { .. }));
    }

    #[test]
    fn rejects_single_node_graph() {
        assert!(matches!(
            build_digraph(1, &[]),
            Err(GraphError::TooFewNodes(1))
        ));
    }

    #[test]
    fn two_cycle_is_strongly_connected() {
        assert!(is_strongly_connected(&two_cycle()));
    }

    #[test]
    fn one_way_pair_is_not_strongly_connected() {
        let g = build_digraph(2, &[(0, 1, 1.0)]).unwrap();
        assert!(!is_strongly_connected(&g));
    }

    #[test]
    fn five_cycle_is_strongly_connected() {
        assert!(is_strongly_connected(&five_cycle()));
    }

    #[test]
    fn bundle_of_two_cycle() {
        let b = laplacian_bundle(&two_cycle()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        assert_eq!(b.raw, expected);
        assert!((b.omega[0] - 0.5).abs() < 1e-14);
        assert!((b.omega[1] - 0.5).abs() < 1e-14);
        assert!((b.lambda2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_balanced_graph_gets_uniform_omega() {
        let b = laplacian_bundle(&five_cycle()).unwrap();
        for w in b.omega.iter() {
            assert!((w - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn benchmark_graph_omega_is_one_sixth_pattern() {
        let b = laplacian_bundle(&benchmark_graph()).unwrap();
        let expected = [1.0 / 6.0, 2.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0];
        for (w, e) in b.omega.iter().zip(expected) {
            assert!((w - e).abs() < 1e-12, "omega {w} vs {e}");
        }
        // Regression pin computed with an independent eigensolver.
        assert!((b.lambda2 - 0.115_163_834_270_842).abs() < 1e-9);
    }

    #[test]
    fn bundle_rejects_disconnected_graph() {
        let g = build_digraph(3, &[(0, 1, 1.0), (1, 0, 1.0), (0, 2, 1.0)]).unwrap();
        assert!(matches!(
            laplacian_bundle(&g),
            Err(GraphError::NotStronglyConnected)
        ));
    }

    #[test]
    fn bundle_invariants_hold_on_benchmark_graph() {
        let b = laplacian_bundle(&benchmark_graph()).unwrap();
        let n = 5;
        let left = b.omega.transpose() * &b.raw;
        assert!(left.amax() < 1e-10, "omega^T Lbar = {left}");
        for i in 0..n {
            assert!(b.raw.row(i).sum().abs() < 1e-10 * n as f64);
            assert!(b.balanced.row(i).sum().abs() < 1e-10 * n as f64);
        }
        assert!((b.omega.sum() - 1.0).abs() < 1e-12);
        assert!(b.omega.min() > 0.0);
        assert!(b.lambda2 > 0.0);
    }

    #[test]
    fn effective_laplacian_with_all_edges_matches_raw() {
        let g = benchmark_graph();
        let b = laplacian_bundle(&g).unwrap();
        let l = effective_laplacian(&g, &g.edge_set()).unwrap();
        assert_eq!(l, b.raw);
    }

    #[test]
    fn effective_laplacian_with_no_edges_is_zero() {
        let g = benchmark_graph();
        let l = effective_laplacian(&g, &BTreeSet::new()).unwrap();
        assert_eq!(l, DMatrix::zeros(5, 5));
    }

    #[test]
    fn effective_laplacian_rejects_unknown_edge() {
        let g = five_cycle();
        let mut surviving = BTreeSet::new();
        surviving.insert((0, 2));
        assert!(matches!(
            effective_laplacian(&g, &surviving),
            Err(GraphError::UnknownEdge { from: 0, to: 2 })
        ));
    }

    #[test]
    fn cycle_without_closing_edge_gives_path_laplacian() {
        let g = five_cycle();
        let mut surviving = g.edge_set();
        surviving.remove(&(4, 0));
        let l = effective_laplacian(&g, &surviving).unwrap();
        // Directly expanded expectation: node 0 receives nothing, nodes 1..4
        // each receive exactly their predecessor.
        let mut expected = DMatrix::zeros(5, 5);
        for i in 1..5 {
            expected[(i, i)] = 1.0;
            expected[(i, i - 1)] = -1.0;
        }
        assert_eq!(l, expected);
        // The matrix is triangular, so its eigenvalues are the diagonal
        // {0, 1, 1, 1, 1}; rank must be 4.
        assert_eq!(l.rank(1e-9), 4);
    }

    #[test]
    fn directed_edge_contribution_matches_expansion() {
        // Adding a single directed edge (from, to) changes the quadratic
        // form x^T L x by x_to * (x_to - x_from), which can be negative;
        // only mutual edge pairs contribute the sign-definite
        // (x_to - x_from)^2.
        let g = two_cycle();
        let x = DVector::from_row_slice(&[1.0, 3.0]);
        let empty = effective_laplacian(&g, &BTreeSet::new()).unwrap();
        let mut one = BTreeSet::new();
        one.insert((1, 0));
        let with_one = effective_laplacian(&g, &one).unwrap();
        let q_empty = (x.transpose() * &empty * &x)[(0, 0)];
        let q_one = (x.transpose() * &with_one * &x)[(0, 0)];
        let (xf, xt) = (x[1], x[0]);
        assert!((q_one - q_empty - xt * (xt - xf)).abs() < 1e-12);
        assert!(q_one < q_empty, "single directed edge decreased the form");

        let both = g.edge_set();
        let with_both = effective_laplacian(&g, &both).unwrap();
        let q_both = (x.transpose() * &with_both * &x)[(0, 0)];
        assert!((q_both - q_empty - (xt - xf) * (xt - xf)).abs() < 1e-12);
        assert!(q_both >= q_empty);
    }
}
