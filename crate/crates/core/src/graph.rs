//! Graph and hypergraph structures and the operators derived from them:
//! random-walk transitions, symmetric propagation operators and normalized
//! Laplacians.

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sparse::CsrMatrix;

/// Undirected weighted graph with node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    adjacency: CsrMatrix<T>,
    features: Matrix<T>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(adjacency: CsrMatrix<T>, features: Matrix<T>) -> Result<Self> {
        let n = adjacency.n_rows();
        if adjacency.n_cols() != n {
            return Err(Error::Structure(format!(
                "adjacency must be square, got {}x{}",
                n,
                adjacency.n_cols()
            )));
        }
        if features.rows() != n {
            return Err(Error::Shape(format!(
                "{} feature rows for {n} nodes",
                features.rows()
            )));
        }
        if !adjacency.is_finite() || !features.is_finite() {
            return Err(Error::NonFinite("graph input".into()));
        }
        if let Some((i, j, v)) = adjacency.iter().find(|&(_, _, v)| v < T::zero()) {
            return Err(Error::Structure(format!(
                "negative weight {v} at ({i}, {j})"
            )));
        }
        if let Some(i) = (0..n).find(|&i| adjacency.get(i, i) != T::zero()) {
            return Err(Error::Structure(format!("nonzero diagonal at node {i}")));
        }
        if !adjacency.is_symmetric(T::structural_tol()) {
            return Err(Error::Structure("adjacency is not symmetric".into()));
        }
        Ok(Self {
            adjacency,
            features,
        })
    }

    /// Builds from undirected weighted edges; each edge is inserted in both
    /// directions and repeated edges accumulate.
    pub fn from_edges(n: usize, edges: &[(usize, usize, T)], features: Matrix<T>) -> Result<Self> {
        let mut trip = Vec::with_capacity(2 * edges.len());
        for &(i, j, w) in edges {
            if i == j {
                return Err(Error::Structure(format!("self-loop at node {i}")));
            }
            trip.push((i, j, w));
            trip.push((j, i, w));
        }
        Self::new(CsrMatrix::from_triplets(n, n, &trip)?, features)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.adjacency.n_rows()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn adjacency(&self) -> &CsrMatrix<T> {
        &self.adjacency
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    /// Stored undirected edges `(i, j, w)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, T)> {
        self.adjacency.iter().filter(|&(i, j, _)| i < j).collect()
    }

    pub fn with_features(&self, features: Matrix<T>) -> Result<Self> {
        Self::new(self.adjacency.clone(), features)
    }

    pub fn degrees(&self) -> DegreeInfo<T> {
        DegreeInfo {
            node_degrees: self.adjacency.row_sums(),
            hyperedge_degrees: Vec::new(),
        }
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
    pub fn propagation_operator(&self) -> CsrMatrix<T> {
        let n = self.node_count();
        let with_loops = self
            .adjacency
            .add_scaled(&CsrMatrix::identity(n), T::one())
            .expect("square");
        let inv_sqrt: Vec<T> = with_loops
            .row_sums()
            .into_iter()
            .map(|d| T::one() / d.sqrt())
            .collect();
        with_loops
            .scale_rows_cols(&inv_sqrt, &inv_sqrt)
            .expect("conformable")
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.node_count())?;
        Ok(Self {
            adjacency: self.adjacency.permute_symmetric(perm),
            features: permute_rows(&self.features, perm),
        })
    }
}

/// Hypergraph with binary incidence, positive hyperedge weights and node features.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph<T> {
    incidence: CsrMatrix<T>,
    hyperedge_weights: Vec<T>,
    features: Matrix<T>,
    members: Vec<Vec<usize>>,
}

impl<T: Scalar> Hypergraph<T> {
    pub fn new(
        incidence: CsrMatrix<T>,
        hyperedge_weights: Vec<T>,
        features: Matrix<T>,
    ) -> Result<Self> {
        let (n, m) = (incidence.n_rows(), incidence.n_cols());
        if features.rows() != n {
            return Err(Error::Shape(format!(
                "{} feature rows for {n} nodes",
                features.rows()
            )));
        }
        if hyperedge_weights.len() != m {
            return Err(Error::Shape(format!(
                "{} hyperedge weights for {m} hyperedges",
                hyperedge_weights.len()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("hypergraph features".into()));
        }
        if let Some(w) = hyperedge_weights
            .iter()
            .find(|&&w| !(w > T::zero() && w.is_finite()))
        {
            return Err(Error::Structure(format!(
                "hyperedge weight {w} must be positive"
            )));
        }
        if incidence.values().iter().any(|&v| v != T::one()) {
            return Err(Error::Structure("incidence values must be 1".into()));
        }
        let members: Vec<Vec<usize>> = {
            let t = incidence.transpose();
            (0..m).map(|e| t.row(e).0.to_vec()).collect()
        };
        if let Some(e) = members.iter().position(Vec::is_empty) {
            return Err(Error::Structure(format!("hyperedge {e} is empty")));
        }
        Ok(Self {
            incidence,
            hyperedge_weights,
            features,
            members,
        })
    }

    /// Builds from member lists. Repeated members inside one hyperedge are
    /// collapsed. `weights = None` means unit weights.
    pub fn from_hyperedges(
        n: usize,
        hyperedges: &[Vec<usize>],
        weights: Option<Vec<T>>,
        features: Matrix<T>,
    ) -> Result<Self> {
        let mut trip = Vec::new();
        for (m, e) in hyperedges.iter().enumerate() {
            let mut e = e.clone();
            e.sort_unstable();
            e.dedup();
            trip.extend(e.into_iter().map(|i| (i, m, T::one())));
        }
        let incidence = CsrMatrix::from_triplets(n, hyperedges.len(), &trip)?;
        let weights = weights.unwrap_or_else(|| vec![T::one(); hyperedges.len()]);
        Self::new(incidence, weights, features)
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.incidence.n_rows()
    }

    #[inline]
    pub fn hyperedge_count(&self) -> usize {
        self.incidence.n_cols()
    }

    #[inline]
    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn incidence(&self) -> &CsrMatrix<T> {
        &self.incidence
    }

    pub fn hyperedge_weights(&self) -> &[T] {
        &self.hyperedge_weights
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    /// Sorted node indices of hyperedge `m`.
    pub fn members(&self, m: usize) -> &[usize] {
        &self.members[m]
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.members
    }

    pub fn with_features(&self, features: Matrix<T>) -> Result<Self> {
        Self::new(
            self.incidence.clone(),
            self.hyperedge_weights.clone(),
            features,
        )
    }

    pub fn degrees(&self) -> DegreeInfo<T> {
        let mut node_degrees = vec![T::zero(); self.node_count()];
        for (i, m, v) in self.incidence.iter() {
            node_degrees[i] += v * self.hyperedge_weights[m];
        }
        DegreeInfo {
            node_degrees,
            hyperedge_degrees: self.incidence.col_sums(),
        }
    }

    /// Weighted clique expansion `I W Iᵀ` with the diagonal removed.
    pub fn clique_adjacency(&self) -> CsrMatrix<T> {
        let iw = self
            .incidence
            .scale_rows_cols(&vec![T::one(); self.node_count()], &self.hyperedge_weights)
            .expect("conformable");
        let full = iw.matmul(&self.incidence.transpose()).expect("conformable");
        full.map_values(|i, j, v| if i == j { T::zero() } else { v })
    }

    /// `I W D_e^{-1} Iᵀ`, the unnormalized node-to-node operator.
    fn node_operator(&self) -> CsrMatrix<T> {
        let de = self.incidence.col_sums();
        let right: Vec<T> = self
            .hyperedge_weights
            .iter()
            .zip(&de)
            .map(|(&w, &d)| w / d)
            .collect();
        let left = vec![T::one(); self.node_count()];
        self.incidence
            .scale_rows_cols(&left, &right)
            .and_then(|b| b.matmul(&self.incidence.transpose()))
            .expect("conformable")
    }

    /// `D_v^{-1/2} I W D_e^{-1} Iᵀ D_v^{-1/2}`; nodes in no hyperedge get a unit
    /// diagonal entry so they propagate their own features.
    pub fn propagation_operator(&self) -> CsrMatrix<T> {
        let dv = self.degrees().node_degrees;
        let inv_sqrt: Vec<T> = dv
            .iter()
            .map(|&d| {
                if d > T::zero() {
                    T::one() / d.sqrt()
                } else {
                    T::zero()
                }
            })
            .collect();
        let op = self
            .node_operator()
            .scale_rows_cols(&inv_sqrt, &inv_sqrt)
            .expect("conformable");
        with_unit_diagonal_for(&op, &dv)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.node_count())?;
        let cols: Vec<usize> = (0..self.hyperedge_count()).collect();
        Self::new(
            self.incidence.permute(perm, &cols),
            self.hyperedge_weights.clone(),
            permute_rows(&self.features, perm),
        )
    }
}

fn with_unit_diagonal_for<T: Scalar>(op: &CsrMatrix<T>, degrees: &[T]) -> CsrMatrix<T> {
    let fix: Vec<T> = degrees
        .iter()
        .map(|&d| if d > T::zero() { T::zero() } else { T::one() })
        .collect();
    if fix.iter().all(|&f| f == T::zero()) {
        return op.clone();
    }
    op.add_scaled(&CsrMatrix::diagonal(&fix), T::one())
        .expect("square")
}

/// Degree diagonals: `D` (graph, without self-loops) or `D_v` and `D_e` (hypergraph).
#[derive(Clone, Debug, PartialEq)]
pub struct DegreeInfo<T> {
    pub node_degrees: Vec<T>,
    pub hyperedge_degrees: Vec<T>,
}

/// Row-stochastic transition `D^{-1}(A + I)`.
pub fn graph_transition<T: Scalar>(graph: &Graph<T>) -> CsrMatrix<T> {
    let n = graph.node_count();
    let with_loops = graph
        .adjacency()
        .add_scaled(&CsrMatrix::identity(n), T::one())
        .expect("square");
    let inv: Vec<T> = with_loops
        .row_sums()
        .into_iter()
        .map(|d| T::one() / d)
        .collect();
    with_loops
        .scale_rows_cols(&inv, &vec![T::one(); n])
        .expect("conformable")
}

/// Row-stochastic transition `D_v^{-1} I W D_e^{-1} Iᵀ`. A node incident to no
/// hyperedge keeps its walker in place (identity row).
pub fn hypergraph_transition<T: Scalar>(hg: &Hypergraph<T>) -> CsrMatrix<T> {
    let dv = hg.degrees().node_degrees;
    let inv: Vec<T> = dv
        .iter()
        .map(|&d| {
            if d > T::zero() {
                T::one() / d
            } else {
                T::zero()
            }
        })
        .collect();
    let op = hg
        .node_operator()
        .scale_rows_cols(&inv, &vec![T::one(); hg.node_count()])
        .expect("conformable");
    with_unit_diagonal_for(&op, &dv)
}

/// `I - D^{-1/2}(A + I)D^{-1/2}`.
pub fn normalized_laplacian<T: Scalar>(graph: &Graph<T>) -> CsrMatrix<T> {
    laplacian_from_operator(&graph.propagation_operator())
}

/// Hypergraph counterpart `I - D_v^{-1/2} I W D_e^{-1} Iᵀ D_v^{-1/2}`.
pub fn hypergraph_laplacian<T: Scalar>(hg: &Hypergraph<T>) -> CsrMatrix<T> {
    laplacian_from_operator(&hg.propagation_operator())
}

fn laplacian_from_operator<T: Scalar>(op: &CsrMatrix<T>) -> CsrMatrix<T> {
    CsrMatrix::identity(op.n_rows())
        .add_scaled(op, -T::one())
        .expect("square")
}

/// Either kind of structure the pipelines operate on.
#[derive(Clone, Debug, PartialEq)]
pub enum Structure<T> {
    Graph(Graph<T>),
    Hypergraph(Hypergraph<T>),
}

impl<T: Scalar> Structure<T> {
    pub fn node_count(&self) -> usize {
        match self {
            Structure::Graph(g) => g.node_count(),
            Structure::Hypergraph(h) => h.node_count(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.features().cols()
    }

    pub fn features(&self) -> &Matrix<T> {
        match self {
            Structure::Graph(g) => g.features(),
            Structure::Hypergraph(h) => h.features(),
        }
    }

    pub fn is_hypergraph(&self) -> bool {
        matches!(self, Structure::Hypergraph(_))
    }

    pub fn transition(&self) -> CsrMatrix<T> {
        match self {
            Structure::Graph(g) => graph_transition(g),
            Structure::Hypergraph(h) => hypergraph_transition(h),
        }
    }

    pub fn laplacian(&self) -> CsrMatrix<T> {
        match self {
            Structure::Graph(g) => normalized_laplacian(g),
            Structure::Hypergraph(h) => hypergraph_laplacian(h),
        }
    }

    pub fn propagation_operator(&self) -> CsrMatrix<T> {
        match self {
            Structure::Graph(g) => g.propagation_operator(),
            Structure::Hypergraph(h) => h.propagation_operator(),
        }
    }

    /// Pairwise connectivity: the adjacency, or the clique expansion of a hypergraph.
    pub fn pairwise_adjacency(&self) -> CsrMatrix<T> {
        match self {
            Structure::Graph(g) => g.adjacency().clone(),
            Structure::Hypergraph(h) => h.clique_adjacency(),
        }
    }

    pub fn with_features(&self, features: Matrix<T>) -> Result<Self> {
        Ok(match self {
            Structure::Graph(g) => Structure::Graph(g.with_features(features)?),
            Structure::Hypergraph(h) => Structure::Hypergraph(h.with_features(features)?),
        })
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        Ok(match self {
            Structure::Graph(g) => Structure::Graph(g.permute(perm)?),
            Structure::Hypergraph(h) => Structure::Hypergraph(h.permute(perm)?),
        })
    }
}

impl<T> From<Graph<T>> for Structure<T> {
    fn from(g: Graph<T>) -> Self {
        Structure::Graph(g)
    }
}

impl<T> From<Hypergraph<T>> for Structure<T> {
    fn from(h: Hypergraph<T>) -> Self {
        Structure::Hypergraph(h)
    }
}

/// `perm[old] = new`; rejects anything that is not a bijection on `0..n`.
pub fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    if perm.len() != n {
        return Err(Error::Structure(format!(
            "permutation of length {} for {n} nodes",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Structure("permutation is not a bijection".into()));
        }
        seen[p] = true;
    }
    Ok(())
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (old, &new) in perm.iter().enumerate() {
        inv[new] = old;
    }
    inv
}

/// Row `i` of the input becomes row `perm[i]` of the output.
pub fn permute_rows<T: Scalar>(m: &Matrix<T>, perm: &[usize]) -> Matrix<T> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for (i, &p) in perm.iter().enumerate() {
        out.row_mut(p).copy_from_slice(m.row(i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Graph<f64> {
        Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], Matrix::<f64>::zeros(3, 1)).unwrap()
    }

    #[test]
    fn isolated_nodes_give_identity_transition() {
        let g = Graph::new(CsrMatrix::<f64>::zeros(2, 2), Matrix::<f64>::zeros(2, 1)).unwrap();
        assert_eq!(graph_transition(&g).to_dense(), Matrix::identity(2));
    }

    #[test]
    fn path_transition() {
        let p = graph_transition(&path3()).to_dense();
        let expected = [
            [0.5, 0.5, 0.0],
            [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            [0.0, 0.5, 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!((p[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn laplacian_small_cases() {
        let g = Graph::new(CsrMatrix::<f64>::zeros(3, 3), Matrix::<f64>::zeros(3, 1)).unwrap();
        assert_eq!(normalized_laplacian(&g).nnz(), 0);
        let e = Graph::from_edges(2, &[(0, 1, 1.0)], Matrix::<f64>::zeros(2, 1)).unwrap();
        let l = normalized_laplacian(&e).to_dense();
        let expected = Matrix::from_rows(&[vec![0.5, -0.5], vec![-0.5, 0.5]]).unwrap();
        assert!(l.max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn hypergraph_transition_small_cases() {
        let h = Hypergraph::from_hyperedges(2, &[vec![0, 1]], None, Matrix::<f64>::zeros(2, 1))
            .unwrap();
        let p = hypergraph_transition(&h).to_dense();
        assert!(p.max_abs_diff(&Matrix::<f64>::filled(2, 2, 0.5)) < 1e-15);

        let h = Hypergraph::from_hyperedges(3, &[vec![0, 1, 2]], None, Matrix::<f64>::zeros(3, 1))
            .unwrap();
        let p = hypergraph_transition(&h).to_dense();
        assert!(p.max_abs_diff(&Matrix::<f64>::filled(3, 3, 1.0 / 3.0)) < 1e-15);

        let h = Hypergraph::from_hyperedges(3, &[vec![0, 1]], None, Matrix::<f64>::zeros(3, 1))
            .unwrap();
        let p = hypergraph_transition(&h).to_dense();
        assert_eq!(p.row(2), &[0.0, 0.0, 1.0]);
        assert_eq!(p.row(0), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn invariants_enforced() {
        let asym = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0)]).unwrap();
        assert!(Graph::new(asym, Matrix::<f64>::zeros(2, 1)).is_err());
        let diag = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap();
        assert!(Graph::new(diag, Matrix::<f64>::zeros(2, 1)).is_err());
        assert!(Graph::new(CsrMatrix::<f64>::zeros(2, 2), Matrix::<f64>::zeros(3, 1)).is_err());

        let empty_edge = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        assert!(Hypergraph::new(empty_edge, vec![1.0, 1.0], Matrix::<f64>::zeros(2, 1)).is_err());
        let non_binary = CsrMatrix::from_triplets(2, 1, &[(0, 0, 2.0)]).unwrap();
        assert!(Hypergraph::new(non_binary, vec![1.0], Matrix::<f64>::zeros(2, 1)).is_err());
        let ok = CsrMatrix::from_triplets(2, 1, &[(0, 0, 1.0)]).unwrap();
        assert!(Hypergraph::new(ok, vec![0.0], Matrix::<f64>::zeros(2, 1)).is_err());
    }

    #[test]
    fn permute_path_swap() {
        let g = path3();
        assert_eq!(g.permute(&[0, 1, 2]).unwrap(), g);
        let edge_set = |g: &Graph<f64>| {
            g.edges()
                .iter()
                .map(|&(i, j, _)| (i, j))
                .collect::<Vec<_>>()
        };
        let swapped = g.permute(&[1, 0, 2]).unwrap();
        assert_eq!(edge_set(&swapped), vec![(0, 1), (0, 2)]);
        assert_eq!(
            edge_set(&g.permute(&[0, 2, 1]).unwrap()),
            vec![(0, 2), (1, 2)]
        );
        let back = swapped.permute(&inverse_permutation(&[1, 0, 2])).unwrap();
        assert_eq!(back, g);
        assert!(g.permute(&[0, 0, 1]).is_err());
        assert!(g.permute(&[0, 1]).is_err());
    }

    #[test]
    fn two_uniform_hypergraph_matches_graph_pattern() {
        let h = Hypergraph::from_hyperedges(
            4,
            &[vec![0, 1], vec![1, 2], vec![2, 3]],
            None,
            Matrix::<f64>::zeros(4, 1),
        )
        .unwrap();
        let p = hypergraph_transition(&h);
        for (i, s) in p.row_sums().iter().enumerate() {
            assert!((s - 1.0).abs() < 1e-12, "row {i}");
        }
        let adj = h.clique_adjacency();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(p.get(i, j) != 0.0, adj.get(i, j) != 0.0);
                }
            }
        }
    }
}
