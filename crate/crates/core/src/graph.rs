//! Communication topologies and the graph quantities the protocols and
//! their certificates depend on.
//!
//! Convention: `adjacency[i][j] = a_ij > 0` means follower `i` receives
//! information from follower `j`. `pinning[i] = d_i = a_i0 > 0` means
//! follower `i` receives the leader's output. The leader has index 0 in
//! the augmented graph and never listens to anybody.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, DenseMatrix};

/// `|λ| < ZERO_EIG_REL_TOL · max(‖L‖, 1)` counts as a zero eigenvalue.
pub const ZERO_EIG_REL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("topology needs at least one follower")]
    Empty,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weight ({i},{j}) = {value} is negative or non-finite")]
    BadWeight { i: usize, j: usize, value: f64 },
    #[error("pinning gain d_{i} = {value} is negative or non-finite")]
    BadPinning { i: usize, value: f64 },
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("undirected topology is asymmetric at ({i},{j})")]
    Asymmetric { i: usize, j: usize },
    #[error("graph is not strongly connected")]
    NotStronglyConnected,
    #[error("matrix is not a nonsingular M-matrix: {0}")]
    NotMMatrix(String),
    #[error("no positive diagonal certificate found (best λ_min {0:e})")]
    CertificateSearchFailed(f64),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Directedness {
    Undirected,
    Directed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    adjacency: DenseMatrix,
    pinning: Vec<f64>,
    directedness: Directedness,
}

impl Topology {
    /// Validates and builds a topology from row-major adjacency rows.
    pub fn new(
        adjacency: &[Vec<f64>],
        pinning: &[f64],
        directedness: Directedness,
    ) -> Result<Self, GraphError> {
        let n = adjacency.len();
        if n == 0 {
            return Err(GraphError::Empty);
        }
        if let Some(row) = adjacency.iter().find(|r| r.len() != n) {
            return Err(GraphError::DimensionMismatch(format!(
                "adjacency row of length {} in a {n}-node graph",
                row.len()
            )));
        }
        if pinning.len() != n {
            return Err(GraphError::DimensionMismatch(format!(
                "{} pinning gains for {n} followers",
                pinning.len()
            )));
        }
        for (i, row) in adjacency.iter().enumerate() {
            for (j, &value) in row.iter().enumerate() {
                if !value.is_finite() || value < 0.0 {
                    return Err(GraphError::BadWeight { i, j, value });
                }
                if i == j && value != 0.0 {
                    return Err(GraphError::SelfLoop(i));
                }
                if directedness == Directedness::Undirected && value != adjacency[j][i] {
                    return Err(GraphError::Asymmetric { i, j });
                }
            }
        }
        for (i, &value) in pinning.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(GraphError::BadPinning { i, value });
            }
        }
        Ok(Self {
            adjacency: DenseMatrix::from_fn(n, n, |i, j| adjacency[i][j]),
            pinning: pinning.to_vec(),
            directedness,
        })
    }

    pub fn n_followers(&self) -> usize {
        self.pinning.len()
    }

    pub fn directedness(&self) -> Directedness {
        self.directedness
    }

    /// `a_ij`, follower indices.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    /// `d_i = a_i0`.
    pub fn pin(&self, i: usize) -> f64 {
        self.pinning[i]
    }

    pub fn pinning(&self) -> &[f64] {
        &self.pinning
    }

    pub fn adjacency(&self) -> &DenseMatrix {
        &self.adjacency
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<f64>> {
        linalg::matrix_to_rows(&self.adjacency)
    }

    /// Followers `j` with `a_ij > 0`.
    pub fn in_neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_followers()).filter(move |&j| self.adjacency[(i, j)] > 0.0)
    }

    /// True when the follower-to-follower weights are symmetric.
    pub fn is_symmetric(&self) -> bool {
        let n = self.n_followers();
        (0..n).all(|i| (0..n).all(|j| self.adjacency[(i, j)] == self.adjacency[(j, i)]))
    }

    /// Follower Laplacian `L = D - A` (pinning ignored).
    pub fn laplacian(&self) -> DenseMatrix {
        let n = self.n_followers();
        let mut l = -self.adjacency.clone();
        for i in 0..n {
            // assembled from the off-diagonals so rows sum to zero exactly
            let s: f64 = (0..n).filter(|&j| j != i).map(|j| self.adjacency[(i, j)]).sum();
            l[(i, i)] = s;
        }
        l
    }

    /// Leaderless `(N+1)`-node topology with the leader as node 0.
    pub fn augmented(&self) -> Topology {
        let n = self.n_followers();
        let adjacency = DenseMatrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
            (0, _) => 0.0,
            (i, 0) => self.pinning[i - 1],
            (i, j) => self.adjacency[(i - 1, j - 1)],
        });
        Topology {
            adjacency,
            pinning: vec![0.0; n + 1],
            directedness: Directedness::Directed,
        }
    }

    fn reachable_from(&self, sources: &[usize], from_leader: bool) -> Vec<bool> {
        let n = self.n_followers();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &s in sources {
            if !seen[s] {
                seen[s] = true;
                queue.push_back(s);
            }
        }
        if from_leader {
            for i in 0..n {
                if self.pinning[i] > 0.0 && !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        while let Some(j) = queue.pop_front() {
            for i in 0..n {
                if self.adjacency[(i, j)] > 0.0 && !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
        seen
    }

    /// Every follower reachable from the leader along directed edges.
    pub fn has_spanning_tree_from_leader(&self) -> bool {
        self.reachable_from(&[], true).into_iter().all(|r| r)
    }

    /// Some follower reaches every other follower (pinning ignored).
    pub fn has_spanning_tree(&self) -> bool {
        (0..self.n_followers()).any(|root| self.reachable_from(&[root], false).into_iter().all(|r| r))
    }

    /// Every ordered pair of followers joined by a directed path.
    pub fn is_strongly_connected(&self) -> bool {
        (0..self.n_followers()).all(|root| self.reachable_from(&[root], false).into_iter().all(|r| r))
    }

    /// `(L₁, L₂)` from `L_aug = [0 0; L₂ L₁]`.
    pub fn partition_followers(&self) -> (DenseMatrix, DVector<f64>) {
        let mut l1 = self.laplacian();
        for i in 0..self.n_followers() {
            l1[(i, i)] += self.pinning[i];
        }
        let l2 = DVector::from_iterator(self.n_followers(), self.pinning.iter().map(|d| -d));
        (l1, l2)
    }

    /// Whether zero is an eigenvalue of multiplicity one of the follower
    /// Laplacian.
    pub fn simple_zero_eigenvalue(&self) -> Result<bool, GraphError> {
        Ok(zero_eigenvalue_multiplicity(&self.laplacian())? == 1)
    }

    /// Positive `r` with `rᵀL = 0`, normalised to `Σ r_i = 1`.
    pub fn left_null_vector(&self) -> Result<DVector<f64>, GraphError> {
        if !self.is_strongly_connected() {
            return Err(GraphError::NotStronglyConnected);
        }
        let n = self.n_followers();
        let mut sys = self.laplacian().transpose();
        // Rows of Lᵀ are dependent (L·1 = 0); swap one for the normalisation.
        for j in 0..n {
            sys[(n - 1, j)] = 1.0;
        }
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let r = sys
            .lu()
            .solve(&rhs)
            .ok_or(linalg::LinalgError::Singular("left null vector"))?;
        if r.iter().any(|v| *v <= 0.0) {
            return Err(GraphError::NotStronglyConnected);
        }
        Ok(r)
    }

    /// Second-smallest eigenvalue of `R L + Lᵀ R`.
    pub fn lambda2_symmetrized(&self, r: &DVector<f64>) -> Result<f64, GraphError> {
        let n = self.n_followers();
        if r.len() != n {
            return Err(GraphError::DimensionMismatch("r length".into()));
        }
        if n < 2 {
            return Err(GraphError::DimensionMismatch("λ₂ needs at least two nodes".into()));
        }
        let l = self.laplacian();
        let rm = DenseMatrix::from_diagonal(r);
        let lhat = &rm * &l + l.transpose() * &rm;
        Ok(linalg::sym_eigenvalues(&lhat)[1])
    }

    /// Bundles every spectral quantity that is defined for this topology.
    pub fn spectral_facts(&self) -> SpectralFacts {
        let laplacian = self.laplacian();
        let (l1, l2) = self.partition_followers();
        let (g_diag, lambda0) = match diag_g_for_m_matrix(&l1) {
            Ok((g, l0)) => (Some(g), Some(l0)),
            Err(_) => (None, None),
        };
        let r_left = self.left_null_vector().ok();
        let lambda2_hat = r_left
            .as_ref()
            .and_then(|r| self.lambda2_symmetrized(r).ok());
        SpectralFacts {
            laplacian,
            l1,
            l2,
            g_diag,
            lambda0,
            r_left,
            lambda2_hat,
        }
    }
}

/// Graph-derived matrices; optional entries exist only when the graph
/// satisfies the corresponding connectivity hypothesis.
#[derive(Debug, Clone)]
pub struct SpectralFacts {
    pub laplacian: DenseMatrix,
    pub l1: DenseMatrix,
    pub l2: DVector<f64>,
    pub g_diag: Option<DVector<f64>>,
    pub lambda0: Option<f64>,
    pub r_left: Option<DVector<f64>>,
    pub lambda2_hat: Option<f64>,
}

/// Number of eigenvalues of `l` counted as zero.
pub fn zero_eigenvalue_multiplicity(l: &DenseMatrix) -> Result<usize, GraphError> {
    let tol = ZERO_EIG_REL_TOL * l.norm().max(1.0);
    Ok(linalg::eigvals(l)?.iter().filter(|z| z.norm() < tol).count())
}

fn sym_certificate(l1: &DenseMatrix, g: &DVector<f64>) -> DenseMatrix {
    let gm = DenseMatrix::from_diagonal(g);
    &gm * l1 + l1.transpose() * &gm
}

/// Positive diagonal `G` with `G L₁ + L₁ᵀ G ≻ 0` for a nonsingular
/// M-matrix `L₁`; also returns `λ₀ = λ_min(G L₁ + L₁ᵀ G)`.
///
/// Starts from `g = L₁⁻ᵀ 1`, which always works for pinned Laplacians,
/// and falls back to projected gradient ascent on `λ_min` otherwise.
pub fn diag_g_for_m_matrix(l1: &DenseMatrix) -> Result<(DVector<f64>, f64), GraphError> {
    let n = l1.nrows();
    if n == 0 || l1.ncols() != n {
        return Err(GraphError::DimensionMismatch("L₁ must be square".into()));
    }
    for i in 0..n {
        for j in 0..n {
            if i != j && l1[(i, j)] > 0.0 {
                return Err(GraphError::NotMMatrix(format!("positive off-diagonal at ({i},{j})")));
            }
        }
    }
    let tol = ZERO_EIG_REL_TOL * l1.norm().max(1.0);
    let worst = linalg::spectral_abscissa(&(-l1))?;
    if -worst <= tol {
        return Err(GraphError::NotMMatrix(format!(
            "eigenvalue with real part {:e}",
            -worst
        )));
    }
    let ones = DVector::from_element(n, 1.0);
    let mut g = l1
        .transpose()
        .lu()
        .solve(&ones)
        .ok_or(linalg::LinalgError::Singular("L₁ᵀ g = 1"))?;
    let lmin = linalg::lambda_min_sym(&sym_certificate(l1, &g));
    if lmin > 0.0 && g.iter().all(|v| *v > 0.0) {
        return Ok((g, lmin));
    }

    // Projected gradient ascent on λ_min over {g > 0, Σg = n}.
    let floor = 1e-9;
    g.iter_mut().for_each(|v| *v = v.max(floor));
    let renorm = |g: &mut DVector<f64>| {
        let s = g.sum();
        *g *= n as f64 / s;
    };
    renorm(&mut g);
    let eval = |g: &DVector<f64>| {
        let s = crate::linalg::symmetrize(&sym_certificate(l1, g));
        let eig = s.symmetric_eigen();
        let (idx, lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, v)| (i, *v))
            .expect("non-empty");
        (lmin, eig.eigenvectors.column(idx).into_owned())
    };
    let (mut best, mut u) = eval(&g);
    let mut step = 1.0;
    for _ in 0..20_000 {
        let lu = l1 * &u;
        let grad = DVector::from_fn(n, |k, _| 2.0 * u[k] * lu[k]);
        let mut cand = &g + &grad * step;
        cand.iter_mut().for_each(|v| *v = v.max(floor));
        renorm(&mut cand);
        let (val, vec) = eval(&cand);
        if val > best {
            g = cand;
            best = val;
            u = vec;
            step *= 1.2;
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    if best > 0.0 {
        Ok((g, best))
    } else {
        Err(GraphError::CertificateSearchFailed(best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(adj: &[&[f64]], pin: &[f64], d: Directedness) -> Result<Topology, GraphError> {
        let rows: Vec<Vec<f64>> = adj.iter().map(|r| r.to_vec()).collect();
        Topology::new(&rows, pin, d)
    }

    fn cycle3() -> Topology {
        // a_12 = a_23 = a_31 = 1
        topo(
            &[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]],
            &[0.0; 3],
            Directedness::Directed,
        )
        .unwrap()
    }

    #[test]
    fn build_validates() {
        assert!(topo(&[&[0.0, 1.0], &[1.0, 0.0]], &[1.0, 0.0], Directedness::Undirected).is_ok());
        assert_eq!(
            topo(&[&[0.0, 1.0], &[0.0, 0.0]], &[0.0, 1.0], Directedness::Undirected),
            Err(GraphError::Asymmetric { i: 0, j: 1 })
        );
        assert!(topo(&[&[0.0, 0.0], &[1.0, 0.0]], &[1.0, 0.0], Directedness::Directed).is_ok());
        assert!(matches!(
            topo(&[&[0.0, -1.0], &[0.0, 0.0]], &[1.0, 0.0], Directedness::Directed),
            Err(GraphError::BadWeight { .. })
        ));
        assert!(matches!(
            topo(&[&[0.0, 1.0, 0.0], &[0.0, 0.0]], &[1.0, 0.0], Directedness::Directed),
            Err(GraphError::DimensionMismatch(_))
        ));
        assert!(matches!(
            topo(&[&[1.0]], &[1.0], Directedness::Directed),
            Err(GraphError::SelfLoop(0))
        ));
    }

    #[test]
    fn laplacian_examples() {
        let t = topo(&[&[0.0, 1.0], &[1.0, 0.0]], &[0.0; 2], Directedness::Undirected).unwrap();
        assert_eq!(linalg::matrix_to_rows(&t.laplacian()), vec![vec![1.0, -1.0], vec![-1.0, 1.0]]);
        let t = topo(&[&[0.0, 0.0], &[1.0, 0.0]], &[0.0; 2], Directedness::Directed).unwrap();
        assert_eq!(linalg::matrix_to_rows(&t.laplacian()), vec![vec![0.0, 0.0], vec![-1.0, 1.0]]);
        let l = cycle3().laplacian();
        for i in 0..3 {
            assert_eq!(l.row(i).sum(), 0.0);
            assert_eq!(l[(i, i)], 1.0);
        }
    }

    #[test]
    fn spanning_tree_from_leader_examples() {
        let chain = topo(
            &[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]],
            &[1.0, 0.0, 0.0],
            Directedness::Directed,
        )
        .unwrap();
        assert!(chain.has_spanning_tree_from_leader());
        let unpinned = topo(
            &[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]],
            &[0.0; 3],
            Directedness::Directed,
        )
        .unwrap();
        assert!(!unpinned.has_spanning_tree_from_leader());
        let orphan = topo(
            &[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0]],
            &[1.0, 0.0, 0.0],
            Directedness::Directed,
        )
        .unwrap();
        assert!(!orphan.has_spanning_tree_from_leader());
    }

    #[test]
    fn strong_connectivity_examples() {
        let two = topo(&[&[0.0, 1.0], &[1.0, 0.0]], &[0.0; 2], Directedness::Directed).unwrap();
        assert!(two.is_strongly_connected());
        let one_way = topo(&[&[0.0, 1.0], &[0.0, 0.0]], &[0.0; 2], Directedness::Directed).unwrap();
        assert!(!one_way.is_strongly_connected());
        assert!(one_way.has_spanning_tree());
        assert!(cycle3().is_strongly_connected());
    }

    #[test]
    fn partition_examples() {
        let single = topo(&[&[0.0]], &[1.0], Directedness::Directed).unwrap();
        let (l1, l2) = single.partition_followers();
        assert_eq!(l1[(0, 0)], 1.0);
        assert_eq!(l2[0], -1.0);
        let chain = topo(&[&[0.0, 0.0], &[1.0, 0.0]], &[1.0, 0.0], Directedness::Directed).unwrap();
        let (l1, l2) = chain.partition_followers();
        assert_eq!(linalg::matrix_to_rows(&l1), vec![vec![1.0, 0.0], vec![-1.0, 1.0]]);
        assert_eq!(l2.as_slice(), &[-1.0, 0.0]);
    }

    #[test]
    fn g_certificate_examples() {
        let (g, l0) = diag_g_for_m_matrix(&DenseMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_eq!(g[0], 1.0);
        assert_eq!(l0, 2.0);

        let l1 = linalg::matrix_from_rows(&[vec![1.0, 0.0], vec![-1.0, 2.0]]).unwrap();
        let (g, l0) = diag_g_for_m_matrix(&l1).unwrap();
        assert!((g[0] - 1.5).abs() < 1e-14 && (g[1] - 0.5).abs() < 1e-14);
        let s = sym_certificate(&l1, &g);
        assert!((s[(0, 0)] - 3.0).abs() < 1e-14);
        assert!((s[(0, 1)] + 0.5).abs() < 1e-14);
        assert!((s[(1, 1)] - 2.0).abs() < 1e-14);
        // eigenvalues of [[3,-.5],[-.5,2]]: 2.5 ± sqrt(0.5)
        assert!((l0 - (2.5 - 0.5f64.sqrt())).abs() < 1e-12);

        let singular = DenseMatrix::zeros(1, 1);
        assert!(matches!(diag_g_for_m_matrix(&singular), Err(GraphError::NotMMatrix(_))));
    }

    #[test]
    fn g_certificate_falls_back_to_gradient_ascent() {
        // g = L⁻ᵀ1 = (1, 11) fails here; a valid G needs g2/g1 > 25.
        let l1 = linalg::matrix_from_rows(&[vec![1.0, -10.0], vec![0.0, 1.0]]).unwrap();
        let naive = DVector::from_vec(vec![1.0, 11.0]);
        assert!(linalg::lambda_min_sym(&sym_certificate(&l1, &naive)) < 0.0);
        let (g, l0) = diag_g_for_m_matrix(&l1).unwrap();
        assert!(l0 > 0.0);
        assert!(g.iter().all(|v| *v > 0.0));
        assert!(linalg::pd_check(&sym_certificate(&l1, &g)).unwrap().0);
    }

    #[test]
    fn left_null_vector_examples() {
        let two = topo(&[&[0.0, 1.0], &[1.0, 0.0]], &[0.0; 2], Directedness::Undirected).unwrap();
        let r = two.left_null_vector().unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);

        let skew = topo(&[&[0.0, 2.0], &[1.0, 0.0]], &[0.0; 2], Directedness::Directed).unwrap();
        let r = skew.left_null_vector().unwrap();
        assert!((r[0] - 1.0 / 3.0).abs() < 1e-14 && (r[1] - 2.0 / 3.0).abs() < 1e-14);
        assert!((r.transpose() * skew.laplacian()).amax() <= 1e-10);

        let r = cycle3().left_null_vector().unwrap();
        for v in r.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-14);
        }
        let one_way = topo(&[&[0.0, 1.0], &[0.0, 0.0]], &[0.0; 2], Directedness::Directed).unwrap();
        assert_eq!(one_way.left_null_vector(), Err(GraphError::NotStronglyConnected));
    }

    #[test]
    fn lambda2_examples() {
        let two = topo(&[&[0.0, 1.0], &[1.0, 0.0]], &[0.0; 2], Directedness::Undirected).unwrap();
        let r = two.left_null_vector().unwrap();
        assert!((two.lambda2_symmetrized(&r).unwrap() - 2.0).abs() < 1e-12);
        let c = cycle3();
        let r = c.left_null_vector().unwrap();
        // RL + LᵀR = (1/3)(L + Lᵀ) = (1/3)·(complete-graph Laplacian K3); λ₂(K3) = 3
        assert!((c.lambda2_symmetrized(&r).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simple_zero_eigenvalue_examples() {
        let two = topo(&[&[0.0, 1.0], &[1.0, 0.0]], &[0.0; 2], Directedness::Undirected).unwrap();
        assert!(two.simple_zero_eigenvalue().unwrap());
        let apart = topo(&[&[0.0, 0.0], &[0.0, 0.0]], &[0.0; 2], Directedness::Undirected).unwrap();
        assert!(!apart.simple_zero_eigenvalue().unwrap());
        assert_eq!(zero_eigenvalue_multiplicity(&apart.laplacian()).unwrap(), 2);
    }

    #[test]
    fn augmented_graph_roots_at_leader() {
        let chain = topo(&[&[0.0, 0.0], &[1.0, 0.0]], &[1.0, 0.0], Directedness::Directed).unwrap();
        let aug = chain.augmented();
        assert_eq!(aug.n_followers(), 3);
        assert_eq!(aug.weight(1, 0), 1.0);
        assert_eq!(aug.weight(0, 1), 0.0);
        assert!(aug.simple_zero_eigenvalue().unwrap());
        let l = aug.laplacian();
        let (l1, l2) = chain.partition_followers();
        for i in 0..2 {
            assert_eq!(l[(i + 1, 0)], l2[i]);
            for j in 0..2 {
                assert_eq!(l[(i + 1, j + 1)], l1[(i, j)]);
            }
        }
    }
}
