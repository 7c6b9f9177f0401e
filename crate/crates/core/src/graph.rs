//! Adaptive affinity graph and its Laplacian.
//!
//! Each row `a_i` of the affinity solves
//!
//! ```text
//! min_a  Σ_j ½‖x_i − x_j‖² a_j + γ a_j²   s.t. a ≥ 0, Σ_j a_j = 1, a_i = 0
//! ```
//!
//! which is the Euclidean projection of `−u_i / (4γ)` onto the simplex, `u_ij = ‖x_i − x_j‖²`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result, Vector};

/// Below this value of γ the row problem degenerates when two feature rows coincide.
pub const MIN_GAMMA: f64 = 1e-12;

/// Row-stochastic affinity with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    pub affinity: Matrix,
    pub gamma: f64,
    pub self_loops_excluded: bool,
}

/// `L = Â − (A + Aᵀ)/2` with `Â` the degree matrix of the symmetrized affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLaplacian {
    pub laplacian: Matrix,
    pub degree: Vector,
}

impl GraphLaplacian {
    /// The empty graph on `n` nodes (all-zero Laplacian).
    pub fn empty(n: usize) -> Self {
        Self {
            laplacian: Matrix::zeros(n, n),
            degree: Vector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.laplacian.nrows()
    }

    /// `tr(Mᵀ L M)`.
    pub fn quadratic_form(&self, m: &Matrix) -> f64 {
        (m.transpose() * &self.laplacian * m).trace()
    }
}

/// Which algorithm [`project_simplex_with`] uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimplexMethod {
    /// Sort, then find the threshold in closed form.
    #[default]
    Sort,
    /// Newton iteration on the piecewise-linear threshold equation.
    Newton,
}

/// Squared Euclidean distances between all pairs of rows.
pub fn pairwise_sq_dists(features: &Matrix) -> Matrix {
    let n = features.nrows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (features.row(i) - features.row(j)).norm_squared();
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    out
}

/// Euclidean projection onto `{a : a ≥ 0, Σa = 1}` by sorting.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let theta = simplex_threshold_sort(v);
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// Projection with an explicit algorithm choice.
pub fn project_simplex_with(v: &[f64], method: SimplexMethod) -> Vec<f64> {
    let theta = match method {
        SimplexMethod::Sort => simplex_threshold_sort(v),
        SimplexMethod::Newton => simplex_threshold_newton(v),
    };
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

/// The threshold θ with `Σ (v_j − θ)₊ = 1`.
fn simplex_threshold_sort(v: &[f64]) -> f64 {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = sorted[0] - 1.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    theta
}

/// Newton's method on `g(θ) = Σ (v_j − θ)₊ − 1`.
///
/// `g` is convex, piecewise linear and decreasing, so starting left of the root at
/// `max(v) − 1` the iterates increase monotonically and stop after at most `len(v)` steps.
fn simplex_threshold_newton(v: &[f64]) -> f64 {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut theta = max - 1.0;
    for _ in 0..=v.len() + 1 {
        let (mut g, mut active) = (-1.0, 0usize);
        for &x in v {
            if x > theta {
                g += x - theta;
                active += 1;
            }
        }
        if g.abs() <= 1e-15 || active == 0 {
            break;
        }
        let next = theta + g / active as f64;
        if next == theta {
            break;
        }
        theta = next;
    }
    theta
}

/// Learns the adaptive affinity of every row in parallel (results do not depend on scheduling).
pub fn learn_affinity(features: &Matrix, gamma: f64) -> Result<AffinityGraph> {
    learn_affinity_with(features, gamma, SimplexMethod::Sort)
}

pub fn learn_affinity_with(features: &Matrix, gamma: f64, method: SimplexMethod) -> Result<AffinityGraph> {
    let n = features.nrows();
    if n < 2 {
        return Err(Error::Validation(format!("graph needs at least two instances, got {n}")));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidSpec(format!("gamma must be positive, got {gamma}")));
    }
    let dists = pairwise_sq_dists(features);
    if gamma < MIN_GAMMA && has_duplicate_rows(&dists) {
        return Err(Error::DegenerateFeatures { gamma });
    }

    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let candidates: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| -dists[(i, j)] / (4.0 * gamma))
                .collect();
            project_simplex_with(&candidates, method)
        })
        .collect();

    let mut affinity = Matrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        let others = (0..n).filter(|&j| j != i);
        for (j, &a) in others.zip(row) {
            affinity[(i, j)] = a;
        }
    }
    Ok(AffinityGraph {
        affinity,
        gamma,
        self_loops_excluded: true,
    })
}

fn has_duplicate_rows(dists: &Matrix) -> bool {
    let n = dists.nrows();
    (0..n).any(|i| ((i + 1)..n).any(|j| dists[(i, j)] == 0.0))
}

/// Builds `L = Â − S` with `S = (A + Aᵀ)/2` and `Â = diag(S·1)`.
pub fn laplacian(graph: &AffinityGraph) -> GraphLaplacian {
    let a = &graph.affinity;
    let sym = (a + a.transpose()) * 0.5;
    let degree = Vector::from_iterator(sym.nrows(), sym.row_iter().map(|r| r.sum()));
    let laplacian = Matrix::from_diagonal(&degree) - sym;
    GraphLaplacian { laplacian, degree }
}

/// KKT residuals of one affinity row: the largest stationarity violation on the support and the
/// most negative multiplier off the support.
pub fn row_kkt_residuals(sq_dists_row: &[f64], affinity_row: &[f64], gamma: f64) -> (f64, f64) {
    let scaled: Vec<f64> = sq_dists_row.iter().map(|u| u / (4.0 * gamma)).collect();
    let support: Vec<usize> = (0..affinity_row.len())
        .filter(|&j| affinity_row[j] > 0.0)
        .collect();
    if support.is_empty() {
        return (f64::INFINITY, f64::NEG_INFINITY);
    }
    // ϖ is shared across the support; take its mean estimate.
    let varpi = support
        .iter()
        .map(|&j| scaled[j] + affinity_row[j])
        .sum::<f64>()
        / support.len() as f64;
    let stationarity = support
        .iter()
        .map(|&j| (scaled[j] + affinity_row[j] - varpi).abs())
        .fold(0.0, f64::max);
    let min_multiplier = (0..affinity_row.len())
        .filter(|&j| affinity_row[j] <= 0.0)
        .map(|j| scaled[j] - varpi)
        .fold(f64::INFINITY, f64::min);
    (stationarity, min_multiplier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn points_1d(xs: &[f64]) -> Matrix {
        Matrix::from_column_slice(xs.len(), 1, xs)
    }

    #[test]
    fn sq_dists_hand_case() {
        let d = pairwise_sq_dists(&points_1d(&[0.0, 1.0, 3.0]));
        let expected = Matrix::from_row_slice(3, 3, &[0.0, 1.0, 9.0, 1.0, 0.0, 4.0, 9.0, 4.0, 0.0]);
        assert_eq!(d, expected);
    }

    #[test]
    fn sq_dists_identical_rows_are_zero() {
        let x = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(pairwise_sq_dists(&x).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_simplex(&[0.6, 0.6]), vec![0.5, 0.5]);
        assert_eq!(project_simplex(&[1.5, 0.5, 0.0]), vec![1.0, 0.0, 0.0]);
        let feasible = [0.2, 0.3, 0.5];
        let p = project_simplex(&feasible);
        for (a, b) in p.iter().zip(feasible) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn affinity_nearest_neighbour_takes_all_mass() {
        let g = learn_affinity(&points_1d(&[0.0, 1.0, 3.0]), 1.0).unwrap();
        assert_eq!(g.affinity[(0, 0)], 0.0);
        assert!((g.affinity[(0, 1)] - 1.0).abs() < 1e-15);
        assert_eq!(g.affinity[(0, 2)], 0.0);
    }

    #[test]
    fn two_points_link_fully() {
        for gamma in [1e-3, 1.0, 1e6] {
            let g = learn_affinity(&points_1d(&[0.0, 5.0]), gamma).unwrap();
            assert_eq!(g.affinity, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        }
    }

    #[test]
    fn huge_gamma_gives_uniform_rows() {
        let x = Matrix::from_fn(6, 2, |i, j| (i * 3 + j) as f64 * 0.37);
        let g = learn_affinity(&x, 1e9).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i == j { 0.0 } else { 0.2 };
                assert!((g.affinity[(i, j)] - expected).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn duplicate_rows_with_tiny_gamma_are_rejected() {
        let x = points_1d(&[1.0, 1.0, 2.0]);
        assert!(matches!(
            learn_affinity(&x, 1e-13),
            Err(Error::DegenerateFeatures { .. })
        ));
        assert!(learn_affinity(&x, 1e-3).is_ok());
    }

    #[test]
    fn invalid_inputs() {
        assert!(learn_affinity(&points_1d(&[1.0]), 1.0).is_err());
        assert!(learn_affinity(&points_1d(&[1.0, 2.0]), 0.0).is_err());
    }

    #[test]
    fn laplacian_of_single_edge() {
        let g = AffinityGraph {
            affinity: Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            gamma: 1.0,
            self_loops_excluded: true,
        };
        let l = laplacian(&g);
        assert_eq!(l.laplacian, Matrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn laplacian_invariants_on_learned_graph() {
        let x = Matrix::from_fn(12, 3, |i, j| ((i * 7 + j * 3) % 11) as f64 / 3.0);
        let g = learn_affinity(&x, 0.5).unwrap();
        let l = laplacian(&g);
        assert!((&l.laplacian - l.laplacian.transpose()).amax() <= 1e-12);
        for row in l.laplacian.row_iter() {
            assert!(row.sum().abs() <= 1e-9);
        }
        let eig = l.laplacian.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() >= -1e-8);
    }

    #[test]
    fn quadratic_form_matches_pairwise_sum() {
        // tr(Mᵀ L M) = ½ Σ_ij s_ij ‖m_i − m_j‖², by brute force.
        let x = Matrix::from_fn(9, 2, |i, j| ((i * 5 + j * 2) % 7) as f64 * 0.4);
        let g = learn_affinity(&x, 2.0).unwrap();
        let l = laplacian(&g);
        let m = Matrix::from_fn(9, 4, |i, j| ((i * 3 + j) % 5) as f64 - 1.5);
        let s = (&g.affinity + g.affinity.transpose()) * 0.5;
        let mut brute = 0.0;
        for i in 0..9 {
            for j in 0..9 {
                brute += 0.5 * s[(i, j)] * (m.row(i) - m.row(j)).norm_squared();
            }
        }
        assert!((l.quadratic_form(&m) - brute).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn newton_agrees_with_sort(v in prop::collection::vec(-5.0f64..5.0, 1..40)) {
            let a = project_simplex_with(&v, SimplexMethod::Sort);
            let b = project_simplex_with(&v, SimplexMethod::Newton);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }

        #[test]
        fn projection_is_on_simplex(v in prop::collection::vec(-3.0f64..3.0, 1..30)) {
            let p = project_simplex(&v);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn nearer_neighbours_get_no_less_affinity(
            xs in prop::collection::vec(-4.0f64..4.0, 3..20),
            gamma in 0.01f64..10.0,
        ) {
            let x = points_1d(&xs);
            let g = learn_affinity(&x, gamma).unwrap();
            let d = pairwise_sq_dists(&x);
            let n = xs.len();
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        if i != j && i != k && d[(i, j)] < d[(i, k)] {
                            prop_assert!(g.affinity[(i, j)] >= g.affinity[(i, k)]);
                        }
                    }
                }
            }
        }
    }
}
