//! Variable importance and selection from a projection matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{MvaError, Result};
use crate::linalg::Matrix;
use crate::persist;

/// Squared-relevance cut-off below which a component counts as zero.
pub const DEFAULT_THRESHOLD: f64 = 1e-4;

/// Squared ℓ2 norm of every row.
pub fn row_importance(u: ArrayView2<f64>) -> Array1<f64> {
    u.rows().into_iter().map(|r| r.iter().map(|v| v * v).sum()).collect()
}

/// Indices sorted by decreasing importance, ties by ascending index.
pub fn ranking(importance: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..importance.len()).collect();
    // sort_by is stable, so equal keys keep index order
    idx.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]));
    idx
}

pub fn select_top(importance: ArrayView1<f64>, n_s: usize) -> Result<Vec<usize>> {
    let n = importance.len();
    if n_s == 0 || n_s > n {
        return Err(MvaError::InvalidArgument(format!(
            "n_s must lie in 1..={n}, got {n_s}"
        )));
    }
    let mut top = ranking(importance);
    top.truncate(n_s);
    top.sort_unstable();
    Ok(top)
}

/// Elementwise `|u_ij|² ≥ threshold` flags and the fraction of rows with any flag.
pub fn sparsity_pattern(u: ArrayView2<f64>, threshold: f64) -> Result<(Array2<bool>, f64)> {
    if !(threshold >= 0.0) {
        return Err(MvaError::InvalidArgument(format!("threshold must be >= 0, got {threshold}")));
    }
    // exact zeros never count, even at threshold 0
    let mask = u.mapv(|v| v != 0.0 && v * v >= threshold);
    let rows = mask.nrows().max(1) as f64;
    let used = mask.rows().into_iter().filter(|r| r.iter().any(|&f| f)).count();
    Ok((mask, used as f64 / rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub importance: Vec<f64>,
    /// Mean over eigenvectors of the per-column squared loadings.
    pub average_importance: Vec<f64>,
    pub ranking: Vec<usize>,
    pub mask: Vec<bool>,
    pub threshold: f64,
    pub selected_fraction: f64,
    #[serde(with = "persist::matrix")]
    pub per_eigenvector_relevance: Matrix,
}

impl VariableReport {
    pub fn from_projection(u: ArrayView2<f64>, threshold: f64) -> Result<Self> {
        if u.is_empty() {
            return Err(MvaError::InvalidArgument("projection matrix is empty".into()));
        }
        let importance = row_importance(u);
        let (_, selected_fraction) = sparsity_pattern(u, threshold)?;
        let per = u.mapv(|v| v * v);
        let n_f = u.ncols() as f64;
        Ok(VariableReport {
            ranking: ranking(importance.view()),
            mask: importance.iter().map(|&v| v >= threshold && v > 0.0).collect(),
            average_importance: importance.iter().map(|v| v / n_f).collect(),
            importance: importance.to_vec(),
            threshold,
            selected_fraction,
            per_eigenvector_relevance: per,
        })
    }

    pub fn selected(&self) -> Vec<usize> {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::l21::{self, L21Options};
    use crate::linalg;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn importance_examples() {
        let u = array![[3.0, 4.0], [0.0, 0.0]];
        assert_eq!(row_importance(u.view()).to_vec(), vec![25.0, 0.0]);
        let r = randn(7, 3, 1);
        let imp = row_importance(r.view());
        for i in 0..7 {
            let mut acc = 0.0;
            for j in 0..3 {
                acc += r[[i, j]] * r[[i, j]];
            }
            assert!((imp[i] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn top_examples() {
        assert_eq!(select_top(array![0.1, 5.0, 3.0].view(), 2).unwrap(), vec![1, 2]);
        assert_eq!(select_top(array![1.0, 1.0, 1.0].view(), 2).unwrap(), vec![0, 1]);
        assert_eq!(select_top(array![0.3, 0.2, 0.1].view(), 3).unwrap(), vec![0, 1, 2]);
        assert!(select_top(array![1.0].view(), 0).is_err());
        assert!(select_top(array![1.0].view(), 2).is_err());
        assert_eq!(ranking(array![1.0, 3.0, 3.0, 0.0].view()), vec![1, 2, 0, 3]);
    }

    #[test]
    fn pattern_examples() {
        let (_, f) = sparsity_pattern(Array2::zeros((4, 2)).view(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(f, 0.0);
        let u = array![[1e-9, 0.0], [0.0, 0.0], [0.0, -2.0], [0.0, 0.0]];
        let (mask, f) = sparsity_pattern(u.view(), 0.0).unwrap();
        assert_eq!(f, 0.5);
        assert!(mask[[0, 0]] && !mask[[0, 1]]);
        let (_, f) = sparsity_pattern(u.view(), 1e-4).unwrap();
        assert_eq!(f, 0.25);
        assert!(sparsity_pattern(u.view(), -1.0).is_err());
    }

    #[test]
    fn report_fields() {
        let u = array![[3.0, 4.0], [0.0, 0.0], [0.001, 0.0]];
        let rep = VariableReport::from_projection(u.view(), DEFAULT_THRESHOLD).unwrap();
        assert_eq!(rep.ranking, vec![0, 2, 1]);
        assert_eq!(rep.mask, vec![true, false, false]);
        assert_eq!(rep.average_importance[0], 12.5);
        assert_eq!(rep.selected(), vec![0]);
        assert!((rep.selected_fraction - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn larger_gamma_selects_fewer_rows() {
        let x = randn(30, 40, 2);
        let w = randn(3, 5, 3);
        let y = w.dot(&x.slice(ndarray::s![..5, ..]));
        let frac = |gamma: f64| {
            let st = l21::solve_l21(x.view(), y.view(), &L21Options::new(gamma)).unwrap();
            sparsity_pattern(st.u_prime.view(), DEFAULT_THRESHOLD).unwrap().1
        };
        assert!(frac(50.0) <= frac(0.0));
    }

    proptest! {
        #[test]
        fn top_is_scale_invariant(vals in proptest::collection::vec(0.0f64..10.0, 1..20), scale in 1e-3f64..1e3, k in 1usize..20) {
            let a = Array1::from(vals);
            let k = k.min(a.len());
            let scaled = a.mapv(|v| v * scale);
            prop_assert_eq!(select_top(a.view(), k).unwrap(), select_top(scaled.view(), k).unwrap());
        }

        #[test]
        fn importance_is_rotation_invariant(seed in 0u64..1000) {
            let u = randn(6, 4, seed);
            let q = linalg::svd(randn(4, 4, seed + 7).view()).unwrap().q;
            let a = row_importance(u.view());
            let b = row_importance(u.dot(&q).view());
            for (x, y) in a.iter().zip(b.iter()) {
                prop_assert!((x - y).abs() < 1e-10 * x.max(1.0));
            }
        }
    }
}
