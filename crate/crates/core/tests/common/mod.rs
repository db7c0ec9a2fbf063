//! Test-side reference implementations built on nalgebra, kept independent of
//! the library's own linear algebra.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

pub fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(a: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

fn center(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = a.clone();
    for mut row in c.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    c
}

/// Left singular vectors of `a` ordered by decreasing singular value.
fn sorted_left_vectors(a: DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let svd = a.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])])
}

/// Standard PCA subspace: leading left singular vectors of the centered data.
pub fn pca_subspace(x: ArrayView2<f64>, n_f: usize) -> Array2<f64> {
    from_na(&sorted_left_vectors(center(&to_na(x)), n_f))
}

/// Standard OPLS subspace `L⁻ᵀ·Q` from the SVD of `L⁻¹·C_XY`, with `C_XX = L·Lᵀ`.
pub fn opls_subspace(x: ArrayView2<f64>, y: ArrayView2<f64>, n_f: usize) -> Array2<f64> {
    let (xc, yc) = (center(&to_na(x)), center(&to_na(y)));
    let l = (&xc * xc.transpose()).cholesky().expect("C_XX positive definite").l();
    let a = l.solve_lower_triangular(&(&xc * yc.transpose())).unwrap();
    let q = sorted_left_vectors(a, n_f);
    from_na(&l.transpose().solve_upper_triangular(&q).unwrap())
}

/// Standard CCA subspace from the SVD of `L_x⁻¹·C_XY·L_y⁻ᵀ`.
pub fn cca_subspace(x: ArrayView2<f64>, y: ArrayView2<f64>, n_f: usize) -> Array2<f64> {
    let (xc, yc) = (center(&to_na(x)), center(&to_na(y)));
    let lx = (&xc * xc.transpose()).cholesky().expect("C_XX positive definite").l();
    let ly = (&yc * yc.transpose()).cholesky().expect("C_YY positive definite").l();
    let a = lx.solve_lower_triangular(&(&xc * yc.transpose())).unwrap();
    let a = ly.solve_lower_triangular(&a.transpose()).unwrap().transpose();
    let q = sorted_left_vectors(a, n_f);
    from_na(&lx.transpose().solve_upper_triangular(&q).unwrap())
}

/// Largest principal angle between column spans, via `‖(I − Q_a Q_aᵀ)·Q_b‖₂`.
pub fn principal_angle(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let qa = to_na(a).qr().q();
    let qb = to_na(b).qr().q();
    let resid = &qb - &qa * (qa.transpose() * &qb);
    resid.singular_values().max().min(1.0).asin()
}
