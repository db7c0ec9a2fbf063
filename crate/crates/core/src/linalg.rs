//! Dense linear-algebra kernels.
//!
//! Data matrices are stored variables × samples, so "centering the columns"
//! means removing the per-variable mean taken across the sample columns.
//! Covariances are unscaled (`A·Bᵀ`, no `1/N`); any regularization weight
//! applied on top of them therefore scales with the number of samples.
//!
//! The symmetric eigensolver is a cyclic Jacobi iteration and the SVD is a
//! one-sided (Hestenes) Jacobi iteration. Both are deterministic: identical
//! inputs give bit-identical outputs, and eigen/singular vectors follow a
//! fixed sign rule (the first entry with magnitude above `1e-12` is
//! non-negative).

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{MvaError, Result};

/// Dense real matrix.
pub type Matrix = Array2<f64>;

const JACOBI_MAX_SWEEPS: usize = 100;
const SIGN_EPS: f64 = 1e-12;
const SYMMETRY_RTOL: f64 = 1e-8;
/// Pivots below this fraction of the largest diagonal entry are treated as zero.
const CHOLESKY_PIVOT_RTOL: f64 = 1e-12;
/// Eigenvalues below this fraction of the largest one are dropped by the pseudo-inverse.
const PINV_RTOL: f64 = 1e-12;

/// Eigen-decomposition of a symmetric matrix, sorted by descending eigenvalue.
#[derive(Debug, Clone, PartialEq)]
pub struct EigResult {
    pub values: Array1<f64>,
    /// Eigenvectors stored as columns.
    pub vectors: Matrix,
}

/// Thin singular value decomposition `a = q · diag(sigma) · pᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub q: Matrix,
    pub sigma: Array1<f64>,
    pub p: Matrix,
}

pub fn ensure_finite(a: ArrayView2<f64>, what: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MvaError::NonFinite(what))
    }
}

pub fn ensure_non_empty(a: ArrayView2<f64>, what: &str) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(MvaError::InvalidArgument(format!("{what} is empty")));
    }
    Ok(())
}

/// Removes the per-row (per-variable) mean. Returns the centered copy and the means.
pub fn center_columns(x: ArrayView2<f64>) -> (Matrix, Array1<f64>) {
    let samples = x.ncols().max(1) as f64;
    let means = x.sum_axis(Axis(1)) / samples;
    let mut centered = x.to_owned();
    for (mut row, &mu) in centered.rows_mut().into_iter().zip(means.iter()) {
        row.mapv_inplace(|v| v - mu);
    }
    (centered, means)
}

/// Unscaled cross-covariance `a · bᵀ` of two sample-aligned matrices.
pub fn covariance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(MvaError::DimensionMismatch(format!(
            "covariance needs equal sample counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    Ok(a.dot(&b.t()))
}

pub fn frobenius_norm(a: ArrayView2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs(a: ArrayView2<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn check_square(a: ArrayView2<f64>, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(MvaError::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

fn symmetrized(a: ArrayView2<f64>) -> Result<Matrix> {
    check_square(a, "symmetric input")?;
    ensure_finite(a, "symmetric input")?;
    let scale = max_abs(a).max(f64::MIN_POSITIVE);
    let mut asym = 0.0_f64;
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    if asym > SYMMETRY_RTOL * scale {
        return Err(MvaError::NotSymmetric { asymmetry: asym });
    }
    Ok((&a + &a.t()) * 0.5)
}

/// Flips each column so that its first significant entry is non-negative.
/// Returns the applied signs.
fn normalize_column_signs(v: &mut Matrix) -> Vec<f64> {
    let mut signs = Vec::with_capacity(v.ncols());
    for mut col in v.columns_mut() {
        let flip = col
            .iter()
            .find(|x| x.abs() > SIGN_EPS)
            .is_some_and(|&x| x < 0.0);
        if flip {
            col.mapv_inplace(|x| -x);
            signs.push(-1.0);
        } else {
            signs.push(1.0);
        }
    }
    signs
}

/// Cyclic Jacobi on a dense row-major buffer. Returns (eigenvalues, eigenvectors
/// column-major in a row-major n×n buffer) unsorted.
fn jacobi_eigen(mut a: Vec<f64>, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let total: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    if total == 0.0 || n == 1 {
        let d = (0..n).map(|i| a[i * n + i]).collect();
        return Ok((d, v));
    }
    let target = 1e-15 * total;

    for sweep in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() <= target {
            let d = (0..n).map(|i| a[i * n + i]).collect();
            return Ok((d, v));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // negligible relative to both diagonal entries
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    Err(MvaError::NoConvergence {
        method: "jacobi eigensolver",
        iterations: JACOBI_MAX_SWEEPS,
    })
}

/// Top-`k` eigenpairs of a symmetric matrix, values descending.
pub fn sym_eig(a: ArrayView2<f64>, k: usize) -> Result<EigResult> {
    let s = symmetrized(a)?;
    let n = s.nrows();
    if k == 0 || k > n {
        return Err(MvaError::InvalidArgument(format!(
            "requested {k} eigenpairs from a {n}x{n} matrix"
        )));
    }
    let buf: Vec<f64> = s.iter().copied().collect();
    let (d, v) = jacobi_eigen(buf, n)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[j].total_cmp(&d[i]));
    order.truncate(k);

    let values = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vectors = Array2::zeros((n, k));
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[[row, col]] = v[row * n + src];
        }
    }
    normalize_column_signs(&mut vectors);
    Ok(EigResult { values, vectors })
}

/// Extends the orthonormal columns `q[:, ..filled]` to a full orthonormal set.
fn complete_orthonormal(q: &mut Matrix, filled: &[bool]) {
    let r = q.nrows();
    for j in 0..q.ncols() {
        if filled[j] {
            continue;
        }
        let mut best: Option<Array1<f64>> = None;
        let mut best_norm = 0.0;
        for e in 0..r {
            let mut cand = Array1::<f64>::zeros(r);
            cand[e] = 1.0;
            for _ in 0..2 {
                // columns before j are already orthonormal, completed or not
                for (other, &ok) in filled.iter().enumerate() {
                    if ok || other < j {
                        let col = q.column(other);
                        let proj = col.dot(&cand);
                        cand.scaled_add(-proj, &col);
                    }
                }
            }
            let nrm = cand.dot(&cand).sqrt();
            if nrm > best_norm + 1e-12 {
                best_norm = nrm;
                best = Some(cand / nrm);
            }
            if best_norm > 0.7 {
                break;
            }
        }
        if let Some(col) = best {
            q.column_mut(j).assign(&col);
        }
    }
}

/// One-sided Jacobi SVD for `r >= c`.
fn svd_tall(a: ArrayView2<f64>) -> Result<SvdResult> {
    let (r, c) = a.dim();
    // columns stored contiguously
    let mut w: Vec<Vec<f64>> = (0..c).map(|j| a.column(j).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..c)
        .map(|j| {
            let mut e = vec![0.0; c];
            e[j] = 1.0;
            e
        })
        .collect();
    let tol = 10.0 * r as f64 * f64::EPSILON;
    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..c {
            for j in (i + 1)..c {
                let (alpha, beta, gamma) = {
                    let wi = &w[i];
                    let wj = &w[j];
                    let mut al = 0.0;
                    let mut be = 0.0;
                    let mut ga = 0.0;
                    for k in 0..r {
                        al += wi[k] * wi[k];
                        be += wj[k] * wj[k];
                        ga += wi[k] * wj[k];
                    }
                    (al, be, ga)
                };
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                let (lo, hi) = w.split_at_mut(j);
                let (wi, wj) = (&mut lo[i], &mut hi[0]);
                for k in 0..r {
                    let x = wi[k];
                    let y = wj[k];
                    wi[k] = cs * x - sn * y;
                    wj[k] = sn * x + cs * y;
                }
                let (lo, hi) = v.split_at_mut(j);
                let (vi, vj) = (&mut lo[i], &mut hi[0]);
                for k in 0..c {
                    let x = vi[k];
                    let y = vj[k];
                    vi[k] = cs * x - sn * y;
                    vj[k] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MvaError::NoConvergence {
            method: "jacobi svd",
            iterations: JACOBI_MAX_SWEEPS,
        });
    }

    let norms: Vec<f64> = w.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms.iter().cloned().fold(0.0, f64::max);
    let zero_cut = smax * r.max(c) as f64 * f64::EPSILON;

    let mut q = Array2::zeros((r, c));
    let mut p = Array2::zeros((c, c));
    let mut sigma = Array1::zeros(c);
    let mut filled = vec![false; c];
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        for k in 0..c {
            p[[k, dst]] = v[src][k];
        }
        if s > zero_cut && s > 0.0 {
            sigma[dst] = s;
            for k in 0..r {
                q[[k, dst]] = w[src][k] / s;
            }
            filled[dst] = true;
        }
    }
    if filled.iter().any(|f| !f) {
        complete_orthonormal(&mut q, &filled);
    }
    let signs = normalize_column_signs(&mut q);
    for (mut col, s) in p.columns_mut().into_iter().zip(signs) {
        if s < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
    Ok(SvdResult { q, sigma, p })
}

/// Thin SVD. For an `r × c` input, `q` is `r × k`, `p` is `c × k` with `k = min(r, c)`.
pub fn svd(a: ArrayView2<f64>) -> Result<SvdResult> {
    ensure_non_empty(a, "svd input")?;
    ensure_finite(a, "svd input")?;
    if a.nrows() >= a.ncols() {
        svd_tall(a)
    } else {
        let t = svd_tall(a.t())?;
        let mut q = t.p;
        let mut p = t.q;
        let signs = normalize_column_signs(&mut q);
        for (mut col, s) in p.columns_mut().into_iter().zip(signs) {
            if s < 0.0 {
                col.mapv_inplace(|x| -x);
            }
        }
        Ok(SvdResult { q, sigma: t.sigma, p })
    }
}

/// `V · diag((λ + ridge_eps)^{-1/2}) · Vᵀ` for a symmetric PSD matrix.
///
/// With `ridge_eps == 0`, eigenvalues that are zero at working precision
/// (below `n·ε·λ_max`) are rejected as well as negative ones.
pub fn inv_sqrt_psd(a: ArrayView2<f64>, ridge_eps: f64) -> Result<Matrix> {
    let n = a.nrows();
    let eig = sym_eig(a, n)?;
    let lmax = eig.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let numerically_zero = n as f64 * f64::EPSILON * lmax;
    let mut scales = Array1::zeros(n);
    for (i, &lam) in eig.values.iter().enumerate() {
        let shifted = lam + ridge_eps;
        if shifted <= 0.0 || (ridge_eps == 0.0 && lam <= numerically_zero) {
            return Err(MvaError::NotPositiveDefinite { eigenvalue: shifted });
        }
        scales[i] = shifted.powf(-0.5);
    }
    let scaled = &eig.vectors * &scales.view().insert_axis(Axis(0));
    let out = scaled.dot(&eig.vectors.t());
    Ok((&out + &out.t()) * 0.5)
}

/// Lower Cholesky factor `L` with `a = L·Lᵀ`.
pub fn cholesky(a: ArrayView2<f64>, context: &'static str) -> Result<Matrix> {
    check_square(a, "cholesky input")?;
    let n = a.nrows();
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(a[[i, i]].abs()));
    let floor = CHOLESKY_PIVOT_RTOL * max_diag;
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) || d <= 0.0 {
            return Err(MvaError::Singular { context });
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L·X = B` for lower-triangular `L`.
pub fn solve_lower(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Matrix {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in 0..n {
        for k in 0..i {
            let lik = l[[i, k]];
            if lik != 0.0 {
                let (head, mut tail) = x.view_mut().split_at(Axis(0), i);
                tail.row_mut(0).scaled_add(-lik, &head.row(k));
            }
        }
        let lii = l[[i, i]];
        x.row_mut(i).mapv_inplace(|v| v / lii);
    }
    x
}

/// Solves `Lᵀ·X = B` for lower-triangular `L`.
pub fn solve_upper_t(l: ArrayView2<f64>, b: ArrayView2<f64>) -> Matrix {
    let n = l.nrows();
    let mut x = b.to_owned();
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let lki = l[[k, i]];
            if lki != 0.0 {
                let (mut head, tail) = x.view_mut().split_at(Axis(0), k);
                head.row_mut(i).scaled_add(-lki, &tail.row(0));
            }
        }
        let lii = l[[i, i]];
        x.row_mut(i).mapv_inplace(|v| v / lii);
    }
    x
}

/// Solves `A·X = B` for symmetric positive-definite `A`.
pub fn solve_spd(a: ArrayView2<f64>, b: ArrayView2<f64>, context: &'static str) -> Result<Matrix> {
    if a.nrows() != b.nrows() {
        return Err(MvaError::DimensionMismatch(format!(
            "solve: {}x{} system with {} right-hand-side rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let l = cholesky(a, context)?;
    let y = solve_lower(l.view(), b);
    Ok(solve_upper_t(l.view(), y.view()))
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix.
pub fn pinv_psd(a: ArrayView2<f64>) -> Result<Matrix> {
    let n = a.nrows();
    let eig = sym_eig(a, n)?;
    let lmax = eig.values.iter().fold(0.0_f64, |m, v| m.max(*v));
    let cut = PINV_RTOL * lmax;
    let inv = eig.values.mapv(|l| if l > cut && l > 0.0 { 1.0 / l } else { 0.0 });
    let scaled = &eig.vectors * &inv.view().insert_axis(Axis(0));
    Ok(scaled.dot(&eig.vectors.t()))
}

/// Minimum-norm `U` (n × m) minimizing `‖Y − Uᵀ·X‖_F` with `x` n × N and `y` m × N.
pub fn lstsq_min_norm(x: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Matrix> {
    if x.ncols() != y.ncols() {
        return Err(MvaError::DimensionMismatch(format!(
            "least squares: {} vs {} samples",
            x.ncols(),
            y.ncols()
        )));
    }
    let (n, samples) = x.dim();
    if n <= samples {
        let cxx = x.dot(&x.t());
        let cxy = x.dot(&y.t());
        Ok(pinv_psd(cxx.view())?.dot(&cxy))
    } else {
        let gram = x.t().dot(&x);
        let z = pinv_psd(gram.view())?.dot(&y.t());
        Ok(x.dot(&z))
    }
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
///
/// Computed from the sine of the angles, `‖(I − Q_a Q_aᵀ) Q_b‖₂`, which stays
/// accurate for nearly coincident subspaces.
pub fn max_principal_angle(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(MvaError::DimensionMismatch(format!(
            "subspaces live in R^{} and R^{}",
            a.nrows(),
            b.nrows()
        )));
    }
    let qa = svd(a)?.q;
    let qb = svd(b)?.q;
    let (small, large) = if qa.ncols() <= qb.ncols() { (qa, qb) } else { (qb, qa) };
    let resid = &small - &large.dot(&large.t().dot(&small));
    let s = svd(resid.view())?.sigma[0].min(1.0);
    Ok(s.asin())
}
