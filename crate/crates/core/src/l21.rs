//! Decoupled ℓ2,1 U-step.
//!
//! Because `‖U′·R‖₂,₁ = ‖U′‖₂,₁` for any orthogonal `R`, the reweighting
//! matrix `G` depends only on `U′` and the reweighted least-squares loop can
//! run to convergence before `V` is ever computed. The loop alternates
//!
//! ```text
//! U′ = (C_XX + γG)⁻¹·C_XY′                      (n ≤ N)
//! U′ = G⁻¹·X·(Xᵀ·G⁻¹·X + γI)⁻¹·Y′ᵀ              (n > N)
//! G_ii = 1 / (2·max(‖u′ⁱ‖₂, eps))
//! ```
//!
//! starting from `G = I`, and stops once `|tr G⁽ᵏ⁾ − tr G⁽ᵏ⁻¹⁾| ≤ δ`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{MvaError, Result};
use crate::linalg::{self, Matrix};

pub const DEFAULT_ROW_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L21Options {
    pub gamma: f64,
    pub delta: f64,
    pub max_iter: usize,
    pub eps: f64,
}

impl L21Options {
    pub fn new(gamma: f64) -> Self {
        L21Options {
            gamma,
            delta: 1e-6,
            max_iter: 50,
            eps: DEFAULT_ROW_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct L21State {
    /// `n × m` solution of the unrotated problem.
    pub u_prime: Matrix,
    pub g_diag: Array1<f64>,
    pub iter: usize,
    pub converged: bool,
    pub trace_g_delta: Vec<f64>,
    /// `‖Y′ − U′ᵀX‖²_F + γ‖U′‖₂,₁` after every update.
    pub objective_trace: Vec<f64>,
    /// Rows whose norm ended at or below the floor.
    pub pruned: Vec<usize>,
}

pub fn l21_norm(u: ArrayView2<f64>) -> f64 {
    u.rows().into_iter().map(|r| r.dot(&r).sqrt()).sum()
}

/// `G_ii = 1 / (2·max(‖row i‖₂, eps))`. Panics if `eps <= 0`.
pub fn g_update(u_prime: ArrayView2<f64>, eps: f64) -> Array1<f64> {
    assert!(eps > 0.0, "row floor must be positive");
    Array1::from_iter(
        u_prime
            .rows()
            .into_iter()
            .map(|r| 0.5 / r.dot(&r).sqrt().max(eps)),
    )
}

fn check_shapes(x: ArrayView2<f64>, y_prime: ArrayView2<f64>, g: ArrayView1<f64>) -> Result<()> {
    if x.ncols() != y_prime.ncols() {
        return Err(MvaError::DimensionMismatch(format!(
            "x has {} samples, y' has {}",
            x.ncols(),
            y_prime.ncols()
        )));
    }
    if g.len() != x.nrows() {
        return Err(MvaError::DimensionMismatch(format!(
            "G has {} entries for {} variables",
            g.len(),
            x.nrows()
        )));
    }
    if g.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(MvaError::InvalidArgument("G must be positive".into()));
    }
    Ok(())
}

/// Primal form `(C_XX + γG)⁻¹·C_XY′`.
pub fn u_prime_primal(
    x: ArrayView2<f64>,
    y_prime: ArrayView2<f64>,
    g_diag: ArrayView1<f64>,
    gamma: f64,
) -> Result<Matrix> {
    check_shapes(x, y_prime, g_diag)?;
    let cxx = x.dot(&x.t());
    let cxy = x.dot(&y_prime.t());
    primal_from_cov(cxx, cxy.view(), g_diag, gamma)
}

fn primal_from_cov(mut cxx: Matrix, cxy: ArrayView2<f64>, g: ArrayView1<f64>, gamma: f64) -> Result<Matrix> {
    for (d, &gi) in cxx.diag_mut().iter_mut().zip(g.iter()) {
        *d += gamma * gi;
    }
    linalg::solve_spd(cxx.view(), cxy, "l2,1 U-step (n <= N)")
}

/// Dual form `G⁻¹·X·(Xᵀ·G⁻¹·X + γI)⁻¹·Y′ᵀ`; needs `γ > 0`.
pub fn u_prime_dual(
    x: ArrayView2<f64>,
    y_prime: ArrayView2<f64>,
    g_diag: ArrayView1<f64>,
    gamma: f64,
) -> Result<Matrix> {
    check_shapes(x, y_prime, g_diag)?;
    if !(gamma > 0.0) {
        return Err(MvaError::Singular {
            context: "l2,1 U-step (n > N)",
        });
    }
    let ginv = g_diag.mapv(|g| 1.0 / g);
    let scaled_x = &x * &ginv.view().insert_axis(Axis(1));
    let mut gram = x.t().dot(&scaled_x);
    gram.diag_mut().mapv_inplace(|d| d + gamma);
    let z = linalg::solve_spd(gram.view(), y_prime.t(), "l2,1 U-step (n > N)")?;
    Ok(scaled_x.dot(&z))
}

/// Branch on the shape of `x`: primal when `n ≤ N`, dual otherwise.
pub fn u_prime_update(
    x: ArrayView2<f64>,
    y_prime: ArrayView2<f64>,
    g_diag: ArrayView1<f64>,
    gamma: f64,
) -> Result<Matrix> {
    if x.nrows() <= x.ncols() {
        u_prime_primal(x, y_prime, g_diag, gamma)
    } else {
        u_prime_dual(x, y_prime, g_diag, gamma)
    }
}

fn misfit(x: ArrayView2<f64>, y_prime: ArrayView2<f64>, u: ArrayView2<f64>) -> f64 {
    let recon = u.t().dot(&x);
    y_prime
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn pruned_rows(u: ArrayView2<f64>, eps: f64) -> Vec<usize> {
    u.rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| r.dot(r).sqrt() <= eps)
        .map(|(i, _)| i)
        .collect()
}

/// Reweighted least squares for `‖Y′ − U′ᵀX‖²_F + γ‖U′‖₂,₁`.
///
/// With `γ = 0` the problem is plain least squares; the minimum-norm solution
/// is returned after a single step.
pub fn solve_l21(x: ArrayView2<f64>, y_prime: ArrayView2<f64>, opts: &L21Options) -> Result<L21State> {
    let gamma = opts.gamma;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(MvaError::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    if !(opts.eps > 0.0) || !(opts.delta >= 0.0) || opts.max_iter == 0 {
        return Err(MvaError::InvalidArgument("invalid l2,1 solver options".into()));
    }
    let n = x.nrows();
    check_shapes(x, y_prime, Array1::ones(n).view())?;

    if gamma == 0.0 {
        let u = linalg::lstsq_min_norm(x, y_prime)?;
        let g = g_update(u.view(), opts.eps);
        let obj = misfit(x, y_prime, u.view());
        return Ok(L21State {
            pruned: pruned_rows(u.view(), opts.eps),
            u_prime: u,
            g_diag: g,
            iter: 1,
            converged: true,
            trace_g_delta: Vec::new(),
            objective_trace: vec![obj],
        });
    }

    let primal = n <= x.ncols();
    let (cxx, cxy) = if primal {
        (x.dot(&x.t()), x.dot(&y_prime.t()))
    } else {
        (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
    };

    let mut g = Array1::<f64>::ones(n);
    let mut trace_prev = n as f64;
    let mut state = L21State {
        u_prime: Array2::zeros((n, y_prime.nrows())),
        g_diag: g.clone(),
        iter: 0,
        converged: false,
        trace_g_delta: Vec::new(),
        objective_trace: Vec::new(),
        pruned: Vec::new(),
    };
    for k in 1..=opts.max_iter {
        let u = if primal {
            primal_from_cov(cxx.clone(), cxy.view(), g.view(), gamma)?
        } else {
            u_prime_dual(x, y_prime, g.view(), gamma)?
        };
        state
            .objective_trace
            .push(misfit(x, y_prime, u.view()) + gamma * l21_norm(u.view()));
        g = g_update(u.view(), opts.eps);
        let trace = g.sum();
        let delta = (trace - trace_prev).abs();
        state.trace_g_delta.push(delta);
        trace_prev = trace;
        state.u_prime = u;
        state.iter = k;
        if delta <= opts.delta {
            state.converged = true;
            break;
        }
    }
    state.pruned = pruned_rows(state.u_prime.view(), opts.eps);
    state.g_diag = g;
    Ok(state)
}

/// Full-rank ℓ2,1 regression (no bottleneck), used as the variable-selection baseline.
pub fn fit_rfs(x: ArrayView2<f64>, y: ArrayView2<f64>, opts: &L21Options) -> Result<Matrix> {
    Ok(solve_l21(x, y, opts)?.u_prime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn g_update_examples() {
        let g = g_update(array![[3.0, 4.0], [0.0, 0.0]].view(), 1e-8);
        assert!((g[0] - 0.1).abs() < 1e-16);
        assert!((g[1] - 5e7).abs() < 1e-6);
        let g = g_update(array![[1.0, 0.0, 0.0]].view(), 1e-8);
        assert_eq!(g[0], 0.5);
    }

    #[test]
    fn scalar_update() {
        let u = u_prime_update(
            array![[1.0, -1.0]].view(),
            array![[2.0, -2.0]].view(),
            array![1.0].view(),
            2.0,
        )
        .unwrap();
        assert!((u[[0, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn primal_is_least_squares_at_zero_gamma() {
        let x = random(4, 30, 1);
        let y = random(2, 30, 2);
        let u = u_prime_primal(x.view(), y.view(), Array1::ones(4).view(), 0.0).unwrap();
        let ls = linalg::lstsq_min_norm(x.view(), y.view()).unwrap();
        assert!((&u - &ls).iter().all(|d| d.abs() < 1e-10));
    }

    #[test]
    fn dual_requires_positive_gamma() {
        let x = random(6, 3, 3);
        let y = random(2, 3, 4);
        assert!(u_prime_dual(x.view(), y.view(), Array1::ones(6).view(), 0.0).is_err());
    }

    #[test]
    fn branches_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let x = random(12, 7, 100 + seed);
            let y = random(3, 7, 200 + seed);
            let g = Array1::from_shape_fn(12, |_| rng.random_range(0.1..3.0));
            let a = u_prime_primal(x.view(), y.view(), g.view(), 0.7).unwrap();
            let b = u_prime_dual(x.view(), y.view(), g.view(), 0.7).unwrap();
            assert!((&a - &b).iter().all(|d| d.abs() < 1e-8));
        }
    }

    #[test]
    fn scalar_fixed_point() {
        // u ← 4u / (2u + 1) has fixed point 3/2
        let opts = L21Options {
            delta: 1e-14,
            max_iter: 500,
            ..L21Options::new(2.0)
        };
        let s = solve_l21(array![[1.0, -1.0]].view(), array![[2.0, -2.0]].view(), &opts).unwrap();
        assert!(s.converged);
        assert!((s.u_prime[[0, 0]] - 1.5).abs() < 1e-10, "{}", s.u_prime[[0, 0]]);
    }

    #[test]
    fn zero_gamma_is_one_step() {
        let x = random(3, 20, 6);
        let y = random(2, 20, 7);
        let s = solve_l21(x.view(), y.view(), &L21Options::new(0.0)).unwrap();
        assert!(s.converged);
        assert_eq!(s.iter, 1);
        let ls = linalg::lstsq_min_norm(x.view(), y.view()).unwrap();
        assert_eq!(s.u_prime, ls);
        assert_eq!(fit_rfs(x.view(), y.view(), &L21Options::new(0.0)).unwrap(), ls);
    }

    #[test]
    fn huge_gamma_shrinks_everything() {
        let (x, _) = linalg::center_columns(random(5, 40, 8).view());
        let (y, _) = linalg::center_columns(random(2, 40, 9).view());
        let cxy = x.dot(&y.t());
        let gamma = 1e3 * linalg::frobenius_norm(cxy.view());
        let s = solve_l21(x.view(), y.view(), &L21Options::new(gamma)).unwrap();
        for r in s.u_prime.rows() {
            assert!(r.dot(&r).sqrt() < 1e-3);
        }
    }

    #[test]
    fn objective_trace_descends() {
        for (n, samples) in [(6, 30), (30, 10)] {
            let (x, _) = linalg::center_columns(random(n, samples, 10).view());
            let (y, _) = linalg::center_columns(random(3, samples, 11).view());
            let s = solve_l21(x.view(), y.view(), &L21Options::new(1.0)).unwrap();
            for w in s.objective_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-10), "{n}x{samples}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn rfs_matches_solver() {
        let (x, _) = linalg::center_columns(random(8, 25, 12).view());
        let (y, _) = linalg::center_columns(random(2, 25, 13).view());
        let opts = L21Options::new(0.5);
        assert_eq!(
            fit_rfs(x.view(), y.view(), &opts).unwrap(),
            solve_l21(x.view(), y.view(), &opts).unwrap().u_prime
        );
    }

    #[test]
    fn rejects_bad_inputs() {
        let x = random(3, 5, 14);
        let y = random(2, 4, 15);
        assert!(solve_l21(x.view(), y.view(), &L21Options::new(1.0)).is_err());
        let y = random(2, 5, 15);
        assert!(solve_l21(x.view(), y.view(), &L21Options::new(-1.0)).is_err());
        assert!(u_prime_update(x.view(), y.view(), array![1.0, 0.0, 1.0].view(), 1.0).is_err());
    }
}
