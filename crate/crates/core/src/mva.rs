//! Regularized MVA framework: configuration, model, target construction,
//! objective, U-steps, the eigenvalue W-step and fit/transform.
//!
//! The problem solved is
//!
//! ```text
//! minimize_{U,V}  ‖Y′ − V·Uᵀ·X‖²_F + γ·R(U)   subject to  VᵀV = I
//! ```
//!
//! with `Y′ = Ω^{1/2}·Y`, where `Ω = I` for OPLS, `Ω = I` and `Y = X` for PCA,
//! and `Ω = C_YY⁻¹` for CCA. The W-step picks `V` as the leading eigenvectors
//! of `C_XY′ᵀ·U·Uᵀ·C_XY′`, which keeps the extracted features `Uᵀ·X`
//! uncorrelated when `γ = 0`.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MvaError, Result};
use crate::l21::{self, L21Options};
use crate::linalg::{self, Matrix};
use crate::persist;
use crate::procrustes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pca,
    Opls,
    Cca,
}

impl Method {
    /// PCA reconstructs the input itself and never reads an output matrix.
    pub fn uses_output(self) -> bool {
        !matches!(self, Method::Pca)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Penalty {
    /// Squared Frobenius norm (ridge).
    L2,
    /// Elementwise absolute sum (lasso).
    L1,
    /// Sum of row-wise ℓ2 norms; zeroes whole rows of `U`.
    L21,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularizer {
    pub penalty: Penalty,
    pub gamma: f64,
}

impl Regularizer {
    pub fn new(penalty: Penalty, gamma: f64) -> Self {
        Regularizer { penalty, gamma }
    }

    /// `R(U)` without the `γ` weight.
    pub fn penalty_value(&self, u: ArrayView2<f64>) -> f64 {
        match self.penalty {
            Penalty::L2 => u.iter().map(|v| v * v).sum(),
            Penalty::L1 => u.iter().map(|v| v.abs()).sum(),
            Penalty::L21 => l21::l21_norm(u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum WStep {
    Eigen,
    Procrustes,
}

/// Loop nesting used by the Procrustes baseline for the ℓ2,1 penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProcrustesStyle {
    /// Full reweighting loop (restarted from `G = I`) inside every outer iteration.
    Nested,
    /// One reweighting step per outer iteration, `G` carried across iterations.
    SingleStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvaConfig {
    pub method: Method,
    pub regularizer: Regularizer,
    pub n_f: usize,
    pub w_step: WStep,
    pub procrustes_style: ProcrustesStyle,
    pub outer_max_iter: usize,
    pub outer_tol: f64,
    pub inner_max_iter: usize,
    /// Stopping threshold `δ` on `|tr G⁽ᵏ⁾ − tr G⁽ᵏ⁻¹⁾|` (and on iterate change for ℓ1).
    pub inner_tol: f64,
    /// Ridge added to the eigenvalues of `C_YY` before inverting its square root (CCA).
    pub ridge_eps: f64,
    /// Floor on row norms inside the ℓ2,1 reweighting.
    pub row_floor: f64,
    pub seed: u64,
}

impl MvaConfig {
    pub fn new(method: Method, regularizer: Regularizer, n_f: usize) -> Self {
        MvaConfig {
            method,
            regularizer,
            n_f,
            w_step: WStep::Eigen,
            procrustes_style: ProcrustesStyle::Nested,
            outer_max_iter: 50,
            outer_tol: 1e-6,
            inner_max_iter: 50,
            inner_tol: 1e-6,
            ridge_eps: 1e-10,
            row_floor: l21::DEFAULT_ROW_FLOOR,
            seed: 0,
        }
    }

    pub fn with_w_step(mut self, w_step: WStep) -> Self {
        self.w_step = w_step;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.regularizer.gamma = gamma;
        self
    }

    pub fn l21_options(&self) -> L21Options {
        L21Options {
            gamma: self.regularizer.gamma,
            delta: self.inner_tol,
            max_iter: self.inner_max_iter,
            eps: self.row_floor,
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let gamma = self.regularizer.gamma;
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(MvaError::InvalidArgument(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        if self.n_f == 0 || self.n_f > n.min(m) {
            return Err(MvaError::InvalidArgument(format!(
                "n_f = {} must lie in 1..={} (min of {n} inputs and {m} outputs)",
                self.n_f,
                n.min(m)
            )));
        }
        for (name, v) in [
            ("outer_tol", self.outer_tol),
            ("inner_tol", self.inner_tol),
            ("row_floor", self.row_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(MvaError::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.ridge_eps >= 0.0 && self.ridge_eps.is_finite()) {
            return Err(MvaError::InvalidArgument("ridge_eps must be >= 0".into()));
        }
        if self.outer_max_iter == 0 || self.inner_max_iter == 0 {
            return Err(MvaError::InvalidArgument("iteration caps must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub converged: bool,
    /// Procrustes mode only: `U` did not move between the first two iterations at `γ = 0`.
    pub stalled: bool,
    /// Number of W-step eigendecompositions or SVDs.
    pub eig_or_svd_calls: usize,
    /// Rows of `U` whose norm sits at the ℓ2,1 floor.
    pub pruned_rows: Vec<usize>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds spent in `fit`; not persisted with the model.
    #[serde(skip)]
    pub fit_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MvaModel {
    #[serde(with = "persist::matrix")]
    pub u: Matrix,
    #[serde(with = "persist::matrix")]
    pub v: Matrix,
    #[serde(with = "persist::vector")]
    pub eigenvalues: Array1<f64>,
    #[serde(with = "persist::vector")]
    pub input_means: Array1<f64>,
    #[serde(with = "persist::vector")]
    pub output_means: Array1<f64>,
    pub config: MvaConfig,
    pub diagnostics: FitDiagnostics,
}

impl MvaModel {
    pub fn n_inputs(&self) -> usize {
        self.u.nrows()
    }

    /// Projects raw (uncentered) data: `Uᵀ·(x − means)`, giving `n_f × samples`.
    pub fn transform(&self, x_raw: ArrayView2<f64>) -> Result<Matrix> {
        if x_raw.nrows() != self.u.nrows() {
            return Err(MvaError::DimensionMismatch(format!(
                "model expects {} input variables, got {}",
                self.u.nrows(),
                x_raw.nrows()
            )));
        }
        linalg::ensure_finite(x_raw, "transform input")?;
        let centered = &x_raw - &self.input_means.view().insert_axis(Axis(1));
        Ok(self.u.t().dot(&centered))
    }
}

/// `Ω^{1/2}`: identity for PCA/OPLS, `C_YY^{-1/2}` for CCA.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaSqrt {
    Identity,
    Matrix(Matrix),
}

/// Builds `Y′ = Ω^{1/2}·Y` for centered `x` and `y`.
pub fn build_target(
    method: Method,
    x: ArrayView2<f64>,
    y: Option<ArrayView2<f64>>,
    ridge_eps: f64,
) -> Result<(Matrix, OmegaSqrt)> {
    match method {
        Method::Pca => Ok((x.to_owned(), OmegaSqrt::Identity)),
        Method::Opls | Method::Cca => {
            let y = y.ok_or_else(|| {
                MvaError::InvalidArgument(format!("{method:?} needs an output matrix"))
            })?;
            if y.ncols() != x.ncols() {
                return Err(MvaError::DimensionMismatch(format!(
                    "x has {} samples, y has {}",
                    x.ncols(),
                    y.ncols()
                )));
            }
            if method == Method::Opls {
                return Ok((y.to_owned(), OmegaSqrt::Identity));
            }
            let cyy = linalg::covariance(y, y)?;
            let omega = linalg::inv_sqrt_psd(cyy.view(), ridge_eps)?;
            Ok((omega.dot(&y), OmegaSqrt::Matrix(omega)))
        }
    }
}

/// `‖Y′ − V·Uᵀ·X‖²_F + γ·R(U)`.
pub fn objective(
    x: ArrayView2<f64>,
    y_prime: ArrayView2<f64>,
    u: ArrayView2<f64>,
    v: ArrayView2<f64>,
    regularizer: &Regularizer,
) -> f64 {
    let recon = v.dot(&u.t().dot(&x));
    let misfit: f64 = y_prime
        .iter()
        .zip(recon.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let penalty = if regularizer.gamma == 0.0 {
        0.0
    } else {
        regularizer.gamma * regularizer.penalty_value(u)
    };
    misfit + penalty
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenWStep {
    /// `m × n_f`, orthonormal columns.
    pub v: Matrix,
    /// Square roots of the leading eigenvalues of `M`.
    pub lambda: Array1<f64>,
    /// `n_f` exceeded the numerical rank of `M`.
    pub rank_deficient: bool,
}

/// Leading `n_f` eigenvectors of `M = C_XY′ᵀ·U·Uᵀ·C_XY′`.
pub fn w_step_eigen(c_xy_prime: ArrayView2<f64>, u: ArrayView2<f64>, n_f: usize) -> Result<EigenWStep> {
    if c_xy_prime.nrows() != u.nrows() {
        return Err(MvaError::DimensionMismatch(format!(
            "C_XY' has {} rows, U has {}",
            c_xy_prime.nrows(),
            u.nrows()
        )));
    }
    let b = u.t().dot(&c_xy_prime);
    let m = b.t().dot(&b);
    let eig = linalg::sym_eig(m.view(), n_f)?;
    let top = eig.values.iter().fold(0.0_f64, |a, v| a.max(*v));
    let cut = 1e-12 * top.max(f64::MIN_POSITIVE) * c_xy_prime.ncols() as f64;
    let rank_deficient = top == 0.0 || eig.values.iter().any(|&l| l <= cut);
    let lambda = eig.values.mapv(|l| l.max(0.0).sqrt());
    Ok(EigenWStep {
        v: eig.vectors,
        lambda,
        rank_deficient,
    })
}

/// Ridge U-step: `(C_XX + γI)⁻¹·C_XY′`.
pub fn u_step_l2(x: ArrayView2<f64>, y_prime: ArrayView2<f64>, gamma: f64) -> Result<Matrix> {
    let cxx = linalg::covariance(x, x)?;
    let cxy = linalg::covariance(x, y_prime)?;
    u_step_l2_from_cov(cxx, cxy.view(), gamma)
}

fn u_step_l2_from_cov(mut cxx: Matrix, cxy: ArrayView2<f64>, gamma: f64) -> Result<Matrix> {
    cxx.diag_mut().mapv_inplace(|d| d + gamma);
    linalg::solve_spd(cxx.view(), cxy, "ridge U-step")
}

#[derive(Debug, Clone, PartialEq)]
pub struct L1Solution {
    pub u: Matrix,
    pub iterations: usize,
    pub converged: bool,
}

/// Lasso U-step `argmin ‖Y′ − Uᵀ·X‖²_F + γ‖U‖₁` by accelerated proximal
/// gradient with step `1/L`, `L = λ_max(2·C_XX)`.
pub fn u_step_l1(
    x: ArrayView2<f64>,
    y_prime: ArrayView2<f64>,
    gamma: f64,
    max_iter: usize,
    tol: f64,
) -> Result<L1Solution> {
    let cxx = linalg::covariance(x, x)?;
    let cxy = linalg::covariance(x, y_prime)?;
    u_step_l1_from_cov(cxx.view(), cxy.view(), gamma, None, max_iter, tol)
}

fn lipschitz(cxx: ArrayView2<f64>) -> Result<f64> {
    let n = cxx.nrows();
    if n <= 400 {
        return Ok(2.0 * linalg::sym_eig(cxx, 1)?.values[0].max(0.0));
    }
    // power iteration, padded because it approaches λ_max from below
    let mut v = Array1::from_iter((0..n).map(|i| 1.0 + 1e-3 * (i % 7) as f64));
    let mut lam = 0.0;
    for _ in 0..500 {
        let w = cxx.dot(&v);
        let nrm = w.dot(&w).sqrt();
        if nrm == 0.0 {
            return Ok(0.0);
        }
        let next = v.dot(&w) / v.dot(&v);
        v = w / nrm;
        if (next - lam).abs() <= 1e-10 * next.abs() {
            lam = next;
            break;
        }
        lam = next;
    }
    Ok(2.0 * lam * 1.01)
}

pub(crate) fn u_step_l1_from_cov(
    cxx: ArrayView2<f64>,
    cxy: ArrayView2<f64>,
    gamma: f64,
    warm: Option<&Matrix>,
    max_iter: usize,
    tol: f64,
) -> Result<L1Solution> {
    let lip = lipschitz(cxx)?;
    let mut u = warm.cloned().unwrap_or_else(|| Array2::zeros(cxy.dim()));
    if lip == 0.0 {
        return Ok(L1Solution {
            u: Array2::zeros(cxy.dim()),
            iterations: 0,
            converged: true,
        });
    }
    let shrink = gamma / lip;
    let mut z = u.clone();
    let mut t = 1.0_f64;
    for it in 1..=max_iter {
        let grad = (cxx.dot(&z) - cxy) * 2.0;
        let mut next = z - &(grad / lip);
        next.mapv_inplace(|v| v.signum() * (v.abs() - shrink).max(0.0));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let step = &next - &u;
        let change = linalg::frobenius_norm(step.view());
        z = &next + &(step * ((t - 1.0) / t_next));
        u = next;
        t = t_next;
        if change < tol {
            return Ok(L1Solution {
                u,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(L1Solution {
        u,
        iterations: max_iter,
        converged: false,
    })
}

/// Centered data plus the target `Y′`.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub x: Matrix,
    pub y_prime: Matrix,
    pub input_means: Array1<f64>,
    pub output_means: Array1<f64>,
}

pub(crate) fn prepare(
    config: &MvaConfig,
    x_raw: ArrayView2<f64>,
    y_raw: Option<ArrayView2<f64>>,
) -> Result<Prepared> {
    linalg::ensure_non_empty(x_raw, "input matrix")?;
    linalg::ensure_finite(x_raw, "input matrix")?;
    if x_raw.ncols() < 2 {
        return Err(MvaError::InvalidArgument("at least two samples are required".into()));
    }
    let (x, input_means) = linalg::center_columns(x_raw);
    let (y_centered, output_means) = if config.method.uses_output() {
        let y = y_raw.ok_or_else(|| {
            MvaError::InvalidArgument(format!("{:?} needs an output matrix", config.method))
        })?;
        linalg::ensure_non_empty(y, "output matrix")?;
        linalg::ensure_finite(y, "output matrix")?;
        if y.ncols() != x_raw.ncols() {
            return Err(MvaError::DimensionMismatch(format!(
                "x has {} samples, y has {}",
                x_raw.ncols(),
                y.ncols()
            )));
        }
        let (c, mu) = linalg::center_columns(y);
        (Some(c), mu)
    } else {
        (None, input_means.clone())
    };
    let (y_prime, _omega) = build_target(
        config.method,
        x.view(),
        y_centered.as_ref().map(|y| y.view()),
        config.ridge_eps,
    )?;
    config.validate(x.nrows(), y_prime.nrows())?;
    Ok(Prepared {
        x,
        y_prime,
        input_means,
        output_means,
    })
}

/// Fits a regularized MVA model on raw data (`x_raw`: n × N, `y_raw`: m × N;
/// `y_raw` is ignored for PCA).
pub fn fit(config: &MvaConfig, x_raw: ArrayView2<f64>, y_raw: Option<ArrayView2<f64>>) -> Result<MvaModel> {
    let start = Instant::now();
    let prep = prepare(config, x_raw, y_raw)?;
    let (u, v, eigenvalues, mut diagnostics) = match (config.w_step, config.regularizer.penalty) {
        (WStep::Procrustes, _) => {
            let pf = procrustes::fit_prepared(config, &prep)?;
            (pf.u, pf.v, pf.singular_values, pf.diagnostics)
        }
        (WStep::Eigen, Penalty::L21) => fit_l21_decoupled(config, &prep)?,
        (WStep::Eigen, _) => fit_alternating(config, &prep)?,
    };
    diagnostics.fit_seconds = start.elapsed().as_secs_f64();
    Ok(MvaModel {
        u,
        v,
        eigenvalues,
        input_means: prep.input_means,
        output_means: prep.output_means,
        config: config.clone(),
        diagnostics,
    })
}

type FitParts = (Matrix, Matrix, Array1<f64>, FitDiagnostics);

fn rank_warning(n_f: usize) -> String {
    format!("n_f = {n_f} exceeds the numerical rank of the W-step matrix")
}

fn fit_l21_decoupled(config: &MvaConfig, prep: &Prepared) -> Result<FitParts> {
    let state = l21::solve_l21(prep.x.view(), prep.y_prime.view(), &config.l21_options())?;
    let cxy = linalg::covariance(prep.x.view(), prep.y_prime.view())?;
    let ws = w_step_eigen(cxy.view(), state.u_prime.view(), config.n_f)?;
    let u = state.u_prime.dot(&ws.v);
    let mut diagnostics = FitDiagnostics {
        final_objective: objective(prep.x.view(), prep.y_prime.view(), u.view(), ws.v.view(), &config.regularizer),
        objective_trace: state.objective_trace,
        outer_iters: 1,
        inner_iters_total: state.iter,
        converged: state.converged,
        eig_or_svd_calls: 1,
        pruned_rows: state.pruned,
        ..Default::default()
    };
    if ws.rank_deficient {
        diagnostics.warnings.push(rank_warning(config.n_f));
    }
    Ok((u, ws.v, ws.lambda, diagnostics))
}

/// Alternates U-step and eigen W-step for the ridge and lasso penalties.
///
/// The first U-step uses the full `V = I_m`; subsequent steps use the
/// `m × n_f` output of the W-step.
fn fit_alternating(config: &MvaConfig, prep: &Prepared) -> Result<FitParts> {
    let x = prep.x.view();
    let y_prime = prep.y_prime.view();
    let m = y_prime.nrows();
    let n_f = config.n_f;
    let gamma = config.regularizer.gamma;
    let cxx = linalg::covariance(x, x)?;
    let cxy = linalg::covariance(x, y_prime)?;

    let mut diagnostics = FitDiagnostics::default();
    let mut v: Matrix = Array2::eye(m);
    let mut lambda = Array1::zeros(n_f);
    let mut prev: Option<Matrix> = None;

    let u_step = |v: &Matrix, warm: Option<&Matrix>, diag: &mut FitDiagnostics| -> Result<Matrix> {
        let cxt = cxy.dot(v);
        match config.regularizer.penalty {
            Penalty::L2 => u_step_l2_from_cov(cxx.clone(), cxt.view(), gamma),
            _ => {
                let sol = u_step_l1_from_cov(
                    cxx.view(),
                    cxt.view(),
                    gamma,
                    warm,
                    config.inner_max_iter,
                    config.inner_tol,
                )?;
                diag.inner_iters_total += sol.iterations;
                Ok(sol.u)
            }
        }
    };

    let mut u = Array2::zeros((x.nrows(), m));
    for k in 1..=config.outer_max_iter {
        diagnostics.outer_iters = k;
        let warm = prev.as_ref().filter(|p| p.ncols() == v.ncols());
        u = u_step(&v, warm, &mut diagnostics)?;
        if config.regularizer.penalty == Penalty::L2 {
            diagnostics.inner_iters_total += 1;
        }
        if u.ncols() == n_f {
            diagnostics
                .objective_trace
                .push(objective(x, y_prime, u.view(), v.view(), &config.regularizer));
        }
        if let Some(p) = prev.as_ref().filter(|p| p.dim() == u.dim()) {
            let change = linalg::frobenius_norm((&u - p).view());
            let scale = linalg::frobenius_norm(p.view()).max(f64::MIN_POSITIVE);
            if change / scale < config.outer_tol {
                diagnostics.converged = true;
                break;
            }
        }
        let ws = w_step_eigen(cxy.view(), u.view(), n_f)?;
        diagnostics.eig_or_svd_calls += 1;
        if ws.rank_deficient && diagnostics.warnings.is_empty() {
            diagnostics.warnings.push(rank_warning(n_f));
        }
        v = ws.v;
        lambda = ws.lambda;
        prev = Some(u.clone());
    }
    if !diagnostics.converged || u.ncols() != n_f {
        let warm = prev.as_ref().filter(|p| p.ncols() == n_f);
        u = u_step(&v, warm, &mut diagnostics)?;
    }
    diagnostics.final_objective = objective(x, y_prime, u.view(), v.view(), &config.regularizer);
    Ok((u, v, lambda, diagnostics))
}
