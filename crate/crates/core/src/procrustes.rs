//! Orthogonal-Procrustes W-step and the coupled two-step fit built on it.
//!
//! This is the scheme used by SRRR and L21SDA: `V` is re-estimated inside
//! the iteration as the orthogonal factor `Q·Pᵀ` of `C_{ȲX′} = Q·Σ·Pᵀ`.
//! It does not enforce feature uncorrelation and, with `γ = 0` and an
//! orthogonal starting `V`, it cannot move away from its initialization.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{MvaError, Result};
use crate::l21;
use crate::linalg::{self, Matrix};
use crate::mva::{self, FitDiagnostics, MvaConfig, Penalty, Prepared, ProcrustesStyle};

#[derive(Debug, Clone, PartialEq)]
pub struct ProcrustesFit {
    pub u: Matrix,
    pub v: Matrix,
    /// Singular values of the last `C_{ȲX′}`.
    pub singular_values: Array1<f64>,
    pub diagnostics: FitDiagnostics,
    pub stalled: bool,
    /// `‖U₂ − U₁‖_F`, when a second iteration ran.
    pub first_step_change: Option<f64>,
}

/// Orthogonal factor `Q·Pᵀ` of `c`.
pub fn orthogonal_factor(c: ArrayView2<f64>) -> Result<Matrix> {
    let s = linalg::svd(c)?;
    Ok(s.q.dot(&s.p.t()))
}

/// `V_P = Q·Pᵀ` from the SVD of `ȳ·x′ᵀ` (`y_bar`: m × N, `x_features`: n_f × N).
pub fn w_step_procrustes(y_bar: ArrayView2<f64>, x_features: ArrayView2<f64>) -> Result<Matrix> {
    let c = linalg::covariance(y_bar, x_features)?;
    orthogonal_factor(c.view())
}

/// Coupled U-step / Procrustes W-step iteration from `V⁽⁰⁾ = I`.
pub fn fit_procrustes_mva(
    config: &MvaConfig,
    x_raw: ArrayView2<f64>,
    y_raw: Option<ArrayView2<f64>>,
) -> Result<ProcrustesFit> {
    let start = Instant::now();
    let prep = mva::prepare(config, x_raw, y_raw)?;
    let mut fit = fit_prepared(config, &prep)?;
    fit.diagnostics.fit_seconds = start.elapsed().as_secs_f64();
    Ok(fit)
}

/// State carried between outer iterations of the U-step.
struct UStepper<'a> {
    config: &'a MvaConfig,
    x: ArrayView2<'a, f64>,
    cxx: Option<Matrix>,
    g: Array1<f64>,
}

impl UStepper<'_> {
    fn cxx(&mut self) -> Result<&Matrix> {
        if self.cxx.is_none() {
            self.cxx = Some(linalg::covariance(self.x, self.x)?);
        }
        Ok(self.cxx.as_ref().unwrap())
    }

    /// Regularized least squares for target `T = Vᵀ·Y′`.
    fn step(&mut self, target: ArrayView2<f64>, warm: Option<&Matrix>, diag: &mut FitDiagnostics) -> Result<Matrix> {
        let gamma = self.config.regularizer.gamma;
        match self.config.regularizer.penalty {
            Penalty::L2 => {
                diag.inner_iters_total += 1;
                let cxt = linalg::covariance(self.x, target)?;
                let mut a = self.cxx()?.clone();
                a.diag_mut().mapv_inplace(|d| d + gamma);
                linalg::solve_spd(a.view(), cxt.view(), "ridge U-step")
            }
            Penalty::L1 => {
                let cxt = linalg::covariance(self.x, target)?;
                let cxx = self.cxx()?.clone();
                let sol = mva::u_step_l1_from_cov(
                    cxx.view(),
                    cxt.view(),
                    gamma,
                    warm,
                    self.config.inner_max_iter,
                    self.config.inner_tol,
                )?;
                diag.inner_iters_total += sol.iterations;
                Ok(sol.u)
            }
            Penalty::L21 => match self.config.procrustes_style {
                ProcrustesStyle::Nested => {
                    let state = l21::solve_l21(self.x, target, &self.config.l21_options())?;
                    diag.inner_iters_total += state.iter;
                    self.g = state.g_diag;
                    Ok(state.u_prime)
                }
                ProcrustesStyle::SingleStep => {
                    diag.inner_iters_total += 1;
                    let u = if gamma == 0.0 {
                        linalg::lstsq_min_norm(self.x, target)?
                    } else {
                        l21::u_prime_update(self.x, target, self.g.view(), gamma)?
                    };
                    self.g = l21::g_update(u.view(), self.config.row_floor);
                    Ok(u)
                }
            },
        }
    }
}

pub(crate) fn fit_prepared(config: &MvaConfig, prep: &Prepared) -> Result<ProcrustesFit> {
    let x = prep.x.view();
    let y_prime = prep.y_prime.view();
    let (n, m) = (x.nrows(), y_prime.nrows());
    let n_f = config.n_f;
    let gamma = config.regularizer.gamma;
    if n_f > m {
        return Err(MvaError::InvalidArgument(format!("n_f = {n_f} exceeds {m} outputs")));
    }

    let mut stepper = UStepper {
        config,
        x,
        cxx: None,
        g: Array1::ones(n),
    };
    let mut diagnostics = FitDiagnostics::default();
    let mut v: Matrix = Array2::eye(m).slice_move(ndarray::s![.., ..n_f]);
    let mut sigma = Array1::zeros(n_f);
    let mut u = Array2::zeros((n, n_f));
    let mut prev: Option<Matrix> = None;
    let mut stalled = false;
    let mut first_step_change = None;

    for k in 1..=config.outer_max_iter {
        diagnostics.outer_iters = k;
        let target = v.t().dot(&y_prime);
        u = stepper.step(target.view(), prev.as_ref(), &mut diagnostics)?;
        diagnostics
            .objective_trace
            .push(mva::objective(x, y_prime, u.view(), v.view(), &config.regularizer));

        let features = u.t().dot(&x);
        let c = linalg::covariance(y_prime, features.view())?;
        let s = linalg::svd(c.view())?;
        diagnostics.eig_or_svd_calls += 1;
        v = s.q.dot(&s.p.t());
        sigma = s.sigma;

        if let Some(p) = prev.as_ref() {
            let change = linalg::frobenius_norm((&u - p).view());
            let rel = change / linalg::frobenius_norm(p.view()).max(f64::MIN_POSITIVE);
            if k == 2 {
                first_step_change = Some(change);
                stalled = gamma == 0.0 && rel < config.outer_tol;
            }
            if rel < config.outer_tol {
                diagnostics.converged = true;
                break;
            }
        }
        prev = Some(u.clone());
    }
    if stalled {
        diagnostics
            .warnings
            .push("procrustes iteration did not move from its orthogonal initialization".into());
    }
    diagnostics.stalled = stalled;
    diagnostics.final_objective = mva::objective(x, y_prime, u.view(), v.view(), &config.regularizer);
    if penalty_is_l21(config) {
        diagnostics.pruned_rows = u
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(_, r)| r.dot(r).sqrt() <= config.row_floor)
            .map(|(i, _)| i)
            .collect();
    }
    Ok(ProcrustesFit {
        u,
        v,
        singular_values: sigma,
        diagnostics,
        stalled,
        first_step_change,
    })
}

fn penalty_is_l21(config: &MvaConfig) -> bool {
    config.regularizer.penalty == Penalty::L21
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mva::{Method, Regularizer, WStep};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn orthonormal_cols(v: &Matrix) -> bool {
        let g = v.t().dot(v);
        (&g - &Array2::<f64>::eye(g.nrows())).iter().all(|d| d.abs() < 1e-8)
    }

    #[test]
    fn factor_of_orthogonal_is_itself() {
        let th: f64 = 0.7;
        let r = array![[th.cos(), -th.sin()], [th.sin(), th.cos()]];
        let f = orthogonal_factor(r.view()).unwrap();
        assert!((&f - &r).iter().all(|d| d.abs() < 1e-14));
        let reflect = array![[1.0, 0.0], [0.0, -1.0]];
        let f = orthogonal_factor(reflect.view()).unwrap();
        assert!((&f - &reflect).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn factor_of_positive_diagonal_is_identity() {
        let f = orthogonal_factor(array![[2.0, 0.0], [0.0, 3.0]].view()).unwrap();
        assert!((&f - &Array2::<f64>::eye(2)).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn factor_beats_every_rotation_and_reflection_on_a_grid() {
        for seed in 0..5 {
            let c = random(2, 2, seed);
            let f = orthogonal_factor(c.view()).unwrap();
            let best = (f.t().dot(&c)).diag().sum();
            for i in 0..3600 {
                let th = i as f64 * std::f64::consts::TAU / 3600.0;
                let (s, co) = th.sin_cos();
                for cand in [array![[co, -s], [s, co]], array![[co, s], [s, -co]]] {
                    let tr = cand.t().dot(&c).diag().sum();
                    assert!(tr <= best + 1e-12);
                }
            }
        }
    }

    #[test]
    fn w_step_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let m = rng.random_range(2..6);
            let nf = rng.random_range(1..=m);
            let samples = rng.random_range(3..20);
            let y = random(m, samples, rng.random());
            let xf = random(nf, samples, rng.random());
            let v = w_step_procrustes(y.view(), xf.view()).unwrap();
            assert_eq!(v.dim(), (m, nf));
            assert!(orthonormal_cols(&v));
        }
    }

    #[test]
    fn stalls_without_regularization() {
        let x = random(5, 40, 1);
        let y = random(3, 40, 2);
        let cfg = MvaConfig::new(Method::Opls, Regularizer::new(Penalty::L2, 0.0), 3).with_w_step(WStep::Procrustes);
        let fit = fit_procrustes_mva(&cfg, x.view(), Some(y.view())).unwrap();
        assert!(fit.stalled);
        assert!(fit.first_step_change.unwrap() < 1e-10);
        assert_eq!(fit.diagnostics.eig_or_svd_calls, fit.diagnostics.outer_iters);
    }

    #[test]
    fn regularized_fits_keep_v_orthonormal() {
        let x = random(8, 30, 3);
        let y = random(4, 30, 4);
        for penalty in [Penalty::L2, Penalty::L1, Penalty::L21] {
            for style in [ProcrustesStyle::Nested, ProcrustesStyle::SingleStep] {
                let mut cfg = MvaConfig::new(Method::Opls, Regularizer::new(penalty, 2.0), 2)
                    .with_w_step(WStep::Procrustes);
                cfg.procrustes_style = style;
                let fit = fit_procrustes_mva(&cfg, x.view(), Some(y.view())).unwrap();
                assert!(orthonormal_cols(&fit.v));
                assert!(!fit.stalled);
                assert_eq!(fit.diagnostics.eig_or_svd_calls, fit.diagnostics.outer_iters);
            }
        }
    }

    #[test]
    fn nested_style_costs_more_inner_iterations() {
        let x = random(10, 30, 5);
        let y = random(3, 30, 6);
        let mut cfg = MvaConfig::new(Method::Opls, Regularizer::new(Penalty::L21, 5.0), 2)
            .with_w_step(WStep::Procrustes);
        let nested = fit_procrustes_mva(&cfg, x.view(), Some(y.view())).unwrap();
        cfg.procrustes_style = ProcrustesStyle::SingleStep;
        let single = fit_procrustes_mva(&cfg, x.view(), Some(y.view())).unwrap();
        let per_outer = |f: &ProcrustesFit| f.diagnostics.inner_iters_total as f64 / f.diagnostics.outer_iters as f64;
        assert_eq!(per_outer(&single), 1.0);
        assert!(per_outer(&nested) > 1.0);
    }
}
