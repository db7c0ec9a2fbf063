//! Metrics and experiment protocols: feature correlation, least-squares
//! regression and classification scores, k-fold cross-validation over `γ`,
//! and paired Eigen/Procrustes runs.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MvaError, Result};
use crate::linalg::{self, Matrix};
use crate::mva::{self, MvaConfig, MvaModel, WStep};
use crate::persist;
use crate::selection;

/// Ridge used when scoring inside cross-validation, where extracted features
/// may be exactly zero.
pub const CV_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    #[serde(with = "persist::matrix")]
    pub corr: Matrix,
    /// Mean squared off-diagonal correlation; 0 for a single feature.
    pub offdiag_energy: f64,
    /// Feature rows with zero variance.
    pub zero_variance: Vec<usize>,
}

/// Pearson correlation between the rows of `features` (`n_f × samples`).
pub fn feature_correlation(features: ArrayView2<f64>) -> Result<CorrelationReport> {
    let (k, samples) = features.dim();
    if samples < 2 {
        return Err(MvaError::InvalidArgument("correlation needs at least two samples".into()));
    }
    linalg::ensure_finite(features, "features")?;
    let (centered, _) = linalg::center_columns(features);
    let cov = centered.dot(&centered.t());
    let scale = cov.diag().iter().cloned().fold(0.0_f64, f64::max);
    let zero_variance: Vec<usize> = (0..k)
        .filter(|&i| cov[[i, i]] <= f64::EPSILON * f64::EPSILON * scale)
        .collect();
    let mut corr = Array2::zeros((k, k));
    for i in 0..k {
        corr[[i, i]] = 1.0;
        if zero_variance.contains(&i) {
            continue;
        }
        for j in 0..i {
            if zero_variance.contains(&j) {
                continue;
            }
            let r = cov[[i, j]] / (cov[[i, i]] * cov[[j, j]]).sqrt();
            corr[[i, j]] = r;
            corr[[j, i]] = r;
        }
    }
    let offdiag_energy = if k > 1 {
        let total: f64 = corr.iter().map(|v| v * v).sum::<f64>() - k as f64;
        total.max(0.0) / (k * (k - 1)) as f64
    } else {
        0.0
    };
    Ok(CorrelationReport { corr, offdiag_energy, zero_variance })
}

struct LinearFit {
    coef: Matrix,
    feature_means: Array1<f64>,
    target_means: Array1<f64>,
}

impl LinearFit {
    fn new(features: ArrayView2<f64>, targets: ArrayView2<f64>, ridge: f64) -> Result<Self> {
        if features.ncols() != targets.ncols() {
            return Err(MvaError::DimensionMismatch(format!(
                "{} feature samples vs {} target samples",
                features.ncols(),
                targets.ncols()
            )));
        }
        if !(ridge >= 0.0) {
            return Err(MvaError::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
        }
        if features.ncols() == 0 {
            return Err(MvaError::InvalidArgument("no training samples".into()));
        }
        let (f, fm) = linalg::center_columns(features);
        let (t, tm) = linalg::center_columns(targets);
        let k = f.nrows();
        let coef = if k == 0 {
            Array2::zeros((0, t.nrows()))
        } else {
            let mut a = f.dot(&f.t());
            a.diag_mut().mapv_inplace(|d| d + ridge);
            linalg::solve_spd(a.view(), f.dot(&t.t()).view(), "least-squares scoring")?
        };
        Ok(LinearFit { coef, feature_means: fm, target_means: tm })
    }

    fn predict(&self, features: ArrayView2<f64>) -> Result<Matrix> {
        if features.nrows() != self.feature_means.len() {
            return Err(MvaError::DimensionMismatch(format!(
                "scoring expects {} features, got {}",
                self.feature_means.len(),
                features.nrows()
            )));
        }
        let centered = &features - &self.feature_means.view().insert_axis(Axis(1));
        Ok(self.coef.t().dot(&centered) + self.target_means.view().insert_axis(Axis(1)))
    }
}

/// Test mean squared error (averaged over all entries) of a least-squares
/// model with intercept fitted on the training features.
pub fn mse_ls(
    train_features: ArrayView2<f64>,
    y_train: ArrayView2<f64>,
    test_features: ArrayView2<f64>,
    y_test: ArrayView2<f64>,
    ridge: f64,
) -> Result<f64> {
    if y_train.nrows() != y_test.nrows() || test_features.ncols() != y_test.ncols() {
        return Err(MvaError::DimensionMismatch("train/test outputs disagree".into()));
    }
    let model = LinearFit::new(train_features, y_train, ridge)?;
    let pred = model.predict(test_features)?;
    let n = y_test.len();
    if n == 0 {
        return Err(MvaError::InvalidArgument("empty test set".into()));
    }
    Ok((&pred - &y_test).iter().map(|v| v * v).sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    /// Overall accuracy: fraction of test samples classified correctly.
    pub accuracy: f64,
    pub classes: Vec<usize>,
    pub predictions: Vec<usize>,
    /// Test labels never seen in training; their samples count as errors.
    pub unseen_labels: Vec<usize>,
}

/// `k × samples` one-hot matrix over the sorted `classes`.
pub fn one_hot(labels: &[usize], classes: &[usize]) -> Matrix {
    let mut out = Array2::zeros((classes.len(), labels.len()));
    for (s, l) in labels.iter().enumerate() {
        if let Ok(c) = classes.binary_search(l) {
            out[[c, s]] = 1.0;
        }
    }
    out
}

pub fn distinct_labels(labels: &[usize]) -> Vec<usize> {
    labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// One-hot least-squares classifier; predicts the arg-max score (first on ties).
pub fn classify_lsq(
    train_features: ArrayView2<f64>,
    labels_train: &[usize],
    test_features: ArrayView2<f64>,
    labels_test: &[usize],
    ridge: f64,
) -> Result<ClassificationReport> {
    if labels_test.len() != test_features.ncols() {
        return Err(MvaError::DimensionMismatch("test labels vs test samples".into()));
    }
    if labels_test.is_empty() {
        return Err(MvaError::InvalidArgument("empty test set".into()));
    }
    let classes = distinct_labels(labels_train);
    if classes.len() < 2 {
        return Err(MvaError::InvalidArgument("training data must contain at least two classes".into()));
    }
    let model = LinearFit::new(train_features, one_hot(labels_train, &classes).view(), ridge)?;
    let scores = model.predict(test_features)?;
    let predictions: Vec<usize> = scores
        .columns()
        .into_iter()
        .map(|col| {
            let mut best = 0;
            for (c, &v) in col.iter().enumerate() {
                if v > col[best] {
                    best = c;
                }
            }
            classes[best]
        })
        .collect();
    let correct = predictions.iter().zip(labels_test).filter(|(p, l)| p == l).count();
    let unseen_labels = distinct_labels(labels_test)
        .into_iter()
        .filter(|l| classes.binary_search(l).is_err())
        .collect();
    Ok(ClassificationReport {
        accuracy: correct as f64 / labels_test.len() as f64,
        classes,
        predictions,
        unseen_labels,
    })
}

/// `{1, 5}·10^k` for `k = −6..=2`, then 1000.
pub fn default_gamma_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (-6..=2)
        .flat_map(|k| {
            let base = 10f64.powi(k);
            [base, 5.0 * base]
        })
        .collect();
    grid.push(1000.0);
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Lower is better.
    Mse,
    /// Higher is better.
    Accuracy,
}

#[derive(Debug, Clone)]
pub enum CvTarget {
    /// `m × samples` outputs scored by MSE.
    Regression(Matrix),
    /// Class index per sample scored by accuracy; the model sees one-hot outputs.
    Classification(Vec<usize>),
}

impl CvTarget {
    fn n_samples(&self) -> usize {
        match self {
            CvTarget::Regression(y) => y.ncols(),
            CvTarget::Classification(l) => l.len(),
        }
    }

    pub fn metric(&self) -> Metric {
        match self {
            CvTarget::Regression(_) => Metric::Mse,
            CvTarget::Classification(_) => Metric::Accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvProtocol {
    pub kfold: usize,
    pub seed: u64,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub grid: Vec<f64>,
    /// Grid points × evaluated folds.
    #[serde(with = "persist::matrix")]
    pub fold_scores: Matrix,
    pub mean_scores: Vec<f64>,
    pub best_gamma: f64,
    pub best_index: usize,
    pub protocol: CvProtocol,
    pub evaluated_folds: Vec<usize>,
    /// Folds whose training part held a single class.
    pub skipped_folds: Vec<usize>,
}

/// Seeded partition of `0..n` into `k` validation folds whose sizes differ by at most one.
pub fn kfold_indices(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(MvaError::InvalidArgument(format!("need 2 <= k <= {n}, got k = {k}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = perm[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

fn complement(n: usize, fold: &[usize]) -> Vec<usize> {
    let held: BTreeSet<usize> = fold.iter().copied().collect();
    (0..n).filter(|i| !held.contains(i)).collect()
}

fn fold_score(
    config: &MvaConfig,
    x: ArrayView2<f64>,
    target: &CvTarget,
    train: &[usize],
    valid: &[usize],
) -> Result<f64> {
    let x_tr = x.select(Axis(1), train);
    let x_va = x.select(Axis(1), valid);
    match target {
        CvTarget::Regression(y) => {
            let y_tr = y.select(Axis(1), train);
            let y_va = y.select(Axis(1), valid);
            let model = mva::fit(config, x_tr.view(), Some(y_tr.view()))?;
            mse_ls(
                model.transform(x_tr.view())?.view(),
                y_tr.view(),
                model.transform(x_va.view())?.view(),
                y_va.view(),
                CV_RIDGE,
            )
        }
        CvTarget::Classification(labels) => {
            let l_tr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let l_va: Vec<usize> = valid.iter().map(|&i| labels[i]).collect();
            let y_tr = one_hot(&l_tr, &distinct_labels(&l_tr));
            let model = mva::fit(config, x_tr.view(), Some(y_tr.view()))?;
            Ok(classify_lsq(
                model.transform(x_tr.view())?.view(),
                &l_tr,
                model.transform(x_va.view())?.view(),
                &l_va,
                CV_RIDGE,
            )?
            .accuracy)
        }
    }
}

/// k-fold cross-validation of `template` over `grid` (only `γ` varies).
/// Grid points and folds run in parallel; results are reduced in grid/fold order.
pub fn cross_validate(
    template: &MvaConfig,
    x: ArrayView2<f64>,
    target: &CvTarget,
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    if grid.is_empty() {
        return Err(MvaError::InvalidArgument("gamma grid is empty".into()));
    }
    if let Some(g) = grid.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(MvaError::InvalidArgument(format!("invalid gamma {g} in grid")));
    }
    let n = x.ncols();
    if target.n_samples() != n {
        return Err(MvaError::DimensionMismatch(format!(
            "x has {n} samples, target has {}",
            target.n_samples()
        )));
    }
    let folds = kfold_indices(n, k, seed)?;
    let mut evaluated = Vec::new();
    let mut skipped = Vec::new();
    let mut splits = Vec::new();
    for (f, valid) in folds.iter().enumerate() {
        let train = complement(n, valid);
        if let CvTarget::Classification(labels) = target {
            let l_tr: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            if distinct_labels(&l_tr).len() < 2 {
                skipped.push(f);
                continue;
            }
        }
        evaluated.push(f);
        splits.push((train, valid.clone()));
    }
    if evaluated.is_empty() {
        return Err(MvaError::InvalidArgument("every fold was skipped".into()));
    }

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..splits.len()).map(move |s| (g, s)))
        .collect();
    let scores: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, s)| {
            let config = template.clone().with_gamma(grid[g]);
            fold_score(&config, x, target, &splits[s].0, &splits[s].1)
        })
        .collect::<Result<Vec<_>>>()?;
    let fold_scores = Array2::from_shape_vec((grid.len(), splits.len()), scores)
        .expect("one score per grid point and fold");
    if let Some(bad) = fold_scores.iter().find(|v| !v.is_finite()) {
        return Err(MvaError::NonFinite(if bad.is_nan() { "cv score (NaN)" } else { "cv score (inf)" }));
    }
    let mean_scores: Vec<f64> = fold_scores.mean_axis(Axis(1)).expect("non-empty").to_vec();

    let metric = target.metric();
    let better = |a: f64, b: f64| match metric {
        Metric::Mse => a < b,
        Metric::Accuracy => a > b,
    };
    // visit by increasing γ so exact ties keep the smaller value
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].total_cmp(&grid[b]));
    let mut best_index = order[0];
    for &i in &order[1..] {
        if better(mean_scores[i], mean_scores[best_index]) {
            best_index = i;
        }
    }
    Ok(CvResult {
        grid: grid.to_vec(),
        fold_scores,
        mean_scores,
        best_gamma: grid[best_index],
        best_index,
        protocol: CvProtocol { kfold: k, seed, metric },
        evaluated_folds: evaluated,
        skipped_folds: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub w_step: WStep,
    /// Reported separately from the deterministic fields; not serialized.
    #[serde(skip)]
    pub fit_seconds: f64,
    pub eig_or_svd_calls: usize,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub converged: bool,
    pub stalled: bool,
    pub offdiag_energy: f64,
    pub objective: f64,
    pub selected_fraction: f64,
}

impl RunSummary {
    pub fn from_model(model: &MvaModel, x_train: ArrayView2<f64>) -> Result<Self> {
        let features = model.transform(x_train)?;
        let d = &model.diagnostics;
        Ok(RunSummary {
            w_step: model.config.w_step,
            fit_seconds: d.fit_seconds,
            eig_or_svd_calls: d.eig_or_svd_calls,
            outer_iters: d.outer_iters,
            inner_iters_total: d.inner_iters_total,
            converged: d.converged,
            stalled: d.stalled,
            offdiag_energy: feature_correlation(features.view())?.offdiag_energy,
            objective: d.final_objective,
            selected_fraction: selection::sparsity_pattern(model.u.view(), selection::DEFAULT_THRESHOLD)?.1,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub eigen: RunSummary,
    pub procrustes: RunSummary,
}

/// Fits both W-step modes on the same data. The runs are sequential so that
/// their wall-clock times are comparable.
pub fn compare_runs(
    x: ArrayView2<f64>,
    y: Option<ArrayView2<f64>>,
    config_eigen: &MvaConfig,
    config_procrustes: &MvaConfig,
) -> Result<CompareReport> {
    if config_eigen.w_step != WStep::Eigen || config_procrustes.w_step != WStep::Procrustes {
        return Err(MvaError::InvalidArgument(
            "compare needs one eigen and one procrustes configuration".into(),
        ));
    }
    let mut aligned = config_procrustes.clone();
    aligned.w_step = WStep::Eigen;
    aligned.procrustes_style = config_eigen.procrustes_style;
    if &aligned != config_eigen {
        return Err(MvaError::InvalidArgument(
            "paired configurations may differ only in the W-step".into(),
        ));
    }
    let eigen = mva::fit(config_eigen, x, y)?;
    let procrustes = mva::fit(config_procrustes, x, y)?;
    Ok(CompareReport {
        eigen: RunSummary::from_model(&eigen, x)?,
        procrustes: RunSummary::from_model(&procrustes, x)?,
    })
}
