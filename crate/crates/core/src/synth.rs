//! Synthetic regression problem with relevant, redundant and noisy inputs,
//! plus a seeded train/test split with train-fitted standardization.
//!
//! All draws come from `ChaCha8Rng::seed_from_u64(seed)` in this order:
//! `W_relev` (row-major, uniform(−1, 1)), the relevant variances
//! (uniform on (0, 4]), the mixing matrix (row-major, uniform(−1, 1)), the
//! relevant samples (row-major, standard normal scaled by the standard
//! deviation), the noisy samples (row-major, standard normal) and finally the
//! output noise (row-major, normal with variance `noise_var`).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MvaError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub n_relev: usize,
    pub n_redund: usize,
    pub n_noisy: usize,
    pub m: usize,
    pub n_samples: usize,
    pub noise_var: f64,
    pub seed: u64,
}

impl ToySpec {
    /// 500 relevant, 2000 redundant, 1500 noisy inputs; 10 outputs; 500 samples.
    pub fn full_scale(seed: u64) -> Self {
        ToySpec {
            n_relev: 500,
            n_redund: 2000,
            n_noisy: 1500,
            m: 10,
            n_samples: 500,
            noise_var: 1e-6,
            seed,
        }
    }

    /// 25 relevant, 100 redundant, 75 noisy inputs; 10 outputs; 200 samples.
    pub fn desk_scale(seed: u64) -> Self {
        ToySpec {
            n_relev: 25,
            n_redund: 100,
            n_noisy: 75,
            m: 10,
            n_samples: 200,
            noise_var: 1e-6,
            seed,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.n_relev + self.n_redund + self.n_noisy
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_relev == 0 || self.n_redund == 0 || self.n_noisy == 0 || self.m == 0 || self.n_samples == 0 {
            return Err(MvaError::InvalidArgument("toy counts must all be >= 1".into()));
        }
        if !(self.noise_var >= 0.0 && self.noise_var.is_finite()) {
            return Err(MvaError::InvalidArgument("noise variance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset {
    /// `n × n_samples`, rows ordered relevant, redundant, noisy.
    pub x: Matrix,
    /// `m × n_samples`.
    pub y: Matrix,
    pub relevant_indices: Vec<usize>,
    pub w_relev: Matrix,
    pub mixing: Matrix,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// `a·b` accumulated left to right over the inner index; reproducible from the
/// persisted factors.
pub fn ordered_product(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Matrix {
    let (r, k) = a.dim();
    let c = b.ncols();
    let mut out = Array2::zeros((r, c));
    for i in 0..r {
        for s in 0..c {
            let mut acc = 0.0;
            for j in 0..k {
                acc += a[[i, j]] * b[[j, s]];
            }
            out[[i, s]] = acc;
        }
    }
    out
}

pub fn generate_toy(spec: &ToySpec) -> Result<ToyDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_s = spec.n_samples;

    let w_relev = uniform_matrix(&mut rng, spec.m, spec.n_relev);
    // (0, 4]: 1 − U[0, 1) never hits zero
    let variances: Vec<f64> = (0..spec.n_relev)
        .map(|_| 4.0 * (1.0 - rng.random::<f64>()))
        .collect();
    let mixing = uniform_matrix(&mut rng, spec.n_redund, spec.n_relev);

    let mut relev = Array2::zeros((spec.n_relev, n_s));
    for (i, var) in variances.iter().enumerate() {
        let sd = var.sqrt();
        for s in 0..n_s {
            let z: f64 = rng.sample(StandardNormal);
            relev[[i, s]] = sd * z;
        }
    }
    let noisy = Array2::from_shape_fn((spec.n_noisy, n_s), |_| rng.sample::<f64, _>(StandardNormal));
    let noise_sd = spec.noise_var.sqrt();
    let eps = Array2::from_shape_fn((spec.m, n_s), |_| noise_sd * rng.sample::<f64, _>(StandardNormal));

    let redund = ordered_product(mixing.view(), relev.view());
    let y = ordered_product(w_relev.view(), relev.view()) + &eps;

    let x = ndarray::concatenate(Axis(0), &[relev.view(), redund.view(), noisy.view()])
        .expect("blocks share the sample axis");
    Ok(ToyDataset {
        x,
        y,
        relevant_indices: (0..spec.n_relev).collect(),
        w_relev,
        mixing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Rows with zero training spread; their std was clamped to 1.
    pub degenerate: Vec<usize>,
}

impl Standardizer {
    /// Per-row mean and population standard deviation.
    pub fn fit(a: ArrayView2<f64>) -> Self {
        let n = a.ncols().max(1) as f64;
        let mut mean = Vec::with_capacity(a.nrows());
        let mut std = Vec::with_capacity(a.nrows());
        let mut degenerate = Vec::new();
        for (i, row) in a.rows().into_iter().enumerate() {
            let mu = row.sum() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            if sd > 0.0 && sd.is_finite() {
                std.push(sd);
            } else {
                std.push(1.0);
                degenerate.push(i);
            }
        }
        Standardizer { mean, std, degenerate }
    }

    pub fn apply(&self, a: ArrayView2<f64>) -> Matrix {
        let mean = Array1::from(self.mean.clone()).insert_axis(Axis(1));
        let std = Array1::from(self.std.clone()).insert_axis(Axis(1));
        (&a - &mean) / &std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub x: Standardizer,
    pub y: Standardizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub x_train: Matrix,
    pub y_train: Matrix,
    pub x_test: Matrix,
    pub y_test: Matrix,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub norm: NormParams,
}

/// Seeded random split; standardization statistics come from the training part only.
pub fn split_normalize(
    x: ArrayView2<f64>,
    y: ArrayView2<f64>,
    train_fraction: f64,
    seed: u64,
) -> Result<SplitData> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MvaError::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = x.ncols();
    if y.ncols() != n {
        return Err(MvaError::DimensionMismatch(format!("x has {n} samples, y has {}", y.ncols())));
    }
    if n < 2 {
        return Err(MvaError::InvalidArgument("need at least two samples to split".into()));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train_idx = perm[..n_train].to_vec();
    let test_idx = perm[n_train..].to_vec();

    let x_tr = x.select(Axis(1), &train_idx);
    let y_tr = y.select(Axis(1), &train_idx);
    let norm = NormParams {
        x: Standardizer::fit(x_tr.view()),
        y: Standardizer::fit(y_tr.view()),
    };
    Ok(SplitData {
        x_train: norm.x.apply(x_tr.view()),
        y_train: norm.y.apply(y_tr.view()),
        x_test: norm.x.apply(x.select(Axis(1), &test_idx).view()),
        y_test: norm.y.apply(y.select(Axis(1), &test_idx).view()),
        train_idx,
        test_idx,
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    fn tiny(seed: u64) -> ToySpec {
        ToySpec {
            n_relev: 4,
            n_redund: 6,
            n_noisy: 3,
            m: 2,
            n_samples: 30,
            noise_var: 1e-6,
            seed,
        }
    }

    #[test]
    fn shapes() {
        let d = generate_toy(&ToySpec::desk_scale(1)).unwrap();
        assert_eq!(d.x.dim(), (200, 200));
        assert_eq!(d.y.dim(), (10, 200));
        assert_eq!(d.relevant_indices, (0..25).collect::<Vec<_>>());
        assert_eq!(d.w_relev.dim(), (10, 25));
        assert_eq!(d.mixing.dim(), (100, 25));
    }

    #[test]
    #[ignore = "allocates the full 4000 x 500 problem"]
    fn full_scale_shapes() {
        let d = generate_toy(&ToySpec::full_scale(1)).unwrap();
        assert_eq!(d.x.dim(), (4000, 500));
        assert_eq!(d.y.dim(), (10, 500));
    }

    #[test]
    fn noiseless_output_is_exact() {
        let spec = ToySpec { noise_var: 0.0, ..tiny(3) };
        let d = generate_toy(&spec).unwrap();
        let relev = d.x.slice(ndarray::s![..4, ..]);
        assert_eq!(ordered_product(d.w_relev.view(), relev), d.y);
    }

    #[test]
    fn redundant_rows_lie_in_relevant_span() {
        let d = generate_toy(&tiny(4)).unwrap();
        let relev = d.x.slice(ndarray::s![..4, ..]);
        let redund = d.x.slice(ndarray::s![4..10, ..]);
        // project onto the row space of the relevant block
        let coef = linalg::lstsq_min_norm(relev, redund).unwrap();
        let resid = &redund - &coef.t().dot(&relev);
        let scale = linalg::frobenius_norm(redund.view());
        assert!(linalg::frobenius_norm(resid.view()) < 1e-10 * scale.max(1.0));
    }

    #[test]
    fn regeneration_is_bit_identical() {
        assert_eq!(generate_toy(&tiny(5)).unwrap(), generate_toy(&tiny(5)).unwrap());
        assert_ne!(generate_toy(&tiny(5)).unwrap().x, generate_toy(&tiny(6)).unwrap().x);
    }

    #[test]
    fn relevant_variances_in_range() {
        let spec = ToySpec { n_samples: 4000, ..tiny(7) };
        let d = generate_toy(&spec).unwrap();
        for row in d.x.rows().into_iter().take(4) {
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4000.0;
            assert!(var > 0.0 && var < 4.6);
        }
    }

    #[test]
    fn split_sizes_and_normalization() {
        let d = generate_toy(&ToySpec { n_samples: 10, ..tiny(8) }).unwrap();
        let s = split_normalize(d.x.view(), d.y.view(), 0.7, 1).unwrap();
        assert_eq!(s.x_train.ncols(), 7);
        assert_eq!(s.x_test.ncols(), 3);
        for row in s.x_train.rows().into_iter().chain(s.y_train.rows()) {
            let mu = row.sum() / 7.0;
            let sd = (row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 7.0).sqrt();
            assert!(mu.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        let again = split_normalize(d.x.view(), d.y.view(), 0.7, 1).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn degenerate_rows_are_flagged() {
        let x = ndarray::array![[1.0, 1.0, 1.0, 1.0], [1.0, 2.0, 3.0, 4.0]];
        let y = ndarray::array![[0.0, 1.0, 0.0, 1.0]];
        let s = split_normalize(x.view(), y.view(), 0.5, 0).unwrap();
        assert_eq!(s.norm.x.degenerate, vec![0]);
        assert_eq!(s.norm.x.std[0], 1.0);
        assert!(split_normalize(x.view(), y.view(), 1.0, 0).is_err());
    }
}
