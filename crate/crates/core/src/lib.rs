//! Regularized multivariate analysis (PCA, OPLS, CCA) with an eigenvalue
//! W-step that keeps extracted features uncorrelated, an ℓ2,1 solver that
//! performs variable selection during feature extraction, and an orthogonal
//! Procrustes baseline for comparison.
//!
//! Data matrices are laid out variables × samples throughout the library.

// `!(v >= 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod l21;
pub mod linalg;
pub mod mva;
pub mod persist;
pub mod procrustes;
pub mod selection;
pub mod synth;

pub use error::{MvaError, Result};
pub use mva::{fit, Method, MvaConfig, MvaModel, Penalty, ProcrustesStyle, Regularizer, WStep};
