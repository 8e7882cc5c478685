//! Generalization measurement for small fully-connected ReLU networks.
//!
//! The crate trains biasless ReLU classifiers, computes data-dependent
//! PAC-Bayes bounds alongside spectrally normalized baselines, reproduces
//! the uniform-convergence counterexamples (linear, exponential-activation
//! and hypersphere setups), and estimates test error from disagreement and
//! ensemble calibration on unlabeled data.
//!
//! Numerical kernels are generic over the scalar type. The aliases below fix
//! the common instantiations: `f64` for everything that feeds a bound, `f32`
//! for lighter inference, and exact rationals for calibration identities.

// Negated comparisons are deliberate: they treat NaN as failing.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod datagen;
pub mod error;
pub mod gde;
pub mod linalg;
pub mod network;
pub mod noise;
pub mod rng;
pub mod scalar;
pub mod training;
pub mod ucfail;

pub use error::{Error, Result};
pub use rng::Rng;
pub use scalar::{Probability, Real};

pub type Matrix = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Mlp = network::Mlp<f64>;
pub type Mlp32 = network::Mlp<f32>;
pub type ForwardTrace = network::ForwardTrace<f64>;
pub type ConfidenceProfile = gde::ConfidenceProfile<f64>;
pub type ExactConfidenceProfile = gde::ConfidenceProfile<num_rational::Rational64>;

/// Class label. Binary tasks use `-1`/`+1` with a single output logit;
/// multiclass tasks use `0..K`.
pub type Label = i64;
