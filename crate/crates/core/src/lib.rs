//! Confidence estimation for neural classifiers via the true class probability.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`nn`]: a small reverse-mode differentiation engine with dense layers,
//!   dropout, losses, optimizers and a binary checkpoint format.
//! - [`data`]: IDX (MNIST) parsing, Gaussian blobs, synthetic grid scenes with
//!   domain shift, patch extraction and splits.
//! - [`classifier`]: classifier training plus the MCP, TCP, MC Dropout and
//!   Trust Score confidence baselines.
//! - [`confidnet`]: the auxiliary confidence model, its four losses and the
//!   two-phase training scheme.
//! - [`metrics`]: failure-prediction and selective-classification metrics.
//! - [`selftrain`]: pixel-wise confidence learning with adversarial alignment
//!   and confidence-guided pseudo-label self-training.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the 64-bit instantiation used by the command-line tool.

pub mod classifier;
pub mod confidnet;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod selftrain;

pub use error::{Error, Result};
pub use scalar::Scalar;

use rand::SeedableRng;

/// Deterministic generator used for every stochastic step.
pub type Rng64 = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    Rng64::seed_from_u64(seed)
}

/// Default real type.
pub type Real = f64;

pub type Tensor = nn::Tensor<Real>;
pub type Network = nn::Network<Real>;
pub type Graph = nn::Graph<Real>;
pub type Checkpoint = nn::Checkpoint<Real>;
pub type LabeledDataset = data::LabeledDataset<Real>;
pub type GridScene = data::GridScene<Real>;
pub type EvalRecord = metrics::EvalRecord<Real>;
pub type ClassifierModel = classifier::ClassifierModel<Real>;
pub type ConfidenceModel = confidnet::ConfidenceModel<Real>;
pub type PseudoLabelSet = selftrain::PseudoLabelSet<Real>;
