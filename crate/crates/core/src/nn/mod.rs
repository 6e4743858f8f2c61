//! Minimal reverse-mode differentiation engine, dense layers, losses and optimizers.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{Gradients, Graph, Var};
pub use layers::{Activation, Bound, DenseLayer, Dropout, Layer, Mode, Network};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tensor::Tensor;

use crate::Rng64;

/// Shuffled mini-batches of row indices covering `0..n` once.
pub fn minibatches(n: usize, batch_size: usize, rng: &mut Rng64) -> Vec<Vec<usize>> {
    let idx = layers::shuffled_indices(n, rng);
    idx.chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}
