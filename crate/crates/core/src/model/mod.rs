//! Trainable vector fields: an MLP with sinusoidal time features, Adam and the training loop.

mod adam;
mod checkpoint;
mod mlp;
mod train;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::CHECKPOINT_MAGIC;
pub use mlp::{Activation, Mlp, MlpConfig, MlpTape};
pub use train::{lr_at, train, train_strategy, TrainConfig, TrainRecord, TrainingLog};

use crate::field::VectorField;
use crate::linalg::Matrix;
use crate::Result;

/// A parametric field with batched forward and reverse-mode gradients.
///
/// `forward_batch` returns the outputs together with a tape of intermediate
/// values; `backward` consumes such a tape, so gradients can only be asked
/// for after a recorded forward pass.
pub trait Trainable: VectorField {
    type Tape;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Row `i` of the output is `v(y[i], t[i])`.
    fn forward_batch(&self, y: &Matrix, t: &[f64]) -> Result<(Matrix, Self::Tape)>;

    /// Gradient of `sum_i <upstream[i], v(y[i], t[i])>` with respect to the parameters.
    fn backward(&self, tape: &Self::Tape, upstream: &Matrix) -> Result<Vec<f64>>;
}
