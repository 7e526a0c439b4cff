//! Flat-parameter feed-forward networks with reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod gaussian;
mod mlp;
pub mod policy;

pub use adam::Adam;
pub use gaussian::{sample_squashed, squash, squash_derivative, GaussianHead, SquashedSample, ACTION_BOUND};
pub use mlp::{Activation, Gradients, Mlp, Trace};
pub use policy::{ConstantPolicy, DeterministicPolicy};

/// Width of every hidden layer.
pub const HIDDEN: usize = 64;

/// `[input, 64, 64, output]`.
pub fn standard_sizes(input: usize, output: usize) -> [usize; 4] {
    [input, HIDDEN, HIDDEN, output]
}
