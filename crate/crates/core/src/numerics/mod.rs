//! Tensors, convolution kernels, discrete logistic densities, reverse-mode
//! differentiation and the optimizer.

pub mod adamax;
pub mod conv;
pub mod graph;
pub mod logistic;
pub mod tensor;

pub use adamax::Adamax;
pub use conv::{conv1d, conv2d, relu, Axis, ConvLayerSpec, Padding};
pub use graph::{Gradients, Graph, Lattice, Var};
pub use logistic::{discrete_logistic, discrete_logistic_mixture, LogisticEval, MixtureEval};
pub use tensor::Tensor;

/// Round half up: `⌊x + ½⌋`.
#[inline]
pub fn round_half_up(x: f32) -> f32 {
    (x + 0.5).floor()
}
