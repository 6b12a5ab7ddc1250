//! Reverse-mode differentiable tensors, limited to the operators the
//! super-resolution network needs.
//!
//! Graphs are built eagerly: every operation computes its values at once
//! and, when any input requires a gradient, records a closure that maps the
//! upstream gradient to gradients for its inputs. [`Tensor::backward`]
//! walks the recorded graph in reverse topological order.

mod conv;
mod gradcheck;
mod norm;
mod ops;
mod real;
mod tensor;

pub use conv::conv2d;
pub use gradcheck::{grad_check, GradCheckReport};
pub use norm::{batch_norm, BatchNormState, BN_EPS, BN_MOMENTUM};
pub use ops::{
    add, concat_channels, global_avg_pool, l1_loss, mul, mul_channels, pixel_shuffle, relu, scale, sigmoid, sub, sum,
};
pub use real::Real;
pub use tensor::{grad_enabled, no_grad, Tensor};
