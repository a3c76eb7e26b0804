//! Layer forward passes with hand-derived backward passes.
//!
//! Every layer is a plain value (its hyperparameters and weights) with pure
//! `forward`/`backward` functions. Anything backward needs is either passed
//! back in by the caller (inputs) or returned from forward as a cache.

mod activation;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod linear;
mod loss;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, Dropout, DropoutMask};
pub use batchnorm::{BatchNorm3d, BatchNormCache, RunningStats, BN_EPS, BN_MOMENTUM};
pub use conv::Conv3d;
pub use linear::Linear;
pub use loss::{bce_loss, BCE_CLAMP};
pub use pool::AvgPool3d;

use serde::{Deserialize, Serialize};

/// Train mode uses batch statistics and live dropout; eval mode is a pure
/// deterministic function of parameters and input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Splits `[n, c, h, w, d]` into `(n, c, [h, w, d])`.
pub(crate) fn split_5d(op: &'static str, shape: &[usize]) -> crate::Result<(usize, usize, [usize; 3])> {
    if shape.len() != 5 {
        return Err(crate::Error::ShapeMismatch {
            op,
            expected: vec![0; 5],
            got: shape.to_vec(),
        });
    }
    Ok((shape[0], shape[1], [shape[2], shape[3], shape[4]]))
}
