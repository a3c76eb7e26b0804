use crate::error::{Error, Result};
use crate::tensor::{Rng, Scalar, Tensor};

use super::Mode;

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where `x > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_y.shape() {
        return Err(Error::shape("relu backward", x.shape(), grad_y.shape()));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data)
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| {
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Backward through the sigmoid given its output `y`.
pub fn sigmoid_backward<T: Scalar>(y: &Tensor<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != grad_y.shape() {
        return Err(Error::shape("sigmoid backward", y.shape(), grad_y.shape()));
    }
    let data = y
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(&s, &g)| g * s * (T::one() - s))
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// Inverted dropout: survivors are scaled by `1/(1-p)` at train time so the
/// eval path is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub p: f64,
}

/// Per-element multiplier chosen by a train-mode forward (`0` or `1/(1-p)`).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask<T> {
    pub scale: Tensor<T>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        Dropout { p }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> (Tensor<T>, Option<DropoutMask<T>>) {
        match mode {
            Mode::Eval => (x.clone(), None),
            Mode::Train => {
                let keep = T::of_f64(1.0 / (1.0 - self.p));
                let scale: Vec<T> = (0..x.len())
                    .map(|_| if rng.uniform() < self.p { T::zero() } else { keep })
                    .collect();
                let scale = Tensor::from_vec(x.shape(), scale).expect("same length");
                let y = x.mul(&scale).expect("same shape");
                (y, Some(DropoutMask { scale }))
            }
        }
    }

    pub fn backward<T: Scalar>(mask: Option<&DropoutMask<T>>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
        match mask {
            None => Ok(grad_y.clone()),
            Some(m) => grad_y.mul(&m.scale),
        }
    }
}
