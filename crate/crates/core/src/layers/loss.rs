use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Probabilities are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy and its gradient with respect to `p`.
pub fn bce_loss<T: Scalar>(p: &Tensor<T>, y: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if p.rank() != 1 || p.shape() != y.shape() {
        return Err(Error::shape("bce_loss", p.shape(), y.shape()));
    }
    if let Some(bad) = y.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(Error::LabelDomain(bad.as_f64()));
    }
    let n = p.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Vec::with_capacity(p.len());
    for (&pi, &yi) in p.data().iter().zip(y.data()) {
        let pc = pi.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        let yv = yi.as_f64();
        loss -= yv * pc.ln() + (1.0 - yv) * (1.0 - pc).ln();
        grad.push(T::of_f64((pc - yv) / (pc * (1.0 - pc)) / n));
    }
    Ok((T::of_f64(loss / n), Tensor::from_vec(p.shape(), grad)?))
}
