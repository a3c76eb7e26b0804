use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Scalar, Tensor};

/// Fully connected layer `y = x·Wᵀ + b` on `[n, f_in]` batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub f_in: usize,
    pub f_out: usize,
    /// `[f_out, f_in]`
    pub weight: Tensor<T>,
    /// `[f_out]`
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 {
            return Err(Error::shape("linear weight", &[0, 0], weight.shape()));
        }
        let (f_out, f_in) = (weight.shape()[0], weight.shape()[1]);
        if bias.shape() != [f_out] {
            return Err(Error::shape("linear bias", &[f_out], bias.shape()));
        }
        Ok(Linear { f_in, f_out, weight, bias })
    }

    pub fn zeros(f_in: usize, f_out: usize) -> Self {
        Linear {
            f_in,
            f_out,
            weight: Tensor::zeros(&[f_out, f_in]),
            bias: Tensor::zeros(&[f_out]),
        }
    }

    fn batch(&self, x: &Tensor<T>) -> Result<usize> {
        if x.rank() != 2 || x.shape()[1] != self.f_in {
            let n = x.shape().first().copied().unwrap_or(0);
            return Err(Error::shape("linear", &[n, self.f_in], x.shape()));
        }
        Ok(x.shape()[0])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.batch(x)?;
        let mut y = Tensor::zeros(&[n, self.f_out]);
        gemm_nt(n, self.f_in, self.f_out, x.data(), self.weight.data(), y.data_mut(), false);
        for row in y.data_mut().chunks_exact_mut(self.f_out) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }

    /// `(grad_x, grad_weight, grad_bias)`
    pub fn backward(&self, x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let n = self.batch(x)?;
        if grad_y.shape() != [n, self.f_out] {
            return Err(Error::shape("linear backward", &[n, self.f_out], grad_y.shape()));
        }
        let mut gx = Tensor::zeros(&[n, self.f_in]);
        gemm_nn(n, self.f_out, self.f_in, grad_y.data(), self.weight.data(), gx.data_mut(), false);
        let mut gw = Tensor::zeros(&[self.f_out, self.f_in]);
        gemm_tn(self.f_out, n, self.f_in, grad_y.data(), x.data(), gw.data_mut(), false);
        let mut gb = Tensor::zeros(&[self.f_out]);
        for row in grad_y.data().chunks_exact(self.f_out) {
            for (g, &v) in gb.data_mut().iter_mut().zip(row) {
                *g += v;
            }
        }
        Ok((gx, gw, gb))
    }
}
