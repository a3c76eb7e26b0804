use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::split_5d;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `[n, c, h, w, d]` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm3d<T> {
    pub c: usize,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Values saved by a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    shape: Vec<usize>,
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
}

impl<T: Scalar> BatchNormCache<T> {
    pub fn x_hat(&self) -> &Tensor<T> {
        &self.x_hat
    }

    pub fn inv_std(&self) -> &[T] {
        &self.inv_std
    }
}

/// Running statistics after a train-mode step; apply with
/// [`BatchNorm3d::set_running`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    /// Biased per-channel statistics of the batch itself.
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

impl<T: Scalar> BatchNorm3d<T> {
    pub fn new(c: usize) -> Self {
        BatchNorm3d {
            c,
            gamma: Tensor::full(&[c], T::one()),
            beta: Tensor::zeros(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], T::one()),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        let (n, c, spatial) = split_5d("batchnorm3d", x.shape())?;
        if c != self.c {
            let mut expected = x.shape().to_vec();
            expected[1] = self.c;
            return Err(Error::shape("batchnorm3d", &expected, x.shape()));
        }
        Ok((n, spatial.iter().product()))
    }

    /// Normalizes with the batch's own statistics (biased variance) and returns
    /// the updated running statistics without touching `self`.
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>, RunningStats<T>)> {
        let (n, spatial) = self.check_input(x)?;
        let count = n * spatial;
        if count < 2 {
            return Err(Error::DegenerateBatch { count });
        }
        let xs = x.data();
        let mut batch_mean = vec![0.0f64; self.c];
        let mut batch_var = vec![0.0f64; self.c];
        for ch in 0..self.c {
            let chunks = || (0..n).map(|b| &xs[(b * self.c + ch) * spatial..][..spatial]);
            let sum: f64 = chunks().map(|v| sum_f64(v, |x| x)).sum();
            let mean = sum / count as f64;
            let sq: f64 = chunks()
                .map(|v| {
                    sum_f64(v, |x| {
                        let d = x - mean;
                        d * d
                    })
                })
                .sum();
            batch_mean[ch] = mean;
            batch_var[ch] = sq / count as f64;
        }

        let inv_std: Vec<T> = batch_var
            .iter()
            .map(|&v| T::of_f64(1.0 / (v + self.eps).sqrt()))
            .collect();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        {
            let xh = x_hat.data_mut();
            let ys = y.data_mut();
            for b in 0..n {
                for ch in 0..self.c {
                    let at = (b * self.c + ch) * spatial;
                    let (m, s) = (T::of_f64(batch_mean[ch]), inv_std[ch]);
                    let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
                    for i in at..at + spatial {
                        let h = (xs[i] - m) * s;
                        xh[i] = h;
                        ys[i] = g * h + be;
                    }
                }
            }
        }

        let mom = self.momentum;
        let mean = Tensor::from_vec(
            &[self.c],
            (0..self.c)
                .map(|ch| T::of_f64((1.0 - mom) * self.running_mean.data()[ch].as_f64() + mom * batch_mean[ch]))
                .collect(),
        )?;
        let var = Tensor::from_vec(
            &[self.c],
            (0..self.c)
                .map(|ch| T::of_f64((1.0 - mom) * self.running_var.data()[ch].as_f64() + mom * batch_var[ch]))
                .collect(),
        )?;
        let cache = BatchNormCache {
            shape: x.shape().to_vec(),
            x_hat,
            inv_std,
            gamma: self.gamma.data().to_vec(),
        };
        Ok((
            y,
            cache,
            RunningStats {
                mean,
                var,
                batch_mean,
                batch_var,
            },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, spatial) = self.check_input(x)?;
        let mut y = x.clone();
        let ys = y.data_mut();
        for ch in 0..self.c {
            let inv = T::of_f64(1.0 / (self.running_var.data()[ch].as_f64() + self.eps).sqrt());
            let scale = self.gamma.data()[ch] * inv;
            let shift = self.beta.data()[ch] - self.running_mean.data()[ch] * scale;
            for b in 0..n {
                let at = (b * self.c + ch) * spatial;
                for v in &mut ys[at..at + spatial] {
                    *v = *v * scale + shift;
                }
            }
        }
        Ok(y)
    }

    pub fn set_running(&mut self, stats: RunningStats<T>) {
        self.running_mean = stats.mean;
        self.running_var = stats.var;
    }

    /// Gradients through the batch statistics: `(grad_x, grad_gamma, grad_beta)`.
    pub fn backward(cache: &BatchNormCache<T>, grad_y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        if grad_y.shape() != cache.shape.as_slice() {
            return Err(Error::StaleCache(format!(
                "cache holds {:?}, gradient is {:?}",
                cache.shape,
                grad_y.shape()
            )));
        }
        let (n, c) = (cache.shape[0], cache.shape[1]);
        let spatial: usize = cache.shape[2..].iter().product();
        let count = (n * spatial) as f64;
        let gy = grad_y.data();
        let xh = cache.x_hat.data();
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        let mut gx = Tensor::zeros(&cache.shape);
        let gxs = gx.data_mut();
        for ch in 0..c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for b in 0..n {
                let at = (b * c + ch) * spatial;
                sum_g += sum_f64(&gy[at..at + spatial], |v| v);
                sum_gx += sum_pairs_f64(&gy[at..at + spatial], &xh[at..at + spatial]);
            }
            ggamma[ch] = T::of_f64(sum_gx);
            gbeta[ch] = T::of_f64(sum_g);
            let k = cache.gamma[ch] * cache.inv_std[ch] / T::of_f64(count);
            let (mean_g, mean_gx) = (T::of_f64(sum_g), T::of_f64(sum_gx));
            let nn = T::of_f64(count);
            for b in 0..n {
                let at = (b * c + ch) * spatial;
                for i in at..at + spatial {
                    gxs[i] = k * (nn * gy[i] - mean_g - xh[i] * mean_gx);
                }
            }
        }
        Ok((gx, Tensor::from_vec(&[c], ggamma)?, Tensor::from_vec(&[c], gbeta)?))
    }
}

/// Sum of `f(x)` over a slice, accumulated in f64 across eight lanes.
fn sum_f64<T: Scalar>(xs: &[T], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = xs.chunks_exact(8);
    let tail: f64 = chunks.remainder().iter().map(|v| f(v.as_f64())).sum();
    for c in chunks {
        let c: &[T; 8] = c.try_into().expect("exact chunk");
        for l in 0..8 {
            acc[l] += f(c[l].as_f64());
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// `Σ a·b` with the products formed in `T` and accumulated in f64.
fn sum_pairs_f64<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| (x * y).as_f64()).sum();
    for (x, y) in ca.zip(cb) {
        let x: &[T; 8] = x.try_into().expect("exact chunk");
        let y: &[T; 8] = y.try_into().expect("exact chunk");
        for l in 0..8 {
            acc[l] += (x[l] * y[l]).as_f64();
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn constant_channel_maps_to_beta() {
        let mut bn = BatchNorm3d::<f64>::new(2);
        bn.beta = Tensor::from_vec(&[2], vec![0.25, -1.5]).unwrap();
        let x = Tensor::full(&[3, 2, 2, 2, 2], 7.0);
        let (y, _, _) = bn.forward_train(&x).unwrap();
        for b in 0..3 {
            for i in 0..8 {
                assert_eq!(y.data()[(b * 2) * 8 + i], 0.25);
                assert_eq!(y.data()[(b * 2 + 1) * 8 + i], -1.5);
            }
        }
    }

    #[test]
    fn eval_identity_configuration() {
        let bn = BatchNorm3d::<f64>::new(3);
        let x = Tensor::random_uniform(&[2, 3, 3, 3, 3], -2.0, 2.0, &mut Rng::new(5)).unwrap();
        let y = bn.forward_eval(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn train_output_is_standardized() {
        let bn = BatchNorm3d::<f64>::new(3);
        let x = Tensor::random_uniform(&[4, 3, 5, 4, 3], -3.0, 5.0, &mut Rng::new(6)).unwrap();
        let (y, cache, stats) = bn.forward_train(&x).unwrap();
        let spatial = 60;
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.data()[(b * 3 + ch) * spatial..(b * 3 + ch + 1) * spatial].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            // eps slightly shrinks the variance below 1
            let expected = stats.batch_var[ch] / (stats.batch_var[ch] + BN_EPS);
            assert!((var - expected).abs() < 1e-6, "{var}");
            assert!((var - 1.0).abs() < 1e-4);
        }

        // De-normalize with the batch statistics to recover the input.
        for b in 0..4 {
            for ch in 0..3 {
                for i in 0..spatial {
                    let at = (b * 3 + ch) * spatial + i;
                    let back = cache.x_hat().data()[at] / cache.inv_std()[ch] + stats.batch_mean[ch];
                    assert!((back - x.data()[at]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let bn = BatchNorm3d::<f64>::new(1);
        let x = Tensor::from_vec(&[2, 1, 1, 1, 1], vec![1.0, 3.0]).unwrap();
        let (_, _, stats) = bn.forward_train(&x).unwrap();
        assert!((stats.mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((stats.var.data()[0] - (0.9 + 0.1 * 1.0)).abs() < 1e-15);
        // self is untouched
        assert_eq!(bn.running_mean.data(), &[0.0]);
    }

    #[test]
    fn degenerate_batch_rejected() {
        let bn = BatchNorm3d::<f64>::new(1);
        assert!(matches!(
            bn.forward_train(&Tensor::zeros(&[1, 1, 1, 1, 1])),
            Err(Error::DegenerateBatch { count: 1 })
        ));
    }

    #[test]
    fn backward_identities() {
        let bn = BatchNorm3d::<f64>::new(2);
        let x = Tensor::random_uniform(&[2, 2, 3, 3, 3], -1.0, 1.0, &mut Rng::new(8)).unwrap();
        let (_, cache, _) = bn.forward_train(&x).unwrap();
        let (gx, gg, gb) = BatchNorm3d::backward(&cache, &Tensor::zeros(x.shape())).unwrap();
        assert!(gx.data().iter().chain(gg.data()).chain(gb.data()).all(|&v| v == 0.0));

        let gy = Tensor::random_uniform(x.shape(), -1.0, 1.0, &mut Rng::new(9)).unwrap();
        let (_, _, gb) = BatchNorm3d::backward(&cache, &gy).unwrap();
        for ch in 0..2 {
            let s: f64 = (0..2).map(|b| gy.data()[(b * 2 + ch) * 27..(b * 2 + ch + 1) * 27].iter().sum::<f64>()).sum();
            assert!((gb.data()[ch] - s).abs() < 1e-12);
        }

        assert!(matches!(
            BatchNorm3d::backward(&cache, &Tensor::zeros(&[1, 2, 3, 3, 3])),
            Err(Error::StaleCache(_))
        ));
    }
}
