use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

use super::split_5d;

/// Non-overlapping average pooling with stride equal to the kernel.
/// Trailing planes that do not fill a whole window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool3d {
    pub k: usize,
}

impl AvgPool3d {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "pooling kernel must be at least 1");
        AvgPool3d { k }
    }

    pub fn output_shape(&self, x_shape: &[usize]) -> Result<Vec<usize>> {
        let (n, c, spatial) = split_5d("avgpool3d", x_shape)?;
        let out = spatial.map(|e| e / self.k);
        if out.contains(&0) {
            return Err(Error::DegenerateOutput {
                op: "avgpool3d",
                shape: x_shape.to_vec(),
            });
        }
        Ok(vec![n, c, out[0], out[1], out[2]])
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x.shape())?;
        let k = self.k;
        let [h, w, d] = [x.shape()[2], x.shape()[3], x.shape()[4]];
        let [oh, ow, od] = [out_shape[2], out_shape[3], out_shape[4]];
        let count = T::of_f64((k * k * k) as f64);
        let mut y = Tensor::zeros(&out_shape);
        let xs = x.data();
        let ys = y.data_mut();
        // Row-wise accumulation; each output still sums its window in
        // (dz, dy, dx) order.
        let mut acc = vec![T::zero(); od];
        for (nc, out) in ys.chunks_exact_mut(oh * ow * od).enumerate() {
            let vol = &xs[nc * h * w * d..(nc + 1) * h * w * d];
            for z in 0..oh {
                for yy in 0..ow {
                    acc.fill(T::zero());
                    for dz in 0..k {
                        for dy in 0..k {
                            let row = &vol[((z * k + dz) * w + yy * k + dy) * d..][..od * k];
                            for (a, win) in acc.iter_mut().zip(row.chunks_exact(k)) {
                                for &v in win {
                                    *a += v;
                                }
                            }
                        }
                    }
                    for (o, &a) in out[(z * ow + yy) * od..][..od].iter_mut().zip(&acc) {
                        *o = a / count;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward<T: Scalar>(&self, x_shape: &[usize], grad_y: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(x_shape)?;
        if grad_y.shape() != out_shape.as_slice() {
            return Err(Error::shape("avgpool3d backward", &out_shape, grad_y.shape()));
        }
        let k = self.k;
        let [w, d] = [x_shape[3], x_shape[4]];
        let plane = x_shape[2] * w * d;
        let [oh, ow, od] = [out_shape[2], out_shape[3], out_shape[4]];
        let count = T::of_f64((k * k * k) as f64);
        let mut gx = Tensor::zeros(x_shape);
        let gxs = gx.data_mut();
        let mut share = vec![T::zero(); od];
        for (nc, g) in grad_y.data().chunks_exact(oh * ow * od).enumerate() {
            let vol = &mut gxs[nc * plane..(nc + 1) * plane];
            for z in 0..oh {
                for yy in 0..ow {
                    for (s, &gv) in share.iter_mut().zip(&g[(z * ow + yy) * od..][..od]) {
                        *s = gv / count;
                    }
                    for dz in 0..k {
                        for dy in 0..k {
                            let row = &mut vol[((z * k + dz) * w + yy * k + dy) * d..][..od * k];
                            for (win, &sv) in row.chunks_exact_mut(k).zip(&share) {
                                win.fill(sv);
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}
