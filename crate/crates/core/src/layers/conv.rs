use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Scalar, Tensor};

use super::split_5d;

/// Valid (unpadded), stride-1, bias-free 3D cross-correlation.
///
/// Weight layout is `[c_out, c_in, k, k, k]`. Both passes work on the
/// flattened `h·w·d` volume: for kernel tap `(kz, ky, kx)` the input window
/// is the input shifted by `kz·w·d + ky·d + kx`, so each tap is one long
/// contiguous axpy (forward, input gradient) or dot product (weight
/// gradient). Outputs are accumulated on an `h_out × w × d` grid and the
/// valid `w_out × d_out` corner of each row is copied out.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub weight: Tensor<T>,
}

/// Grid elements processed per pass over the kernel taps; sized so the tile
/// and the input windows it touches stay cache resident.
const TILE: usize = 512;

struct Geometry {
    n: usize,
    c_in: usize,
    input: [usize; 3],
    out: [usize; 3],
}

impl Geometry {
    fn volume(&self) -> usize {
        self.input.iter().product()
    }

    /// Length of the padded output grid that covers every valid output.
    fn span(&self) -> usize {
        let [_, w, d] = self.input;
        let [oh, ow, od] = self.out;
        (oh - 1) * w * d + (ow - 1) * d + od
    }

    fn taps(&self, k: usize) -> Vec<usize> {
        let [_, w, d] = self.input;
        let mut offsets = Vec::with_capacity(k * k * k);
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    offsets.push(kz * w * d + ky * d + kx);
                }
            }
        }
        offsets
    }

    /// Copies the valid outputs of a padded grid into a dense output volume.
    fn gather<T: Copy>(&self, grid: &[T], out: &mut [T]) {
        let [_, w, d] = self.input;
        let [oh, ow, od] = self.out;
        for z in 0..oh {
            for y in 0..ow {
                let src = z * w * d + y * d;
                let dst = (z * ow + y) * od;
                out[dst..dst + od].copy_from_slice(&grid[src..src + od]);
            }
        }
    }

    /// Inverse of [`gather`](Self::gather); padding entries become zero.
    fn scatter<T: Scalar>(&self, dense: &[T], grid: &mut [T]) {
        let [_, w, d] = self.input;
        let [oh, ow, od] = self.out;
        grid.fill(T::zero());
        for z in 0..oh {
            for y in 0..ow {
                let dst = z * w * d + y * d;
                let src = (z * ow + y) * od;
                grid[dst..dst + od].copy_from_slice(&dense[src..src + od]);
            }
        }
    }
}

impl<T: Scalar> Conv3d<T> {
    pub fn new(c_in: usize, c_out: usize, k: usize, weight: Tensor<T>) -> Result<Self> {
        let expected = [c_out, c_in, k, k, k];
        if k == 0 || weight.shape() != expected {
            return Err(Error::shape("conv3d weight", &expected, weight.shape()));
        }
        Ok(Conv3d { c_in, c_out, k, weight })
    }

    pub fn zeros(c_in: usize, c_out: usize, k: usize) -> Self {
        Conv3d {
            c_in,
            c_out,
            k,
            weight: Tensor::zeros(&[c_out, c_in, k, k, k]),
        }
    }

    pub fn output_shape(&self, x_shape: &[usize]) -> Result<Vec<usize>> {
        let g = self.geometry(x_shape)?;
        Ok(vec![g.n, self.c_out, g.out[0], g.out[1], g.out[2]])
    }

    fn geometry(&self, x_shape: &[usize]) -> Result<Geometry> {
        let (n, c, spatial) = split_5d("conv3d", x_shape)?;
        if c != self.c_in || spatial.iter().any(|&e| e < self.k) {
            let mut expected = x_shape.to_vec();
            expected[1] = self.c_in;
            for e in &mut expected[2..] {
                *e = (*e).max(self.k);
            }
            return Err(Error::shape("conv3d", &expected, x_shape));
        }
        let out = spatial.map(|e| e - self.k + 1);
        Ok(Geometry {
            n,
            c_in: c,
            input: spatial,
            out,
        })
    }

    fn taps_per_channel(&self) -> usize {
        self.k * self.k * self.k
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.geometry(x.shape())?;
        let (vol, span, kk) = (g.volume(), g.span(), self.taps_per_channel());
        let out_vol: usize = g.out.iter().product();
        let taps = g.taps(self.k);
        let mut y = Tensor::zeros(&[g.n, self.c_out, g.out[0], g.out[1], g.out[2]]);
        let mut grid = vec![T::zero(); span];
        let (xs, ws) = (x.data(), self.weight.data());
        let ys = y.data_mut();
        for b in 0..g.n {
            for o in 0..self.c_out {
                grid.fill(T::zero());
                for lo in (0..span).step_by(TILE) {
                    let hi = (lo + TILE).min(span);
                    let tile = &mut grid[lo..hi];
                    for i in 0..g.c_in {
                        let chan = &xs[(b * g.c_in + i) * vol..(b * g.c_in + i + 1) * vol];
                        let wk = &ws[(o * g.c_in + i) * kk..(o * g.c_in + i + 1) * kk];
                        for (&wv, &off) in wk.iter().zip(&taps) {
                            axpy(wv, &chan[off + lo..off + hi], tile);
                        }
                    }
                }
                let at = (b * self.c_out + o) * out_vol;
                g.gather(&grid, &mut ys[at..at + out_vol]);
            }
        }
        Ok(y)
    }

    /// Gradients with respect to the input and the weight.
    pub fn backward(&self, x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (gx, gw) = self.backward_impl(x, grad_y, true)?;
        Ok((gx.expect("input gradient requested"), gw))
    }

    /// Weight gradient only; skips the input gradient for first-layer use.
    pub fn backward_weight(&self, x: &Tensor<T>, grad_y: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.backward_impl(x, grad_y, false)?.1)
    }

    fn backward_impl(
        &self,
        x: &Tensor<T>,
        grad_y: &Tensor<T>,
        want_input_grad: bool,
    ) -> Result<(Option<Tensor<T>>, Tensor<T>)> {
        let g = self.geometry(x.shape())?;
        let [oh_n, ow_n, od_n] = g.out;
        let expected = [g.n, self.c_out, oh_n, ow_n, od_n];
        if grad_y.shape() != expected {
            return Err(Error::shape("conv3d backward", &expected, grad_y.shape()));
        }
        let (vol, span, kk) = (g.volume(), g.span(), self.taps_per_channel());
        let out_vol: usize = g.out.iter().product();
        let taps = g.taps(self.k);
        let mut gw = Tensor::zeros(self.weight.shape());
        let mut gx = want_input_grad.then(|| Tensor::zeros(x.shape()));
        let mut grid = vec![T::zero(); span];
        let (xs, ws, gys) = (x.data(), self.weight.data(), grad_y.data());
        for b in 0..g.n {
            for o in 0..self.c_out {
                let at = (b * self.c_out + o) * out_vol;
                g.scatter(&gys[at..at + out_vol], &mut grid);
                for lo in (0..span).step_by(TILE) {
                    let hi = (lo + TILE).min(span);
                    let tile = &grid[lo..hi];
                    for i in 0..g.c_in {
                        let chan = &xs[(b * g.c_in + i) * vol..(b * g.c_in + i + 1) * vol];
                        let wrow = (o * g.c_in + i) * kk;
                        let gwk = &mut gw.data_mut()[wrow..wrow + kk];
                        for (gwv, &off) in gwk.iter_mut().zip(&taps) {
                            *gwv += dot(tile, &chan[off + lo..off + hi]);
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gchan = &mut gx.data_mut()[(b * g.c_in + i) * vol..(b * g.c_in + i + 1) * vol];
                            for (&wv, &off) in ws[wrow..wrow + kk].iter().zip(&taps) {
                                axpy(wv, tile, &mut gchan[off + lo..off + hi]);
                            }
                        }
                    }
                }
            }
        }
        Ok((gx, gw))
    }
}
