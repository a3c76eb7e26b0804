//! Dense row-major tensors.
//!
//! A [`Tensor`] is an owned shape plus a flat buffer in last-index-fastest
//! order. There is no broadcasting and no autodiff graph: every op checks exact
//! shapes and returns a new value.

mod gemm;
mod rng;
mod scalar;

pub use gemm::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};
pub use rng::{derive_seed, Rng};
pub use scalar::{Precision, Scalar};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

/// Pointwise binary operations supported by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("from_vec", &[n], &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::from_vec(shape, values.iter().map(|&v| T::of_f64(v)).collect())
    }

    /// Uniform draws in `[lo, hi)`; `lo == hi` yields a constant tensor.
    pub fn random_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut Rng) -> Result<Self> {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::BadRange { lo, hi });
        }
        let n: usize = shape.iter().product();
        let (lo_t, hi_t) = (T::of_f64(lo), T::of_f64(hi));
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            if lo == hi {
                data.push(lo_t);
                continue;
            }
            // Rounding to the element type can land exactly on `hi`; redraw.
            loop {
                let v = T::of_f64(lo + (hi - lo) * rng.uniform());
                if v < hi_t && v >= lo_t {
                    data.push(v);
                    break;
                }
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        T::PRECISION
    }

    /// Row-major strides: `strides[rank-1] == 1`.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for k in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(self.strides())
            .zip(&self.shape)
            .map(|((&i, s), &e)| {
                assert!(i < e, "index {i} out of bounds for extent {e}");
                i * s
            })
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    /// Same buffer under a new shape of equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn elementwise(&self, op: ElementwiseOp, other: &Tensor<T>) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape("elementwise", &self.shape, &other.shape));
        }
        let f = match op {
            ElementwiseOp::Add => |a: T, b: T| a + b,
            ElementwiseOp::Sub => |a: T, b: T| a - b,
            ElementwiseOp::Mul => |a: T, b: T| a * b,
        };
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(ElementwiseOp::Add, other)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(ElementwiseOp::Sub, other)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(ElementwiseOp::Mul, other)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    /// In-place `self += other`; used to accumulate gradients.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], other.shape[1]);
        let mut out = Tensor::zeros(&[m, n]);
        gemm_nn(m, k, n, &self.data, &other.data, &mut out.data, false);
        Ok(out)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use super::Rng;

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = Tensor::zeros(&[m, n]);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(&[i, p]) * b.get(&[p, j]);
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn zeros_counts() {
        assert_eq!(Tensor::<f64>::zeros(&[2, 3]).data(), &[0.0; 6]);
        let s = Tensor::<f64>::zeros(&[]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.rank(), 0);
        let w = Tensor::<f32>::zeros(&[4, 7, 7, 7]);
        assert_eq!(w.len(), 1372);
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn row_major_offsets() {
        let t = Tensor::<f64>::zeros(&[2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
        assert_eq!(t.offset(&[1, 2, 3]), 23);
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(a.scale(1.0), a);
        assert!(a.sub(&a).unwrap().data().iter().all(|&v| v == 0.0));
        let c = Tensor::<f64>::zeros(&[3]);
        assert!(matches!(a.add(&c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn matmul_examples() {
        let mut rng = Rng::new(3);
        let x = Tensor::<f64>::random_uniform(&[3, 4], -1.0, 1.0, &mut rng).unwrap();
        let mut eye = Tensor::<f64>::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        assert_eq!(eye.matmul(&x).unwrap(), x);

        let a = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[3.0, 7.0]);

        let a = Tensor::<f64>::random_uniform(&[5, 4], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::<f64>::random_uniform(&[4, 6], -1.0, 1.0, &mut rng).unwrap();
        let fast = a.matmul(&b).unwrap();
        let slow = naive_matmul(&a, &b);
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert!(matches!(a.matmul(&a), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn transposed_kernels_agree_with_matmul() {
        let mut rng = Rng::new(4);
        let a = Tensor::<f64>::random_uniform(&[5, 19], -1.0, 1.0, &mut rng).unwrap();
        let b = Tensor::<f64>::random_uniform(&[19, 7], -1.0, 1.0, &mut rng).unwrap();
        let want = naive_matmul(&a, &b);

        // a · b via the nt kernel needs bᵀ stored row-major.
        let mut bt = vec![0.0; 7 * 19];
        for p in 0..19 {
            for j in 0..7 {
                bt[j * 19 + p] = b.get(&[p, j]);
            }
        }
        let mut c = vec![0.0; 35];
        gemm_nt(5, 19, 7, a.data(), &bt, &mut c, false);
        for (x, y) in c.iter().zip(want.data()) {
            assert!((x - y).abs() <= 1e-12);
        }

        let mut at = vec![0.0; 19 * 5];
        for i in 0..5 {
            for p in 0..19 {
                at[p * 5 + i] = a.get(&[i, p]);
            }
        }
        let mut c = vec![1.0; 35];
        gemm_tn(5, 19, 7, &at, b.data(), &mut c, true);
        for (x, y) in c.iter().zip(want.data()) {
            assert!((x - (y + 1.0)).abs() <= 1e-12);
        }
    }

    #[test]
    fn uniform_examples() {
        let mut rng = Rng::new(0);
        let z = Tensor::<f64>::random_uniform(&[10], 0.0, 0.0, &mut rng).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        let a = Tensor::<f32>::random_uniform(&[64], -1.0, 1.0, &mut Rng::new(5)).unwrap();
        let b = Tensor::<f32>::random_uniform(&[64], -1.0, 1.0, &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);

        let u = Tensor::<f64>::random_uniform(&[100_000], 0.0, 1.0, &mut Rng::new(11)).unwrap();
        let mean = u.sum() / 100_000.0;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!(u.data().iter().all(|&v| (0.0..1.0).contains(&v)));

        assert!(matches!(
            Tensor::<f64>::random_uniform(&[1], 1.0, 0.0, &mut rng),
            Err(Error::BadRange { .. })
        ));
    }

    fn small_shape() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 0..4)
    }

    proptest! {
        #[test]
        fn shape_preserving_ops_conserve_element_count(shape in small_shape(), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = Tensor::<f64>::random_uniform(&shape, -2.0, 2.0, &mut rng).unwrap();
            let b = Tensor::<f64>::random_uniform(&shape, -2.0, 2.0, &mut rng).unwrap();
            let before = (a.clone(), b.clone());
            let n: usize = shape.iter().product();
            for out in [a.add(&b).unwrap(), a.sub(&b).unwrap(), a.mul(&b).unwrap(), a.scale(3.0)] {
                prop_assert_eq!(out.shape(), &shape[..]);
                prop_assert_eq!(out.len(), n);
            }
            // inputs untouched
            prop_assert_eq!(&before.0, &a);
            prop_assert_eq!(&before.1, &b);
        }

        #[test]
        fn matmul_is_associative(m in 1usize..5, k in 1usize..5, l in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = Tensor::<f64>::random_uniform(&[m, k], -1.0, 1.0, &mut rng).unwrap();
            let b = Tensor::<f64>::random_uniform(&[k, l], -1.0, 1.0, &mut rng).unwrap();
            let c = Tensor::<f64>::random_uniform(&[l, n], -1.0, 1.0, &mut rng).unwrap();
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            for (x, y) in left.data().iter().zip(right.data()) {
                prop_assert!((x - y).abs() / scale <= 1e-10);
            }
        }
    }
}
