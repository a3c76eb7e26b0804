//! Central finite-difference oracle for the hand-written backward passes.
//!
//! The step for each perturbed scalar is `1e-5·max(1, |x|)` and the error
//! measure is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
//! Layers are checked through the scalar objective `Σ r ⊙ layer(x)` with a
//! fixed random `r`, which makes `r` the upstream gradient.

use serde::Serialize;

use crate::error::Result;
use crate::tensor::{Rng, Tensor};

use super::{bce_loss, relu, relu_backward, sigmoid, sigmoid_backward, AvgPool3d, BatchNorm3d, Conv3d, Dropout, Linear, Mode};

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-8;
/// Acceptance tolerance for single layers.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Acceptance tolerance for the whole network.
pub const MODEL_TOLERANCE: f64 = 1e-4;

pub fn step_for(x: f64) -> f64 {
    FD_STEP * x.abs().max(1.0)
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
    /// Scalars sitting on a kink, where a central difference is meaningless.
    pub masked: usize,
    pub tolerance: f64,
}

impl GradcheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub subject: String,
    pub entries: Vec<GradcheckEntry>,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(GradcheckEntry::passed)
    }
}

/// Compares `analytic` against central differences of `objective` around `x`.
/// `masked(i, x_i, h)` excludes scalars from the comparison.
pub fn check_tensor(
    name: impl Into<String>,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    tolerance: f64,
    mut objective: impl FnMut(&Tensor<f64>) -> f64,
    masked: impl Fn(usize, f64, f64) -> bool,
) -> GradcheckEntry {
    assert_eq!(x.shape(), analytic.shape(), "analytic gradient shape");
    let mut probe = x.clone();
    let mut entry = GradcheckEntry {
        name: name.into(),
        max_rel_err: 0.0,
        worst_index: 0,
        checked: 0,
        masked: 0,
        tolerance,
    };
    for i in 0..x.len() {
        let x0 = x.data()[i];
        let h = step_for(x0);
        if masked(i, x0, h) {
            entry.masked += 1;
            continue;
        }
        probe.data_mut()[i] = x0 + h;
        let up = objective(&probe);
        probe.data_mut()[i] = x0 - h;
        let down = objective(&probe);
        probe.data_mut()[i] = x0;
        let numeric = (up - down) / (2.0 * h);
        let err = relative_error(analytic.data()[i], numeric);
        entry.checked += 1;
        if err > entry.max_rel_err {
            entry.max_rel_err = err;
            entry.worst_index = i;
        }
    }
    entry
}

fn no_mask(_: usize, _: f64, _: f64) -> bool {
    false
}

fn weighted_sum(r: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

/// Layer families the checker knows how to drive. Input widths come from the
/// input shape handed to [`gradcheck`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerUnderTest {
    Linear { f_out: usize },
    Conv3d { c_out: usize, k: usize },
    AvgPool3d { k: usize },
    BatchNorm3d,
    Relu,
    Sigmoid,
    Dropout { p: f64 },
    Bce,
}

impl LayerUnderTest {
    pub fn label(&self) -> String {
        match self {
            LayerUnderTest::Linear { f_out } => format!("linear(->{f_out})"),
            LayerUnderTest::Conv3d { c_out, k } => format!("conv3d(->{c_out}, k={k})"),
            LayerUnderTest::AvgPool3d { k } => format!("avgpool3d(k={k})"),
            LayerUnderTest::BatchNorm3d => "batchnorm3d".into(),
            LayerUnderTest::Relu => "relu".into(),
            LayerUnderTest::Sigmoid => "sigmoid".into(),
            LayerUnderTest::Dropout { p } => format!("dropout(p={p})"),
            LayerUnderTest::Bce => "bce_loss".into(),
        }
    }
}

/// Checks `layer` on a random input of `input_shape` (uniform in [-1, 1), or
/// probabilities in [0.05, 0.95) for the loss).
pub fn gradcheck(layer: LayerUnderTest, input_shape: &[usize], rng: &mut Rng, tolerance: f64) -> Result<GradcheckReport> {
    let (lo, hi) = match layer {
        LayerUnderTest::Bce => (0.05, 0.95),
        _ => (-1.0, 1.0),
    };
    let x = Tensor::random_uniform(input_shape, lo, hi, rng)?;
    gradcheck_at(layer, x, rng, tolerance)
}

/// Like [`gradcheck`] but at a caller-chosen input.
pub fn gradcheck_at(layer: LayerUnderTest, x: Tensor<f64>, rng: &mut Rng, tolerance: f64) -> Result<GradcheckReport> {
    let shape = x.shape().to_vec();
    let mut entries = Vec::new();
    match layer {
        LayerUnderTest::Linear { f_out } => {
            let f_in = shape[1];
            let lin = Linear::new(
                Tensor::random_uniform(&[f_out, f_in], -1.0, 1.0, rng)?,
                Tensor::random_uniform(&[f_out], -1.0, 1.0, rng)?,
            )?;
            let y = lin.forward(&x)?;
            let r = Tensor::random_uniform(y.shape(), -1.0, 1.0, rng)?;
            let (gx, gw, gb) = lin.backward(&x, &r)?;
            let f = |l: &Linear<f64>, x: &Tensor<f64>| weighted_sum(&r, &l.forward(x).unwrap());
            entries.push(check_tensor("input", &x, &gx, tolerance, |p| f(&lin, p), no_mask));
            entries.push(check_tensor("weight", &lin.weight, &gw, tolerance, |p| {
                let mut l = lin.clone();
                l.weight = p.clone();
                f(&l, &x)
            }, no_mask));
            entries.push(check_tensor("bias", &lin.bias, &gb, tolerance, |p| {
                let mut l = lin.clone();
                l.bias = p.clone();
                f(&l, &x)
            }, no_mask));
        }
        LayerUnderTest::Conv3d { c_out, k } => {
            let c_in = shape[1];
            let conv = Conv3d::new(c_in, c_out, k, Tensor::random_uniform(&[c_out, c_in, k, k, k], -1.0, 1.0, rng)?)?;
            let y = conv.forward(&x)?;
            let r = Tensor::random_uniform(y.shape(), -1.0, 1.0, rng)?;
            let (gx, gw) = conv.backward(&x, &r)?;
            let f = |c: &Conv3d<f64>, x: &Tensor<f64>| weighted_sum(&r, &c.forward(x).unwrap());
            entries.push(check_tensor("input", &x, &gx, tolerance, |p| f(&conv, p), no_mask));
            entries.push(check_tensor("weight", &conv.weight, &gw, tolerance, |p| {
                let mut c = conv.clone();
                c.weight = p.clone();
                f(&c, &x)
            }, no_mask));
        }
        LayerUnderTest::AvgPool3d { k } => {
            let pool = AvgPool3d::new(k);
            let y = pool.forward(&x)?;
            let r = Tensor::random_uniform(y.shape(), -1.0, 1.0, rng)?;
            let gx = pool.backward(&shape, &r)?;
            entries.push(check_tensor("input", &x, &gx, tolerance, |p| weighted_sum(&r, &pool.forward(p).unwrap()), no_mask));
        }
        LayerUnderTest::BatchNorm3d => {
            let mut bn = BatchNorm3d::new(shape[1]);
            bn.gamma = Tensor::random_uniform(&[shape[1]], 0.5, 1.5, rng)?;
            bn.beta = Tensor::random_uniform(&[shape[1]], -0.5, 0.5, rng)?;
            let (y, cache, _) = bn.forward_train(&x)?;
            let r = Tensor::random_uniform(y.shape(), -1.0, 1.0, rng)?;
            let (gx, gg, gb) = BatchNorm3d::backward(&cache, &r)?;
            let f = |b: &BatchNorm3d<f64>, x: &Tensor<f64>| weighted_sum(&r, &b.forward_train(x).unwrap().0);
            entries.push(check_tensor("input", &x, &gx, tolerance, |p| f(&bn, p), no_mask));
            entries.push(check_tensor("gamma", &bn.gamma, &gg, tolerance, |p| {
                let mut b = bn.clone();
                b.gamma = p.clone();
                f(&b, &x)
            }, no_mask));
            entries.push(check_tensor("beta", &bn.beta, &gb, tolerance, |p| {
                let mut b = bn.clone();
                b.beta = p.clone();
                f(&b, &x)
            }, no_mask));
        }
        LayerUnderTest::Relu => {
            let r = Tensor::random_uniform(&shape, -1.0, 1.0, rng)?;
            let gx = relu_backward(&x, &r)?;
            entries.push(check_tensor(
                "input",
                &x,
                &gx,
                tolerance,
                |p| weighted_sum(&r, &relu(p)),
                |_, v, h| v.abs() <= h,
            ));
        }
        LayerUnderTest::Sigmoid => {
            let y = sigmoid(&x);
            let r = Tensor::random_uniform(&shape, -1.0, 1.0, rng)?;
            let gx = sigmoid_backward(&y, &r)?;
            entries.push(check_tensor("input", &x, &gx, tolerance, |p| weighted_sum(&r, &sigmoid(p)), no_mask));
        }
        LayerUnderTest::Dropout { p } => {
            let drop = Dropout::new(p);
            let mask_rng = rng.derive(0xD20);
            let (y, mask) = drop.forward(&x, Mode::Train, &mut mask_rng.clone());
            let r = Tensor::random_uniform(y.shape(), -1.0, 1.0, rng)?;
            let gx = Dropout::backward(mask.as_ref(), &r)?;
            entries.push(check_tensor(
                "input",
                &x,
                &gx,
                tolerance,
                |xp| weighted_sum(&r, &drop.forward(xp, Mode::Train, &mut mask_rng.clone()).0),
                no_mask,
            ));
        }
        LayerUnderTest::Bce => {
            let labels: Vec<f64> = (0..x.len()).map(|_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 }).collect();
            let y = Tensor::from_vec(&shape, labels)?;
            let (_, gp) = bce_loss(&x, &y)?;
            entries.push(check_tensor("probabilities", &x, &gp, tolerance, |p| bce_loss(p, &y).unwrap().0, no_mask));
        }
    }
    Ok(GradcheckReport {
        subject: layer.label(),
        entries,
    })
}

/// The fixed battery of per-layer checks run by the `gradcheck` command and
/// the acceptance suite.
pub fn layer_suite(seed: u64, tolerance: f64) -> Result<Vec<GradcheckReport>> {
    let cases: Vec<(LayerUnderTest, Vec<usize>)> = vec![
        (LayerUnderTest::Linear { f_out: 3 }, vec![2, 4]),
        (LayerUnderTest::Conv3d { c_out: 2, k: 3 }, vec![1, 1, 5, 5, 5]),
        (LayerUnderTest::Conv3d { c_out: 3, k: 3 }, vec![1, 2, 5, 5, 5]),
        (LayerUnderTest::Conv3d { c_out: 2, k: 2 }, vec![2, 2, 4, 5, 3]),
        (LayerUnderTest::AvgPool3d { k: 2 }, vec![1, 2, 5, 4, 5]),
        (LayerUnderTest::AvgPool3d { k: 3 }, vec![2, 1, 7, 6, 6]),
        (LayerUnderTest::BatchNorm3d, vec![3, 2, 3, 3, 3]),
        (LayerUnderTest::Relu, vec![2, 3, 4]),
        (LayerUnderTest::Sigmoid, vec![2, 5]),
        (LayerUnderTest::Dropout { p: 0.05 }, vec![4, 16]),
        (LayerUnderTest::Bce, vec![8]),
    ];
    let root = Rng::new(seed);
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (layer, shape))| gradcheck(layer, &shape, &mut root.derive(i as u64), tolerance))
        .collect()
}
