use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradientSet, Mp3dcnnParams};
use crate::tensor::{Scalar, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::InvalidConfig(format!("unknown optimizer `{s}` (expected adam or sgd)"))),
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        AdamState { m, v, t: 0 }
    }
}

fn check_congruent<T: Scalar>(params: &[&mut Tensor<T>], grads: &[&Tensor<T>]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape("optimizer step", &[params.len()], &[grads.len()]));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("optimizer step", p.shape(), g.shape()));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update, in place. Arithmetic runs in `f64`.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    check_congruent(params, grads)?;
    if state.m.len() != params.len() {
        return Err(Error::shape("adam state", &[params.len()], &[state.m.len()]));
    }
    for (p, m) in params.iter().zip(&state.m) {
        if p.shape() != m.shape() {
            return Err(Error::shape("adam state", p.shape(), m.shape()));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj.as_f64();
            let mj = ADAM_BETA1 * m[j].as_f64() + (1.0 - ADAM_BETA1) * gj;
            let vj = ADAM_BETA2 * v[j].as_f64() + (1.0 - ADAM_BETA2) * gj * gj;
            m[j] = T::of_f64(mj);
            v[j] = T::of_f64(vj);
            let step = lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
            *theta = T::of_f64(theta.as_f64() - step);
        }
    }
    Ok(())
}

/// Plain gradient descent: `θ ← θ − lr·g`.
pub fn sgd_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[&Tensor<T>], lr: f64) -> Result<()> {
    check_congruent(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (theta, &gj) in p.data_mut().iter_mut().zip(g.data()) {
            *theta = T::of_f64(theta.as_f64() - lr * gj.as_f64());
        }
    }
    Ok(())
}

/// Optimizer bound to one model's trainable tensors.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Adam(AdamState<T>),
    Sgd,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, params: &Mp3dcnnParams<T>) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params.trainable().into_iter().map(|(_, t)| t))),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn step(&mut self, params: &mut Mp3dcnnParams<T>, grads: &GradientSet<T>, lr: f64) -> Result<()> {
        let mut slots = params.trainable_mut();
        let mut ordered = Vec::with_capacity(slots.len());
        for (name, _) in &slots {
            ordered.push(grads.get(name).ok_or_else(|| Error::MissingTensor(format!("gradient for {name}")))?);
        }
        let mut tensors: Vec<&mut Tensor<T>> = slots.iter_mut().map(|(_, t)| &mut **t).collect();
        match self {
            Optimizer::Adam(state) => adam_step(&mut tensors, &ordered, state, lr),
            Optimizer::Sgd => sgd_step(&mut tensors, &ordered, lr),
        }
    }
}
