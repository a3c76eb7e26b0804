use crate::error::{Error, Result};
use crate::layers::{BatchNorm3d, Conv3d, Dropout, Linear};
use crate::tensor::{Rng, Scalar, Tensor};

use super::arch::{ArchConfig, ModelKind};

/// Complete named parameter set of either network. The baseline carries no
/// branch layers and a narrower first classifier layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mp3dcnnParams<T> {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub conv1: Conv3d<T>,
    pub bn1: BatchNorm3d<T>,
    pub conv2: Conv3d<T>,
    pub bn2: BatchNorm3d<T>,
    pub conv3: Conv3d<T>,
    pub bn3: BatchNorm3d<T>,
    pub branch1_fc: Option<Linear<T>>,
    pub branch2_fc: Option<Linear<T>>,
    pub cls1: Linear<T>,
    pub cls2: Linear<T>,
    pub dropout: Dropout,
}

/// Kaiming-uniform bound for a layer with `fan_in` inputs.
pub fn kaiming_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

// Stream ids for initialization; fixed so both kinds share mainchain weights
// under one seed.
const STREAM_CONV: [u64; 3] = [1, 2, 3];
const STREAM_BRANCH: [u64; 2] = [4, 5];
const STREAM_CLS: [u64; 2] = [6, 7];

impl<T: Scalar> Mp3dcnnParams<T> {
    /// Kaiming-uniform weights, zero biases, identity batch norms.
    pub fn init(kind: ModelKind, arch: &ArchConfig, rng: &Rng) -> Result<Self> {
        let dims = arch.dims()?;
        let c = arch.channels;
        let conv = |i: usize, c_in: usize| -> Result<Conv3d<T>> {
            let k = arch.kernels[i];
            let bound = kaiming_bound(c_in * k * k * k);
            let w = Tensor::random_uniform(&[c, c_in, k, k, k], -bound, bound, &mut rng.derive(STREAM_CONV[i]))?;
            Conv3d::new(c_in, c, k, w)
        };
        let linear = |stream: u64, f_in: usize, f_out: usize| -> Result<Linear<T>> {
            let bound = kaiming_bound(f_in);
            let w = Tensor::random_uniform(&[f_out, f_in], -bound, bound, &mut rng.derive(stream))?;
            Linear::new(w, Tensor::zeros(&[f_out]))
        };
        let bn = || {
            let mut b = BatchNorm3d::new(c);
            b.eps = arch.bn_eps;
            b.momentum = arch.bn_momentum;
            b
        };
        let (branch1_fc, branch2_fc) = if kind.has_branches() {
            (
                Some(linear(STREAM_BRANCH[0], dims.branch1_in, dims.branch1_out)?),
                Some(linear(STREAM_BRANCH[1], dims.branch2_in, dims.branch2_out)?),
            )
        } else {
            (None, None)
        };
        Ok(Mp3dcnnParams {
            kind,
            arch: arch.clone(),
            conv1: conv(0, 1)?,
            bn1: bn(),
            conv2: conv(1, c)?,
            bn2: bn(),
            conv3: conv(2, c)?,
            bn3: bn(),
            branch1_fc,
            branch2_fc,
            cls1: linear(STREAM_CLS[0], dims.classifier_in(kind), arch.hidden)?,
            cls2: linear(STREAM_CLS[1], arch.hidden, 1)?,
            dropout: Dropout::new(arch.dropout),
        })
    }

    /// Trainable tensors, each exactly once, in a fixed order.
    pub fn trainable(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut out = vec![
            ("conv1.weight", &self.conv1.weight),
            ("bn1.gamma", &self.bn1.gamma),
            ("bn1.beta", &self.bn1.beta),
            ("conv2.weight", &self.conv2.weight),
            ("bn2.gamma", &self.bn2.gamma),
            ("bn2.beta", &self.bn2.beta),
            ("conv3.weight", &self.conv3.weight),
            ("bn3.gamma", &self.bn3.gamma),
            ("bn3.beta", &self.bn3.beta),
        ];
        if let Some(l) = &self.branch1_fc {
            out.push(("branch1_fc.weight", &l.weight));
            out.push(("branch1_fc.bias", &l.bias));
        }
        if let Some(l) = &self.branch2_fc {
            out.push(("branch2_fc.weight", &l.weight));
            out.push(("branch2_fc.bias", &l.bias));
        }
        out.push(("cls1.weight", &self.cls1.weight));
        out.push(("cls1.bias", &self.cls1.bias));
        out.push(("cls2.weight", &self.cls2.weight));
        out.push(("cls2.bias", &self.cls2.bias));
        out
    }

    /// Same order as [`trainable`](Self::trainable).
    pub fn trainable_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.collect_mut(true, false)
    }

    /// Batch-norm running statistics (not trained, but part of a checkpoint).
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![
            ("bn1.running_mean", &self.bn1.running_mean),
            ("bn1.running_var", &self.bn1.running_var),
            ("bn2.running_mean", &self.bn2.running_mean),
            ("bn2.running_var", &self.bn2.running_var),
            ("bn3.running_mean", &self.bn3.running_mean),
            ("bn3.running_var", &self.bn3.running_var),
        ]
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.collect_mut(false, true)
    }

    /// Every stored tensor: trainable first, then buffers.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut all = self.trainable();
        all.extend(self.buffers());
        all
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.collect_mut(true, true)
    }

    fn collect_mut(&mut self, trainable: bool, buffers: bool) -> Vec<(&'static str, &mut Tensor<T>)> {
        let Mp3dcnnParams {
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            branch1_fc,
            branch2_fc,
            cls1,
            cls2,
            ..
        } = self;
        let mut out = Vec::new();
        let mut stats = Vec::new();
        for (i, (conv, bn)) in [(conv1, bn1), (conv2, bn2), (conv3, bn3)].into_iter().enumerate() {
            let BatchNorm3d {
                gamma,
                beta,
                running_mean,
                running_var,
                ..
            } = bn;
            const NAMES: [[&str; 5]; 3] = [
                ["conv1.weight", "bn1.gamma", "bn1.beta", "bn1.running_mean", "bn1.running_var"],
                ["conv2.weight", "bn2.gamma", "bn2.beta", "bn2.running_mean", "bn2.running_var"],
                ["conv3.weight", "bn3.gamma", "bn3.beta", "bn3.running_mean", "bn3.running_var"],
            ];
            let n = NAMES[i];
            if trainable {
                out.push((n[0], &mut conv.weight));
                out.push((n[1], gamma));
                out.push((n[2], beta));
            }
            if buffers {
                stats.push((n[3], running_mean));
                stats.push((n[4], running_var));
            }
        }
        if trainable {
            if let Some(l) = branch1_fc {
                out.push(("branch1_fc.weight", &mut l.weight));
                out.push(("branch1_fc.bias", &mut l.bias));
            }
            if let Some(l) = branch2_fc {
                out.push(("branch2_fc.weight", &mut l.weight));
                out.push(("branch2_fc.bias", &mut l.bias));
            }
            out.push(("cls1.weight", &mut cls1.weight));
            out.push(("cls1.bias", &mut cls1.bias));
            out.push(("cls2.weight", &mut cls2.weight));
            out.push(("cls2.bias", &mut cls2.bias));
        }
        out.extend(stats);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Converts every tensor to another precision.
    pub fn cast<U: Scalar>(&self) -> Mp3dcnnParams<U> {
        let conv = |c: &Conv3d<T>| Conv3d {
            c_in: c.c_in,
            c_out: c.c_out,
            k: c.k,
            weight: c.weight.cast(),
        };
        let bn = |b: &BatchNorm3d<T>| BatchNorm3d {
            c: b.c,
            gamma: b.gamma.cast(),
            beta: b.beta.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
            eps: b.eps,
            momentum: b.momentum,
        };
        let lin = |l: &Linear<T>| Linear {
            f_in: l.f_in,
            f_out: l.f_out,
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        Mp3dcnnParams {
            kind: self.kind,
            arch: self.arch.clone(),
            conv1: conv(&self.conv1),
            bn1: bn(&self.bn1),
            conv2: conv(&self.conv2),
            bn2: bn(&self.bn2),
            conv3: conv(&self.conv3),
            bn3: bn(&self.bn3),
            branch1_fc: self.branch1_fc.as_ref().map(lin),
            branch2_fc: self.branch2_fc.as_ref().map(lin),
            cls1: lin(&self.cls1),
            cls2: lin(&self.cls2),
            dropout: self.dropout,
        }
    }

    /// Replaces the tensor called `name`, checking its shape.
    pub fn set_tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        for (n, t) in self.named_tensors_mut() {
            if n == name {
                if t.shape() != value.shape() {
                    return Err(Error::shape("set_tensor", t.shape(), value.shape()));
                }
                *t = value;
                return Ok(());
            }
        }
        Err(Error::UnknownTensorName(name.to_string()))
    }
}

/// Gradients keyed like [`Mp3dcnnParams::trainable`], in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T> {
    pub entries: Vec<(&'static str, Tensor<T>)>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }
}
