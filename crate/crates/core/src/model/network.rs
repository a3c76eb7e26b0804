use crate::error::{Error, Result};
use crate::layers::gradcheck::{check_tensor, GradcheckReport};
use crate::layers::{
    bce_loss, relu, relu_backward, sigmoid, AvgPool3d, BatchNorm3d, BatchNormCache, Conv3d, Dropout, DropoutMask,
    Mode, RunningStats,
};
use crate::tensor::{Rng, Scalar, Tensor};

use super::arch::{ArchConfig, CombinePolicy, ModelKind};
use super::params::{GradientSet, Mp3dcnnParams};

/// One mainchain block: conv → batch norm → average pool → ReLU.
#[derive(Debug, Clone)]
pub struct BlockTrace<T> {
    pub conv_shape: Vec<usize>,
    /// Pooled activations before the ReLU.
    pub pooled: Tensor<T>,
    pub out: Tensor<T>,
    pub bn_cache: Option<BatchNormCache<T>>,
    pub running: Option<RunningStats<T>>,
}

/// A branch connection: pooled block output, flattened, then projected.
#[derive(Debug, Clone)]
pub struct BranchTrace<T> {
    pub pooled_shape: Vec<usize>,
    pub flat: Tensor<T>,
    pub out: Tensor<T>,
}

/// Every activation and cache a backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub mode: Mode,
    pub input: Tensor<T>,
    pub block1: BlockTrace<T>,
    pub block2: BlockTrace<T>,
    pub block3: BlockTrace<T>,
    pub branch1: Option<BranchTrace<T>>,
    pub branch2: Option<BranchTrace<T>>,
    pub main_flat: Tensor<T>,
    pub combined: Tensor<T>,
    pub cls_pre: Tensor<T>,
    pub cls_hidden: Tensor<T>,
    pub dropout_mask: Option<DropoutMask<T>>,
    pub cls_dropped: Tensor<T>,
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    /// Shapes of the named stages, in forward order.
    pub fn stage_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        let mut out = vec![("block1", self.block1.out.shape().to_vec())];
        if let Some(b) = &self.branch1 {
            out.push(("branch1_flat", b.flat.shape().to_vec()));
            out.push(("branch1", b.out.shape().to_vec()));
        }
        out.push(("block2", self.block2.out.shape().to_vec()));
        if let Some(b) = &self.branch2 {
            out.push(("branch2_flat", b.flat.shape().to_vec()));
            out.push(("branch2", b.out.shape().to_vec()));
        }
        out.push(("block3", self.block3.out.shape().to_vec()));
        out.push(("mainchain_flat", self.main_flat.shape().to_vec()));
        out.push(("combined", self.combined.shape().to_vec()));
        out.push(("cls_hidden", self.cls_hidden.shape().to_vec()));
        out.push(("logits", self.logits.shape().to_vec()));
        out.push(("probs", self.probs.shape().to_vec()));
        out
    }
}

fn flatten<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let n = t.shape()[0];
    let per = t.len() / n.max(1);
    t.clone().reshape(&[n, per])
}

/// Fuses mainchain, branch-1 and branch-2 features.
///
/// `SumThenConcat` yields `concat(b1, main + b2)`; `ConcatAll` yields
/// `concat(main, b1, b2)`.
pub fn combine_features<T: Scalar>(
    main: &Tensor<T>,
    b1: &Tensor<T>,
    b2: &Tensor<T>,
    policy: CombinePolicy,
) -> Result<Tensor<T>> {
    let rank2 = |t: &Tensor<T>| t.rank() == 2;
    if !rank2(main) || !rank2(b1) || !rank2(b2) || b1.shape()[0] != main.shape()[0] || b2.shape()[0] != main.shape()[0] {
        return Err(Error::shape("combine_features", main.shape(), b1.shape()));
    }
    let n = main.shape()[0];
    let (m, w1, w2) = (main.shape()[1], b1.shape()[1], b2.shape()[1]);
    match policy {
        CombinePolicy::SumThenConcat => {
            if w2 != m {
                return Err(Error::shape("combine_features", main.shape(), b2.shape()));
            }
            let width = w1 + m;
            let mut out = Vec::with_capacity(n * width);
            for i in 0..n {
                out.extend_from_slice(&b1.data()[i * w1..(i + 1) * w1]);
                let mrow = &main.data()[i * m..(i + 1) * m];
                let brow = &b2.data()[i * m..(i + 1) * m];
                out.extend(mrow.iter().zip(brow).map(|(&a, &b)| a + b));
            }
            Tensor::from_vec(&[n, width], out)
        }
        CombinePolicy::ConcatAll => {
            let width = m + w1 + w2;
            let mut out = Vec::with_capacity(n * width);
            for i in 0..n {
                out.extend_from_slice(&main.data()[i * m..(i + 1) * m]);
                out.extend_from_slice(&b1.data()[i * w1..(i + 1) * w1]);
                out.extend_from_slice(&b2.data()[i * w2..(i + 1) * w2]);
            }
            Tensor::from_vec(&[n, width], out)
        }
    }
}

/// Labels `1` where `prob >= threshold`.
pub fn predict<T: Scalar>(probs: &Tensor<T>, threshold: f64) -> Vec<u8> {
    probs.data().iter().map(|p| u8::from(p.as_f64() >= threshold)).collect()
}

fn block_forward<T: Scalar>(
    conv: &Conv3d<T>,
    bn: &BatchNorm3d<T>,
    pool: AvgPool3d,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<BlockTrace<T>> {
    let c = conv.forward(x)?;
    let (normed, bn_cache, running) = match mode {
        Mode::Train => {
            let (y, cache, stats) = bn.forward_train(&c)?;
            (y, Some(cache), Some(stats))
        }
        Mode::Eval => (bn.forward_eval(&c)?, None, None),
    };
    let pooled = pool.forward(&normed)?;
    let out = relu(&pooled);
    Ok(BlockTrace {
        conv_shape: c.shape().to_vec(),
        pooled,
        out,
        bn_cache,
        running,
    })
}

struct BlockGrads<T> {
    input: Option<Tensor<T>>,
    weight: Tensor<T>,
    gamma: Tensor<T>,
    beta: Tensor<T>,
}

fn block_backward<T: Scalar>(
    conv: &Conv3d<T>,
    pool: AvgPool3d,
    trace: &BlockTrace<T>,
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input_grad: bool,
) -> Result<BlockGrads<T>> {
    let cache = trace
        .bn_cache
        .as_ref()
        .ok_or_else(|| Error::StaleCache("backward needs a train-mode forward trace".into()))?;
    let g_pooled = relu_backward(&trace.pooled, grad_out)?;
    let g_normed = pool.backward(&trace.conv_shape, &g_pooled)?;
    let (g_conv, gamma, beta) = BatchNorm3d::backward(cache, &g_normed)?;
    let (input, weight) = if want_input_grad {
        let (gx, gw) = conv.backward(x, &g_conv)?;
        (Some(gx), gw)
    } else {
        (None, conv.backward_weight(x, &g_conv)?)
    };
    Ok(BlockGrads {
        input,
        weight,
        gamma,
        beta,
    })
}

impl<T: Scalar> Mp3dcnnParams<T> {
    /// Runs the network on `x: [n, 1, h, w, d]`. In train mode `rng` drives
    /// dropout; eval mode never touches it.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut Rng) -> Result<ForwardTrace<T>> {
        let [h, w, d] = self.arch.input;
        if x.rank() != 5 || x.shape()[1] != 1 || x.shape()[2..] != [h, w, d] {
            let n = x.shape().first().copied().unwrap_or(0);
            return Err(Error::shape("model forward", &[n, 1, h, w, d], x.shape()));
        }
        let main_pool = AvgPool3d::new(self.arch.main_pool);
        let block1 = block_forward(&self.conv1, &self.bn1, main_pool, x, mode)?;
        let block2 = block_forward(&self.conv2, &self.bn2, main_pool, &block1.out, mode)?;
        let block3 = block_forward(&self.conv3, &self.bn3, main_pool, &block2.out, mode)?;
        let main_flat = flatten(&block3.out)?;

        let branch = |fc: &Option<crate::layers::Linear<T>>, k: usize, src: &Tensor<T>| -> Result<Option<BranchTrace<T>>> {
            let Some(fc) = fc else { return Ok(None) };
            let pooled = AvgPool3d::new(k).forward(src)?;
            let flat = flatten(&pooled)?;
            let out = fc.forward(&flat)?;
            Ok(Some(BranchTrace {
                pooled_shape: pooled.shape().to_vec(),
                flat,
                out,
            }))
        };
        let branch1 = branch(&self.branch1_fc, self.arch.branch_pools[0], &block1.out)?;
        let branch2 = branch(&self.branch2_fc, self.arch.branch_pools[1], &block2.out)?;

        let combined = match (&branch1, &branch2) {
            (Some(b1), Some(b2)) => combine_features(&main_flat, &b1.out, &b2.out, self.arch.combine)?,
            _ => main_flat.clone(),
        };
        let cls_pre = self.cls1.forward(&combined)?;
        let cls_hidden = relu(&cls_pre);
        let (cls_dropped, dropout_mask) = self.dropout.forward(&cls_hidden, mode, rng);
        let logits = self.cls2.forward(&cls_dropped)?;
        let n = x.shape()[0];
        let probs = sigmoid(&logits).reshape(&[n])?;
        Ok(ForwardTrace {
            mode,
            input: x.clone(),
            block1,
            block2,
            block3,
            branch1,
            branch2,
            main_flat,
            combined,
            cls_pre,
            cls_hidden,
            dropout_mask,
            cls_dropped,
            logits,
            probs,
        })
    }

    /// Mean BCE of the trace's probabilities against `labels`.
    pub fn loss(&self, trace: &ForwardTrace<T>, labels: &Tensor<T>) -> Result<T> {
        Ok(bce_loss(&trace.probs, labels)?.0)
    }

    /// Gradients of the mean BCE loss for every trainable tensor.
    ///
    /// The sigmoid and BCE are differentiated together, giving `(p − y)/n` at
    /// the logit. Conv1 and conv2 receive the sum of their mainchain and
    /// branch contributions.
    pub fn backward(&self, trace: &ForwardTrace<T>, labels: &Tensor<T>) -> Result<GradientSet<T>> {
        if trace.mode != Mode::Train {
            return Err(Error::StaleCache("backward needs a train-mode forward trace".into()));
        }
        let n = trace.probs.len();
        if labels.shape() != [n] {
            return Err(Error::shape("model backward labels", &[n], labels.shape()));
        }
        if self.kind.has_branches() != trace.branch1.is_some() {
            return Err(Error::StaleCache("trace was produced by a different model kind".into()));
        }
        let inv_n = T::one() / T::of_f64(n as f64);
        let g_logit: Vec<T> = trace
            .probs
            .data()
            .iter()
            .zip(labels.data())
            .map(|(&p, &y)| (p - y) * inv_n)
            .collect();
        let g_logit = Tensor::from_vec(&[n, 1], g_logit)?;

        let (g_dropped, g_cls2_w, g_cls2_b) = self.cls2.backward(&trace.cls_dropped, &g_logit)?;
        let g_hidden = Dropout::backward(trace.dropout_mask.as_ref(), &g_dropped)?;
        let g_pre = relu_backward(&trace.cls_pre, &g_hidden)?;
        let (g_combined, g_cls1_w, g_cls1_b) = self.cls1.backward(&trace.combined, &g_pre)?;

        let m = trace.main_flat.shape()[1];
        let width = g_combined.shape()[1];
        let take = |lo: usize, hi: usize| -> Result<Tensor<T>> {
            let mut out = Vec::with_capacity(n * (hi - lo));
            for row in g_combined.data().chunks_exact(width) {
                out.extend_from_slice(&row[lo..hi]);
            }
            Tensor::from_vec(&[n, hi - lo], out)
        };
        let (g_main, g_b1, g_b2) = match (&trace.branch1, &trace.branch2) {
            (Some(b1), Some(_)) => {
                let w1 = b1.out.shape()[1];
                match self.arch.combine {
                    CombinePolicy::SumThenConcat => {
                        let g_sum = take(w1, w1 + m)?;
                        (g_sum.clone(), Some(take(0, w1)?), Some(g_sum))
                    }
                    CombinePolicy::ConcatAll => (take(0, m)?, Some(take(m, m + w1)?), Some(take(m + w1, width)?)),
                }
            }
            _ => (g_combined.clone(), None, None),
        };

        let main_pool = AvgPool3d::new(self.arch.main_pool);
        let g_a3 = g_main.reshape(trace.block3.out.shape())?;
        let b3 = block_backward(&self.conv3, main_pool, &trace.block3, &trace.block2.out, &g_a3, true)?;
        let mut g_a2 = b3.input.expect("input grad");

        let mut branch_grads = Vec::new();
        let mut branch_back = |fc: &Option<crate::layers::Linear<T>>,
                               tr: &Option<BranchTrace<T>>,
                               g: Option<Tensor<T>>,
                               k: usize,
                               block_shape: &[usize]|
         -> Result<Option<Tensor<T>>> {
            let (Some(fc), Some(tr), Some(g)) = (fc, tr, g) else { return Ok(None) };
            let (g_flat, gw, gb) = fc.backward(&tr.flat, &g)?;
            branch_grads.push((gw, gb));
            let g_pooled = g_flat.reshape(&tr.pooled_shape)?;
            Ok(Some(AvgPool3d::new(k).backward(block_shape, &g_pooled)?))
        };
        let g_a2_branch = branch_back(
            &self.branch2_fc,
            &trace.branch2,
            g_b2,
            self.arch.branch_pools[1],
            trace.block2.out.shape(),
        )?;
        if let Some(g) = g_a2_branch {
            g_a2.add_assign(&g)?;
        }
        let b2 = block_backward(&self.conv2, main_pool, &trace.block2, &trace.block1.out, &g_a2, true)?;
        let mut g_a1 = b2.input.expect("input grad");
        let g_a1_branch = branch_back(
            &self.branch1_fc,
            &trace.branch1,
            g_b1,
            self.arch.branch_pools[0],
            trace.block1.out.shape(),
        )?;
        if let Some(g) = g_a1_branch {
            g_a1.add_assign(&g)?;
        }
        let b1 = block_backward(&self.conv1, main_pool, &trace.block1, &trace.input, &g_a1, false)?;

        let mut entries = vec![
            ("conv1.weight", b1.weight),
            ("bn1.gamma", b1.gamma),
            ("bn1.beta", b1.beta),
            ("conv2.weight", b2.weight),
            ("bn2.gamma", b2.gamma),
            ("bn2.beta", b2.beta),
            ("conv3.weight", b3.weight),
            ("bn3.gamma", b3.gamma),
            ("bn3.beta", b3.beta),
        ];
        // branch_grads holds branch-2 first (it is differentiated first).
        let mut bg = branch_grads.into_iter().rev();
        if let Some((w, b)) = bg.next() {
            entries.push(("branch1_fc.weight", w));
            entries.push(("branch1_fc.bias", b));
        }
        if let Some((w, b)) = bg.next() {
            entries.push(("branch2_fc.weight", w));
            entries.push(("branch2_fc.bias", b));
        }
        entries.push(("cls1.weight", g_cls1_w));
        entries.push(("cls1.bias", g_cls1_b));
        entries.push(("cls2.weight", g_cls2_w));
        entries.push(("cls2.bias", g_cls2_b));
        Ok(GradientSet { entries })
    }

    /// Adopts the running statistics computed by a train-mode forward.
    pub fn apply_running_stats(&mut self, trace: &ForwardTrace<T>) {
        for (bn, block) in [
            (&mut self.bn1, &trace.block1),
            (&mut self.bn2, &trace.block2),
            (&mut self.bn3, &trace.block3),
        ] {
            if let Some(stats) = &block.running {
                bn.set_running(stats.clone());
            }
        }
    }
}

/// Finite-difference check of [`Mp3dcnnParams::backward`] over every trainable
/// tensor, at double precision, on a random batch of `batch` volumes.
pub fn gradcheck_model(kind: ModelKind, arch: &ArchConfig, batch: usize, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    let root = Rng::new(seed);
    let params = Mp3dcnnParams::<f64>::init(kind, arch, &root.derive(0))?;
    let [h, w, d] = arch.input;
    let mut data_rng = root.derive(1);
    let x = Tensor::from_vec(
        &[batch, 1, h, w, d],
        (0..batch * h * w * d).map(|_| data_rng.normal()).collect(),
    )?;
    let labels: Vec<f64> = (0..batch).map(|i| (i % 2) as f64).collect();
    let labels = Tensor::from_vec(&[batch], labels)?;
    let dropout_rng = root.derive(2);

    let trace = params.forward(&x, Mode::Train, &mut dropout_rng.clone())?;
    let grads = params.backward(&trace, &labels)?;
    let objective = |p: &Mp3dcnnParams<f64>| -> f64 {
        let t = p.forward(&x, Mode::Train, &mut dropout_rng.clone()).expect("forward");
        p.loss(&t, &labels).expect("loss")
    };

    let mut entries = Vec::new();
    for (name, value) in params.trainable() {
        let analytic = grads.get(name).expect("gradient for every trainable tensor");
        let mut probe = params.clone();
        entries.push(check_tensor(
            name,
            value,
            analytic,
            tolerance,
            |t| {
                probe.set_tensor(name, t.clone()).expect("same shape");
                objective(&probe)
            },
            |_, _, _| false,
        ));
    }
    Ok(GradcheckReport {
        subject: format!("{} model {:?}", kind.name(), arch.input),
        entries,
    })
}
