//! The multi-pooling network and its mainchain-only baseline.
//!
//! Dimension chain at full size (79×95×79 input, 4 channels):
//!
//! ```text
//! conv1 k7 → 73×89×73 → pool2 → 36×44×36 ─┬→ pool3 → 12×14×12 → 8064 → fc → 3528 (branch-1)
//! conv2 k5 → 32×40×32 → pool2 → 16×20×16 ─┼→ pool2 →  8×10×8  → 2560 → fc → 1764 (branch-2)
//! conv3 k3 → 14×18×14 → pool2 →  7×9×7   ─┴→ flatten 1764 (mainchain)
//! combined = concat(branch-1, mainchain + branch-2) = 5292 → 128 → 1
//! ```
//!
//! Convolutions are valid (no padding) with stride 1 and no bias, pooling
//! drops remainders, and branches tap block outputs after the ReLU. These
//! choices are inferred from the layer widths: they are the only ones that
//! reproduce 1764, 8064 and 5292. The branch-2 projection input is 2560,
//! the width that the same arithmetic gives.

mod arch;
mod network;
mod params;

pub use arch::{ArchConfig, ArchDims, CombinePolicy, ModelKind, FULL_INPUT, FULL_KERNELS, REDUCED_KERNELS};
pub use network::{combine_features, gradcheck_model, predict, BlockTrace, BranchTrace, ForwardTrace};
pub use params::{kaiming_bound, GradientSet, Mp3dcnnParams};
