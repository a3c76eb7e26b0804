use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BN_EPS, BN_MOMENTUM};

/// Which network to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Mainchain plus the two pooled branch connections.
    #[serde(rename = "mp3dcnn")]
    Mp3dcnn,
    /// The classic three-block 3D CNN used as the comparator; no branches.
    #[serde(rename = "baseline_3dcnn")]
    Baseline3dcnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mp3dcnn => "mp3dcnn",
            ModelKind::Baseline3dcnn => "baseline_3dcnn",
        }
    }

    pub fn has_branches(self) -> bool {
        matches!(self, ModelKind::Mp3dcnn)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mp3dcnn" => Ok(ModelKind::Mp3dcnn),
            "baseline_3dcnn" | "baseline" => Ok(ModelKind::Baseline3dcnn),
            other => Err(format!("unknown model kind `{other}` (expected mp3dcnn or baseline_3dcnn)")),
        }
    }
}

/// How the three feature streams are fused before the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinePolicy {
    /// `concat(branch1, mainchain + branch2)`: 3·M features.
    SumThenConcat,
    /// `concat(mainchain, branch1, branch2)`: 4·M features.
    ConcatAll,
}

impl std::str::FromStr for CombinePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "sum_then_concat" => Ok(CombinePolicy::SumThenConcat),
            "concat_all" => Ok(CombinePolicy::ConcatAll),
            other => Err(format!("unknown combine policy `{other}`")),
        }
    }
}

/// Network hyperparameters. Every linear width is derived from these by
/// [`ArchConfig::dims`]; none is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Spatial extent of one input volume.
    pub input: [usize; 3],
    pub channels: usize,
    /// Cubic kernel extents of the three mainchain convolutions.
    pub kernels: [usize; 3],
    pub main_pool: usize,
    /// Pooling kernels of branch-1 and branch-2.
    pub branch_pools: [usize; 2],
    pub hidden: usize,
    pub dropout: f64,
    pub combine: CombinePolicy,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

pub const FULL_INPUT: [usize; 3] = [79, 95, 79];
pub const FULL_KERNELS: [usize; 3] = [7, 5, 3];
/// Kernels used when the input is too small for the full-size ones.
pub const REDUCED_KERNELS: [usize; 3] = [3, 3, 3];

impl ArchConfig {
    /// Full-size configuration: 79×95×79 input, kernels 7/5/3.
    pub fn full_size() -> Self {
        ArchConfig {
            input: FULL_INPUT,
            channels: 4,
            kernels: FULL_KERNELS,
            main_pool: 2,
            branch_pools: [3, 2],
            hidden: 128,
            dropout: 0.05,
            combine: CombinePolicy::SumThenConcat,
            bn_eps: BN_EPS,
            bn_momentum: BN_MOMENTUM,
        }
    }

    /// Desk-scale configuration for 24³ volumes (kernels 3/3/3).
    pub fn reduced() -> Self {
        ArchConfig {
            input: [24, 24, 24],
            kernels: REDUCED_KERNELS,
            ..Self::full_size()
        }
    }

    /// Full-size kernels when they fit `input`, otherwise the reduced ones.
    pub fn for_input(input: [usize; 3]) -> Result<Self> {
        let full = ArchConfig { input, ..Self::full_size() };
        if full.dims().is_ok() {
            return Ok(full);
        }
        let small = ArchConfig {
            input,
            kernels: REDUCED_KERNELS,
            ..Self::full_size()
        };
        small.dims().map(|_| small).map_err(|_| Error::BadShape {
            shape: input.to_vec(),
            reason: "volume is too small for a three-block network even with 3³ kernels".into(),
        })
    }

    pub fn dims(&self) -> Result<ArchDims> {
        let bad = |reason: String| Error::BadShape {
            shape: self.input.to_vec(),
            reason,
        };
        if self.channels == 0 || self.hidden == 0 || self.main_pool == 0 || self.branch_pools.contains(&0) {
            return Err(Error::InvalidConfig("channels, hidden width and pool kernels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let mut extent = self.input;
        let mut conv_out = [[0; 3]; 3];
        let mut block_out = [[0; 3]; 3];
        for b in 0..3 {
            let k = self.kernels[b];
            if k == 0 || extent.iter().any(|&e| e < k) {
                return Err(bad(format!("conv{} kernel {k} does not fit extent {extent:?}", b + 1)));
            }
            conv_out[b] = extent.map(|e| e - k + 1);
            block_out[b] = conv_out[b].map(|e| e / self.main_pool);
            if block_out[b].contains(&0) {
                return Err(bad(format!("block{} pooling empties extent {:?}", b + 1, conv_out[b])));
            }
            extent = block_out[b];
        }
        let branch1_pooled = block_out[0].map(|e| e / self.branch_pools[0]);
        let branch2_pooled = block_out[1].map(|e| e / self.branch_pools[1]);
        if branch1_pooled.contains(&0) || branch2_pooled.contains(&0) {
            return Err(bad("branch pooling empties a block output".into()));
        }
        let c = self.channels;
        let vol = |e: [usize; 3]| c * e[0] * e[1] * e[2];
        let main_flat = vol(block_out[2]);
        let branch1_out = 2 * main_flat;
        let branch2_out = main_flat;
        let combined = match self.combine {
            CombinePolicy::SumThenConcat => branch1_out + main_flat,
            CombinePolicy::ConcatAll => main_flat + branch1_out + branch2_out,
        };
        Ok(ArchDims {
            conv_out,
            block_out,
            branch1_pooled,
            branch2_pooled,
            branch1_in: vol(branch1_pooled),
            branch1_out,
            branch2_in: vol(branch2_pooled),
            branch2_out,
            main_flat,
            combined,
        })
    }
}

/// Every derived extent and width of an [`ArchConfig`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArchDims {
    pub conv_out: [[usize; 3]; 3],
    pub block_out: [[usize; 3]; 3],
    pub branch1_pooled: [usize; 3],
    pub branch2_pooled: [usize; 3],
    pub branch1_in: usize,
    pub branch1_out: usize,
    pub branch2_in: usize,
    pub branch2_out: usize,
    pub main_flat: usize,
    /// Classifier input width of the multi-pooling network.
    pub combined: usize,
}

impl ArchDims {
    pub fn classifier_in(&self, kind: ModelKind) -> usize {
        match kind {
            ModelKind::Mp3dcnn => self.combined,
            ModelKind::Baseline3dcnn => self.main_flat,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_dimension_chain() {
        let d = ArchConfig::full_size().dims().unwrap();
        assert_eq!(d.conv_out, [[73, 89, 73], [32, 40, 32], [14, 18, 14]]);
        assert_eq!(d.block_out, [[36, 44, 36], [16, 20, 16], [7, 9, 7]]);
        assert_eq!(d.main_flat, 1764);
        assert_eq!((d.branch1_in, d.branch1_out), (8064, 3528));
        // printed as 2569 in the source; 4·8·10·8 is the only reachable value
        assert_eq!((d.branch2_in, d.branch2_out), (2560, 1764));
        assert_eq!(d.combined, 5292);
        assert_eq!(d.classifier_in(ModelKind::Baseline3dcnn), 1764);
    }

    #[test]
    fn concat_all_width() {
        let arch = ArchConfig {
            combine: CombinePolicy::ConcatAll,
            ..ArchConfig::full_size()
        };
        assert_eq!(arch.dims().unwrap().combined, 7056);
    }

    #[test]
    fn reduced_dimension_chain() {
        let d = ArchConfig::reduced().dims().unwrap();
        assert_eq!(d.block_out, [[11, 11, 11], [4, 4, 4], [1, 1, 1]]);
        assert_eq!(d.main_flat, 4);
        assert_eq!(d.branch1_in, 108);
        assert_eq!(d.branch2_in, 32);
        assert_eq!(d.combined, 12);
    }

    #[test]
    fn auto_selection() {
        assert_eq!(ArchConfig::for_input(FULL_INPUT).unwrap().kernels, FULL_KERNELS);
        assert_eq!(ArchConfig::for_input([24, 24, 24]).unwrap().kernels, REDUCED_KERNELS);
        assert!(matches!(ArchConfig::for_input([8, 8, 8]), Err(Error::BadShape { .. })));
    }
}
