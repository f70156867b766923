//! The 3-D encoder / 2-D decoder segmentation network.
//!
//! A `[1, H, W, D]` window of consecutive slices passes through `S` encoder
//! stages of 3-D convolutions (depth is trimmed by two per convolution,
//! height/width are preserved) and 2×2 spatial max-pooling. What remains of
//! the depth axis is averaged away, the 2-D bottleneck is convolved and
//! dropped out, and `S` decoder stages upsample with 4×4 stride-2 transposed
//! convolutions. Each decoder stage concatenates the center slice of the
//! matching encoder stage before its 2-D convolutions. A 1×1 head and a
//! two-class softmax give the probability map of the window's center slice.

mod model;
mod params;
pub mod skip;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub use model::{ForwardCache, ForwardOutput, Pass};
pub use params::{parameter_layout, Entry, NetworkParams, Role};
pub use skip::{center_index, center_slice_extract, crop_concat, depth_collapse};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct NetworkConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_depth: usize,
    pub stages: usize,
    /// `stages + 1` widths: one per encoder stage, then the bottleneck.
    pub channels: Vec<usize>,
    pub convs_per_stage: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::full_scale()
    }
}

impl NetworkConfig {
    /// 512×512×38 windows, five stages.
    pub fn full_scale() -> Self {
        Self {
            input_height: 512,
            input_width: 512,
            input_depth: 38,
            stages: 5,
            channels: vec![16, 32, 64, 128, 256, 512],
            convs_per_stage: 2,
            dropout_p: 0.5,
            num_classes: 2,
        }
    }

    /// 32×32×9 windows, two stages; sized for desk-scale experiments.
    pub fn toy() -> Self {
        Self {
            input_height: 32,
            input_width: 32,
            input_depth: 9,
            stages: 2,
            channels: vec![4, 8, 16],
            convs_per_stage: 2,
            dropout_p: 0.5,
            num_classes: 2,
        }
    }

    /// 8×8×5 windows, one stage, widths `[2, 4]`.
    pub fn tiny() -> Self {
        Self {
            input_height: 8,
            input_width: 8,
            input_depth: 5,
            stages: 1,
            channels: vec![2, 4],
            convs_per_stage: 2,
            dropout_p: 0.5,
            num_classes: 2,
        }
    }

    /// Checks every constraint and reports all that fail.
    pub fn validate(&self) -> Result<()> {
        let mut failed: Vec<String> = Vec::new();
        if self.stages == 0 {
            failed.push("stages must be positive".into());
        }
        if self.convs_per_stage == 0 {
            failed.push("convs_per_stage must be positive".into());
        }
        if self.input_height == 0 || self.input_width == 0 || self.input_depth == 0 {
            failed.push("input extents must be positive".into());
        }
        match 1usize.checked_shl(self.stages as u32).filter(|_| self.stages < 32) {
            Some(div) => {
                if self.input_height % div != 0 {
                    failed.push(alloc::format!(
                        "input_height {} is not divisible by 2^{} = {div}",
                        self.input_height,
                        self.stages
                    ));
                }
                if self.input_width % div != 0 {
                    failed.push(alloc::format!(
                        "input_width {} is not divisible by 2^{} = {div}",
                        self.input_width,
                        self.stages
                    ));
                }
            }
            None => failed.push("stages is too large".into()),
        }
        let trimmed = 2 * self.convs_per_stage * self.stages;
        if self.input_depth < trimmed + 1 {
            failed.push(alloc::format!(
                "input_depth {} leaves no slice at the bottleneck (needs at least 2·{}·{} + 1 = {})",
                self.input_depth,
                self.convs_per_stage,
                self.stages,
                trimmed + 1
            ));
        }
        if self.channels.len() != self.stages + 1 {
            failed.push(alloc::format!(
                "channels has {} entries, expected stages + 1 = {}",
                self.channels.len(),
                self.stages + 1
            ));
        }
        if self.channels.iter().any(|&c| c == 0) {
            failed.push("channel widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            failed.push(alloc::format!("dropout_p {} is outside [0, 1)", self.dropout_p));
        }
        if self.num_classes != 2 {
            failed.push(alloc::format!("num_classes must be 2, got {}", self.num_classes));
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(alloc::format!("invalid network config: {}", failed.join("; "))))
        }
    }

    /// Symbolic shape trace of the architecture; allocates no activations.
    pub fn plan(&self) -> Result<ArchitecturePlan> {
        self.validate()?;
        let input_center = center_index(self.input_depth);
        let mut encoder = Vec::with_capacity(self.stages);
        let (mut h, mut w, mut d) = (self.input_height, self.input_width, self.input_depth);
        let mut trimmed = 0;
        for s in 0..self.stages {
            let depth_in = d;
            d -= 2 * self.convs_per_stage;
            trimmed += self.convs_per_stage;
            let center = center_index(d);
            encoder.push(EncoderStagePlan {
                channels: self.channels[s],
                height: h,
                width: w,
                depth_in,
                depth_out: d,
                center_index: center,
                // each unpadded depth convolution drops one slice per side
                source_slice: center + trimmed,
            });
            h /= 2;
            w /= 2;
        }
        let decoder = (0..self.stages)
            .rev()
            .map(|s| DecoderStagePlan {
                channels: self.channels[s],
                height: self.input_height >> s,
                width: self.input_width >> s,
            })
            .collect();
        Ok(ArchitecturePlan {
            input_center,
            encoder,
            bottleneck_pre_collapse: [h, w, d],
            bottleneck: [h, w, 1],
            bottleneck_channels: self.channels[self.stages],
            decoder,
            output: [self.num_classes, self.input_height, self.input_width],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderStagePlan {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub depth_in: usize,
    /// Depth of the pre-pool feature map that feeds the skip connection.
    pub depth_out: usize,
    pub center_index: usize,
    /// Input-window slice that the skip center slice is aligned with.
    pub source_slice: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderStagePlan {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchitecturePlan {
    pub input_center: usize,
    pub encoder: Vec<EncoderStagePlan>,
    /// `[h, w, d]` after the last encoder stage, before the depth mean.
    pub bottleneck_pre_collapse: [usize; 3],
    pub bottleneck: [usize; 3],
    pub bottleneck_channels: usize,
    /// Deepest stage first.
    pub decoder: Vec<DecoderStagePlan>,
    pub output: [usize; 3],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_scale_bottleneck_is_16x16x1() {
        let plan = NetworkConfig::full_scale().plan().unwrap();
        assert_eq!(plan.bottleneck_pre_collapse, [16, 16, 18]);
        assert_eq!(plan.bottleneck, [16, 16, 1]);
        assert_eq!(plan.output, [2, 512, 512]);
        assert_eq!(plan.input_center, 18);
    }

    #[test]
    fn toy_depth_reaches_one() {
        let plan = NetworkConfig::toy().plan().unwrap();
        assert_eq!(plan.bottleneck_pre_collapse, [8, 8, 1]);
    }

    #[test]
    fn skip_sources_align_with_input_center() {
        for cfg in [NetworkConfig::full_scale(), NetworkConfig::toy(), NetworkConfig::tiny()] {
            let plan = cfg.plan().unwrap();
            for stage in &plan.encoder {
                assert_eq!(stage.source_slice, plan.input_center);
            }
        }
        let mut even = NetworkConfig::toy();
        even.input_depth = 12;
        let plan = even.plan().unwrap();
        assert!(plan.encoder.iter().all(|s| s.source_slice == plan.input_center));
    }

    #[test]
    fn indivisible_height_rejected() {
        let mut cfg = NetworkConfig::toy();
        cfg.input_height = 100;
        cfg.stages = 3;
        cfg.channels = vec![4, 8, 16, 32];
        cfg.input_depth = 13;
        let err = alloc::format!("{}", cfg.validate().unwrap_err());
        assert!(err.contains("input_height 100"), "{err}");
    }

    #[test]
    fn all_failures_listed() {
        let mut cfg = NetworkConfig::toy();
        cfg.input_depth = 4;
        cfg.channels = vec![4];
        let err = alloc::format!("{}", cfg.validate().unwrap_err());
        assert!(err.contains("input_depth") && err.contains("channels"), "{err}");
    }
}
