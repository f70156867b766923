use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{config_err, Result};
use crate::mask::Mask;

use super::{boundary_pixels, distance_transform};

/// Weight-map hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct LossParams {
    pub w0: f64,
    pub sigma: f64,
    /// Use `d²` instead of `d` in the exponent. Off by default: the weight is
    /// `1 + w0·exp(−d/(2σ²))` with the plain Euclidean distance.
    pub squared_distance: bool,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            w0: 20.0,
            sigma: 30.0,
            squared_distance: false,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.w0 >= 0.0) {
            return Err(config_err!("w0 must be non-negative, got {}", self.w0));
        }
        if !(self.sigma > 0.0) {
            return Err(config_err!("sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Per-pixel loss weights of one `height × width` slice.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub height: usize,
    pub width: usize,
    pub weights: Vec<f64>,
}

impl WeightMap {
    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            weights: vec![1.0; height * width],
        }
    }
}

pub fn weight_from_distance(d: f64, params: &LossParams) -> f64 {
    let x = if params.squared_distance { d * d } else { d };
    1.0 + params.w0 * Float::exp(-x / (2.0 * params.sigma * params.sigma))
}

/// `w(x) = 1 + w0·exp(−d(x)/(2σ²))`, with `d` the Euclidean distance to the
/// two-sided mask boundary. Masks without a boundary get an all-ones map.
pub fn weight_map(mask: &Mask, params: &LossParams) -> Result<WeightMap> {
    params.validate()?;
    if mask.shape().len() != 2 {
        return Err(config_err!("weight map needs a 2-D mask, got {:?}", mask.shape()));
    }
    let (h, w) = (mask.height(), mask.width());
    let boundary = boundary_pixels(mask);
    if boundary.is_empty() {
        log::debug!("mask {h}×{w} has no boundary; using unit weights");
        return Ok(WeightMap::ones(h, w));
    }
    let d = distance_transform(&boundary, h, w)?;
    Ok(WeightMap {
        height: h,
        width: w,
        weights: d.into_iter().map(|d| weight_from_distance(d, params)).collect(),
    })
}
