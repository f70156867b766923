use alloc::format;
use alloc::string::String;

use crate::error::{config_err, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Soft-tissue intensity window in Hounsfield units.
pub const HU_MIN: f32 = -200.0;
pub const HU_MAX: f32 = 300.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Original,
    /// In-plane rotation by this many degrees.
    Rotated(i32),
}

/// One CT scan with its aligned ground-truth mask, both `[H, W, D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanRecord {
    pub scan_id: String,
    /// Intensities in Hounsfield units.
    pub volume: Tensor<f32>,
    pub mask: Mask,
    /// Voxel spacing in millimetres (row, column, slice).
    pub spacing: [f64; 3],
    pub provenance: Provenance,
}

impl ScanRecord {
    pub fn new(scan_id: impl Into<String>, volume: Tensor<f32>, mask: Mask, spacing: [f64; 3]) -> Result<Self> {
        if volume.rank() != 3 {
            return Err(config_err!("scan volume must be [H, W, D], got {:?}", volume.shape()));
        }
        if volume.shape() != mask.shape() {
            return Err(config_err!(
                "volume {:?} and mask {:?} differ in shape",
                volume.shape(),
                mask.shape()
            ));
        }
        Ok(Self {
            scan_id: scan_id.into(),
            volume,
            mask,
            spacing,
            provenance: Provenance::Original,
        })
    }

    pub fn height(&self) -> usize {
        self.volume.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.volume.shape()[1]
    }

    pub fn depth(&self) -> usize {
        self.volume.shape()[2]
    }

    /// Axial slice `z` of the intensity volume, row-major.
    pub fn image_slice(&self, z: usize) -> alloc::vec::Vec<f32> {
        let d = self.depth();
        (0..self.height() * self.width()).map(|i| self.volume.data()[i * d + z]).collect()
    }
}

/// Id of a rotated copy of `base`.
pub fn variant_id(base: &str, degrees: i32) -> String {
    if degrees == 0 {
        String::from(base)
    } else {
        format!("{base}@rot{degrees:+}")
    }
}

/// The original scan id behind a (possibly rotated) variant id.
pub fn base_scan_id(id: &str) -> &str {
    id.split_once("@rot").map_or(id, |(base, _)| base)
}

/// Clamps to `[HU_MIN, HU_MAX]` and maps linearly onto `[0, 1]`.
pub fn normalize_hu(volume: &Tensor<f32>) -> Tensor<f32> {
    let span = HU_MAX - HU_MIN;
    volume.map(|v| (v.clamp(HU_MIN, HU_MAX) - HU_MIN) / span)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_endpoints_and_midpoint() {
        let t = Tensor::new(&[5], alloc::vec![-200.0f32, 300.0, 50.0, -1000.0, 2000.0]).unwrap();
        assert_eq!(normalize_hu(&t).data(), &[0.0, 1.0, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn variant_ids_round_trip() {
        assert_eq!(variant_id("liver07", -20), "liver07@rot-20");
        assert_eq!(variant_id("liver07", 10), "liver07@rot+10");
        assert_eq!(variant_id("liver07", 0), "liver07");
        assert_eq!(base_scan_id("liver07@rot-20"), "liver07");
        assert_eq!(base_scan_id("liver07"), "liver07");
    }
}
