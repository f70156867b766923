use alloc::vec;

use crate::error::Result;
use crate::loss::{boundary_mask, Exterior};
use crate::mask::Mask;
use crate::real::Real;
use crate::tensor::Tensor;

/// Pixels within Chebyshev distance `radius` of a set pixel.
pub fn dilate_chebyshev(mask: &Mask, radius: usize) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let mut rows = vec![0u8; h * w];
    for y in 0..h {
        // Distance to the nearest set pixel to the left / right.
        let mut last: Option<usize> = None;
        for x in 0..w {
            if mask.get(y, x) {
                last = Some(x);
            }
            if last.is_some_and(|l| x - l <= radius) {
                rows[y * w + x] = 1;
            }
        }
        let mut next: Option<usize> = None;
        for x in (0..w).rev() {
            if mask.get(y, x) {
                next = Some(x);
            }
            if next.is_some_and(|n| n - x <= radius) {
                rows[y * w + x] = 1;
            }
        }
    }
    let mut out = vec![0u8; h * w];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if rows[y * w + x] == 1 {
                last = Some(y);
            }
            if last.is_some_and(|l| y - l <= radius) {
                out[y * w + x] = 1;
            }
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if rows[y * w + x] == 1 {
                next = Some(y);
            }
            if next.is_some_and(|n| n - y <= radius) {
                out[y * w + x] = 1;
            }
        }
    }
    Mask::new(&[h, w], out).expect("same shape")
}

/// Band of pixels within `band_width` (Chebyshev) of the two-sided boundary
/// of the 0.5-thresholded organ channel. The image exterior counts as
/// background, so an organ touching the edge has a boundary there.
pub fn boundary_band<T: Real>(prob_map: &Tensor<T>, band_width: usize) -> Result<Mask> {
    let initial = Mask::from_probabilities(prob_map)?;
    let boundary = boundary_mask(&initial, Exterior::Background);
    Ok(dilate_chebyshev(&boundary, band_width))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_gives_empty_band() {
        let p = Tensor::<f64>::from_fn(&[2, 6, 6], |i| if i < 36 { 0.9 } else { 0.1 });
        assert_eq!(boundary_band(&p, 2).unwrap().count(), 0);
    }

    #[test]
    fn full_foreground_band_hugs_the_rim() {
        let p = Tensor::<f64>::from_fn(&[2, 12, 12], |i| if i < 144 { 0.1 } else { 0.9 });
        let band = boundary_band(&p, 2).unwrap();
        for y in 0..12 {
            for x in 0..12 {
                let rim = y.min(x).min(11 - y).min(11 - x);
                assert_eq!(band.get(y, x), rim <= 2, "({y},{x})");
            }
        }
    }
}
