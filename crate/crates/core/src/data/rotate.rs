use alloc::vec::Vec;

use num_traits::Float;

use crate::mask::Mask;
use crate::tensor::Tensor;

use super::scan::{variant_id, Provenance, ScanRecord, HU_MIN};

/// Augmentation angles in degrees; 0 is the original scan.
pub const AUGMENT_ANGLES: [i32; 7] = [-30, -20, -10, 0, 10, 20, 30];

/// `(sin, cos)` with exact values at multiples of 90°.
fn sin_cos_degrees(degrees: i32) -> (f64, f64) {
    match degrees.rem_euclid(360) {
        0 => (0.0, 1.0),
        90 => (1.0, 0.0),
        180 => (0.0, -1.0),
        270 => (-1.0, 0.0),
        _ => {
            Float::sin_cos(Float::to_radians(degrees as f64))
        }
    }
}

/// Source coordinate `(row, col)` of output pixel `(y, x)` for a rotation
/// about the slice center.
fn source(y: usize, x: usize, h: usize, w: usize, sc: (f64, f64)) -> (f64, f64) {
    let (s, c) = sc;
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let dy = y as f64 - cy;
    let dx = x as f64 - cx;
    (cy - s * dx + c * dy, cx + c * dx + s * dy)
}

/// Rotates one `h × w` slice with bilinear interpolation; samples outside
/// the slice read `fill`.
pub fn rotate_image_bilinear(img: &[f32], h: usize, w: usize, degrees: i32, fill: f32) -> Vec<f32> {
    let sc = sin_cos_degrees(degrees);
    let at = |yy: isize, xx: isize| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
            fill as f64
        } else {
            img[yy as usize * w + xx as usize] as f64
        }
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (sy, sx) = source(y, x, h, w, sc);
            let (y0, x0) = (Float::floor(sy), Float::floor(sx));
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = if fy == 0.0 && fx == 0.0 {
                at(y0, x0)
            } else {
                let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1);
                let bottom = (1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1);
                (1.0 - fy) * top + fy * bottom
            };
            out.push(v as f32);
        }
    }
    out
}

/// Rotates a 2-D mask with nearest-neighbor sampling; outside is background.
pub fn rotate_mask_nearest(mask: &Mask, degrees: i32) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    let sc = sin_cos_degrees(degrees);
    Mask::from_fn2(h, w, |y, x| {
        let (sy, sx) = source(y, x, h, w, sc);
        let (ry, rx) = (Float::round(sy), Float::round(sx));
        ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w && mask.get(ry as usize, rx as usize)
    })
}

/// Rotates every axial slice of a scan about its center. Zero degrees
/// returns an exact copy.
pub fn rotate_scan(record: &ScanRecord, degrees: i32) -> ScanRecord {
    if degrees == 0 {
        return record.clone();
    }
    let (h, w, d) = (record.height(), record.width(), record.depth());
    let mut volume = Tensor::<f32>::zeros(record.volume.shape());
    let mut mask = Mask::zeros(record.mask.shape());
    for z in 0..d {
        let rotated = rotate_image_bilinear(&record.image_slice(z), h, w, degrees, HU_MIN);
        for (i, v) in rotated.into_iter().enumerate() {
            volume.data_mut()[i * d + z] = v;
        }
        mask.set_slice(z, &rotate_mask_nearest(&record.mask.slice(z), degrees));
    }
    let base = super::base_scan_id(&record.scan_id);
    ScanRecord {
        scan_id: variant_id(base, degrees),
        volume,
        mask,
        spacing: record.spacing,
        provenance: Provenance::Rotated(degrees),
    }
}

/// The seven rotated copies (−30° to +30° in 10° steps); the 0° entry is
/// the original.
pub fn augment_all(record: &ScanRecord) -> Vec<ScanRecord> {
    AUGMENT_ANGLES.iter().map(|&a| rotate_scan(record, a)).collect()
}
