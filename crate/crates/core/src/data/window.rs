use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::net::center_index;
use crate::real::Real;
use crate::tensor::Tensor;

/// Slice indices of a `depth`-slice window whose center (per
/// `center_index`) is `center`; indices past either end repeat the edge.
pub fn window_slices(center: usize, depth: usize, total: usize) -> Vec<usize> {
    let offset = center_index(depth) as isize;
    (0..depth as isize)
        .map(|i| (center as isize - offset + i).clamp(0, total as isize - 1) as usize)
        .collect()
}

/// `[1, H, W, depth]` window of an `[H, W, D]` volume.
pub fn extract_window<T: Real>(volume: &Tensor<f32>, center: usize, depth: usize) -> Result<Tensor<T>> {
    let &[h, w, total] = volume.shape() else {
        return Err(config_err!("volume must be [H, W, D], got {:?}", volume.shape()));
    };
    if center >= total {
        return Err(config_err!("center slice {center} outside a {total}-slice volume"));
    }
    if depth == 0 {
        return Err(config_err!("window depth must be positive"));
    }
    let slices = window_slices(center, depth, total);
    let src = volume.data();
    let mut out = Vec::with_capacity(h * w * depth);
    for i in 0..h * w {
        let col = &src[i * total..(i + 1) * total];
        out.extend(slices.iter().map(|&z| T::from_f64(col[z] as f64)));
    }
    Tensor::new(&[1, h, w, depth], out)
}
