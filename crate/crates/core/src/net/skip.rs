//! The 3-D to 2-D glue of the network: center-slice extraction for skip
//! connections, crop-and-concatenate, and the bottleneck depth collapse.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, internal_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Index of the middle slice of a `depth`-slice stack: `floor((depth−1)/2)`.
pub fn center_index(depth: usize) -> usize {
    depth.saturating_sub(1) / 2
}

fn dims4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w, d] => Ok((c, h, w, d)),
        _ => Err(config_err!("{what} expects [C, h, w, d], got {shape:?}")),
    }
}

/// `[C, h, w, d] -> [C, h, w]` at depth index `center_index(d)`.
pub fn center_slice_extract<T: Real>(feature: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, d) = dims4(feature.shape(), "center_slice_extract")?;
    let z = center_index(d);
    let x = feature.data();
    let mut out = Vec::with_capacity(c * h * w);
    for i in 0..c * h * w {
        out.push(x[i * d + z]);
    }
    Tensor::new(&[c, h, w], out)
}

pub fn center_slice_backward<T: Real>(grad: &Tensor<T>, depth: usize) -> Result<Tensor<T>> {
    if grad.rank() != 3 || depth == 0 {
        return Err(internal_err!("center slice gradient {:?} with depth {depth}", grad.shape()));
    }
    let s = grad.shape();
    let z = center_index(depth);
    let mut out = vec![T::zero(); grad.len() * depth];
    for (i, &g) in grad.data().iter().enumerate() {
        out[i * depth + z] = g;
    }
    Tensor::new(&[s[0], s[1], s[2], depth], out)
}

/// Mean over the depth axis; a single slice is passed through unchanged.
pub fn depth_collapse<T: Real>(feature: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w, d) = dims4(feature.shape(), "depth_collapse")?;
    if d == 1 {
        return feature.reshape(&[c, h, w]);
    }
    let inv = T::one() / T::from_f64(d as f64);
    let out = feature
        .data()
        .chunks(d)
        .map(|col| {
            let mut s = T::zero();
            for &v in col {
                s += v;
            }
            s * inv
        })
        .collect();
    Tensor::new(&[c, h, w], out)
}

pub fn depth_collapse_backward<T: Real>(grad: &Tensor<T>, depth: usize) -> Result<Tensor<T>> {
    if grad.rank() != 3 || depth == 0 {
        return Err(internal_err!("depth collapse gradient {:?} with depth {depth}", grad.shape()));
    }
    let s = grad.shape();
    if depth == 1 {
        return grad.reshape(&[s[0], s[1], s[2], 1]);
    }
    let inv = T::one() / T::from_f64(depth as f64);
    let mut out = Vec::with_capacity(grad.len() * depth);
    for &g in grad.data() {
        let v = g * inv;
        out.extend(core::iter::repeat(v).take(depth));
    }
    Tensor::new(&[s[0], s[1], s[2], depth], out)
}

/// Context needed to split a crop-and-concat gradient.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CropConcat {
    pub decoder_channels: usize,
    pub encoder_shape: [usize; 3],
    pub offset: (usize, usize),
}

/// Center-crops `encoder_center` to the decoder map's extent and appends it
/// after the decoder channels.
pub fn crop_concat<T: Real>(decoder_map: &Tensor<T>, encoder_center: &Tensor<T>) -> Result<(Tensor<T>, CropConcat)> {
    let (&[c1, h, w], &[c2, eh, ew]) = (decoder_map.shape(), encoder_center.shape()) else {
        return Err(config_err!(
            "crop_concat expects two [C, h, w] maps, got {:?} and {:?}",
            decoder_map.shape(),
            encoder_center.shape()
        ));
    };
    if eh < h || ew < w {
        return Err(internal_err!(
            "encoder map {eh}×{ew} is smaller than decoder map {h}×{w}"
        ));
    }
    let (oy, ox) = ((eh - h) / 2, (ew - w) / 2);
    let mut out = Vec::with_capacity((c1 + c2) * h * w);
    out.extend_from_slice(decoder_map.data());
    let e = encoder_center.data();
    for ch in 0..c2 {
        for y in 0..h {
            let start = (ch * eh + y + oy) * ew + ox;
            out.extend_from_slice(&e[start..start + w]);
        }
    }
    Ok((
        Tensor::new(&[c1 + c2, h, w], out)?,
        CropConcat {
            decoder_channels: c1,
            encoder_shape: [c2, eh, ew],
            offset: (oy, ox),
        },
    ))
}

/// Returns `(grad_decoder, grad_encoder)`; the encoder gradient is zero
/// outside the cropped window.
pub fn crop_concat_backward<T: Real>(grad: &Tensor<T>, ctx: &CropConcat) -> Result<(Tensor<T>, Tensor<T>)> {
    let [c2, eh, ew] = ctx.encoder_shape;
    let c1 = ctx.decoder_channels;
    let &[c, h, w] = grad.shape() else {
        return Err(internal_err!("crop_concat gradient must be [C, h, w], got {:?}", grad.shape()));
    };
    if c != c1 + c2 {
        return Err(internal_err!("crop_concat gradient has {c} channels, expected {}", c1 + c2));
    }
    let (head, tail) = grad.data().split_at(c1 * h * w);
    let gd = Tensor::new(&[c1, h, w], head.to_vec())?;
    let mut ge = vec![T::zero(); c2 * eh * ew];
    let (oy, ox) = ctx.offset;
    for ch in 0..c2 {
        for y in 0..h {
            let dst = (ch * eh + y + oy) * ew + ox;
            let src = (ch * h + y) * w;
            ge[dst..dst + w].copy_from_slice(&tail[src..src + w]);
        }
    }
    Ok((gd, Tensor::new(&[c2, eh, ew], ge)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_indices() {
        assert_eq!(center_index(1), 0);
        assert_eq!(center_index(5), 2);
        assert_eq!(center_index(18), 8);
        assert_eq!(center_index(38), 18);
    }

    #[test]
    fn single_slice_extract_is_the_slice() {
        let f = Tensor::<f64>::from_fn(&[2, 3, 3, 1], |i| i as f64);
        assert_eq!(center_slice_extract(&f).unwrap().data(), f.data());
    }

    #[test]
    fn crop_concat_centers_encoder_window() {
        let dec = Tensor::<f64>::from_fn(&[3, 8, 8], |i| -(i as f64));
        let enc = Tensor::<f64>::from_fn(&[2, 10, 10], |i| i as f64);
        let (out, ctx) = crop_concat(&dec, &enc).unwrap();
        assert_eq!(out.shape(), &[5, 8, 8]);
        assert_eq!(ctx.offset, (1, 1));
        assert_eq!(&out.data()[..192], dec.data());
        assert_eq!(out.at(&[3, 0, 0]), enc.at(&[0, 1, 1]));
        assert_eq!(out.at(&[4, 7, 7]), enc.at(&[1, 8, 8]));
    }

    #[test]
    fn crop_concat_equal_sizes_is_concatenation() {
        let dec = Tensor::<f64>::from_fn(&[1, 4, 4], |i| i as f64);
        let enc = Tensor::<f64>::from_fn(&[2, 4, 4], |i| 100.0 + i as f64);
        let (out, _) = crop_concat(&dec, &enc).unwrap();
        let mut expected = dec.data().to_vec();
        expected.extend_from_slice(enc.data());
        assert_eq!(out.data(), expected.as_slice());
    }

    #[test]
    fn smaller_encoder_is_internal_error() {
        let dec = Tensor::<f64>::zeros(&[1, 8, 8]);
        let enc = Tensor::<f64>::zeros(&[1, 6, 8]);
        assert!(matches!(crop_concat(&dec, &enc), Err(crate::Error::Internal(_))));
    }

    #[test]
    fn collapse_constant_and_single_slice() {
        let f = Tensor::<f64>::filled(&[2, 3, 3, 4], 2.5);
        assert!(depth_collapse(&f).unwrap().data().iter().all(|&v| v == 2.5));
        let g = Tensor::<f64>::from_fn(&[2, 3, 3, 1], |i| i as f64 * 0.1);
        assert_eq!(depth_collapse(&g).unwrap().data(), g.data());
    }
}
