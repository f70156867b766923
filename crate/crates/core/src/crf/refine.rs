use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{config_err, Result};
use crate::loss::PROB_FLOOR;
use crate::mask::Mask;
use crate::real::Real;
use crate::tensor::Tensor;

use super::{boundary_band, CrfInstance, CrfModel, CrfParams, FrozenPixel};

#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    /// Thresholded network labels.
    pub initial: Mask,
    /// Pixels the CRF was allowed to relabel.
    pub band: Mask,
    /// Final labels; equal to `initial` outside `band`.
    pub mask: Mask,
}

/// Min-max rescales a slice to `[0, 255]`. A constant slice maps to zeros.
pub fn rescale_intensities<V: Copy + Into<f64>>(values: &[V]) -> Vec<f64> {
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        let v = v.into();
        (lo.min(v), hi.max(v))
    });
    let span = hi - lo;
    values
        .iter()
        .map(|&v| if span > 0.0 { (v.into() - lo) / span * 255.0 } else { 0.0 })
        .collect()
}

/// Relabels the boundary band of one slice with mean-field inference.
///
/// `image` holds the slice intensities, row-major, already rescaled to
/// `[0, 255]`. The organ probability is read from channel 1.
pub fn refine<T: Real>(prob_map: &Tensor<T>, image: &[f64], params: &CrfParams) -> Result<Refinement> {
    params.validate()?;
    let initial = Mask::from_probabilities(prob_map)?;
    let (h, w) = (initial.height(), initial.width());
    if image.len() != h * w {
        return Err(config_err!("image has {} pixels, probability map {h}×{w}", image.len()));
    }
    let band = boundary_band(prob_map, params.band_width)?;
    if band.count() == 0 || (params.w1 == 0.0 && params.w2 == 0.0) {
        return Ok(Refinement {
            mask: initial.clone(),
            initial,
            band,
        });
    }

    let organ = &prob_map.data()[h * w..];
    let mut instance = CrfInstance {
        pixels: Vec::new(),
        unary: Vec::new(),
        intensities: Vec::new(),
        frozen: Vec::new(),
    };
    for y in 0..h {
        for x in 0..w {
            if !band.get(y, x) {
                continue;
            }
            let p = organ[y * w + x].as_f64();
            instance.pixels.push((y, x));
            instance.unary.push([
                -Float::ln((1.0 - p).max(PROB_FLOOR)),
                -Float::ln(p.max(PROB_FLOOR)),
            ]);
            instance.intensities.push(image[y * w + x]);
        }
    }
    // Out-of-band pixels within reach of the band keep their labels.
    let reach = super::dilate_chebyshev(&band, params.neighborhood_radius);
    for y in 0..h {
        for x in 0..w {
            if reach.get(y, x) && !band.get(y, x) {
                instance.frozen.push(FrozenPixel {
                    position: (y, x),
                    intensity: image[y * w + x],
                    label: initial.get(y, x) as u8,
                });
            }
        }
    }
    let model = CrfModel::new(instance, params)?;
    let result = model.mean_field(params.iterations);
    let mut mask = initial.clone();
    for (&(y, x), &l) in model.instance().pixels.iter().zip(&result.labels) {
        mask.set(y, x, l == 1);
    }
    Ok(Refinement { initial, band, mask })
}
