use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, internal_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Flat input offsets of each pooled maximum, plus the pooled input shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

fn dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w, 1)),
        [c, h, w, d] => Ok((c, h, w, d)),
        _ => Err(config_err!("max-pool input must be [C,H,W] or [C,H,W,D], got {shape:?}")),
    }
}

/// 2×2 max over the height and width axes; any depth axis is untouched.
/// Ties resolve to the first element in row-major window order.
pub fn maxpool_spatial_forward<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (c, h, w, d) = dims(input.shape())?;
    if h % 2 != 0 {
        return Err(config_err!("height axis: max-pool needs an even extent, got {h}"));
    }
    if w % 2 != 0 {
        return Err(config_err!("width axis: max-pool needs an even extent, got {w}"));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow * d);
    let mut argmax = Vec::with_capacity(c * oh * ow * d);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                for z in 0..d {
                    let mut best_i = ((ch * h + 2 * y) * w + 2 * xx) * d + z;
                    let mut best = x[best_i];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = ((ch * h + 2 * y + dy) * w + 2 * xx + dx) * d + z;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                    out.push(best);
                    argmax.push(best_i);
                }
            }
        }
    }
    let mut shape = input.shape().to_vec();
    shape[1] = oh;
    shape[2] = ow;
    Ok((
        Tensor::new(&shape, out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_spatial_backward<T: Real>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(internal_err!(
            "max-pool grad_out has {} elements, saved context {}",
            grad_out.len(),
            indices.argmax.len()
        ));
    }
    let n: usize = indices.input_shape.iter().product();
    let mut g = vec![T::zero(); n];
    for (&i, &v) in indices.argmax.iter().zip(grad_out.data()) {
        g[i] += v;
    }
    Tensor::new(&indices.input_shape, g)
}
