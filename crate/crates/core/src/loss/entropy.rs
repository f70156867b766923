use num_traits::Float;

use crate::error::{config_err, Result};
use crate::mask::Mask;
use crate::real::Real;
use crate::tensor::Tensor;

use super::WeightMap;

/// Probabilities are clamped to this floor before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput<T> {
    /// `−Σ w(x)·log p_c(x)` over the slice.
    pub sum: f64,
    /// `sum` divided by the pixel count.
    pub mean: f64,
    /// Gradient with respect to the pre-softmax logits, `w·(p − onehot)`.
    pub grad_logits: Tensor<T>,
}

/// Weighted two-class cross-entropy on softmax outputs, fused with the
/// softmax so the gradient is taken with respect to the logits.
pub fn weighted_cross_entropy<T: Real>(probs: &Tensor<T>, target: &Mask, wmap: &WeightMap) -> Result<LossOutput<T>> {
    let &[2, h, w] = probs.shape() else {
        return Err(config_err!("probabilities must be [2, H, W], got {:?}", probs.shape()));
    };
    if target.shape() != [h, w] {
        return Err(config_err!("target {:?} does not match probabilities {h}×{w}", target.shape()));
    }
    if wmap.height != h || wmap.width != w || wmap.weights.len() != h * w {
        return Err(config_err!("weight map {}×{} does not match probabilities {h}×{w}", wmap.height, wmap.width));
    }
    let n = h * w;
    let p = probs.data();
    let mut grad = Tensor::zeros(probs.shape());
    let g = grad.data_mut();
    let mut sum = 0.0f64;
    for i in 0..n {
        let c = target.data()[i] as usize;
        let wi = wmap.weights[i];
        // NaN must survive the floor so that divergence is visible
        let pc = p[c * n + i].as_f64();
        let pc = if pc < PROB_FLOOR { PROB_FLOOR } else { pc };
        sum -= wi * Float::ln(pc);
        for k in 0..2 {
            let onehot = if k == c { 1.0 } else { 0.0 };
            g[k * n + i] = T::from_f64(wi * (p[k * n + i].as_f64() - onehot));
        }
    }
    Ok(LossOutput {
        sum,
        mean: sum / n as f64,
        grad_logits: grad,
    })
}

/// Unweighted cross-entropy.
pub fn cross_entropy<T: Real>(probs: &Tensor<T>, target: &Mask) -> Result<LossOutput<T>> {
    let &[2, h, w] = probs.shape() else {
        return Err(config_err!("probabilities must be [2, H, W], got {:?}", probs.shape()));
    };
    weighted_cross_entropy(probs, target, &WeightMap::ones(h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let target = Mask::from_fn2(3, 4, |y, x| (y + x) % 2 == 0);
        let mut probs = Tensor::<f64>::zeros(&[2, 3, 4]);
        for i in 0..12 {
            let c = target.data()[i] as usize;
            probs.data_mut()[c * 12 + i] = 1.0;
        }
        let out = cross_entropy(&probs, &target).unwrap();
        assert_eq!(out.sum, 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln2_per_pixel() {
        let target = Mask::from_fn2(5, 5, |y, _| y < 2);
        let probs = Tensor::<f64>::filled(&[2, 5, 5], 0.5);
        let out = cross_entropy(&probs, &target).unwrap();
        assert!((out.sum - 25.0 * core::f64::consts::LN_2).abs() < 1e-12);
        assert!((out.mean - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn nan_probability_gives_nan_loss() {
        let target = Mask::from_fn2(1, 2, |_, x| x == 0);
        let probs = Tensor::<f64>::new(&[2, 1, 2], alloc::vec![0.5, f64::NAN, 0.5, f64::NAN]).unwrap();
        assert!(cross_entropy(&probs, &target).unwrap().sum.is_nan());
    }

    #[test]
    fn zero_probability_is_clamped() {
        let target = Mask::from_fn2(1, 1, |_, _| true);
        let mut probs = Tensor::<f64>::zeros(&[2, 1, 1]);
        probs.data_mut()[0] = 1.0;
        let out = cross_entropy(&probs, &target).unwrap();
        assert!((out.sum - 12.0 * core::f64::consts::LN_10).abs() < 1e-9);
    }
}
