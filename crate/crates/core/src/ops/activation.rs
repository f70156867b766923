use crate::error::{config_err, internal_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient is passed where the forward input was strictly positive.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, saved_input: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.shape() != saved_input.shape() {
        return Err(internal_err!(
            "relu grad_out {:?} vs saved input {:?}",
            grad_out.shape(),
            saved_input.shape()
        ));
    }
    let mut g = grad_out.clone();
    for (gv, &x) in g.data_mut().iter_mut().zip(saved_input.data()) {
        if x <= T::zero() {
            *gv = T::zero();
        }
    }
    Ok(g)
}

/// Two-class softmax over the channel axis of a `[2, H, W]` logit map.
pub fn softmax2<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 3 || logits.shape()[0] != 2 {
        return Err(config_err!("softmax2 expects [2, H, W], got {:?}", logits.shape()));
    }
    let n = logits.len() / 2;
    let (a, b) = logits.data().split_at(n);
    let mut out = Tensor::zeros(logits.shape());
    let (pa, pb) = out.data_mut().split_at_mut(n);
    for i in 0..n {
        let m = a[i].max(b[i]);
        let ea = (a[i] - m).exp();
        let eb = (b[i] - m).exp();
        let s = ea + eb;
        pa[i] = ea / s;
        pb[i] = eb / s;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_endpoints() {
        let neg = Tensor::<f64>::from_fn(&[6], |i| -(i as f64) - 0.5);
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::<f64>::from_fn(&[6], |i| i as f64 + 0.5);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn softmax_equal_logits_is_half() {
        let p = softmax2(&Tensor::<f64>::filled(&[2, 3, 3], 1.7)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn softmax_saturates_without_overflow() {
        let mut l = Tensor::<f64>::zeros(&[2, 1, 1]);
        l.data_mut()[0] = 40.0;
        l.data_mut()[1] = -40.0;
        let p = softmax2(&l).unwrap();
        assert!(p.data().iter().all(|v| v.is_finite()));
        assert!((p.data()[0] - 1.0).abs() < 1e-30 + 1e-15);
        assert!(p.data()[1] < 1e-34);
        let big = Tensor::<f32>::filled(&[2, 1, 1], 1.0e30);
        assert!(softmax2(&big).unwrap().data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn softmax_rejects_wrong_channel_count() {
        assert!(softmax2(&Tensor::<f64>::zeros(&[3, 2, 2])).is_err());
    }
}
