use alloc::vec::Vec;

use rand::Rng;

use crate::error::{config_err, internal_err, Result};
use crate::ops::norm::Mode;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

/// Per-element multipliers applied by a train-mode dropout: `0` or `1/(1−p)`.
/// `None` means the forward pass was an identity.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T>(pub Option<Vec<T>>);

/// Inverted dropout. The keep/drop decisions are a pure function of `seed`.
pub fn dropout<T: Real>(input: &Tensor<T>, p: f64, mode: Mode, seed: u64) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(config_err!("dropout probability must lie in [0, 1), got {p}"));
    }
    if mode == Mode::Infer || p == 0.0 {
        return Ok((input.clone(), DropoutMask(None)));
    }
    let scale = T::from_f64(1.0 / (1.0 - p));
    let mut r = rng::rng(seed, &[0xd409]);
    let mask: Vec<T> = (0..input.len())
        .map(|_| if r.gen::<f64>() < p { T::zero() } else { scale })
        .collect();
    let mut out = input.clone();
    out.data_mut().iter_mut().zip(&mask).for_each(|(v, &m)| *v *= m);
    Ok((out, DropoutMask(Some(mask))))
}

pub fn dropout_backward<T: Real>(grad_out: &Tensor<T>, mask: &DropoutMask<T>) -> Result<Tensor<T>> {
    match &mask.0 {
        None => Ok(grad_out.clone()),
        Some(m) if m.len() == grad_out.len() => {
            let mut g = grad_out.clone();
            g.data_mut().iter_mut().zip(m).for_each(|(v, &s)| *v *= s);
            Ok(g)
        }
        Some(m) => Err(internal_err!(
            "dropout mask has {} entries, grad_out {}",
            m.len(),
            grad_out.len()
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_are_bit_exact() {
        let x = Tensor::<f64>::from_fn(&[4, 5], |i| (i as f64 * 0.37).sin());
        assert_eq!(dropout(&x, 0.0, Mode::Train, 1).unwrap().0, x);
        assert_eq!(dropout(&x, 0.7, Mode::Infer, 1).unwrap().0, x);
    }

    #[test]
    fn rejects_p_at_least_one() {
        let x = Tensor::<f64>::zeros(&[3]);
        assert!(dropout(&x, 1.0, Mode::Train, 0).is_err());
        assert!(dropout(&x, -0.1, Mode::Train, 0).is_err());
    }

    #[test]
    fn survivor_fraction_concentrates() {
        // Binomial(1e6, 0.5) has sd 500; the window is ±6 sd.
        let x = Tensor::<f32>::filled(&[1_000_000], 1.0);
        let (y, _) = dropout(&x, 0.5, Mode::Train, 42).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e6;
        assert!((0.497..=0.503).contains(&kept), "kept fraction {kept}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn mask_reproducible_from_seed() {
        let x = Tensor::<f64>::filled(&[64], 1.0);
        let a = dropout(&x, 0.5, Mode::Train, 9).unwrap();
        let b = dropout(&x, 0.5, Mode::Train, 9).unwrap();
        let c = dropout(&x, 0.5, Mode::Train, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }
}
