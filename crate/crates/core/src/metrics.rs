//! Overlap and timing metrics.

use crate::error::{config_err, Result};
use crate::mask::Mask;

/// Dice overlap `2|A∩B| / (|A| + |B|)`; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(config_err!("dice of masks with shapes {:?} and {:?}", a.shape(), b.shape()));
    }
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        na += x as usize;
        nb += y as usize;
        inter += (x & y) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Rescales a measured time to the cost of 100 slices of 512×512 pixels.
pub fn timing_normalize(seconds: f64, slices: usize, height: usize, width: usize) -> f64 {
    seconds * (100.0 / slices as f64) * ((512.0 * 512.0) / (height * width) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dice_cases() {
        let a = Mask::from_fn2(4, 4, |y, _| y == 0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = Mask::from_fn2(4, 4, |y, _| y == 3);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let c = Mask::from_fn2(4, 4, |y, x| (y == 0 && x < 2) || (y == 1 && x < 2));
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        let e = Mask::zeros(&[4, 4]);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
        assert!(dice(&a, &Mask::zeros(&[4, 5])).is_err());
    }

    #[test]
    fn timing_cases() {
        assert_eq!(timing_normalize(42.72, 100, 512, 512), 42.72);
        assert_eq!(timing_normalize(10.0, 50, 512, 512), 20.0);
        assert_eq!(timing_normalize(10.0, 100, 256, 256), 40.0);
    }
}
