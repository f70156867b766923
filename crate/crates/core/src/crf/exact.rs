use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

use super::{CrfInstance, CrfModel, CrfParams};

/// Largest band for which exhaustive minimization is attempted.
pub const BRUTE_FORCE_LIMIT: usize = 20;

/// Exhaustive minimum-energy labeling of a small instance. Labelings are
/// visited in lexicographic order (first pixel most significant) and the
/// first minimum wins.
pub fn brute_force_map(instance: &CrfInstance, params: &CrfParams) -> Result<(Vec<u8>, f64)> {
    let n = instance.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Domain(alloc::format!(
            "exhaustive search over {n} pixels refused (limit {BRUTE_FORCE_LIMIT})"
        )));
    }
    let model = CrfModel::new(instance.clone(), params)?;
    let mut labels = vec![0u8; n];
    let mut best = labels.clone();
    let mut best_e = f64::INFINITY;
    for code in 0u32..(1u32 << n) {
        for (i, l) in labels.iter_mut().enumerate() {
            *l = ((code >> (n - 1 - i)) & 1) as u8;
        }
        let e = model.energy(&labels);
        if e < best_e {
            best_e = e;
            best.copy_from_slice(&labels);
        }
    }
    Ok((best, best_e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_follows_unary() {
        let inst = CrfInstance {
            pixels: vec![(2, 2)],
            unary: vec![[2.0, 0.5]],
            intensities: vec![0.0],
            frozen: Vec::new(),
        };
        let (labels, e) = brute_force_map(&inst, &CrfParams::default()).unwrap();
        assert_eq!(labels, vec![1]);
        assert_eq!(e, 0.5);
    }

    #[test]
    fn oversized_instance_refused() {
        let n = BRUTE_FORCE_LIMIT + 1;
        let inst = CrfInstance {
            pixels: (0..n).map(|i| (0, i)).collect(),
            unary: vec![[0.0, 0.0]; n],
            intensities: vec![0.0; n],
            frozen: Vec::new(),
        };
        assert!(brute_force_map(&inst, &CrfParams::default()).is_err());
    }
}
