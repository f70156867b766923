//! Boundary extraction, the exact distance transform and the weight map
//! against brute force.

mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxelseg_core::crf::dilate_chebyshev;
use voxelseg_core::loss::{
    boundary_pixels, distance_transform, squared_distance_transform, weight_from_distance, weight_map, LossParams,
};
use voxelseg_core::Mask;
use oracle::*;

#[test]
fn boundary_matches_neighbor_scan() {
    let mut r = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let m = random_mask(&mut r, 32, 32);
        assert_eq!(boundary_pixels(&m), brute_boundary(&m));
    }
}

#[test]
fn distance_transform_equals_brute_force_exactly() {
    let mut r = ChaCha8Rng::seed_from_u64(22);
    let mut checked = 0;
    while checked < 100 {
        let m = random_mask(&mut r, 32, 32);
        let b = boundary_pixels(&m);
        if b.is_empty() {
            continue;
        }
        let fast = squared_distance_transform(&b, 32, 32).unwrap();
        for y in 0..32usize {
            for x in 0..32usize {
                let brute = b
                    .iter()
                    .map(|&(by, bx)| (y.abs_diff(by).pow(2) + x.abs_diff(bx).pow(2)) as u64)
                    .min()
                    .unwrap();
                assert_eq!(fast[y * 32 + x], brute, "pixel ({y}, {x})");
            }
        }
        let d = distance_transform(&b, 32, 32).unwrap();
        assert!(d.iter().zip(&fast).all(|(&d, &s)| d == (s as f64).sqrt()));
        checked += 1;
    }
}

#[test]
fn distance_transform_on_non_square_images() {
    let mut r = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..30 {
        let (h, w) = (r.gen_range(1..20), r.gen_range(1..20));
        let b: Vec<(usize, usize)> = (0..r.gen_range(1..5)).map(|_| (r.gen_range(0..h), r.gen_range(0..w))).collect();
        let fast = squared_distance_transform(&b, h, w).unwrap();
        for y in 0..h {
            for x in 0..w {
                let brute = b.iter().map(|&(by, bx)| (y.abs_diff(by).pow(2) + x.abs_diff(bx).pow(2)) as u64).min();
                assert_eq!(Some(fast[y * w + x]), brute);
            }
        }
    }
}

#[test]
fn reference_weights() {
    let p = LossParams::default();
    assert_eq!(weight_from_distance(0.0, &p), 21.0);
    let expected = 1.0 + 20.0 * (-1.0f64).exp();
    assert!((weight_from_distance(2.0 * 30.0 * 30.0, &p) - expected).abs() <= 1e-12);
}

#[test]
fn weight_map_peaks_on_boundary_and_decays() {
    let mut r = ChaCha8Rng::seed_from_u64(24);
    let p = LossParams {
        sigma: 3.0,
        ..LossParams::default()
    };
    for _ in 0..20 {
        let m = random_mask(&mut r, 32, 32);
        let b = boundary_pixels(&m);
        let wm = weight_map(&m, &p).unwrap();
        if b.is_empty() {
            assert!(wm.weights.iter().all(|&v| v == 1.0));
            continue;
        }
        let d = distance_transform(&b, 32, 32).unwrap();
        let mut pairs: Vec<(f64, f64)> = d.iter().copied().zip(wm.weights.iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pairs.windows(2).all(|w| w[1].1 <= w[0].1));
        for &(y, x) in &b {
            assert_eq!(wm.weights[y * 32 + x], 21.0);
        }
        assert!(wm.weights.iter().all(|&v| (1.0..=21.0).contains(&v)));
    }
    // far from the boundary the weight approaches one
    let far = 2.0 * 30.0f64.powi(2) * (1000.0f64 * 20.0).ln() + 1.0;
    assert!(weight_from_distance(far, &LossParams::default()) < 1.001);
}

#[test]
fn all_background_and_all_foreground_get_unit_weights() {
    let p = LossParams::default();
    for fill in [false, true] {
        let m = Mask::from_fn2(16, 16, |_, _| fill);
        assert!(weight_map(&m, &p).unwrap().weights.iter().all(|&v| v == 1.0));
    }
}

#[test]
fn band_dilation_matches_brute_force() {
    let mut r = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..50 {
        let (h, w) = (r.gen_range(1..24), r.gen_range(1..24));
        let m = Mask::from_fn2(h, w, |_, _| r.gen_bool(0.05));
        let rad = r.gen_range(0..6);
        let fast = dilate_chebyshev(&m, rad);
        for y in 0..h {
            for x in 0..w {
                let near = (0..h).any(|yy| (0..w).any(|xx| m.get(yy, xx) && y.abs_diff(yy) <= rad && x.abs_diff(xx) <= rad));
                assert_eq!(fast.get(y, x), near);
            }
        }
    }
}
