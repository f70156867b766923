mod oracle;

use voxelseg_core::data::{
    augment_all, ellipsoid_phantom, normalize_hu, rotate_image_bilinear, rotate_mask_nearest, rotate_scan,
    PhantomSpec, Provenance, ScanRecord, HU_MIN,
};
use voxelseg_core::metrics::dice;
use voxelseg_core::Mask;
use oracle::*;

#[test]
fn seven_outputs_one_original() {
    let scan = ellipsoid_phantom(&PhantomSpec::default(), 0, 1);
    let out = augment_all(&scan);
    assert_eq!(out.len(), 7);
    assert_eq!(out.iter().filter(|s| s.provenance == Provenance::Original).count(), 1);
    for s in &out {
        assert_eq!(s.volume.shape(), scan.volume.shape());
        assert_eq!(s.mask.shape(), scan.mask.shape());
        assert!(s.mask.data().iter().all(|&v| v <= 1));
        assert!(normalize_hu(&s.volume).data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let mut ids: Vec<&str> = out.iter().map(|s| s.scan_id.as_str()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 7);
}

#[test]
fn zero_degrees_is_bit_exact() {
    let scan = asymmetric_scan(9, 7, 3);
    let same = rotate_scan(&scan, 0);
    assert_eq!(same, scan);
    let bits = |s: &ScanRecord| s.volume.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&same), bits(&scan));
}

#[test]
fn right_angles_match_index_permutation() {
    let n = 11;
    let scan = asymmetric_scan(n, n, 2);
    for (deg, map) in [
        (90, Box::new(|y: usize, x: usize| (n - 1 - x, y)) as Box<dyn Fn(usize, usize) -> (usize, usize)>),
        (180, Box::new(|y: usize, x: usize| (n - 1 - y, n - 1 - x))),
        (270, Box::new(|y: usize, x: usize| (x, n - 1 - y))),
        (-90, Box::new(|y: usize, x: usize| (x, n - 1 - y))),
    ] {
        let rot = rotate_scan(&scan, deg);
        for y in 0..n {
            for x in 0..n {
                let (sy, sx) = map(y, x);
                for z in 0..2 {
                    assert_eq!(rot.volume.at(&[y, x, z]), scan.volume.at(&[sy, sx, z]), "{deg}° at ({y}, {x})");
                    assert_eq!(rot.mask.data()[(y * n + x) * 2 + z], scan.mask.data()[(sy * n + sx) * 2 + z]);
                }
            }
        }
    }
}

#[test]
fn plus_minus_twenty_round_trip() {
    let spec = PhantomSpec {
        height: 48,
        width: 48,
        depth: 5,
        ..PhantomSpec::default()
    };
    for i in 0..10 {
        let scan = ellipsoid_phantom(&spec, i, 77);
        let back = rotate_scan(&rotate_scan(&scan, 20), -20);
        let d = dice(&back.mask, &scan.mask).unwrap();
        assert!(d >= 0.9, "phantom {i}: {d}");
    }
}

#[test]
fn out_of_bounds_reads_air() {
    let img = vec![50.0f32; 16];
    let rot = rotate_image_bilinear(&img, 4, 4, 45, HU_MIN);
    assert!(rot.iter().any(|&v| v < 50.0));
    assert!(rot.iter().all(|&v| (HU_MIN..=50.0).contains(&v)));
    let m = Mask::from_fn2(5, 5, |_, _| true);
    let r = rotate_mask_nearest(&m, 30);
    assert!(r.count() < 25 && r.get(2, 2));
}
