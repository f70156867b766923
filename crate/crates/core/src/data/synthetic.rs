use alloc::format;

use rand::Rng;

use crate::mask::Mask;
use crate::rng;
use crate::tensor::Tensor;

use super::scan::ScanRecord;

/// Shape and intensity settings of the synthetic ellipsoid phantom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub depth: usize,
    /// Organ and background intensities in HU.
    pub organ_hu: f32,
    pub background_hu: f32,
    /// Standard deviation of the additive Gaussian noise in HU.
    pub noise_hu: f32,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            depth: 9,
            organ_hu: 100.0,
            background_hu: -100.0,
            noise_hu: 20.0,
        }
    }
}

/// A scan holding one randomly placed ellipsoid with additive noise. The
/// mask is the ellipsoid interior.
pub fn ellipsoid_phantom(spec: &PhantomSpec, index: usize, seed: u64) -> ScanRecord {
    let mut r = rng::rng(seed, &[0xe111, index as u64]);
    let (h, w, d) = (spec.height as f64, spec.width as f64, spec.depth as f64);
    let center = [
        h * r.gen_range(0.4..0.6),
        w * r.gen_range(0.4..0.6),
        (d - 1.0) * r.gen_range(0.4..0.6),
    ];
    let axes = [
        h * r.gen_range(0.18..0.32),
        w * r.gen_range(0.18..0.32),
        (d * r.gen_range(0.3..0.5)).max(1.0),
    ];
    let inside = |y: usize, x: usize, z: usize| {
        let p = [y as f64, x as f64, z as f64];
        (0..3)
            .map(|i| {
                let t = (p[i] - center[i]) / axes[i];
                t * t
            })
            .sum::<f64>()
            <= 1.0
    };
    let mut volume = Tensor::<f32>::zeros(&[spec.height, spec.width, spec.depth]);
    let mut labels = alloc::vec![0u8; spec.height * spec.width * spec.depth];
    for y in 0..spec.height {
        for x in 0..spec.width {
            for z in 0..spec.depth {
                let i = (y * spec.width + x) * spec.depth + z;
                let organ = inside(y, x, z);
                labels[i] = organ as u8;
                let base = if organ { spec.organ_hu } else { spec.background_hu };
                volume.data_mut()[i] = base + spec.noise_hu * rng::standard_normal(&mut r) as f32;
            }
        }
    }
    let mask = Mask::new(&[spec.height, spec.width, spec.depth], labels).expect("binary labels");
    ScanRecord::new(format!("phantom{index:02}"), volume, mask, [1.0, 1.0, 2.5]).expect("shapes agree")
}
