//! Reference implementations written directly from the definitions, shared
//! by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use voxelseg_core::crf::{CrfInstance, CrfParams, FrozenPixel};
use voxelseg_core::data::ScanRecord;
use voxelseg_core::ops::ConvSpec;
use voxelseg_core::{Mask, Tensor};

/// Spatial geometry padded out to three axes.
pub struct Geo {
    pub cin: usize,
    pub cout: usize,
    pub n: [usize; 3],
    pub k: [usize; 3],
    pub s: [usize; 3],
    pub p: [usize; 3],
    pub o: [usize; 3],
}

pub fn geo(spec: &ConvSpec, spatial: &[usize]) -> Geo {
    let pad3 = |v: &[usize], fill: usize| {
        let mut a = [fill; 3];
        a[..v.len()].copy_from_slice(v);
        a
    };
    let (n, k, s, p) = (pad3(spatial, 1), pad3(&spec.kernel, 1), pad3(&spec.stride, 1), pad3(&spec.padding, 0));
    let o = [0, 1, 2].map(|i| (n[i] + 2 * p[i] - k[i]) / s[i] + 1);
    Geo { cin: spec.in_channels, cout: spec.out_channels, n, k, s, p, o }
}

/// Calls `f(co, ci, out_index, in_index, weight_index)` for every tap that
/// lands inside the input.
pub fn taps(g: &Geo, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    for co in 0..g.cout {
        for ci in 0..g.cin {
            for oy in 0..g.o[0] {
                for ox in 0..g.o[1] {
                    for oz in 0..g.o[2] {
                        for ky in 0..g.k[0] {
                            for kx in 0..g.k[1] {
                                for kz in 0..g.k[2] {
                                    let iy = (oy * g.s[0] + ky) as isize - g.p[0] as isize;
                                    let ix = (ox * g.s[1] + kx) as isize - g.p[1] as isize;
                                    let iz = (oz * g.s[2] + kz) as isize - g.p[2] as isize;
                                    if iy < 0 || ix < 0 || iz < 0 {
                                        continue;
                                    }
                                    let (iy, ix, iz) = (iy as usize, ix as usize, iz as usize);
                                    if iy >= g.n[0] || ix >= g.n[1] || iz >= g.n[2] {
                                        continue;
                                    }
                                    let out = ((co * g.o[0] + oy) * g.o[1] + ox) * g.o[2] + oz;
                                    let inp = ((ci * g.n[0] + iy) * g.n[1] + ix) * g.n[2] + iz;
                                    let w = (((co * g.cin + ci) * g.k[0] + ky) * g.k[1] + kx) * g.k[2] + kz;
                                    f(co, ci, out, inp, w);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn out_len(g: &Geo) -> usize {
    g.cout * g.o.iter().product::<usize>()
}

pub fn ref_forward(g: &Geo, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let per = g.o.iter().product::<usize>();
    let mut y: Vec<f64> = (0..out_len(g)).map(|i| b[i / per]).collect();
    taps(g, |_, _, o, i, k| y[o] += w[k] * x[i]);
    y
}

pub fn ref_backward(g: &Geo, x: &[f64], w: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    taps(g, |_, _, o, i, k| {
        dx[i] += w[k] * dy[o];
        dw[k] += x[i] * dy[o];
    });
    (dx, dw)
}

pub fn random(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_spec(r: &mut ChaCha8Rng, rank: usize) -> (ConvSpec, Vec<usize>) {
    loop {
        let kernel: Vec<usize> = (0..rank).map(|_| r.gen_range(1..=4)).collect();
        let stride: Vec<usize> = (0..rank).map(|_| r.gen_range(1..=2)).collect();
        let padding: Vec<usize> = kernel.iter().map(|&k| r.gen_range(0..k)).collect();
        let spatial: Vec<usize> = (0..rank).map(|_| r.gen_range(1..=7)).collect();
        if (0..rank).any(|i| spatial[i] + 2 * padding[i] < kernel[i]) {
            continue;
        }
        let spec = ConvSpec::new(&kernel, &stride, &padding, r.gen_range(1..=3), r.gen_range(1..=3)).unwrap();
        return (spec, spatial);
    }
}

/// Direct transposed convolution: input pixel `(y, x)` stamps the kernel at
/// output `(2y − 1 + a, 2x − 1 + b)`.
pub fn ref_deconv(x: &[f64], w: &[f64], b: &[f64], cin: usize, cout: usize, h: usize, wd: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * wd);
    let mut out: Vec<f64> = (0..cout * oh * ow).map(|i| b[i / (oh * ow)]).collect();
    for ci in 0..cin {
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..wd {
                    for a in 0..4 {
                        for bb in 0..4 {
                            let oy = (2 * y + a) as isize - 1;
                            let ox = (2 * xx + bb) as isize - 1;
                            if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                continue;
                            }
                            out[(co * oh + oy as usize) * ow + ox as usize] +=
                                x[(ci * h + y) * wd + xx] * w[((ci * cout + co) * 4 + a) * 4 + bb];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Written directly from the energy definition: unaries, then every
/// unordered in-band pair within the window, then every band/frozen pair.
pub fn oracle_energy(labels: &[u8], inst: &CrfInstance, p: &CrfParams) -> f64 {
    let k = |a: (usize, usize), b: (usize, usize), ia: f64, ib: f64| {
        let dp2 = (a.0 as f64 - b.0 as f64).powi(2) + (a.1 as f64 - b.1 as f64).powi(2);
        let di2 = (ia - ib).powi(2);
        p.w1 * (-dp2 / (2.0 * p.theta_alpha.powi(2)) - di2 / (2.0 * p.theta_beta.powi(2))).exp()
            + p.w2 * (-dp2 / (2.0 * p.theta_gamma.powi(2))).exp()
    };
    let near = |a: (usize, usize), b: (usize, usize)| {
        a.0.abs_diff(b.0) <= p.neighborhood_radius && a.1.abs_diff(b.1) <= p.neighborhood_radius
    };
    let n = inst.pixels.len();
    let mut e = 0.0;
    for i in 0..n {
        e += inst.unary[i][labels[i] as usize];
    }
    for i in 0..n {
        for j in i + 1..n {
            if near(inst.pixels[i], inst.pixels[j]) && labels[i] != labels[j] {
                e += k(inst.pixels[i], inst.pixels[j], inst.intensities[i], inst.intensities[j]);
            }
        }
        for f in &inst.frozen {
            if near(inst.pixels[i], f.position) && labels[i] != f.label {
                e += k(inst.pixels[i], f.position, inst.intensities[i], f.intensity);
            }
        }
    }
    e
}

pub fn test_params() -> CrfParams {
    CrfParams {
        theta_alpha: 5.0,
        ..CrfParams::default()
    }
}

/// `n` band pixels and some frozen pixels scattered over a small grid.
pub fn random_instance(r: &mut ChaCha8Rng, n: usize) -> CrfInstance {
    let (h, w) = (r.gen_range(3..=6), r.gen_range(3..=6));
    let mut cells: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (y, x))).collect();
    cells.shuffle(r);
    let n = n.min(cells.len());
    let pixels: Vec<(usize, usize)> = cells[..n].to_vec();
    let frozen_count = r.gen_range(0..=(cells.len() - n).min(6));
    let frozen = cells[n..n + frozen_count]
        .iter()
        .map(|&position| FrozenPixel {
            position,
            intensity: r.gen_range(0.0..255.0),
            label: r.gen_range(0..2),
        })
        .collect();
    let unary = (0..n)
        .map(|_| {
            let p: f64 = r.gen_range(0.02..0.98);
            [-(1.0 - p).ln(), -p.ln()]
        })
        .collect();
    CrfInstance {
        pixels,
        unary,
        intensities: (0..n).map(|_| r.gen_range(0.0..255.0)).collect(),
        frozen,
    }
}

pub fn labelings(n: usize) -> impl Iterator<Item = Vec<u8>> {
    (0u32..1 << n).map(move |c| (0..n).map(|i| ((c >> i) & 1) as u8).collect())
}

/// A disk whose network probabilities are noisy near the rim, over a clean
/// intensity edge.
pub fn noisy_disk(r: &mut ChaCha8Rng, size: usize) -> (Mask, Tensor<f64>, Vec<f64>) {
    let c = (size as f64 - 1.0) / 2.0;
    let rad = size as f64 * 0.3;
    let truth = Mask::from_fn2(size, size, |y, x| ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt() <= rad);
    let n = size * size;
    let mut organ = vec![0.0; n];
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt() - rad;
            let clean = 1.0 / (1.0 + (d * 1.5).exp());
            let noise = if d.abs() < 3.0 { r.gen_range(-0.45..0.45) } else { 0.0 };
            organ[y * size + x] = (clean + noise).clamp(0.01, 0.99);
        }
    }
    let mut probs = organ.iter().map(|p| 1.0 - p).collect::<Vec<f64>>();
    probs.extend_from_slice(&organ);
    let image = (0..n).map(|i| if truth.data()[i] == 1 { 200.0 } else { 40.0 }).collect();
    (truth, Tensor::new(&[2, size, size], probs).unwrap(), image)
}

pub fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    // a few random blobs over a sparse salt pattern
    let blobs: Vec<(f64, f64, f64)> = (0..r.gen_range(1..=4))
        .map(|_| (r.gen_range(0.0..h as f64), r.gen_range(0.0..w as f64), r.gen_range(1.0..8.0)))
        .collect();
    let salt = r.gen_range(0.0..0.05);
    Mask::from_fn2(h, w, |y, x| {
        blobs
            .iter()
            .any(|&(cy, cx, rad)| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= rad * rad)
            || r.gen_bool(salt)
    })
}

pub fn brute_boundary(m: &Mask) -> Vec<(usize, usize)> {
    let (h, w) = (m.height() as isize, m.width() as isize);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = m.get(y as usize, x as usize);
            let differs = [(-1, 0), (1, 0), (0, -1), (0, 1)].iter().any(|&(dy, dx)| {
                let (ny, nx) = (y + dy, x + dx);
                ny >= 0 && nx >= 0 && ny < h && nx < w && m.get(ny as usize, nx as usize) != v
            });
            if differs {
                out.push((y as usize, x as usize));
            }
        }
    }
    out
}

pub fn asymmetric_scan(h: usize, w: usize, d: usize) -> ScanRecord {
    let volume = Tensor::<f32>::from_fn(&[h, w, d], |i| (i * 7 % 113) as f32 - 50.0);
    let labels: Vec<u8> = (0..h * w * d).map(|i| ((i / d) % 5 == 0 || i % 3 == 1) as u8).collect();
    ScanRecord::new("pattern", volume, Mask::new(&[h, w, d], labels).unwrap(), [0.7, 0.7, 2.0]).unwrap()
}
