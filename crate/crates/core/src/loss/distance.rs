use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

const INF: u64 = u64::MAX;

/// Exact squared Euclidean distance from every pixel of an `h × w` grid to
/// the nearest point of `boundary`.
///
/// A per-row 1-D pass gives squared horizontal distances; a per-column pass
/// takes the lower envelope of the parabolas `g(y') + (y − y')²`.
pub fn squared_distance_transform(boundary: &[(usize, usize)], h: usize, w: usize) -> Result<Vec<u64>> {
    if boundary.is_empty() {
        return Err(Error::Domain("distance transform needs a non-empty boundary set".into()));
    }
    let mut seed = vec![false; h * w];
    for &(y, x) in boundary {
        if y >= h || x >= w {
            return Err(Error::Config(alloc::format!("boundary point ({y}, {x}) outside {h}×{w} grid")));
        }
        seed[y * w + x] = true;
    }

    // Row pass: distance along the row to the nearest seed, then squared.
    let mut g = vec![INF; h * w];
    for y in 0..h {
        let row = &seed[y * w..(y + 1) * w];
        let out = &mut g[y * w..(y + 1) * w];
        let mut last: Option<usize> = None;
        for x in 0..w {
            if row[x] {
                last = Some(x);
            }
            if let Some(l) = last {
                out[x] = (x - l) as u64;
            }
        }
        let mut next: Option<usize> = None;
        for x in (0..w).rev() {
            if row[x] {
                next = Some(x);
            }
            if let Some(n) = next {
                out[x] = out[x].min((n - x) as u64);
            }
        }
        for v in out.iter_mut() {
            if *v != INF {
                *v *= *v;
            }
        }
    }

    // Column pass over the lower envelope of parabolas rooted at finite rows.
    let mut dist = vec![0u64; h * w];
    let mut roots: Vec<usize> = Vec::with_capacity(h);
    let mut bounds: Vec<f64> = Vec::with_capacity(h + 1);
    for x in 0..w {
        let f = |y: usize| g[y * w + x];
        roots.clear();
        bounds.clear();
        for q in 0..h {
            let fq = f(q);
            if fq == INF {
                continue;
            }
            loop {
                match roots.last() {
                    None => {
                        roots.push(q);
                        bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&v) => {
                        let fv = f(v);
                        let num = (fq + (q * q) as u64) as f64 - (fv + (v * v) as u64) as f64;
                        let s = num / (2.0 * (q as f64 - v as f64));
                        if s <= *bounds.last().unwrap() {
                            roots.pop();
                            bounds.pop();
                        } else {
                            roots.push(q);
                            bounds.push(s);
                            break;
                        }
                    }
                }
            }
        }
        let mut k = 0;
        for y in 0..h {
            while k + 1 < roots.len() && bounds[k + 1] < y as f64 {
                k += 1;
            }
            let v = roots[k];
            let dy = y.abs_diff(v) as u64;
            dist[y * w + x] = f(v) + dy * dy;
        }
    }
    Ok(dist)
}

/// Exact Euclidean distance to the nearest boundary point.
pub fn distance_transform(boundary: &[(usize, usize)], h: usize, w: usize) -> Result<Vec<f64>> {
    use num_traits::Float;
    Ok(squared_distance_transform(boundary, h, w)?
        .into_iter()
        .map(|d2| Float::sqrt(d2 as f64))
        .collect())
}
