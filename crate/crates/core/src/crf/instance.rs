use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};

use super::{pairwise_kernel, CrfParams};

/// Out-of-band pixel with a fixed label that still sends pairwise messages.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrozenPixel {
    pub position: (usize, usize),
    pub intensity: f64,
    pub label: u8,
}

/// The pixels to relabel (the band) with their unaries and intensities, plus
/// the frozen pixels around them.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfInstance {
    /// `(row, col)` of each in-band pixel.
    pub pixels: Vec<(usize, usize)>,
    /// `−log P(label)` for labels 0 (background) and 1 (organ).
    pub unary: Vec<[f64; 2]>,
    pub intensities: Vec<f64>,
    pub frozen: Vec<FrozenPixel>,
}

impl CrfInstance {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pixels.len();
        if self.unary.len() != n || self.intensities.len() != n {
            return Err(config_err!(
                "instance has {n} pixels, {} unaries and {} intensities",
                self.unary.len(),
                self.intensities.len()
            ));
        }
        if let Some(i) = self.unary.iter().position(|u| !(u[0].is_finite() && u[1].is_finite())) {
            return Err(config_err!("unary of pixel {:?} is not finite", self.pixels[i]));
        }
        if let Some(f) = self.frozen.iter().find(|f| f.label > 1) {
            return Err(config_err!("frozen pixel {:?} has label {}", f.position, f.label));
        }
        Ok(())
    }

    /// Labels minimizing the unary term alone (the network's own decision).
    pub fn unary_argmax(&self) -> Vec<u8> {
        self.unary.iter().map(|u| (u[1] < u[0]) as u8).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Site {
    Band(usize),
    Frozen(u8),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Edge {
    pub site: Site,
    pub weight: f64,
    /// Whether this edge is the one counted in the energy for its pair.
    pub counted: bool,
}

/// A validated instance with its neighbor lists resolved.
///
/// Each band pixel's neighbors are listed in row-major window order, so the
/// order of `CrfInstance::pixels` does not affect any per-pixel sum.
#[derive(Clone, Debug)]
pub struct CrfModel {
    pub(crate) instance: CrfInstance,
    pub(crate) params: CrfParams,
    pub(crate) offsets: Vec<usize>,
    pub(crate) edges: Vec<Edge>,
}

fn scan_key(p: (usize, usize), width: usize) -> usize {
    p.0 * width + p.1
}

impl CrfModel {
    pub fn new(instance: CrfInstance, params: &CrfParams) -> Result<Self> {
        params.validate()?;
        instance.validate()?;
        let r = params.neighborhood_radius;
        let max_r = instance
            .pixels
            .iter()
            .chain(instance.frozen.iter().map(|f| &f.position))
            .map(|p| p.0)
            .max()
            .unwrap_or(0);
        let max_c = instance
            .pixels
            .iter()
            .chain(instance.frozen.iter().map(|f| &f.position))
            .map(|p| p.1)
            .max()
            .unwrap_or(0);
        let (gh, gw) = (max_r + 1, max_c + 1);
        let mut grid: Vec<Option<(Site, f64)>> = vec![None; gh * gw];
        for (i, &p) in instance.pixels.iter().enumerate() {
            let cell = &mut grid[scan_key(p, gw)];
            if cell.is_some() {
                return Err(config_err!("pixel {p:?} listed twice"));
            }
            *cell = Some((Site::Band(i), instance.intensities[i]));
        }
        for f in &instance.frozen {
            let cell = &mut grid[scan_key(f.position, gw)];
            if cell.is_some() {
                return Err(config_err!("frozen pixel {:?} overlaps another pixel", f.position));
            }
            *cell = Some((Site::Frozen(f.label), f.intensity));
        }

        let mut offsets = Vec::with_capacity(instance.len() + 1);
        let mut edges = Vec::new();
        offsets.push(0);
        for (i, &p) in instance.pixels.iter().enumerate() {
            let key_i = scan_key(p, gw);
            let y0 = p.0.saturating_sub(r);
            let y1 = (p.0 + r).min(gh - 1);
            let x0 = p.1.saturating_sub(r);
            let x1 = (p.1 + r).min(gw - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if (y, x) == p {
                        continue;
                    }
                    let key_j = y * gw + x;
                    if let Some((site, intensity)) = grid[key_j] {
                        let weight = pairwise_kernel(p, (y, x), instance.intensities[i], intensity, params);
                        let counted = match site {
                            Site::Band(_) => key_j > key_i,
                            Site::Frozen(_) => true,
                        };
                        edges.push(Edge { site, weight, counted });
                    }
                }
            }
            offsets.push(edges.len());
        }
        Ok(Self {
            instance,
            params: *params,
            offsets,
            edges,
        })
    }

    pub fn instance(&self) -> &CrfInstance {
        &self.instance
    }

    pub fn params(&self) -> &CrfParams {
        &self.params
    }

    pub(crate) fn neighbors(&self, i: usize) -> &[Edge] {
        &self.edges[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Energy of a labeling of the band pixels; each unordered pair is
    /// counted once.
    pub fn energy(&self, labels: &[u8]) -> f64 {
        assert_eq!(labels.len(), self.instance.len(), "labeling length mismatch");
        let mut e = 0.0;
        for (i, &li) in labels.iter().enumerate() {
            e += self.instance.unary[i][li as usize];
            for edge in self.neighbors(i) {
                if !edge.counted {
                    continue;
                }
                let lj = match edge.site {
                    Site::Band(j) => labels[j],
                    Site::Frozen(l) => l,
                };
                if li != lj {
                    e += edge.weight;
                }
            }
        }
        e
    }
}

/// Energy of `labels` under `instance` and `params`.
pub fn energy(labels: &[u8], instance: &CrfInstance, params: &CrfParams) -> Result<f64> {
    if labels.len() != instance.len() {
        return Err(config_err!("labeling has {} entries for {} pixels", labels.len(), instance.len()));
    }
    Ok(CrfModel::new(instance.clone(), params)?.energy(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_half_probability() {
        let ln2 = core::f64::consts::LN_2;
        let inst = CrfInstance {
            pixels: alloc::vec![(0, 0)],
            unary: alloc::vec![[ln2, ln2]],
            intensities: alloc::vec![0.0],
            frozen: Vec::new(),
        };
        let p = CrfParams::default();
        assert_eq!(energy(&[0], &inst, &p).unwrap(), ln2);
        assert_eq!(energy(&[1], &inst, &p).unwrap(), ln2);
    }

    #[test]
    fn same_label_neighbors_cost_nothing() {
        let inst = CrfInstance {
            pixels: alloc::vec![(0, 0), (0, 1)],
            unary: alloc::vec![[0.1, 0.2], [0.3, 0.4]],
            intensities: alloc::vec![5.0, 5.0],
            frozen: Vec::new(),
        };
        let p = CrfParams::default();
        assert!((energy(&[1, 1], &inst, &p).unwrap() - 0.6).abs() < 1e-15);
        let split = energy(&[0, 1], &inst, &p).unwrap();
        let k = pairwise_kernel((0, 0), (0, 1), 5.0, 5.0, &p);
        assert!((split - (0.1 + 0.4 + k)).abs() < 1e-15);
    }

    #[test]
    fn duplicate_pixels_rejected() {
        let inst = CrfInstance {
            pixels: alloc::vec![(1, 1), (1, 1)],
            unary: alloc::vec![[0.0, 0.0]; 2],
            intensities: alloc::vec![0.0; 2],
            frozen: Vec::new(),
        };
        assert!(CrfModel::new(inst, &CrfParams::default()).is_err());
    }
}
