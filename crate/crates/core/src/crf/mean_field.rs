use alloc::vec::Vec;

use num_traits::Float;

use crate::error::Result;

use super::instance::{CrfModel, Site};
use super::{CrfInstance, CrfParams};

/// Outcome of mean-field inference.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanField {
    /// `Q_i(0), Q_i(1)` per band pixel.
    pub marginals: Vec<[f64; 2]>,
    pub labels: Vec<u8>,
}

impl CrfModel {
    /// Synchronous (Jacobi) mean-field updates for `iterations` rounds:
    /// `Q_i(l) ∝ exp(−ψ_i(l) − Σ_j k_ij·Q_j(1−l))`, every pixel reading the
    /// previous round's marginals. Frozen neighbors are point masses.
    pub fn mean_field(&self, iterations: usize) -> MeanField {
        let n = self.instance.len();
        let unary = &self.instance.unary;
        let mut q: Vec<[f64; 2]> = unary.iter().map(|u| normalize([-u[0], -u[1]])).collect();
        let mut logits: Vec<[f64; 2]> = unary.iter().map(|u| [-u[0], -u[1]]).collect();
        let mut next = q.clone();
        for _ in 0..iterations {
            for i in 0..n {
                // message[l] = Σ_j k_ij · Q_j(label ≠ l)
                let mut message = [0.0f64; 2];
                for edge in self.neighbors(i) {
                    let qj = match edge.site {
                        Site::Band(j) => q[j],
                        Site::Frozen(0) => [1.0, 0.0],
                        Site::Frozen(_) => [0.0, 1.0],
                    };
                    message[0] += edge.weight * qj[1];
                    message[1] += edge.weight * qj[0];
                }
                let a = [-unary[i][0] - message[0], -unary[i][1] - message[1]];
                logits[i] = a;
                next[i] = normalize(a);
            }
            core::mem::swap(&mut q, &mut next);
        }
        let labels = logits.iter().map(|a| (a[1] > a[0]) as u8).collect();
        MeanField { marginals: q, labels }
    }
}

fn normalize(a: [f64; 2]) -> [f64; 2] {
    let m = a[0].max(a[1]);
    let e0 = Float::exp(a[0] - m);
    let e1 = Float::exp(a[1] - m);
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

/// Mean-field inference with `params.iterations` rounds.
pub fn mean_field_infer(instance: &CrfInstance, params: &CrfParams) -> Result<MeanField> {
    Ok(CrfModel::new(instance.clone(), params)?.mean_field(params.iterations))
}
