//! Boundary-band fully-connected CRF refinement.
//!
//! Energy: `E(x) = Σ_i ψ_u(x_i) + Σ_{i<j, j∈N_i} [x_i ≠ x_j]·k(i, j)` with
//! unary `ψ_u = −log P` and a pairwise kernel mixing a bilateral
//! (position + intensity) and a position-only Gaussian. Only pixels in a band
//! around the thresholded prediction's boundary are relabeled; out-of-band
//! pixels inside a window act as fixed labels.

mod band;
mod exact;
mod instance;
mod kernel;
mod mean_field;
mod refine;

pub use band::{boundary_band, dilate_chebyshev};
pub use exact::{brute_force_map, BRUTE_FORCE_LIMIT};
pub use instance::{energy, CrfInstance, CrfModel, FrozenPixel};
pub use kernel::pairwise_kernel;
pub use mean_field::{mean_field_infer, MeanField};
pub use refine::{refine, rescale_intensities, Refinement};

use crate::error::{config_err, Result};

/// CRF hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields, default))]
pub struct CrfParams {
    /// Bilateral kernel weight.
    pub w1: f64,
    /// Position-only kernel weight.
    pub w2: f64,
    pub theta_alpha: f64,
    pub theta_beta: f64,
    pub theta_gamma: f64,
    /// Chebyshev radius of the pairwise window (2 gives 5×5).
    pub neighborhood_radius: usize,
    /// Chebyshev distance from the boundary that defines the band.
    pub band_width: usize,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            w1: 2.0,
            w2: 0.5,
            theta_alpha: 0.01,
            theta_beta: 20.0,
            theta_gamma: 20.0,
            neighborhood_radius: 2,
            band_width: 5,
            iterations: 5,
        }
    }
}

impl CrfParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_alpha", self.theta_alpha),
            ("theta_beta", self.theta_beta),
            ("theta_gamma", self.theta_gamma),
        ] {
            if !(v > 0.0) {
                return Err(config_err!("{name} must be positive, got {v}"));
            }
        }
        if !(self.w1 >= 0.0) || !(self.w2 >= 0.0) {
            return Err(config_err!("kernel weights must be non-negative"));
        }
        if self.neighborhood_radius == 0 {
            return Err(config_err!("neighborhood_radius must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(config_err!("iterations must be at least 1"));
        }
        Ok(())
    }
}
