//! Boundary-weighted cross-entropy: two-sided organ boundary, exact
//! Euclidean distance transform, the exponential weight map and the fused
//! softmax/cross-entropy gradient.

mod boundary;
mod distance;
mod entropy;
mod weight;

pub use boundary::{boundary_mask, boundary_pixels, boundary_pixels_with, Exterior};
pub use distance::{distance_transform, squared_distance_transform};
pub use entropy::{cross_entropy, weighted_cross_entropy, LossOutput, PROB_FLOOR};
pub use weight::{weight_from_distance, weight_map, LossParams, WeightMap};
