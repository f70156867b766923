use num_traits::Float;

use super::CrfParams;

/// Label-disagreement cost between pixels `i` and `j`:
/// `w1·exp(−|pi−pj|²/2θα² − |Ii−Ij|²/2θβ²) + w2·exp(−|pi−pj|²/2θγ²)`.
pub fn pairwise_kernel(pi: (usize, usize), pj: (usize, usize), ii: f64, ij: f64, params: &CrfParams) -> f64 {
    let dy = pi.0 as f64 - pj.0 as f64;
    let dx = pi.1 as f64 - pj.1 as f64;
    let dp2 = dy * dy + dx * dx;
    let di = ii - ij;
    let a = params.theta_alpha;
    let b = params.theta_beta;
    let g = params.theta_gamma;
    params.w1 * Float::exp(-dp2 / (2.0 * a * a) - di * di / (2.0 * b * b)) + params.w2 * Float::exp(-dp2 / (2.0 * g * g))
}
