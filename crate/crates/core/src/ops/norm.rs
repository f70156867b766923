use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, internal_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Train mode uses batch statistics and updates running averages; infer
/// mode uses the running averages and disables dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

pub const DEFAULT_MOMENTUM: f64 = 0.1;
pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Owned per-channel batch-normalization parameters and statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            mode: Mode::Train,
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, BatchNormCache<T>)> {
        batchnorm_forward(
            input,
            &self.gamma,
            &self.beta,
            &mut self.running_mean,
            &mut self.running_var,
            self.momentum,
            self.epsilon,
            self.mode,
        )
    }
}

/// Saved context for `batchnorm_backward`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormCache<T> {
    pub mode: Mode,
    /// Normalized input (before gamma/beta).
    pub x_hat: Tensor<T>,
    /// `1/sqrt(var + eps)` per channel.
    pub inv_std: Vec<T>,
    /// Train mode only: per-channel batch mean and unbiased variance.
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// `running ← (1 − momentum)·running + momentum·batch`.
pub fn update_running<T: Real>(running: &mut [T], batch: &[T], momentum: f64) {
    let mom = T::from_f64(momentum);
    for (r, &b) in running.iter_mut().zip(batch) {
        *r = (T::one() - mom) * *r + mom * b;
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Normalizes each channel of a `[C, ...]` tensor over all other axes.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward<T: Real>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    momentum: f64,
    epsilon: f64,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    if input.rank() < 2 {
        return Err(config_err!("batchnorm input must be [C, ...], got {:?}", input.shape()));
    }
    let c = input.shape()[0];
    for (name, len) in [
        ("gamma", gamma.len()),
        ("beta", beta.len()),
        ("running_mean", running_mean.len()),
        ("running_var", running_var.len()),
    ] {
        if len != c {
            return Err(config_err!("batchnorm {name} has {len} entries for {c} channels"));
        }
    }
    if !(epsilon > 0.0) {
        return Err(config_err!("batchnorm epsilon must be positive"));
    }
    if !(momentum > 0.0 && momentum < 1.0) {
        return Err(config_err!("batchnorm momentum must lie in (0, 1)"));
    }
    let per = input.len() / c;
    let eps = T::from_f64(epsilon);
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_std = vec![T::zero(); c];
    let (mut batch_mean, mut batch_var) = match mode {
        Mode::Train => (vec![T::zero(); c], vec![T::zero(); c]),
        Mode::Infer => (Vec::new(), Vec::new()),
    };
    let n = T::from_f64(per as f64);
    for ch in 0..c {
        let xs = &input.data()[ch * per..(ch + 1) * per];
        let (mean, var) = match mode {
            Mode::Train => {
                let mut s = T::zero();
                for &v in xs {
                    s += v;
                }
                let mean = s / n;
                let mut sq = T::zero();
                for &v in xs {
                    let d = v - mean;
                    sq += d * d;
                }
                let var = sq / n;
                let unbiased = if per > 1 {
                    sq / T::from_f64((per - 1) as f64)
                } else {
                    var
                };
                batch_mean[ch] = mean;
                batch_var[ch] = unbiased;
                (mean, var)
            }
            Mode::Infer => {
                if running_var[ch] < T::zero() {
                    return Err(config_err!("running variance of channel {ch} is negative"));
                }
                (running_mean[ch], running_var[ch])
            }
        };
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        let xh = &mut x_hat.data_mut()[ch * per..(ch + 1) * per];
        for (h, &v) in xh.iter_mut().zip(xs) {
            *h = (v - mean) * istd;
        }
        let o = &mut out.data_mut()[ch * per..(ch + 1) * per];
        for (ov, &h) in o.iter_mut().zip(&x_hat.data()[ch * per..(ch + 1) * per]) {
            *ov = gamma[ch] * h + beta[ch];
        }
    }
    if mode == Mode::Train {
        update_running(running_mean, &batch_mean, momentum);
        update_running(running_var, &batch_var, momentum);
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            x_hat,
            inv_std,
            batch_mean,
            batch_var,
        },
    ))
}

pub fn batchnorm_backward<T: Real>(
    grad_out: &Tensor<T>,
    cache: &BatchNormCache<T>,
    gamma: &[T],
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(internal_err!(
            "batchnorm grad_out {:?} vs saved {:?}",
            grad_out.shape(),
            cache.x_hat.shape()
        ));
    }
    let c = grad_out.shape()[0];
    if gamma.len() != c {
        return Err(internal_err!("batchnorm gamma has {} entries for {c} channels", gamma.len()));
    }
    let per = grad_out.len() / c;
    let n = T::from_f64(per as f64);
    let mut gx = Tensor::zeros(grad_out.shape());
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    for ch in 0..c {
        let dy = &grad_out.data()[ch * per..(ch + 1) * per];
        let xh = &cache.x_hat.data()[ch * per..(ch + 1) * per];
        let mut sum_dy = T::zero();
        let mut sum_dy_xh = T::zero();
        for (&d, &h) in dy.iter().zip(xh) {
            sum_dy += d;
            sum_dy_xh += d * h;
        }
        ggamma[ch] = sum_dy_xh;
        gbeta[ch] = sum_dy;
        let k = gamma[ch] * cache.inv_std[ch];
        let out = &mut gx.data_mut()[ch * per..(ch + 1) * per];
        match cache.mode {
            Mode::Train => {
                for ((o, &d), &h) in out.iter_mut().zip(dy).zip(xh) {
                    *o = k * (d - sum_dy / n - h * sum_dy_xh / n);
                }
            }
            Mode::Infer => {
                for (o, &d) in out.iter_mut().zip(dy) {
                    *o = k * d;
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: gx,
        gamma: ggamma,
        beta: gbeta,
    })
}
