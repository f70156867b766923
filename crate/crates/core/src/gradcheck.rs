//! Finite-difference verification of every differentiable operation.
//!
//! Each case draws random inputs and a random cotangent `R`, defines the
//! scalar `L(x) = <R, f(x)>`, and compares the analytic gradient from the
//! backward pass with central differences of `L`. All cases run at 64-bit.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{internal_err, Result};
use crate::loss::{weight_map, weighted_cross_entropy, LossParams, WeightMap};
use crate::mask::Mask;
use crate::net::{skip, NetworkConfig, NetworkParams};
use crate::ops::{self, ConvSpec, Mode};
use crate::rng;
use crate::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Pass threshold on the maximum relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that near-zero entries are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// Input-gradient implementation of a convolution, injectable so that the
/// harness itself can be tested against a broken backward pass.
pub type ConvBackwardInputFn = fn(&Tensor<f64>, &ConvSpec, &Tensor<f64>, &[usize]) -> Result<Tensor<f64>>;

#[derive(Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Random cases per operation.
    pub cases: usize,
    pub conv_backward_input: ConvBackwardInputFn,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 2024,
            cases: 3,
            conv_backward_input: ops::conv_backward_input::<f64>,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub max_rel_error: f64,
    /// Number of gradient entries compared.
    pub entries: usize,
}

impl OpReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Names of the operations covered by `run_suite`, in report order.
pub const OPS: [&str; 12] = [
    "conv2d",
    "conv3d",
    "deconv2d",
    "maxpool",
    "batchnorm",
    "relu",
    "dropout",
    "crop_concat",
    "center_slice",
    "depth_collapse",
    "weighted_ce",
    "network",
];

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Perturbs every entry of every group and returns `(max relative error,
/// entries compared)`.
pub fn compare_groups(
    groups: &[Vec<f64>],
    analytic: &[Vec<f64>],
    mut loss: impl FnMut(&[Vec<f64>]) -> Result<f64>,
) -> Result<(f64, usize)> {
    if groups.len() != analytic.len() || groups.iter().zip(analytic).any(|(g, a)| g.len() != a.len()) {
        return Err(internal_err!("analytic gradient groups do not match the inputs"));
    }
    let mut work = groups.to_vec();
    let mut worst = 0.0f64;
    let mut count = 0;
    for gi in 0..groups.len() {
        for i in 0..groups[gi].len() {
            let x0 = groups[gi][i];
            work[gi][i] = x0 + FD_STEP;
            let up = loss(&work)?;
            work[gi][i] = x0 - FD_STEP;
            let down = loss(&work)?;
            work[gi][i] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let err = relative_error(analytic[gi][i], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            count += 1;
        }
    }
    Ok((worst, count))
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

fn t(shape: &[usize], data: &[f64]) -> Result<Tensor<f64>> {
    Tensor::new(shape, data.to_vec())
}

/// Values bounded away from zero so no perturbation crosses the ReLU kink.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m: f64 = r.gen_range(0.05..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values with gaps far larger than the FD step, so pooling
/// windows have well-separated maxima.
fn distinct(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 - 0.5).collect();
    v.shuffle(r);
    Tensor::new(shape, v).expect("shape matches")
}

fn conv_case(r: &mut ChaCha8Rng, spec: &ConvSpec, spatial: &[usize], bwd: ConvBackwardInputFn) -> Result<(f64, usize)> {
    let mut in_shape = vec![spec.in_channels];
    in_shape.extend_from_slice(spatial);
    let x = uniform(r, &in_shape);
    let w = uniform(r, &spec.weight_shape());
    let b = uniform(r, &[spec.out_channels]);
    let y = ops::conv_forward(&x, spec, &w, Some(&b))?;
    let cot = uniform(r, y.shape());
    let g = ops::conv_backward(&cot, &x, spec, &w)?;
    let gi = bwd(&cot, spec, &w, x.shape())?;
    let groups = [x.data().to_vec(), w.data().to_vec(), b.data().to_vec()];
    let analytic = [gi.into_data(), g.weights.into_data(), g.bias.into_data()];
    compare_groups(&groups, &analytic, |p| {
        let y = ops::conv_forward(&t(x.shape(), &p[0])?, spec, &t(w.shape(), &p[1])?, Some(&t(b.shape(), &p[2])?))?;
        Ok(y.dot(&cot))
    })
}

fn conv2d_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let cin = r.gen_range(1..=3);
        let cout = r.gen_range(1..=3);
        let (h, w) = (r.gen_range(3..=6), r.gen_range(3..=6));
        let specs = [
            ConvSpec::same2d(cin, cout),
            ConvSpec::pointwise2d(cin, cout),
            ConvSpec::new(&[2, 3], &[2, 1], &[0, 1], cin, cout)?,
        ];
        for spec in &specs {
            let (e, n) = conv_case(r, spec, &[h, w], o.conv_backward_input)?;
            acc = (acc.0.max(e), acc.1 + n);
        }
    }
    Ok(acc)
}

fn conv3d_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let cin = r.gen_range(1..=2);
        let cout = r.gen_range(1..=3);
        let spatial = [r.gen_range(2..=4), r.gen_range(2..=4), r.gen_range(3..=5)];
        let specs = [
            ConvSpec::encoder3d(cin, cout),
            ConvSpec::new(&[2, 2, 3], &[1, 2, 1], &[1, 0, 1], cin, cout)?,
        ];
        for spec in &specs {
            let (e, n) = conv_case(r, spec, &spatial, o.conv_backward_input)?;
            acc = (acc.0.max(e), acc.1 + n);
        }
    }
    Ok(acc)
}

fn deconv_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let (cin, cout) = (r.gen_range(1..=3), r.gen_range(1..=3));
        let x = {
            let shape = [cin, r.gen_range(1..=3), r.gen_range(1..=3)];
            uniform(r, &shape)
        };
        let w = uniform(r, &[cin, cout, 4, 4]);
        let b = uniform(r, &[cout]);
        let y = ops::deconv2d_forward(&x, &w, Some(&b))?;
        let cot = uniform(r, y.shape());
        let g = ops::deconv2d_backward(&cot, &x, &w)?;
        let groups = [x.data().to_vec(), w.data().to_vec(), b.data().to_vec()];
        let analytic = [g.input.into_data(), g.weights.into_data(), g.bias.into_data()];
        let (e, n) = compare_groups(&groups, &analytic, |p| {
            let y = ops::deconv2d_forward(&t(x.shape(), &p[0])?, &t(w.shape(), &p[1])?, Some(&t(b.shape(), &p[2])?))?;
            Ok(y.dot(&cot))
        })?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

/// Checks a single-input map `f` against its vector-Jacobian product `vjp`.
fn unary_case(
    x: &Tensor<f64>,
    r: &mut ChaCha8Rng,
    f: impl Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
    vjp: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<(f64, usize)> {
    let y = f(x)?;
    let cot = uniform(r, y.shape());
    let g = vjp(x, &cot)?;
    compare_groups(&[x.data().to_vec()], &[g.into_data()], |p| Ok(f(&t(x.shape(), &p[0])?)?.dot(&cot)))
}

fn pool_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for case in 0..o.cases {
        let (c, h, w) = (r.gen_range(1..=2), 2 * r.gen_range(1..=3), 2 * r.gen_range(1..=3));
        let shape: Vec<usize> = if case % 2 == 0 { vec![c, h, w] } else { vec![c, h, w, r.gen_range(1..=3)] };
        let x = distinct(r, &shape);
        let (e, n) = unary_case(
            &x,
            r,
            |x| Ok(ops::maxpool_spatial_forward(x)?.0),
            |x, cot| {
                let (_, idx) = ops::maxpool_spatial_forward(x)?;
                ops::maxpool_spatial_backward(cot, &idx)
            },
        )?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

fn batchnorm_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for case in 0..o.cases {
        let c = r.gen_range(1..=3);
        let shape: Vec<usize> = if case % 2 == 0 {
            vec![c, r.gen_range(2..=4), r.gen_range(2..=4)]
        } else {
            vec![c, r.gen_range(2..=3), r.gen_range(2..=3), r.gen_range(2..=3)]
        };
        for mode in [Mode::Train, Mode::Infer] {
            let x = uniform(r, &shape);
            let gamma: Vec<f64> = (0..c).map(|_| r.gen_range(0.5..1.5)).collect();
            let beta: Vec<f64> = (0..c).map(|_| r.gen_range(-0.5..0.5)).collect();
            let rm: Vec<f64> = (0..c).map(|_| r.gen_range(-0.2..0.2)).collect();
            let rv: Vec<f64> = (0..c).map(|_| r.gen_range(0.5..1.5)).collect();
            let run = |x: &Tensor<f64>, g: &[f64], b: &[f64]| {
                let (mut m, mut v) = (rm.clone(), rv.clone());
                ops::batchnorm_forward(x, g, b, &mut m, &mut v, 0.1, 1e-5, mode)
            };
            let (y, cache) = run(&x, &gamma, &beta)?;
            let cot = uniform(r, y.shape());
            let g = ops::batchnorm_backward(&cot, &cache, &gamma)?;
            let groups = [x.data().to_vec(), gamma.clone(), beta.clone()];
            let (e, n) = compare_groups(&groups, &[g.input.into_data(), g.gamma, g.beta], |p| {
                Ok(run(&t(x.shape(), &p[0])?, &p[1], &p[2])?.0.dot(&cot))
            })?;
            acc = (acc.0.max(e), acc.1 + n);
        }
    }
    Ok(acc)
}

fn relu_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let x = {
            let shape = [r.gen_range(1..=3), r.gen_range(2..=5), r.gen_range(2..=5)];
            away_from_zero(r, &shape)
        };
        let (e, n) = unary_case(&x, r, |x| Ok(ops::relu(x)), |x, cot| ops::relu_backward(cot, x))?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

fn dropout_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let seed = r.gen();
        let x = {
            let shape = [2, r.gen_range(2..=5), r.gen_range(2..=5)];
            uniform(r, &shape)
        };
        let f = |x: &Tensor<f64>| Ok(ops::dropout(x, 0.5, Mode::Train, seed)?.0);
        let (e, n) = unary_case(&x, r, f, |x, cot| {
            let (_, mask) = ops::dropout(x, 0.5, Mode::Train, seed)?;
            ops::dropout_backward(cot, &mask)
        })?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

fn crop_concat_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let (h, w) = (r.gen_range(2..=4), r.gen_range(2..=4));
        let dec = {
            let shape = [r.gen_range(1..=3), h, w];
            uniform(r, &shape)
        };
        let enc = {
            let shape = [r.gen_range(1..=3), h + r.gen_range(0..=2), w + r.gen_range(0..=2)];
            uniform(r, &shape)
        };
        let (y, ctx) = skip::crop_concat(&dec, &enc)?;
        let cot = uniform(r, y.shape());
        let (gd, ge) = skip::crop_concat_backward(&cot, &ctx)?;
        let groups = [dec.data().to_vec(), enc.data().to_vec()];
        let (e, n) = compare_groups(&groups, &[gd.into_data(), ge.into_data()], |p| {
            Ok(skip::crop_concat(&t(dec.shape(), &p[0])?, &t(enc.shape(), &p[1])?)?.0.dot(&cot))
        })?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

fn center_slice_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let d = r.gen_range(1..=6);
        let x = {
            let shape = [r.gen_range(1..=2), 3, 3, d];
            uniform(r, &shape)
        };
        let (e, n) = unary_case(&x, r, skip::center_slice_extract, |_, cot| skip::center_slice_backward(cot, d))?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

fn depth_collapse_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    for _ in 0..o.cases {
        let d = r.gen_range(1..=5);
        let x = {
            let shape = [r.gen_range(1..=2), 3, 2, d];
            uniform(r, &shape)
        };
        let (e, n) = unary_case(&x, r, skip::depth_collapse, |_, cot| skip::depth_collapse_backward(cot, d))?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

fn random_mask(r: &mut ChaCha8Rng, h: usize, w: usize) -> Mask {
    // a random rectangle gives a mask with a real boundary
    let (y0, x0) = (r.gen_range(0..h / 2), r.gen_range(0..w / 2));
    let (y1, x1) = (r.gen_range(h / 2..h), r.gen_range(w / 2..w));
    Mask::from_fn2(h, w, |y, x| (y0..=y1).contains(&y) && (x0..=x1).contains(&x))
}

fn weighted_ce_cases(r: &mut ChaCha8Rng, o: &SuiteOptions) -> Result<(f64, usize)> {
    let mut acc = (0.0f64, 0);
    let params = LossParams {
        sigma: 2.0,
        ..LossParams::default()
    };
    for _ in 0..o.cases {
        let (h, w) = (r.gen_range(4..=7), r.gen_range(4..=7));
        let target = random_mask(r, h, w);
        let wmap = weight_map(&target, &params)?;
        let logits = Tensor::from_fn(&[2, h, w], |_| r.gen_range(-2.0..2.0));
        let loss = |l: &Tensor<f64>| -> Result<f64> {
            Ok(weighted_cross_entropy(&ops::softmax2(l)?, &target, &wmap)?.sum)
        };
        let g = weighted_cross_entropy(&ops::softmax2(&logits)?, &target, &wmap)?.grad_logits;
        let (e, n) = compare_groups(&[logits.data().to_vec()], &[g.into_data()], |p| loss(&t(logits.shape(), &p[0])?))?;
        acc = (acc.0.max(e), acc.1 + n);
    }
    Ok(acc)
}

/// Gradient of the mean weighted cross-entropy through the whole network in
/// train mode (batch statistics, fixed dropout mask), with respect to every
/// trainable tensor and the input window.
pub fn network_case(config: &NetworkConfig, seed: u64) -> Result<(f64, usize)> {
    let mut r = rng::rng(seed, &[0x6c, 1]);
    let net = NetworkParams::<f64>::build(config, seed)?;
    let (h, w, d) = (config.input_height, config.input_width, config.input_depth);
    let x = Tensor::from_fn(&[1, h, w, d], |_| r.gen_range(0.0..1.0));
    let target = random_mask(&mut r, h, w);
    let wmap: WeightMap = weight_map(
        &target,
        &LossParams {
            sigma: 2.0,
            ..LossParams::default()
        },
    )?;
    let npix = (h * w) as f64;
    let dropout_seed = r.gen();
    let trainable: Vec<usize> = (0..net.entries().len()).filter(|&i| net.entries()[i].role.trainable()).collect();

    let pass = net.forward(&x, Mode::Train, dropout_seed)?;
    let out = weighted_cross_entropy(&pass.output.probs, &target, &wmap)?;
    let grad_logits = out.grad_logits.map(|v| v / npix);
    let (grads, gx) = net.backward_grads(&pass.cache, &grad_logits)?;
    let mut per_entry: Vec<Vec<f64>> = trainable.iter().map(|&i| vec![0.0; net.entries()[i].tensor.len()]).collect();
    for (index, values) in grads {
        let slot = trainable
            .iter()
            .position(|&i| i == index)
            .ok_or_else(|| internal_err!("gradient for non-trainable entry {index}"))?;
        per_entry[slot].iter_mut().zip(&values).for_each(|(a, &b)| *a += b);
    }
    let mut groups: Vec<Vec<f64>> = trainable.iter().map(|&i| net.entries()[i].tensor.data().to_vec()).collect();
    groups.push(x.data().to_vec());
    per_entry.push(gx.into_data());

    let mut probe = net.clone();
    compare_groups(&groups, &per_entry, |p| {
        for (slot, &i) in trainable.iter().enumerate() {
            probe.entries_mut()[i].tensor.data_mut().copy_from_slice(&p[slot]);
        }
        let xi = t(x.shape(), &p[trainable.len()])?;
        let pass = probe.forward(&xi, Mode::Train, dropout_seed)?;
        Ok(weighted_cross_entropy(&pass.output.probs, &target, &wmap)?.mean)
    })
}

/// Runs one operation's cases.
pub fn check_op(op: &str, options: &SuiteOptions) -> Result<OpReport> {
    let index = OPS
        .iter()
        .position(|&o| o == op)
        .ok_or_else(|| crate::error::config_err!("unknown operation {op}"))?;
    let mut r = rng::rng(options.seed, &[0x6c, index as u64 + 2]);
    let (max_rel_error, entries) = match op {
        "conv2d" => conv2d_cases(&mut r, options)?,
        "conv3d" => conv3d_cases(&mut r, options)?,
        "deconv2d" => deconv_cases(&mut r, options)?,
        "maxpool" => pool_cases(&mut r, options)?,
        "batchnorm" => batchnorm_cases(&mut r, options)?,
        "relu" => relu_cases(&mut r, options)?,
        "dropout" => dropout_cases(&mut r, options)?,
        "crop_concat" => crop_concat_cases(&mut r, options)?,
        "center_slice" => center_slice_cases(&mut r, options)?,
        "depth_collapse" => depth_collapse_cases(&mut r, options)?,
        "weighted_ce" => weighted_ce_cases(&mut r, options)?,
        _ => network_case(&NetworkConfig::tiny(), options.seed)?,
    };
    Ok(OpReport {
        op: OPS[index],
        max_rel_error,
        entries,
    })
}

/// One report per entry of `OPS`.
pub fn run_suite(options: &SuiteOptions) -> Result<Vec<OpReport>> {
    OPS.iter().map(|op| check_op(op, options)).collect()
}
