use alloc::vec::Vec;

use crate::error::{config_err, internal_err, Result};
use crate::ops::norm::{DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::ops::{self, BatchNormCache, DropoutMask, Mode, PoolIndices};
use crate::real::Real;
use crate::tensor::Tensor;

use super::params::{BlockLayout, NetworkParams};
use super::skip::{self, CropConcat};

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput<T> {
    /// `[2, H, W]` pre-softmax scores.
    pub logits: Tensor<T>,
    /// `[2, H, W]` class probabilities of the window's center slice.
    pub probs: Tensor<T>,
}

#[derive(Clone, Debug)]
struct BlockCache<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    bn_out: Tensor<T>,
}

#[derive(Clone, Debug)]
struct EncoderCache<T> {
    blocks: Vec<BlockCache<T>>,
    pool: PoolIndices,
    depth: usize,
}

#[derive(Clone, Debug)]
struct DecoderCache<T> {
    up_input: Tensor<T>,
    concat: CropConcat,
    blocks: Vec<BlockCache<T>>,
}

/// Activations retained by a forward pass for the matching backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    input_shape: Vec<usize>,
    encoder: Vec<EncoderCache<T>>,
    collapse_depth: usize,
    bottleneck: Vec<BlockCache<T>>,
    dropout: DropoutMask<T>,
    decoder: Vec<DecoderCache<T>>,
    head_input: Tensor<T>,
}

/// Result of `NetworkParams::forward`: the output, the backward context,
/// and the train-mode batch statistics not yet folded into the running
/// averages.
#[derive(Clone, Debug)]
pub struct Pass<T> {
    pub output: ForwardOutput<T>,
    pub cache: ForwardCache<T>,
    running: Vec<(usize, Vec<T>)>,
}

type Grads<T> = Vec<(usize, Vec<T>)>;

impl<T> Pass<T> {
    /// Moves out the batch statistics, leaving the pass without any.
    pub fn take_batch_stats(&mut self) -> Vec<(usize, Vec<T>)> {
        core::mem::take(&mut self.running)
    }
}

impl<T: Real> NetworkParams<T> {
    fn check_volume(&self, volume: &Tensor<T>) -> Result<()> {
        let c = self.config();
        let expected = [1, c.input_height, c.input_width, c.input_depth];
        if volume.shape() != expected {
            return Err(config_err!(
                "network input must be {expected:?}, got {:?}",
                volume.shape()
            ));
        }
        Ok(())
    }

    fn block_forward(
        &self,
        b: &BlockLayout,
        x: Tensor<T>,
        mode: Mode,
        running: &mut Vec<(usize, Vec<T>)>,
        keep: bool,
    ) -> Result<(Tensor<T>, Option<BlockCache<T>>)> {
        let y = ops::conv_forward(&x, &b.spec, self.tensor(b.weight), None)?;
        let mut rm = self.tensor(b.mean).data().to_vec();
        let mut rv = self.tensor(b.var).data().to_vec();
        let (z, mut bn) = ops::batchnorm_forward(
            &y,
            self.tensor(b.gamma).data(),
            self.tensor(b.beta).data(),
            &mut rm,
            &mut rv,
            DEFAULT_MOMENTUM,
            DEFAULT_EPSILON,
            mode,
        )?;
        if mode == Mode::Train {
            running.push((b.mean, core::mem::take(&mut bn.batch_mean)));
            running.push((b.var, core::mem::take(&mut bn.batch_var)));
        }
        let out = ops::relu(&z);
        let cache = keep.then(|| BlockCache { input: x, bn, bn_out: z });
        Ok((out, cache))
    }

    fn block_backward(&self, b: &BlockLayout, cache: &BlockCache<T>, grad: &Tensor<T>, grads: &mut Grads<T>) -> Result<Tensor<T>> {
        let g = ops::relu_backward(grad, &cache.bn_out)?;
        let bng = ops::batchnorm_backward(&g, &cache.bn, self.tensor(b.gamma).data())?;
        let w = self.tensor(b.weight);
        let gx = ops::conv_backward_input(&bng.input, &b.spec, w, cache.input.shape())?;
        let gw = ops::conv_backward_weights(&bng.input, &cache.input, &b.spec)?;
        grads.push((b.weight, gw.into_data()));
        grads.push((b.gamma, bng.gamma));
        grads.push((b.beta, bng.beta));
        Ok(gx)
    }

    /// Runs the network on a `[1, H, W, D]` window. Running statistics are
    /// not modified; see `forward_train` and `apply_running_stats`.
    pub fn forward(&self, volume: &Tensor<T>, mode: Mode, dropout_seed: u64) -> Result<Pass<T>> {
        let (output, cache, running) = self.run(volume, mode, dropout_seed, true)?;
        Ok(Pass {
            output,
            cache: cache.expect("cache requested"),
            running,
        })
    }

    /// Inference-mode forward pass that keeps no activations.
    pub fn infer(&self, volume: &Tensor<T>) -> Result<ForwardOutput<T>> {
        Ok(self.run(volume, Mode::Infer, 0, false)?.0)
    }

    /// Train-mode forward pass that also commits the running statistics.
    pub fn forward_train(&mut self, volume: &Tensor<T>, dropout_seed: u64) -> Result<Pass<T>> {
        let pass = self.forward(volume, Mode::Train, dropout_seed)?;
        self.apply_running_stats(&pass);
        Ok(pass)
    }

    /// Folds a pass's batch statistics into the running averages. Passes of
    /// one batch may be computed concurrently and applied in order.
    pub fn apply_running_stats(&mut self, pass: &Pass<T>) {
        self.apply_batch_stats(&pass.running);
    }

    /// `apply_running_stats` for statistics taken out of a pass with
    /// `Pass::take_batch_stats`.
    pub fn apply_batch_stats(&mut self, stats: &[(usize, Vec<T>)]) {
        for (index, values) in stats {
            self.update_running(*index, values, DEFAULT_MOMENTUM);
        }
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        volume: &Tensor<T>,
        mode: Mode,
        dropout_seed: u64,
        keep: bool,
    ) -> Result<(ForwardOutput<T>, Option<ForwardCache<T>>, Vec<(usize, Vec<T>)>)> {
        self.check_volume(volume)?;
        let layout = &self.layout;
        let mut running = Vec::new();
        let mut x = volume.clone();
        let mut skips = Vec::with_capacity(layout.encoder.len());
        let mut enc_caches = Vec::new();
        for stage in &layout.encoder {
            let mut blocks = Vec::new();
            for b in stage {
                let (y, c) = self.block_forward(b, x, mode, &mut running, keep)?;
                blocks.extend(c);
                x = y;
            }
            skips.push(skip::center_slice_extract(&x)?);
            let depth = x.shape()[3];
            let (pooled, pool) = ops::maxpool_spatial_forward(&x)?;
            x = pooled;
            if keep {
                enc_caches.push(EncoderCache { blocks, pool, depth });
            }
        }
        let collapse_depth = x.shape()[3];
        x = skip::depth_collapse(&x)?;
        let mut bott_caches = Vec::new();
        for b in &layout.bottleneck {
            let (y, c) = self.block_forward(b, x, mode, &mut running, keep)?;
            bott_caches.extend(c);
            x = y;
        }
        let (dropped, mask) = ops::dropout(&x, self.config().dropout_p, mode, dropout_seed)?;
        x = dropped;
        let mut dec_caches = Vec::new();
        let stages = layout.encoder.len();
        for (i, dec) in layout.decoder.iter().enumerate() {
            let s = stages - 1 - i;
            let up = ops::deconv2d_forward(&x, self.tensor(dec.up_weight), Some(self.tensor(dec.up_bias)))?;
            let (cat, concat) = skip::crop_concat(&up, &skips[s])?;
            let up_input = x;
            x = cat;
            let mut blocks = Vec::new();
            for b in &dec.blocks {
                let (y, c) = self.block_forward(b, x, mode, &mut running, keep)?;
                blocks.extend(c);
                x = y;
            }
            if keep {
                dec_caches.push(DecoderCache { up_input, concat, blocks });
            }
        }
        let logits = ops::conv_forward(
            &x,
            &layout.head_spec,
            self.tensor(layout.head_weight),
            Some(self.tensor(layout.head_bias)),
        )?;
        let probs = ops::softmax2(&logits)?;
        let cache = keep.then(|| ForwardCache {
            input_shape: volume.shape().to_vec(),
            encoder: enc_caches,
            collapse_depth,
            bottleneck: bott_caches,
            dropout: mask,
            decoder: dec_caches,
            head_input: x,
        });
        Ok((ForwardOutput { logits, probs }, cache, running))
    }

    /// Gradients of a scalar loss from `grad_logits` (∂loss/∂logits): one
    /// `(registry index, values)` pair per trainable tensor touched, plus the
    /// gradient with respect to the input window.
    pub fn backward_grads(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<(Vec<(usize, Vec<T>)>, Tensor<T>)> {
        let layout = &self.layout;
        if grad_logits.shape() != [2, self.config().input_height, self.config().input_width] {
            return Err(internal_err!("grad_logits shape {:?} does not match output", grad_logits.shape()));
        }
        if cache.encoder.len() != layout.encoder.len() || cache.decoder.len() != layout.decoder.len() {
            return Err(internal_err!("forward cache does not belong to this network"));
        }
        let mut grads = Vec::new();
        let head_w = self.tensor(layout.head_weight);
        grads.push((
            layout.head_weight,
            ops::conv_backward_weights(grad_logits, &cache.head_input, &layout.head_spec)?.into_data(),
        ));
        let mut bias = Vec::with_capacity(2);
        let per = grad_logits.len() / 2;
        for ch in grad_logits.data().chunks(per) {
            let mut s = T::zero();
            for &v in ch {
                s += v;
            }
            bias.push(s);
        }
        grads.push((layout.head_bias, bias));
        let mut g = ops::conv_backward_input(grad_logits, &layout.head_spec, head_w, cache.head_input.shape())?;

        let stages = layout.encoder.len();
        let mut skip_grads: Vec<Option<Tensor<T>>> = (0..stages).map(|_| None).collect();
        for (i, (dec, dc)) in layout.decoder.iter().zip(&cache.decoder).enumerate().rev() {
            for (b, bc) in dec.blocks.iter().zip(&dc.blocks).rev() {
                g = self.block_backward(b, bc, &g, &mut grads)?;
            }
            let (g_up, g_skip) = skip::crop_concat_backward(&g, &dc.concat)?;
            skip_grads[stages - 1 - i] = Some(g_skip);
            let dg = ops::deconv2d_backward(&g_up, &dc.up_input, self.tensor(dec.up_weight))?;
            grads.push((dec.up_weight, dg.weights.into_data()));
            grads.push((dec.up_bias, dg.bias.into_data()));
            g = dg.input;
        }
        g = ops::dropout_backward(&g, &cache.dropout)?;
        for (b, bc) in layout.bottleneck.iter().zip(&cache.bottleneck).rev() {
            g = self.block_backward(b, bc, &g, &mut grads)?;
        }
        g = skip::depth_collapse_backward(&g, cache.collapse_depth)?;
        for (s, (stage, ec)) in layout.encoder.iter().zip(&cache.encoder).enumerate().rev() {
            g = ops::maxpool_spatial_backward(&g, &ec.pool)?;
            let sg = skip_grads[s]
                .take()
                .ok_or_else(|| internal_err!("missing skip gradient for stage {s}"))?;
            let sg = skip::center_slice_backward(&sg, ec.depth)?;
            g.data_mut().iter_mut().zip(sg.data()).for_each(|(a, &b)| *a += b);
            for (b, bc) in stage.iter().zip(&ec.blocks).rev() {
                g = self.block_backward(b, bc, &g, &mut grads)?;
            }
        }
        if g.shape() != cache.input_shape.as_slice() {
            return Err(internal_err!("input gradient shape {:?} does not match input", g.shape()));
        }
        Ok((grads, g))
    }

    /// Accumulates parameter gradients into the registry's gradient slots
    /// and returns the gradient with respect to the input window.
    pub fn backward(&mut self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Tensor<T>> {
        let (grads, gx) = self.backward_grads(cache, grad_logits)?;
        self.accumulate_grads(&grads)?;
        Ok(gx)
    }

    /// Adds gradients returned by `backward_grads` to the gradient slots.
    pub fn accumulate_grads(&mut self, grads: &[(usize, Vec<T>)]) -> Result<()> {
        for (index, values) in grads {
            if *index >= self.entries().len() {
                return Err(internal_err!("gradient for unknown registry index {index}"));
            }
            self.add_grad(*index, values)?;
        }
        Ok(())
    }
}
