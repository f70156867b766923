//! Cross-correlation over 2 or 3 spatial axes, its adjoints, and the 4×4
//! stride-2 transposed convolution used by the decoder.
//!
//! Both ranks share one lowering: a 2-D problem is run as 3-D with a unit
//! trailing axis, unfolded with im2col and multiplied as a dense matrix.
//! Accumulation order is fixed, so repeated runs are bit-identical.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, internal_err, Result};
use crate::ops::matmul;
use crate::real::Real;
use crate::tensor::Tensor;

const SPATIAL_AXES: [&str; 3] = ["height", "width", "depth"];

/// Geometry of one convolution: per-axis kernel, stride and zero padding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        kernel: &[usize],
        stride: &[usize],
        padding: &[usize],
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let rank = kernel.len();
        if !(rank == 2 || rank == 3) {
            return Err(config_err!("convolution needs 2 or 3 spatial axes, got {rank}"));
        }
        if stride.len() != rank || padding.len() != rank {
            return Err(config_err!(
                "kernel, stride and padding ranks differ ({rank}, {}, {})",
                stride.len(),
                padding.len()
            ));
        }
        for axis in 0..rank {
            if kernel[axis] == 0 {
                return Err(config_err!("kernel extent is zero on {} axis", SPATIAL_AXES[axis]));
            }
            if stride[axis] == 0 {
                return Err(config_err!("stride is zero on {} axis", SPATIAL_AXES[axis]));
            }
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(config_err!("channel counts must be positive"));
        }
        Ok(Self {
            kernel: kernel.to_vec(),
            stride: stride.to_vec(),
            padding: padding.to_vec(),
            in_channels,
            out_channels,
        })
    }

    /// 3×3×3 stride-1 kernel, padding 1 on height/width and 0 on depth.
    pub fn encoder3d(in_channels: usize, out_channels: usize) -> Self {
        Self::new(&[3, 3, 3], &[1, 1, 1], &[1, 1, 0], in_channels, out_channels)
            .expect("valid encoder geometry")
    }

    /// 3×3 stride-1 kernel with padding 1 (size preserving).
    pub fn same2d(in_channels: usize, out_channels: usize) -> Self {
        Self::new(&[3, 3], &[1, 1], &[1, 1], in_channels, out_channels)
            .expect("valid 2-D geometry")
    }

    pub fn pointwise2d(in_channels: usize, out_channels: usize) -> Self {
        Self::new(&[1, 1], &[1, 1], &[0, 0], in_channels, out_channels)
            .expect("valid 1×1 geometry")
    }

    pub fn spatial_rank(&self) -> usize {
        self.kernel.len()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    /// `floor((in + 2·pad − k)/stride) + 1` per axis.
    pub fn output_extent(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() != self.spatial_rank() {
            return Err(config_err!(
                "input has {} spatial axes, kernel expects {}",
                input.len(),
                self.spatial_rank()
            ));
        }
        let mut out = Vec::with_capacity(input.len());
        for axis in 0..input.len() {
            let span = input[axis] + 2 * self.padding[axis];
            if span < self.kernel[axis] {
                return Err(config_err!(
                    "{} axis: extent {} with padding {} is smaller than kernel {}",
                    SPATIAL_AXES[axis],
                    input[axis],
                    self.padding[axis],
                    self.kernel[axis]
                ));
            }
            out.push((span - self.kernel[axis]) / self.stride[axis] + 1);
        }
        Ok(out)
    }
}

/// `(C_in, spatial...)` geometry lifted to three spatial axes.
#[derive(Clone, Copy, Debug)]
struct Geom {
    cin: usize,
    cout: usize,
    inp: [usize; 3],
    out: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
}

impl Geom {
    fn new(spec: &ConvSpec, input_spatial: &[usize]) -> Result<Self> {
        let out_spatial = spec.output_extent(input_spatial)?;
        let lift = |v: &[usize], fill: usize| -> [usize; 3] {
            [v[0], v[1], if v.len() == 3 { v[2] } else { fill }]
        };
        Ok(Self {
            cin: spec.in_channels,
            cout: spec.out_channels,
            inp: lift(input_spatial, 1),
            out: lift(&out_spatial, 1),
            k: lift(&spec.kernel, 1),
            s: lift(&spec.stride, 1),
            p: lift(&spec.padding, 0),
        })
    }

    fn kvol(&self) -> usize {
        self.k[0] * self.k[1] * self.k[2]
    }

    fn nin(&self) -> usize {
        self.inp[0] * self.inp[1] * self.inp[2]
    }

    fn nout(&self) -> usize {
        self.out[0] * self.out[1] * self.out[2]
    }

    fn rows(&self) -> usize {
        self.cin * self.kvol()
    }

    /// Visits every (column row, output offset, input offset) triple whose
    /// input tap lies inside the unpadded input. Rows are ordered
    /// (ci, k0, k1, k2); within a row, outputs are visited in row-major order.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [in0, in1, in2] = self.inp;
        let [out0, out1, out2] = self.out;
        let [k0, k1, k2] = self.k;
        let [s0, s1, s2] = self.s;
        let [p0, p1, p2] = self.p;
        let nin = self.nin();
        for ci in 0..self.cin {
            for a in 0..k0 {
                for b in 0..k1 {
                    for c in 0..k2 {
                        let row = ((ci * k0 + a) * k1 + b) * k2 + c;
                        for o0 in 0..out0 {
                            let i0 = o0 * s0 + a;
                            if i0 < p0 || i0 - p0 >= in0 {
                                continue;
                            }
                            let i0 = i0 - p0;
                            for o1 in 0..out1 {
                                let i1 = o1 * s1 + b;
                                if i1 < p1 || i1 - p1 >= in1 {
                                    continue;
                                }
                                let i1 = i1 - p1;
                                let obase = (o0 * out1 + o1) * out2;
                                let ibase = ci * nin + (i0 * in1 + i1) * in2;
                                for o2 in 0..out2 {
                                    let i2 = o2 * s2 + c;
                                    if i2 < p2 || i2 - p2 >= in2 {
                                        continue;
                                    }
                                    f(row, obase + o2, ibase + i2 - p2);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: Real>(g: &Geom, x: &[T]) -> Vec<T> {
    let nout = g.nout();
    let mut cols = vec![T::zero(); g.rows() * nout];
    g.for_each_tap(|row, o, i| cols[row * nout + o] = x[i]);
    cols
}

fn col2im<T: Real>(g: &Geom, cols: &[T]) -> Vec<T> {
    let nout = g.nout();
    let mut x = vec![T::zero(); g.cin * g.nin()];
    g.for_each_tap(|row, o, i| x[i] += cols[row * nout + o]);
    x
}

fn check_input<T: Real>(input: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    let rank = spec.spatial_rank();
    if input.rank() != rank + 1 {
        return Err(config_err!(
            "convolution input must be [C, {rank} spatial axes], got shape {:?}",
            input.shape()
        ));
    }
    if input.shape()[0] != spec.in_channels {
        return Err(config_err!(
            "channel axis: input has {} channels, kernel expects {}",
            input.shape()[0],
            spec.in_channels
        ));
    }
    Ok(())
}

fn check_weights<T: Real>(weights: &Tensor<T>, spec: &ConvSpec) -> Result<()> {
    let expected = spec.weight_shape();
    if weights.shape() != expected.as_slice() {
        return Err(config_err!(
            "weights shape {:?} does not match kernel {:?}",
            weights.shape(),
            expected
        ));
    }
    Ok(())
}

fn output_shape(spec: &ConvSpec, g: &Geom) -> Vec<usize> {
    let mut shape = vec![spec.out_channels];
    shape.extend_from_slice(&g.out[..spec.spatial_rank()]);
    shape
}

/// Cross-correlation of `input` (`[C_in, spatial...]`) with `weights`
/// (`[C_out, C_in, kernel...]`) plus an optional per-channel bias.
pub fn conv_forward<T: Real>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_input(input, spec)?;
    check_weights(weights, spec)?;
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(config_err!(
                "bias shape {:?} does not match {} output channels",
                b.shape(),
                spec.out_channels
            ));
        }
    }
    let g = Geom::new(spec, &input.shape()[1..])?;
    let cols = im2col(&g, input.data());
    let nout = g.nout();
    let mut out = vec![T::zero(); g.cout * nout];
    if let Some(b) = bias {
        for (co, chunk) in out.chunks_mut(nout).enumerate() {
            chunk.iter_mut().for_each(|v| *v = b.data()[co]);
        }
    }
    matmul::gemm_nn(g.cout, g.rows(), nout, weights.data(), &cols, &mut out);
    Tensor::new(&output_shape(spec, &g), out)
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

fn check_grad_out<T: Real>(grad_out: &Tensor<T>, spec: &ConvSpec, g: &Geom) -> Result<()> {
    let expected = output_shape(spec, g);
    if grad_out.shape() != expected.as_slice() {
        return Err(internal_err!(
            "grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            expected
        ));
    }
    Ok(())
}

/// Adjoint of `conv_forward` with respect to its input, for an input of
/// shape `input_shape`.
pub fn conv_backward_input<T: Real>(
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    check_weights(weights, spec)?;
    if input_shape.len() != spec.spatial_rank() + 1 || input_shape[0] != spec.in_channels {
        return Err(internal_err!("saved input shape {input_shape:?} does not fit kernel"));
    }
    let g = Geom::new(spec, &input_shape[1..])?;
    check_grad_out(grad_out, spec, &g)?;
    let nout = g.nout();
    let mut gcols = vec![T::zero(); g.rows() * nout];
    matmul::gemm_tn(g.cout, g.rows(), nout, weights.data(), grad_out.data(), &mut gcols);
    Tensor::new(input_shape, col2im(&g, &gcols))
}

/// Adjoint of `conv_forward` with respect to its weights.
pub fn conv_backward_weights<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    check_input(saved_input, spec).map_err(|e| internal_err!("saved input: {e}"))?;
    let g = Geom::new(spec, &saved_input.shape()[1..])?;
    check_grad_out(grad_out, spec, &g)?;
    let cols = im2col(&g, saved_input.data());
    let mut gw = vec![T::zero(); g.cout * g.rows()];
    matmul::gemm_nt(g.cout, g.rows(), g.nout(), grad_out.data(), &cols, &mut gw);
    Tensor::new(&spec.weight_shape(), gw)
}

fn channel_sums<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    let c = t.shape()[0];
    let per = t.len() / c;
    Tensor::from_fn(&[c], |ch| {
        let mut acc = T::zero();
        for &v in &t.data()[ch * per..(ch + 1) * per] {
            acc += v;
        }
        acc
    })
}

pub fn conv_backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    spec: &ConvSpec,
    weights: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    Ok(ConvGrads {
        input: conv_backward_input(grad_out, spec, weights, saved_input.shape())?,
        weights: conv_backward_weights(grad_out, saved_input, spec)?,
        bias: channel_sums(grad_out),
    })
}

pub const DECONV_KERNEL: usize = 4;
pub const DECONV_STRIDE: usize = 2;
pub const DECONV_PADDING: usize = 1;

/// The stride-2 convolution whose input adjoint is the decoder's transposed
/// convolution. Deconv weights `[C_in, C_out, 4, 4]` are read as this
/// convolution's `[C_out', C_in', 4, 4]` with the channel roles swapped.
pub fn deconv_adjoint_spec(in_channels: usize, out_channels: usize) -> ConvSpec {
    ConvSpec::new(
        &[DECONV_KERNEL, DECONV_KERNEL],
        &[DECONV_STRIDE, DECONV_STRIDE],
        &[DECONV_PADDING, DECONV_PADDING],
        out_channels,
        in_channels,
    )
    .expect("valid deconvolution geometry")
}

fn deconv_dims<T: Real>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    if input.rank() != 3 {
        return Err(config_err!("deconvolution input must be [C, H, W], got {:?}", input.shape()));
    }
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if weights.rank() != 4
        || weights.shape()[0] != cin
        || weights.shape()[2] != DECONV_KERNEL
        || weights.shape()[3] != DECONV_KERNEL
    {
        return Err(config_err!(
            "deconvolution weights must be [{cin}, C_out, 4, 4], got {:?}",
            weights.shape()
        ));
    }
    Ok((cin, weights.shape()[1], h, w))
}

/// 4×4 stride-2 transposed convolution: `[C_in, H, W] -> [C_out, 2H, 2W]`.
pub fn deconv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let (cin, cout, h, w) = deconv_dims(input, weights)?;
    let spec = deconv_adjoint_spec(cin, cout);
    let mut out = conv_backward_input(input, &spec, weights, &[cout, 2 * h, 2 * w])
        .map_err(|e| config_err!("deconvolution: {e}"))?;
    if let Some(b) = bias {
        if b.shape() != [cout] {
            return Err(config_err!("deconvolution bias must have {cout} entries"));
        }
        let per = 4 * h * w;
        for (co, chunk) in out.data_mut().chunks_mut(per).enumerate() {
            let bv = b.data()[co];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(out)
}

pub fn deconv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    saved_input: &Tensor<T>,
    weights: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (cin, cout, h, w) = deconv_dims(saved_input, weights)?;
    if grad_out.shape() != [cout, 2 * h, 2 * w] {
        return Err(internal_err!(
            "deconvolution grad_out {:?} does not match output [{cout}, {}, {}]",
            grad_out.shape(),
            2 * h,
            2 * w
        ));
    }
    let spec = deconv_adjoint_spec(cin, cout);
    Ok(ConvGrads {
        input: conv_forward(grad_out, &spec, weights, None)?,
        weights: conv_backward_weights(saved_input, grad_out, &spec)?,
        bias: channel_sums(grad_out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_unpadded_encoder_shrinks_depth_by_two() {
        let spec = ConvSpec::encoder3d(1, 1);
        assert_eq!(spec.output_extent(&[512, 512, 38]).unwrap(), vec![512, 512, 36]);
    }

    #[test]
    fn ones_kernel_sums_neighbourhood() {
        let spec = ConvSpec::same2d(1, 1);
        let x = Tensor::<f64>::filled(&[1, 5, 5], 1.0);
        let w = Tensor::<f64>::filled(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f64>::zeros(&[1]);
        let y = conv_forward(&x, &spec, &w, Some(&b)).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5]);
        for i in 1..4 {
            for j in 1..4 {
                assert_eq!(y.at(&[0, i, j]), 9.0);
            }
        }
        assert_eq!(y.at(&[0, 0, 0]), 4.0);
    }

    #[test]
    fn errors_name_the_axis() {
        let spec = ConvSpec::encoder3d(1, 1);
        let err = spec.output_extent(&[8, 8, 2]).unwrap_err();
        assert!(alloc::format!("{err}").contains("depth"));
        let x = Tensor::<f64>::zeros(&[2, 4, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3, 3]);
        let err = conv_forward(&x, &spec, &w, None).unwrap_err();
        assert!(alloc::format!("{err}").contains("channel"));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let spec = ConvSpec::encoder3d(2, 3);
        let x = Tensor::<f64>::from_fn(&[2, 4, 4, 5], |i| (i as f64).sin());
        let w = Tensor::<f64>::from_fn(&spec.weight_shape(), |i| (i as f64).cos());
        let gout = Tensor::<f64>::zeros(&[3, 4, 4, 3]);
        let g = conv_backward(&gout, &x, &spec, &w).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_grad_out_recovers_input_patch() {
        let spec = ConvSpec::same2d(1, 1);
        let x = Tensor::<f64>::from_fn(&[1, 5, 5], |i| i as f64 + 1.0);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let mut gout = Tensor::<f64>::zeros(&[1, 5, 5]);
        let at = gout.offset(&[0, 2, 3]);
        gout.data_mut()[at] = 1.0;
        let g = conv_backward(&gout, &x, &spec, &w).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(g.weights.at(&[0, 0, a, b]), x.at(&[0, 1 + a, 2 + b]));
            }
        }
        assert_eq!(g.bias.data(), &[1.0]);
    }

    #[test]
    fn mismatched_grad_out_is_internal_error() {
        let spec = ConvSpec::same2d(1, 1);
        let x = Tensor::<f64>::zeros(&[1, 5, 5]);
        let w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let gout = Tensor::<f64>::zeros(&[1, 4, 5]);
        assert!(matches!(
            conv_backward(&gout, &x, &spec, &w),
            Err(crate::Error::Internal(_))
        ));
    }

    #[test]
    fn deconv_doubles_and_stamps_kernel() {
        let mut x = Tensor::<f64>::zeros(&[1, 8, 8]);
        let at = x.offset(&[0, 3, 5]);
        x.data_mut()[at] = 1.0;
        let w = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64 + 1.0);
        let y = deconv2d_forward(&x, &w, None).unwrap();
        assert_eq!(y.shape(), &[1, 16, 16]);
        for oy in 0..16usize {
            for ox in 0..16usize {
                let a = oy as isize - (2 * 3 - 1);
                let b = ox as isize - (2 * 5 - 1);
                let expected = if (0..4).contains(&a) && (0..4).contains(&b) {
                    w.at(&[0, 0, a as usize, b as usize])
                } else {
                    0.0
                };
                assert_eq!(y.at(&[0, oy, ox]), expected, "({oy},{ox})");
            }
        }
    }
}
