use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Binary image or volume (`[H, W]` or `[H, W, D]`, row-major, values 0/1).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(shape: &[usize], data: Vec<u8>) -> Result<Self> {
        if !(shape.len() == 2 || shape.len() == 3) || shape.iter().any(|&d| d == 0) {
            return Err(config_err!("mask shape must be [H, W] or [H, W, D] with positive extents, got {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(config_err!("mask shape {shape:?} needs {n} values, got {}", data.len()));
        }
        if let Some(pos) = data.iter().position(|&v| v > 1) {
            return Err(config_err!("mask value {} at offset {pos} is not 0/1", data[pos]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0; shape.iter().product()]).expect("valid mask shape")
    }

    pub fn from_fn2(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        Self::new(&[height, width], data).expect("valid mask shape")
    }

    /// Foreground where `values > threshold`.
    pub fn threshold<T: Real>(values: &[T], shape: &[usize], threshold: T) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| (v > threshold) as u8).collect())
    }

    /// Foreground where channel 1 of a `[2, H, W]` probability map exceeds 0.5.
    pub fn from_probabilities<T: Real>(probs: &Tensor<T>) -> Result<Self> {
        let &[2, h, w] = probs.shape() else {
            return Err(config_err!("probability map must be [2, H, W], got {:?}", probs.shape()));
        };
        Self::threshold(&probs.data()[h * w..], &[h, w], T::from_f64(0.5))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.shape[0]
    }

    pub fn width(&self) -> usize {
        self.shape[1]
    }

    pub fn depth(&self) -> usize {
        self.shape.get(2).copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Pixel of a 2-D mask.
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.shape[1] + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        let w = self.shape[1];
        self.data[y * w + x] = on as u8;
    }

    /// Axial slice `z` of a 3-D mask as a 2-D mask.
    pub fn slice(&self, z: usize) -> Mask {
        let d = self.depth();
        assert!(z < d, "slice {z} out of range");
        let data = (0..self.height() * self.width()).map(|i| self.data[i * d + z]).collect();
        Mask {
            shape: vec![self.height(), self.width()],
            data,
        }
    }

    pub fn set_slice(&mut self, z: usize, slice: &Mask) {
        let d = self.depth();
        assert!(z < d, "slice {z} out of range");
        assert_eq!(slice.shape(), &self.shape[..2], "slice extent mismatch");
        for (i, &v) in slice.data.iter().enumerate() {
            self.data[i * d + z] = v;
        }
    }
}
