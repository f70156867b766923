//! `VOLF` volumes: a fixed little-endian header followed by the raw voxel
//! payload with x varying fastest, then y, then z.
//!
//! ```text
//! magic    4 bytes  "VOLF"
//! version  u32      1
//! height   u32      (y extent)
//! width    u32      (x extent)
//! depth    u32      (z extent)
//! spacing  3 × f64  mm, (y, x, z)
//! dtype    u8       0 = i16 HU, 1 = f32, 2 = u8 mask, 3 = f64
//! modality u8       see `Modality`
//! payload  height·width·depth·sizeof(dtype) bytes
//! ```
//!
//! In memory, volumes are `[H, W, D]` tensors with depth varying fastest.

use std::path::Path;

use voxelseg_core::{DType, Mask, Tensor};

use super::{read_file, write_file, FormatError, Reader};

pub const MAGIC: &[u8; 4] = b"VOLF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 12 + 24 + 1 + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Ct = 0,
    Mask = 1,
    Probability = 2,
    Weight = 3,
}

impl Modality {
    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Modality::Ct,
            1 => Modality::Mask,
            2 => Modality::Probability,
            3 => Modality::Weight,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeHeader {
    pub height: u32,
    pub width: u32,
    pub depth: u32,
    pub spacing: [f64; 3],
    pub dtype: DType,
    pub modality: Modality,
}

impl VolumeHeader {
    pub fn shape(&self) -> [usize; 3] {
        [self.height as usize, self.width as usize, self.depth as usize]
    }

    /// Payload size implied by the header, or an error for zero or
    /// overflowing dimensions.
    pub fn payload_len(&self) -> Result<usize, FormatError> {
        let [h, w, d] = self.shape();
        if h == 0 || w == 0 || d == 0 {
            return Err(FormatError::Header(format!("dimensions {h}×{w}×{d} must be positive")));
        }
        h.checked_mul(w)
            .and_then(|n| n.checked_mul(d))
            .and_then(|n| n.checked_mul(self.dtype.size()))
            .ok_or_else(|| FormatError::Header(format!("dimensions {h}×{w}×{d} overflow the payload size")))
    }
}

/// Voxels in `[H, W, D]` order.
#[derive(Clone, Debug, PartialEq)]
pub enum Voxels {
    I16(Vec<i16>),
    F32(Vec<f32>),
    U8(Vec<u8>),
    F64(Vec<f64>),
}

impl Voxels {
    pub fn dtype(&self) -> DType {
        match self {
            Voxels::I16(_) => DType::I16,
            Voxels::F32(_) => DType::F32,
            Voxels::U8(_) => DType::U8,
            Voxels::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Voxels::I16(v) => v.len(),
            Voxels::F32(v) => v.len(),
            Voxels::U8(v) => v.len(),
            Voxels::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get_f64(&self, i: usize) -> f64 {
        match self {
            Voxels::I16(v) => v[i] as f64,
            Voxels::F32(v) => v[i] as f64,
            Voxels::U8(v) => v[i] as f64,
            Voxels::F64(v) => v[i],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub header: VolumeHeader,
    pub voxels: Voxels,
}

/// Memory index of file voxel `(x, y, z)` is `(y·W + x)·D + z`; this maps
/// the file's running index to the memory index.
fn memory_index(file_index: usize, [h, w, d]: [usize; 3]) -> usize {
    let x = file_index % w;
    let y = (file_index / w) % h;
    let z = file_index / (w * h);
    (y * w + x) * d + z
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing: [f64; 3], modality: Modality, voxels: Voxels) -> Result<Self, FormatError> {
        let extent = |v: usize| u32::try_from(v).map_err(|_| FormatError::Header(format!("extent {v} exceeds u32")));
        let (height, width, depth) = (extent(shape[0])?, extent(shape[1])?, extent(shape[2])?);
        let header = VolumeHeader {
            height,
            width,
            depth,
            spacing,
            dtype: voxels.dtype(),
            modality,
        };
        let expected = header.payload_len()? / header.dtype.size();
        if voxels.len() != expected {
            return Err(FormatError::Header(format!(
                "{}×{}×{} volume needs {expected} voxels, got {}",
                height,
                width,
                depth,
                voxels.len()
            )));
        }
        Ok(Self { header, voxels })
    }

    pub fn from_intensities(volume: &Tensor<f32>, spacing: [f64; 3]) -> Result<Self, FormatError> {
        Self::new(dims3(volume.shape())?, spacing, Modality::Ct, Voxels::F32(volume.data().to_vec()))
    }

    /// Stores integral intensities as 16-bit; other values as f32.
    pub fn from_hounsfield(volume: &Tensor<f32>, spacing: [f64; 3]) -> Result<Self, FormatError> {
        let integral = volume.data().iter().all(|v| v.fract() == 0.0 && (i16::MIN as f32..=i16::MAX as f32).contains(v));
        if integral {
            let data = volume.data().iter().map(|&v| v as i16).collect();
            Self::new(dims3(volume.shape())?, spacing, Modality::Ct, Voxels::I16(data))
        } else {
            Self::from_intensities(volume, spacing)
        }
    }

    pub fn from_mask(mask: &Mask, spacing: [f64; 3]) -> Result<Self, FormatError> {
        Self::new(dims3(mask.shape())?, spacing, Modality::Mask, Voxels::U8(mask.data().to_vec()))
    }

    pub fn shape(&self) -> [usize; 3] {
        self.header.shape()
    }

    /// Intensities as an `[H, W, D]` f32 tensor, whatever the stored type.
    pub fn to_tensor(&self) -> Result<Tensor<f32>, FormatError> {
        let data = (0..self.voxels.len()).map(|i| self.voxels.get_f64(i) as f32).collect();
        Ok(Tensor::new(&self.shape(), data)?)
    }

    /// The payload as a binary mask; any value other than 0 or 1 is rejected.
    pub fn to_mask(&self) -> Result<Mask, FormatError> {
        let mut data = Vec::with_capacity(self.voxels.len());
        for i in 0..self.voxels.len() {
            let v = self.voxels.get_f64(i);
            if v != 0.0 && v != 1.0 {
                return Err(FormatError::Header(format!("mask voxel {i} has value {v}")));
            }
            data.push(v as u8);
        }
        Ok(Mask::new(&self.shape(), data)?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let shape = h.shape();
        let n = self.voxels.len();
        let mut out = Vec::with_capacity(HEADER_LEN + n * h.dtype.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [h.height, h.width, h.depth] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for s in h.spacing {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out.push(h.dtype.tag());
        out.push(h.modality as u8);
        for f in 0..n {
            let m = memory_index(f, shape);
            match &self.voxels {
                Voxels::I16(v) => out.extend_from_slice(&v[m].to_le_bytes()),
                Voxels::F32(v) => out.extend_from_slice(&v[m].to_le_bytes()),
                Voxels::U8(v) => out.push(v[m]),
                Voxels::F64(v) => out.extend_from_slice(&v[m].to_le_bytes()),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        let header = decode_header(&mut r)?;
        let dtype = header.dtype;
        let expected = header.payload_len()?;
        let actual = r.remaining();
        if actual > expected {
            return Err(FormatError::Header(format!(
                "{} trailing bytes after the {expected}-byte payload",
                actual - expected
            )));
        }
        if actual < expected {
            return Err(FormatError::Truncated {
                what: "payload",
                expected,
                actual,
            });
        }
        let payload = r.take(expected, "payload")?;
        let shape = header.shape();
        let n = expected / dtype.size();
        let mut order = vec![0usize; n];
        for (f, slot) in order.iter_mut().enumerate() {
            *slot = memory_index(f, shape);
        }
        let voxels = match dtype {
            DType::U8 => {
                let mut v = vec![0u8; n];
                for (f, &b) in payload.iter().enumerate() {
                    v[order[f]] = b;
                }
                Voxels::U8(v)
            }
            DType::I16 => {
                let mut v = vec![0i16; n];
                for (f, c) in payload.chunks_exact(2).enumerate() {
                    v[order[f]] = i16::from_le_bytes([c[0], c[1]]);
                }
                Voxels::I16(v)
            }
            DType::F32 => {
                let mut v = vec![0f32; n];
                for (f, c) in payload.chunks_exact(4).enumerate() {
                    v[order[f]] = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                }
                Voxels::F32(v)
            }
            DType::F64 => {
                let mut v = vec![0f64; n];
                for (f, c) in payload.chunks_exact(8).enumerate() {
                    v[order[f]] = f64::from_le_bytes(c.try_into().expect("8 bytes"));
                }
                Voxels::F64(v)
            }
        };
        Ok(Self { header, voxels })
    }
}

fn decode_header(r: &mut Reader) -> Result<VolumeHeader, FormatError> {
    let magic = r.take(4, "header")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "VOLF",
            found: magic.to_vec(),
        });
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let (height, width, depth) = (r.u32("header")?, r.u32("header")?, r.u32("header")?);
    let spacing = [r.f64("header")?, r.f64("header")?, r.f64("header")?];
    let tag = r.u8("header")?;
    let dtype = DType::from_tag(tag).ok_or_else(|| FormatError::Header(format!("unknown dtype tag {tag}")))?;
    let mtag = r.u8("header")?;
    let modality = Modality::from_tag(mtag).ok_or_else(|| FormatError::Header(format!("unknown modality tag {mtag}")))?;
    let header = VolumeHeader {
        height,
        width,
        depth,
        spacing,
        dtype,
        modality,
    };
    header.payload_len()?;
    Ok(header)
}

/// Reads and checks only the header of a volume file.
pub fn read_header(path: &Path) -> Result<VolumeHeader, FormatError> {
    use std::io::Read;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    std::fs::File::open(path)
        .and_then(|f| f.take(HEADER_LEN as u64).read_to_end(&mut buf))
        .map_err(|e| FormatError::io(path, e))?;
    decode_header(&mut Reader::new(&buf))
}

fn dims3(shape: &[usize]) -> Result<[usize; 3], FormatError> {
    match *shape {
        [h, w, d] => Ok([h, w, d]),
        [h, w] => Ok([h, w, 1]),
        _ => Err(FormatError::Header(format!("volumes are 3-D, got shape {shape:?}"))),
    }
}

pub fn save_volume(volume: &Volume, path: &Path) -> Result<(), FormatError> {
    write_file(path, &volume.encode())
}

pub fn load_volume(path: &Path) -> Result<Volume, FormatError> {
    Volume::decode(&read_file(path)?)
}
