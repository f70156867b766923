//! Network checkpoints and resumable training state.
//!
//! ```text
//! magic    5 bytes  "V3D2D"
//! version  u32      1
//! config   input height/width/depth u32, stages u32, convs_per_stage u32,
//!          num_classes u32, dropout_p f64, channel count u32, channels u32…
//! seed     u64
//! dtype    u8       element type of the network (1 = f32, 3 = f64)
//! count    u32      number of entries
//! entry    path length u32, path bytes (UTF-8), dtype u8, rank u32,
//!          dims u64…, values (little-endian)
//! ```

use std::path::Path;

use voxelseg_core::net::{parameter_layout, NetworkConfig, NetworkParams};
use voxelseg_core::optim::OptimizerState;
use voxelseg_core::{DType, Real, Tensor};

use super::{read_file, write_file, FormatError, Reader};

pub const MAGIC: &[u8; 5] = b"V3D2D";
pub const VERSION: u32 = 1;
pub const STATE_MAGIC: &[u8; 6] = b"VSTATE";
pub const STATE_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_len(out: &mut Vec<u8>, v: usize) {
    put_u32(out, u32::try_from(v).expect("length fits in u32"));
}

fn put_values<T: Real>(out: &mut Vec<u8>, values: &[T]) {
    match T::DTYPE {
        DType::F32 => values.iter().for_each(|v| out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes())),
        _ => values.iter().for_each(|v| out.extend_from_slice(&v.as_f64().to_le_bytes())),
    }
}

fn take_values<T: Real>(r: &mut Reader, dtype: DType, n: usize, what: &'static str) -> Result<Vec<T>, FormatError> {
    let bytes = n
        .checked_mul(dtype.size())
        .ok_or_else(|| FormatError::Header(format!("{what}: {n} values overflow")))?;
    let raw = r.take(bytes, what)?;
    Ok(match dtype {
        DType::F32 => raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect(),
        DType::F64 => raw
            .chunks_exact(8)
            .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect(),
        other => return Err(FormatError::Header(format!("{what}: element type {other:?} is not a float"))),
    })
}

fn float_dtype(tag: u8) -> Result<DType, FormatError> {
    match DType::from_tag(tag) {
        Some(d @ (DType::F32 | DType::F64)) => Ok(d),
        _ => Err(FormatError::Header(format!("element type tag {tag} is not f32 or f64"))),
    }
}

fn encode_config(out: &mut Vec<u8>, c: &NetworkConfig) {
    for v in [
        c.input_height,
        c.input_width,
        c.input_depth,
        c.stages,
        c.convs_per_stage,
        c.num_classes,
    ] {
        put_len(out, v);
    }
    out.extend_from_slice(&c.dropout_p.to_le_bytes());
    put_len(out, c.channels.len());
    c.channels.iter().for_each(|&v| put_len(out, v));
}

fn decode_config(r: &mut Reader) -> Result<NetworkConfig, FormatError> {
    let mut f = || r.u32("config").map(|v| v as usize);
    let (input_height, input_width, input_depth) = (f()?, f()?, f()?);
    let (stages, convs_per_stage, num_classes) = (f()?, f()?, f()?);
    let dropout_p = r.f64("config")?;
    let n = r.u32("config")? as usize;
    if n > 64 {
        return Err(FormatError::Header(format!("config lists {n} channel widths")));
    }
    let channels = (0..n).map(|_| r.u32("config").map(|v| v as usize)).collect::<Result<_, _>>()?;
    Ok(NetworkConfig {
        input_height,
        input_width,
        input_depth,
        stages,
        channels,
        convs_per_stage,
        dropout_p,
        num_classes,
    })
}

pub fn encode_checkpoint<T: Real>(params: &NetworkParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    encode_config(&mut out, params.config());
    out.extend_from_slice(&params.seed().to_le_bytes());
    out.push(T::DTYPE.tag());
    put_len(&mut out, params.entries().len());
    for e in params.entries() {
        put_len(&mut out, e.path.len());
        out.extend_from_slice(e.path.as_bytes());
        out.push(T::DTYPE.tag());
        put_len(&mut out, e.tensor.rank());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        put_values(&mut out, e.tensor.data());
    }
    out
}

/// Header fields of a checkpoint, readable without materializing tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub config: NetworkConfig,
    pub seed: u64,
    pub dtype: DType,
}

fn decode_header(r: &mut Reader) -> Result<CheckpointInfo, FormatError> {
    let magic = r.take(MAGIC.len(), "header")?;
    if magic != MAGIC {
        return Err(FormatError::BadMagic {
            expected: "V3D2D",
            found: magic.to_vec(),
        });
    }
    let version = r.u32("header")?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let config = decode_config(r)?;
    let seed = r.u64("header")?;
    let dtype = float_dtype(r.u8("header")?)?;
    Ok(CheckpointInfo { config, seed, dtype })
}

/// Parses a checkpoint, converting stored values to `T` if needed.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<NetworkParams<T>, FormatError> {
    let mut r = Reader::new(bytes);
    let info = decode_header(&mut r)?;
    if info.dtype != T::DTYPE {
        log::warn!("checkpoint holds {:?} values; converting to {:?}", info.dtype, T::DTYPE);
    }
    let count = r.u32("entry count")? as usize;
    let mut stored = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32("entry path")? as usize;
        let path = std::str::from_utf8(r.take(len, "entry path")?)
            .map_err(|_| FormatError::Header("entry path is not UTF-8".into()))?
            .to_owned();
        let dtype = float_dtype(r.u8("entry")?)?;
        let rank = r.u32("entry")? as usize;
        if rank > 8 {
            return Err(FormatError::Header(format!("layer {path}: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64("entry dims")?).map_err(|_| FormatError::Header(format!("layer {path}: dimension overflow")))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::Header(format!("layer {path}: dimension overflow")))?;
        let values = take_values::<T>(&mut r, dtype, n, "entry values")?;
        stored.push((path, Tensor::new(&shape, values)?));
    }
    if r.remaining() != 0 {
        return Err(FormatError::Header(format!("{} trailing bytes after the last entry", r.remaining())));
    }
    Ok(NetworkParams::from_entries(&info.config, info.seed, stored)?)
}

pub fn save_checkpoint<T: Real>(params: &NetworkParams<T>, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_checkpoint(params))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<NetworkParams<T>, FormatError> {
    decode_checkpoint(&read_file(path)?)
}

pub fn read_checkpoint_info(path: &Path) -> Result<CheckpointInfo, FormatError> {
    decode_header(&mut Reader::new(&read_file(path)?))
}

/// Lines describing how the layers stored under `stored` differ from those
/// `expected` needs; empty when the layouts agree.
pub fn layout_diff(expected: &NetworkConfig, stored: &NetworkConfig) -> Result<Vec<String>, FormatError> {
    let want = parameter_layout(expected)?;
    let have = parameter_layout(stored)?;
    let mut lines = Vec::new();
    for (path, _, shape) in &want {
        match have.iter().find(|(p, _, _)| p == path) {
            None => lines.push(format!("- {path} {shape:?}: missing from checkpoint")),
            Some((_, _, s)) if s != shape => lines.push(format!("~ {path}: config expects {shape:?}, checkpoint has {s:?}")),
            Some(_) => {}
        }
    }
    for (path, _, shape) in &have {
        if !want.iter().any(|(p, _, _)| p == path) {
            lines.push(format!("+ {path} {shape:?}: not part of the configured network"));
        }
    }
    Ok(lines)
}

/// Progress of an interrupted training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    /// Last completed epoch (1-based).
    pub epoch: u32,
    pub best_epoch: u32,
    pub best_val_loss: f64,
    /// Epochs since the best validation loss.
    pub stale_epochs: u32,
    pub optimizer: OptimizerState<T>,
}

pub fn encode_state<T: Real>(state: &TrainState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(STATE_MAGIC);
    put_u32(&mut out, STATE_VERSION);
    put_u32(&mut out, state.epoch);
    put_u32(&mut out, state.best_epoch);
    out.extend_from_slice(&state.best_val_loss.to_le_bytes());
    put_u32(&mut out, state.stale_epochs);
    out.extend_from_slice(&state.optimizer.steps.to_le_bytes());
    out.push(T::DTYPE.tag());
    for group in [&state.optimizer.first, &state.optimizer.second] {
        put_len(&mut out, group.len());
        for v in group {
            out.extend_from_slice(&(v.len() as u64).to_le_bytes());
            put_values(&mut out, v);
        }
    }
    out
}

pub fn decode_state<T: Real>(bytes: &[u8]) -> Result<TrainState<T>, FormatError> {
    let mut r = Reader::new(bytes);
    let magic = r.take(STATE_MAGIC.len(), "header")?;
    if magic != STATE_MAGIC {
        return Err(FormatError::BadMagic {
            expected: "VSTATE",
            found: magic.to_vec(),
        });
    }
    let version = r.u32("header")?;
    if version != STATE_VERSION {
        return Err(FormatError::Version(version));
    }
    let epoch = r.u32("header")?;
    let best_epoch = r.u32("header")?;
    let best_val_loss = r.f64("header")?;
    let stale_epochs = r.u32("header")?;
    let steps = r.u64("header")?;
    let dtype = float_dtype(r.u8("header")?)?;
    let mut groups = [Vec::new(), Vec::new()];
    for group in &mut groups {
        let n = r.u32("moment count")? as usize;
        for _ in 0..n {
            let len = usize::try_from(r.u64("moment length")?).map_err(|_| FormatError::Header("moment length overflow".into()))?;
            group.push(take_values::<T>(&mut r, dtype, len, "moment values")?);
        }
    }
    if r.remaining() != 0 {
        return Err(FormatError::Header(format!("{} trailing bytes in training state", r.remaining())));
    }
    let [first, second] = groups;
    Ok(TrainState {
        epoch,
        best_epoch,
        best_val_loss,
        stale_epochs,
        optimizer: OptimizerState { steps, first, second },
    })
}

pub fn save_state<T: Real>(state: &TrainState<T>, path: &Path) -> Result<(), FormatError> {
    write_file(path, &encode_state(state))
}

pub fn load_state<T: Real>(path: &Path) -> Result<TrainState<T>, FormatError> {
    decode_state(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let p = NetworkParams::<f64>::build(&NetworkConfig::toy(), 9).unwrap();
        let bytes = encode_checkpoint(&p);
        let back = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(back.entries(), p.entries());
        assert_eq!(back.config(), p.config());
        assert_eq!(back.seed(), 9);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn f32_round_trip() {
        let p = NetworkParams::<f32>::build(&NetworkConfig::tiny(), 2).unwrap();
        let back = decode_checkpoint::<f32>(&encode_checkpoint(&p)).unwrap();
        assert_eq!(back.entries(), p.entries());
    }

    #[test]
    fn truncation_and_version_rejected() {
        let p = NetworkParams::<f64>::build(&NetworkConfig::tiny(), 1).unwrap();
        let bytes = encode_checkpoint(&p);
        assert!(matches!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]), Err(FormatError::Truncated { .. })));
        let mut v2 = bytes.clone();
        v2[5..9].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_checkpoint::<f64>(&v2), Err(FormatError::Version(2))));
    }

    #[test]
    fn diff_names_layers() {
        let mut wide = NetworkConfig::toy();
        wide.channels = vec![6, 8, 16];
        let lines = layout_diff(&NetworkConfig::toy(), &wide).unwrap();
        assert!(lines.iter().any(|l| l.contains("enc0.conv0.weight")), "{lines:?}");
        assert!(layout_diff(&wide, &wide).unwrap().is_empty());
    }

    #[test]
    fn state_round_trip() {
        let s = TrainState::<f64> {
            epoch: 3,
            best_epoch: 2,
            best_val_loss: 0.25,
            stale_epochs: 1,
            optimizer: OptimizerState {
                steps: 17,
                first: vec![vec![1.0, -2.0], vec![0.5]],
                second: vec![vec![3.0, 4.0], vec![0.0]],
            },
        };
        assert_eq!(decode_state::<f64>(&encode_state(&s)).unwrap(), s);
    }
}
