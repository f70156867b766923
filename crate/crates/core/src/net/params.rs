use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{config_err, Result};
use crate::ops::ConvSpec;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;

use super::NetworkConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl Role {
    pub fn trainable(self) -> bool {
        !matches!(self, Role::RunningMean | Role::RunningVar)
    }
}

/// One named tensor of the registry. Trainable entries carry a gradient slot.
#[derive(Clone, Debug, PartialEq)]
pub struct Entry<T> {
    pub path: String,
    pub role: Role,
    pub tensor: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BlockLayout {
    pub spec: ConvSpec,
    pub weight: usize,
    pub gamma: usize,
    pub beta: usize,
    pub mean: usize,
    pub var: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct DecoderLayout {
    pub up_weight: usize,
    pub up_bias: usize,
    pub blocks: Vec<BlockLayout>,
}

/// Registry indices of every layer, derived from the config alone.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Layout {
    pub encoder: Vec<Vec<BlockLayout>>,
    pub bottleneck: Vec<BlockLayout>,
    /// Deepest stage first.
    pub decoder: Vec<DecoderLayout>,
    pub head_spec: ConvSpec,
    pub head_weight: usize,
    pub head_bias: usize,
}

/// Shape template of a registry entry, before initialization.
struct Slot {
    path: String,
    role: Role,
    shape: Vec<usize>,
    fan_in: usize,
}

struct Planner {
    slots: Vec<Slot>,
}

impl Planner {
    fn push(&mut self, path: String, role: Role, shape: Vec<usize>, fan_in: usize) -> usize {
        self.slots.push(Slot { path, role, shape, fan_in });
        self.slots.len() - 1
    }

    fn block(&mut self, prefix: &str, spec: ConvSpec) -> BlockLayout {
        let c = spec.out_channels;
        let weight = self.push(format!("{prefix}.weight"), Role::Weight, spec.weight_shape(), spec.fan_in());
        let gamma = self.push(format!("{prefix}.bn.gamma"), Role::Gamma, alloc::vec![c], 0);
        let beta = self.push(format!("{prefix}.bn.beta"), Role::Beta, alloc::vec![c], 0);
        let mean = self.push(format!("{prefix}.bn.running_mean"), Role::RunningMean, alloc::vec![c], 0);
        let var = self.push(format!("{prefix}.bn.running_var"), Role::RunningVar, alloc::vec![c], 0);
        BlockLayout { spec, weight, gamma, beta, mean, var }
    }
}

fn plan_layout(config: &NetworkConfig) -> (Layout, Vec<Slot>) {
    let mut p = Planner { slots: Vec::new() };
    let ch = &config.channels;
    let s_count = config.stages;
    let mut encoder = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let mut blocks = Vec::new();
        let mut cin = if s == 0 { 1 } else { ch[s - 1] };
        for j in 0..config.convs_per_stage {
            blocks.push(p.block(&format!("enc{s}.conv{j}"), ConvSpec::encoder3d(cin, ch[s])));
            cin = ch[s];
        }
        encoder.push(blocks);
    }
    let mut bottleneck = Vec::new();
    let mut cin = ch[s_count - 1];
    for j in 0..config.convs_per_stage {
        bottleneck.push(p.block(&format!("bottleneck.conv{j}"), ConvSpec::same2d(cin, ch[s_count])));
        cin = ch[s_count];
    }
    let mut decoder = Vec::with_capacity(s_count);
    let mut cin = ch[s_count];
    for s in (0..s_count).rev() {
        let c = ch[s];
        // A 4×4 stride-2 kernel touches 4 input pixels per output pixel.
        let up_weight = p.push(format!("dec{s}.up.weight"), Role::Weight, alloc::vec![cin, c, 4, 4], cin * 4);
        let up_bias = p.push(format!("dec{s}.up.bias"), Role::Bias, alloc::vec![c], 0);
        let mut blocks = Vec::new();
        let mut bin = 2 * c;
        for j in 0..config.convs_per_stage {
            blocks.push(p.block(&format!("dec{s}.conv{j}"), ConvSpec::same2d(bin, c)));
            bin = c;
        }
        decoder.push(DecoderLayout { up_weight, up_bias, blocks });
        cin = c;
    }
    let head_spec = ConvSpec::pointwise2d(ch[0], config.num_classes);
    let head_weight = p.push("head.weight".into(), Role::Weight, head_spec.weight_shape(), head_spec.fan_in());
    let head_bias = p.push("head.bias".into(), Role::Bias, alloc::vec![config.num_classes], 0);
    (
        Layout {
            encoder,
            bottleneck,
            decoder,
            head_spec,
            head_weight,
            head_bias,
        },
        p.slots,
    )
}

/// `(path, role, shape)` of every registry entry implied by `config`, in
/// registry order; allocates no tensors.
pub fn parameter_layout(config: &NetworkConfig) -> Result<Vec<(String, Role, Vec<usize>)>> {
    config.validate()?;
    Ok(plan_layout(config).1.into_iter().map(|s| (s.path, s.role, s.shape)).collect())
}

/// Learned parameters and normalization statistics, keyed by layer path in
/// a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T = f64> {
    config: NetworkConfig,
    seed: u64,
    entries: Vec<Entry<T>>,
    pub(crate) layout: Layout,
}

impl<T: Real> NetworkParams<T> {
    /// Deterministic fan-in-scaled initialization: weights ~ N(0, 2/fan_in),
    /// biases and beta zero, gamma one, running statistics (0, 1).
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = plan_layout(config);
        let mut r = rng::rng(seed, &[0x1417]);
        let entries = slots
            .into_iter()
            .map(|slot| {
                let tensor = match slot.role {
                    Role::Weight => {
                        let sd = Float::sqrt(2.0 / slot.fan_in as f64);
                        Tensor::from_fn(&slot.shape, |_| T::from_f64(sd * rng::standard_normal(&mut r)))
                    }
                    Role::Gamma | Role::RunningVar => Tensor::filled(&slot.shape, T::one()),
                    Role::Bias | Role::Beta | Role::RunningMean => Tensor::zeros(&slot.shape),
                };
                let tensor = if slot.role.trainable() { tensor.with_grad() } else { tensor };
                Entry {
                    path: slot.path,
                    role: slot.role,
                    tensor,
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            seed,
            entries,
            layout,
        })
    }

    /// Rebuilds a registry from stored `(path, tensor)` pairs, checking them
    /// against the layout implied by `config`.
    pub fn from_entries(config: &NetworkConfig, seed: u64, stored: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = plan_layout(config);
        if stored.len() != slots.len() {
            let stored_paths: Vec<&str> = stored.iter().map(|(p, _)| p.as_str()).collect();
            for slot in &slots {
                if !stored_paths.contains(&slot.path.as_str()) {
                    return Err(config_err!("layer {}: missing from checkpoint", slot.path));
                }
            }
            for p in stored_paths {
                if !slots.iter().any(|s| s.path == p) {
                    return Err(config_err!("layer {p}: not part of this architecture"));
                }
            }
        }
        let mut entries = Vec::with_capacity(slots.len());
        for (slot, (path, tensor)) in slots.into_iter().zip(stored) {
            if slot.path != path {
                return Err(config_err!("layer {}: checkpoint has {path} in its place", slot.path));
            }
            if tensor.shape() != slot.shape.as_slice() {
                return Err(config_err!(
                    "layer {path}: expected shape {:?}, checkpoint has {:?}",
                    slot.shape,
                    tensor.shape()
                ));
            }
            let tensor = if slot.role.trainable() { tensor.with_grad() } else { tensor };
            entries.push(Entry {
                path,
                role: slot.role,
                tensor,
            });
        }
        Ok(Self {
            config: config.clone(),
            seed,
            entries,
            layout,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [Entry<T>] {
        &mut self.entries
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.path == path).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|e| e.path == path).map(|e| &mut e.tensor)
    }

    pub fn parameter_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role.trainable())
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    pub(crate) fn tensor(&self, index: usize) -> &Tensor<T> {
        &self.entries[index].tensor
    }

    pub(crate) fn add_grad(&mut self, index: usize, delta: &[T]) -> Result<()> {
        self.entries[index].tensor.accumulate_grad(delta)
    }

    pub(crate) fn update_running(&mut self, index: usize, batch: &[T], momentum: f64) {
        crate::ops::norm::update_running(self.entries[index].tensor.data_mut(), batch, momentum);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paths_unique_and_grad_slots_match() {
        let p = NetworkParams::<f64>::build(&NetworkConfig::toy(), 1).unwrap();
        let mut paths: Vec<&str> = p.entries().iter().map(|e| e.path.as_str()).collect();
        let n = paths.len();
        paths.sort_unstable();
        paths.dedup();
        assert_eq!(paths.len(), n);
        for e in p.entries() {
            if e.role.trainable() {
                assert_eq!(e.tensor.grad().unwrap().len(), e.tensor.len(), "{}", e.path);
            } else {
                assert!(e.tensor.grad().is_none());
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let a = NetworkParams::<f64>::build(&NetworkConfig::toy(), 5).unwrap();
        let b = NetworkParams::<f64>::build(&NetworkConfig::toy(), 5).unwrap();
        let c = NetworkParams::<f64>::build(&NetworkConfig::toy(), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.entries(), c.entries());
    }

    #[test]
    fn mismatched_entries_name_the_layer() {
        let small = NetworkParams::<f64>::build(&NetworkConfig::toy(), 1).unwrap();
        let stored: Vec<_> = small.entries().iter().map(|e| (e.path.clone(), e.tensor.clone())).collect();
        let mut wide = NetworkConfig::toy();
        wide.channels = alloc::vec![6, 8, 16];
        let err = NetworkParams::<f64>::from_entries(&wide, 1, stored).unwrap_err();
        assert!(alloc::format!("{err}").contains("enc0.conv0.weight"), "{err}");
    }
}
