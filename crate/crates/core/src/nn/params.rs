//! Named parameter registry.
//!
//! Every tensor of every module is created through [`ParamStore::param`],
//! which gives a single place to count parameters, snapshot the frozen
//! backbone, collect trainable variables for the optimizer and serialize
//! checkpoints.
//!
//! Seeded initialization: a parameter named `name` in a store with seed `s`
//! is filled from a ChaCha8 stream seeded with `s ^ fnv1a64(name)`
//! (`rand_chacha::ChaCha8Rng::seed_from_u64`). Each element consumes one
//! `u64` draw `x`, mapped to `u = (x >> 11) * 2^-53` and then to
//! `bound * (2u - 1)` for uniform inits. Values are generated in f64 and
//! cast to the store dtype, so the weights do not depend on construction
//! order or on which other parameters exist.

use std::collections::{BTreeMap, HashMap};

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic initial values for one named parameter.
pub fn init_values(seed: u64, name: &str, numel: usize, init: Init) -> Vec<f64> {
    match init {
        Init::Zeros => vec![0.0; numel],
        Init::Ones => vec![1.0; numel],
        Init::Uniform(bound) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()));
            (0..numel)
                .map(|_| {
                    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    bound * (2.0 * u - 1.0)
                })
                .collect()
        }
    }
}

pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    var: Option<Var>,
    /// The tensor handed to modules; gradients are keyed by its id.
    handle: Tensor,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn handle(&self) -> &Tensor {
        &self.handle
    }

    pub fn var(&self) -> Option<&Var> {
        self.var.as_ref()
    }

    /// Gradient of the stored variable. A frozen parameter is handed out as
    /// a detached copy, so the gradient a graph computes for that copy is
    /// never attributed to the variable.
    pub fn gradient<'a>(&self, grads: &'a GradStore) -> Option<&'a Tensor> {
        self.var.as_ref().and_then(|v| grads.get(v.as_tensor()))
    }
}

pub struct ParamStore {
    seed: u64,
    dtype: DType,
    device: Device,
    materialize: bool,
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            seed,
            dtype,
            device: Device::Cpu,
            materialize: true,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// A store that only records names and shapes. Handed-out tensors are
    /// zero-stride broadcasts, so full-scale models can be counted without
    /// allocating their weights. Such models must not be run.
    pub fn shapes_only(dtype: DType) -> Self {
        Self {
            materialize: false,
            ..Self::new(0, dtype)
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_materialized(&self) -> bool {
        self.materialize
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<Tensor> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("parameter '{name}' registered twice")));
        }
        let numel: usize = shape.iter().product();
        let (var, handle) = if self.materialize {
            let values = init_values(self.seed, name, numel, init);
            let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
            let var = Var::from_tensor(&t)?;
            let handle = if trainable {
                var.as_tensor().clone()
            } else {
                var.as_tensor().detach()
            };
            (Some(var), handle)
        } else {
            let handle = Tensor::zeros((), self.dtype, &self.device)?.broadcast_as(shape)?;
            (None, handle)
        };
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            trainable,
            var,
            handle: handle.clone(),
        });
        Ok(handle)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Current value of a parameter, detached from any graph.
    pub fn value(&self, name: &str) -> Result<Tensor> {
        let e = self
            .entry(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        match &e.var {
            Some(v) => Ok(v.as_tensor().detach()),
            None => Err(Error::Config(format!("parameter '{name}' is not materialized"))),
        }
    }

    /// Overwrite a parameter in place. Modules holding the parameter see the
    /// new value.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let e = self
            .entry(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        let var = e
            .var
            .as_ref()
            .ok_or_else(|| Error::Config(format!("parameter '{name}' is not materialized")))?;
        if value.dims() != e.shape.as_slice() {
            return Err(Error::Shape(format!(
                "parameter '{name}' has shape {:?}, got {:?}",
                e.shape,
                value.dims()
            )));
        }
        let v = value.to_dtype(self.dtype)?.contiguous()?.copy()?;
        var.set(&v)?;
        Ok(())
    }

    /// Drop every parameter whose name starts with `prefix`.
    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|e| !e.name.starts_with(prefix));
        self.index = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.name.clone(), i))
            .collect();
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .filter_map(|e| e.var.clone())
            .collect()
    }

    pub fn gradient<'a>(&self, grads: &'a GradStore, name: &str) -> Option<&'a Tensor> {
        self.entry(name).and_then(|e| e.gradient(grads))
    }

    /// Snapshot of all values, for checkpointing.
    pub fn named_tensors(&self) -> HashMap<String, Tensor> {
        self.entries
            .iter()
            .filter_map(|e| e.var.as_ref().map(|v| (e.name.clone(), v.as_tensor().detach())))
            .collect()
    }

    /// Load values by name. Every registered parameter must be present with
    /// a matching shape; unknown names in `tensors` are an error.
    pub fn load_named(&self, tensors: &HashMap<String, Tensor>) -> Result<()> {
        for name in tensors.keys() {
            if !self.contains(name) {
                return Err(Error::Checkpoint(format!("unexpected tensor '{name}'")));
            }
        }
        for e in &self.entries {
            let t = tensors
                .get(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{}'", e.name)))?;
            self.set(&e.name, t)?;
        }
        Ok(())
    }

    pub fn report(&self) -> ParamReport {
        let mut report = ParamReport::default();
        for e in &self.entries {
            let n = e.numel() as u64;
            let prefix = e.name.split('.').next().unwrap_or("").to_string();
            let slot = report.by_prefix.entry(prefix).or_default();
            slot.total += n;
            report.total += n;
            if e.trainable {
                slot.trainable += n;
                report.trainable += n;
            }
        }
        report
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixCount {
    pub total: u64,
    pub trainable: u64,
}

/// Exact parameter counts, broken down by top-level name prefix
/// (`backbone`, `side`, `fusion`, `head`, `peft`).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: u64,
    pub trainable: u64,
    pub by_prefix: BTreeMap<String, PrefixCount>,
}

impl ParamReport {
    pub fn trainable_millions(&self) -> f64 {
        self.trainable as f64 / 1e6
    }

    pub fn prefix(&self, p: &str) -> PrefixCount {
        self.by_prefix.get(p).copied().unwrap_or_default()
    }
}
