//! Freeze contract: backbone parameters never receive gradients and stay
//! byte-identical to their state at model construction.

use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::nn::params::ParamStore;

pub const BACKBONE_PREFIX: &str = "backbone.";

/// Little-endian bytes of a tensor in its own dtype.
pub fn tensor_bytes(t: &Tensor) -> Result<Vec<u8>> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F64 => flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect(),
        _ => flat
            .to_dtype(DType::F32)?
            .to_vec1::<f32>()?
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrozenSnapshot {
    digests: BTreeMap<String, [u8; 32]>,
}

impl FrozenSnapshot {
    /// SHA-256 of every parameter under `backbone.`.
    pub fn capture(ps: &ParamStore) -> Result<Self> {
        let mut digests = BTreeMap::new();
        for e in ps.entries().iter().filter(|e| e.name.starts_with(BACKBONE_PREFIX)) {
            let bytes = tensor_bytes(&ps.value(&e.name)?)?;
            digests.insert(e.name.clone(), Sha256::digest(&bytes).into());
        }
        Ok(Self { digests })
    }

    pub fn len(&self) -> usize {
        self.digests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.digests.is_empty()
    }

    /// One hex digest over all parameter names and digests.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, d) in &self.digests {
            h.update(name.as_bytes());
            h.update(d);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeReport {
    pub passed: bool,
    pub checked: usize,
    /// Parameters whose bytes differ from the snapshot (or vanished).
    pub changed: Vec<String>,
    /// Parameters that received a gradient in the supplied gradient store.
    pub with_gradient: Vec<String>,
    /// Backbone parameters registered as trainable.
    pub trainable: Vec<String>,
}

impl FreezeReport {
    pub fn offenders(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self
            .changed
            .iter()
            .chain(&self.with_gradient)
            .chain(&self.trainable)
            .map(String::as_str)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub fn assert_frozen(ps: &ParamStore, snapshot: &FrozenSnapshot, grads: Option<&GradStore>) -> Result<FreezeReport> {
    let mut report = FreezeReport::default();
    for (name, digest) in &snapshot.digests {
        report.checked += 1;
        let Some(entry) = ps.entry(name) else {
            report.changed.push(name.clone());
            continue;
        };
        let now: [u8; 32] = Sha256::digest(tensor_bytes(&ps.value(name)?)?).into();
        if &now != digest {
            report.changed.push(name.clone());
        }
        if entry.trainable {
            report.trainable.push(name.clone());
        }
        if let Some(g) = grads {
            if entry.gradient(g).is_some() {
                report.with_gradient.push(name.clone());
            }
        }
    }
    report.passed = report.changed.is_empty() && report.with_gradient.is_empty() && report.trainable.is_empty();
    Ok(report)
}
