//! Checkpoints: `weights.safetensors` plus `meta.json`.
//!
//! With a frozen backbone only the non-backbone tensors are written; the
//! backbone is rebuilt from the configuration (seed or imported weights)
//! and must reproduce the recorded fingerprint.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::freeze::{FrozenSnapshot, BACKBONE_PREFIX};
use crate::error::{Error, Result};
use crate::fusion::BatchNormStats;
use crate::model::{Model, ModelConfig, Tuning};
use crate::schema::AttributeSchema;
use crate::train::config::TrainConfig;

pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const META_FILE: &str = "meta.json";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub model: ModelConfig,
    pub tuning: Tuning,
    pub schema: serde_json::Value,
    pub schema_fingerprint: String,
    pub step: usize,
    pub batch_norm: BatchNormStats,
    pub includes_backbone: bool,
    pub backbone_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct CheckpointInfo {
    pub step: usize,
    pub train: Option<TrainConfig>,
    pub manifest: Option<PathBuf>,
}

pub fn save_checkpoint(model: &Model, dir: &Path, info: &CheckpointInfo) -> Result<CheckpointMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let includes_backbone = model.backbone_trainable();
    let tensors: HashMap<String, Tensor> = model
        .params
        .named_tensors()
        .into_iter()
        .filter(|(name, _)| includes_backbone || !name.starts_with(BACKBONE_PREFIX))
        .map(|(n, t)| t.contiguous().map(|t| (n, t)))
        .collect::<candle_core::Result<_>>()?;
    let weights = dir.join(WEIGHTS_FILE);
    candle_core::safetensors::save(&tensors, &weights)?;
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        model: model.cfg.clone(),
        tuning: model.tuning.clone(),
        schema: serde_json::from_str(&model.schema.to_json())?,
        schema_fingerprint: model.schema.fingerprint(),
        step: info.step,
        batch_norm: model.fusion.bn.stats(),
        includes_backbone,
        backbone_fingerprint: FrozenSnapshot::capture(&model.params)?.fingerprint(),
        train: info.train.clone(),
        manifest: info.manifest.clone(),
    };
    let path = dir.join(META_FILE);
    fs::write(&path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Model, CheckpointMeta)> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {}", meta.format_version)));
    }
    let schema = AttributeSchema::from_json(&meta.schema.to_string())?;
    if schema.fingerprint() != meta.schema_fingerprint {
        return Err(Error::Checkpoint("schema does not match its recorded fingerprint".into()));
    }
    let model = Model::new(&meta.model, &schema, meta.tuning.clone())?;
    let weights = dir.join(WEIGHTS_FILE);
    if !weights.exists() {
        return Err(Error::Checkpoint(format!("{} is missing", weights.display())));
    }
    let tensors = candle_core::safetensors::load(&weights, &Device::Cpu)?;
    for e in model.params.entries() {
        let needed = meta.includes_backbone || !e.name.starts_with(BACKBONE_PREFIX);
        if needed && !tensors.contains_key(&e.name) {
            return Err(Error::Checkpoint(format!("missing tensor '{}'", e.name)));
        }
    }
    for (name, t) in &tensors {
        if !model.params.contains(name) {
            return Err(Error::Checkpoint(format!("unexpected tensor '{name}'")));
        }
        model.params.set(name, t)?;
    }
    let fingerprint = FrozenSnapshot::capture(&model.params)?.fingerprint();
    if fingerprint != meta.backbone_fingerprint {
        return Err(Error::Checkpoint(
            "backbone weights differ from the ones the checkpoint was trained on".into(),
        ));
    }
    model.fusion.bn.set_stats(meta.batch_norm.clone());
    model.invalidate_text_cache();
    Ok((model, meta))
}
