//! Run configuration: one TOML document with a section per module.
//!
//! ```toml
//! preset = "toy"          # toy | full | gradcheck: base values for every model section
//! tuning = "side"         # side | frozen | full | peft
//!
//! [model]                 # seed, precision, pretrained_weights, unfreeze_backbone
//! [vision]                # VisionEncoderConfig
//! [text]                  # TextEncoderConfig
//! [side_net]              # SideNetConfig ([side_net.aggregation] spatial/temporal)
//! [fusion]                # FusionConfig
//! [preprocess]            # PreprocessConfig
//! [loss]                  # LossConfig
//! [train]                 # TrainConfig
//! [peft]                  # PeftVariant, used when tuning = "peft"
//! [data]                  # manifest, schema, splits
//! ```
//!
//! Values in the file override the preset; unknown keys are rejected.
//! Relative paths resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::Value;

use crate::backbone::{TextEncoderConfig, VisionEncoderConfig};
use crate::data::{PreprocessConfig, SamplePolicy, SamplerConfig, Split};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::model::{ModelConfig, Precision, Tuning};
use crate::objective::LossConfig;
use crate::peft::PeftVariant;
use crate::side::SideNetConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Toy,
    Full,
    Gradcheck,
}

impl Preset {
    pub fn model(self) -> ModelConfig {
        match self {
            Preset::Toy => ModelConfig::toy(),
            Preset::Full => ModelConfig::full(),
            Preset::Gradcheck => ModelConfig::gradcheck(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningMode {
    #[default]
    Side,
    Frozen,
    Full,
    Peft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// When set, overrides `epochs`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    pub seed: u64,
    /// Leave wall-clock fields out of logs so identical runs give identical
    /// files.
    pub deterministic: bool,
    pub frames_per_sample: usize,
    pub sample_policy: SamplePolicy,
    /// Draw fresh frames every epoch instead of once per tracklet.
    pub resample_each_epoch: bool,
    pub eval_seed: u64,
    pub eval_policy: SamplePolicy,
    /// Evaluate every this many steps (0: only at the end).
    pub eval_every: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 16,
            epochs: 60,
            steps: None,
            seed: 0,
            deterministic: true,
            frames_per_sample: 6,
            sample_policy: SamplePolicy::UniformRandom,
            resample_each_epoch: true,
            eval_seed: 2024,
            eval_policy: SamplePolicy::UniformRandom,
            eval_every: 0,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.frames_per_sample == 0 {
            return Err(Error::Config("batch_size and frames_per_sample must be at least 1".into()));
        }
        if self.steps == Some(0) || (self.steps.is_none() && self.epochs == 0) {
            return Err(Error::Config("nothing to train: zero steps".into()));
        }
        Ok(())
    }

    pub fn train_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            k: self.frames_per_sample,
            policy: self.sample_policy,
            seed: self.seed,
        }
    }

    pub fn eval_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            k: self.frames_per_sample,
            policy: self.eval_policy,
            seed: self.eval_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub seed: u64,
    pub precision: Precision,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained_weights: Option<PathBuf>,
    pub unfreeze_backbone: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            pretrained_weights: None,
            unfreeze_backbone: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Schema file; defaults to `schema.json` beside the manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schema: Option<PathBuf>,
    pub train_split: Split,
    pub eval_split: Split,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            schema: None,
            train_split: Split::Train,
            eval_split: Split::Test,
        }
    }
}

impl DataConfig {
    pub fn schema_path(&self) -> Option<PathBuf> {
        self.schema
            .clone()
            .or_else(|| self.manifest.as_ref().map(|m| m.with_file_name("schema.json")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub tuning: TuningMode,
    pub model: ModelSection,
    pub vision: VisionEncoderConfig,
    pub text: TextEncoderConfig,
    pub side_net: SideNetConfig,
    pub fusion: FusionConfig,
    pub preprocess: PreprocessConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub peft: PeftVariant,
    pub data: DataConfig,
}

fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

fn unknown_keys(file: &Value, known: &Value, path: &str, out: &mut Vec<String>) {
    if let (Value::Table(f), Value::Table(k)) = (file, known) {
        for (key, v) in f {
            let p = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
            match k.get(key) {
                Some(kv) => unknown_keys(v, kv, &p, out),
                None => out.push(p),
            }
        }
    }
}

impl RunConfig {
    pub fn preset(preset: Preset) -> Self {
        let m = preset.model();
        Self {
            preset,
            tuning: TuningMode::Side,
            model: ModelSection {
                seed: m.seed,
                precision: m.precision,
                pretrained_weights: None,
                unfreeze_backbone: false,
            },
            vision: m.vision,
            text: m.text,
            side_net: m.side_net,
            fusion: m.fusion,
            preprocess: m.preprocess,
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            peft: PeftVariant::default(),
            data: DataConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let preset = match file.get("preset") {
            Some(p) => p
                .clone()
                .try_into::<Preset>()
                .map_err(|e| Error::Config(format!("preset: {e}")))?,
            None => Preset::Toy,
        };
        let mut merged = Value::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, &file);
        let cfg: RunConfig = merged.try_into().map_err(|e| Error::Config(e.to_string()))?;
        let known = Value::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?;
        let mut unknown = Vec::new();
        unknown_keys(&file, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown configuration keys: {}", unknown.join(", "))));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        resolve(&mut cfg.data.manifest);
        resolve(&mut cfg.data.schema);
        resolve(&mut cfg.model.pretrained_weights);
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            vision: self.vision.clone(),
            text: self.text.clone(),
            side_net: self.side_net.clone(),
            fusion: self.fusion.clone(),
            preprocess: self.preprocess.clone(),
            seed: self.model.seed,
            precision: self.model.precision,
            pretrained_weights: self.model.pretrained_weights.clone(),
            unfreeze_backbone: self.model.unfreeze_backbone,
        }
    }

    pub fn tuning(&self) -> Tuning {
        match self.tuning {
            TuningMode::Side => Tuning::Side,
            TuningMode::Frozen => Tuning::Frozen,
            TuningMode::Full => Tuning::Full,
            TuningMode::Peft => Tuning::Peft(self.peft.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        self.train.validate()?;
        self.peft.validate()?;
        if self.train.frames_per_sample > self.side_net.max_frames && self.tuning == TuningMode::Side {
            return Err(Error::Config(format!(
                "frames_per_sample {} exceeds side_net.max_frames {}",
                self.train.frames_per_sample, self.side_net.max_frames
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_override_the_preset() {
        let cfg = RunConfig::from_toml_str(
            "preset = \"toy\"\n[train]\nlr = 0.01\nsteps = 5\n[side_net]\nwidth = 16\n[side_net.aggregation]\ntemporal = \"lstm\"\n",
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.steps, Some(5));
        assert_eq!(cfg.side_net.width, 16);
        assert_eq!(cfg.side_net.depth, 6);
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.side_net.aggregation.temporal, crate::side::AggMethod::Lstm);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml_str("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("train.learning_rate"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::preset(Preset::Full);
        let again = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(again, cfg);
        assert!(cfg.validate().is_ok());
    }
}
