//! The assembled attribute recognizer.
//!
//! | tuning   | visual path                                  | trainable                 |
//! |----------|----------------------------------------------|---------------------------|
//! | `side`   | tap features → side networks → aggregation   | `side.`, `fusion.`, `head.` |
//! | `frozen` | final classification token, mean over frames | `fusion.`, `head.`        |
//! | `full`   | as `frozen`                                  | everything                |
//! | `peft`   | as `frozen`, tower augmented by the variant  | `peft.`, `fusion.`, `head.` |

use std::sync::Mutex;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::import::import_pretrained;
use crate::backbone::{TextEncoder, TextEncoderConfig, VisionEncoder, VisionEncoderConfig};
use crate::data::{PreprocessConfig, VideoTensor};
use crate::error::{Error, Result};
use crate::fusion::rollout::{attention_rollout, Heatmap};
use crate::fusion::{FusionConfig, FusionHead, Mode, Prediction};
use crate::nn::params::{ParamReport, ParamStore};
use crate::peft::{PeftModule, PeftVariant};
use crate::schema::{AttributeSchema, LabelVector};
use crate::side::{SideNetConfig, SideNetwork, SideOutput};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Tuning {
    Side,
    Frozen,
    Full,
    Peft(PeftVariant),
}

impl Tuning {
    pub fn label(&self) -> String {
        match self {
            Tuning::Side => "Side-Tuning".into(),
            Tuning::Frozen => "Frozen".into(),
            Tuning::Full => "Full fine-tuning".into(),
            Tuning::Peft(v) => v.kind.label().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vision: VisionEncoderConfig,
    pub text: TextEncoderConfig,
    pub side_net: SideNetConfig,
    pub fusion: FusionConfig,
    pub preprocess: PreprocessConfig,
    /// Seed of every initial weight, backbone included.
    pub seed: u64,
    pub precision: Precision,
    /// Safetensors archive with reference dual-encoder weights; replaces the
    /// seeded backbone.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrained_weights: Option<std::path::PathBuf>,
    /// Negative control for the freeze contract: registers the backbone as
    /// trainable while keeping side tuning.
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub unfreeze_backbone: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vision: VisionEncoderConfig::default(),
            text: TextEncoderConfig::default(),
            side_net: SideNetConfig::default(),
            fusion: FusionConfig::default(),
            preprocess: PreprocessConfig::default(),
            seed: 0,
            precision: Precision::F32,
            pretrained_weights: None,
            unfreeze_backbone: false,
        }
    }
}

impl ModelConfig {
    /// Full-scale configuration: ViT-B/16-sized vision tower, 12-layer text
    /// tower, 240-wide side networks.
    pub fn full() -> Self {
        Self::default()
    }

    /// Desk-scale configuration used by the tests and the synthetic task.
    pub fn toy() -> Self {
        Self {
            vision: VisionEncoderConfig {
                width: 32,
                depth: 4,
                heads: 2,
                patch: 8,
                tap_layers: vec![0, 1, 2, 3],
                image_height: 32,
                image_width: 32,
                output_dim: 32,
            },
            text: TextEncoderConfig {
                vocab: 1024,
                context: 32,
                width: 32,
                heads: 2,
                depth: 2,
                output_dim: 32,
                ..TextEncoderConfig::default()
            },
            side_net: SideNetConfig {
                width: 32,
                heads: 2,
                depth: 6,
                patch: 8,
                fusion_points: vec![0, 2, 4, 5],
                max_frames: 6,
                ..SideNetConfig::default()
            },
            fusion: FusionConfig::default(),
            preprocess: PreprocessConfig::toy(32, 32),
            seed: 0,
            precision: Precision::F32,
            pretrained_weights: None,
            unfreeze_backbone: false,
        }
    }

    /// Width-8 double-precision configuration for finite-difference checks.
    pub fn gradcheck() -> Self {
        Self {
            vision: VisionEncoderConfig {
                width: 8,
                depth: 2,
                heads: 2,
                patch: 8,
                tap_layers: vec![0, 1],
                image_height: 16,
                image_width: 16,
                output_dim: 8,
            },
            text: TextEncoderConfig {
                vocab: 64,
                context: 16,
                width: 8,
                heads: 2,
                depth: 1,
                output_dim: 8,
                ..TextEncoderConfig::default()
            },
            side_net: SideNetConfig {
                width: 8,
                heads: 2,
                depth: 3,
                patch: 8,
                fusion_points: vec![0, 2],
                max_frames: 3,
                ..SideNetConfig::default()
            },
            fusion: FusionConfig::default(),
            preprocess: PreprocessConfig::toy(16, 16),
            seed: 0,
            precision: Precision::F64,
            pretrained_weights: None,
            unfreeze_backbone: false,
        }
    }

    pub fn fusion_width(&self) -> usize {
        self.fusion.width.unwrap_or(self.side_net.width)
    }

    pub fn fusion_heads(&self) -> usize {
        self.fusion.heads.unwrap_or(self.side_net.heads)
    }

    pub fn validate(&self) -> Result<()> {
        self.vision.validate()?;
        self.text.validate()?;
        self.side_net.validate(self.vision.tap_layers.len())?;
        self.fusion.validate(self.fusion_width(), self.fusion_heads())?;
        if self.side_net.patch != self.vision.patch {
            return Err(Error::Config(format!(
                "side_net.patch {} must equal the backbone patch {}",
                self.side_net.patch, self.vision.patch
            )));
        }
        self.preprocess.validate(self.vision.patch)?;
        if self.preprocess.height != self.vision.image_height || self.preprocess.width != self.vision.image_width {
            return Err(Error::Config(format!(
                "preprocess resizes to {}x{} but the vision tower expects {}x{}",
                self.preprocess.height, self.preprocess.width, self.vision.image_height, self.vision.image_width
            )));
        }
        Ok(())
    }
}

pub struct ModelOutput {
    pub prediction: Prediction,
    /// Side branch outputs (side tuning only).
    pub side: Option<SideOutput>,
    /// Visual vector fed to the fusion head, `(B, visual_width)`.
    pub visual: Tensor,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub tuning: Tuning,
    pub schema: AttributeSchema,
    pub params: ParamStore,
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub side: Option<SideNetwork>,
    pub peft: Option<PeftModule>,
    pub fusion: FusionHead,
    text_cache: Mutex<Option<Tensor>>,
}

impl Model {
    pub fn new(cfg: &ModelConfig, schema: &AttributeSchema, tuning: Tuning) -> Result<Self> {
        let ps = ParamStore::new(cfg.seed, cfg.precision.dtype());
        Self::build(ps, cfg, schema, tuning)
    }

    /// Names and shapes only, for counting full-scale models. Cannot run.
    pub fn shapes_only(cfg: &ModelConfig, schema: &AttributeSchema, tuning: Tuning) -> Result<Self> {
        let ps = ParamStore::shapes_only(cfg.precision.dtype());
        Self::build(ps, cfg, schema, tuning)
    }

    fn build(mut ps: ParamStore, cfg: &ModelConfig, schema: &AttributeSchema, tuning: Tuning) -> Result<Self> {
        cfg.validate()?;
        if schema.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        let backbone_trainable = matches!(tuning, Tuning::Full) || cfg.unfreeze_backbone;
        let vision = VisionEncoder::new(&mut ps, &cfg.vision, backbone_trainable)?;
        let text = TextEncoder::new(&mut ps, &cfg.text, backbone_trainable)?;
        if let (Some(path), true) = (&cfg.pretrained_weights, ps.is_materialized()) {
            let n = import_pretrained(&ps, path, cfg.vision.depth, cfg.text.depth)?;
            log::info!("imported {n} backbone tensors from {}", path.display());
        }
        let peft = match &tuning {
            Tuning::Peft(v) => Some(PeftModule::new(&mut ps, v, cfg.vision.width, cfg.vision.depth)?),
            _ => None,
        };
        let side = match tuning {
            Tuning::Side => Some(SideNetwork::new(
                &mut ps,
                &cfg.side_net,
                cfg.vision.width,
                cfg.vision.tap_layers.len(),
            )?),
            _ => None,
        };
        let fusion = Self::build_fusion(&mut ps, cfg, side.is_some(), schema.len())?;
        Ok(Self {
            cfg: cfg.clone(),
            tuning,
            schema: schema.clone(),
            params: ps,
            vision,
            text,
            side,
            peft,
            fusion,
            text_cache: Mutex::new(None),
        })
    }

    fn build_fusion(ps: &mut ParamStore, cfg: &ModelConfig, side: bool, m: usize) -> Result<FusionHead> {
        let visual_width = if side { cfg.side_net.width } else { cfg.vision.width };
        FusionHead::new(
            ps,
            &cfg.fusion,
            cfg.fusion_width(),
            cfg.fusion_heads(),
            visual_width,
            cfg.text.output_dim,
            m,
        )
    }

    /// Attach a parameter-efficient variant to the frozen vision tower.
    /// Side networks are removed; a side-tuned model also gets a fresh
    /// fusion head sized for the pooled backbone feature.
    pub fn attach_peft(&mut self, variant: &PeftVariant) -> Result<()> {
        match self.tuning {
            Tuning::Peft(_) => return Err(Error::Config("a PEFT variant is already attached".into())),
            Tuning::Full => return Err(Error::Config("PEFT needs a frozen backbone".into())),
            Tuning::Side | Tuning::Frozen => {}
        }
        if self.cfg.unfreeze_backbone {
            return Err(Error::Config("PEFT needs a frozen backbone".into()));
        }
        self.peft = Some(PeftModule::new(
            &mut self.params,
            variant,
            self.cfg.vision.width,
            self.cfg.vision.depth,
        )?);
        if self.side.take().is_some() {
            self.params.remove_prefix("side.");
            self.params.remove_prefix("fusion.");
            self.params.remove_prefix("head.");
            self.fusion = Self::build_fusion(&mut self.params, &self.cfg, false, self.schema.len())?;
        }
        self.tuning = Tuning::Peft(variant.clone());
        Ok(())
    }

    pub fn count_parameters(&self) -> ParamReport {
        self.params.report()
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn backbone_trainable(&self) -> bool {
        matches!(self.tuning, Tuning::Full) || self.cfg.unfreeze_backbone
    }

    /// Attribute sentence embeddings `(M, text_width)`, computed once while
    /// the text tower is frozen.
    pub fn text_features(&self) -> Result<Tensor> {
        if self.backbone_trainable() {
            return Ok(self.text.encode_text(&self.schema.sentences())?.embeddings);
        }
        let mut cache = self.text_cache.lock().expect("text cache");
        if let Some(t) = cache.as_ref() {
            return Ok(t.clone());
        }
        let t = self.text.encode_text(&self.schema.sentences())?.embeddings.detach();
        *cache = Some(t.clone());
        Ok(t)
    }

    /// Drop cached text features after backbone weights change.
    pub fn invalidate_text_cache(&self) {
        *self.text_cache.lock().expect("text cache") = None;
    }

    /// Stack clips into `(B·F, H, W, C)`. All clips need the same frame count.
    pub fn stack_videos(&self, videos: &[VideoTensor]) -> Result<Tensor> {
        let first = videos.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        if let Some(v) = videos.iter().find(|v| v.frames != first.frames) {
            return Err(Error::Shape(format!(
                "clips in a batch need equal frame counts ({} vs {})",
                first.frames, v.frames
            )));
        }
        let t = videos
            .iter()
            .map(|v| v.to_tensor(self.params.device()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&t, 0)?.to_dtype(self.dtype())?)
    }

    pub fn forward(&self, videos: &[VideoTensor], mode: Mode) -> Result<ModelOutput> {
        let frames = self.stack_videos(videos)?;
        self.forward_frames(&frames, videos.len(), mode, false)
    }

    /// `frames: (B·F, H, W, C)` with the frames of each clip contiguous.
    pub fn forward_frames(&self, frames: &Tensor, batch: usize, mode: Mode, record_attention: bool) -> Result<ModelOutput> {
        let bf = frames.dim(0)?;
        if batch == 0 || bf % batch != 0 {
            return Err(Error::Shape(format!("{bf} frames do not split into {batch} clips")));
        }
        let out = self.vision.forward(frames, self.peft.as_ref(), false)?;
        let (visual, side) = match &self.side {
            Some(side) => {
                let taps: Vec<Tensor> = if self.backbone_trainable() {
                    out.taps
                } else {
                    out.taps.iter().map(|t| t.detach()).collect()
                };
                let so = side.forward(&taps, batch)?;
                (side.aggregate(&so)?, Some(so))
            }
            None => {
                let w = out.pooled.dim(1)?;
                (out.pooled.reshape((batch, bf / batch, w))?.mean(1)?, None)
            }
        };
        let text = self.text_features()?;
        let prediction = self.fusion.forward(&visual, &text, mode, record_attention)?;
        Ok(ModelOutput {
            prediction,
            side,
            visual,
        })
    }

    /// Per-frame saliency of the vision tower for one clip. The map does not
    /// depend on `attribute_index` (the rollout covers the vision tower only);
    /// the index is validated so callers address an existing attribute.
    pub fn attention_rollout(&self, video: &VideoTensor, attribute_index: usize) -> Result<Vec<Heatmap>> {
        if attribute_index >= self.schema.len() {
            return Err(Error::AttributeIndex {
                index: attribute_index,
                len: self.schema.len(),
            });
        }
        let frames = video.to_tensor(self.params.device())?.to_dtype(self.dtype())?;
        let out = self.vision.forward(&frames, self.peft.as_ref(), true)?;
        attention_rollout(&out.attentions, self.cfg.vision.grid())
    }
}

/// Labels as `(N, M)` 0/1 values plus a known-mask (`None` when every
/// label is known).
pub fn label_tensors(labels: &[LabelVector], dtype: DType) -> Result<(Tensor, Option<Tensor>)> {
    let n = labels.len();
    let m = labels.first().map_or(0, |l| l.len());
    let y: Vec<f32> = labels.iter().flat_map(|l| l.values.iter().map(|&v| f32::from(v))).collect();
    let dev = candle_core::Device::Cpu;
    let y = Tensor::from_vec(y, (n, m), &dev)?.to_dtype(dtype)?;
    if labels.iter().all(|l| l.known.iter().all(|&k| k)) {
        return Ok((y, None));
    }
    let mask: Vec<f32> = labels
        .iter()
        .flat_map(|l| l.known.iter().map(|&k| if k { 1.0 } else { 0.0 }))
        .collect();
    Ok((y, Some(Tensor::from_vec(mask, (n, m), &dev)?.to_dtype(dtype)?)))
}
