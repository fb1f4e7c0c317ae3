use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::VideoTensor;
use crate::error::{Error, Result};
use crate::nn::layers::{Block, BlockHooks, LayerNorm};
use crate::nn::params::{Init, ParamStore};
use crate::peft::PeftModule;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VisionEncoderConfig {
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
    /// Layers whose output tokens feed the side networks (0-based; "layer i"
    /// is the token array produced by block i).
    pub tap_layers: Vec<usize>,
    pub image_height: usize,
    pub image_width: usize,
    pub output_dim: usize,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        Self {
            width: 768,
            depth: 12,
            heads: 12,
            patch: 16,
            tap_layers: vec![0, 3, 6, 9, 11],
            image_height: 224,
            image_width: 224,
            output_dim: 512,
        }
    }
}

pub const CHANNELS: usize = 3;

impl VisionEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "vision width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.patch == 0 || !self.image_height.is_multiple_of(self.patch) || !self.image_width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image {}x{} not divisible by patch {}",
                self.image_height, self.image_width, self.patch
            )));
        }
        if self.tap_layers.is_empty() {
            return Err(Error::Config("tap_layers is empty".into()));
        }
        if self.tap_layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("tap_layers {:?} not strictly increasing", self.tap_layers)));
        }
        if self.tap_layers.iter().any(|&t| t >= self.depth) {
            return Err(Error::Config(format!(
                "tap_layers {:?} out of range for depth {}",
                self.tap_layers, self.depth
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch, self.image_width / self.patch)
    }

    /// Tokens per frame including the classification token.
    pub fn num_tokens(&self) -> usize {
        let (gh, gw) = self.grid();
        1 + gh * gw
    }
}

/// Per-tap token features of a single video: tap layer → `(T, N_tok, width)`.
#[derive(Clone, Debug)]
pub struct LayerFeatureSet {
    pub features: BTreeMap<usize, Tensor>,
}

pub struct VisionOutput {
    /// One `(F, N_tok, width)` tensor per tap layer, in tap order.
    pub taps: Vec<Tensor>,
    /// `ln_post` of the final classification token, `(F, width)`.
    pub pooled: Tensor,
    /// Per-layer attention probabilities `(F, heads, N, N)` when recorded.
    pub attentions: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub cfg: VisionEncoderConfig,
    patch_embed: Tensor,
    class_embedding: Tensor,
    positional_embedding: Tensor,
    ln_pre: LayerNorm,
    layers: Vec<Block>,
    ln_post: LayerNorm,
    #[allow(dead_code)]
    proj: Tensor,
}

impl VisionEncoder {
    pub fn new(ps: &mut ParamStore, cfg: &VisionEncoderConfig, trainable: bool) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width;
        let patch_dim = CHANNELS * cfg.patch * cfg.patch;
        // std w^-1/2, as for the reference tower's embeddings
        let emb = Init::Uniform((3.0 / w as f64).sqrt());
        let p = "backbone.vision";
        Ok(Self {
            patch_embed: ps.param(
                &format!("{p}.patch_embed.weight"),
                &[w, patch_dim],
                Init::Uniform(1.0 / (patch_dim as f64).sqrt()),
                trainable,
            )?,
            class_embedding: ps.param(&format!("{p}.class_embedding"), &[w], emb, trainable)?,
            positional_embedding: ps.param(
                &format!("{p}.positional_embedding"),
                &[cfg.num_tokens(), w],
                emb,
                trainable,
            )?,
            ln_pre: LayerNorm::new(ps, &format!("{p}.ln_pre"), w, trainable)?,
            layers: (0..cfg.depth)
                .map(|i| Block::new(ps, &format!("{p}.layers.{i}"), w, cfg.heads, trainable))
                .collect::<Result<_>>()?,
            ln_post: LayerNorm::new(ps, &format!("{p}.ln_post"), w, trainable)?,
            proj: ps.param(
                &format!("{p}.proj"),
                &[w, cfg.output_dim],
                Init::Uniform(1.0 / (w as f64).sqrt()),
                trainable,
            )?,
            cfg: cfg.clone(),
        })
    }

    /// Patch tokens of `frames: (F, H, W, C)` as `(F, gh·gw, width)`; patch
    /// vectors are flattened in (channel, row, column) order.
    fn patchify(&self, frames: &Tensor) -> Result<Tensor> {
        let (f, h, w, c) = frames.dims4()?;
        if h != self.cfg.image_height || w != self.cfg.image_width || c != CHANNELS {
            return Err(Error::Shape(format!(
                "frames are {h}x{w}x{c}, vision tower expects {}x{}x{CHANNELS}",
                self.cfg.image_height, self.cfg.image_width
            )));
        }
        let p = self.cfg.patch;
        let (gh, gw) = self.cfg.grid();
        let x = frames
            .reshape(vec![f, gh, p, gw, p, c])?
            .permute(vec![0, 1, 3, 5, 2, 4])?
            .contiguous()?
            .reshape((f * gh * gw, c * p * p))?;
        let tokens = x.matmul(&self.patch_embed.t()?)?;
        Ok(tokens.reshape((f, gh * gw, self.cfg.width))?)
    }

    /// Run the tower on `frames: (F, H, W, C)`. Frames never interact.
    pub fn forward(&self, frames: &Tensor, peft: Option<&PeftModule>, record_attention: bool) -> Result<VisionOutput> {
        let frames = frames.to_dtype(self.patch_embed.dtype())?;
        let patches = self.patchify(&frames)?;
        let f = patches.dim(0)?;
        let cls = self.class_embedding.reshape((1, 1, self.cfg.width))?.broadcast_as((f, 1, self.cfg.width))?;
        let x = Tensor::cat(&[&cls, &patches], 1)?.broadcast_add(&self.positional_embedding)?;
        let mut x = self.ln_pre.forward(&x)?;

        let mut taps = Vec::with_capacity(self.cfg.tap_layers.len());
        let mut attentions = Vec::new();
        let mut next_tap = self.cfg.tap_layers.iter().peekable();
        for (i, layer) in self.layers.iter().enumerate() {
            let hooks = BlockHooks {
                lora: peft.and_then(|p| p.lora(i)),
                adapter: peft.and_then(|p| p.adapter(i)),
                mask: None,
                record_attention,
            };
            let (out, probs) = match peft.and_then(|p| p.prompt(i)) {
                Some(prompt) => {
                    let (len, w) = prompt.dims2()?;
                    let prompt = prompt.unsqueeze(0)?.broadcast_as((f, len, w))?;
                    let n = x.dim(1)?;
                    let (out, probs) = layer.forward(&Tensor::cat(&[&prompt, &x], 1)?, &hooks)?;
                    (out.narrow(1, len, n)?, probs)
                }
                None => layer.forward(&x, &hooks)?,
            };
            x = out;
            if let Some(p) = probs {
                attentions.push(p);
            }
            if next_tap.peek() == Some(&&i) {
                taps.push(x.clone());
                next_tap.next();
            }
        }
        let pooled = self.ln_post.forward(&x.narrow(1, 0, 1)?.squeeze(1)?)?;
        Ok(VisionOutput {
            taps,
            pooled,
            attentions,
        })
    }

    pub fn encode_frames(&self, video: &VideoTensor) -> Result<LayerFeatureSet> {
        let frames = video.to_tensor(self.patch_embed.device())?;
        let out = self.forward(&frames, None, false)?;
        Ok(LayerFeatureSet {
            features: self.cfg.tap_layers.iter().copied().zip(out.taps).collect(),
        })
    }

    pub fn dtype(&self) -> DType {
        self.patch_embed.dtype()
    }
}
