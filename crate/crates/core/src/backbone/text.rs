use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::backbone::tokenizer::{tokenize, Tokenizer, TokenizerConfig};
use crate::error::{Error, Result};
use crate::nn::layers::{Block, BlockHooks, LayerNorm};
use crate::nn::params::{Init, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextEncoderConfig {
    pub vocab: usize,
    /// Token budget per sentence, including start/end markers.
    pub context: usize,
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    pub output_dim: usize,
    pub tokenizer: TokenizerConfig,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        Self {
            vocab: 49_408,
            context: 77,
            width: 512,
            heads: 8,
            depth: 12,
            output_dim: 512,
            tokenizer: TokenizerConfig::Hash,
        }
    }
}

impl TextEncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "text width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.context < 3 {
            return Err(Error::Config("text context must hold at least 3 tokens".into()));
        }
        Ok(())
    }
}

/// One pooled embedding per attribute sentence, `(M, output_dim)`.
#[derive(Clone, Debug)]
pub struct TextFeatureSet {
    pub embeddings: Tensor,
}

pub struct TextEncoder {
    pub cfg: TextEncoderConfig,
    tokenizer: Box<dyn Tokenizer>,
    token_embedding: Tensor,
    positional_embedding: Tensor,
    layers: Vec<Block>,
    ln_final: LayerNorm,
    proj: Tensor,
    causal_mask: Tensor,
}

impl TextEncoder {
    pub fn new(ps: &mut ParamStore, cfg: &TextEncoderConfig, trainable: bool) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width;
        let p = "backbone.text";
        let mask: Vec<f64> = (0..cfg.context)
            .flat_map(|i| (0..cfg.context).map(move |j| if j > i { f64::NEG_INFINITY } else { 0.0 }))
            .collect();
        Ok(Self {
            tokenizer: cfg.tokenizer.build(cfg.vocab)?,
            token_embedding: ps.param(
                &format!("{p}.token_embedding"),
                &[cfg.vocab, w],
                Init::Uniform(0.02 * 3f64.sqrt()),
                trainable,
            )?,
            positional_embedding: ps.param(
                &format!("{p}.positional_embedding"),
                &[cfg.context, w],
                Init::Uniform(0.01 * 3f64.sqrt()),
                trainable,
            )?,
            layers: (0..cfg.depth)
                .map(|i| Block::new(ps, &format!("{p}.layers.{i}"), w, cfg.heads, trainable))
                .collect::<Result<_>>()?,
            ln_final: LayerNorm::new(ps, &format!("{p}.ln_final"), w, trainable)?,
            proj: ps.param(
                &format!("{p}.proj"),
                &[w, cfg.output_dim],
                Init::Uniform(1.0 / (w as f64).sqrt()),
                trainable,
            )?,
            causal_mask: Tensor::from_vec(mask, (cfg.context, cfg.context), &Device::Cpu)?.to_dtype(ps.dtype())?,
            cfg: cfg.clone(),
        })
    }

    /// Embedding of one sentence: the final-layer token at the end marker,
    /// normalized and projected. Returns `(output_dim,)`.
    fn encode_one(&self, sentence: &str) -> Result<Tensor> {
        let tt = tokenize(self.tokenizer.as_ref(), sentence, self.cfg.context);
        let ids = Tensor::from_vec(tt.ids, self.cfg.context, self.token_embedding.device())?;
        let x = self
            .token_embedding
            .index_select(&ids, 0)?
            .broadcast_add(&self.positional_embedding)?
            .unsqueeze(0)?;
        let hooks = BlockHooks {
            mask: Some(&self.causal_mask),
            ..Default::default()
        };
        let mut x = x;
        for layer in &self.layers {
            x = layer.forward(&x, &hooks)?.0;
        }
        let eot = x.narrow(1, tt.eot_index, 1)?.reshape((1, self.cfg.width))?;
        Ok(self.ln_final.forward(&eot)?.matmul(&self.proj)?.squeeze(0)?)
    }

    /// Sentences are encoded one at a time, so a row never depends on the
    /// rest of the batch.
    pub fn encode_text(&self, sentences: &[String]) -> Result<TextFeatureSet> {
        if sentences.is_empty() {
            return Err(Error::Shape("no sentences to encode".into()));
        }
        let rows = sentences
            .iter()
            .map(|s| self.encode_one(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(TextFeatureSet {
            embeddings: Tensor::stack(&rows, 0)?,
        })
    }
}
