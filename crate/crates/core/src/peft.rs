//! Parameter-efficient baselines attached to the frozen vision tower:
//! LoRA on every linear layer, bottleneck adapters after each sublayer, and
//! per-layer prompt tokens.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{quick_gelu, Linear};
use crate::nn::params::{Init, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeftKind {
    Lora,
    Adapter,
    PromptTokens,
}

impl PeftKind {
    pub fn label(self) -> &'static str {
        match self {
            PeftKind::Lora => "LoRA",
            PeftKind::Adapter => "Adapter-Tuning",
            PeftKind::PromptTokens => "Prompt-Tuning",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PeftVariant {
    pub kind: PeftKind,
    pub rank: usize,
    /// LoRA scale is `alpha / rank`; `None` means a scale of 1.
    pub lora_alpha: Option<f64>,
    pub bottleneck: usize,
    pub prompt_len: usize,
}

impl Default for PeftVariant {
    fn default() -> Self {
        Self {
            kind: PeftKind::Lora,
            rank: 4,
            lora_alpha: None,
            bottleneck: 64,
            prompt_len: 8,
        }
    }
}

impl PeftVariant {
    pub fn of(kind: PeftKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let size = match self.kind {
            PeftKind::Lora => self.rank,
            PeftKind::Adapter => self.bottleneck,
            PeftKind::PromptTokens => self.prompt_len,
        };
        if size == 0 {
            return Err(Error::Config(format!("{:?} size parameter must be positive", self.kind)));
        }
        Ok(())
    }

    /// Closed-form count of the parameters this variant adds to a tower of
    /// `depth` layers of width `width`.
    pub fn param_count(&self, width: usize, depth: usize) -> usize {
        match self.kind {
            // qkv (w→3w), out (w→w), fc (w→4w), proj (4w→w): r·(in+out) each.
            PeftKind::Lora => depth * 16 * self.rank * width,
            PeftKind::Adapter => depth * 2 * (2 * width * self.bottleneck + self.bottleneck + width),
            PeftKind::PromptTokens => depth * self.prompt_len * width,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoraSlot {
    Qkv,
    OutProj,
    Fc,
    Proj,
}

#[derive(Clone, Debug)]
pub struct LoraPair {
    /// `(rank, in)`, random.
    pub a: Tensor,
    /// `(out, rank)`, zero at attachment.
    pub b: Tensor,
    pub scale: f64,
}

impl LoraPair {
    fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rank: usize, scale: f64) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Ok(Self {
            a: ps.param(&format!("{name}.a"), &[rank, d_in], Init::Uniform(bound), true)?,
            b: ps.param(&format!("{name}.b"), &[d_out, rank], Init::Zeros, true)?,
            scale,
        })
    }

    fn delta(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().unwrap();
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let h = x.reshape((rows, d_in))?.matmul(&self.a.t()?)?.matmul(&self.b.t()?)?;
        let h = if self.scale == 1.0 { h } else { h.affine(self.scale, 0.0)? };
        let mut out = dims;
        *out.last_mut().unwrap() = self.b.dim(0)?;
        Ok(h.reshape(out)?)
    }
}

/// Low-rank parallel paths for the four linear layers of one block.
#[derive(Clone, Debug)]
pub struct LoraBlock {
    qkv: LoraPair,
    out_proj: LoraPair,
    fc: LoraPair,
    proj: LoraPair,
}

impl LoraBlock {
    pub fn delta(&self, slot: LoraSlot, x: &Tensor) -> Result<Tensor> {
        match slot {
            LoraSlot::Qkv => self.qkv.delta(x),
            LoraSlot::OutProj => self.out_proj.delta(x),
            LoraSlot::Fc => self.fc.delta(x),
            LoraSlot::Proj => self.proj.delta(x),
        }
    }
}

#[derive(Clone, Debug)]
struct Bottleneck {
    down: Linear,
    up: Linear,
}

impl Bottleneck {
    fn new(ps: &mut ParamStore, name: &str, width: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            down: Linear::new(ps, &format!("{name}.down"), width, hidden, true, true)?,
            up: Linear::with_init(ps, &format!("{name}.up"), hidden, width, true, true, Init::Zeros)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.up.forward(&quick_gelu(&self.down.forward(x)?)?)?;
        Ok((x + h)?)
    }
}

/// Residual bottleneck adapters placed after the attention and MLP sublayers.
#[derive(Clone, Debug)]
pub struct AdapterBlock {
    attn: Bottleneck,
    mlp: Bottleneck,
}

impl AdapterBlock {
    pub fn after_attention(&self, x: &Tensor) -> Result<Tensor> {
        self.attn.forward(x)
    }

    pub fn after_mlp(&self, x: &Tensor) -> Result<Tensor> {
        self.mlp.forward(x)
    }
}

#[derive(Clone, Debug)]
pub enum PeftModule {
    Lora(Vec<LoraBlock>),
    Adapter(Vec<AdapterBlock>),
    /// One `(prompt_len, width)` token block per layer.
    Prompt(Vec<Tensor>),
}

impl PeftModule {
    pub fn new(ps: &mut ParamStore, variant: &PeftVariant, width: usize, depth: usize) -> Result<Self> {
        variant.validate()?;
        Ok(match variant.kind {
            PeftKind::Lora => {
                let scale = variant.lora_alpha.map_or(1.0, |a| a / variant.rank as f64);
                let r = variant.rank;
                let blocks = (0..depth)
                    .map(|l| {
                        let p = format!("peft.lora.layers.{l}");
                        Ok(LoraBlock {
                            qkv: LoraPair::new(ps, &format!("{p}.qkv"), width, 3 * width, r, scale)?,
                            out_proj: LoraPair::new(ps, &format!("{p}.out_proj"), width, width, r, scale)?,
                            fc: LoraPair::new(ps, &format!("{p}.c_fc"), width, 4 * width, r, scale)?,
                            proj: LoraPair::new(ps, &format!("{p}.c_proj"), 4 * width, width, r, scale)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                PeftModule::Lora(blocks)
            }
            PeftKind::Adapter => {
                let blocks = (0..depth)
                    .map(|l| {
                        let p = format!("peft.adapter.layers.{l}");
                        Ok(AdapterBlock {
                            attn: Bottleneck::new(ps, &format!("{p}.attn"), width, variant.bottleneck)?,
                            mlp: Bottleneck::new(ps, &format!("{p}.mlp"), width, variant.bottleneck)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                PeftModule::Adapter(blocks)
            }
            PeftKind::PromptTokens => {
                let bound = 0.02 * 3f64.sqrt();
                let tokens = (0..depth)
                    .map(|l| {
                        ps.param(
                            &format!("peft.prompt.layers.{l}"),
                            &[variant.prompt_len, width],
                            Init::Uniform(bound),
                            true,
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                PeftModule::Prompt(tokens)
            }
        })
    }

    pub fn lora(&self, layer: usize) -> Option<&LoraBlock> {
        match self {
            PeftModule::Lora(b) => b.get(layer),
            _ => None,
        }
    }

    pub fn adapter(&self, layer: usize) -> Option<&AdapterBlock> {
        match self {
            PeftModule::Adapter(b) => b.get(layer),
            _ => None,
        }
    }

    pub fn prompt(&self, layer: usize) -> Option<&Tensor> {
        match self {
            PeftModule::Prompt(p) => p.get(layer),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn closed_form_counts_match_registry() {
        for kind in [PeftKind::Lora, PeftKind::Adapter, PeftKind::PromptTokens] {
            let v = PeftVariant::of(kind);
            let mut ps = ParamStore::shapes_only(DType::F32);
            PeftModule::new(&mut ps, &v, 48, 5).unwrap();
            assert_eq!(ps.report().trainable as usize, v.param_count(48, 5), "{kind:?}");
        }
    }

    #[test]
    fn prompt_count_is_depth_len_width() {
        let v = PeftVariant::of(PeftKind::PromptTokens);
        assert_eq!(v.param_count(32, 12), 12 * 8 * 32);
    }

    #[test]
    fn zero_sizes_rejected() {
        let v = PeftVariant {
            rank: 0,
            ..PeftVariant::default()
        };
        assert!(v.validate().is_err());
    }
}
