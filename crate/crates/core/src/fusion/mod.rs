//! Vision-text fusion transformer and the attribute prediction head.
//!
//! The visual vector and the `M` attribute sentence embeddings are projected
//! to the fusion width and concatenated as `[visual; text_1..text_M]`. After
//! the fusion layers, the visual token goes through `head_layers` dense
//! layers to `M` logits, then a per-attribute batch normalization and a
//! sigmoid.

pub mod rollout;

use std::sync::Mutex;

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{quick_gelu, sigmoid, Block, BlockHooks, Linear};
use crate::nn::params::{Init, ParamStore};

pub use rollout::{attention_rollout, rollout_matrices};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// `M` logits from the fused visual token.
    VisualToken,
    /// Logit `j` from fused attribute token `j`.
    PerAttribute,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub layers: usize,
    /// Fusion width; `None` uses the side width.
    pub width: Option<usize>,
    /// Attention heads; `None` uses the side network's.
    pub heads: Option<usize>,
    pub head_layers: usize,
    pub head: HeadKind,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            layers: 1,
            width: None,
            heads: None,
            head_layers: 1,
            head: HeadKind::VisualToken,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, width: usize, heads: usize) -> Result<()> {
        if self.layers == 0 || self.head_layers == 0 {
            return Err(Error::Config("fusion layers and head_layers must be at least 1".into()));
        }
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Config(format!("fusion width {width} not divisible by {heads} heads")));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config("bn_momentum must be in [0,1] and bn_eps positive".into()));
        }
        Ok(())
    }

    /// Closed-form count of the `fusion.` and `head.` parameters.
    pub fn param_count(&self, width: usize, visual_width: usize, text_width: usize, m: usize) -> usize {
        let proj = (visual_width + 1) * width + (text_width + 1) * width;
        let blocks = self.layers * Block::param_count(width);
        let hidden = (self.head_layers - 1) * (width * width + width);
        let out = match self.head {
            HeadKind::VisualToken => width * m + m,
            HeadKind::PerAttribute => width + 1,
        };
        proj + blocks + hidden + out + 2 * m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running statistics of the logit batch normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub calibrated: bool,
}

impl BatchNormStats {
    pub fn new(m: usize) -> Self {
        Self {
            running_mean: vec![0.0; m],
            running_var: vec![1.0; m],
            calibrated: false,
        }
    }
}

/// One-dimensional batch normalization over `(N, M)` logits.
pub struct BatchNorm {
    pub weight: Tensor,
    pub bias: Tensor,
    momentum: f64,
    eps: f64,
    stats: Mutex<BatchNormStats>,
}

impl BatchNorm {
    pub fn new(ps: &mut ParamStore, name: &str, m: usize, momentum: f64, eps: f64) -> Result<Self> {
        Ok(Self {
            weight: ps.param(&format!("{name}.weight"), &[m], Init::Ones, true)?,
            bias: ps.param(&format!("{name}.bias"), &[m], Init::Zeros, true)?,
            momentum,
            eps,
            stats: Mutex::new(BatchNormStats::new(m)),
        })
    }

    pub fn stats(&self) -> BatchNormStats {
        self.stats.lock().expect("bn stats").clone()
    }

    pub fn set_stats(&self, stats: BatchNormStats) {
        *self.stats.lock().expect("bn stats") = stats;
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, m) = x.dims2()?;
        let (centered, var) = match mode {
            Mode::Train => {
                let mean = x.mean_keepdim(0)?;
                let centered = x.broadcast_sub(&mean)?;
                let var = centered.sqr()?.mean_keepdim(0)?;
                let bm: Vec<f64> = mean.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
                let bv: Vec<f64> = var.flatten_all()?.to_dtype(DType::F64)?.to_vec1()?;
                let mut st = self.stats.lock().expect("bn stats");
                let mom = self.momentum;
                for j in 0..m {
                    st.running_mean[j] = (1.0 - mom) * st.running_mean[j] + mom * bm[j];
                    if n > 1 {
                        let unbiased = bv[j] * n as f64 / (n - 1) as f64;
                        st.running_var[j] = (1.0 - mom) * st.running_var[j] + mom * unbiased;
                    }
                }
                st.calibrated = true;
                (centered, var)
            }
            Mode::Eval => {
                let st = self.stats.lock().expect("bn stats");
                if !st.calibrated {
                    return Err(Error::Uncalibrated);
                }
                let mean = Tensor::from_slice(&st.running_mean, (1, m), x.device())?.to_dtype(x.dtype())?;
                let var = Tensor::from_slice(&st.running_var, (1, m), x.device())?.to_dtype(x.dtype())?;
                (x.broadcast_sub(&mean)?, var)
            }
        };
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

#[derive(Clone, Debug)]
pub struct Prediction {
    /// Dense-layer outputs before normalization, `(N, M)`.
    pub logits: Tensor,
    /// Batch-normalized logits, `(N, M)`.
    pub normalized: Tensor,
    /// `sigmoid(normalized)`, `(N, M)`.
    pub probabilities: Tensor,
    /// Fusion attention per layer `(N, heads, 1+M, 1+M)` when recorded.
    pub attentions: Vec<Tensor>,
}

pub struct FusionHead {
    pub cfg: FusionConfig,
    pub width: usize,
    pub vis_proj: Linear,
    pub text_proj: Linear,
    pub layers: Vec<Block>,
    pub hidden: Vec<Linear>,
    pub out: Linear,
    pub bn: BatchNorm,
    m: usize,
}

impl FusionHead {
    pub fn new(
        ps: &mut ParamStore,
        cfg: &FusionConfig,
        width: usize,
        heads: usize,
        visual_width: usize,
        text_width: usize,
        m: usize,
    ) -> Result<Self> {
        cfg.validate(width, heads)?;
        let out_dim = match cfg.head {
            HeadKind::VisualToken => m,
            HeadKind::PerAttribute => 1,
        };
        Ok(Self {
            vis_proj: Linear::new(ps, "fusion.vis_proj", visual_width, width, true, true)?,
            text_proj: Linear::new(ps, "fusion.text_proj", text_width, width, true, true)?,
            layers: (0..cfg.layers)
                .map(|l| Block::new(ps, &format!("fusion.layers.{l}"), width, heads, true))
                .collect::<Result<_>>()?,
            hidden: (0..cfg.head_layers - 1)
                .map(|i| Linear::new(ps, &format!("head.dense.{i}"), width, width, true, true))
                .collect::<Result<_>>()?,
            out: Linear::new(ps, &format!("head.dense.{}", cfg.head_layers - 1), width, out_dim, true, true)?,
            bn: BatchNorm::new(ps, "head.bn", m, cfg.bn_momentum, cfg.bn_eps)?,
            cfg: cfg.clone(),
            width,
            m,
        })
    }

    pub fn num_attributes(&self) -> usize {
        self.m
    }

    /// Fused tokens `(N, 1+M, width)`: row 0 is the visual token.
    pub fn fuse(&self, visual: &Tensor, text: &Tensor, record_attention: bool) -> Result<(Tensor, Vec<Tensor>)> {
        let (n, _) = visual.dims2()?;
        let (m, _) = text.dims2()?;
        if m != self.m {
            return Err(Error::Shape(format!("{m} text embeddings for {} attributes", self.m)));
        }
        let v = self.vis_proj.forward(visual)?.unsqueeze(1)?;
        let t = self
            .text_proj
            .forward(text)?
            .unsqueeze(0)?
            .broadcast_as((n, m, self.width))?;
        let mut x = Tensor::cat(&[&v, &t], 1)?;
        let hooks = BlockHooks {
            record_attention,
            ..Default::default()
        };
        let mut attn = Vec::new();
        for layer in &self.layers {
            let (y, p) = layer.forward(&x, &hooks)?;
            x = y;
            attn.extend(p);
        }
        Ok((x, attn))
    }

    /// `visual: (N, visual_width)`, `text: (M, text_width)`.
    pub fn forward(&self, visual: &Tensor, text: &Tensor, mode: Mode, record_attention: bool) -> Result<Prediction> {
        let (fused, attentions) = self.fuse(visual, text, record_attention)?;
        let mut h = match self.cfg.head {
            HeadKind::VisualToken => fused.narrow(1, 0, 1)?.squeeze(1)?,
            HeadKind::PerAttribute => fused.narrow(1, 1, self.m)?,
        };
        for layer in &self.hidden {
            h = quick_gelu(&layer.forward(&h)?)?;
        }
        let logits = self.out.forward(&h)?;
        let logits = match self.cfg.head {
            HeadKind::VisualToken => logits,
            HeadKind::PerAttribute => logits.squeeze(D::Minus1)?,
        };
        let normalized = self.bn.forward(&logits, mode)?;
        let probabilities = sigmoid(&normalized)?;
        Ok(Prediction {
            logits,
            normalized,
            probabilities,
            attentions,
        })
    }
}
