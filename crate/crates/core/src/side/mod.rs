//! Trainable side networks laddered off the frozen vision tower's tap
//! features.
//!
//! The spatial branch runs one small transformer per frame and adds
//! `LN(F^i)·ω_s` (one adapter per tap) into its token state before the side
//! layer paired with tap `i`. The temporal branch scans the frames of each
//! tap: starting from a zero state, frame `k` is injected through
//! `LN(F_k^i)·ω_t` and then passed through temporal layer `k`.
//!
//! Parameter count (backbone width `W`, side width `w`, `n` taps,
//! depth `d`, `max_frames` steps `f`, block size `12w² + 13w`):
//!
//! ```text
//! spatial   d·(12w² + 13w) + n·(2W + W·w)
//! temporal  f·(12w² + 13w) + n·(2W + W·w)        shared temporal layers
//!           n·f·(12w² + 13w) + n·(2W + W·w)      one stack per tap
//! + aggregation: GAP 0, MLP 2(w² + w), GRU 6w² + 6w, LSTM 8w² + 8w (per branch)
//! ```

pub mod aggregate;
pub mod spatial;
pub mod temporal;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Block, LayerNorm, Linear};
use crate::nn::params::ParamStore;

pub use aggregate::{AggMethod, AggregationConfig, Aggregator};
pub use spatial::SpatialSideNet;
pub use temporal::TemporalSideNet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SideNetConfig {
    pub width: usize,
    pub heads: usize,
    pub depth: usize,
    /// Must equal the backbone patch; side networks consume backbone tokens.
    pub patch: usize,
    /// Spatial side layer before which tap `i` is injected.
    pub fusion_points: Vec<usize>,
    /// Number of temporal layers, i.e. the most frames a clip may have.
    pub max_frames: usize,
    /// One temporal stack shared by all taps, or one stack per tap.
    pub share_temporal_layers: bool,
    pub aggregation: AggregationConfig,
    /// Branch switches, for ablations.
    pub spatial: bool,
    pub temporal: bool,
}

impl Default for SideNetConfig {
    fn default() -> Self {
        Self {
            width: 240,
            heads: 6,
            depth: 8,
            patch: 16,
            fusion_points: vec![0, 2, 4, 6, 7],
            max_frames: 8,
            share_temporal_layers: true,
            aggregation: AggregationConfig::default(),
            spatial: true,
            temporal: true,
        }
    }
}

impl SideNetConfig {
    pub fn validate(&self, num_taps: usize) -> Result<()> {
        if self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "side width {} not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.fusion_points.len() != num_taps {
            return Err(Error::Config(format!(
                "{} fusion points for {num_taps} tap layers",
                self.fusion_points.len()
            )));
        }
        if self.fusion_points.windows(2).any(|w| w[0] >= w[1]) || self.fusion_points.iter().any(|&j| j >= self.depth) {
            return Err(Error::Config(format!(
                "fusion_points {:?} must be strictly increasing and below depth {}",
                self.fusion_points, self.depth
            )));
        }
        if !self.spatial && !self.temporal {
            return Err(Error::Config("at least one side branch must be enabled".into()));
        }
        if self.max_frames == 0 {
            return Err(Error::Config("max_frames must be at least 1".into()));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count for a backbone of width
    /// `backbone_width` with `num_taps` taps.
    pub fn param_count(&self, backbone_width: usize, num_taps: usize) -> usize {
        let w = self.width;
        let block = Block::param_count(w);
        let adapters = num_taps * (2 * backbone_width + backbone_width * w);
        let temporal_stacks = if self.share_temporal_layers { 1 } else { num_taps };
        let spatial = self.depth * block + adapters + self.aggregation.spatial.param_count(w);
        let temporal = temporal_stacks * self.max_frames * block + adapters + self.aggregation.temporal.param_count(w);
        usize::from(self.spatial) * spatial + usize::from(self.temporal) * temporal
    }
}

/// `LN(F)·ω`: normalization over the backbone width followed by a bias-free
/// per-token projection to the side width.
#[derive(Clone, Debug)]
pub struct TapAdapter {
    pub norm: LayerNorm,
    pub proj: Linear,
}

impl TapAdapter {
    pub fn new(ps: &mut ParamStore, name: &str, backbone_width: usize, width: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), backbone_width, true)?,
            proj: Linear::new(ps, &format!("{name}.proj"), backbone_width, width, false, true)?,
        })
    }

    pub fn forward(&self, f: &Tensor) -> Result<Tensor> {
        self.proj.forward(&self.norm.forward(f)?)
    }
}

/// Branch outputs before aggregation; `None` for a disabled branch.
#[derive(Clone, Debug)]
pub struct SideOutput {
    /// `(B, frames, N_tok, w)`.
    pub spatial: Option<Tensor>,
    /// `(B, taps, N_tok, w)`.
    pub temporal: Option<Tensor>,
}

pub struct SideNetwork {
    pub cfg: SideNetConfig,
    pub spatial: Option<(SpatialSideNet, Aggregator)>,
    pub temporal: Option<(TemporalSideNet, Aggregator)>,
}

impl SideNetwork {
    pub fn new(ps: &mut ParamStore, cfg: &SideNetConfig, backbone_width: usize, num_taps: usize) -> Result<Self> {
        cfg.validate(num_taps)?;
        let spatial = if cfg.spatial {
            Some((
                SpatialSideNet::new(ps, cfg, backbone_width, num_taps)?,
                Aggregator::new(ps, "side.spatial_agg", cfg.aggregation.spatial, cfg.width)?,
            ))
        } else {
            None
        };
        let temporal = if cfg.temporal {
            Some((
                TemporalSideNet::new(ps, cfg, backbone_width, num_taps)?,
                Aggregator::new(ps, "side.temporal_agg", cfg.aggregation.temporal, cfg.width)?,
            ))
        } else {
            None
        };
        Ok(Self {
            spatial,
            temporal,
            cfg: cfg.clone(),
        })
    }

    /// `taps[i]`: `(B·frames, N_tok, W)` features of tap `i`, frames of one
    /// clip contiguous.
    pub fn forward(&self, taps: &[Tensor], batch: usize) -> Result<SideOutput> {
        Ok(SideOutput {
            spatial: self.spatial.as_ref().map(|(s, _)| s.forward(taps, batch)).transpose()?,
            temporal: self.temporal.as_ref().map(|(t, _)| t.forward(taps, batch)).transpose()?,
        })
    }

    /// Reduce each branch to `(B, w)` and add them.
    pub fn aggregate(&self, out: &SideOutput) -> Result<Tensor> {
        let mut parts = Vec::with_capacity(2);
        if let (Some((_, agg)), Some(x)) = (&self.spatial, &out.spatial) {
            parts.push(agg.forward(x)?);
        }
        if let (Some((_, agg)), Some(x)) = (&self.temporal, &out.temporal) {
            parts.push(agg.forward(x)?);
        }
        let mut it = parts.into_iter();
        let first = it
            .next()
            .ok_or_else(|| Error::Shape("side output has no enabled branch".into()))?;
        it.try_fold(first, |acc, t| Ok((acc + t)?))
    }
}
