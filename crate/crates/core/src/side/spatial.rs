use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::{Block, BlockHooks};
use crate::nn::params::ParamStore;
use crate::side::{SideNetConfig, TapAdapter};

/// Per-frame side transformer with tap injections (frames never interact).
pub struct SpatialSideNet {
    pub adapters: Vec<TapAdapter>,
    pub layers: Vec<Block>,
    fusion_points: Vec<usize>,
    width: usize,
}

impl SpatialSideNet {
    pub fn new(ps: &mut ParamStore, cfg: &SideNetConfig, backbone_width: usize, num_taps: usize) -> Result<Self> {
        Ok(Self {
            adapters: (0..num_taps)
                .map(|i| TapAdapter::new(ps, &format!("side.spatial.adapters.{i}"), backbone_width, cfg.width))
                .collect::<Result<_>>()?,
            layers: (0..cfg.depth)
                .map(|j| Block::new(ps, &format!("side.spatial.layers.{j}"), cfg.width, cfg.heads, true))
                .collect::<Result<_>>()?,
            fusion_points: cfg.fusion_points.clone(),
            width: cfg.width,
        })
    }

    /// `Ŝ = S + LN(F^i)·ω_s` for tap `i`.
    pub fn inject(&self, tap: usize, state: &Tensor, features: &Tensor) -> Result<Tensor> {
        Ok((state + self.adapters[tap].forward(features)?)?)
    }

    /// `taps[i]`: `(B·F, N, W)`. Returns `(B, F, N, w)`.
    pub fn forward(&self, taps: &[Tensor], batch: usize) -> Result<Tensor> {
        if taps.len() != self.adapters.len() {
            return Err(Error::Shape(format!(
                "{} tap features for {} spatial adapters",
                taps.len(),
                self.adapters.len()
            )));
        }
        let (bf, n, _) = taps[0].dims3()?;
        let mut s = Tensor::zeros((bf, n, self.width), taps[0].dtype(), taps[0].device())?;
        let hooks = BlockHooks::default();
        let mut next = 0;
        for (j, layer) in self.layers.iter().enumerate() {
            while next < self.fusion_points.len() && self.fusion_points[next] == j {
                s = self.inject(next, &s, &taps[next])?;
                next += 1;
            }
            s = layer.forward(&s, &hooks)?.0;
        }
        Ok(s.reshape((batch, bf / batch, n, self.width))?)
    }
}
