use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::nn::layers::{Block, BlockHooks};
use crate::nn::params::ParamStore;
use crate::side::{SideNetConfig, TapAdapter};

/// Frame-recurrent side transformer: per tap, `T ← L_k(T + LN(F_k)·ω_t)`
/// for `k = 0..frames`, from a zero state.
pub struct TemporalSideNet {
    pub adapters: Vec<TapAdapter>,
    /// One stack when shared, otherwise one per tap.
    pub stacks: Vec<Vec<Block>>,
    width: usize,
    max_frames: usize,
}

impl TemporalSideNet {
    pub fn new(ps: &mut ParamStore, cfg: &SideNetConfig, backbone_width: usize, num_taps: usize) -> Result<Self> {
        let stack = |ps: &mut ParamStore, prefix: String| {
            (0..cfg.max_frames)
                .map(|k| Block::new(ps, &format!("{prefix}.{k}"), cfg.width, cfg.heads, true))
                .collect::<Result<Vec<_>>>()
        };
        let stacks = if cfg.share_temporal_layers {
            vec![stack(ps, "side.temporal.layers".into())?]
        } else {
            (0..num_taps)
                .map(|i| stack(ps, format!("side.temporal.taps.{i}.layers")))
                .collect::<Result<_>>()?
        };
        Ok(Self {
            adapters: (0..num_taps)
                .map(|i| TapAdapter::new(ps, &format!("side.temporal.adapters.{i}"), backbone_width, cfg.width))
                .collect::<Result<_>>()?,
            stacks,
            width: cfg.width,
            max_frames: cfg.max_frames,
        })
    }

    /// `taps[i]`: `(B·F, N, W)`. Returns `(B, taps, N, w)`.
    pub fn forward(&self, taps: &[Tensor], batch: usize) -> Result<Tensor> {
        if taps.len() != self.adapters.len() {
            return Err(Error::Shape(format!(
                "{} tap features for {} temporal adapters",
                taps.len(),
                self.adapters.len()
            )));
        }
        let (bf, n, _) = taps[0].dims3()?;
        let frames = bf / batch;
        if frames > self.max_frames {
            return Err(Error::Config(format!(
                "clip has {frames} frames but the temporal side network has {} steps; raise side_net.max_frames",
                self.max_frames
            )));
        }
        // (B, F, N, w) per tap
        let injected = taps
            .iter()
            .zip(&self.adapters)
            .map(|(f, a)| a.forward(f)?.reshape((batch, frames, n, self.width)).map_err(Into::into))
            .collect::<Result<Vec<_>>>()?;
        let hooks = BlockHooks::default();
        let dtype = taps[0].dtype();
        let device = taps[0].device();
        if self.stacks.len() == 1 {
            // all taps advance together as one batch of size taps·B
            let x = Tensor::stack(&injected, 0)?;
            let nt = taps.len();
            let mut t = Tensor::zeros((nt * batch, n, self.width), dtype, device)?;
            for (k, layer) in self.stacks[0].iter().take(frames).enumerate() {
                let fk = x.narrow(2, k, 1)?.reshape((nt * batch, n, self.width))?;
                t = layer.forward(&(t + fk)?, &hooks)?.0;
            }
            Ok(t.reshape((nt, batch, n, self.width))?.transpose(0, 1)?.contiguous()?)
        } else {
            let outs = injected
                .iter()
                .zip(&self.stacks)
                .map(|(x, stack)| {
                    let mut t = Tensor::zeros((batch, n, self.width), dtype, device)?;
                    for (k, layer) in stack.iter().take(frames).enumerate() {
                        let fk = x.narrow(1, k, 1)?.squeeze(1)?;
                        t = layer.forward(&(t + fk)?, &hooks)?.0;
                    }
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Tensor::stack(&outs, 1)?)
        }
    }
}
