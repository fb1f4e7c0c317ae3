//! Attention rollout through the vision tower.
//!
//! For each layer the head-averaged attention matrix gets the identity added
//! (for the residual path) and its rows renormalized; the per-layer matrices
//! are multiplied from the first layer up. The classification-token row of
//! the product, restricted to patch tokens, is the saliency map.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame joint attention `(F, N, N)` from per-layer `(F, heads, N, N)`
/// probabilities.
pub fn rollout_matrices(attentions: &[Tensor]) -> Result<Tensor> {
    let first = attentions
        .first()
        .ok_or_else(|| Error::Shape("rollout needs at least one attention map".into()))?;
    let (f, _, n, _) = first.dims4()?;
    let eye = Tensor::eye(n, DType::F64, &Device::Cpu)?.unsqueeze(0)?.broadcast_as((f, n, n))?;
    let mut joint = eye.clone();
    for a in attentions {
        let a = (a.to_dtype(DType::F64)?.mean(1)? + &eye)?;
        let a = a.broadcast_div(&a.sum_keepdim(2)?)?;
        joint = a.matmul(&joint)?;
    }
    Ok(joint)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Row-major saliency in `[0, 1]`; a constant map is all zeros.
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }
}

fn min_max(v: &[f64]) -> Vec<f32> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= f64::EPSILON * hi.abs().max(1.0) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| ((x - lo) / span) as f32).collect()
}

/// One `grid.0 x grid.1` heatmap per frame.
pub fn attention_rollout(attentions: &[Tensor], grid: (usize, usize)) -> Result<Vec<Heatmap>> {
    let joint = rollout_matrices(attentions)?;
    let (f, n, _) = joint.dims3()?;
    if n != 1 + grid.0 * grid.1 {
        return Err(Error::Shape(format!(
            "{n} tokens do not match a {}x{} patch grid",
            grid.0, grid.1
        )));
    }
    let cls: Vec<Vec<f64>> = joint.narrow(1, 0, 1)?.squeeze(1)?.narrow(1, 1, n - 1)?.to_vec2()?;
    Ok((0..f)
        .map(|k| Heatmap {
            rows: grid.0,
            cols: grid.1,
            values: min_max(&cls[k]),
        })
        .collect())
}
