//! Imbalance-weighted binary cross-entropy.
//!
//! ```text
//! w_ij = exp(1 - r_j)  if y_ij = 1
//!        exp(r_j)      if y_ij = 0
//! L    = -(1/D) Σ_ij w_ij [y_ij log p_ij + (1 - y_ij) log(1 - p_ij)]
//! ```
//!
//! with `p` clamped to `[ε, 1-ε]`, unknown labels dropped from the sum, and
//! `D` the number of scored elements (`mean`) or `M` (`sum-over-batch`).

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reduction {
    /// Divide by the number of scored elements.
    Mean,
    /// Sum over the batch, divide by `M`.
    SumOverBatch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub reduction: Reduction,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            reduction: Reduction::Mean,
            eps: 1e-7,
        }
    }
}

/// `(positive weight, negative weight)` of an attribute with positive ratio `r`.
pub fn attribute_weights(r: f64) -> (f64, f64) {
    ((1.0 - r).exp(), r.exp())
}

/// Scalar loss over `probabilities` and `labels` of shape `(N, M)`.
/// `mask` (same shape, 1 = scored) drops unknown labels.
pub fn weighted_bce_loss(
    probabilities: &Tensor,
    labels: &Tensor,
    mask: Option<&Tensor>,
    ratios: &[f64],
    cfg: &LossConfig,
) -> Result<Tensor> {
    let (n, m) = probabilities.dims2()?;
    if labels.dims() != [n, m] {
        return Err(Error::Shape(format!(
            "probabilities are {n}x{m}, labels {:?}",
            labels.dims()
        )));
    }
    if ratios.len() != m {
        return Err(Error::Shape(format!("{} ratios for {m} attributes", ratios.len())));
    }
    if let Some(mk) = mask {
        if mk.dims() != [n, m] {
            return Err(Error::Shape(format!("mask is {:?}, expected {n}x{m}", mk.dims())));
        }
    }
    let ys: Vec<f64> = labels.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
    if let Some(bad) = ys.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::Label(format!("non-binary label {bad}")));
    }
    let dtype = probabilities.dtype();
    let device = probabilities.device();
    let (wp, wn): (Vec<f64>, Vec<f64>) = ratios.iter().map(|&r| attribute_weights(r)).unzip();
    let wp = Tensor::from_vec(wp, (1, m), device)?.to_dtype(dtype)?;
    let wn = Tensor::from_vec(wn, (1, m), device)?.to_dtype(dtype)?;
    let y = labels.to_dtype(dtype)?;
    let p = probabilities.clamp(cfg.eps, 1.0 - cfg.eps)?;
    let pos = y.broadcast_mul(&wp)?.mul(&p.log()?)?;
    let neg = y.affine(-1.0, 1.0)?.broadcast_mul(&wn)?.mul(&p.affine(-1.0, 1.0)?.log()?)?;
    let mut terms = (pos + neg)?;
    let scored = match mask {
        Some(mk) => {
            let mk = mk.to_dtype(dtype)?;
            terms = terms.mul(&mk)?;
            mk.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?
        }
        None => (n * m) as f64,
    };
    let divisor = match cfg.reduction {
        Reduction::Mean => scored.max(1.0),
        Reduction::SumOverBatch => m as f64,
    };
    Ok(terms.sum_all()?.affine(-1.0 / divisor, 0.0)?)
}
