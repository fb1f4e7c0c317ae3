//! Reduction of a branch's set of token arrays `(B, S, N, w)` to `(B, w)`.
//! Tokens are always averaged; the set axis (frames or taps) is reduced by
//! the configured method.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::layers::{quick_gelu, sigmoid, Linear};
use crate::nn::params::{Init, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggMethod {
    /// Mean over the set.
    Gap,
    /// Two-layer MLP applied to every element, then the mean.
    Mlp,
    /// Gated recurrent unit scanned over the set; final state.
    Gru,
    /// LSTM scanned over the set; final hidden state.
    Lstm,
}

impl AggMethod {
    pub fn param_count(self, w: usize) -> usize {
        match self {
            AggMethod::Gap => 0,
            AggMethod::Mlp => 2 * (w * w + w),
            AggMethod::Gru => 6 * w * w + 6 * w,
            AggMethod::Lstm => 8 * w * w + 8 * w,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AggMethod::Gap => "GAP",
            AggMethod::Mlp => "MLP",
            AggMethod::Gru => "GRU",
            AggMethod::Lstm => "LSTM",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub spatial: AggMethod,
    pub temporal: AggMethod,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            spatial: AggMethod::Gap,
            temporal: AggMethod::Gap,
        }
    }
}

struct Recurrent {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    gates: usize,
}

impl Recurrent {
    fn new(ps: &mut ParamStore, name: &str, w: usize, gates: usize) -> Result<Self> {
        let init = Init::Uniform(1.0 / (w as f64).sqrt());
        Ok(Self {
            w_ih: ps.param(&format!("{name}.w_ih"), &[gates * w, w], init, true)?,
            w_hh: ps.param(&format!("{name}.w_hh"), &[gates * w, w], init, true)?,
            b_ih: ps.param(&format!("{name}.b_ih"), &[gates * w], init, true)?,
            b_hh: ps.param(&format!("{name}.b_hh"), &[gates * w], init, true)?,
            gates,
        })
    }

    fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&w.t()?)?.broadcast_add(b)?)
    }

    /// `set: (B, S, w)`.
    fn scan(&self, set: &Tensor) -> Result<Tensor> {
        let (b, s, w) = set.dims3()?;
        let mut h = Tensor::zeros((b, w), set.dtype(), set.device())?;
        let mut c = h.clone();
        for k in 0..s {
            let x = set.narrow(1, k, 1)?.squeeze(1)?;
            let gi = Self::affine(&x, &self.w_ih, &self.b_ih)?;
            let gh = Self::affine(&h, &self.w_hh, &self.b_hh)?;
            let chunk = |t: &Tensor, i: usize| t.narrow(1, i * w, w);
            if self.gates == 3 {
                let r = sigmoid(&(chunk(&gi, 0)? + chunk(&gh, 0)?)?)?;
                let z = sigmoid(&(chunk(&gi, 1)? + chunk(&gh, 1)?)?)?;
                let n = (chunk(&gi, 2)? + (r * chunk(&gh, 2)?)?)?.tanh()?;
                // h' = (1 - z)·n + z·h = n + z·(h - n)
                h = (&n + (z * (h - &n)?)?)?;
            } else {
                let g = (gi + gh)?;
                let i = sigmoid(&chunk(&g, 0)?)?;
                let f = sigmoid(&chunk(&g, 1)?)?;
                let cand = chunk(&g, 2)?.tanh()?;
                let o = sigmoid(&chunk(&g, 3)?)?;
                c = ((f * &c)? + (i * cand)?)?;
                h = (o * c.tanh()?)?;
            }
        }
        Ok(h)
    }
}

enum Inner {
    Gap,
    Mlp(Linear, Linear),
    Recurrent(Recurrent),
}

pub struct Aggregator {
    pub method: AggMethod,
    inner: Inner,
}

impl Aggregator {
    pub fn new(ps: &mut ParamStore, name: &str, method: AggMethod, w: usize) -> Result<Self> {
        let inner = match method {
            AggMethod::Gap => Inner::Gap,
            AggMethod::Mlp => Inner::Mlp(
                Linear::new(ps, &format!("{name}.mlp.fc1"), w, w, true, true)?,
                Linear::new(ps, &format!("{name}.mlp.fc2"), w, w, true, true)?,
            ),
            AggMethod::Gru => Inner::Recurrent(Recurrent::new(ps, &format!("{name}.gru"), w, 3)?),
            AggMethod::Lstm => Inner::Recurrent(Recurrent::new(ps, &format!("{name}.lstm"), w, 4)?),
        };
        Ok(Self { method, inner })
    }

    /// `x: (B, S, N, w)` → `(B, w)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let set = x.mean(D::Minus2)?;
        match &self.inner {
            Inner::Gap => Ok(set.mean(1)?),
            Inner::Mlp(fc1, fc2) => Ok(fc2.forward(&quick_gelu(&fc1.forward(&set)?)?)?.mean(1)?),
            Inner::Recurrent(r) => r.scan(&set),
        }
    }
}
