//! Pre-norm transformer pieces shared by the vision tower, the text tower,
//! the side networks and the fusion layer. Everything is written with
//! differentiable primitives so gradients are available in f32 and f64.

use candle_core::{Tensor, D};

use crate::error::Result;
use crate::nn::params::{Init, ParamStore};
use crate::peft::{AdapterBlock, LoraBlock, LoraSlot};

pub const LN_EPS: f64 = 1e-5;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // 0.5 * (1 + tanh(x / 2)) stays finite for any input, unlike 1 / (1 + e^-x).
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}

pub fn quick_gelu(x: &Tensor) -> Result<Tensor> {
    Ok((x * sigmoid(&x.affine(1.702, 0.0)?)?)?)
}

/// Softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    let s = e.sum_keepdim(D::Minus1)?;
    Ok(e.broadcast_div(&s)?)
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    /// Weight `(out, in)` uniform in `±1/sqrt(in)`, bias zero.
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, trainable: bool) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Self::with_init(ps, name, d_in, d_out, bias, trainable, Init::Uniform(bound))
    }

    pub fn with_init(
        ps: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        trainable: bool,
        init: Init,
    ) -> Result<Self> {
        let weight = ps.param(&format!("{name}.weight"), &[d_out, d_in], init, trainable)?;
        let bias = if bias {
            Some(ps.param(&format!("{name}.bias"), &[d_out], Init::Zeros, trainable)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let d_in = *dims.last().expect("non-scalar input");
        let rows: usize = dims[..dims.len() - 1].iter().product();
        let y = x.reshape((rows, d_in))?.matmul(&self.weight.t()?)?;
        let y = match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        };
        let mut out = dims;
        *out.last_mut().unwrap() = self.weight.dim(0)?;
        Ok(y.reshape(out)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            weight: ps.param(&format!("{name}.weight"), &[dim], Init::Ones, trainable)?,
            bias: ps.param(&format!("{name}.bias"), &[dim], Init::Zeros, trainable)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + LN_EPS)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Optional extras threaded through a block's forward pass.
#[derive(Clone, Copy, Default)]
pub struct BlockHooks<'a> {
    pub lora: Option<&'a LoraBlock>,
    pub adapter: Option<&'a AdapterBlock>,
    /// Additive attention mask broadcastable to `(B, H, N, N)`.
    pub mask: Option<&'a Tensor>,
    pub record_attention: bool,
}

#[derive(Clone, Debug)]
pub struct Attention {
    pub qkv: Linear,
    pub out_proj: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            qkv: Linear::new(ps, &format!("{name}.qkv"), width, 3 * width, true, trainable)?,
            out_proj: Linear::new(ps, &format!("{name}.out_proj"), width, width, true, trainable)?,
            heads,
        })
    }

    /// Multi-head self-attention over `x: (B, N, D)`. Returns the output and,
    /// when requested, the attention probabilities `(B, H, N, N)`.
    pub fn forward(&self, x: &Tensor, hooks: &BlockHooks) -> Result<(Tensor, Option<Tensor>)> {
        let (b, n, d) = x.dims3()?;
        let dh = d / self.heads;
        let mut qkv = self.qkv.forward(x)?;
        if let Some(l) = hooks.lora {
            qkv = (qkv + l.delta(LoraSlot::Qkv, x)?)?;
        }
        let qkv = qkv.reshape((b, n, 3, self.heads, dh))?.permute((2, 0, 3, 1, 4))?;
        let q = qkv.get(0)?.contiguous()?;
        let k = qkv.get(1)?.contiguous()?;
        let v = qkv.get(2)?.contiguous()?;
        let mut scores = q.matmul(&k.t()?)?.affine(1.0 / (dh as f64).sqrt(), 0.0)?;
        if let Some(m) = hooks.mask {
            scores = scores.broadcast_add(m)?;
        }
        let probs = softmax_last(&scores)?;
        let o = probs.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, n, d))?;
        let mut out = self.out_proj.forward(&o)?;
        if let Some(l) = hooks.lora {
            out = (out + l.delta(LoraSlot::OutProj, &o)?)?;
        }
        Ok((out, hooks.record_attention.then_some(probs)))
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub c_fc: Linear,
    pub c_proj: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, hidden: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            c_fc: Linear::new(ps, &format!("{name}.c_fc"), width, hidden, true, trainable)?,
            c_proj: Linear::new(ps, &format!("{name}.c_proj"), hidden, width, true, trainable)?,
        })
    }

    pub fn forward(&self, x: &Tensor, lora: Option<&LoraBlock>) -> Result<Tensor> {
        let mut h = self.c_fc.forward(x)?;
        if let Some(l) = lora {
            h = (h + l.delta(LoraSlot::Fc, x)?)?;
        }
        let h = quick_gelu(&h)?;
        let mut out = self.c_proj.forward(&h)?;
        if let Some(l) = lora {
            out = (out + l.delta(LoraSlot::Proj, &h)?)?;
        }
        Ok(out)
    }
}

/// Pre-norm residual block: `x + attn(ln_1(x))`, then `x + mlp(ln_2(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln_1: LayerNorm,
    pub attn: Attention,
    pub ln_2: LayerNorm,
    pub mlp: Mlp,
}

impl Block {
    pub fn new(ps: &mut ParamStore, name: &str, width: usize, heads: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            ln_1: LayerNorm::new(ps, &format!("{name}.ln_1"), width, trainable)?,
            attn: Attention::new(ps, &format!("{name}.attn"), width, heads, trainable)?,
            ln_2: LayerNorm::new(ps, &format!("{name}.ln_2"), width, trainable)?,
            mlp: Mlp::new(ps, &format!("{name}.mlp"), width, 4 * width, trainable)?,
        })
    }

    /// Parameter count of one block: `12 w² + 13 w`.
    pub fn param_count(width: usize) -> usize {
        12 * width * width + 13 * width
    }

    pub fn forward(&self, x: &Tensor, hooks: &BlockHooks) -> Result<(Tensor, Option<Tensor>)> {
        let (a, probs) = self.attn.forward(&self.ln_1.forward(x)?, hooks)?;
        let mut x = (x + a)?;
        if let Some(ad) = hooks.adapter {
            x = ad.after_attention(&x)?;
        }
        let m = self.mlp.forward(&self.ln_2.forward(&x)?, hooks.lora)?;
        let mut x = (x + m)?;
        if let Some(ad) = hooks.adapter {
            x = ad.after_mlp(&x)?;
        }
        Ok((x, probs))
    }
}

/// Stack of blocks with no extras.
pub fn run_blocks(blocks: &[Block], x: &Tensor) -> Result<Tensor> {
    let hooks = BlockHooks::default();
    let mut x = x.clone();
    for b in blocks {
        x = b.forward(&x, &hooks)?.0;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn rand_input(shape: &[usize], seed: u64) -> Tensor {
        let n = shape.iter().product();
        let v = crate::nn::params::init_values(seed, "input", n, Init::Uniform(1.0));
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut ps = ParamStore::new(3, DType::F64);
        let attn = Attention::new(&mut ps, "a", 8, 2, false).unwrap();
        let hooks = BlockHooks {
            record_attention: true,
            ..Default::default()
        };
        let (_, p) = attn.forward(&rand_input(&[2, 5, 8], 1), &hooks).unwrap();
        let sums = p.unwrap().sum(D::Minus1).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert!(sums.iter().all(|s| (s - 1.0).abs() < 1e-6));
    }

    #[test]
    fn zeroed_sublayers_make_block_identity() {
        let mut ps = ParamStore::new(3, DType::F64);
        let block = Block::new(&mut ps, "b", 8, 2, false).unwrap();
        for name in ["b.attn.out_proj.weight", "b.mlp.c_proj.weight"] {
            let shape = ps.entry(name).unwrap().shape.clone();
            ps.set(name, &Tensor::zeros(shape, DType::F64, &Device::Cpu).unwrap()).unwrap();
        }
        let x = rand_input(&[1, 4, 8], 2);
        let y = block.forward(&x, &BlockHooks::default()).unwrap().0;
        let diff = (y - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert_eq!(diff, 0.0);
    }

    #[test]
    fn layer_norm_normalizes() {
        let mut ps = ParamStore::new(0, DType::F64);
        let ln = LayerNorm::new(&mut ps, "ln", 6, true).unwrap();
        let y = ln.forward(&rand_input(&[3, 6], 9)).unwrap();
        let mean = y.mean(D::Minus1).unwrap().to_vec1::<f64>().unwrap();
        assert!(mean.iter().all(|m| m.abs() < 1e-12));
    }

    #[test]
    fn sigmoid_is_finite_at_extremes() {
        let x = Tensor::new(&[-1e4f32, 0.0, 1e4], &Device::Cpu).unwrap();
        let y = sigmoid(&x).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(y, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn block_param_count_formula() {
        let mut ps = ParamStore::new(0, DType::F32);
        Block::new(&mut ps, "b", 24, 3, true).unwrap();
        assert_eq!(ps.report().total as usize, Block::param_count(24));
    }
}
