//! Import of pretrained dual-encoder weights from a safetensors archive that
//! uses the reference checkpoint's tensor names.
//!
//! | archive name                                   | internal name                                   |
//! |------------------------------------------------|-------------------------------------------------|
//! | `visual.conv1.weight` `(w,3,p,p)`              | `backbone.vision.patch_embed.weight` `(w,3·p·p)` |
//! | `visual.class_embedding`                       | `backbone.vision.class_embedding`               |
//! | `visual.positional_embedding`                  | `backbone.vision.positional_embedding`          |
//! | `visual.ln_pre.{weight,bias}`                  | `backbone.vision.ln_pre.*`                      |
//! | `visual.transformer.resblocks.{i}.ln_1.*`      | `backbone.vision.layers.{i}.ln_1.*`             |
//! | `….attn.in_proj_{weight,bias}`                 | `….attn.qkv.{weight,bias}`                      |
//! | `….attn.out_proj.{weight,bias}`                | `….attn.out_proj.*`                             |
//! | `….ln_2.*`, `….mlp.c_fc.*`, `….mlp.c_proj.*`   | same suffix                                     |
//! | `visual.ln_post.*`, `visual.proj`              | `backbone.vision.ln_post.*`, `backbone.vision.proj` |
//! | `token_embedding.weight`                       | `backbone.text.token_embedding`                 |
//! | `positional_embedding`                         | `backbone.text.positional_embedding`            |
//! | `transformer.resblocks.{i}.*`                  | `backbone.text.layers.{i}.*` (same renames)     |
//! | `ln_final.*`, `text_projection`                | `backbone.text.ln_final.*`, `backbone.text.proj` |

use std::path::Path;

use candle_core::Device;

use crate::error::{Error, Result};
use crate::nn::params::ParamStore;

fn block_pairs(src: &str, dst: &str) -> Vec<(String, String)> {
    let mut v = Vec::new();
    for ln in ["ln_1", "ln_2"] {
        for s in ["weight", "bias"] {
            v.push((format!("{src}.{ln}.{s}"), format!("{dst}.{ln}.{s}")));
        }
    }
    v.push((format!("{src}.attn.in_proj_weight"), format!("{dst}.attn.qkv.weight")));
    v.push((format!("{src}.attn.in_proj_bias"), format!("{dst}.attn.qkv.bias")));
    for lin in ["attn.out_proj", "mlp.c_fc", "mlp.c_proj"] {
        for s in ["weight", "bias"] {
            v.push((format!("{src}.{lin}.{s}"), format!("{dst}.{lin}.{s}")));
        }
    }
    v
}

/// `(archive name, internal name)` for every backbone tensor.
pub fn name_map(vision_depth: usize, text_depth: usize) -> Vec<(String, String)> {
    let mut v = vec![
        ("visual.conv1.weight".into(), "backbone.vision.patch_embed.weight".into()),
        ("visual.class_embedding".into(), "backbone.vision.class_embedding".into()),
        ("visual.positional_embedding".into(), "backbone.vision.positional_embedding".into()),
        ("visual.ln_pre.weight".into(), "backbone.vision.ln_pre.weight".into()),
        ("visual.ln_pre.bias".into(), "backbone.vision.ln_pre.bias".into()),
        ("visual.ln_post.weight".into(), "backbone.vision.ln_post.weight".into()),
        ("visual.ln_post.bias".into(), "backbone.vision.ln_post.bias".into()),
        ("visual.proj".into(), "backbone.vision.proj".into()),
        ("token_embedding.weight".into(), "backbone.text.token_embedding".into()),
        ("positional_embedding".into(), "backbone.text.positional_embedding".into()),
        ("ln_final.weight".into(), "backbone.text.ln_final.weight".into()),
        ("ln_final.bias".into(), "backbone.text.ln_final.bias".into()),
        ("text_projection".into(), "backbone.text.proj".into()),
    ];
    for i in 0..vision_depth {
        v.extend(block_pairs(
            &format!("visual.transformer.resblocks.{i}"),
            &format!("backbone.vision.layers.{i}"),
        ));
    }
    for i in 0..text_depth {
        v.extend(block_pairs(
            &format!("transformer.resblocks.{i}"),
            &format!("backbone.text.layers.{i}"),
        ));
    }
    v
}

/// Overwrite the backbone in `ps` with tensors from `path`. Every mapped
/// name must be present; shapes must agree after reshaping the patch
/// convolution to a matrix.
pub fn import_pretrained(ps: &ParamStore, path: &Path, vision_depth: usize, text_depth: usize) -> Result<usize> {
    let tensors = candle_core::safetensors::load(path, &Device::Cpu)?;
    let mut missing = Vec::new();
    let mut count = 0;
    for (src, dst) in name_map(vision_depth, text_depth) {
        let Some(t) = tensors.get(&src) else {
            missing.push(src);
            continue;
        };
        let shape = ps
            .entry(&dst)
            .ok_or_else(|| Error::Config(format!("model has no parameter '{dst}'")))?
            .shape
            .clone();
        let t = if t.elem_count() == shape.iter().product::<usize>() && t.dims() != shape.as_slice() && dst.ends_with("patch_embed.weight") {
            t.reshape(shape.as_slice())?
        } else {
            t.clone()
        };
        ps.set(&dst, &t)?;
        count += 1;
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "{}: missing {} tensors (first: {})",
            path.display(),
            missing.len(),
            missing[0]
        )));
    }
    Ok(count)
}
