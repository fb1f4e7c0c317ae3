//! Heatmap rendering: the patch-grid saliency is upsampled bilinearly to the
//! frame size, colored and alpha-blended over the original frame.

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use serde::Serialize;

use sidepar_core::data::{load_manifest, sample_indices, TrackletDataset};
use sidepar_core::fusion::rollout::Heatmap;
use sidepar_core::train::{load_checkpoint, TrainConfig};
use sidepar_core::{Error, Result};

use crate::commands::{create_out, write};
use crate::ExplainArgs;

#[derive(Serialize)]
struct FrameEntry {
    frame_index: usize,
    source: String,
    image: String,
    grid: [usize; 2],
    saliency: Vec<f32>,
}

#[derive(Serialize)]
struct Sidecar {
    tracklet: String,
    attribute: String,
    attribute_index: usize,
    probability: f64,
    frames: Vec<FrameEntry>,
}

/// Blue through green to red.
fn colormap(v: f32) -> [f32; 3] {
    let c = |x: f32| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
    [c(3.0), c(2.0), c(1.0)]
}

pub fn overlay(frame: &RgbImage, map: &Heatmap, alpha: f32) -> RgbImage {
    let grid: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_raw(map.cols as u32, map.rows as u32, map.values.clone()).expect("heatmap size");
    let up = imageops::resize(&grid, frame.width(), frame.height(), FilterType::Triangle);
    RgbImage::from_fn(frame.width(), frame.height(), |x, y| {
        let color = colormap(up.get_pixel(x, y).0[0].clamp(0.0, 1.0));
        let px = frame.get_pixel(x, y).0;
        Rgb(std::array::from_fn(|k| {
            ((1.0 - alpha) * f32::from(px[k]) + alpha * 255.0 * color[k]).round() as u8
        }))
    })
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

pub fn run(args: &ExplainArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.alpha) {
        return Err(Error::Config(format!("alpha must be in [0, 1], got {}", args.alpha)));
    }
    let (model, meta) = load_checkpoint(&args.checkpoint)?;
    let attribute_index = match args.attribute.parse::<usize>() {
        Ok(i) => i,
        Err(_) => model.schema.index_of(&args.attribute).ok_or_else(|| {
            Error::Config(format!(
                "unknown attribute '{}'; known: {}",
                args.attribute,
                model.schema.attribute_names().join(", ")
            ))
        })?,
    };
    let manifest = args
        .manifest
        .clone()
        .or(meta.manifest.clone())
        .ok_or_else(|| Error::Config("checkpoint records no manifest: pass --manifest".into()))?;
    let data = TrackletDataset::new(load_manifest(&manifest, &model.schema)?, model.cfg.preprocess.clone());
    let index = data
        .find(&args.tracklet)
        .ok_or_else(|| Error::Config(format!("tracklet '{}' is not in {}", args.tracklet, manifest.display())))?;
    let sampler = meta.train.clone().unwrap_or_else(TrainConfig::default).eval_sampler();
    let video = data.video(index, &sampler, 0)?;
    let maps = model.attention_rollout(&video, attribute_index)?;
    let out = model.forward(std::slice::from_ref(&video), sidepar_core::Mode::Eval)?;
    let probs: Vec<f64> = out
        .prediction
        .probabilities
        .to_dtype(candle_core::DType::F64)?
        .flatten_all()?
        .to_vec1()?;

    let tracklet = &data.tracklets[index];
    let frame_idx = sample_indices(tracklet.frame_paths.len(), &sampler, &tracklet.id, 0)?;
    create_out(&args.out)?;
    let stem = file_stem(&tracklet.id);
    let mut frames = Vec::with_capacity(maps.len());
    for (k, (map, &fi)) in maps.iter().zip(&frame_idx).enumerate() {
        let src = &tracklet.frame_paths[fi];
        let img = image::open(src)
            .map_err(|e| Error::Frame {
                path: src.clone(),
                msg: e.to_string(),
            })?
            .to_rgb8();
        let name = format!("{stem}_{k:02}_frame{fi:04}.png");
        let path = args.out.join(&name);
        overlay(&img, map, args.alpha).save(&path).map_err(|e| Error::Frame {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        frames.push(FrameEntry {
            frame_index: fi,
            source: src.display().to_string(),
            image: name,
            grid: [map.rows, map.cols],
            saliency: map.values.clone(),
        });
    }
    let sidecar = Sidecar {
        tracklet: tracklet.id.clone(),
        attribute: model.schema.attribute_names()[attribute_index].clone(),
        attribute_index,
        probability: probs[attribute_index],
        frames,
    };
    write(&args.out.join(format!("{stem}_heatmaps.json")), serde_json::to_string_pretty(&sidecar)?)?;
    println!("{} heatmaps written to {}", sidecar.frames.len(), args.out.display());
    Ok(())
}
