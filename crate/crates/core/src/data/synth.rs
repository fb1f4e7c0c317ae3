//! Procedurally rendered pedestrian tracklets with exact labels.
//!
//! Every schema group becomes a render parameter:
//!
//! * a multi-class group whose name contains `motion` sets the horizontal
//!   drift: class `i` of `C` moves `2·(C-1-i)` pixels per frame (so class 0
//!   moves fastest and the last class stands still), bouncing off the frame
//!   edges in a random initial direction;
//! * every other multi-class group colors one horizontal band of the body,
//!   bands stacked top to bottom in group order;
//! * binary groups draw accessory blobs: the first sits on the head (a hat),
//!   later ones are squares beside the torso.
//!
//! Binary groups are drawn positive with probability `binary_rate`, class
//! indices uniformly. The background carries seeded per-pixel noise.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::manifest::{write_manifest, Split, Tracklet};
use crate::error::{Error, Result};
use crate::schema::{AttributeGroup, AttributeSchema, GroupKind, LabelVector, DEFAULT_PROMPT_TEMPLATE};

/// Four groups, eight binary attributes.
pub fn synthetic_schema() -> AttributeSchema {
    let mut s = AttributeSchema::new(
        vec![
            AttributeGroup::multi_class("top color", ["red", "blue", "green"]),
            AttributeGroup::multi_class("bottom color", ["black", "white"]),
            AttributeGroup::binary("hat"),
            AttributeGroup::multi_class("motion", ["walking", "standing"]),
        ],
        DEFAULT_PROMPT_TEMPLATE,
    )
    .expect("valid synthetic schema");
    s.name = Some("synthetic".into());
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_tracklets: usize,
    pub seed: u64,
    pub binary_rate: f64,
    pub min_frames: usize,
    pub max_frames: usize,
    pub frame_height: u32,
    pub frame_width: u32,
    /// Trailing fraction of tracklets assigned to the test split.
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_tracklets: 32,
            seed: 0,
            binary_rate: 0.4,
            min_frames: 4,
            max_frames: 12,
            frame_height: 64,
            frame_width: 32,
            test_fraction: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tracklets == 0 {
            return Err(Error::Config("num_tracklets must be at least 1".into()));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "frame range {}..={} is empty",
                self.min_frames, self.max_frames
            )));
        }
        if !(0.0..=1.0).contains(&self.binary_rate) || !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("binary_rate must be in [0,1] and test_fraction in [0,1)".into()));
        }
        if self.frame_height < 32 || self.frame_width < 24 {
            return Err(Error::Config("synthetic frames must be at least 32x24".into()));
        }
        Ok(())
    }

    /// Probability that each binary attribute is positive.
    pub fn expected_rates(&self, schema: &AttributeSchema) -> Vec<f64> {
        schema
            .groups
            .iter()
            .flat_map(|g| match g.kind {
                GroupKind::Binary => vec![self.binary_rate],
                GroupKind::MultiClass => vec![1.0 / g.classes.len() as f64; g.classes.len()],
            })
            .collect()
    }
}

/// Per-group render parameter: class index, or 0/1 for binary groups.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderParams {
    pub values: Vec<usize>,
    pub x0: i32,
    pub direction: i32,
    pub frames: usize,
}

#[derive(Clone, Debug)]
pub struct SynthTracklet {
    pub id: String,
    pub split: Split,
    pub params: RenderParams,
    pub label: LabelVector,
    pub frames: Vec<RgbImage>,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub schema: AttributeSchema,
    pub tracklets: Vec<SynthTracklet>,
}

fn is_motion(g: &AttributeGroup) -> bool {
    g.kind == GroupKind::MultiClass && g.name.to_lowercase().contains("motion")
}

fn named_color(name: &str) -> Option<[u8; 3]> {
    Some(match name.to_lowercase().as_str() {
        "red" => [220, 30, 30],
        "blue" => [30, 60, 220],
        "green" => [30, 180, 50],
        "black" => [15, 15, 15],
        "white" => [245, 245, 245],
        "yellow" => [240, 220, 20],
        "gray" | "grey" => [150, 150, 150],
        "purple" => [140, 40, 170],
        "brown" => [120, 70, 30],
        "pink" => [250, 140, 180],
        "orange" => [250, 140, 20],
        _ => return None,
    })
}

fn palette(i: usize, n: usize) -> [u8; 3] {
    let h = i as f64 / n.max(1) as f64 * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 230.0) as u8, (g * 230.0) as u8, (b * 230.0) as u8]
}

fn class_color(g: &AttributeGroup, c: usize) -> [u8; 3] {
    named_color(&g.classes[c]).unwrap_or_else(|| palette(c, g.classes.len()))
}

fn fill(img: &mut RgbImage, x0: i32, y0: i32, x1: i32, y1: i32, color: [u8; 3]) {
    let (w, h) = (img.width() as i32, img.height() as i32);
    for y in y0.max(0)..y1.min(h) {
        for x in x0.max(0)..x1.min(w) {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    }
}

const FIGURE_WIDTH: i32 = 12;
const SKIN: [u8; 3] = [230, 190, 160];
const ACCESSORY: [u8; 3] = [250, 200, 0];

fn bounce(x: i32, span: i32) -> i32 {
    if span <= 0 {
        return 0;
    }
    let period = 2 * span;
    let m = x.rem_euclid(period);
    if m <= span {
        m
    } else {
        period - m
    }
}

fn render(schema: &AttributeSchema, cfg: &SynthConfig, p: &RenderParams, rng: &mut ChaCha8Rng) -> Vec<RgbImage> {
    let (fw, fh) = (cfg.frame_width as i32, cfg.frame_height as i32);
    let span = fw - FIGURE_WIDTH - 4;
    let speed = schema
        .groups
        .iter()
        .zip(&p.values)
        .find(|(g, _)| is_motion(g))
        .map_or(0, |(g, &c)| 2 * (g.classes.len() - 1 - c) as i32);
    let bands: Vec<(usize, &AttributeGroup)> = schema
        .groups
        .iter()
        .enumerate()
        .filter(|(_, g)| g.kind == GroupKind::MultiClass && !is_motion(g))
        .collect();
    let binaries: Vec<usize> = (0..schema.groups.len())
        .filter(|&i| schema.groups[i].kind == GroupKind::Binary)
        .collect();
    let head_top = fh / 16 + 2;
    let head_bottom = head_top + fh / 8;
    let body_bottom = fh - fh / 16;

    (0..p.frames)
        .map(|t| {
            let mut img = RgbImage::from_fn(cfg.frame_width, cfg.frame_height, |_, _| {
                let v = 110 + rng.random_range(-10i32..=10);
                Rgb([v as u8, v as u8, v as u8])
            });
            let x = bounce(p.x0 + p.direction * speed * t as i32, span);
            let cx = x + FIGURE_WIDTH / 2;
            fill(&mut img, cx - 3, head_top, cx + 3, head_bottom, SKIN);
            let band_h = (body_bottom - head_bottom) / bands.len().max(1) as i32;
            for (b, (gi, g)) in bands.iter().enumerate() {
                let y0 = head_bottom + b as i32 * band_h;
                fill(&mut img, x, y0, x + FIGURE_WIDTH, y0 + band_h, class_color(g, p.values[*gi]));
            }
            for (slot, &gi) in binaries.iter().enumerate() {
                if p.values[gi] == 0 {
                    continue;
                }
                if slot == 0 {
                    fill(&mut img, cx - 5, head_top - 3, cx + 5, head_top + 2, ACCESSORY);
                } else {
                    let y0 = head_bottom + 2 + 6 * (slot as i32 - 1);
                    fill(&mut img, x + FIGURE_WIDTH, y0, x + FIGURE_WIDTH + 4, y0 + 4, ACCESSORY);
                }
            }
            img
        })
        .collect()
}

pub fn generate_synthetic(schema: &AttributeSchema, cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let n_test = (cfg.num_tracklets as f64 * cfg.test_fraction).round() as usize;
    let n_train = cfg.num_tracklets - n_test;
    let span = cfg.frame_width as i32 - FIGURE_WIDTH - 4;
    let tracklets = (0..cfg.num_tracklets)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x2545_f491_4f6c_dd1d) ^ i as u64);
            let values: Vec<usize> = schema
                .groups
                .iter()
                .map(|g| match g.kind {
                    GroupKind::Binary => usize::from(rng.random_bool(cfg.binary_rate)),
                    GroupKind::MultiClass => rng.random_range(0..g.classes.len()),
                })
                .collect();
            let params = RenderParams {
                values,
                x0: rng.random_range(0..=span),
                direction: if rng.random_bool(0.5) { 1 } else { -1 },
                frames: rng.random_range(cfg.min_frames..=cfg.max_frames),
            };
            let mut label = LabelVector::unknown(schema.len());
            for ((g, range), &v) in schema.groups.iter().zip(schema.group_ranges()).zip(&params.values) {
                match g.kind {
                    GroupKind::Binary => label.set(range.start, v == 1),
                    GroupKind::MultiClass => {
                        for k in range.clone() {
                            label.set(k, k - range.start == v);
                        }
                    }
                }
            }
            let frames = render(schema, cfg, &params, &mut rng);
            SynthTracklet {
                id: format!("syn{i:05}"),
                split: if i < n_train { Split::Train } else { Split::Test },
                params,
                label,
                frames,
            }
        })
        .collect();
    Ok(SyntheticDataset {
        schema: schema.clone(),
        tracklets,
    })
}

impl SyntheticDataset {
    pub fn labels(&self) -> Vec<LabelVector> {
        self.tracklets.iter().map(|t| t.label.clone()).collect()
    }

    /// Write `frames/<id>/<k>.png`, `manifest.jsonl` and `schema.json` (with
    /// train-split positive ratios) under `dir`. Returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let mut out = Vec::with_capacity(self.tracklets.len());
        for t in &self.tracklets {
            let fdir = dir.join("frames").join(&t.id);
            fs::create_dir_all(&fdir).map_err(|e| Error::io(&fdir, e))?;
            let mut paths = Vec::with_capacity(t.frames.len());
            for (k, img) in t.frames.iter().enumerate() {
                let p = fdir.join(format!("{k:03}.png"));
                img.save(&p).map_err(|e| Error::Frame {
                    path: p.clone(),
                    msg: e.to_string(),
                })?;
                paths.push(p);
            }
            out.push(Tracklet {
                id: t.id.clone(),
                frame_paths: paths,
                label: t.label.clone(),
                split: t.split,
            });
        }
        let manifest = dir.join("manifest.jsonl");
        write_manifest(&manifest, &out)?;
        let train: Vec<LabelVector> = self
            .tracklets
            .iter()
            .filter(|t| t.split == Split::Train)
            .map(|t| t.label.clone())
            .collect();
        let schema = if train.is_empty() {
            self.schema.clone()
        } else {
            self.schema
                .clone()
                .with_positive_ratios(crate::schema::compute_positive_ratios(&train)?)?
        };
        schema.save(&dir.join("schema.json"))?;
        Ok(manifest)
    }
}
