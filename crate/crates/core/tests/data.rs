//! Dataset pipeline: synthetic generation, manifests, annotation conversion
//! and the shipped schemas.

mod common;

use std::fs;

use image::{Rgb, RgbImage};

use sidepar_core::data::convert::{convert_annotations, Layout};
use sidepar_core::data::{load_manifest, SamplePolicy, SamplerConfig, Split};
use sidepar_core::schema::{AttributeSchema, GroupKind};
use sidepar_core::ModelConfig;

const MARS: &str = include_str!("../../../assets/schemas/mars_reconstructed.json");
const DUKE: &str = include_str!("../../../assets/schemas/duke_reconstructed.json");

#[test]
fn shipped_schemas_split_into_the_documented_sizes() {
    let mars = AttributeSchema::from_json(MARS).unwrap();
    let duke = AttributeSchema::from_json(DUKE).unwrap();
    assert_eq!(mars.len(), Layout::Mars.expected_attributes().unwrap());
    assert_eq!(duke.len(), Layout::Duke.expected_attributes().unwrap());
    for s in [&mars, &duke] {
        assert!(s.name.as_deref().unwrap().contains("reconstructed"));
        let names = s.attribute_names();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }
}

#[test]
fn batches_are_reproducible_and_resampled_per_epoch() {
    let cfg = ModelConfig::toy();
    let fx = common::synthetic_fixture(6, 31, 0.0, &cfg);
    let sampler = SamplerConfig {
        k: 4,
        policy: SamplePolicy::UniformRandom,
        seed: 3,
    };
    let idx: Vec<usize> = (0..6).collect();
    let a = fx.data.batch(&idx, &sampler, 0).unwrap();
    let b = fx.data.batch(&idx, &sampler, 0).unwrap();
    let c = fx.data.batch(&idx, &sampler, 1).unwrap();
    assert_eq!(a.len(), 6);
    let (h, w) = (cfg.vision.image_height, cfg.vision.image_width);
    for v in &a.videos {
        assert_eq!((v.frames, v.height, v.width, v.channels), (4, h, w, 3));
    }
    assert!(a.videos.iter().zip(&b.videos).all(|(x, y)| x.data == y.data));
    assert!(a.videos.iter().zip(&c.videos).any(|(x, y)| x.data != y.data));
    assert_eq!(a.labels, fx.data.labels(&idx));
}

#[test]
fn splits_partition_the_dataset() {
    let cfg = ModelConfig::toy();
    let fx = common::synthetic_fixture(20, 32, 0.25, &cfg);
    let train = fx.data.split_indices(Split::Train);
    let test = fx.data.split_indices(Split::Test);
    assert_eq!(train.len() + test.len(), 20);
    assert_eq!(test.len(), 5);
    assert!(train.iter().all(|i| !test.contains(i)));
}

fn write_frames(dir: &std::path::Path, n: usize) {
    fs::create_dir_all(dir).unwrap();
    for k in 0..n {
        RgbImage::from_pixel(8, 16, Rgb([10 * k as u8, 50, 90]))
            .save(dir.join(format!("{k:04}.png")))
            .unwrap();
    }
}

#[test]
fn annotations_convert_to_a_loadable_manifest() {
    let schema = sidepar_core::data::synthetic_schema();
    let dir = tempfile::tempdir().unwrap();
    write_frames(&dir.path().join("frames/a"), 3);
    write_frames(&dir.path().join("frames/b"), 2);
    let header: Vec<String> = ["id", "split", "frames"]
        .into_iter()
        .map(String::from)
        .chain(schema.groups.iter().map(|g| g.name.clone()))
        .collect();
    let row = |id: &str, split: &str, frames: &str, binary: &str| {
        let mut r = vec![id.to_string(), split.to_string(), frames.to_string()];
        for g in &schema.groups {
            r.push(if g.kind == GroupKind::Binary { binary.to_string() } else { "0".to_string() });
        }
        r.join(",")
    };
    let csv = [header.join(","), row("a", "train", "frames/a", "1"), row("b", "test", "frames/b", "")].join("\n");
    let csv_path = dir.path().join("ann.csv");
    fs::write(&csv_path, csv).unwrap();
    let out = dir.path().join("out/manifest.jsonl");
    fs::create_dir_all(out.parent().unwrap()).unwrap();
    assert_eq!(convert_annotations(&csv_path, &schema, Layout::Generic, &out).unwrap(), 2);
    let tracklets = load_manifest(&out, &schema).unwrap();
    assert_eq!(tracklets.len(), 2);
    assert_eq!(tracklets[0].frame_paths.len(), 3);
    assert!(tracklets[0].frame_paths.iter().all(|f| f.exists()));
    assert!(tracklets[0].label.known.iter().all(|&k| k));
    assert!(tracklets[1].label.known.iter().any(|&k| !k));

    let err = convert_annotations(&csv_path, &schema, Layout::Mars, &out).unwrap_err();
    assert!(err.is_validation());
}
