use candle_core::{DType, Device, Tensor};
use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sidepar_core::data::{synthetic_schema, VideoTensor};
use sidepar_core::schema::LabelVector;
use sidepar_core::train::{TrainConfig, Trainer};
use sidepar_core::{compute_metrics, weighted_bce_loss, LossConfig, Mode, Model, ModelConfig, Tuning};

fn clips(cfg: &ModelConfig, n: usize, frames: usize, seed: u64) -> Vec<VideoTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.vision.image_height, cfg.vision.image_width);
    (0..n)
        .map(|_| {
            let data = (0..frames * h * w * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            VideoTensor::new(data, frames, h, w, 3).unwrap()
        })
        .collect()
}

fn forward(c: &mut Criterion) {
    let cfg = ModelConfig::toy();
    let schema = synthetic_schema();
    let videos = clips(&cfg, 4, 6, 1);
    let mut group = c.benchmark_group("toy forward, 4 clips x 6 frames");
    for tuning in [Tuning::Side, Tuning::Frozen] {
        let model = Model::new(&cfg, &schema, tuning.clone()).unwrap();
        group.bench_function(tuning.label(), |b| {
            b.iter(|| model.forward(black_box(&videos), Mode::Train).unwrap())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let cfg = ModelConfig::toy();
    let schema = synthetic_schema();
    let model = Model::new(&cfg, &schema, Tuning::Side).unwrap();
    let tc = TrainConfig::default();
    let mut trainer = Trainer::new(&model, &tc, &LossConfig::default(), vec![0.3; schema.len()]).unwrap();
    let batch = sidepar_core::data::Batch {
        ids: (0..8).map(|i| format!("t{i}")).collect(),
        videos: clips(&cfg, 8, 6, 2),
        labels: (0..8)
            .map(|i| LabelVector::from_bits(&(0..schema.len()).map(|j| ((i + j) % 2) as u8).collect::<Vec<_>>()))
            .collect(),
    };
    c.bench_function("toy side-tuning train step, batch 8", |b| {
        b.iter(|| trainer.train_step(black_box(&batch)).unwrap())
    });
}

fn objective(c: &mut Criterion) {
    let (n, m) = (256, 43);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p: Vec<f64> = (0..n * m).map(|_| rng.random_range(0.0..1.0)).collect();
    let bits: Vec<Vec<u8>> = (0..n).map(|_| (0..m).map(|_| u8::from(rng.random_bool(0.2))).collect()).collect();
    let y: Vec<f64> = bits.iter().flatten().map(|&b| f64::from(b)).collect();
    let ratios: Vec<f64> = (0..m).map(|_| rng.random_range(0.05..0.5)).collect();
    let pt = Tensor::from_vec(p.clone(), (n, m), &Device::Cpu).unwrap();
    let yt = Tensor::from_vec(y, (n, m), &Device::Cpu).unwrap().to_dtype(DType::F64).unwrap();
    c.bench_function("weighted loss 256x43", |b| {
        b.iter(|| weighted_bce_loss(black_box(&pt), &yt, None, &ratios, &LossConfig::default()).unwrap())
    });

    let schema = sidepar_core::schema::AttributeSchema::from_json(include_str!(
        "../../../assets/schemas/mars_reconstructed.json"
    ))
    .unwrap();
    let labels: Vec<LabelVector> = bits.iter().map(|b| LabelVector::from_bits(b)).collect();
    c.bench_function("metrics 256x43", |b| {
        b.iter_batched(
            || p.clone(),
            |p| compute_metrics(&p, &labels, &schema, 0.5).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = forward, train_step, objective
}
criterion_main!(benches);
