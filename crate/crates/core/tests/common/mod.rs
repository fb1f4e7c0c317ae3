//! Shared fixtures and reference implementations for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use sidepar_core::data::{generate_synthetic, load_manifest, synthetic_schema, SynthConfig, TrackletDataset};
use sidepar_core::schema::{AttributeSchema, LabelVector};
use sidepar_core::ModelConfig;
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub manifest: PathBuf,
    pub schema: AttributeSchema,
    pub data: TrackletDataset,
}

/// Synthetic tracklets written to a temporary directory and loaded back
/// through the manifest, preprocessed for `cfg`.
pub fn synthetic_fixture(num_tracklets: usize, seed: u64, test_fraction: f64, cfg: &ModelConfig) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let synth = generate_synthetic(
        &synthetic_schema(),
        &SynthConfig {
            num_tracklets,
            seed,
            test_fraction,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let manifest = synth.write(dir.path()).unwrap();
    let schema = AttributeSchema::load(&dir.path().join("schema.json")).unwrap();
    let tracklets = load_manifest(&manifest, &schema).unwrap();
    Fixture {
        data: TrackletDataset::new(tracklets, cfg.preprocess.clone()),
        dir,
        manifest,
        schema,
    }
}

/// Weighted binary cross-entropy by plain loops, for reference.
pub fn reference_loss(p: &[f64], y: &[u8], known: &[bool], ratios: &[f64], m: usize, eps: f64, mean: bool) -> f64 {
    let n = p.len() / m;
    let mut total = 0.0;
    let mut scored = 0usize;
    for i in 0..n {
        for j in 0..m {
            let k = i * m + j;
            if !known[k] {
                continue;
            }
            let q = p[k].max(eps).min(1.0 - eps);
            let r = ratios[j];
            let term = if y[k] == 1 {
                (1.0 - r).exp() * q.ln()
            } else {
                r.exp() * (1.0 - q).ln()
            };
            total -= term;
            scored += 1;
        }
    }
    if mean {
        total / scored.max(1) as f64
    } else {
        total / m as f64
    }
}

/// `(tp, tn, fp, fn)` per attribute by direct counting.
pub fn brute_force_counts(p: &[f64], labels: &[LabelVector], m: usize, threshold: f64) -> Vec<[u64; 4]> {
    let mut out = vec![[0u64; 4]; m];
    for (i, l) in labels.iter().enumerate() {
        for j in 0..m {
            if !l.known[j] {
                continue;
            }
            let pred = p[i * m + j] >= threshold;
            let actual = l.values[j] == 1;
            let slot = match (pred, actual) {
                (true, true) => 0,
                (false, false) => 1,
                (true, false) => 2,
                (false, true) => 3,
            };
            out[j][slot] += 1;
        }
    }
    out
}

/// Accuracy, precision, recall, F1 from raw counts; zero denominators give 0.
pub fn brute_force_metrics(c: [u64; 4]) -> [f64; 4] {
    let [tp, tn, fp, fn_] = c.map(|x| x as f64);
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let acc = div(tp + tn, tp + tn + fp + fn_);
    let prec = div(tp, tp + fp);
    let rec = div(tp, tp + fn_);
    let f1 = div(2.0 * prec * rec, prec + rec);
    [acc, prec, rec, f1]
}

/// Row-major `(n, n)` matrix product.
pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}
