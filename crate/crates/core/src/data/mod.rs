//! Tracklet manifests, frame sampling, preprocessing and the synthetic
//! tracklet generator.

pub mod convert;
pub mod dataset;
pub mod manifest;
pub mod preprocess;
pub mod sampler;
pub mod synth;

use candle_core::{Device, Tensor};

use crate::error::{Error, Result};

pub use dataset::{sample_frames, Batch, TrackletDataset};
pub use manifest::{load_manifest, write_manifest, ManifestRecord, Split, Tracklet};
pub use preprocess::PreprocessConfig;
pub use sampler::{sample_indices, SamplePolicy, SamplerConfig};
pub use synth::{generate_synthetic, synthetic_schema, SynthConfig, SyntheticDataset};

/// A preprocessed clip, row-major `(frames, height, width, channels)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoTensor {
    pub data: Vec<f32>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl VideoTensor {
    pub fn new(data: Vec<f32>, frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Shape("a video needs at least one frame".into()));
        }
        if data.len() != frames * height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{height}x{width}x{channels} video",
                data.len()
            )));
        }
        Ok(Self {
            data,
            frames,
            height,
            width,
            channels,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// A new video made of the given frames, in the given order.
    pub fn select(&self, order: &[usize]) -> Self {
        let data = order.iter().flat_map(|&i| self.frame(i).iter().copied()).collect();
        Self {
            data,
            frames: order.len(),
            ..*self
        }
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (self.frames, self.height, self.width, self.channels),
            device,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_reorders_frames() {
        let v = VideoTensor::new((0..12).map(|x| x as f32).collect(), 3, 1, 2, 2).unwrap();
        let r = v.select(&[2, 0]);
        assert_eq!(r.frames, 2);
        assert_eq!(r.data, vec![8., 9., 10., 11., 0., 1., 2., 3.]);
        assert!(VideoTensor::new(vec![0.0; 5], 1, 1, 2, 2).is_err());
    }
}
