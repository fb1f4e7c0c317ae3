use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::data::manifest::{Split, Tracklet};
use crate::data::preprocess::PreprocessConfig;
use crate::data::sampler::{sample_indices, SamplerConfig};
use crate::data::VideoTensor;
use crate::error::{Error, Result};
use crate::schema::LabelVector;

fn read_frame(path: &Path, pre: &PreprocessConfig) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| Error::Frame {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok(pre.apply(&img.to_rgb8()))
}

fn assemble(frames: Vec<Arc<Vec<f32>>>, pre: &PreprocessConfig) -> Result<VideoTensor> {
    let n = frames.len();
    let data = frames.iter().flat_map(|f| f.iter().copied()).collect();
    VideoTensor::new(data, n, pre.height, pre.width, 3)
}

/// Sample `cfg.k` frames of a tracklet and preprocess them, reading from disk.
pub fn sample_frames(
    tracklet: &Tracklet,
    cfg: &SamplerConfig,
    pre: &PreprocessConfig,
    epoch: u64,
) -> Result<VideoTensor> {
    let idx = sample_indices(tracklet.frame_paths.len(), cfg, &tracklet.id, epoch)?;
    let frames = idx
        .iter()
        .map(|&i| read_frame(&tracklet.frame_paths[i], pre).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    assemble(frames, pre)
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub ids: Vec<String>,
    pub videos: Vec<VideoTensor>,
    pub labels: Vec<LabelVector>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Tracklets plus a cache of decoded, preprocessed frames.
pub struct TrackletDataset {
    pub tracklets: Vec<Tracklet>,
    pub preprocess: PreprocessConfig,
    cache: Mutex<HashMap<PathBuf, Arc<Vec<f32>>>>,
}

impl TrackletDataset {
    pub fn new(tracklets: Vec<Tracklet>, preprocess: PreprocessConfig) -> Self {
        Self {
            tracklets,
            preprocess,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.tracklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    /// Indices of the tracklets in `split`, in manifest order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.tracklets[i].split == split).collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<LabelVector> {
        indices.iter().map(|&i| self.tracklets[i].label.clone()).collect()
    }

    fn frame(&self, path: &Path) -> Result<Arc<Vec<f32>>> {
        if let Some(f) = self.cache.lock().expect("frame cache").get(path) {
            return Ok(f.clone());
        }
        let f = Arc::new(read_frame(path, &self.preprocess)?);
        self.cache
            .lock()
            .expect("frame cache")
            .insert(path.to_path_buf(), f.clone());
        Ok(f)
    }

    pub fn video(&self, index: usize, cfg: &SamplerConfig, epoch: u64) -> Result<VideoTensor> {
        let t = &self.tracklets[index];
        let idx = sample_indices(t.frame_paths.len(), cfg, &t.id, epoch)?;
        let frames = idx
            .iter()
            .map(|&i| self.frame(&t.frame_paths[i]))
            .collect::<Result<Vec<_>>>()?;
        assemble(frames, &self.preprocess)
    }

    /// Load several tracklets concurrently; output order follows `indices`.
    pub fn batch(&self, indices: &[usize], cfg: &SamplerConfig, epoch: u64) -> Result<Batch> {
        let videos = indices
            .par_iter()
            .map(|&i| self.video(i, cfg, epoch))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            ids: indices.iter().map(|&i| self.tracklets[i].id.clone()).collect(),
            videos,
            labels: self.labels(indices),
        })
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.tracklets.iter().position(|t| t.id == id)
    }
}
