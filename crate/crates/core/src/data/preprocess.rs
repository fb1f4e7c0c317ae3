use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-channel mean/std of the reference dual encoder's preprocessing.
pub const REFERENCE_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const REFERENCE_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

/// Resize to `height x width`, scale to `[0,1]`, then `(x - mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub height: usize,
    pub width: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            height: 224,
            width: 224,
            mean: REFERENCE_MEAN,
            std: REFERENCE_STD,
        }
    }
}

impl PreprocessConfig {
    pub fn toy(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }

    pub fn validate(&self, patch: usize) -> Result<()> {
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(patch) || !self.width.is_multiple_of(patch) {
            return Err(Error::Config(format!(
                "resize target {}x{} is not divisible by patch {patch}",
                self.height, self.width
            )));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }

    /// The interval every normalized value falls in.
    pub fn value_range(&self) -> [(f32, f32); 3] {
        std::array::from_fn(|c| ((0.0 - self.mean[c]) / self.std[c], (1.0 - self.mean[c]) / self.std[c]))
    }

    /// `(height, width, 3)` row-major normalized values.
    pub fn apply(&self, img: &RgbImage) -> Vec<f32> {
        let resized;
        let img = if img.width() as usize == self.width && img.height() as usize == self.height {
            img
        } else {
            resized = imageops::resize(img, self.width as u32, self.height as u32, FilterType::Triangle);
            &resized
        };
        img.pixels()
            .flat_map(|p| (0..3).map(move |c| (f32::from(p[c]) / 255.0 - self.mean[c]) / self.std[c]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn toy_constants_map_to_unit_interval() {
        let cfg = PreprocessConfig::toy(16, 16);
        let img = RgbImage::from_fn(8, 4, |x, _| image::Rgb([0, 255, (x * 30) as u8]));
        let v = cfg.apply(&img);
        assert_eq!(v.len(), 16 * 16 * 3);
        assert_eq!(v[0], -1.0);
        assert_eq!(v[1], 1.0);
        assert!(cfg.validate(16).is_ok());
        assert!(PreprocessConfig::toy(20, 16).validate(16).is_err());
    }

    proptest! {
        #[test]
        fn values_stay_in_the_configured_range(seed in any::<u64>(), w in 1u32..40, h in 1u32..40) {
            let img = RgbImage::from_fn(w, h, |x, y| {
                let v = seed.wrapping_mul(u64::from(x * 31 + y * 17 + 1));
                image::Rgb([v as u8, (v >> 8) as u8, (v >> 16) as u8])
            });
            let cfg = PreprocessConfig { height: 32, width: 16, ..PreprocessConfig::default() };
            let range = cfg.value_range();
            for (i, x) in cfg.apply(&img).into_iter().enumerate() {
                let (lo, hi) = range[i % 3];
                prop_assert!(x >= lo - 1e-5 && x <= hi + 1e-5);
            }
        }
    }
}
