use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::fnv1a64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplePolicy {
    UniformRandom,
    EvenlySpaced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k: usize,
    pub policy: SamplePolicy,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k: 6,
            policy: SamplePolicy::UniformRandom,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("sampler k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Stream seed for one (tracklet, epoch) draw.
pub fn stream_seed(seed: u64, tracklet_id: &str, epoch: u64) -> u64 {
    seed ^ fnv1a64(tracklet_id.as_bytes()) ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Ascending frame indices for a tracklet of `n` frames.
///
/// Uniform-random draws `k` distinct indices when `n >= k` and `k` indices
/// with replacement otherwise; evenly-spaced takes `floor((i + 1/2)·n/k)`.
pub fn sample_indices(n: usize, cfg: &SamplerConfig, tracklet_id: &str, epoch: u64) -> Result<Vec<usize>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Tracklet {
            id: tracklet_id.to_string(),
            msg: "tracklet has no frames".into(),
        });
    }
    let k = cfg.k;
    let mut idx: Vec<usize> = match cfg.policy {
        SamplePolicy::EvenlySpaced => (0..k).map(|i| ((2 * i + 1) * n) / (2 * k)).collect(),
        SamplePolicy::UniformRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, tracklet_id, epoch));
            if n >= k {
                index::sample(&mut rng, n, k).into_vec()
            } else {
                (0..k).map(|_| rng.random_range(0..n)).collect()
            }
        }
    };
    idx.sort_unstable();
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn sixty_frames_gives_six_distinct_sorted() {
        let idx = sample_indices(60, &cfg(3), "t", 0).unwrap();
        assert_eq!(idx.len(), 6);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 60));
    }

    #[test]
    fn exact_length_is_identity() {
        assert_eq!(sample_indices(6, &cfg(9), "t", 0).unwrap(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn short_tracklets_repeat_frames() {
        let idx = sample_indices(3, &cfg(1), "t", 0).unwrap();
        assert_eq!(idx.len(), 6);
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        assert!(idx.iter().all(|&i| i < 3));
    }

    #[test]
    fn seeds_change_the_draw() {
        let base = sample_indices(40, &cfg(0), "t", 0).unwrap();
        let differs = (1..=20).filter(|&s| sample_indices(40, &cfg(s), "t", 0).unwrap() != base).count();
        assert!(differs >= 1);
    }

    #[test]
    fn evenly_spaced_covers_the_clip() {
        let c = SamplerConfig {
            policy: SamplePolicy::EvenlySpaced,
            ..cfg(0)
        };
        assert_eq!(sample_indices(12, &c, "t", 0).unwrap(), vec![1, 3, 5, 7, 9, 11]);
        assert_eq!(sample_indices(3, &c, "t", 0).unwrap(), vec![0, 0, 1, 1, 2, 2]);
    }

    proptest! {
        #[test]
        fn always_sorted_in_range_and_reproducible(n in 1usize..200, k in 1usize..16, seed in any::<u64>(), epoch in 0u64..5) {
            let c = SamplerConfig { k, seed, policy: SamplePolicy::UniformRandom };
            let a = sample_indices(n, &c, "id", epoch).unwrap();
            let b = sample_indices(n, &c, "id", epoch).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.len(), k);
            prop_assert!(a.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(a.iter().all(|&i| i < n));
            if n >= k {
                prop_assert!(a.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }
}
