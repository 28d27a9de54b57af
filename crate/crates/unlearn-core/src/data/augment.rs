//! Label-preserving augmentation: random crop with zero padding plus
//! horizontal flip, the standard CIFAR recipe. Also builds the positive
//! pairs consumed by the contrastive fine-tuning stage.

use rand::Rng;

use super::{normalize_image, LabeledDataset, IMAGE_BYTES, IMAGE_SIDE};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentationPolicy {
    /// Zero padding (in raw pixel space) before taking a 32x32 crop.
    pub crop_padding: usize,
    pub hflip_prob: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        AugmentationPolicy { crop_padding: 4, hflip_prob: 0.5 }
    }
}

impl AugmentationPolicy {
    pub const fn identity() -> Self {
        AugmentationPolicy { crop_padding: 0, hflip_prob: 0.0 }
    }

    pub fn is_identity(&self) -> bool {
        self.crop_padding == 0 && self.hflip_prob == 0.0
    }
}

/// Crop offsets and flip decision for one sample, drawn from an explicit
/// seed. Draw order is fixed: dy, dx, flip.
fn draw(policy: &AugmentationPolicy, seed: u64) -> (usize, usize, bool) {
    let mut rng = rng::rng_for(seed, "augment", 0, 0);
    let (dy, dx) = if policy.crop_padding > 0 {
        let span = 2 * policy.crop_padding + 1;
        (rng.random_range(0..span), rng.random_range(0..span))
    } else {
        (policy.crop_padding, policy.crop_padding)
    };
    let flip = policy.hflip_prob > 0.0 && rng.random::<f64>() < policy.hflip_prob;
    (dy, dx, flip)
}

/// Augment raw image bytes: shift by the crop offsets with zero fill,
/// then flip. Output stays in raw pixel space.
fn augment_bytes(bytes: &[u8], policy: &AugmentationPolicy, seed: u64, out: &mut [u8]) {
    debug_assert_eq!(bytes.len(), IMAGE_BYTES);
    let (dy, dx, flip) = draw(policy, seed);
    let p = policy.crop_padding as isize;
    let side = IMAGE_SIDE as isize;
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for c in 0..3 {
        let src = &bytes[c * plane..(c + 1) * plane];
        let dst = &mut out[c * plane..(c + 1) * plane];
        for y in 0..side {
            let sy = y + dy as isize - p;
            for x in 0..side {
                let sx = x + dx as isize - p;
                let v = if sy >= 0 && sy < side && sx >= 0 && sx < side {
                    src[(sy * side + sx) as usize]
                } else {
                    0
                };
                let ox = if flip { side - 1 - x } else { x };
                dst[(y * side + ox) as usize] = v;
            }
        }
    }
}

/// Produce the positive pair for a sample: `x` is the normalized original,
/// `x_prime` an independent augmentation draw, both as normalized floats.
pub fn augment_positive_pair(
    dataset: &LabeledDataset,
    index: usize,
    policy: &AugmentationPolicy,
    seed: u64,
) -> (Vec<f32>, Vec<f32>) {
    let mut x = vec![0.0f32; IMAGE_BYTES];
    dataset.write_normalized(index, &mut x);
    let mut x_prime = vec![0.0f32; IMAGE_BYTES];
    write_augmented(dataset, index, policy, seed, &mut x_prime);
    (x, x_prime)
}

/// Normalized augmented view of one sample, written into `out`.
pub fn write_augmented(
    dataset: &LabeledDataset,
    index: usize,
    policy: &AugmentationPolicy,
    seed: u64,
    out: &mut [f32],
) {
    if policy.is_identity() {
        dataset.write_normalized(index, out);
        return;
    }
    let mut bytes = vec![0u8; IMAGE_BYTES];
    augment_bytes(dataset.image_bytes(index), policy, seed, &mut bytes);
    normalize_image(&bytes, dataset.norm_mean, dataset.norm_std, out);
}
