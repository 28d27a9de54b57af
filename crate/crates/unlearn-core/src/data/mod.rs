//! Datasets and sampling: CIFAR-10/100 binary ingestion, forget/retain
//! splits, augmented positive pairs and deterministic batch iteration.

mod augment;
mod batch;
mod cifar;
mod split;
pub mod synthetic;

pub use augment::{augment_positive_pair, write_augmented, AugmentationPolicy};
pub use batch::BatchIter;
pub use cifar::{load_cifar10, load_cifar100, reencode_record, CIFAR10_CLASS_NAMES};
pub use split::{
    load_split_manifest, make_forget_split, save_split_manifest, ForgetSplit, SplitMode,
};

use crate::error::{Error, Result};

pub const IMAGE_CHANNELS: usize = 3;
pub const IMAGE_SIDE: usize = 32;
/// Pixels per image: 3 color planes of 32x32.
pub const IMAGE_BYTES: usize = IMAGE_CHANNELS * IMAGE_SIDE * IMAGE_SIDE;

/// CIFAR-10 per-channel normalization constants (training-set statistics).
pub const CIFAR10_MEAN: [f32; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR10_STD: [f32; 3] = [0.2470, 0.2435, 0.2616];

/// A labeled image dataset held as raw bytes (plane-major R,G,B per image)
/// plus per-channel normalization statistics for the float view.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub name: String,
    pub num_classes: usize,
    /// `len() == n * IMAGE_BYTES`, byte-faithful to the source files.
    pub images: Vec<u8>,
    pub labels: Vec<u16>,
    /// CIFAR-100 coarse labels, kept so records re-encode bit-exactly.
    pub coarse_labels: Option<Vec<u8>>,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
}

impl LabeledDataset {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        images: Vec<u8>,
        labels: Vec<u16>,
    ) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::input(format!("dataset {name}: empty")));
        }
        if images.len() != labels.len() * IMAGE_BYTES {
            return Err(Error::input(format!(
                "dataset {name}: {} labels but {} image bytes",
                labels.len(),
                images.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| usize::from(l) >= num_classes) {
            return Err(Error::input(format!(
                "dataset {name}: label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            name,
            num_classes,
            images,
            labels,
            coarse_labels: None,
            norm_mean: CIFAR10_MEAN,
            norm_std: CIFAR10_STD,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    /// Raw bytes of image `i` (3072 bytes, plane-major).
    pub fn image_bytes(&self, i: usize) -> &[u8] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    /// Normalized float view of image `i` written into `out` (len 3072).
    pub fn write_normalized(&self, i: usize, out: &mut [f32]) {
        normalize_image(self.image_bytes(i), self.norm_mean, self.norm_std, out);
    }

    /// Per-channel mean/std of the raw pixels in [0,1]; used to fix the
    /// normalization constants for datasets without published statistics.
    pub fn compute_channel_stats(&self) -> ([f32; 3], [f32; 3]) {
        let plane = IMAGE_SIDE * IMAGE_SIDE;
        let n = self.len() * plane;
        let mut mean = [0.0f64; 3];
        let mut var = [0.0f64; 3];
        for img in self.images.chunks_exact(IMAGE_BYTES) {
            for c in 0..3 {
                let mut s = 0u64;
                for &b in &img[c * plane..(c + 1) * plane] {
                    s += u64::from(b);
                }
                mean[c] += s as f64;
            }
        }
        for c in 0..3 {
            mean[c] /= 255.0 * n as f64;
        }
        for img in self.images.chunks_exact(IMAGE_BYTES) {
            for c in 0..3 {
                for &b in &img[c * plane..(c + 1) * plane] {
                    let d = f64::from(b) / 255.0 - mean[c];
                    var[c] += d * d;
                }
            }
        }
        let mut m = [0.0f32; 3];
        let mut s = [0.0f32; 3];
        for c in 0..3 {
            m[c] = mean[c] as f32;
            s[c] = (var[c] / n as f64).sqrt() as f32;
        }
        (m, s)
    }

    /// Count of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts
    }
}

pub fn normalize_image(bytes: &[u8], mean: [f32; 3], std: [f32; 3], out: &mut [f32]) {
    debug_assert_eq!(bytes.len(), IMAGE_BYTES);
    debug_assert_eq!(out.len(), IMAGE_BYTES);
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for c in 0..3 {
        let inv = 1.0 / std[c];
        let m = mean[c];
        for (o, &b) in out[c * plane..(c + 1) * plane]
            .iter_mut()
            .zip(&bytes[c * plane..(c + 1) * plane])
        {
            *o = (f32::from(b) / 255.0 - m) * inv;
        }
    }
}

/// Deterministic stratified subsample: the first `n/K` samples of each class
/// in dataset order (remainder spread over the lowest class indices). No RNG,
/// so the same `n` always selects the same rows.
pub fn toy_subset_indices(dataset: &LabeledDataset, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > dataset.len() {
        return Err(Error::config(format!(
            "toy-subset size {n} out of range 1..={}",
            dataset.len()
        )));
    }
    let k = dataset.num_classes;
    let base = n / k;
    let extra = n % k;
    let want: Vec<usize> = (0..k).map(|c| base + usize::from(c < extra)).collect();
    let counts = dataset.class_counts();
    for c in 0..k {
        if want[c] > counts[c] {
            return Err(Error::config(format!(
                "toy-subset needs {} samples of class {c} but dataset has {}",
                want[c], counts[c]
            )));
        }
    }
    let mut picked = Vec::with_capacity(n);
    let mut taken = vec![0usize; k];
    for i in 0..dataset.len() {
        let c = dataset.label(i);
        if taken[c] < want[c] {
            taken[c] += 1;
            picked.push(i);
        }
    }
    Ok(picked)
}

/// Materialize a subset as its own dataset (used by the toy benchmark).
pub fn subset_dataset(dataset: &LabeledDataset, indices: &[usize], name: &str) -> LabeledDataset {
    let mut images = Vec::with_capacity(indices.len() * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(indices.len());
    let mut coarse = dataset.coarse_labels.as_ref().map(|_| Vec::with_capacity(indices.len()));
    for &i in indices {
        images.extend_from_slice(dataset.image_bytes(i));
        labels.push(dataset.labels[i]);
        if let (Some(dst), Some(src)) = (coarse.as_mut(), dataset.coarse_labels.as_ref()) {
            dst.push(src[i]);
        }
    }
    LabeledDataset {
        name: name.to_string(),
        num_classes: dataset.num_classes,
        images,
        labels,
        coarse_labels: coarse,
        norm_mean: dataset.norm_mean,
        norm_std: dataset.norm_std,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(labels: &[u16], k: usize) -> LabeledDataset {
        let images = vec![0u8; labels.len() * IMAGE_BYTES];
        LabeledDataset::new("tiny", k, images, labels.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_labels_and_empty() {
        assert!(LabeledDataset::new("x", 2, vec![], vec![]).is_err());
        let images = vec![0u8; IMAGE_BYTES];
        assert!(LabeledDataset::new("x", 2, images, vec![2]).is_err());
    }

    #[test]
    fn toy_subset_is_balanced_and_deterministic() {
        let ds = tiny(&[0, 1, 0, 1, 0, 1, 0, 1], 2);
        let idx = toy_subset_indices(&ds, 4).unwrap();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        let again = toy_subset_indices(&ds, 4).unwrap();
        assert_eq!(idx, again);
        let labels: Vec<usize> = idx.iter().map(|&i| ds.label(i)).collect();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 2);
    }

    #[test]
    fn toy_subset_rejects_oversize() {
        let ds = tiny(&[0, 1], 2);
        assert!(toy_subset_indices(&ds, 3).is_err());
        assert!(toy_subset_indices(&ds, 0).is_err());
    }
}
