//! Synthetic CIFAR-10-format fixture.
//!
//! Writes class-structured images in the exact binary batch layout, so the
//! real loaders, splits and training loops run unchanged when the official
//! files are not on disk. Class identity comes from smooth per-class color
//! patterns; per-sample noise and optional label noise control how much a
//! model must memorize versus generalize.

use std::fs;
use std::path::Path;

use rand::Rng;

use super::{IMAGE_BYTES, IMAGE_SIDE};
use crate::error::Result;
use crate::rng;

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub num_classes: usize,
    /// Amplitude of the class pattern, in pixel units.
    pub template_amp: f64,
    /// Uniform per-pixel noise amplitude, in pixel units.
    pub noise_amp: f64,
    /// Fraction of training labels replaced by a random wrong class.
    pub label_noise: f64,
    /// Lower bound of the per-sample mixing weight between the class
    /// template and a random distractor class. Draws below 0.5 look more
    /// like the distractor, creating irreducible test error that a model
    /// can only overcome on training data by memorizing sample identity.
    pub mix_low: f64,
    /// Amplitude of the per-sample smooth fingerprint wave. Low-frequency
    /// and class-uninformative, it gives models a fast memorization handle
    /// so a realistic train/test gap appears within a few epochs.
    pub fingerprint_amp: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_train: 5000,
            n_test: 2000,
            num_classes: 10,
            template_amp: 60.0,
            noise_amp: 30.0,
            label_noise: 0.04,
            mix_low: 0.35,
            fingerprint_amp: 35.0,
            seed: 1234,
        }
    }
}

struct Wave {
    fx: f64,
    fy: f64,
    px: f64,
    py: f64,
    amp: f64,
    bias: f64,
}

fn class_templates(spec: &SyntheticSpec) -> Vec<Vec<Wave>> {
    let mut templates = Vec::with_capacity(spec.num_classes);
    for c in 0..spec.num_classes {
        let mut waves = Vec::with_capacity(3);
        for ch in 0..3u64 {
            let mut rng = rng::rng_for(spec.seed, "template", c as u64, ch);
            waves.push(Wave {
                fx: rng.random_range(0.5..3.0),
                fy: rng.random_range(0.5..3.0),
                px: rng.random_range(0.0..std::f64::consts::TAU),
                py: rng.random_range(0.0..std::f64::consts::TAU),
                amp: spec.template_amp,
                bias: rng.random_range(100.0..156.0),
            });
        }
        templates.push(waves);
    }
    templates
}

fn render(
    waves: &[Wave],
    distractor: &[Wave],
    mix: f64,
    spec: &SyntheticSpec,
    rng: &mut impl Rng,
    out: &mut [u8],
) {
    let plane = IMAGE_SIDE * IMAGE_SIDE;
    for ch in 0..3 {
        let (w, v) = (&waves[ch], &distractor[ch]);
        // per-sample fingerprint wave for this channel
        let f = Wave {
            fx: rng.random_range(0.5..4.0),
            fy: rng.random_range(0.5..4.0),
            px: rng.random_range(0.0..std::f64::consts::TAU),
            py: rng.random_range(0.0..std::f64::consts::TAU),
            amp: spec.fingerprint_amp,
            bias: 0.0,
        };
        let dst = &mut out[ch * plane..(ch + 1) * plane];
        for y in 0..IMAGE_SIDE {
            let fy = y as f64 / IMAGE_SIDE as f64;
            let wy = (std::f64::consts::TAU * w.fy * fy + w.py).cos();
            let vy = (std::f64::consts::TAU * v.fy * fy + v.py).cos();
            let gy = (std::f64::consts::TAU * f.fy * fy + f.py).cos();
            for x in 0..IMAGE_SIDE {
                let fx = x as f64 / IMAGE_SIDE as f64;
                let wx = (std::f64::consts::TAU * w.fx * fx + w.px).sin();
                let vx = (std::f64::consts::TAU * v.fx * fx + v.px).sin();
                let gx = (std::f64::consts::TAU * f.fx * fx + f.px).sin();
                let signal = mix * w.amp * wx * wy
                    + (1.0 - mix) * v.amp * vx * vy
                    + f.amp * gx * gy;
                let bias = mix * w.bias + (1.0 - mix) * v.bias;
                let noise = rng.random_range(-spec.noise_amp..=spec.noise_amp);
                dst[y * IMAGE_SIDE + x] = (bias + signal + noise).clamp(0.0, 255.0) as u8;
            }
        }
    }
}

fn generate(
    spec: &SyntheticSpec,
    count: usize,
    tag: &str,
    with_label_noise: bool,
) -> (Vec<u8>, Vec<u8>) {
    let templates = class_templates(spec);
    let mut images = vec![0u8; count * IMAGE_BYTES];
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rng::rng_for(spec.seed, tag, i as u64, 0);
        // round-robin classes keep every class count exactly balanced
        let class = i % spec.num_classes;
        let distractor =
            (class + rng.random_range(1..spec.num_classes)) % spec.num_classes;
        let mix = rng.random_range(spec.mix_low..1.0);
        render(
            &templates[class],
            &templates[distractor],
            mix,
            spec,
            &mut rng,
            &mut images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES],
        );
        let label = if with_label_noise && spec.label_noise > 0.0
            && rng.random::<f64>() < spec.label_noise
        {
            let offset = rng.random_range(1..spec.num_classes);
            (class + offset) % spec.num_classes
        } else {
            class
        };
        labels.push(label as u8);
    }
    (images, labels)
}

fn write_batch(path: &Path, images: &[u8], labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(labels.len() * (1 + IMAGE_BYTES));
    for (i, &label) in labels.iter().enumerate() {
        bytes.push(label);
        bytes.extend_from_slice(&images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]);
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Write the fixture into `dir` using the CIFAR-10 file names
/// (`data_batch_1..5.bin`, `test_batch.bin`).
pub fn write_synthetic_cifar10(dir: &Path, spec: &SyntheticSpec) -> Result<()> {
    if spec.n_train < 5 || spec.n_test == 0 {
        return Err(crate::error::Error::config(
            "synthetic fixture needs n_train >= 5 and n_test >= 1",
        ));
    }
    fs::create_dir_all(dir)?;
    let (train_images, train_labels) = generate(spec, spec.n_train, "train", true);
    let (test_images, test_labels) = generate(spec, spec.n_test, "test", false);
    // Spread records over the five batch files the loader expects, leaving
    // at least one record for each remaining file.
    let per_file = spec.n_train.div_ceil(5);
    let mut start = 0;
    for f in 0..5 {
        let files_left = 5 - f;
        let len = per_file.min(spec.n_train - start + 1 - files_left).max(1);
        write_batch(
            &dir.join(format!("data_batch_{}.bin", f + 1)),
            &train_images[start * IMAGE_BYTES..(start + len) * IMAGE_BYTES],
            &train_labels[start..start + len],
        )?;
        start += len;
    }
    debug_assert_eq!(start, spec.n_train);
    write_batch(&dir.join("test_batch.bin"), &test_images, &test_labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_cifar10;

    #[test]
    fn fixture_loads_through_the_real_loader() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec { n_train: 100, n_test: 20, ..Default::default() };
        write_synthetic_cifar10(dir.path(), &spec).unwrap();
        let (train, test) = load_cifar10(dir.path()).unwrap();
        assert_eq!(train.len(), 100);
        assert_eq!(test.len(), 20);
        assert!(train.labels.iter().all(|&l| l < 10));
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let spec = SyntheticSpec { n_train: 10, n_test: 5, ..Default::default() };
        let a = generate(&spec, 10, "train", true);
        let b = generate(&spec, 10, "train", true);
        assert_eq!(a, b);
    }
}
