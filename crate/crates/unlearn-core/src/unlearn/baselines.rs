//! Approximate-unlearning baselines: retain-set fine-tuning, gradient
//! ascent on the forget set, and random-label fine-tuning.

use std::time::Instant;

use rand::Rng;

use super::losses::retain_ce_loss_grad;
use super::{batch_images, batch_labels, PhaseReport, StepKind, TrainConfig, UnlearnConfig};
use crate::backend::{Classifier, LossOutput, SgdOptimizer};
use crate::data::{BatchIter, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng;
use crate::rng::derive_seed;

/// Fine-tuning baseline: a short cross-entropy run on the retain set only,
/// relying on catastrophic forgetting of the forget set. Uses the phase-2
/// epoch/lr/batch settings.
pub fn ft_baseline(
    model: &mut Classifier,
    ds: &LabeledDataset,
    retain: &[usize],
    cfg: &UnlearnConfig,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if retain.is_empty() {
        return Err(Error::config("ft baseline needs a nonempty retain set"));
    }
    let tc = TrainConfig {
        epochs: cfg.phase2_epochs,
        lr: cfg.phase2_lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size_retain,
        seed: derive_seed(cfg.seed, "ft", 0, 0),
        augment: None,
    };
    super::train_ce(model, ds, retain, &tc, None)
}

/// Gradient-ascent baseline: sign-flipped SGD on the cross-entropy loss
/// over the forget set, raising the loss on scheduled erasure samples.
/// `lr == 0` is allowed as an explicit no-op.
pub fn ga_baseline(
    model: &mut Classifier,
    ds: &LabeledDataset,
    forget: &[usize],
    cfg: &UnlearnConfig,
) -> Result<PhaseReport> {
    // Unlike the other methods, lr = 0 is meaningful here (a no-op run),
    // so the shared lr > 0 validation is relaxed to lr >= 0.
    if cfg.phase1_lr < 0.0 || !cfg.phase1_lr.is_finite() {
        return Err(Error::config("ga baseline needs lr >= 0"));
    }
    if cfg.phase1_epochs < 1 || cfg.batch_size_forget < 1 || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::config("bad ga baseline configuration"));
    }
    if forget.is_empty() {
        return Err(Error::config("ga baseline needs a nonempty forget set"));
    }
    let start = Instant::now();
    let mut report = PhaseReport { epochs: cfg.phase1_epochs, ..Default::default() };
    let noop = cfg.phase1_lr == 0.0;
    let mut opt = if noop {
        None
    } else {
        Some(SgdOptimizer::new(cfg.phase1_lr, cfg.momentum, 0.0)?)
    };
    model.set_train(true);
    for epoch in 0..cfg.phase1_epochs {
        let shuffle = derive_seed(cfg.seed, "ga-shuffle", epoch as u64, 0);
        let mut loss_sum = 0.0f64;
        let mut count = 0usize;
        for batch in BatchIter::new(forget, cfg.batch_size_forget, Some(shuffle), false)? {
            let images = batch_images(ds, &batch, None);
            let labels = batch_labels(ds, &batch);
            let (loss, mut grads) = model.loss_grads(&images, |logits, _f, _v| {
                let (v, g) = retain_ce_loss_grad(logits, &labels)?;
                Ok(LossOutput::from_logits(v, g))
            })?;
            if let Some(opt) = opt.as_mut() {
                grads.scale(-1.0);
                opt.step(model, &grads)?;
            }
            loss_sum += loss * batch.len() as f64;
            count += batch.len();
            report.step_trace.push(StepKind::CrossEntropy);
        }
        report.ce_loss.push(loss_sum / count as f64);
    }
    model.set_train(false);
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Seeded wrong-label assignment for the forget samples: uniform over the
/// K-1 other classes (forced flip when K = 2).
pub fn random_relabel(ds: &LabeledDataset, forget: &[usize], seed: u64) -> Vec<usize> {
    let k = ds.num_classes;
    let mut labels: Vec<usize> = (0..ds.len()).map(|i| ds.label(i)).collect();
    let mut rng = rng::rng_for(seed, "rl-labels", 0, 0);
    for &i in forget {
        let offset = rng.random_range(1..k);
        labels[i] = (labels[i] + offset) % k;
    }
    labels
}

/// Random-label baseline: every forget sample gets a seeded random wrong
/// label, then the model is fine-tuned with cross-entropy on the relabeled
/// forget set together with the retain set.
pub fn rl_baseline(
    model: &mut Classifier,
    ds: &LabeledDataset,
    forget: &[usize],
    retain: &[usize],
    cfg: &UnlearnConfig,
) -> Result<PhaseReport> {
    cfg.validate()?;
    if forget.is_empty() || retain.is_empty() {
        return Err(Error::config("rl baseline needs nonempty forget and retain sets"));
    }
    let labels = random_relabel(ds, forget, cfg.seed);
    let mut union: Vec<usize> = forget.iter().chain(retain.iter()).copied().collect();
    union.sort_unstable();
    let tc = TrainConfig {
        epochs: cfg.phase2_epochs,
        lr: cfg.phase2_lr,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        batch_size: cfg.batch_size_retain,
        seed: derive_seed(cfg.seed, "rl", 0, 0),
        augment: None,
    };
    super::train_ce(model, ds, &union, &tc, Some(&labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledDataset, IMAGE_BYTES};

    fn ds(k: usize, n: usize) -> LabeledDataset {
        let labels: Vec<u16> = (0..n).map(|i| (i % k) as u16).collect();
        LabeledDataset::new("t", k, vec![128u8; n * IMAGE_BYTES], labels).unwrap()
    }

    #[test]
    fn relabel_is_always_wrong_and_deterministic() {
        let d = ds(5, 50);
        let forget: Vec<usize> = (0..20).collect();
        let a = random_relabel(&d, &forget, 3);
        let b = random_relabel(&d, &forget, 3);
        assert_eq!(a, b);
        for &i in &forget {
            assert_ne!(a[i], d.label(i));
            assert!(a[i] < 5);
        }
        for i in 20..50 {
            assert_eq!(a[i], d.label(i));
        }
        let c = random_relabel(&d, &forget, 4);
        assert_ne!(a, c);
    }

    #[test]
    fn relabel_with_two_classes_is_a_forced_flip() {
        let d = ds(2, 10);
        let forget: Vec<usize> = (0..10).collect();
        let labels = random_relabel(&d, &forget, 0);
        for i in 0..10 {
            assert_eq!(labels[i], 1 - d.label(i));
        }
    }
}
